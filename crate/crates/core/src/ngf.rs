//! Regularized normalized gradient fields `eta = g / sqrt(|g|^2 + theta^2)`.

use crate::error::{Error, Result};
use crate::image::{Image, VectorField};
use crate::stencil::gradient_raw;

/// How the edge parameter is chosen across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaMode {
    /// One theta shared by all frames.
    GlobalFixed,
    /// Each frame gets its own theta from [`estimate_theta`], so a
    /// per-frame intensity gain cancels out of `eta`.
    #[default]
    PerFrameAuto,
}

/// Which vector the regularized norm is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Per node: `|g(x)|` over the two gradient components.
    #[default]
    NodeWise,
    /// One scalar for the whole frame: `|g|` over all `2n` entries.
    Global,
}

macro_rules! named_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+) => {
        impl std::str::FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(format!(concat!("unknown ", $what, " '{}'"), other)),
                }
            }
        }

        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self {
                    $($ty::$variant => $name,)+
                })
            }
        }
    };
}

named_enum!(ThetaMode, "theta mode", GlobalFixed => "global-fixed", PerFrameAuto => "per-frame-auto");
named_enum!(Normalization, "normalization", NodeWise => "node-wise", Global => "global");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgfParams {
    pub theta: f64,
    pub mode: ThetaMode,
    pub normalization: Normalization,
}

impl NgfParams {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be > 0, got {theta}")));
        }
        Ok(NgfParams {
            theta,
            mode: ThetaMode::GlobalFixed,
            normalization: Normalization::NodeWise,
        })
    }

    /// Theta per frame under this mode.
    pub fn thetas(&self, frames: &[Image]) -> Vec<f64> {
        match self.mode {
            ThetaMode::GlobalFixed => vec![self.theta; frames.len()],
            ThetaMode::PerFrameAuto => frames
                .iter()
                .map(|f| estimate_theta(std::slice::from_ref(f)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGradient {
    pub field: VectorField,
    /// `sqrt(|g|^2 + theta^2)` per node (constant for global normalization).
    pub norm_theta: Vec<f64>,
}

pub(crate) fn normalize_raw(
    g1: &[f64],
    g2: &[f64],
    theta: f64,
    normalization: Normalization,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t2 = theta * theta;
    let norms: Vec<f64> = match normalization {
        Normalization::NodeWise => g1
            .iter()
            .zip(g2)
            .map(|(a, b)| (a * a + b * b + t2).sqrt())
            .collect(),
        Normalization::Global => {
            let s: f64 = g1.iter().chain(g2).map(|a| a * a).sum();
            vec![(s + t2).sqrt(); g1.len()]
        }
    };
    let e1 = g1.iter().zip(&norms).map(|(a, n)| a / n).collect();
    let e2 = g2.iter().zip(&norms).map(|(a, n)| a / n).collect();
    (e1, e2, norms)
}

/// `d eta [dg] = dg / N - g (g . dg) / N^3`. The Jacobian is symmetric, so
/// this is also its adjoint.
pub(crate) fn jacobian_apply_raw(
    g1: &[f64],
    g2: &[f64],
    norms: &[f64],
    d1: &[f64],
    d2: &[f64],
    normalization: Normalization,
) -> (Vec<f64>, Vec<f64>) {
    let n = g1.len();
    let mut o1 = Vec::with_capacity(n);
    let mut o2 = Vec::with_capacity(n);
    match normalization {
        Normalization::NodeWise => {
            for k in 0..n {
                let inv = 1.0 / norms[k];
                let gd = (g1[k] * d1[k] + g2[k] * d2[k]) * inv * inv * inv;
                o1.push(d1[k] * inv - g1[k] * gd);
                o2.push(d2[k] * inv - g2[k] * gd);
            }
        }
        Normalization::Global => {
            let inv = if n > 0 { 1.0 / norms[0] } else { 0.0 };
            let gd = (crate::image::dot(g1, d1) + crate::image::dot(g2, d2)) * inv * inv * inv;
            for k in 0..n {
                o1.push(d1[k] * inv - g1[k] * gd);
                o2.push(d2[k] * inv - g2[k] * gd);
            }
        }
    }
    (o1, o2)
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("theta must be > 0, got {theta}")))
    }
}

/// Node-wise normalization of a gradient field.
pub fn normalize_gradient(grad: &VectorField, theta: f64) -> Result<NormalizedGradient> {
    normalize_gradient_with(grad, theta, Normalization::NodeWise)
}

pub fn normalize_gradient_with(
    grad: &VectorField,
    theta: f64,
    normalization: Normalization,
) -> Result<NormalizedGradient> {
    check_theta(theta)?;
    let (e1, e2, norm_theta) =
        normalize_raw(grad.component(0), grad.component(1), theta, normalization);
    Ok(NormalizedGradient {
        field: VectorField::new(*grad.grid(), e1, e2)?,
        norm_theta,
    })
}

/// Directional derivative of node-wise normalization at `grad` along
/// `perturbation`.
pub fn normalize_gradient_jacobian_apply(
    grad: &VectorField,
    theta: f64,
    perturbation: &VectorField,
) -> Result<VectorField> {
    normalize_gradient_jacobian_apply_with(grad, theta, perturbation, Normalization::NodeWise)
}

pub fn normalize_gradient_jacobian_apply_with(
    grad: &VectorField,
    theta: f64,
    perturbation: &VectorField,
    normalization: Normalization,
) -> Result<VectorField> {
    check_theta(theta)?;
    if grad.grid() != perturbation.grid() {
        return Err(Error::GridMismatch("perturbation grid differs from gradient grid".into()));
    }
    let (g1, g2) = (grad.component(0), grad.component(1));
    let (_, _, norms) = normalize_raw(g1, g2, theta, normalization);
    let (o1, o2) = jacobian_apply_raw(
        g1,
        g2,
        &norms,
        perturbation.component(0),
        perturbation.component(1),
        normalization,
    );
    VectorField::new(*grad.grid(), o1, o2)
}

/// Mean gradient magnitude over all nodes of all frames.
pub fn mean_gradient_magnitude(frames: &[Image]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for f in frames {
        let (g1, g2) = gradient_raw(f.grid(), f.values());
        acc += g1.iter().zip(&g2).map(|(a, b)| a.hypot(*b)).sum::<f64>();
        count += g1.len();
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

pub const THETA_FRACTION: f64 = 0.1;
pub const THETA_FALLBACK: f64 = 1e-3;

/// A tenth of the mean gradient magnitude, or `1e-3` for flat input.
pub fn estimate_theta(frames: &[Image]) -> f64 {
    let m = mean_gradient_magnitude(frames);
    if m > 0.0 {
        THETA_FRACTION * m
    } else {
        THETA_FALLBACK
    }
}
