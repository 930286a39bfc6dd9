use rayon::prelude::*;

use super::{gram, schatten_q, schatten_q_gradient, spectrum_of_gram, GradientMatrix, SchattenParams, MAX_FRAMES};
use crate::error::{Error, Result};
use crate::image::{Image, ImageSequence, VectorField};
use crate::interp::{warp_with_jacobian, Scheme};
use crate::ngf::{jacobian_apply_raw, normalize_raw, NgfParams, Normalization};
use crate::stencil::{gradient_adjoint, gradient_raw};

/// SqN of the frames under a set of displacements, with one theta per frame.
#[derive(Debug, Clone)]
pub struct SqnTerm<'a> {
    pub frames: &'a [Image],
    pub thetas: Vec<f64>,
    pub normalization: Normalization,
    pub schatten: SchattenParams,
    pub scheme: Scheme,
}

#[derive(Debug, Clone)]
pub struct SqnEvaluation {
    pub value: f64,
    pub sigma: Vec<f64>,
    /// Derivative of the value w.r.t. each frame's displacement; empty when
    /// only the value was requested.
    pub gradients: Vec<VectorField>,
}

struct FrameState {
    g1: Vec<f64>,
    g2: Vec<f64>,
    norms: Vec<f64>,
    column: Vec<f64>,
    sensitivity: VectorField,
}

impl<'a> SqnTerm<'a> {
    pub fn new(
        frames: &'a [Image],
        thetas: Vec<f64>,
        normalization: Normalization,
        schatten: SchattenParams,
        scheme: Scheme,
    ) -> Result<Self> {
        if frames.len() < 2 || frames.len() > MAX_FRAMES {
            return Err(Error::InvalidParameter(format!(
                "SqN needs between 2 and {MAX_FRAMES} frames, got {}",
                frames.len()
            )));
        }
        if thetas.len() != frames.len() || thetas.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidParameter("need one positive theta per frame".into()));
        }
        Ok(SqnTerm {
            frames,
            thetas,
            normalization,
            schatten,
            scheme,
        })
    }

    fn frame_state(&self, t: usize, u: &VectorField) -> Result<FrameState> {
        let (warped, sensitivity) = warp_with_jacobian(&self.frames[t], u, self.scheme)?;
        let grid = *warped.grid();
        let (g1, g2) = gradient_raw(&grid, warped.values());
        let (mut e1, e2, norms) = normalize_raw(&g1, &g2, self.thetas[t], self.normalization);
        e1.extend_from_slice(&e2);
        Ok(FrameState {
            g1,
            g2,
            norms,
            column: e1,
            sensitivity,
        })
    }

    /// The normalized-gradient matrix of the warped frames.
    pub fn matrix(&self, displacements: &[VectorField]) -> Result<GradientMatrix> {
        self.check(displacements)?;
        let cols = (0..self.frames.len())
            .into_par_iter()
            .map(|t| self.frame_state(t, &displacements[t]).map(|s| s.column))
            .collect::<Result<Vec<_>>>()?;
        GradientMatrix::new(cols)
    }

    fn check(&self, displacements: &[VectorField]) -> Result<()> {
        if displacements.len() != self.frames.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} displacement fields, got {}",
                self.frames.len(),
                displacements.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, displacements: &[VectorField]) -> Result<SqnEvaluation> {
        let a = self.matrix(displacements)?;
        let sys = spectrum_of_gram(&gram(&a), a.rows());
        Ok(SqnEvaluation {
            value: schatten_q(&sys, &self.schatten),
            sigma: sys.sigma,
            gradients: Vec::new(),
        })
    }

    /// Value and chain-rule gradient: Schatten gradient, adjoint of the
    /// normalization, adjoint of the difference stencil, then the
    /// interpolant's spatial derivative at each displaced node.
    pub fn value_and_gradient(&self, displacements: &[VectorField]) -> Result<SqnEvaluation> {
        self.check(displacements)?;
        self.schatten.check_differentiable()?;
        let states = (0..self.frames.len())
            .into_par_iter()
            .map(|t| self.frame_state(t, &displacements[t]))
            .collect::<Result<Vec<_>>>()?;
        let (columns, states): (Vec<_>, Vec<_>) = states
            .into_iter()
            .map(|mut s| (std::mem::take(&mut s.column), s))
            .unzip();
        let a = GradientMatrix::new(columns)?;
        let sys = spectrum_of_gram(&gram(&a), a.rows());
        let value = schatten_q(&sys, &self.schatten);
        let da = schatten_q_gradient(&a, &sys, &self.schatten)?;
        let gradients = states
            .par_iter()
            .zip(da.columns().par_iter())
            .map(|(s, col)| {
                let grid = *s.sensitivity.grid();
                let n = grid.len();
                let (r1, r2) = col.split_at(n);
                let (d1, d2) =
                    jacobian_apply_raw(&s.g1, &s.g2, &s.norms, r1, r2, self.normalization);
                let w = gradient_adjoint(&grid, &d1, &d2);
                let c1 = w.iter().zip(s.sensitivity.component(0)).map(|(a, b)| a * b).collect();
                let c2 = w.iter().zip(s.sensitivity.component(1)).map(|(a, b)| a * b).collect();
                VectorField::new(grid, c1, c2)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SqnEvaluation {
            value,
            sigma: sys.sigma,
            gradients,
        })
    }
}

/// SqN of a sequence as given (no displacement).
pub fn sqn_value(seq: &ImageSequence, ngf: &NgfParams, p: &SchattenParams) -> Result<SqnEvaluation> {
    let term = SqnTerm::new(seq.frames(), ngf.thetas(seq.frames()), ngf.normalization, *p, Scheme::Linear)?;
    let zeros = vec![VectorField::zeros(*seq.grid()); seq.len()];
    term.value(&zeros)
}

/// SqN of `seq` warped by `displacements`, with gradients w.r.t. the
/// displacements.
pub fn sqn_value_and_gradient(
    seq: &ImageSequence,
    displacements: &[VectorField],
    ngf: &NgfParams,
    p: &SchattenParams,
    scheme: Scheme,
) -> Result<SqnEvaluation> {
    let term = SqnTerm::new(seq.frames(), ngf.thetas(seq.frames()), ngf.normalization, *p, scheme)?;
    term.value_and_gradient(displacements)
}
