//! Linear pre-alignment: each frame is registered rigidly, then affinely,
//! to its predecessor under an L2 distance, and the pairwise maps are
//! chained so that every frame is expressed relative to the first.

use crate::deform::{Affine, AffineParams};
use crate::error::Result;
use crate::image::{Grid, Image, ImageSequence};
use crate::interp::{interpolate_with_jacobian, warp, Scheme};
use crate::optim::{lbfgs_minimize, LbfgsConfig, Termination};
use crate::pyramid::image_pyramid;

#[derive(Debug, Clone, PartialEq)]
pub struct PrealignConfig {
    pub levels: usize,
    pub max_iterations: usize,
    pub scheme: Scheme,
    /// Run the affine stage after the rigid one.
    pub affine: bool,
}

impl Default for PrealignConfig {
    fn default() -> Self {
        PrealignConfig {
            levels: 3,
            max_iterations: 100,
            scheme: Scheme::Cubic,
            affine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrealignResult {
    /// Absolute map of each frame into the first frame's coordinates.
    pub transforms: AffineParams,
    pub resampled: ImageSequence,
    /// Termination of the last pairwise solve per frame (`None` for frame 0).
    pub terminations: Vec<Option<Termination>>,
}

impl PrealignResult {
    /// Frames whose final solve ran out of iterations.
    pub fn unconverged(&self) -> Vec<usize> {
        self.terminations
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, Some(Termination::MaxIterations)))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Model {
    Rigid,
    Full,
}

/// Parameters are scaled so that a unit change moves the domain border by
/// about one world unit: rigid `[angle * r, t1, t2]`, full
/// `[(A - I) * r (row-major), t1, t2]`, both about the domain center.
struct Param {
    model: Model,
    center: [f64; 2],
    radius: f64,
}

impl Param {
    fn len(&self) -> usize {
        match self.model {
            Model::Rigid => 3,
            Model::Full => 6,
        }
    }

    fn to_affine(&self, p: &[f64]) -> Affine {
        match self.model {
            Model::Rigid => Affine::rigid(p[0] / self.radius, self.center, [p[1], p[2]]),
            Model::Full => {
                let r = self.radius;
                let a = [[1.0 + p[0] / r, p[1] / r], [p[2] / r, 1.0 + p[3] / r]];
                let c = self.center;
                let ac = [a[0][0] * c[0] + a[0][1] * c[1], a[1][0] * c[0] + a[1][1] * c[1]];
                Affine {
                    a,
                    b: [c[0] - ac[0] + p[4], c[1] - ac[1] + p[5]],
                }
            }
        }
    }

    fn params_of(&self, m: &Affine) -> Vec<f64> {
        let c = self.center;
        let r = self.radius;
        // translation part relative to the center: y(c) - c
        let yc = m.apply(c);
        let t = [yc[0] - c[0], yc[1] - c[1]];
        match self.model {
            Model::Rigid => vec![m.angle() * r, t[0], t[1]],
            Model::Full => vec![
                (m.a[0][0] - 1.0) * r,
                m.a[0][1] * r,
                m.a[1][0] * r,
                (m.a[1][1] - 1.0) * r,
                t[0],
                t[1],
            ],
        }
    }

    /// `dy/dp` at `x`, one 2-vector per parameter.
    fn jacobian(&self, p: &[f64], x: [f64; 2], out: &mut [[f64; 2]]) {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let r = self.radius;
        match self.model {
            Model::Rigid => {
                let (s, c) = (p[0] / r).sin_cos();
                out[0] = [(-s * d[0] - c * d[1]) / r, (c * d[0] - s * d[1]) / r];
                out[1] = [1.0, 0.0];
                out[2] = [0.0, 1.0];
            }
            Model::Full => {
                out[0] = [d[0] / r, 0.0];
                out[1] = [d[1] / r, 0.0];
                out[2] = [0.0, d[0] / r];
                out[3] = [0.0, d[1] / r];
                out[4] = [1.0, 0.0];
                out[5] = [0.0, 1.0];
            }
        }
    }
}

/// `1/2 h1 h2 sum (moving(y(x)) - fixed(x))^2` and its parameter gradient.
fn l2_affine(fixed: &Image, moving: &Image, param: &Param, p: &[f64], scheme: Scheme) -> (f64, Vec<f64>) {
    let grid = fixed.grid();
    let map = param.to_affine(p);
    let nodes: Vec<[f64; 2]> = grid.nodes().collect();
    let pts: Vec<[f64; 2]> = nodes.iter().map(|&x| map.apply(x)).collect();
    let (vals, ders) = interpolate_with_jacobian(moving, &pts, scheme);
    let h = grid.cell_volume();
    let mut value = 0.0;
    let mut grad = vec![0.0; param.len()];
    let mut jac = [[0.0; 2]; 6];
    for (k, x) in nodes.iter().enumerate() {
        let r = vals[k] - fixed.values()[k];
        value += 0.5 * h * r * r;
        param.jacobian(p, *x, &mut jac);
        for (g, j) in grad.iter_mut().zip(&jac) {
            *g += h * r * (ders[k][0] * j[0] + ders[k][1] * j[1]);
        }
    }
    (value, grad)
}

fn domain_radius(grid: &Grid) -> f64 {
    0.5 * (grid.m[0] as f64 * grid.h[0]).max(grid.m[1] as f64 * grid.h[1])
}

/// Pairwise map `y` with `moving o y ≈ fixed`, coarse to fine.
pub fn register_pair(
    fixed: &Image,
    moving: &Image,
    cfg: &PrealignConfig,
) -> Result<(Affine, Termination)> {
    let grid = *fixed.grid();
    let mut levels = cfg.levels.max(1);
    while levels > 1 && (grid.m[0] >> (levels - 1) < 4 || grid.m[1] >> (levels - 1) < 4) {
        levels -= 1;
    }
    let fp = image_pyramid(fixed, levels)?;
    let mp = image_pyramid(moving, levels)?;
    let center = grid.center();
    let radius = domain_radius(&grid);
    let lbfgs = LbfgsConfig {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: 0.0,
        relative_tolerance: 1e-6,
        ..Default::default()
    };
    let mut current = Affine::IDENTITY;
    let mut termination = Termination::GradientTolerance;
    let stages: &[Model] = if cfg.affine { &[Model::Rigid, Model::Full] } else { &[Model::Rigid] };
    for &model in stages {
        let param = Param { model, center, radius };
        for level in (0..levels).rev() {
            let (f, m) = (&fp[level], &mp[level]);
            let mut obj = |p: &[f64]| Ok(l2_affine(f, m, &param, p, cfg.scheme));
            let res = lbfgs_minimize(&mut obj, &param.params_of(&current), &lbfgs, |_, _| Ok(()))?;
            current = param.to_affine(&res.x);
            termination = res.termination;
        }
    }
    Ok((current, termination))
}

/// Chains pairwise maps: frame `t` is aligned to frame `t - 1`, frame 0 is
/// the identity. The input sequence is left untouched.
pub fn affine_prealign(seq: &ImageSequence, cfg: &PrealignConfig) -> Result<PrealignResult> {
    let mut transforms = vec![Affine::IDENTITY];
    let mut terminations = vec![None];
    for t in 1..seq.len() {
        let (pair, term) = register_pair(seq.frame(t - 1), seq.frame(t), cfg)?;
        let prev = transforms[t - 1];
        transforms.push(pair.after(&prev));
        terminations.push(Some(term));
    }
    let grid = *seq.grid();
    let resampled = transforms
        .iter()
        .zip(seq.frames())
        .map(|(m, f)| warp(f, &m.displacement(&grid), cfg.scheme))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrealignResult {
        transforms,
        resampled: ImageSequence::new(resampled)?,
        terminations,
    })
}
