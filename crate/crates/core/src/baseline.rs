//! Sequential pairwise registration with neighbour sweeps (Gauss-Seidel):
//! each frame is registered to the current warped estimates of its
//! neighbours while all other frames stay frozen.

use std::time::Instant;

use crate::deform::{curvature_value_and_gradient, DeformationStack};
use crate::error::{Error, Result};
use crate::image::{Image, ImageSequence, VectorField};
use crate::interp::{warp, warp_with_jacobian, Scheme};
use crate::ngf::{estimate_theta, jacobian_apply_raw, normalize_raw, Normalization};
use crate::optim::{
    lbfgs_minimize, CurvaturePreconditioner, ObjectiveReport, Preconditioner, Problem, SolverConfig,
};
use crate::pyramid::{image_pyramid, prolong, restrict_field};
use crate::stencil::{gradient_adjoint, gradient_raw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairwiseSimilarity {
    #[default]
    L2,
    Ngf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub similarity: PairwiseSimilarity,
    pub max_sweeps: usize,
    /// Sweeps stop once no displacement moved by more than this (world units).
    pub threshold: f64,
    /// Also optimize the first and last frame against their single neighbour.
    pub sweep_endpoints: bool,
    /// Per-pair solver settings (regularizer, levels, L-BFGS, interpolation).
    pub solver: SolverConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            similarity: PairwiseSimilarity::L2,
            max_sweeps: 10,
            threshold: 1e-2,
            sweep_endpoints: false,
            solver: SolverConfig::default(),
        }
    }
}

/// `1/2 h1 h2 sum (moving o (id + u) - fixed)^2` and its gradient w.r.t. `u`.
pub fn l2_value_and_gradient(
    fixed: &Image,
    moving: &Image,
    u: &VectorField,
    scheme: Scheme,
) -> Result<(f64, VectorField)> {
    if fixed.grid() != moving.grid() {
        return Err(Error::GridMismatch("fixed and moving images differ in grid".into()));
    }
    let (w, dw) = warp_with_jacobian(moving, u, scheme)?;
    let h = fixed.grid().cell_volume();
    let r: Vec<f64> = w.values().iter().zip(fixed.values()).map(|(a, b)| a - b).collect();
    let value = 0.5 * h * r.iter().map(|v| v * v).sum::<f64>();
    let c1 = r.iter().zip(dw.component(0)).map(|(a, b)| h * a * b).collect();
    let c2 = r.iter().zip(dw.component(1)).map(|(a, b)| h * a * b).collect();
    Ok((value, VectorField::new(*fixed.grid(), c1, c2)?))
}

/// Pairwise normalized-gradient distance `h1 h2 sum (1 - c^2)` with
/// `c = (g_m . g_f + theta_m theta_f) / (N_m N_f)`, the cosine between the
/// unit vectors `(g, theta) / N`. Identical images give `c = 1` everywhere,
/// so they are an exact minimizer.
pub fn ngf_value_and_gradient(
    fixed: &Image,
    moving: &Image,
    u: &VectorField,
    theta_fixed: f64,
    theta_moving: f64,
    scheme: Scheme,
) -> Result<(f64, VectorField)> {
    if fixed.grid() != moving.grid() {
        return Err(Error::GridMismatch("fixed and moving images differ in grid".into()));
    }
    let target = NgfTarget::new(fixed, theta_fixed);
    let (w, dw) = warp_with_jacobian(moving, u, scheme)?;
    let (v, gw) = ngf_accumulate(&w, theta_moving, &[(&target, 1.0)]);
    Ok((v, sensitivity_product(&gw, &dw)?))
}

struct NgfTarget {
    e1: Vec<f64>,
    e2: Vec<f64>,
    /// `theta / N` per node.
    e3: Vec<f64>,
}

impl NgfTarget {
    fn new(img: &Image, theta: f64) -> Self {
        let (g1, g2) = gradient_raw(img.grid(), img.values());
        let (e1, e2, norms) = normalize_raw(&g1, &g2, theta, Normalization::NodeWise);
        let e3 = norms.iter().map(|n| theta / n).collect();
        NgfTarget { e1, e2, e3 }
    }
}

/// Value and gradient with respect to the warped image values.
fn ngf_accumulate(w: &Image, theta: f64, targets: &[(&NgfTarget, f64)]) -> (f64, Vec<f64>) {
    let grid = *w.grid();
    let h = grid.cell_volume();
    let n = grid.len();
    let (g1, g2) = gradient_raw(&grid, w.values());
    let (e1, e2, norms) = normalize_raw(&g1, &g2, theta, Normalization::NodeWise);
    let mut value = 0.0;
    let mut r1 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    let mut r3 = vec![0.0; n];
    for (tgt, weight) in targets {
        for k in 0..n {
            let c = e1[k] * tgt.e1[k] + e2[k] * tgt.e2[k] + theta / norms[k] * tgt.e3[k];
            value += weight * h * (1.0 - c * c);
            r1[k] -= 2.0 * weight * h * c * tgt.e1[k];
            r2[k] -= 2.0 * weight * h * c * tgt.e2[k];
            r3[k] -= 2.0 * weight * h * c * tgt.e3[k];
        }
    }
    let (mut d1, mut d2) = jacobian_apply_raw(&g1, &g2, &norms, &r1, &r2, Normalization::NodeWise);
    // d(theta / N) / dg = -theta g / N^3
    for k in 0..n {
        let s = r3[k] * theta / (norms[k] * norms[k] * norms[k]);
        d1[k] -= s * g1[k];
        d2[k] -= s * g2[k];
    }
    (value, gradient_adjoint(&grid, &d1, &d2))
}

fn sensitivity_product(dv: &[f64], dw: &VectorField) -> Result<VectorField> {
    VectorField::new(
        *dw.grid(),
        dv.iter().zip(dw.component(0)).map(|(a, b)| a * b).collect(),
        dv.iter().zip(dw.component(1)).map(|(a, b)| a * b).collect(),
    )
}

/// One frame's pairwise objective at one level:
/// `sum_k w_k D(target_k, moving o (id + u)) + S(u)`.
struct PairObjective<'a> {
    moving: &'a Image,
    targets: Vec<(&'a Image, f64)>,
    ngf_targets: Vec<NgfTarget>,
    theta_moving: f64,
    similarity: PairwiseSimilarity,
    alpha: f64,
    scheme: Scheme,
}

impl PairObjective<'_> {
    fn evaluate(&self, u: &VectorField) -> Result<(f64, f64, VectorField)> {
        let (w, dw) = warp_with_jacobian(self.moving, u, self.scheme)?;
        let grid = *w.grid();
        let h = grid.cell_volume();
        let (data, dv) = match self.similarity {
            PairwiseSimilarity::L2 => {
                let mut value = 0.0;
                let mut dv = vec![0.0; grid.len()];
                for (tgt, weight) in &self.targets {
                    for (k, (a, b)) in w.values().iter().zip(tgt.values()).enumerate() {
                        let r = a - b;
                        value += 0.5 * weight * h * r * r;
                        dv[k] += weight * h * r;
                    }
                }
                (value, dv)
            }
            PairwiseSimilarity::Ngf => {
                let pairs: Vec<(&NgfTarget, f64)> = self
                    .ngf_targets
                    .iter()
                    .zip(&self.targets)
                    .map(|(t, (_, w))| (t, *w))
                    .collect();
                ngf_accumulate(&w, self.theta_moving, &pairs)
            }
        };
        let (reg, rg) = curvature_value_and_gradient(u, self.alpha)?;
        let mut grad = sensitivity_product(&dv, &dw)?;
        grad.axpy(1.0, &rg);
        Ok((data, reg, grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub sweep: usize,
    pub frame: usize,
    /// `sqn_term` holds the pairwise data term; `sigma` is empty.
    pub report: ObjectiveReport,
}

#[derive(Debug, Clone)]
pub struct SequentialResult {
    pub stack: DeformationStack,
    pub reports: Vec<SweepReport>,
    pub sweep_seconds: Vec<f64>,
    /// Accepted inner L-BFGS iterations per sweep, summed over frames and levels.
    pub sweep_iterations: Vec<usize>,
    pub total_seconds: f64,
}

/// Coarse-to-fine solve of one pairwise problem starting from `init`.
#[allow(clippy::too_many_arguments)]
fn pairwise_register(
    moving: &[Image],
    targets: &[(Vec<Image>, f64)],
    init: &VectorField,
    cfg: &SweepConfig,
    sweep: usize,
    frame: usize,
    reports: &mut Vec<SweepReport>,
) -> Result<(VectorField, usize)> {
    let solver = &cfg.solver;
    let levels = moving.len();
    let mut inits = vec![init.clone()];
    for _ in 1..levels {
        let next = restrict_field(inits.last().expect("non-empty"))?;
        inits.push(next);
    }
    let mut current: Option<VectorField> = None;
    let mut iterations = 0;
    for level in (0..levels).rev() {
        let grid = *moving[level].grid();
        let start_field = match current.take() {
            None => inits[level].clone(),
            Some(c) => prolong(&c, &grid)?,
        };
        let level_targets: Vec<(&Image, f64)> =
            targets.iter().map(|(p, w)| (&p[level], *w)).collect();
        let ngf_targets = match cfg.similarity {
            PairwiseSimilarity::Ngf => level_targets
                .iter()
                .map(|(img, _)| NgfTarget::new(img, estimate_theta(std::slice::from_ref(*img))))
                .collect(),
            PairwiseSimilarity::L2 => Vec::new(),
        };
        let objective = PairObjective {
            moving: &moving[level],
            targets: level_targets,
            ngf_targets,
            theta_moving: estimate_theta(std::slice::from_ref(&moving[level])),
            similarity: cfg.similarity,
            alpha: solver.alpha,
            scheme: solver.scheme,
        };
        let last = std::cell::RefCell::new((0.0, 0.0));
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let u = VectorField::from_flat(grid, x)?;
            let (d, r, g) = objective.evaluate(&u)?;
            *last.borrow_mut() = (d, r);
            Ok((d + r, g.to_flat()))
        };
        let mut problem = WithPreconditioner {
            f: &mut f,
            pre: solver.precondition.then(|| CurvaturePreconditioner::new(grid, solver.alpha)),
        };
        let start = Instant::now();
        let result = lbfgs_minimize(&mut problem, &start_field.to_flat(), &solver.lbfgs(), |it, _| {
            let (d, r) = *last.borrow();
            reports.push(SweepReport {
                sweep,
                frame,
                report: ObjectiveReport {
                    j: d + r,
                    sqn_term: d,
                    reg_term: r,
                    sigma: Vec::new(),
                    gradient_norm: it.gradient_norm,
                    iteration: it.iteration,
                    level,
                    elapsed: start.elapsed().as_secs_f64(),
                },
            });
            Ok(())
        })?;
        iterations += result.history.len() - 1;
        current = Some(VectorField::from_flat(grid, &result.x)?);
    }
    Ok((current.expect("at least one level"), iterations))
}

struct WithPreconditioner<F> {
    f: F,
    pre: Option<CurvaturePreconditioner>,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Problem for WithPreconditioner<F> {
    fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.f)(x)
    }

    fn preconditioner(&self) -> Option<&dyn Preconditioner> {
        self.pre.as_ref().map(|p| p as &dyn Preconditioner)
    }
}

/// Frames optimized in one sweep, in order (0-based).
fn sweep_order(frames: usize, endpoints: bool) -> Vec<usize> {
    if endpoints || frames == 2 {
        if frames == 2 && !endpoints {
            return vec![1];
        }
        (0..frames).collect()
    } else {
        (1..frames - 1).collect()
    }
}

pub fn sequential_register(seq: &ImageSequence, cfg: &SweepConfig) -> Result<SequentialResult> {
    cfg.solver.validate()?;
    if cfg.max_sweeps == 0 {
        return Err(Error::InvalidParameter("max sweeps must be ≥ 1".into()));
    }
    let need = crate::optim::min_size_for_levels(cfg.solver.levels);
    let m = seq.grid().m;
    if m[0] < need || m[1] < need {
        return Err(Error::InvalidParameter(format!(
            "{} levels need at least {need} nodes per axis, grid is {}x{}",
            cfg.solver.levels, m[0], m[1]
        )));
    }
    cfg.solver.in_pool(|| run_sweeps(seq, cfg))?
}

fn run_sweeps(seq: &ImageSequence, cfg: &SweepConfig) -> Result<SequentialResult> {
    let started = Instant::now();
    let t_count = seq.len();
    let levels = cfg.solver.levels;
    let scheme = cfg.solver.scheme;
    let pyramids = seq
        .frames()
        .iter()
        .map(|f| image_pyramid(f, levels))
        .collect::<Result<Vec<_>>>()?;
    let mut fields = vec![VectorField::zeros(*seq.grid()); t_count];
    let mut reports = Vec::new();
    let mut sweep_seconds = Vec::new();
    let mut sweep_iterations = Vec::new();
    for sweep in 0..cfg.max_sweeps {
        let sweep_start = Instant::now();
        let mut max_change: f64 = 0.0;
        let mut iterations = 0;
        for t in sweep_order(t_count, cfg.sweep_endpoints) {
            let neighbours: Vec<usize> = [t.checked_sub(1), Some(t + 1)]
                .into_iter()
                .flatten()
                .filter(|&s| s < t_count)
                .collect();
            let weight = 1.0 / neighbours.len() as f64;
            let targets = neighbours
                .iter()
                .map(|&s| {
                    let w = warp(seq.frame(s), &fields[s], scheme)?;
                    Ok((image_pyramid(&w, levels)?, weight))
                })
                .collect::<Result<Vec<_>>>()?;
            let (u, its) =
                pairwise_register(&pyramids[t], &targets, &fields[t], cfg, sweep, t, &mut reports)?;
            iterations += its;
            let mut diff = u.clone();
            diff.axpy(-1.0, &fields[t]);
            max_change = max_change.max(diff.max_norm());
            fields[t] = u;
        }
        sweep_seconds.push(sweep_start.elapsed().as_secs_f64());
        sweep_iterations.push(iterations);
        if max_change < cfg.threshold {
            break;
        }
    }
    Ok(SequentialResult {
        stack: DeformationStack::new(fields)?,
        reports,
        sweep_seconds,
        sweep_iterations,
        total_seconds: started.elapsed().as_secs_f64(),
    })
}
