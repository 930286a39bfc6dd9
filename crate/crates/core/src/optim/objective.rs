use rayon::prelude::*;

use super::SolverConfig;
use crate::deform::{curvature_value_and_gradient, DeformationStack};
use crate::error::{Error, Result};
use crate::image::{Image, ImageSequence};
use crate::interp::Scheme;
use crate::ngf::{estimate_theta, Normalization, ThetaMode};
use crate::sqn::{SchattenParams, SqnTerm};

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub j: f64,
    pub sqn_term: f64,
    pub reg_term: f64,
    pub sigma: Vec<f64>,
    pub gradient_norm: f64,
    pub iteration: usize,
    pub level: usize,
    /// Seconds since the start of the level.
    pub elapsed: f64,
}

/// `J` for one set of frames (one pyramid level).
#[derive(Debug, Clone)]
pub struct GroupwiseObjective<'a> {
    pub sqn: SqnTerm<'a>,
    pub alpha: f64,
}

impl<'a> GroupwiseObjective<'a> {
    pub fn new(sqn: SqnTerm<'a>, alpha: f64) -> Self {
        GroupwiseObjective { sqn, alpha }
    }

    /// Report (with `iteration`, `level`, `elapsed` zeroed) and the total
    /// gradient per frame.
    pub fn evaluate(&self, stack: &DeformationStack) -> Result<(ObjectiveReport, DeformationStack)> {
        let ev = self.sqn.value_and_gradient(stack.fields())?;
        if !ev.value.is_finite() {
            return Err(Error::NonFinite("sqn value".into()));
        }
        let regs = stack
            .fields()
            .par_iter()
            .map(|u| curvature_value_and_gradient(u, self.alpha))
            .collect::<Result<Vec<_>>>()?;
        let mut reg_term = 0.0;
        let mut grads = Vec::with_capacity(stack.len());
        for (t, ((r, rg), sg)) in regs.into_iter().zip(ev.gradients).enumerate() {
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("curvature term in frame {t}")));
            }
            if sg.to_flat().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sqn gradient in frame {t}")));
            }
            reg_term += r;
            let mut g = sg;
            g.axpy(1.0, &rg);
            grads.push(g);
        }
        let grad = DeformationStack::new(grads)?;
        let gradient_norm = grad.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((
            ObjectiveReport {
                j: ev.value + reg_term,
                sqn_term: ev.value,
                reg_term,
                sigma: ev.sigma,
                gradient_norm,
                iteration: 0,
                level: 0,
                elapsed: 0.0,
            },
            grad,
        ))
    }
}

/// Per-frame theta for one level. A global theta chosen on the finest level
/// is rescaled by `ratio`, the level's mean gradient magnitude over the
/// finest level's.
pub(crate) fn level_thetas(frames: &[Image], cfg: &SolverConfig, global_fine: f64, ratio: f64) -> Vec<f64> {
    match cfg.theta_mode {
        ThetaMode::GlobalFixed => vec![(global_fine * ratio).max(f64::MIN_POSITIVE); frames.len()],
        ThetaMode::PerFrameAuto => frames
            .iter()
            .map(|f| estimate_theta(std::slice::from_ref(f)))
            .collect(),
    }
}

/// Smoothing parameter from the largest singular value at `stack`.
pub(crate) fn level_schatten(
    frames: &[Image],
    thetas: &[f64],
    normalization: Normalization,
    scheme: Scheme,
    stack: &DeformationStack,
    cfg: &SolverConfig,
) -> Result<SchattenParams> {
    let probe = SqnTerm::new(frames, thetas.to_vec(), normalization, SchattenParams::new(cfg.q, 0.0)?, scheme)?;
    let sigma1 = probe.value(stack.fields())?.sigma.first().copied().unwrap_or(0.0);
    let eps = if sigma1 > 0.0 { cfg.eps_relative * sigma1 } else { cfg.eps_relative };
    SchattenParams::new(cfg.q, eps)
}

/// `J` and its gradient for a sequence at its own resolution, with theta
/// and eps resolved from `cfg` at `stack`.
pub fn evaluate_objective(
    seq: &ImageSequence,
    stack: &DeformationStack,
    cfg: &SolverConfig,
) -> Result<(ObjectiveReport, DeformationStack)> {
    let mut out = evaluate_objectives(seq, std::slice::from_ref(stack), cfg)?;
    Ok(out.remove(0))
}

/// `J` at several stacks under one theta and eps, both resolved at the
/// first stack, so the values are comparable.
pub fn evaluate_objectives(
    seq: &ImageSequence,
    stacks: &[DeformationStack],
    cfg: &SolverConfig,
) -> Result<Vec<(ObjectiveReport, DeformationStack)>> {
    cfg.validate()?;
    let reference = stacks
        .first()
        .ok_or_else(|| Error::InvalidParameter("no deformation stack to evaluate".into()))?;
    for stack in stacks {
        if stack.len() != seq.len() || stack.grid() != seq.grid() {
            return Err(Error::GridMismatch("deformation stack does not match the sequence".into()));
        }
    }
    let frames = seq.frames();
    let global = cfg.theta.unwrap_or_else(|| estimate_theta(frames));
    let thetas = level_thetas(frames, cfg, global, 1.0);
    let schatten = level_schatten(frames, &thetas, cfg.normalization, cfg.scheme, reference, cfg)?;
    let term = SqnTerm::new(frames, thetas, cfg.normalization, schatten, cfg.scheme)?;
    let objective = GroupwiseObjective::new(term, cfg.alpha);
    cfg.in_pool(|| stacks.iter().map(|s| objective.evaluate(s)).collect())?
}

