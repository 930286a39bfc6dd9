use std::cell::RefCell;
use std::time::Instant;

use rayon::prelude::*;

use super::lbfgs::{lbfgs_minimize, Preconditioner, Problem, Termination};
use super::precond::CurvaturePreconditioner;
use super::objective::{level_schatten, level_thetas, GroupwiseObjective, ObjectiveReport};
use super::SolverConfig;
use crate::deform::DeformationStack;
use crate::error::{Error, Result};
use crate::image::{Grid, Image, ImageSequence};
use crate::ngf::{estimate_theta, mean_gradient_magnitude};
use crate::pyramid::{image_pyramid, prolong};
use crate::sqn::SqnTerm;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTiming {
    pub level: usize,
    pub seconds: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub stack: DeformationStack,
    pub reports: Vec<ObjectiveReport>,
    pub timing: Vec<LevelTiming>,
    pub total_seconds: f64,
}

struct LevelProblem<'a, 'b> {
    objective: GroupwiseObjective<'a>,
    grid: Grid,
    frames: usize,
    drift: bool,
    precond: Option<CurvaturePreconditioner>,
    last: &'b RefCell<Option<ObjectiveReport>>,
}

impl Problem for LevelProblem<'_, '_> {
    fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let stack = DeformationStack::from_flat(self.grid, self.frames, x)?;
        let (report, grad) = self.objective.evaluate(&stack)?;
        let j = report.j;
        *self.last.borrow_mut() = Some(report);
        Ok((j, grad.to_flat()))
    }

    fn project(&self, v: &mut [f64]) {
        if !self.drift {
            return;
        }
        let n = 2 * self.grid.len();
        let mut mean = vec![0.0; n];
        for block in v.chunks(n) {
            mean.iter_mut().zip(block).for_each(|(m, x)| *m += x);
        }
        let t = self.frames as f64;
        mean.iter_mut().for_each(|m| *m /= t);
        for block in v.chunks_mut(n) {
            block.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
        }
    }

    fn preconditioner(&self) -> Option<&dyn Preconditioner> {
        self.precond.as_ref().map(|p| p as &dyn Preconditioner)
    }
}

/// Minimum finest-grid size per axis for `levels` levels.
pub fn min_size_for_levels(levels: usize) -> usize {
    4 << (levels - 1)
}

/// Coarse-to-fine groupwise registration. Level 0 is the finest.
pub fn multilevel_register(seq: &ImageSequence, cfg: &SolverConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let need = min_size_for_levels(cfg.levels);
    let m = seq.grid().m;
    if m[0] < need || m[1] < need {
        return Err(Error::InvalidParameter(format!(
            "{} levels need at least {need} nodes per axis, grid is {}x{}",
            cfg.levels, m[0], m[1]
        )));
    }
    cfg.in_pool(|| run(seq, cfg))?
}

fn run(seq: &ImageSequence, cfg: &SolverConfig) -> Result<RegistrationResult> {
    let started = Instant::now();
    let pyramids = seq
        .frames()
        .par_iter()
        .map(|f| image_pyramid(f, cfg.levels))
        .collect::<Result<Vec<_>>>()?;
    let levels: Vec<Vec<Image>> = (0..cfg.levels)
        .map(|l| pyramids.iter().map(|p| p[l].clone()).collect())
        .collect();
    let fine_mean = mean_gradient_magnitude(seq.frames());
    let global_theta = cfg.theta.unwrap_or_else(|| estimate_theta(seq.frames()));
    let frames_count = seq.len();

    let mut stack: Option<DeformationStack> = None;
    let mut reports = Vec::new();
    let mut timing = Vec::new();
    for level in (0..cfg.levels).rev() {
        let frames = &levels[level];
        let grid = *frames[0].grid();
        let level_start = Instant::now();
        let mut init = match stack.take() {
            None => DeformationStack::zeros(grid, frames_count),
            Some(s) => DeformationStack::new(
                s.fields().iter().map(|f| prolong(f, &grid)).collect::<Result<_>>()?,
            )?,
        };
        if cfg.drift_projection {
            init = init.project_drift();
        }
        let ratio = if fine_mean > 0.0 {
            mean_gradient_magnitude(frames) / fine_mean
        } else {
            1.0
        };
        let thetas = level_thetas(frames, cfg, global_theta, ratio);
        let schatten = level_schatten(frames, &thetas, cfg.normalization, cfg.scheme, &init, cfg)?;
        let term = SqnTerm::new(frames, thetas, cfg.normalization, schatten, cfg.scheme)?;
        let last = RefCell::new(None);
        let mut problem = LevelProblem {
            objective: GroupwiseObjective::new(term, cfg.alpha),
            grid,
            frames: frames_count,
            drift: cfg.drift_projection,
            precond: cfg.precondition.then(|| CurvaturePreconditioner::new(grid, cfg.alpha)),
            last: &last,
        };
        let result = lbfgs_minimize(&mut problem, &init.to_flat(), &cfg.lbfgs(), |it, _| {
            let mut r = last
                .borrow()
                .clone()
                .ok_or_else(|| Error::Solver("accepted iterate without evaluation".into()))?;
            r.iteration = it.iteration;
            r.level = level;
            r.gradient_norm = it.gradient_norm;
            r.elapsed = level_start.elapsed().as_secs_f64();
            reports.push(r);
            Ok(())
        })?;
        timing.push(LevelTiming {
            level,
            seconds: level_start.elapsed().as_secs_f64(),
            iterations: result.history.len() - 1,
            evaluations: result.evaluations,
            termination: result.termination,
        });
        stack = Some(DeformationStack::from_flat(grid, frames_count, &result.x)?);
    }
    Ok(RegistrationResult {
        stack: stack.expect("at least one level"),
        reports,
        timing,
        total_seconds: started.elapsed().as_secs_f64(),
    })
}
