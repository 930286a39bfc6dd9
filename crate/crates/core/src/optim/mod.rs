//! Joint objective `J(y) = SqN(I o y) + sum_t S(y_t)`, its quasi-Newton
//! minimization, and coarse-to-fine continuation.

mod lbfgs;
mod multilevel;
mod objective;
mod precond;

pub use lbfgs::{
    lbfgs_minimize, Iterate, LbfgsConfig, LbfgsResult, Preconditioner, Problem, Termination,
};
pub use multilevel::{min_size_for_levels, multilevel_register, LevelTiming, RegistrationResult};
pub use objective::{evaluate_objective, evaluate_objectives, GroupwiseObjective, ObjectiveReport};
pub use precond::CurvaturePreconditioner;

use crate::deform::DeformationStack;
use crate::error::{Error, Result};
use crate::interp::Scheme;
use crate::ngf::{Normalization, ThetaMode};

/// Node-wise zero-mean gauge: `u_t - (1/T) sum_s u_s`.
pub fn project_drift(stack: &DeformationStack) -> DeformationStack {
    stack.project_drift()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub q: f64,
    /// Smoothing `eps = eps_relative * sigma_1` of each level's initial iterate.
    pub eps_relative: f64,
    pub alpha: f64,
    pub levels: usize,
    pub max_iterations: usize,
    pub lbfgs_memory: usize,
    pub armijo_c1: f64,
    pub min_step: f64,
    /// Relative gradient-norm reduction that ends a level.
    pub gradient_tolerance: f64,
    pub initial_step: f64,
    pub drift_projection: bool,
    /// Shape the L-BFGS initial inverse Hessian with the regularizer.
    pub precondition: bool,
    pub threads: usize,
    pub scheme: Scheme,
    /// Edge parameter; `None` estimates it from the data.
    pub theta: Option<f64>,
    pub theta_mode: ThetaMode,
    pub normalization: Normalization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            q: 0.5,
            eps_relative: 1e-2,
            alpha: 1.0,
            levels: 4,
            max_iterations: 50,
            lbfgs_memory: 10,
            armijo_c1: 1e-4,
            min_step: 1e-10,
            gradient_tolerance: 1e-4,
            initial_step: 1.0,
            drift_projection: true,
            precondition: true,
            threads: 1,
            scheme: Scheme::Cubic,
            theta: None,
            theta_mode: ThetaMode::PerFrameAuto,
            normalization: Normalization::NodeWise,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.q >= 0.0) {
            return bad(format!("q must be ≥ 0, got {}", self.q));
        }
        if self.q == 0.0 {
            return bad("q must be > 0 for registration".into());
        }
        if !(self.eps_relative > 0.0) && self.q < 2.0 {
            return bad(format!("eps_relative must be > 0 when q < 2, got {}", self.eps_relative));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.levels == 0 {
            return bad("levels must be ≥ 1".into());
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be ≥ 1".into());
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad(format!("armijo_c1 must be in (0, 1), got {}", self.armijo_c1));
        }
        if !(self.min_step > 0.0) || !(self.initial_step > 0.0) {
            return bad("step lengths must be > 0".into());
        }
        if !(self.gradient_tolerance >= 0.0) {
            return bad("gradient_tolerance must be ≥ 0".into());
        }
        if self.threads == 0 {
            return bad("threads must be ≥ 1".into());
        }
        if let Some(t) = self.theta {
            if !(t > 0.0) {
                return bad(format!("theta must be > 0, got {t}"));
            }
        }
        Ok(())
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            memory: self.lbfgs_memory,
            max_iterations: self.max_iterations,
            armijo_c1: self.armijo_c1,
            min_step: self.min_step,
            gradient_tolerance: 0.0,
            relative_tolerance: self.gradient_tolerance,
            initial_step: self.initial_step,
        }
    }

    /// Runs `f` on a pool with `threads` workers.
    pub fn in_pool<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Solver(format!("cannot build thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}
