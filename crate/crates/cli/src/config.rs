//! Run configuration: `key = value` files, per-key flags, and snapshots.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use seqreg::baseline::{PairwiseSimilarity, SweepConfig};
use seqreg::io::BitDepth;
use seqreg::optim::SolverConfig;
use seqreg::prealign::PrealignConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Sqn,
    SequentialL2,
    SequentialNgf,
    PrealignOnly,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sqn" => Ok(Method::Sqn),
            "sequential-l2" => Ok(Method::SequentialL2),
            "sequential-ngf" => Ok(Method::SequentialNgf),
            "prealign-only" => Ok(Method::PrealignOnly),
            other => Err(format!(
                "unknown method '{other}' (expected sqn, sequential-l2, sequential-ngf, prealign-only)"
            )),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sqn => "sqn",
            Method::SequentialL2 => "sequential-l2",
            Method::SequentialNgf => "sequential-ngf",
            Method::PrealignOnly => "prealign-only",
        })
    }
}

/// Every configurable key with its help text, in snapshot order.
pub const KEYS: &[(&str, &str)] = &[
    ("method", "registration method: sqn, sequential-l2, sequential-ngf, prealign-only"),
    ("q", "Schatten exponent, > 0"),
    ("eps_relative", "smoothing eps as a fraction of sigma_1 at each level's start"),
    ("alpha", "curvature regularizer weight"),
    ("levels", "pyramid levels"),
    ("max_iterations", "L-BFGS iterations per level"),
    ("lbfgs_memory", "L-BFGS history length"),
    ("armijo_c1", "Armijo sufficient-decrease constant"),
    ("min_step", "smallest line-search step"),
    ("gradient_tolerance", "relative gradient-norm reduction that ends a level"),
    ("initial_step", "first trial step length"),
    ("drift_projection", "keep the mean displacement at zero (true/false)"),
    ("precondition", "regularizer-shaped L-BFGS initial Hessian (true/false)"),
    ("threads", "worker threads (falls back to SEQREG_THREADS, then 1)"),
    ("scheme", "interpolation: cubic or linear"),
    ("theta", "NGF edge parameter, or 'auto' to estimate it"),
    ("theta_mode", "per-frame-auto or global-fixed"),
    ("normalization", "node-wise or global"),
    ("max_sweeps", "sequential baseline: maximum sweeps"),
    ("sweep_threshold", "sequential baseline: stop when no displacement moves more than this"),
    ("sweep_endpoints", "sequential baseline: also optimize the first and last frame"),
    ("prealign", "affine pre-alignment before deformable registration (true/false)"),
    ("prealign_levels", "pre-alignment pyramid levels"),
    ("prealign_iterations", "pre-alignment iterations per stage and level"),
    ("prealign_affine", "run the affine stage after the rigid one (true/false)"),
    ("bit_depth", "PGM output depth: 8 or 16"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub solver: SolverConfig,
    pub max_sweeps: usize,
    pub sweep_threshold: f64,
    pub sweep_endpoints: bool,
    pub prealign: bool,
    pub prealign_levels: usize,
    pub prealign_iterations: usize,
    pub prealign_affine: bool,
    pub bit_depth: BitDepth,
    /// Whether `threads` came from a file or flag rather than the default.
    threads_given: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        let pre = PrealignConfig::default();
        RunConfig {
            method: Method::default(),
            solver: SolverConfig::default(),
            max_sweeps: sweep.max_sweeps,
            sweep_threshold: sweep.threshold,
            sweep_endpoints: sweep.sweep_endpoints,
            prealign: false,
            prealign_levels: pre.levels,
            prealign_iterations: pre.max_iterations,
            prealign_affine: pre.affine,
            bit_depth: BitDepth::Sixteen,
            threads_given: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("bad value '{value}' for {key}"))
}

fn parse_named<T: FromStr<Err = String>>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|e| format!("{key}: {e}"))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let s = &mut self.solver;
        match key {
            "method" => self.method = parse_named(key, value)?,
            "q" => s.q = parse(key, value)?,
            "eps_relative" => s.eps_relative = parse(key, value)?,
            "alpha" => s.alpha = parse(key, value)?,
            "levels" => s.levels = parse(key, value)?,
            "max_iterations" => s.max_iterations = parse(key, value)?,
            "lbfgs_memory" => s.lbfgs_memory = parse(key, value)?,
            "armijo_c1" => s.armijo_c1 = parse(key, value)?,
            "min_step" => s.min_step = parse(key, value)?,
            "gradient_tolerance" => s.gradient_tolerance = parse(key, value)?,
            "initial_step" => s.initial_step = parse(key, value)?,
            "drift_projection" => s.drift_projection = parse(key, value)?,
            "precondition" => s.precondition = parse(key, value)?,
            "threads" => {
                s.threads = parse(key, value)?;
                self.threads_given = true;
            }
            "scheme" => s.scheme = parse_named(key, value)?,
            "theta" => {
                s.theta = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "theta_mode" => s.theta_mode = parse_named(key, value)?,
            "normalization" => s.normalization = parse_named(key, value)?,
            "max_sweeps" => self.max_sweeps = parse(key, value)?,
            "sweep_threshold" => self.sweep_threshold = parse(key, value)?,
            "sweep_endpoints" => self.sweep_endpoints = parse(key, value)?,
            "prealign" => self.prealign = parse(key, value)?,
            "prealign_levels" => self.prealign_levels = parse(key, value)?,
            "prealign_iterations" => self.prealign_iterations = parse(key, value)?,
            "prealign_affine" => self.prealign_affine = parse(key, value)?,
            "bit_depth" => {
                self.bit_depth = match value {
                    "8" => BitDepth::Eight,
                    "16" => BitDepth::Sixteen,
                    other => return Err(format!("bad value '{other}' for bit_depth (expected 8 or 16)")),
                }
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let s = &self.solver;
        match key {
            "method" => self.method.to_string(),
            "q" => s.q.to_string(),
            "eps_relative" => s.eps_relative.to_string(),
            "alpha" => s.alpha.to_string(),
            "levels" => s.levels.to_string(),
            "max_iterations" => s.max_iterations.to_string(),
            "lbfgs_memory" => s.lbfgs_memory.to_string(),
            "armijo_c1" => s.armijo_c1.to_string(),
            "min_step" => s.min_step.to_string(),
            "gradient_tolerance" => s.gradient_tolerance.to_string(),
            "initial_step" => s.initial_step.to_string(),
            "drift_projection" => s.drift_projection.to_string(),
            "precondition" => s.precondition.to_string(),
            "threads" => s.threads.to_string(),
            "scheme" => s.scheme.to_string(),
            "theta" => s.theta.map_or_else(|| "auto".to_string(), |t| t.to_string()),
            "theta_mode" => s.theta_mode.to_string(),
            "normalization" => s.normalization.to_string(),
            "max_sweeps" => self.max_sweeps.to_string(),
            "sweep_threshold" => self.sweep_threshold.to_string(),
            "sweep_endpoints" => self.sweep_endpoints.to_string(),
            "prealign" => self.prealign.to_string(),
            "prealign_levels" => self.prealign_levels.to_string(),
            "prealign_iterations" => self.prealign_iterations.to_string(),
            "prealign_affine" => self.prealign_affine.to_string(),
            "bit_depth" => match self.bit_depth {
                BitDepth::Eight => "8".into(),
                BitDepth::Sixteen => "16".into(),
            },
            other => unreachable!("key table and getter disagree on '{other}'"),
        }
    }

    /// Applies a config file's `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str, path: &Path) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| CliError::Usage(format!("{}: line {}: {m}", path.display(), lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected 'key = value', got '{line}'")))?;
            self.set(key.trim(), value.trim()).map_err(at)?;
        }
        Ok(())
    }

    /// Uses `SEQREG_THREADS` when neither file nor flag set `threads`.
    pub fn apply_thread_fallback(&mut self, env: Option<&str>) -> Result<(), CliError> {
        if self.threads_given {
            return Ok(());
        }
        if let Some(v) = env {
            self.solver.threads = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("SEQREG_THREADS: bad thread count '{v}'")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.solver
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.max_sweeps == 0 {
            return Err(CliError::Usage("max_sweeps must be ≥ 1".into()));
        }
        if self.sweep_threshold.is_nan() || self.sweep_threshold < 0.0 {
            return Err(CliError::Usage("sweep_threshold must be ≥ 0".into()));
        }
        if self.prealign_levels == 0 {
            return Err(CliError::Usage("prealign_levels must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Resolved configuration in the config-file format; feeding it back
    /// reproduces the run.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key)));
        }
        out
    }

    pub fn sweep(&self, similarity: PairwiseSimilarity) -> SweepConfig {
        SweepConfig {
            similarity,
            max_sweeps: self.max_sweeps,
            threshold: self.sweep_threshold,
            sweep_endpoints: self.sweep_endpoints,
            solver: self.solver.clone(),
        }
    }

    pub fn prealign_config(&self) -> PrealignConfig {
        PrealignConfig {
            levels: self.prealign_levels,
            max_iterations: self.prealign_iterations,
            scheme: self.solver.scheme,
            affine: self.prealign_affine,
        }
    }
}
