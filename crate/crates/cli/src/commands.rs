use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use seqreg::baseline::{sequential_register, PairwiseSimilarity};
use seqreg::deform::{compose_displacement, Affine, DeformationStack};
use seqreg::eval::{endpoint_error, EvalReport};
use seqreg::interp::warp;
use seqreg::io::{read_field_dir, read_stack, write_field, write_pgm, write_stack, BitDepth};
use seqreg::ngf::{estimate_theta, NgfParams};
use seqreg::optim::{evaluate_objectives, multilevel_register};
use seqreg::prealign::affine_prealign;
use seqreg::report;
use seqreg::sqn::{SchattenParams, SqnTerm};
use seqreg::synth::{generate, SynthSpec};
use seqreg::{ImageSequence, VectorField};

use crate::config::{Method, RunConfig};
use crate::error::CliError;

const LOCK_NAME: &str = ".seqreg.lock";
const SUMMARY_NAME: &str = "summary.txt";

/// Exclusive claim on an output directory, released on drop.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(LOCK_NAME);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                ErrorKind::AlreadyExists => CliError::Data(format!(
                    "{}: output directory is in use by another run (delete the lock if it is stale)",
                    path.display()
                )),
                _ => CliError::Data(format!("{}: {e}", path.display())),
            })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(OutputLock(path))
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    Ok(report::write_text(&dir.join(name), text)?)
}

fn field_name(t: usize) -> String {
    format!("field_{t:03}.sqnf")
}

pub fn synth(spec_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            SynthSpec::parse(&text, p).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => SynthSpec::default(),
    };
    let _lock = OutputLock::acquire(out)?;
    let generated = generate(&spec)?;
    write_stack(&generated.sequence, out, BitDepth::Sixteen)?;
    let truth = out.join("truth");
    fs::create_dir_all(&truth).map_err(|e| CliError::Data(format!("{}: {e}", truth.display())))?;
    for (t, f) in generated.ground_truth.fields().iter().enumerate() {
        write_field(f, truth.join(field_name(t)))?;
    }
    write_pgm(&generated.template, out.join("template.pgm"), BitDepth::Sixteen)?;
    write(out, "config.snapshot", &spec.to_text())
}

/// `x -> A (x + u(x)) + b`: the deformable correction `u` acts on the
/// pre-aligned frame, whose coordinates the affine map takes to the input.
fn chain_affine(affine: &Affine, u: &VectorField) -> Result<VectorField, CliError> {
    let a = &affine.a;
    let (u1, u2) = (u.component(0), u.component(1));
    let c1 = u1.iter().zip(u2).map(|(x, y)| a[0][0] * x + a[0][1] * y).collect();
    let c2 = u1.iter().zip(u2).map(|(x, y)| a[1][0] * x + a[1][1] * y).collect();
    Ok(compose_displacement(affine, &VectorField::new(*u.grid(), c1, c2)?))
}

struct MethodOutput {
    stack: DeformationStack,
    report: String,
    timing: String,
}

fn run_method(seq: &ImageSequence, cfg: &RunConfig) -> Result<MethodOutput, CliError> {
    let similarity = match cfg.method {
        Method::Sqn => {
            let res = multilevel_register(seq, &cfg.solver)?;
            return Ok(MethodOutput {
                report: report::objective_csv(&res.reports, false),
                timing: report::timing_csv(&res.timing, res.total_seconds),
                stack: res.stack,
            });
        }
        Method::PrealignOnly => {
            return Ok(MethodOutput {
                stack: DeformationStack::zeros(*seq.grid(), seq.len()),
                report: String::new(),
                timing: String::new(),
            })
        }
        Method::SequentialL2 => PairwiseSimilarity::L2,
        Method::SequentialNgf => PairwiseSimilarity::Ngf,
    };
    let res = sequential_register(seq, &cfg.sweep(similarity))?;
    Ok(MethodOutput {
        report: report::sweep_csv(&res.reports, false),
        timing: report::sweep_timing_csv(&res.sweep_seconds, &res.sweep_iterations),
        stack: res.stack,
    })
}

/// Registers the stack at `input` and writes every artifact to `out`.
/// Returns the summary line.
pub fn register(input: &Path, out: &Path, cfg: &RunConfig) -> Result<String, CliError> {
    let seq = read_stack(input)?;
    let _lock = OutputLock::acquire(out)?;
    let started = Instant::now();
    let prealigned = if cfg.prealign || cfg.method == Method::PrealignOnly {
        Some(affine_prealign(&seq, &cfg.prealign_config())?)
    } else {
        None
    };
    let working = prealigned.as_ref().map_or(&seq, |p| &p.resampled);
    let result = run_method(working, cfg)?;
    let seconds = started.elapsed().as_secs_f64();

    let fields = match &prealigned {
        Some(p) => p
            .transforms
            .iter()
            .zip(result.stack.fields())
            .map(|(m, u)| chain_affine(m, u))
            .collect::<Result<Vec<_>, _>>()?,
        None => result.stack.fields().to_vec(),
    };
    let total = DeformationStack::new(fields)?;
    let scored = evaluate_objectives(&seq, &[DeformationStack::zeros(*seq.grid(), seq.len()), total.clone()], &cfg.solver)?;
    let (j_initial, j_final) = (scored[0].0.j, scored[1].0.j);
    if !j_final.is_finite() {
        return Err(CliError::Solver(format!("final objective is not finite ({j_final})")));
    }

    let registered = seq
        .frames()
        .iter()
        .zip(total.fields())
        .map(|(f, u)| warp(f, u, cfg.solver.scheme))
        .collect::<Result<Vec<_>, _>>()?;
    write_stack(&ImageSequence::new(registered)?, out, cfg.bit_depth)?;
    for (t, f) in total.fields().iter().enumerate() {
        write_field(f, out.join(field_name(t)))?;
    }
    let report_csv = match (&prealigned, cfg.method) {
        (Some(p), Method::PrealignOnly) => report::affine_csv(&p.transforms),
        _ => result.report,
    };
    write(out, "report.csv", &report_csv)?;
    if let Some(p) = &prealigned {
        write(out, "affine.csv", &report::affine_csv(&p.transforms))?;
    }
    let timing = if result.timing.is_empty() {
        format!("stage,seconds\nprealign,{seconds:.6}\n")
    } else {
        result.timing
    };
    write(out, "timing.csv", &timing)?;
    write(out, "config.snapshot", &cfg.snapshot())?;
    let summary = format!(
        "method={} J_initial={j_initial} J_final={j_final} seconds={seconds:.3}",
        cfg.method
    );
    write(out, SUMMARY_NAME, &format!("{summary}\n"))?;
    Ok(summary)
}

/// Method label and seconds from a register output's summary file.
fn read_summary(dir: &Path) -> (String, f64) {
    let text = fs::read_to_string(dir.join(SUMMARY_NAME)).unwrap_or_default();
    let field = |name: &str| {
        text.split_whitespace()
            .find_map(|kv| kv.strip_prefix(name).and_then(|v| v.strip_prefix('=')))
            .map(str::to_string)
    };
    let method = field("method").unwrap_or_else(|| dir.display().to_string());
    let seconds = field("seconds").and_then(|s| s.parse().ok()).unwrap_or(0.0);
    (method, seconds)
}

fn as_stack(fields: Vec<VectorField>, dir: &Path, frames: usize) -> Result<DeformationStack, CliError> {
    if fields.len() != frames {
        return Err(CliError::Data(format!(
            "{}: {} fields for a {frames}-frame stack",
            dir.display(),
            fields.len()
        )));
    }
    DeformationStack::new(fields).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

/// Writes `eval.csv` and `comparison.csv`; returns one line per method.
pub fn evaluate(
    input: &Path,
    truth: &Path,
    estimates: &[PathBuf],
    out: &Path,
    cfg: &RunConfig,
) -> Result<Vec<String>, CliError> {
    let seq = read_stack(input)?;
    let gt = as_stack(read_field_dir(truth)?, truth, seq.len())?;
    if gt.grid().m != seq.grid().m {
        return Err(CliError::Data(format!("{}: ground-truth grid differs from the stack", truth.display())));
    }
    let s = &cfg.solver;
    let frames = seq.frames();
    let ngf = NgfParams {
        theta: s.theta.unwrap_or_else(|| estimate_theta(frames)),
        mode: s.theta_mode,
        normalization: s.normalization,
    };
    let term = SqnTerm::new(frames, ngf.thetas(frames), ngf.normalization, SchattenParams::new(s.q, 0.0)?, s.scheme)?;
    let zeros = DeformationStack::zeros(*seq.grid(), seq.len());
    let sqn_before = term.value(zeros.fields())?.value;
    let before = endpoint_error(&zeros, &gt)?;

    let _lock = OutputLock::acquire(out)?;
    let mut reports = Vec::new();
    for dir in estimates {
        let est = as_stack(read_field_dir(dir)?, dir, seq.len())?;
        if est.grid().m != seq.grid().m {
            return Err(CliError::Data(format!("{}: field grid differs from the stack", dir.display())));
        }
        let (method, seconds) = read_summary(dir);
        reports.push(EvalReport {
            method,
            before: before.clone(),
            after: endpoint_error(&est, &gt)?,
            sqn_before,
            sqn_after: term.value(est.fields())?.value,
            seconds,
        });
    }
    write(out, "eval.csv", &report::eval_csv(&reports))?;
    write(out, "comparison.csv", &report::comparison_csv(&reports))?;
    write(out, "config.snapshot", &cfg.snapshot())?;
    Ok(reports
        .iter()
        .map(|r| {
            format!(
                "method={} epe_before={} epe_after={} improvement={:.4} sqn_before={} sqn_after={}",
                r.method,
                r.before.mean,
                r.after.mean,
                r.improvement(),
                r.sqn_before,
                r.sqn_after
            )
        })
        .collect())
}

/// Runs the SqN solver and writes the per-iterate singular values.
pub fn spectrum(input: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.method != Method::Sqn {
        return Err(CliError::Usage(format!(
            "--method: spectrum traces the sqn solver, got '{}'",
            cfg.method
        )));
    }
    let seq = read_stack(input)?;
    let _lock = OutputLock::acquire(out)?;
    let res = multilevel_register(&seq, &cfg.solver)?;
    write(out, "spectrum.csv", &report::spectrum_csv(&res.reports))?;
    write(out, "config.snapshot", &cfg.snapshot())
}
