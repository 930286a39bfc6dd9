//! Plain CSV writers for solver histories and evaluation summaries.
//!
//! Numbers are printed with Rust's shortest round-trip formatting so that
//! identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::baseline::SweepReport;
use crate::deform::Affine;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::optim::{LevelTiming, ObjectiveReport};

fn sigma_header(out: &mut String, count: usize) {
    for k in 1..=count {
        let _ = write!(out, ",sigma_{k}");
    }
}

fn sigma_row(out: &mut String, sigma: &[f64], count: usize) {
    for k in 0..count {
        match sigma.get(k) {
            Some(s) => {
                let _ = write!(out, ",{s:e}");
            }
            None => out.push(','),
        }
    }
}

fn max_sigma(reports: &[ObjectiveReport]) -> usize {
    reports.iter().map(|r| r.sigma.len()).max().unwrap_or(0)
}

/// One row per accepted iterate. Wall-clock time is only written when
/// `include_seconds` is set, keeping the default output reproducible.
pub fn objective_csv(reports: &[ObjectiveReport], include_seconds: bool) -> String {
    let count = max_sigma(reports);
    let mut out = String::from("level,iteration,J,sqn,reg,gradnorm");
    sigma_header(&mut out, count);
    if include_seconds {
        out.push_str(",seconds");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{},{},{:e},{:e},{:e},{:e}",
            r.level, r.iteration, r.j, r.sqn_term, r.reg_term, r.gradient_norm
        );
        sigma_row(&mut out, &r.sigma, count);
        if include_seconds {
            let _ = write!(out, ",{:.6}", r.elapsed);
        }
        out.push('\n');
    }
    out
}

/// Singular values per iterate: `level,iteration,sigma_1..`.
pub fn spectrum_csv(reports: &[ObjectiveReport]) -> String {
    let count = max_sigma(reports);
    let mut out = String::from("level,iteration");
    sigma_header(&mut out, count);
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{}", r.level, r.iteration);
        sigma_row(&mut out, &r.sigma, count);
        out.push('\n');
    }
    out
}

pub fn sweep_csv(reports: &[SweepReport], include_seconds: bool) -> String {
    let mut out = String::from("sweep,frame,level,iteration,J,data,reg,gradnorm");
    if include_seconds {
        out.push_str(",seconds");
    }
    out.push('\n');
    for s in reports {
        let r = &s.report;
        let _ = write!(
            out,
            "{},{},{},{},{:e},{:e},{:e},{:e}",
            s.sweep, s.frame, r.level, r.iteration, r.j, r.sqn_term, r.reg_term, r.gradient_norm
        );
        if include_seconds {
            let _ = write!(out, ",{:.6}", r.elapsed);
        }
        out.push('\n');
    }
    out
}

pub fn timing_csv(timing: &[LevelTiming], total_seconds: f64) -> String {
    let mut out = String::from("level,iterations,evaluations,termination,seconds\n");
    for t in timing {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:.6}",
            t.level, t.iterations, t.evaluations, t.termination, t.seconds
        );
    }
    let _ = writeln!(out, "total,,,,{total_seconds:.6}");
    out
}

pub fn sweep_timing_csv(seconds: &[f64], iterations: &[usize]) -> String {
    let mut out = String::from("sweep,iterations,seconds\n");
    for (k, (s, it)) in seconds.iter().zip(iterations).enumerate() {
        let _ = writeln!(out, "{},{},{:.6}", k + 1, it, s);
    }
    out
}

pub fn affine_csv(transforms: &[Affine]) -> String {
    let mut out = String::from("frame,a11,a12,a21,a22,b1,b2\n");
    for (t, m) in transforms.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            t, m.a[0][0], m.a[0][1], m.a[1][0], m.a[1][1], m.b[0], m.b[1]
        );
    }
    out
}

pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,frame,epe_before,epe_after\n");
    for r in reports {
        for (t, (b, a)) in r.before.per_frame.iter().zip(&r.after.per_frame).enumerate() {
            let _ = writeln!(out, "{},{},{:e},{:e}", r.method, t, b, a);
        }
        let _ = writeln!(out, "{},mean,{:e},{:e}", r.method, r.before.mean, r.after.mean);
    }
    out
}

/// One summary row per method.
pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut out =
        String::from("method,epe_before,epe_after,improvement,sqn_before,sqn_after,seconds\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:.6},{:e},{:e},{:.6}",
            r.method,
            r.before.mean,
            r.after.mean,
            r.improvement(),
            r.sqn_before,
            r.sqn_after,
            r.seconds
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(level: usize, iteration: usize, sigma: Vec<f64>) -> ObjectiveReport {
        ObjectiveReport {
            j: 1.5,
            sqn_term: 1.0,
            reg_term: 0.5,
            sigma,
            gradient_norm: 0.25,
            iteration,
            level,
            elapsed: 0.123,
        }
    }

    #[test]
    fn objective_rows_and_columns() {
        let reps = vec![report(1, 0, vec![2.0, 1.0]), report(0, 3, vec![1.0])];
        let csv = objective_csv(&reps, false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "level,iteration,J,sqn,reg,gradnorm,sigma_1,sigma_2");
        assert_eq!(lines[1], "1,0,1.5e0,1e0,5e-1,2.5e-1,2e0,1e0");
        assert_eq!(lines[2], "0,3,1.5e0,1e0,5e-1,2.5e-1,1e0,");
        assert!(objective_csv(&reps, true).lines().next().unwrap().ends_with(",seconds"));
    }

    #[test]
    fn floats_round_trip() {
        let x = 0.1 + 0.2;
        let csv = objective_csv(&[ObjectiveReport { j: x, ..report(0, 0, vec![]) }], false);
        let field = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap();
        assert_eq!(field.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn affine_rows() {
        let csv = affine_csv(&[Affine::IDENTITY, Affine::translation([1.0, -2.0])]);
        assert_eq!(csv.lines().nth(2).unwrap(), "1,1e0,0e0,0e0,1e0,1e0,-2e0");
    }
}
