//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails. Runs without the libtest harness so the lines are
//! always visible.

mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use seqreg::baseline::{sequential_register, SequentialResult, SweepConfig};
use seqreg::deform::{curvature_value_and_gradient, DeformationStack};
use seqreg::eval::{endpoint_error, EvalReport};
use seqreg::interp::{warp, Scheme};
use seqreg::ngf::{estimate_theta, normalize_gradient, normalize_gradient_jacobian_apply, NgfParams, Normalization};
use seqreg::optim::{multilevel_register, GroupwiseObjective, ObjectiveReport, RegistrationResult, SolverConfig};
use seqreg::report::{comparison_csv, objective_csv};
use seqreg::sqn::{gram, schatten_q, schatten_q_gradient, spectrum, sqn_value, GradientMatrix, SchattenParams, SqnTerm};
use seqreg::synth::{generate, SynthOutput, SynthSpec};
use seqreg::{Grid, ImageSequence, VectorField};

type Outcome = (bool, String);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn matrix(cols: Vec<Vec<f64>>) -> GradientMatrix {
    GradientMatrix::new(cols).unwrap()
}

fn single_threaded() -> SolverConfig {
    SolverConfig { threads: 1, ..SolverConfig::default() }
}

fn recovery(out: &SynthOutput, est: &DeformationStack) -> f64 {
    let zeros = DeformationStack::zeros(*out.sequence.grid(), out.sequence.len());
    let before = endpoint_error(&zeros, &out.ground_truth).unwrap().mean;
    let after = endpoint_error(est, &out.ground_truth).unwrap().mean;
    1.0 - after / before
}

fn warped(seq: &ImageSequence, stack: &DeformationStack) -> ImageSequence {
    sequence(
        seq.frames()
            .iter()
            .zip(stack.fields())
            .map(|(f, u)| warp(f, u, Scheme::Cubic).unwrap())
            .collect(),
    )
}

/// J never rises between consecutive accepted iterates of one solve.
fn monotone(reports: &[ObjectiveReport]) -> bool {
    reports
        .windows(2)
        .all(|w| w[0].level != w[1].level || w[1].iteration <= w[0].iteration || w[1].j <= w[0].j)
}

fn monotone_sweeps(res: &SequentialResult) -> bool {
    res.reports.windows(2).all(|w| {
        let same = w[0].sweep == w[1].sweep && w[0].frame == w[1].frame && w[0].report.level == w[1].report.level;
        !same || w[1].report.j <= w[0].report.j
    })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let (mut worst2, mut worst1) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let rows = r.gen_range(8..=64);
        let t = r.gen_range(2..=8);
        let cols = random_columns(&mut r, rows, t);
        let sys = spectrum(&matrix(cols.clone())).unwrap();
        let squares: f64 = cols.iter().flatten().map(|v| v * v).sum();
        worst2 = worst2.max(rel(schatten_q(&sys, &SchattenParams::new(2.0, 0.0).unwrap()), squares));
        let nuclear: f64 = one_sided_jacobi_svd(&cols).iter().sum();
        worst1 = worst1.max(rel(schatten_q(&sys, &SchattenParams::new(1.0, 0.0).unwrap()), nuclear));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst2 < 1e-10 && worst1 < 1e-8 && secs < 5.0,
        format!("q=2 vs sum of squares {worst2:.1e}, q=1 vs oracle {worst1:.1e}, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut r = rng(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let rows = r.gen_range(16..=256);
        let t = r.gen_range(2..=8);
        let cols = random_columns(&mut r, rows, t);
        let sigma = spectrum(&matrix(cols.clone())).unwrap().sigma;
        for (a, b) in sigma.iter().zip(one_sided_jacobi_svd(&cols)) {
            worst = worst.max(rel(*a, b));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst < 1e-8 && secs < 5.0, format!("worst relative error {worst:.1e}, {secs:.2} s"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut r = rng(103);
    let n_coords = 30;

    // (a) Schatten value through the spectrum
    let (rows, t) = (40, 4);
    let cols = random_columns(&mut r, rows, t);
    let p = SchattenParams::new(0.5, 1e-2).unwrap();
    let a = matrix(cols.clone());
    let g: Vec<f64> = schatten_q_gradient(&a, &spectrum(&a).unwrap(), &p).unwrap().into_columns().concat();
    let x: Vec<f64> = cols.concat();
    let f = |x: &[f64]| schatten_q(&spectrum(&matrix(x.chunks(rows).map(<[f64]>::to_vec).collect())).unwrap(), &p);
    let coords = sample_coords(&mut r, x.len(), n_coords);
    let ea = fd_worst(f, &x, &g, &coords, 1e-6);

    // (b) NGF Jacobian, through the scalar <w, eta(g)>
    let grid = Grid::unit(16, 16).unwrap();
    let gf = random_field(&mut r, grid, 1.0);
    let w = random_field(&mut r, grid, 1.0);
    let theta = 0.1;
    let g = normalize_gradient_jacobian_apply(&gf, theta, &w).unwrap().to_flat();
    let x = gf.to_flat();
    let f = |x: &[f64]| w.dot(&normalize_gradient(&VectorField::from_flat(grid, x).unwrap(), theta).unwrap().field);
    let coords = sample_coords(&mut r, x.len(), n_coords);
    let eb = fd_worst(f, &x, &g, &coords, 1e-6);

    // (c) curvature regularizer
    let u = random_field(&mut r, grid, 1.0);
    let g = curvature_value_and_gradient(&u, 0.7).unwrap().1.to_flat();
    let x = u.to_flat();
    let f = |x: &[f64]| curvature_value_and_gradient(&VectorField::from_flat(grid, x).unwrap(), 0.7).unwrap().0;
    let coords = sample_coords(&mut r, x.len(), n_coords);
    let ec = fd_worst(f, &x, &g, &coords, 1e-4);

    // (d) full objective with a fixed smoothing
    let t = 4;
    let frames: Vec<_> = (0..t).map(|k| smooth_image(grid, 0.5 * k as f64)).collect();
    let thetas: Vec<f64> = frames.iter().map(|f| estimate_theta(std::slice::from_ref(f))).collect();
    let u = stack((0..t).map(|_| random_field(&mut r, grid, 0.4)).collect());
    let term = |eps| SqnTerm::new(&frames, thetas.clone(), Normalization::NodeWise, SchattenParams::new(0.5, eps).unwrap(), Scheme::Cubic).unwrap();
    let sigma1 = term(0.0).value(u.fields()).unwrap().sigma[0];
    let obj = GroupwiseObjective::new(term(1e-2 * sigma1), 1.0);
    let g = obj.evaluate(&u).unwrap().1.to_flat();
    let x = u.to_flat();
    let f = |x: &[f64]| obj.evaluate(&DeformationStack::from_flat(grid, t, x).unwrap()).unwrap().0.j;
    let coords = sample_coords(&mut r, x.len(), n_coords);
    let ed = fd_worst(f, &x, &g, &coords, 1e-6);

    let secs = start.elapsed().as_secs_f64();
    let worst = ea.max(eb).max(ec).max(ed);
    (
        worst < 1e-4 && secs < 60.0,
        format!("schatten {ea:.1e}, ngf {eb:.1e}, curvature {ec:.1e}, J {ed:.1e} on {n_coords} coordinates each, {secs:.2} s"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let grid = Grid::unit(32, 32).unwrap();
    let t = 5;
    let q = 0.5;
    let frames = vec![smooth_image(grid, 0.8); t];
    let theta = estimate_theta(&frames);
    let term = SqnTerm::new(&frames, vec![theta; t], Normalization::NodeWise, SchattenParams::new(q, 0.0).unwrap(), Scheme::Cubic).unwrap();
    let zeros = vec![VectorField::zeros(grid); t];
    let eta2: f64 = term.matrix(&zeros).unwrap().columns()[0].iter().map(|v| v * v).sum();
    let ev = term.value(&zeros).unwrap();
    let tail = ev.sigma[1..].iter().fold(0.0f64, |m, s| m.max(*s)) / ev.sigma[0];
    let err = rel(ev.value, (t as f64 * eta2).powf(q / 2.0));
    let secs = start.elapsed().as_secs_f64();
    (
        tail < 1e-8 && err < 1e-8 && secs < 5.0,
        format!("sigma_2..5 / sigma_1 <= {tail:.1e}, SqN vs (T |eta|^2)^(q/2) {err:.1e}, {secs:.2} s"),
    )
}

/// Everything later criteria reuse from the default run.
struct DefaultRun {
    out: SynthOutput,
    result: RegistrationResult,
    recovery: f64,
}

fn criterion_5() -> (Outcome, DefaultRun) {
    let out = generate(&SynthSpec::default()).unwrap();
    let start = Instant::now();
    let result = multilevel_register(&out.sequence, &single_threaded()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let recovery = recovery(&out, &result.stack);
    (
        (
            recovery >= 0.70 && secs < 300.0,
            format!("endpoint error reduced by {:.1}%, {secs:.2} s single-threaded", 100.0 * recovery),
        ),
        DefaultRun { out, result, recovery },
    )
}

fn criterion_6(run: &DefaultRun, sweep_runs: &mut Vec<SequentialResult>, sqn_runs: &mut Vec<RegistrationResult>) -> Outcome {
    let seq = &run.out.sequence;
    let cfg = single_threaded();
    let sweeps = SweepConfig { max_sweeps: 6, threshold: 0.0, solver: cfg.clone(), ..SweepConfig::default() };
    // interleaved repeats, best of each, so one noisy run cannot decide the outcome
    let (mut t_sqn, mut t_seq) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..3 {
        let start = Instant::now();
        let res = multilevel_register(seq, &cfg).unwrap();
        t_sqn = t_sqn.min(start.elapsed().as_secs_f64());
        sqn_runs.push(res);
        let start = Instant::now();
        let res = sequential_register(seq, &sweeps).unwrap();
        t_seq = t_seq.min(start.elapsed().as_secs_f64());
        sweep_runs.push(res);
    }
    let done_sweeps = sweep_runs.last().map_or(0, |r| r.sweep_seconds.len());

    let p = SchattenParams::new(cfg.q, 0.0).unwrap();
    let ngf = NgfParams { mode: cfg.theta_mode, ..NgfParams::new(1.0).unwrap() };
    let zeros = DeformationStack::zeros(*seq.grid(), seq.len());
    let sqn_before = sqn_value(seq, &ngf, &p).unwrap().value;
    let entry = |method: &str, est: &DeformationStack, seconds| EvalReport {
        method: method.into(),
        before: endpoint_error(&zeros, &run.out.ground_truth).unwrap(),
        after: endpoint_error(est, &run.out.ground_truth).unwrap(),
        sqn_before,
        sqn_after: sqn_value(&warped(seq, est), &ngf, &p).unwrap().value,
        seconds,
    };
    let csv = comparison_csv(&[
        entry("sqn", &run.result.stack, t_sqn),
        entry("sequential-l2", &sweep_runs.last().unwrap().stack, t_seq),
    ]);
    let timed_rows = csv
        .lines()
        .skip(1)
        .filter(|l| l.rsplit(',').next().and_then(|s| s.parse::<f64>().ok()).is_some_and(|s| s > 0.0))
        .count();

    // Gram cost when T doubles at a fixed grid
    let rows = 2 * seq.grid().len();
    let mut r = rng(106);
    let gram_time = |t: usize, r: &mut _| {
        let a = matrix(random_columns(r, rows, t));
        cfg.in_pool(|| {
            let mut best = f64::INFINITY;
            for _ in 0..30 {
                let start = Instant::now();
                std::hint::black_box(gram(std::hint::black_box(&a)));
                best = best.min(start.elapsed().as_secs_f64());
            }
            best
        })
        .unwrap()
    };
    let g8 = gram_time(8, &mut r);
    let g16 = gram_time(16, &mut r);
    let growth = g16 / g8;

    (
        t_sqn < t_seq && done_sweeps == 6 && timed_rows == 2 && growth <= 4.5,
        format!(
            "SqN solve {t_sqn:.2} s vs {done_sweeps} L2 sweeps {t_seq:.2} s ({:.1}x), comparison rows with timings {timed_rows}, Gram time T=8 -> 16 grows {growth:.2}x",
            t_seq / t_sqn
        ),
    )
}

fn criterion_7(run: &DefaultRun, sqn_runs: &mut Vec<RegistrationResult>) -> Outcome {
    let mut r = rng(107);
    let grid = Grid::unit(32, 32).unwrap();
    let g = random_field(&mut r, grid, 1.0);
    let theta = 0.05;
    let base = normalize_gradient(&g, theta).unwrap().field.to_flat();
    let mut worst = 0.0f64;
    for c in [1e-3, 0.37, 2.5, 1e3] {
        let scaled = normalize_gradient(&g.scaled(c), c * theta).unwrap().field.to_flat();
        worst = worst.max(base.iter().zip(&scaled).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
    }

    let wide = generate(&SynthSpec { gain_range: [0.5, 1.5], ..SynthSpec::default() }).unwrap();
    let res = multilevel_register(&wide.sequence, &single_threaded()).unwrap();
    let wide_recovery = recovery(&wide, &res.stack);
    sqn_runs.push(res);
    let drop = 100.0 * (run.recovery - wide_recovery);
    (
        worst < 1e-14 && drop < 10.0,
        format!(
            "eta under joint scaling {worst:.1e}, recovery {:.1}% at gains [0.7, 1.3] vs {:.1}% at [0.5, 1.5] ({drop:.1} points)",
            100.0 * run.recovery,
            100.0 * wide_recovery
        ),
    )
}

fn criterion_8(run: &DefaultRun, sqn_runs: &[RegistrationResult], sweep_runs: &[SequentialResult]) -> Outcome {
    let all_sqn = std::iter::once(&run.result).chain(sqn_runs);
    let sqn_ok = all_sqn.clone().all(|r| monotone(&r.reports));
    let sweeps_ok = sweep_runs.iter().all(monotone_sweeps);
    let four = multilevel_register(&run.out.sequence, &SolverConfig { threads: 4, ..single_threaded() }).unwrap();
    let identical = objective_csv(&run.result.reports, false) == objective_csv(&four.reports, false)
        && run.result.stack.to_flat() == four.stack.to_flat();
    let solves = all_sqn.count() + 1;
    (
        sqn_ok && sweeps_ok && monotone(&four.reports) && identical,
        format!(
            "J non-increasing in {solves} groupwise solves and {} sweep runs: {}, threads 1 vs 4 reports identical: {identical}",
            sweep_runs.len(),
            sqn_ok && sweeps_ok
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "schatten identities", criterion_1()),
        (2, "spectrum vs direct SVD", criterion_2()),
        (3, "gradients vs finite differences", criterion_3()),
        (4, "rank collapse", criterion_4()),
    ];
    let (c5, run) = criterion_5();
    results.push((5, "synthetic recovery", c5));
    let mut sweep_runs = Vec::new();
    let mut sqn_runs = Vec::new();
    results.push((6, "runtime comparison", criterion_6(&run, &mut sweep_runs, &mut sqn_runs)));
    results.push((7, "intensity robustness", criterion_7(&run, &mut sqn_runs)));
    results.push((8, "optimizer contract", criterion_8(&run, &sqn_runs, &sweep_runs)));

    let mut failed = 0;
    for (k, name, (ok, detail)) in &results {
        println!("criterion {k} {}: {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
