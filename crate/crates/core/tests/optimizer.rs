mod common;

use common::*;
use seqreg::deform::DeformationStack;
use seqreg::eval::endpoint_error;
use seqreg::interp::Scheme;
use seqreg::ngf::{estimate_theta, Normalization};
use seqreg::optim::{evaluate_objective, multilevel_register, project_drift, GroupwiseObjective, SolverConfig};
use seqreg::report::objective_csv;
use seqreg::sqn::{SchattenParams, SqnTerm};
use seqreg::synth::{generate, SynthSpec};
use seqreg::{Grid, Image, VectorField};

fn frames(grid: Grid, t: usize) -> Vec<Image> {
    (0..t).map(|k| smooth_image(grid, 0.5 * k as f64)).collect()
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    let grid = Grid::unit(16, 16).unwrap();
    let t = 3;
    let fr = frames(grid, t);
    let thetas: Vec<f64> = fr.iter().map(|f| estimate_theta(std::slice::from_ref(f))).collect();
    let mut r = rng(30);
    let u = stack((0..t).map(|_| random_field(&mut r, grid, 0.4)).collect());
    let probe = SqnTerm::new(&fr, thetas.clone(), Normalization::NodeWise, SchattenParams::new(0.5, 0.0).unwrap(), Scheme::Cubic).unwrap();
    let sigma1 = probe.value(u.fields()).unwrap().sigma[0];
    let term = SqnTerm::new(&fr, thetas, Normalization::NodeWise, SchattenParams::new(0.5, 1e-2 * sigma1).unwrap(), Scheme::Cubic).unwrap();
    let obj = GroupwiseObjective::new(term, 1.0);
    let (report, grad) = obj.evaluate(&u).unwrap();
    assert!((report.j - (report.sqn_term + report.reg_term)).abs() <= 1e-12 * report.j.abs());
    let x = u.to_flat();
    let g = grad.to_flat();
    let f = |x: &[f64]| obj.evaluate(&DeformationStack::from_flat(grid, t, x).unwrap()).unwrap().0.j;
    let coords = sample_coords(&mut r, x.len(), 30);
    let worst = fd_worst(f, &x, &g, &coords, 1e-6);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn zero_displacement_objective_is_the_data_term() {
    let grid = Grid::unit(16, 16).unwrap();
    let seq = sequence(frames(grid, 3));
    let (report, _) = evaluate_objective(&seq, &DeformationStack::zeros(grid, 3), &SolverConfig::default()).unwrap();
    assert_eq!(report.reg_term, 0.0);
    assert!(report.sqn_term > 0.0);

    let flat = sequence(vec![Image::constant(grid, 0.2), Image::constant(grid, 0.6), Image::constant(grid, 0.4)]);
    let (report, grad) = evaluate_objective(&flat, &DeformationStack::zeros(grid, 3), &SolverConfig::default()).unwrap();
    assert_eq!(report.j, 0.0);
    assert!(grad.to_flat().iter().all(|v| *v == 0.0));
}

#[test]
fn drift_projection_examples() {
    let grid = Grid::unit(8, 6).unwrap();
    let mut r = rng(31);
    let common = random_field(&mut r, grid, 1.0);
    let same = project_drift(&stack(vec![common.clone(); 3]));
    assert!(same.to_flat().iter().all(|v| v.abs() < 1e-15));

    let opposite = stack(vec![common.clone(), common.scaled(-1.0)]);
    assert_eq!(project_drift(&opposite).to_flat(), opposite.to_flat());

    let s = stack((0..4).map(|_| random_field(&mut r, grid, 2.0)).collect());
    let p = project_drift(&s);
    let n2 = 2 * grid.len();
    let flat = p.to_flat();
    for k in 0..n2 {
        let mean: f64 = (0..4).map(|t| flat[t * n2 + k]).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-14);
    }
    let again = project_drift(&p).to_flat();
    assert!(again.iter().zip(&flat).all(|(a, b)| (a - b).abs() < 1e-14));
}

#[test]
fn constant_drift_leaves_interior_sqn_unchanged() {
    let grid = Grid::unit(40, 40).unwrap();
    let c = grid.center();
    // content vanishes well inside the border, so integer shifts only relabel nodes
    let blob = |phase: f64| {
        Image::from_fn(grid, move |x| {
            let (a, b) = (x[0] - c[0], x[1] - c[1]);
            let r2 = a * a + b * b;
            (-r2 / 18.0).exp() * (1.0 + 0.3 * (0.6 * a + phase).sin() * (0.4 * b).cos())
        })
        .unwrap()
    };
    let fr = vec![blob(0.0), blob(0.7), blob(1.4)];
    let offsets = [[0.3, -0.2], [-0.5, 0.45], [0.2, -0.25]];
    let drift = [2.0, -3.0];
    let gauge: Vec<VectorField> = offsets.iter().map(|o| VectorField::constant(grid, *o)).collect();
    let drifted: Vec<VectorField> = offsets
        .iter()
        .map(|o| VectorField::constant(grid, [o[0] + drift[0], o[1] + drift[1]]))
        .collect();
    let projected = project_drift(&stack(drifted.clone()));
    for (a, b) in projected.fields().iter().zip(&gauge) {
        assert!(a.to_flat().iter().zip(b.to_flat()).all(|(x, y)| (x - y).abs() < 1e-14));
    }
    let term = SqnTerm::new(&fr, vec![0.02; 3], Normalization::NodeWise, SchattenParams::new(0.5, 0.0).unwrap(), Scheme::Cubic).unwrap();
    let before = term.value(&drifted).unwrap().value;
    let after = term.value(projected.fields()).unwrap().value;
    assert!((before - after).abs() < 1e-8, "{before} vs {after}");
}

#[test]
fn already_aligned_stack_stays_put() {
    let grid = Grid::unit(48, 48).unwrap();
    let base = smooth_image(grid, 0.3);
    let fr: Vec<Image> = [0.8, 1.0, 1.2, 0.9].iter().map(|g| base.map(|v| g * v).unwrap()).collect();
    let res = multilevel_register(&sequence(fr), &SolverConfig::default()).unwrap();
    assert!(res.stack.max_norm() < 0.1, "max displacement {}", res.stack.max_norm());
}

fn assert_monotone(reports: &[seqreg::optim::ObjectiveReport]) {
    for w in reports.windows(2) {
        if w[0].level == w[1].level {
            assert!(w[1].j <= w[0].j, "J rose from {} to {} at level {}", w[0].j, w[1].j, w[1].level);
            assert_eq!(w[1].iteration, w[0].iteration + 1);
        }
    }
    for r in reports {
        assert!((r.j - (r.sqn_term + r.reg_term)).abs() <= 1e-12 * r.j.abs().max(1.0));
    }
}

#[test]
fn four_frame_recovery() {
    let spec = SynthSpec { frames: 4, ..SynthSpec::default() };
    let out = generate(&spec).unwrap();
    let res = multilevel_register(&out.sequence, &SolverConfig::default()).unwrap();
    assert_monotone(&res.reports);
    let zeros = DeformationStack::zeros(*out.sequence.grid(), 4);
    let before = endpoint_error(&zeros, &out.ground_truth).unwrap().mean;
    let after = endpoint_error(&res.stack, &out.ground_truth).unwrap().mean;
    let reduction = 1.0 - after / before;
    assert!(reduction >= 0.70, "endpoint error {before} -> {after} ({:.1}%)", 100.0 * reduction);
    assert_eq!(res.timing.len(), SolverConfig::default().levels);
}

#[test]
fn reports_do_not_depend_on_the_thread_budget() {
    let spec = SynthSpec { frames: 5, size: [32, 32], ..SynthSpec::default() };
    let seq = generate(&spec).unwrap().sequence;
    let run = |threads| {
        let cfg = SolverConfig { threads, levels: 3, max_iterations: 20, ..SolverConfig::default() };
        let res = multilevel_register(&seq, &cfg).unwrap();
        (objective_csv(&res.reports, false), res.stack.to_flat())
    };
    let (a, ua) = run(1);
    let (b, ub) = run(4);
    assert_eq!(a, b);
    assert_eq!(ua, ub);
}

#[test]
fn invalid_configurations_are_refused() {
    let grid = Grid::unit(32, 32).unwrap();
    let seq = sequence(frames(grid, 3));
    for cfg in [
        SolverConfig { q: -1.0, ..SolverConfig::default() },
        SolverConfig { q: 0.0, ..SolverConfig::default() },
        SolverConfig { alpha: 0.0, ..SolverConfig::default() },
        SolverConfig { levels: 5, ..SolverConfig::default() },
    ] {
        assert!(multilevel_register(&seq, &cfg).is_err(), "{cfg:?}");
    }
}
