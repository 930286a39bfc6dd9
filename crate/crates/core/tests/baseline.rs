mod common;

use common::*;
use seqreg::baseline::{sequential_register, PairwiseSimilarity, SweepConfig};
use seqreg::{Grid, Image};

fn pattern(grid: Grid, shift: [f64; 2]) -> Image {
    let c = grid.center();
    Image::from_fn(grid, |x| {
        let (a, b) = (x[0] - shift[0] - c[0], x[1] - shift[1] - c[1]);
        0.5 + 0.25 * (-(a * a + b * b) / 60.0).exp() + 0.1 * (0.35 * a).sin() * (0.3 * b).cos()
    })
    .unwrap()
}

#[test]
fn identical_frames_are_left_alone() {
    let grid = Grid::unit(32, 32).unwrap();
    let f = smooth_image(grid, 0.2);
    for similarity in [PairwiseSimilarity::L2, PairwiseSimilarity::Ngf] {
        let cfg = SweepConfig { similarity, max_sweeps: 2, sweep_endpoints: true, ..SweepConfig::default() };
        let res = sequential_register(&sequence(vec![f.clone(); 4]), &cfg).unwrap();
        assert!(res.stack.max_norm() < 1e-6, "{similarity:?}: {}", res.stack.max_norm());
    }
}

fn middle_frame_case(similarity: PairwiseSimilarity, gain: f64) {
    let grid = Grid::unit(48, 48).unwrap();
    let shift = [2.0, 0.0];
    let moved = pattern(grid, shift).map(|v| gain * v).unwrap();
    let seq = sequence(vec![pattern(grid, [0.0; 2]), moved, pattern(grid, [0.0; 2])]);
    let cfg = SweepConfig { similarity, max_sweeps: 3, ..SweepConfig::default() };
    let res = sequential_register(&seq, &cfg).unwrap();
    assert!(res.reports.iter().all(|r| r.sweep < 3 && r.frame == 1));
    assert!(res.sweep_seconds.len() <= 3);
    let fields = res.stack.fields();
    assert!(fields[0].to_flat().iter().chain(fields[2].to_flat().iter()).all(|v| *v == 0.0));
    // away from the clamped border the middle frame must be pulled back by the shift
    let (m1, m2) = (grid.m[0], grid.m[1]);
    let mut worst: f64 = 0.0;
    for i in 8..m1 - 8 {
        for j in 8..m2 - 8 {
            let k = i * m2 + j;
            let e0 = fields[1].component(0)[k] - shift[0];
            let e1 = fields[1].component(1)[k] - shift[1];
            worst = worst.max(e0.hypot(e1));
        }
    }
    assert!(worst < 0.3, "{similarity:?}: worst interior error {worst} cells");
}

#[test]
fn l2_sweeps_recover_a_translated_middle_frame() {
    middle_frame_case(PairwiseSimilarity::L2, 1.0);
}

#[test]
fn ngf_sweeps_recover_a_translated_and_rescaled_middle_frame() {
    middle_frame_case(PairwiseSimilarity::Ngf, 1.25);
}

#[test]
fn sweep_reports_cover_each_interior_frame() {
    let grid = Grid::unit(32, 32).unwrap();
    let seq = sequence((0..5).map(|k| pattern(grid, [0.3 * k as f64, -0.2 * k as f64])).collect());
    let cfg = SweepConfig { max_sweeps: 2, threshold: 0.0, ..SweepConfig::default() };
    let res = sequential_register(&seq, &cfg).unwrap();
    let mut frames: Vec<(usize, usize)> = res.reports.iter().map(|r| (r.sweep, r.frame)).collect();
    frames.dedup();
    assert_eq!(frames, vec![(0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3)]);
    assert_eq!(res.sweep_seconds.len(), 2);
    assert_eq!(res.sweep_iterations.len(), 2);
}
