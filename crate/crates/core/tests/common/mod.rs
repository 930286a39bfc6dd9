//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqreg::deform::DeformationStack;
use seqreg::{Grid, Image, ImageSequence, VectorField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..cols)
        .map(|_| (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Singular values of the matrix with the given columns by one-sided
/// (Hestenes) Jacobi: rotate column pairs until all are mutually
/// orthogonal; the column norms are then the singular values. Works on A
/// itself, never on its Gram matrix. Descending order.
pub fn one_sided_jacobi_svd(columns: &[Vec<f64>]) -> Vec<f64> {
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let t = a.len();
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..t {
            for q in p + 1..t {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let tan = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + tan * tan).sqrt();
                let s = c * tan;
                let (lo, hi) = a.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    sigma.sort_by(|x, y| y.total_cmp(x));
    sigma
}

/// Random `t x t` orthogonal matrix as columns (Gram-Schmidt, applied twice).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, t: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < t {
        let mut v: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &q {
                let d = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-3 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

/// Columns of `A Z` for `A` given by columns and `Z` by columns.
pub fn times(a: &[Vec<f64>], z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter()
        .map(|zc| {
            let mut out = vec![0.0; a[0].len()];
            for (col, w) in a.iter().zip(zc) {
                out.iter_mut().zip(col).for_each(|(o, x)| *o += w * x);
            }
            out
        })
        .collect()
}

/// Worst relative mismatch between `grad` and central differences of `f`
/// at the given coordinates. The denominator is floored at 1e-3 of the
/// gradient's max entry so vanishing components do not dominate.
pub fn fd_worst(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], coords: &[usize], h: f64) -> f64 {
    let floor = 1e-3 * grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for &i in coords {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let denom = grad[i].abs().max(fd.abs()).max(floor).max(f64::MIN_POSITIVE);
        worst = worst.max((grad[i] - fd).abs() / denom);
    }
    worst
}

pub fn sample_coords(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, len, count.min(len)).into_vec()
}

/// Smooth textured test image, different per `phase`.
pub fn smooth_image(grid: Grid, phase: f64) -> Image {
    let c = grid.center();
    Image::from_fn(grid, |x| {
        let (a, b) = (x[0] - c[0], x[1] - c[1]);
        0.5 + 0.2 * (0.45 * a + phase).sin() * (0.38 * b - 0.5 * phase).cos()
            + 0.15 * (-(a * a + b * b) / 30.0).exp()
            + 0.05 * (0.7 * b + 0.3 * a).sin()
    })
    .unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, grid: Grid, amplitude: f64) -> VectorField {
    let n = grid.len();
    VectorField::new(
        grid,
        (0..n).map(|_| rng.gen_range(-amplitude..amplitude)).collect(),
        (0..n).map(|_| rng.gen_range(-amplitude..amplitude)).collect(),
    )
    .unwrap()
}

/// Smooth random displacement: a few low-frequency modes.
pub fn smooth_field(rng: &mut ChaCha8Rng, grid: Grid, amplitude: f64) -> VectorField {
    let k: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (l1, l2) = (grid.m[0] as f64 * grid.h[0], grid.m[1] as f64 * grid.h[1]);
    VectorField::from_fn(grid, |x| {
        let (s, t) = (std::f64::consts::PI * x[0] / l1, std::f64::consts::PI * x[1] / l2);
        [
            amplitude * (k[0] * s.sin() * t.cos() + k[1] * (2.0 * t).sin() + k[2] * (s + t).cos()) / 3.0,
            amplitude * (k[3] * s.cos() * t.sin() + k[4] * (2.0 * s).sin() + k[5] * (s - t).sin()) / 3.0,
        ]
    })
    .unwrap()
}

pub fn sequence(frames: Vec<Image>) -> ImageSequence {
    ImageSequence::new(frames).unwrap()
}

pub fn stack(fields: Vec<VectorField>) -> DeformationStack {
    DeformationStack::new(fields).unwrap()
}
