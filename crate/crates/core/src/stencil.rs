//! Finite-difference gradient on cell-centered grids and its adjoint.
//!
//! Central differences at interior nodes, one-sided differences at the
//! first and last node of each axis. The operator is linear, so the
//! adjoint is a plain scatter of the same coefficients.

use crate::image::{Grid, Image, VectorField};

/// Gradient of an image; component `k` is scaled by `1 / h_k`.
pub fn gradient(image: &Image) -> VectorField {
    let grid = *image.grid();
    let (g1, g2) = gradient_raw(&grid, image.values());
    VectorField::new(grid, g1, g2).expect("finite differences of finite values are finite")
}

pub(crate) fn gradient_raw(grid: &Grid, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let [m1, m2] = grid.m;
    let n = grid.len();
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let (s1, s2) = (1.0 / grid.h[0], 1.0 / grid.h[1]);
    for i in 0..m1 {
        for j in 0..m2 {
            let k = i * m2 + j;
            g1[k] = if i == 0 {
                (v[k + m2] - v[k]) * s1
            } else if i == m1 - 1 {
                (v[k] - v[k - m2]) * s1
            } else {
                0.5 * (v[k + m2] - v[k - m2]) * s1
            };
            g2[k] = if j == 0 {
                (v[k + 1] - v[k]) * s2
            } else if j == m2 - 1 {
                (v[k] - v[k - 1]) * s2
            } else {
                0.5 * (v[k + 1] - v[k - 1]) * s2
            };
        }
    }
    (g1, g2)
}

/// Adjoint of [`gradient`] with respect to the Euclidean inner products on
/// values and on stacked components: `<grad v, w> = <v, grad^T w>`.
pub fn gradient_adjoint(grid: &Grid, w1: &[f64], w2: &[f64]) -> Vec<f64> {
    let [m1, m2] = grid.m;
    let mut out = vec![0.0; grid.len()];
    let (s1, s2) = (1.0 / grid.h[0], 1.0 / grid.h[1]);
    for i in 0..m1 {
        for j in 0..m2 {
            let k = i * m2 + j;
            let a = w1[k] * s1;
            if i == 0 {
                out[k + m2] += a;
                out[k] -= a;
            } else if i == m1 - 1 {
                out[k] += a;
                out[k - m2] -= a;
            } else {
                out[k + m2] += 0.5 * a;
                out[k - m2] -= 0.5 * a;
            }
            let b = w2[k] * s2;
            if j == 0 {
                out[k + 1] += b;
                out[k] -= b;
            } else if j == m2 - 1 {
                out[k] += b;
                out[k - 1] -= b;
            } else {
                out[k + 1] += 0.5 * b;
                out[k - 1] -= 0.5 * b;
            }
        }
    }
    out
}
