//! Curvature-regularizer preconditioning for L-BFGS.
//!
//! The Neumann Laplacian on a cell-centered grid is diagonal in the DCT-II
//! basis, so `(alpha h1 h2 Lap^2 + mu I)^{-1}` is applied exactly with two
//! separable transforms.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::lbfgs::Preconditioner;
use crate::deform::laplacian_raw;
use crate::image::Grid;

#[derive(Clone)]
pub struct CurvaturePreconditioner {
    grid: Grid,
    weight: f64,
    /// Squared Laplacian eigenvalue per DCT mode, row-major like the grid.
    lap2: Vec<f64>,
    rows: Dct,
    cols: Dct,
}

/// Unnormalized DCT-II `X_k = sum_n x_n cos(pi k (2n+1) / 2N)` and its
/// inverse, through one complex FFT of length `N`. Every method transforms
/// each consecutive length-`N` chunk of its input.
#[derive(Clone)]
struct Dct {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `exp(-i pi k / 2N)`.
    twiddle: Vec<Complex<f64>>,
}

#[derive(Default)]
struct Buffers {
    data: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Dct {
    fn new(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        let twiddle = (0..n)
            .map(|k| Complex::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2.0 * n as f64)))
            .collect();
        Dct {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            twiddle,
        }
    }

    fn run(fft: &dyn Fft<f64>, bufs: &mut Buffers) {
        let need = fft.get_inplace_scratch_len();
        if bufs.scratch.len() < need {
            bufs.scratch.resize(need, Complex::new(0.0, 0.0));
        }
        fft.process_with_scratch(&mut bufs.data, &mut bufs.scratch[..need]);
    }

    fn dct2(&self, x: &mut [f64], bufs: &mut Buffers) {
        let n = self.n;
        bufs.data.clear();
        for src in x.chunks(n) {
            bufs.data.extend(src.iter().step_by(2).map(|&v| Complex::new(v, 0.0)));
            bufs.data.extend(src.iter().skip(1).step_by(2).rev().map(|&v| Complex::new(v, 0.0)));
        }
        Self::run(self.forward.as_ref(), bufs);
        for (dst, src) in x.chunks_mut(n).zip(bufs.data.chunks(n)) {
            for k in 0..n {
                let (v, t) = (src[k], self.twiddle[k]);
                dst[k] = v.re * t.re - v.im * t.im;
            }
        }
    }

    fn idct2(&self, x: &mut [f64], bufs: &mut Buffers) {
        let n = self.n;
        bufs.data.clear();
        bufs.data.reserve(x.len());
        for src in x.chunks(n) {
            bufs.data.push(Complex::new(src[0], 0.0));
            let tail = src[1..].iter().zip(src[1..].iter().rev());
            bufs.data.extend(tail.zip(&self.twiddle[1..]).map(|((&a, &b), t)| Complex::new(a, -b) * t.conj()));
        }
        Self::run(self.inverse.as_ref(), bufs);
        let s = 1.0 / n as f64;
        for (dst, src) in x.chunks_mut(n).zip(bufs.data.chunks(n)) {
            for i in 0..n.div_ceil(2) {
                dst[2 * i] = src[i].re * s;
            }
            for i in 0..n / 2 {
                dst[2 * i + 1] = src[n - 1 - i].re * s;
            }
        }
    }
}

impl CurvaturePreconditioner {
    /// For the Hessian of `S` with regularizer weight `alpha` on `grid`.
    pub fn new(grid: Grid, alpha: f64) -> Self {
        let [m1, m2] = grid.m;
        let axis = |m: usize, h: f64| -> Vec<f64> {
            (0..m)
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / (2.0 * m as f64)).sin();
                    4.0 * s * s / (h * h)
                })
                .collect()
        };
        let (l1, l2) = (axis(m1, grid.h[0]), axis(m2, grid.h[1]));
        let lap2 = (0..m1)
            .flat_map(|i| {
                let a = l1[i];
                l2.iter().map(move |b| (a + b) * (a + b))
            })
            .collect();
        let mut planner = FftPlanner::new();
        CurvaturePreconditioner {
            grid,
            weight: alpha * grid.cell_volume(),
            lap2,
            rows: Dct::new(&mut planner, m2),
            cols: Dct::new(&mut planner, m1),
        }
    }

    /// Separable 2D transform of every grid-sized block of `v`.
    fn transform(&self, v: &mut [f64], inverse: bool) {
        let [m1, m2] = self.grid.m;
        let n = m1 * m2;
        let mut bufs = Buffers::default();
        let apply = |dct: &Dct, x: &mut [f64], bufs: &mut Buffers| {
            if inverse {
                dct.idct2(x, bufs)
            } else {
                dct.dct2(x, bufs)
            }
        };
        apply(&self.rows, v, &mut bufs);
        let mut t = vec![0.0; v.len()];
        for (src, dst) in v.chunks(n).zip(t.chunks_mut(n)) {
            for i in 0..m1 {
                for j in 0..m2 {
                    dst[j * m1 + i] = src[i * m2 + j];
                }
            }
        }
        apply(&self.cols, &mut t, &mut bufs);
        for (dst, src) in v.chunks_mut(n).zip(t.chunks(n)) {
            for i in 0..m1 {
                for j in 0..m2 {
                    dst[i * m2 + j] = src[j * m1 + i];
                }
            }
        }
    }
}

impl Preconditioner for CurvaturePreconditioner {
    fn quadratic_form(&self, v: &[f64]) -> f64 {
        let n = self.grid.len();
        v.chunks(n)
            .map(|block| laplacian_raw(&self.grid, block).iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            * self.weight
    }

    fn solve_shifted(&self, v: &mut [f64], mu: f64) {
        self.transform(v, false);
        for block in v.chunks_mut(self.grid.len()) {
            for (x, l) in block.iter_mut().zip(&self.lap2) {
                *x /= self.weight * l + mu;
            }
        }
        self.transform(v, true);
    }
}
