//! The SqN measure: Schatten-q (quasi-)norm of the matrix whose columns are
//! the frames' normalized gradient fields.
//!
//! The spectrum is computed from the `T x T` Gram matrix `A^T A`; the left
//! singular vectors are never formed.

mod jacobi;
mod measure;

pub use jacobi::{symmetric_eigen, SymMatrix, JACOBI_TOLERANCE};
pub use measure::{sqn_value, sqn_value_and_gradient, SqnEvaluation, SqnTerm};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::dot;

pub const MAX_FRAMES: usize = 64;

/// `dn x T` matrix stored as `T` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    columns: Vec<Vec<f64>>,
}

impl GradientMatrix {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidParameter("columns differ in length".into()));
        }
        Ok(GradientMatrix { columns })
    }

    /// Builds a matrix from row-major data.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(
            (0..cols)
                .map(|c| (0..rows).map(|r| data[r * cols + c]).collect())
                .collect(),
        )
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn into_columns(self) -> Vec<Vec<f64>> {
        self.columns
    }

    /// `A * M` for a `T x T` matrix `M` (row-major).
    pub fn mul_small(&self, m: &SymMatrix) -> GradientMatrix {
        let t = self.cols();
        let rows = self.rows();
        let columns = (0..t)
            .into_par_iter()
            .map(|j| {
                let mut out = vec![0.0; rows];
                for (s, col) in self.columns.iter().enumerate() {
                    let c = m.get(s, j);
                    if c != 0.0 {
                        out.iter_mut().zip(col).for_each(|(o, a)| *o += c * a);
                    }
                }
                out
            })
            .collect();
        GradientMatrix { columns }
    }

    pub fn frobenius_squared(&self) -> f64 {
        self.columns.iter().map(|c| dot(c, c)).sum()
    }
}

/// `G = A^T A`. Each entry is a fixed-order dot product, so the result does
/// not depend on the worker count.
pub fn gram(a: &GradientMatrix) -> SymMatrix {
    let t = a.cols();
    let pairs: Vec<(usize, usize)> = (0..t).flat_map(|i| (i..t).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| dot(&a.columns[i], &a.columns[j]))
        .collect();
    let mut g = SymMatrix::zeros(t);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        g.set(i, j, v);
        g.set(j, i, v);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularSystem {
    /// `min(dn, T)` singular values, descending.
    pub sigma: Vec<f64>,
    /// `T` orthonormal right singular vectors, ordered like `gram_eigs`.
    pub right_vectors: Vec<Vec<f64>>,
    /// All `T` Gram eigenvalues, clamped at zero, descending.
    pub gram_eigs: Vec<f64>,
}

pub fn spectrum_of_gram(g: &SymMatrix, rows: usize) -> SingularSystem {
    let (vals, vecs) = symmetric_eigen(g);
    // Eigenvalues below the rounding floor of the Gram product carry no
    // information and would otherwise dominate sums of small powers.
    let floor = g.dim as f64 * f64::EPSILON * vals.first().copied().unwrap_or(0.0);
    let gram_eigs: Vec<f64> = vals.iter().map(|&l| if l > floor { l } else { 0.0 }).collect();
    let sigma = gram_eigs
        .iter()
        .take(rows.min(g.dim))
        .map(|l| l.sqrt())
        .collect();
    SingularSystem {
        sigma,
        right_vectors: vecs,
        gram_eigs,
    }
}

pub fn spectrum(a: &GradientMatrix) -> Result<SingularSystem> {
    let t = a.cols();
    if t < 2 {
        return Err(Error::InvalidParameter(format!("spectrum needs at least 2 columns, got {t}")));
    }
    if t > MAX_FRAMES {
        return Err(Error::InvalidParameter(format!(
            "at most {MAX_FRAMES} frames are supported, got {t}"
        )));
    }
    Ok(spectrum_of_gram(&gram(a), a.rows()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchattenParams {
    pub q: f64,
    pub eps: f64,
}

impl SchattenParams {
    pub fn new(q: f64, eps: f64) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must be ≥ 0, got {q}")));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be ≥ 0, got {eps}")));
        }
        Ok(SchattenParams { q, eps })
    }

    pub fn check_differentiable(&self) -> Result<()> {
        if self.q <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "q must be > 0 for gradients, got {}",
                self.q
            )));
        }
        if self.q < 2.0 && self.eps == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "q = {} < 2 requires eps > 0 for gradients",
                self.q
            )));
        }
        Ok(())
    }

    /// Derivative of the smoothed value w.r.t. one Gram eigenvalue, times 2:
    /// `q (lambda + eps^2)^((q - 2) / 2)`.
    fn weight(&self, lambda: f64) -> f64 {
        self.q * (lambda + self.eps * self.eps).powf(0.5 * self.q - 1.0)
    }
}

/// `sum_i (sigma_i^2 + eps^2)^(q/2) - eps^q`, i.e. `sum_i sigma_i^q` when
/// `eps = 0`.
pub fn schatten_q(sys: &SingularSystem, p: &SchattenParams) -> f64 {
    if p.eps == 0.0 {
        return sys.sigma.iter().map(|s| s.powf(p.q)).sum();
    }
    let eq = p.eps.powf(p.q);
    sys.sigma
        .iter()
        .map(|s| {
            let r = (s / p.eps).powi(2);
            eq * (0.5 * p.q * r.ln_1p()).exp_m1()
        })
        .sum()
}

/// Gradient of [`schatten_q`] with respect to the entries of `A`:
/// `A V diag(q (lambda_i + eps^2)^((q-2)/2)) V^T`.
pub fn schatten_q_gradient(
    a: &GradientMatrix,
    sys: &SingularSystem,
    p: &SchattenParams,
) -> Result<GradientMatrix> {
    p.check_differentiable()?;
    if p.q == 2.0 {
        return Ok(GradientMatrix {
            columns: a
                .columns
                .iter()
                .map(|c| c.iter().map(|v| 2.0 * v).collect())
                .collect(),
        });
    }
    let t = a.cols();
    let mut m = SymMatrix::zeros(t);
    for (lambda, v) in sys.gram_eigs.iter().zip(&sys.right_vectors) {
        let w = p.weight(*lambda);
        for i in 0..t {
            for j in 0..t {
                m.data[i * t + j] += w * v[i] * v[j];
            }
        }
    }
    Ok(a.mul_small(&m))
}
