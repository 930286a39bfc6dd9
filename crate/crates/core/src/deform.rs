//! Deformations `y = id + u`, the curvature regularizer, and affine maps.

use crate::error::{Error, Result};
use crate::image::{Grid, VectorField};

/// One displacement field per frame on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationStack {
    fields: Vec<VectorField>,
}

impl DeformationStack {
    pub fn new(fields: Vec<VectorField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidParameter("empty deformation stack".into()));
        }
        let g = *fields[0].grid();
        if let Some(t) = fields.iter().position(|f| *f.grid() != g) {
            return Err(Error::GridMismatch(format!("displacement grid mismatch at frame {t}")));
        }
        Ok(DeformationStack { fields })
    }

    pub fn zeros(grid: Grid, frames: usize) -> Self {
        DeformationStack {
            fields: vec![VectorField::zeros(grid); frames],
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    #[inline]
    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn fields_mut(&mut self) -> &mut [VectorField] {
        &mut self.fields
    }

    pub fn into_fields(self) -> Vec<VectorField> {
        self.fields
    }

    /// Frames concatenated, each as `[c1 | c2]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.fields.len() * 2 * self.grid().len());
        for f in &self.fields {
            out.extend_from_slice(f.component(0));
            out.extend_from_slice(f.component(1));
        }
        out
    }

    pub fn from_flat(grid: Grid, frames: usize, flat: &[f64]) -> Result<Self> {
        let per = 2 * grid.len();
        if flat.len() != per * frames {
            return Err(Error::InvalidParameter(format!(
                "flat stack must have {} entries, got {}",
                per * frames,
                flat.len()
            )));
        }
        Self::new(
            flat.chunks_exact(per)
                .map(|c| VectorField::from_flat(grid, c))
                .collect::<Result<_>>()?,
        )
    }

    /// Largest displacement length over all frames and nodes.
    pub fn max_norm(&self) -> f64 {
        self.fields.iter().map(VectorField::max_norm).fold(0.0, f64::max)
    }

    /// Subtracts the node-wise mean over frames from every frame.
    pub fn project_drift(&self) -> DeformationStack {
        let n = self.grid().len();
        let t = self.fields.len() as f64;
        let mut out = self.fields.clone();
        for k in 0..2 {
            for idx in 0..n {
                let mean = self.fields.iter().map(|f| f.component(k)[idx]).sum::<f64>() / t;
                for f in out.iter_mut() {
                    f.component_mut(k)[idx] -= mean;
                }
            }
        }
        DeformationStack { fields: out }
    }
}

/// Discrete Laplacian with zero-flux boundaries (mirrored ghost nodes). The
/// matrix is symmetric.
pub(crate) fn laplacian_raw(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let [m1, m2] = grid.m;
    let (c1, c2) = (1.0 / (grid.h[0] * grid.h[0]), 1.0 / (grid.h[1] * grid.h[1]));
    let mut out = vec![0.0; grid.len()];
    for i in 0..m1 {
        let row = &u[i * m2..(i + 1) * m2];
        let o = &mut out[i * m2..(i + 1) * m2];
        // along axis 2, mirrored ends contribute nothing
        o[0] = (row[1] - row[0]) * c2;
        for j in 1..m2 - 1 {
            o[j] = (row[j - 1] - 2.0 * row[j] + row[j + 1]) * c2;
        }
        o[m2 - 1] = (row[m2 - 2] - row[m2 - 1]) * c2;
        if i > 0 {
            let up = &u[(i - 1) * m2..i * m2];
            for j in 0..m2 {
                o[j] += (up[j] - row[j]) * c1;
            }
        }
        if i + 1 < m1 {
            let down = &u[(i + 1) * m2..(i + 2) * m2];
            for j in 0..m2 {
                o[j] += (down[j] - row[j]) * c1;
            }
        }
    }
    out
}

/// `S(u) = alpha/2 * h1 h2 * sum |Lap u|^2` and its gradient
/// `alpha * h1 h2 * Lap^T Lap u`.
pub fn curvature_value_and_gradient(u: &VectorField, alpha: f64) -> Result<(f64, VectorField)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
    }
    let grid = *u.grid();
    let w = alpha * grid.cell_volume();
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(2);
    for k in 0..2 {
        let l = laplacian_raw(&grid, u.component(k));
        value += 0.5 * w * l.iter().map(|v| v * v).sum::<f64>();
        grads.push(laplacian_raw(&grid, &l).into_iter().map(|v| w * v).collect::<Vec<_>>());
    }
    let c2 = grads.pop().expect("two components");
    let c1 = grads.pop().expect("two components");
    Ok((value, VectorField::new(grid, c1, c2)?))
}

/// `x -> A x + b` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Default for Affine {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        a: [[1.0, 0.0], [0.0, 1.0]],
        b: [0.0, 0.0],
    };

    pub fn new(a: [[f64; 2]; 2], b: [f64; 2]) -> Result<Self> {
        let m = Affine { a, b };
        if !(m.det() > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "affine matrix must preserve orientation, det = {}",
                m.det()
            )));
        }
        Ok(m)
    }

    pub fn translation(b: [f64; 2]) -> Self {
        Affine { b, ..Self::IDENTITY }
    }

    /// Rotation by `angle` (radians) about `center`, then translation by `t`.
    pub fn rigid(angle: f64, center: [f64; 2], t: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let a = [[c, -s], [s, c]];
        let ac = [a[0][0] * center[0] + a[0][1] * center[1], a[1][0] * center[0] + a[1][1] * center[1]];
        Affine {
            a,
            b: [center[0] - ac[0] + t[0], center[1] - ac[1] + t[1]],
        }
    }

    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    #[inline]
    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0],
            self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1],
        ]
    }

    /// `self ∘ inner`, i.e. `x -> self(inner(x))`.
    pub fn after(&self, inner: &Affine) -> Affine {
        let a = &self.a;
        let i = &inner.a;
        Affine {
            a: [
                [a[0][0] * i[0][0] + a[0][1] * i[1][0], a[0][0] * i[0][1] + a[0][1] * i[1][1]],
                [a[1][0] * i[0][0] + a[1][1] * i[1][0], a[1][0] * i[0][1] + a[1][1] * i[1][1]],
            ],
            b: self.apply(inner.b),
        }
    }

    /// Displacement of the map at every node: `A x + b - x`.
    pub fn displacement(&self, grid: &Grid) -> VectorField {
        VectorField::from_fn(*grid, |x| {
            let y = self.apply(x);
            [y[0] - x[0], y[1] - x[1]]
        })
        .expect("affine displacements of finite nodes are finite")
    }

    /// Rotation angle of the closest rotation (polar part), radians.
    pub fn angle(&self) -> f64 {
        (self.a[1][0] - self.a[0][1]).atan2(self.a[0][0] + self.a[1][1])
    }
}

/// Per-frame affine parameters.
pub type AffineParams = Vec<Affine>;

/// Total map `y(x) = A x + b + u(x)` expressed as one displacement.
pub fn compose_displacement(affine: &Affine, u: &VectorField) -> VectorField {
    let mut out = affine.displacement(u.grid());
    out.axpy(1.0, u);
    out
}
