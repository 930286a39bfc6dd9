//! Cell-centered 2D grids and the scalar/vector data living on them.
//!
//! Storage is row-major: axis 1 (size `m1`, spacing `h1`) is the slow index,
//! axis 2 (size `m2`, spacing `h2`) the fast one. Node `(i, j)` sits at
//! `origin + (i + 1/2, j + 1/2) * h`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub m: [usize; 2],
    pub h: [f64; 2],
    pub origin: [f64; 2],
}

impl Grid {
    pub fn new(m: [usize; 2], h: [f64; 2]) -> Result<Self> {
        Self::with_origin(m, h, [0.0, 0.0])
    }

    pub fn with_origin(m: [usize; 2], h: [f64; 2], origin: [f64; 2]) -> Result<Self> {
        if m[0] < 2 || m[1] < 2 {
            return Err(Error::InvalidGrid(format!(
                "axis sizes must be at least 2, got {}x{}",
                m[0], m[1]
            )));
        }
        if !(h[0] > 0.0 && h[1] > 0.0 && h[0].is_finite() && h[1].is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got ({}, {})",
                h[0], h[1]
            )));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Grid { m, h, origin })
    }

    /// Unit spacing, zero origin.
    pub fn unit(m1: usize, m2: usize) -> Result<Self> {
        Self::new([m1, m2], [1.0, 1.0])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m[0] * self.m[1]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.m[1] + j
    }

    /// World position of node `(i, j)`.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.h[0],
            self.origin[1] + (j as f64 + 0.5) * self.h[1],
        ]
    }

    /// Continuous (fractional) node index of a world position.
    #[inline]
    pub fn to_index(&self, x: [f64; 2]) -> [f64; 2] {
        [
            (x[0] - self.origin[0]) / self.h[0] - 0.5,
            (x[1] - self.origin[1]) / self.h[1] - 0.5,
        ]
    }

    /// Center of the domain in world coordinates.
    pub fn center(&self) -> [f64; 2] {
        [
            self.origin[0] + 0.5 * self.m[0] as f64 * self.h[0],
            self.origin[1] + 0.5 * self.m[1] as f64 * self.h[1],
        ]
    }

    /// Area of one cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1]
    }

    /// All node positions in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.m[0]).flat_map(move |i| (0..self.m[1]).map(move |j| self.node(i, j)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: Grid,
    values: Vec<f64>,
}

impl Image {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidImage(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.m[0],
                grid.m[1],
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite value at index {k}")));
        }
        Ok(Image { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Image {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> f64) -> Result<Self> {
        let values = grid.nodes().map(&mut f).collect();
        Self::new(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Applies `f` to every value; the result is re-validated.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    frames: Vec<Image>,
}

impl ImageSequence {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidImage(format!(
                "a sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let grid = *frames[0].grid();
        if let Some(t) = frames.iter().position(|f| *f.grid() != grid) {
            return Err(Error::GridMismatch(format!("frame grid mismatch at frame {t}")));
        }
        Ok(ImageSequence { frames })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.frames[0].grid()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Image {
        &self.frames[t]
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }
}

/// Two component planes on a grid: gradients, displacements, sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: [Vec<f64>; 2],
}

impl VectorField {
    pub fn new(grid: Grid, c1: Vec<f64>, c2: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if c1.len() != n || c2.len() != n {
            return Err(Error::InvalidImage(format!(
                "vector field components must have {} entries, got {} and {}",
                n,
                c1.len(),
                c2.len()
            )));
        }
        if c1.iter().chain(c2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite vector field entry".into()));
        }
        Ok(VectorField { grid, comps: [c1, c2] })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        VectorField {
            grid,
            comps: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn constant(grid: Grid, v: [f64; 2]) -> Self {
        let n = grid.len();
        VectorField {
            grid,
            comps: [vec![v[0]; n], vec![v[1]; n]],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> Result<Self> {
        let n = grid.len();
        let mut c1 = Vec::with_capacity(n);
        let mut c2 = Vec::with_capacity(n);
        for x in grid.nodes() {
            let v = f(x);
            c1.push(v[0]);
            c2.push(v[1]);
        }
        Self::new(grid, c1, c2)
    }

    /// Builds a field from the concatenation `[c1 | c2]`.
    pub fn from_flat(grid: Grid, flat: &[f64]) -> Result<Self> {
        let n = grid.len();
        if flat.len() != 2 * n {
            return Err(Error::InvalidImage(format!(
                "flat field must have {} entries, got {}",
                2 * n,
                flat.len()
            )));
        }
        Self::new(grid, flat[..n].to_vec(), flat[n..].to_vec())
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn component(&self, k: usize) -> &[f64] {
        &self.comps[k]
    }

    #[inline]
    pub fn component_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.comps[k]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 2] {
        [self.comps[0][idx], self.comps[1][idx]]
    }

    pub fn into_components(self) -> [Vec<f64>; 2] {
        self.comps
    }

    /// Concatenation `[c1 | c2]`, length `2n`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.grid.len());
        out.extend_from_slice(&self.comps[0]);
        out.extend_from_slice(&self.comps[1]);
        out
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.comps[0]
            .iter()
            .zip(&self.comps[1])
            .map(|(a, b)| a.hypot(*b))
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        dot(&self.comps[0], &other.comps[0]) + dot(&self.comps[1], &other.comps[1])
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            comps: [
                self.comps[0].iter().map(|v| v * c).collect(),
                self.comps[1].iter().map(|v| v * c).collect(),
            ],
        }
    }

    /// `self + c * other`
    pub fn axpy(&mut self, c: f64, other: &VectorField) {
        for k in 0..2 {
            for (a, b) in self.comps[k].iter_mut().zip(&other.comps[k]) {
                *a += c * b;
            }
        }
    }
}

/// Fixed-order dot product.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
