//! Image interpolation with clamp-to-edge extension, warping, and the
//! analytic spatial derivatives of the interpolant.

use crate::error::{Error, Result};
use crate::image::{Grid, Image, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    Linear,
    /// Catmull-Rom cubic convolution; C1 and reproduces linear data.
    #[default]
    Cubic,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Scheme::Linear),
            "cubic" => Ok(Scheme::Cubic),
            other => Err(format!("unknown interpolation scheme '{other}'")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Linear => "linear",
            Scheme::Cubic => "cubic",
        })
    }
}

/// Per-axis stencil: clamped node indices, weights, and weight derivatives
/// (w.r.t. the fractional index; zero where the coordinate was clamped).
struct Axis<const N: usize> {
    idx: [usize; N],
    w: [f64; N],
    dw: [f64; N],
}

/// Clamped coordinate, its integer cell, fraction, and whether it was clamped.
#[inline]
fn locate(s: f64, m: usize) -> (usize, f64, bool) {
    let hi = (m - 1) as f64;
    let clamped = !(0.0..=hi).contains(&s);
    let s = s.clamp(0.0, hi);
    // truncation equals floor for s >= 0
    let i0 = (s as usize).min(m - 2);
    (i0, s - i0 as f64, clamped)
}

impl Axis<2> {
    #[inline]
    fn linear(s: f64, m: usize) -> Self {
        let (i0, f, clamped) = locate(s, m);
        let d = if clamped { 0.0 } else { 1.0 };
        Axis {
            idx: [i0, i0 + 1],
            w: [1.0 - f, f],
            dw: [-d, d],
        }
    }
}

impl Axis<4> {
    #[inline]
    fn cubic(s: f64, m: usize) -> Self {
        let (i0, f, clamped) = locate(s, m);
        let f2 = f * f;
        let f3 = f2 * f;
        let w = [
            -0.5 * f3 + f2 - 0.5 * f,
            1.5 * f3 - 2.5 * f2 + 1.0,
            -1.5 * f3 + 2.0 * f2 + 0.5 * f,
            0.5 * f3 - 0.5 * f2,
        ];
        let dw = if clamped {
            [0.0; 4]
        } else {
            [
                -1.5 * f2 + 2.0 * f - 0.5,
                4.5 * f2 - 5.0 * f,
                -4.5 * f2 + 4.0 * f + 0.5,
                1.5 * f2 - f,
            ]
        };
        let last = m - 1;
        Axis {
            idx: [i0.saturating_sub(1), i0, i0 + 1, (i0 + 2).min(last)],
            w,
            dw,
        }
    }
}

#[inline]
fn combine<const N: usize>(v: &[f64], m2: usize, ax: &Axis<N>, ay: &Axis<N>) -> (f64, f64, f64) {
    let mut val = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for a in 0..N {
        let row = &v[ax.idx[a] * m2..(ax.idx[a] + 1) * m2];
        let mut r = 0.0;
        let mut dr = 0.0;
        for b in 0..N {
            let p = row[ay.idx[b]];
            r += ay.w[b] * p;
            dr += ay.dw[b] * p;
        }
        val += ax.w[a] * r;
        d1 += ax.dw[a] * r;
        d2 += ax.w[a] * dr;
    }
    (val, d1, d2)
}

/// Cubic sample whose 4x4 stencil lies inside the grid.
#[inline]
fn cubic_interior(v: &[f64], m2: usize, s: [f64; 2]) -> (f64, f64, f64) {
    let weights = |f: f64| {
        let f2 = f * f;
        let f3 = f2 * f;
        (
            [-0.5 * f3 + f2 - 0.5 * f, 1.5 * f3 - 2.5 * f2 + 1.0, -1.5 * f3 + 2.0 * f2 + 0.5 * f, 0.5 * f3 - 0.5 * f2],
            [-1.5 * f2 + 2.0 * f - 0.5, 4.5 * f2 - 5.0 * f, -4.5 * f2 + 4.0 * f + 0.5, 1.5 * f2 - f],
        )
    };
    let (i0, j0) = (s[0] as usize, s[1] as usize);
    let (wx, dwx) = weights(s[0] - i0 as f64);
    let (wy, dwy) = weights(s[1] - j0 as f64);
    let base = (i0 - 1) * m2 + j0 - 1;
    let block = &v[base..base + 3 * m2 + 4];
    let (mut val, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for a in 0..4 {
        let row: &[f64; 4] = block[a * m2..a * m2 + 4].try_into().unwrap();
        let mut r = 0.0;
        let mut dr = 0.0;
        for b in 0..4 {
            r += wy[b] * row[b];
            dr += dwy[b] * row[b];
        }
        val += wx[a] * r;
        d1 += dwx[a] * r;
        d2 += wx[a] * dr;
    }
    (val, d1, d2)
}

/// Value and index-space gradient at continuous index `s`.
#[inline]
fn sample_index(m: [usize; 2], v: &[f64], s: [f64; 2], scheme: Scheme) -> (f64, f64, f64) {
    let [m1, m2] = m;
    if scheme == Scheme::Cubic && s[0] >= 1.0 && s[1] >= 1.0 && s[0] < (m1 - 2) as f64 && s[1] < (m2 - 2) as f64 {
        return cubic_interior(v, m2, s);
    }
    match scheme {
        Scheme::Linear => combine(v, m2, &Axis::linear(s[0], m1), &Axis::linear(s[1], m2)),
        Scheme::Cubic => combine(v, m2, &Axis::cubic(s[0], m1), &Axis::cubic(s[1], m2)),
    }
}

/// Value and world-space gradient of the interpolant at world position `x`.
pub(crate) fn sample_raw(grid: &Grid, v: &[f64], x: [f64; 2], scheme: Scheme) -> (f64, [f64; 2]) {
    let (val, d1, d2) = sample_index(grid.m, v, grid.to_index(x), scheme);
    (val, [d1 / grid.h[0], d2 / grid.h[1]])
}

pub fn sample(image: &Image, x: [f64; 2], scheme: Scheme) -> f64 {
    sample_raw(image.grid(), image.values(), x, scheme).0
}

/// Values and spatial derivatives of the interpolant at arbitrary world
/// points.
pub fn interpolate_with_jacobian(
    image: &Image,
    points: &[[f64; 2]],
    scheme: Scheme,
) -> (Vec<f64>, Vec<[f64; 2]>) {
    points
        .iter()
        .map(|&x| sample_raw(image.grid(), image.values(), x, scheme))
        .unzip()
}

fn check_same_grid(image: &Image, displacement: &VectorField) -> Result<()> {
    if image.grid() != displacement.grid() {
        return Err(Error::GridMismatch(
            "displacement grid differs from image grid".into(),
        ));
    }
    Ok(())
}

/// `output(x) = image(x + u(x))` at every node.
pub fn warp(image: &Image, displacement: &VectorField, scheme: Scheme) -> Result<Image> {
    Ok(warp_with_jacobian(image, displacement, scheme)?.0)
}

/// Warped image plus the derivative of the interpolant at each displaced
/// node, i.e. the sensitivity of each output value to its displacement.
pub fn warp_with_jacobian(
    image: &Image,
    displacement: &VectorField,
    scheme: Scheme,
) -> Result<(Image, VectorField)> {
    check_same_grid(image, displacement)?;
    let grid = *image.grid();
    let n = grid.len();
    let mut out = Vec::with_capacity(n);
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    let (u1, u2) = (displacement.component(0), displacement.component(1));
    let [m1, m2] = grid.m;
    let inv = [1.0 / grid.h[0], 1.0 / grid.h[1]];
    // node (i, j) displaced by u sits at continuous index (i + u1/h1, j + u2/h2)
    for i in 0..m1 {
        for j in 0..m2 {
            let k = i * m2 + j;
            let s = [i as f64 + u1[k] * inv[0], j as f64 + u2[k] * inv[1]];
            let (v, a, b) = sample_index(grid.m, image.values(), s, scheme);
            out.push(v);
            d1.push(a * inv[0]);
            d2.push(b * inv[1]);
        }
    }
    Ok((Image::new(grid, out)?, VectorField::new(grid, d1, d2)?))
}
