//! Multilevel support: 2x2 block-average restriction and bilinear
//! prolongation.

use crate::error::{Error, Result};
use crate::image::{Grid, Image, VectorField};
use crate::interp::{sample_raw, Scheme};

/// Grid with each axis halved (rounded up) and spacing doubled. Cell
/// centers of the coarse grid coincide with 2x2 block centers.
pub fn coarse_grid(grid: &Grid) -> Result<Grid> {
    if grid.m[0] < 4 || grid.m[1] < 4 {
        return Err(Error::InvalidGrid(format!(
            "cannot restrict a {}x{} grid, need at least 4 per axis",
            grid.m[0], grid.m[1]
        )));
    }
    Grid::with_origin(
        [grid.m[0].div_ceil(2), grid.m[1].div_ceil(2)],
        [2.0 * grid.h[0], 2.0 * grid.h[1]],
        grid.origin,
    )
}

fn restrict_plane(fine: &Grid, coarse: &Grid, v: &[f64]) -> Vec<f64> {
    let [m1, m2] = fine.m;
    let mut out = Vec::with_capacity(coarse.len());
    for ci in 0..coarse.m[0] {
        for cj in 0..coarse.m[1] {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for i in (2 * ci)..(2 * ci + 2).min(m1) {
                for j in (2 * cj)..(2 * cj + 2).min(m2) {
                    acc += v[i * m2 + j];
                    cnt += 1.0;
                }
            }
            out.push(acc / cnt);
        }
    }
    out
}

/// Block averages over 2x2 cells (partial blocks at odd edges average the
/// cells they contain).
pub fn restrict(image: &Image) -> Result<Image> {
    let coarse = coarse_grid(image.grid())?;
    Image::new(coarse, restrict_plane(image.grid(), &coarse, image.values()))
}

pub fn restrict_field(field: &VectorField) -> Result<VectorField> {
    let coarse = coarse_grid(field.grid())?;
    VectorField::new(
        coarse,
        restrict_plane(field.grid(), &coarse, field.component(0)),
        restrict_plane(field.grid(), &coarse, field.component(1)),
    )
}

/// Bilinear interpolation of a coarse field at the nodes of `fine`.
pub fn prolong(field: &VectorField, fine: &Grid) -> Result<VectorField> {
    let coarse = field.grid();
    let mut c1 = Vec::with_capacity(fine.len());
    let mut c2 = Vec::with_capacity(fine.len());
    for x in fine.nodes() {
        c1.push(sample_raw(coarse, field.component(0), x, Scheme::Linear).0);
        c2.push(sample_raw(coarse, field.component(1), x, Scheme::Linear).0);
    }
    VectorField::new(*fine, c1, c2)
}

/// Finest-first list of `levels` images.
pub fn image_pyramid(image: &Image, levels: usize) -> Result<Vec<Image>> {
    let mut out = vec![image.clone()];
    for _ in 1..levels {
        let next = restrict(out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}
