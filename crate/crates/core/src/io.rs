//! File formats: binary PGM frames, stack manifests, and SQNF vector fields.
//!
//! SQNF layout (little-endian): `b"SQNF"`, `u32 m1`, `u32 m2`,
//! `u32 components`, `f32 h1`, `f32 h2` (24-byte header), then
//! `components` planes of `m1 * m2` `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Grid, Image, ImageSequence, VectorField};

pub const FIELD_MAGIC: &[u8; 4] = b"SQNF";
pub const FIELD_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

impl BitDepth {
    fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Header tokenizer for netpbm: whitespace separated, `#` comments to end
/// of line.
struct HeaderCursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn token(&mut self) -> Option<&[u8]> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.data.len() && self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.data[start..self.pos])
    }

    fn number(&mut self) -> Option<u32> {
        std::str::from_utf8(self.token()?).ok()?.parse().ok()
    }
}

/// Parses a binary PGM. Intensities are divided by maxval; spacing is unit.
pub fn decode_pgm(data: &[u8], path: &Path) -> Result<Image> {
    let mut cur = HeaderCursor { data, pos: 0 };
    if cur.token() != Some(b"P5".as_slice()) {
        return Err(Error::parse(path, "bad magic, expected binary PGM 'P5'"));
    }
    let width = cur.number().ok_or_else(|| Error::parse(path, "bad width"))? as usize;
    let height = cur.number().ok_or_else(|| Error::parse(path, "bad height"))? as usize;
    let maxval = cur.number().ok_or_else(|| Error::parse(path, "bad maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(path, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = cur.pos + 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    if data.len() < start + need {
        return Err(Error::parse(
            path,
            format!("truncated raster: need {need} bytes, have {}", data.len().saturating_sub(start)),
        ));
    }
    let raster = &data[start..start + need];
    let scale = 1.0 / maxval as f64;
    let values: Vec<f64> = if bps == 1 {
        raster.iter().map(|&b| b as f64 * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    let grid = Grid::unit(height, width).map_err(|e| Error::parse(path, e.to_string()))?;
    Image::new(grid, values).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn encode_pgm(image: &Image, depth: BitDepth) -> Vec<u8> {
    let [m1, m2] = image.grid().m;
    let maxval = depth.maxval();
    let mut out = format!("P5\n{m2} {m1}\n{maxval}\n").into_bytes();
    for &v in image.values() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_pgm(&read_bytes(path)?, path)
}

/// Writes intensities clamped to `[0, 1]` and scaled by the depth's maxval.
pub fn write_pgm(image: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm(image, depth))
}

/// Reads a stack manifest: a `spacing h1 h2` header line followed by one
/// frame path per line, relative to the manifest's directory. Blank lines
/// and `#` comments are skipped.
pub fn read_stack(manifest: impl AsRef<Path>) -> Result<ImageSequence> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(manifest, "empty manifest"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let spacing = match parts.as_slice() {
        ["spacing", a, b] => match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(a), Ok(b)) => [a, b],
            _ => return Err(Error::parse(manifest, format!("bad spacing line '{header}'"))),
        },
        _ => {
            return Err(Error::parse(
                manifest,
                format!("expected 'spacing h1 h2' header, got '{header}'"),
            ))
        }
    };
    let mut frames = Vec::new();
    let mut first: Option<(PathBuf, [usize; 2])> = None;
    for rel in lines {
        let path = base.join(rel);
        let img = read_pgm(&path)?;
        let m = img.grid().m;
        match &first {
            None => first = Some((path.clone(), m)),
            Some((p0, m0)) if *m0 != m => {
                return Err(Error::parse(
                    &path,
                    format!(
                        "frame grid mismatch: {}x{} vs {}x{} in {}",
                        m[0],
                        m[1],
                        m0[0],
                        m0[1],
                        p0.display()
                    ),
                ))
            }
            _ => {}
        }
        let grid = Grid::new(m, spacing).map_err(|e| Error::parse(manifest, e.to_string()))?;
        frames.push(Image::new(grid, img.into_values())?);
    }
    ImageSequence::new(frames).map_err(|e| Error::parse(manifest, e.to_string()))
}

/// Writes `frame_000.pgm, ...` next to a manifest file and returns the
/// manifest path.
pub fn write_stack(seq: &ImageSequence, dir: impl AsRef<Path>, depth: BitDepth) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let h = seq.grid().h;
    let mut manifest = format!("spacing {} {}\n", h[0], h[1]);
    for (t, frame) in seq.frames().iter().enumerate() {
        let name = format!("frame_{t:03}.pgm");
        write_pgm(frame, dir.join(&name), depth)?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    let path = dir.join("manifest");
    write_bytes(&path, manifest.as_bytes())?;
    Ok(path)
}

pub fn encode_field(field: &VectorField) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 8 * g.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(g.m[0] as u32).to_le_bytes());
    out.extend_from_slice(&(g.m[1] as u32).to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(g.h[0] as f32).to_le_bytes());
    out.extend_from_slice(&(g.h[1] as f32).to_le_bytes());
    for k in 0..2 {
        for &v in field.component(k) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_field(data: &[u8], path: &Path) -> Result<VectorField> {
    if data.len() < FIELD_HEADER_LEN {
        return Err(Error::parse(path, "truncated field header"));
    }
    if &data[..4] != FIELD_MAGIC {
        return Err(Error::parse(path, "bad magic, expected 'SQNF'"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(data[o..o + 4].try_into().expect("4 bytes"));
    let f32_at = |o: usize| f32::from_le_bytes(data[o..o + 4].try_into().expect("4 bytes"));
    let (m1, m2, comps) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12));
    if comps != 2 {
        return Err(Error::parse(path, format!("expected 2 components, header says {comps}")));
    }
    let grid = Grid::new([m1, m2], [f32_at(16) as f64, f32_at(20) as f64])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let n = grid.len();
    if data.len() != FIELD_HEADER_LEN + 8 * n {
        return Err(Error::parse(
            path,
            format!(
                "size mismatch: header implies {} bytes, file has {}",
                FIELD_HEADER_LEN + 8 * n,
                data.len()
            ),
        ));
    }
    let plane = |k: usize| -> Vec<f64> {
        data[FIELD_HEADER_LEN + 4 * n * k..FIELD_HEADER_LEN + 4 * n * (k + 1)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    };
    VectorField::new(grid, plane(0), plane(1)).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_field(field: &VectorField, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_field(field))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<VectorField> {
    let path = path.as_ref();
    decode_field(&read_bytes(path)?, path)
}

/// All `*.sqnf` files in `dir`, sorted by file name.
pub fn read_field_dir(dir: impl AsRef<Path>) -> Result<Vec<VectorField>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "sqnf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::parse(dir, "no .sqnf field files found"));
    }
    paths.iter().map(read_field).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pgm_16bit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::unit(13, 17).unwrap();
        let vals = (0..grid.len())
            .map(|_| rng.gen_range(0..=65535u32) as f64 / 65535.0)
            .collect();
        let img = Image::new(grid, vals).unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm(&img, &p, BitDepth::Sixteen).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), img);
    }

    #[test]
    fn pgm_8bit_quantizes() {
        let grid = Grid::unit(2, 3).unwrap();
        let img = Image::new(grid, vec![0.0, 0.1, 0.5, 0.9, 1.0, 0.333]).unwrap();
        let back = decode_pgm(&encode_pgm(&img, BitDepth::Eight), Path::new("x")).unwrap();
        for (a, b) in back.values().iter().zip(img.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut data = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        data.extend_from_slice(&[0, 255, 51, 102]);
        let img = decode_pgm(&data, Path::new("c.pgm")).unwrap();
        assert_eq!(img.grid().m, [2, 2]);
        assert_eq!(img.values(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn pgm_errors_name_the_file() {
        let err = decode_pgm(b"P2\n2 2\n255\n....", Path::new("bad.pgm")).unwrap_err();
        assert!(err.to_string().contains("bad.pgm"));
        let err = decode_pgm(b"P5\n4 4\n255\n..", Path::new("short.pgm")).unwrap_err();
        assert!(err.to_string().contains("short.pgm"));
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn manifest_with_mixed_sizes_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(&Image::constant(Grid::unit(4, 4).unwrap(), 0.5), dir.path().join("a.pgm"), BitDepth::Eight).unwrap();
        write_pgm(&Image::constant(Grid::unit(4, 5).unwrap(), 0.5), dir.path().join("b.pgm"), BitDepth::Eight).unwrap();
        let m = dir.path().join("manifest");
        fs::write(&m, "spacing 1 1\na.pgm\nb.pgm\n").unwrap();
        let err = read_stack(&m).unwrap_err().to_string();
        assert!(err.contains("frame grid mismatch"), "{err}");
        assert!(err.contains("b.pgm"), "{err}");
    }

    #[test]
    fn stack_round_trip_keeps_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new([6, 5], [0.5, 2.0]).unwrap();
        let f0 = Image::from_fn(grid, |x| x[0] / 3.0).unwrap();
        let f1 = Image::from_fn(grid, |x| x[1] / 10.0).unwrap();
        let seq = ImageSequence::new(vec![f0, f1]).unwrap();
        let m = write_stack(&seq, dir.path(), BitDepth::Sixteen).unwrap();
        let back = read_stack(&m).unwrap();
        assert_eq!(back.grid(), seq.grid());
        for (a, b) in back.frames().iter().zip(seq.frames()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-15);
            }
        }
    }

    #[test]
    fn field_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = Grid::new([32, 32], [0.5, 0.25]).unwrap();
        let c: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..grid.len()).map(|_| rng.gen_range(-5.0f32..5.0) as f64).collect())
            .collect();
        let field = VectorField::new(grid, c[0].clone(), c[1].clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.sqnf");
        write_field(&field, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"SQNF");
        assert_eq!(bytes.len(), FIELD_HEADER_LEN + 8 * 1024);
        let back = read_field(&p).unwrap();
        assert_eq!(back.grid(), &grid);
        for k in 0..2 {
            for (a, b) in back.component(k).iter().zip(field.component(k)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn field_rejects_bad_magic_and_size() {
        let grid = Grid::unit(4, 4).unwrap();
        let mut bytes = encode_field(&VectorField::zeros(grid));
        let p = Path::new("f.sqnf");
        assert!(decode_field(&bytes[..bytes.len() - 4], p).unwrap_err().to_string().contains("size mismatch"));
        bytes[0] = b'X';
        assert!(decode_field(&bytes, p).unwrap_err().to_string().contains("bad magic"));
    }
}
