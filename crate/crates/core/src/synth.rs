//! Synthetic stacks with known deformations: an analytic template, warped
//! per frame by affine jitter plus Gaussian bumps, then intensity-modulated
//! (`gain * I + offset`, clamped to `[0, 1]`) and corrupted by noise.
//!
//! The ground-truth field of frame `t` is the displacement that registers it
//! back to the template: `frame_t(x + u_t(x)) = template(x)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::deform::{Affine, DeformationStack};
use crate::error::{Error, Result};
use crate::image::{Grid, Image, ImageSequence, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemplateKind {
    SheppLike,
    #[default]
    Blobs,
    GridTexture,
}

impl std::str::FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "shepp-like" | "shepp" => Ok(TemplateKind::SheppLike),
            "blobs" => Ok(TemplateKind::Blobs),
            "grid-texture" => Ok(TemplateKind::GridTexture),
            other => Err(format!("unknown template kind '{other}'")),
        }
    }
}

impl std::fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TemplateKind::SheppLike => "shepp-like",
            TemplateKind::Blobs => "blobs",
            TemplateKind::GridTexture => "grid-texture",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub template: TemplateKind,
    pub frames: usize,
    pub size: [usize; 2],
    pub spacing: [f64; 2],
    /// Largest displacement from the affine part at the domain border, cells.
    pub affine_jitter: f64,
    pub bump_count: usize,
    /// Largest displacement of the bump part, cells.
    pub bump_amplitude: f64,
    /// Gaussian width of each bump, cells.
    pub bump_width: f64,
    pub gain_range: [f64; 2],
    pub offset_range: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            template: TemplateKind::Blobs,
            frames: 8,
            size: [64, 64],
            spacing: [1.0, 1.0],
            affine_jitter: 0.0,
            bump_count: 4,
            bump_amplitude: 3.0,
            bump_width: 10.0,
            gain_range: [0.7, 1.3],
            offset_range: [-0.05, 0.05],
            noise_sigma: 0.002,
            seed: 1,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "template",
    "frames",
    "size",
    "spacing",
    "affine_jitter",
    "bump_count",
    "bump_amplitude",
    "bump_width",
    "gain_range",
    "offset_range",
    "noise_sigma",
    "seed",
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.frames < 2 {
            return bad("frames must be ≥ 2");
        }
        if self.size[0] < 2 || self.size[1] < 2 {
            return bad("size must be at least 2 per axis");
        }
        if !(self.spacing[0] > 0.0 && self.spacing[1] > 0.0) {
            return bad("spacing must be > 0");
        }
        if !(self.affine_jitter >= 0.0 && self.bump_amplitude >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("amplitudes must be ≥ 0");
        }
        if !(self.bump_width > 0.0) {
            return bad("bump_width must be > 0");
        }
        if !(self.gain_range[0] <= self.gain_range[1] && self.offset_range[0] <= self.offset_range[1]) {
            return bad("ranges must be ordered low, high");
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(path, format!("line {}: {m}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number '{v}' for {key}")));
            let pair = |v: &str| -> Result<[f64; 2]> {
                let parts: Vec<&str> = v.split_whitespace().collect();
                match parts.as_slice() {
                    [a, b] => Ok([num(a)?, num(b)?]),
                    _ => Err(err(format!("{key} needs two numbers"))),
                }
            };
            let uint = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad integer '{v}' for {key}")));
            match key {
                "template" => spec.template = value.parse().map_err(err)?,
                "frames" => spec.frames = uint(value)?,
                "size" => {
                    let p = pair(value)?;
                    spec.size = [p[0] as usize, p[1] as usize];
                }
                "spacing" => spec.spacing = pair(value)?,
                "affine_jitter" => spec.affine_jitter = num(value)?,
                "bump_count" => spec.bump_count = uint(value)?,
                "bump_amplitude" => spec.bump_amplitude = num(value)?,
                "bump_width" => spec.bump_width = num(value)?,
                "gain_range" => spec.gain_range = pair(value)?,
                "offset_range" => spec.offset_range = pair(value)?,
                "noise_sigma" => spec.noise_sigma = num(value)?,
                "seed" => spec.seed = value.parse().map_err(|_| err(format!("bad seed '{value}'")))?,
                other => {
                    return Err(err(format!(
                        "unknown key '{other}' (known: {})",
                        SPEC_KEYS.join(", ")
                    )))
                }
            }
        }
        spec.validate().map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        format!(
            "template = {}\nframes = {}\nsize = {} {}\nspacing = {} {}\naffine_jitter = {}\n\
             bump_count = {}\nbump_amplitude = {}\nbump_width = {}\ngain_range = {} {}\n\
             offset_range = {} {}\nnoise_sigma = {}\nseed = {}\n",
            self.template,
            self.frames,
            self.size[0],
            self.size[1],
            self.spacing[0],
            self.spacing[1],
            self.affine_jitter,
            self.bump_count,
            self.bump_amplitude,
            self.bump_width,
            self.gain_range[0],
            self.gain_range[1],
            self.offset_range[0],
            self.offset_range[1],
            self.noise_sigma,
            self.seed
        )
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.size, self.spacing)
    }
}

/// Independent ChaCha stream per purpose so frames can be generated in any
/// order.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const TEMPLATE_STREAM: u64 = 0;

fn recipe_stream(frame: usize) -> u64 {
    1 + 3 * frame as u64
}

fn intensity_stream(frame: usize) -> u64 {
    2 + 3 * frame as u64
}

fn noise_stream(frame: usize) -> u64 {
    3 + 3 * frame as u64
}

#[derive(Debug, Clone)]
enum Feature {
    Ellipse {
        center: [f64; 2],
        axes: [f64; 2],
        angle: f64,
        value: f64,
    },
    Blob {
        center: [f64; 2],
        width: f64,
        value: f64,
    },
    Wave {
        k: [f64; 2],
        phase: f64,
        value: f64,
    },
}

/// Analytic template, evaluable at any world point.
#[derive(Debug, Clone)]
pub struct Template {
    features: Vec<Feature>,
    base: f64,
    scale: f64,
    soft: f64,
}

impl Template {
    pub fn new(kind: TemplateKind, grid: &Grid, seed: u64) -> Self {
        let mut rng = stream(seed, TEMPLATE_STREAM);
        let ext = [grid.m[0] as f64 * grid.h[0], grid.m[1] as f64 * grid.h[1]];
        let hmin = grid.h[0].min(grid.h[1]);
        let o = grid.origin;
        let features = match kind {
            TemplateKind::SheppLike => {
                // (center, semi-axes, angle in degrees, value) in [-1, 1]^2
                let table: [([f64; 2], [f64; 2], f64, f64); 8] = [
                    ([0.0, 0.0], [0.69, 0.92], 0.0, 0.6),
                    ([0.0, -0.0184], [0.6624, 0.874], 0.0, -0.35),
                    ([0.22, 0.0], [0.11, 0.31], -18.0, -0.15),
                    ([-0.22, 0.0], [0.16, 0.41], 18.0, -0.15),
                    ([0.0, 0.35], [0.21, 0.25], 0.0, 0.2),
                    ([0.0, 0.1], [0.046, 0.046], 0.0, 0.2),
                    ([-0.08, -0.605], [0.046, 0.023], 0.0, 0.15),
                    ([0.06, -0.605], [0.023, 0.046], 0.0, 0.15),
                ];
                table
                    .iter()
                    .map(|&(c, a, ang, v)| Feature::Ellipse {
                        center: [o[0] + (0.5 + 0.45 * c[1]) * ext[0], o[1] + (0.5 + 0.45 * c[0]) * ext[1]],
                        axes: [0.45 * a[1] * ext[0], 0.45 * a[0] * ext[1]],
                        angle: ang.to_radians(),
                        value: v,
                    })
                    .collect()
            }
            TemplateKind::Blobs => {
                let count = ((ext[0] * ext[1]) / (hmin * hmin) / 100.0).round().max(8.0) as usize;
                (0..count)
                    .map(|_| {
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        Feature::Blob {
                            center: [o[0] + rng.gen::<f64>() * ext[0], o[1] + rng.gen::<f64>() * ext[1]],
                            width: rng.gen_range(2.0..5.0) * hmin,
                            value: sign * rng.gen_range(0.5..1.0),
                        }
                    })
                    .collect()
            }
            TemplateKind::GridTexture => (0..3)
                .map(|i| {
                    let wl = rng.gen_range(10.0..16.0) * hmin;
                    let dir: f64 = rng.gen_range(0.0..std::f64::consts::PI) + i as f64;
                    Feature::Wave {
                        k: [dir.cos() * std::f64::consts::TAU / wl, dir.sin() * std::f64::consts::TAU / wl],
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                        value: rng.gen_range(0.5..1.0),
                    }
                })
                .collect(),
        };
        let mut t = Template {
            features,
            base: 0.0,
            scale: 1.0,
            soft: hmin,
        };
        // Map the sampled range onto [0.15, 0.85].
        let (lo, hi) = grid
            .nodes()
            .map(|x| t.raw(x))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            t.scale = 0.7 / (hi - lo);
            t.base = 0.15 - lo * t.scale;
        } else {
            t.base = 0.5 - lo;
        }
        t
    }

    fn raw(&self, x: [f64; 2]) -> f64 {
        self.features
            .iter()
            .map(|f| match *f {
                Feature::Ellipse {
                    center,
                    axes,
                    angle,
                    value,
                } => {
                    let (s, c) = angle.sin_cos();
                    let d = [x[0] - center[0], x[1] - center[1]];
                    let p = [c * d[0] + s * d[1], -s * d[0] + c * d[1]];
                    let r = ((p[0] / axes[0]).powi(2) + (p[1] / axes[1]).powi(2)).sqrt();
                    // soft edge about one cell wide
                    let w = self.soft / axes[0].min(axes[1]);
                    value * 0.5 * (1.0 - ((r - 1.0) / w).tanh())
                }
                Feature::Blob { center, width, value } => {
                    let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                    value * (-0.5 * d2 / (width * width)).exp()
                }
                Feature::Wave { k, phase, value } => value * (k[0] * x[0] + k[1] * x[1] + phase).sin(),
            })
            .sum()
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.base + self.scale * self.raw(x)
    }

    pub fn render(&self, grid: &Grid) -> Image {
        Image::from_fn(*grid, |x| self.eval(x)).expect("template values are finite")
    }
}

#[derive(Debug, Clone)]
struct Bump {
    center: [f64; 2],
    amp: [f64; 2],
    width: f64,
}

/// Analytic displacement `u(x) = (A x + b - x) + scale * sum_k bump_k(x)`.
#[derive(Debug, Clone)]
pub struct WarpRecipe {
    affine: Affine,
    bumps: Vec<Bump>,
    scale: f64,
}

impl WarpRecipe {
    fn random(spec: &SynthSpec, grid: &Grid, frame: usize) -> Self {
        let mut rng = stream(spec.seed, recipe_stream(frame));
        let hmin = grid.h[0].min(grid.h[1]);
        let c = grid.center();
        let radius = 0.5 * (grid.m[0] as f64 * grid.h[0]).max(grid.m[1] as f64 * grid.h[1]);
        let jitter = spec.affine_jitter * hmin;
        let affine = if jitter > 0.0 {
            // rotation and translation each contribute up to half the jitter
            let angle = rng.gen_range(-1.0..1.0) * 0.5 * jitter / radius;
            let t = [rng.gen_range(-0.5..0.5) * jitter, rng.gen_range(-0.5..0.5) * jitter];
            Affine::rigid(angle, c, t)
        } else {
            Affine::IDENTITY
        };
        let width = spec.bump_width * hmin;
        let ext = [grid.m[0] as f64 * grid.h[0], grid.m[1] as f64 * grid.h[1]];
        let bumps: Vec<Bump> = (0..spec.bump_count)
            .map(|_| {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let mag = rng.gen_range(0.5..1.0);
                let margin = [width.min(0.25 * ext[0]), width.min(0.25 * ext[1])];
                Bump {
                    center: [
                        grid.origin[0] + rng.gen_range(margin[0]..ext[0] - margin[0]),
                        grid.origin[1] + rng.gen_range(margin[1]..ext[1] - margin[1]),
                    ],
                    amp: [mag * ang.cos(), mag * ang.sin()],
                    width,
                }
            })
            .collect();
        let mut recipe = WarpRecipe {
            affine,
            bumps,
            scale: 1.0,
        };
        let peak = grid
            .nodes()
            .map(|x| {
                let b = recipe.bump_sum(x);
                b[0].hypot(b[1])
            })
            .fold(0.0, f64::max);
        recipe.scale = if peak > 0.0 {
            spec.bump_amplitude * hmin / peak
        } else {
            0.0
        };
        recipe
    }

    fn bump_sum(&self, x: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0, 0.0];
        for b in &self.bumps {
            let d2 = (x[0] - b.center[0]).powi(2) + (x[1] - b.center[1]).powi(2);
            let g = (-0.5 * d2 / (b.width * b.width)).exp();
            out[0] += b.amp[0] * g;
            out[1] += b.amp[1] * g;
        }
        out
    }

    pub fn displacement_at(&self, x: [f64; 2]) -> [f64; 2] {
        let y = self.affine.apply(x);
        let b = self.bump_sum(x);
        [y[0] - x[0] + self.scale * b[0], y[1] - x[1] + self.scale * b[1]]
    }

    /// Solves `x + u(x) = z` by fixed-point iteration.
    pub fn inverse_at(&self, z: [f64; 2]) -> [f64; 2] {
        let mut x = z;
        for _ in 0..200 {
            let u = self.displacement_at(x);
            let next = [z[0] - u[0], z[1] - u[1]];
            let step = (next[0] - x[0]).hypot(next[1] - x[1]);
            x = next;
            if step < 1e-13 {
                break;
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub sequence: ImageSequence,
    pub ground_truth: DeformationStack,
    pub template: Image,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let grid = spec.grid()?;
    let template = Template::new(spec.template, &grid, spec.seed);
    let per_frame = (0..spec.frames)
        .into_par_iter()
        .map(|t| -> Result<(Image, VectorField)> {
            let recipe = WarpRecipe::random(spec, &grid, t);
            let mut rng = stream(spec.seed, intensity_stream(t));
            let gain = rng.gen_range(spec.gain_range[0]..=spec.gain_range[1]);
            let offset = rng.gen_range(spec.offset_range[0]..=spec.offset_range[1]);
            let mut noise_rng = stream(spec.seed, noise_stream(t));
            let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let values = grid
                .nodes()
                .map(|z| {
                    let v = gain * template.eval(recipe.inverse_at(z)) + offset;
                    let n = if spec.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
                    (v + n).clamp(0.0, 1.0)
                })
                .collect();
            let gt = VectorField::from_fn(grid, |x| recipe.displacement_at(x))?;
            Ok((Image::new(grid, values)?, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let (frames, fields): (Vec<_>, Vec<_>) = per_frame.into_iter().unzip();
    Ok(SynthOutput {
        sequence: ImageSequence::new(frames)?,
        ground_truth: DeformationStack::new(fields)?,
        template: template.render(&grid),
    })
}
