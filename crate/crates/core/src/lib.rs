//! Groupwise registration of 2D image sequences.
//!
//! The similarity measure is the Schatten-q (quasi-)norm of the matrix whose
//! columns are the frames' regularized normalized gradient fields: aligned
//! frames have linearly dependent gradients, i.e. a low-rank matrix. It is
//! minimized jointly over all frames together with a curvature regularizer,
//! coarse to fine, by L-BFGS. A sequential pairwise baseline, affine
//! pre-alignment, and a synthetic ground-truth harness are included.

// `!(x > 0.0)` also rejects NaN, which is the point of those checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod deform;
pub mod error;
pub mod eval;
pub mod image;
pub mod interp;
pub mod io;
pub mod ngf;
pub mod optim;
pub mod prealign;
pub mod pyramid;
pub mod report;
pub mod sqn;
pub mod stencil;
pub mod synth;

pub use error::{Error, Result};
pub use image::{Grid, Image, ImageSequence, VectorField};
