//! Two-stage music-to-dance synthesis.
//!
//! Stage one predicts a sequence of choreographic action units (CAUs) from
//! musical features with a local convolutional music encoder and a GRU decoder.
//! Stage two turns the sequence into skeleton motion by fetching each unit's
//! motion clip, aligning the clips, and inpainting the transitions between
//! neighbours with a frame-encoder / U-Net / frame-decoder model.

pub mod blob;
pub mod cau;
pub mod error;
pub mod eval;
pub mod inpainter;
pub mod motion;
pub mod music;
pub mod nn;
pub mod predictor;

pub use error::{Error, Result};
