//! Second stage: regenerating the transition between adjacent CAU clips.

pub mod model;
pub mod stitch;
pub mod train;

pub use model::{mask_clip, Branch, BranchKind, Inpainter, InpainterConfig, InpainterMode};
pub use stitch::{assemble, fit_to_context, inpaint_junctions, stitch, Assembly};
pub use train::{masked_geodesic, train_inpainter, BranchLog, InpainterTraining};
