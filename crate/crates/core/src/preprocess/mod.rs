//! Scene preparation: 16→8-bit stretch, per-cell clipping into fixed-size
//! image/mask pairs, train/val/test manifests, and dihedral augmentation.

mod augment;
mod clip;
mod resample;
mod split;
pub mod store;

pub use augment::{augment, AugmentMode, Dihedral};
pub use clip::{clip_cell, clip_offsets, ClipPair, CLIP_SIZE};
pub use resample::{percentile_u16, resample_to_u8};
pub use split::{build_split, cell_of_clip, ClipRef, Split, SplitAssignment, SplitCounts, SplitEntry, SplitManifest};

use crate::geo::GeoError;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("no valid pixels to stretch")]
    EmptyValidRegion,
    #[error("split conflict: {0}")]
    SplitConflict(String),
    #[error("clip {0} has no split assignment")]
    Unassigned(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("augmentation needs a square clip, got {0}×{1}")]
    NotSquare(u32, u32),
}
