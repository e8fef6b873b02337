//! Georeferenced rasters, binary masks, polygons and the study-area grid.
//!
//! Everything here is an immutable value after construction; the geometry
//! routines are pure functions over those values.

mod grid;
pub mod io;
mod mask;
mod polygon;
mod polygonize;
mod raster;
mod rasterize;
mod transform;

pub use grid::{make_grid, GridCell, CELL_SIZE_M};
pub use mask::BitMask;
pub use polygon::{point_in_ring, Maturity, ParcelLabel, Point, Polygon, Provenance, Ring};
pub(crate) use polygonize::label_components;
pub use polygonize::polygonize;
pub use raster::{DType, PixelBuffer, Raster};
pub use rasterize::{rasterize, rasterize_unchecked};
pub use transform::{crs_eq, GeoTransform};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GeoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("CRS mismatch: expected {expected}, found {found}")]
    CrsMismatch { expected: String, found: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported raster: {0}")]
    Unsupported(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("decode error on {path}: {message}")]
    Decode { path: String, message: String },
}

/// Axis-aligned map-space rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub const fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
            || ![self.min_x, self.min_y, self.max_x, self.max_y]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.min_x <= other.min_x && self.min_y <= other.min_y && self.max_x >= other.max_x && self.max_y >= other.max_y
    }

    /// Overlap area with another rectangle (zero when they only touch).
    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.max_x.min(other.max_x) - self.min_x.max(other.min_x);
        let h = self.max_y.min(other.max_y) - self.min_y.max(other.min_y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.intersection_area(other) > 0.0
    }
}

/// Number of 1-pixels in a mask.
pub fn mask_area_px(mask: &BitMask) -> u64 {
    mask.count_ones()
}
