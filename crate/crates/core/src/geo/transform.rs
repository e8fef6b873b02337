//! Affine pixel ↔ map conversion for north-up rasters.

use serde::{Deserialize, Serialize};

use super::GeoError;

/// North-up affine geotransform.
///
/// ```text
/// x = origin_x + col * pixel_size_x
/// y = origin_y + row * pixel_size_y
/// ```
///
/// `pixel_size_y` is negative for the usual north-up layout where row 0 is
/// the northern edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    pub crs_id: String,
}

impl GeoTransform {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        pixel_size_x: f64,
        pixel_size_y: f64,
        crs_id: impl Into<String>,
    ) -> Result<Self, GeoError> {
        let t = Self {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
            crs_id: crs_id.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Identity-like transform in pixel units (north-up, 1 unit per pixel).
    pub fn pixel_grid(height: u32, crs_id: impl Into<String>) -> Self {
        Self {
            origin_x: 0.0,
            origin_y: height as f64,
            pixel_size_x: 1.0,
            pixel_size_y: -1.0,
            crs_id: crs_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let finite = self.origin_x.is_finite()
            && self.origin_y.is_finite()
            && self.pixel_size_x.is_finite()
            && self.pixel_size_y.is_finite();
        if !finite || self.pixel_size_x <= 0.0 || self.pixel_size_y == 0.0 {
            return Err(GeoError::InvalidInput(format!(
                "bad geotransform pixel size ({}, {})",
                self.pixel_size_x, self.pixel_size_y
            )));
        }
        Ok(())
    }

    /// Map coordinates of a (possibly fractional) pixel position.
    #[inline]
    pub fn pixel_to_map(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size_x,
            self.origin_y + row * self.pixel_size_y,
        )
    }

    /// Fractional pixel position of a map coordinate.
    #[inline]
    pub fn map_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size_x,
            (y - self.origin_y) / self.pixel_size_y,
        )
    }

    /// Transform for a window whose top-left pixel is `(col, row)` in this raster.
    pub fn window(&self, col: i64, row: i64) -> Self {
        let (x, y) = self.pixel_to_map(col as f64, row as f64);
        Self {
            origin_x: x,
            origin_y: y,
            ..self.clone()
        }
    }

    /// Ground sampling distance along x, in map units per pixel.
    pub fn gsd(&self) -> f64 {
        self.pixel_size_x
    }

    /// Map-space rectangle covered by a `width × height` raster.
    pub fn bounds(&self, width: u32, height: u32) -> super::Rect {
        let (x0, y0) = self.pixel_to_map(0.0, 0.0);
        let (x1, y1) = self.pixel_to_map(width as f64, height as f64);
        super::Rect::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
    }

    pub fn same_crs(&self, crs: &str) -> bool {
        crs_eq(&self.crs_id, crs)
    }
}

/// CRS identifiers compare case-insensitively; an empty identifier means
/// "unspecified" and matches anything.
pub fn crs_eq(a: &str, b: &str) -> bool {
    a.is_empty() || b.is_empty() || a.eq_ignore_ascii_case(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_pixel_sizes() {
        assert!(GeoTransform::new(0.0, 0.0, 0.0, -1.0, "EPSG:32613").is_err());
        assert!(GeoTransform::new(0.0, 0.0, -0.5, -0.5, "EPSG:32613").is_err());
        assert!(GeoTransform::new(0.0, 0.0, 0.5, 0.0, "EPSG:32613").is_err());
        assert!(GeoTransform::new(0.0, 0.0, 0.5, -0.5, "EPSG:32613").is_ok());
    }

    #[test]
    fn corner_round_trip_is_exact() {
        let t = GeoTransform::new(712_000.0, 2_300_000.0, 0.5, -0.5, "EPSG:32613").unwrap();
        for row in [0u32, 1, 255, 4999] {
            for col in [0u32, 7, 256, 4999] {
                let (x, y) = t.pixel_to_map(col as f64, row as f64);
                let (c, r) = t.map_to_pixel(x, y);
                assert_eq!((c, r), (col as f64, row as f64));
            }
        }
    }

    #[test]
    fn window_shifts_origin() {
        let t = GeoTransform::new(100.0, 200.0, 0.5, -0.5, "EPSG:32613").unwrap();
        let w = t.window(256, 512);
        assert_eq!((w.origin_x, w.origin_y), (228.0, -56.0));
        assert_eq!(w.pixel_to_map(0.0, 0.0), t.pixel_to_map(256.0, 512.0));
    }
}
