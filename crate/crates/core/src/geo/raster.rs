use serde::{Deserialize, Serialize};

use super::{GeoError, GeoTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
}

impl DType {
    pub fn bytes(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PixelBuffer {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl PixelBuffer {
    pub fn len(&self) -> usize {
        match self {
            PixelBuffer::U8(v) => v.len(),
            PixelBuffer::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            PixelBuffer::U8(_) => DType::U8,
            PixelBuffer::U16(_) => DType::U16,
        }
    }
}

/// Row-major, band-interleaved pixel grid with a geotransform.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    bands: u8,
    pixels: PixelBuffer,
    transform: GeoTransform,
}

impl Raster {
    pub fn new(
        width: u32,
        height: u32,
        bands: u8,
        pixels: PixelBuffer,
        transform: GeoTransform,
    ) -> Result<Self, GeoError> {
        if width == 0 || height == 0 {
            return Err(GeoError::InvalidInput(format!(
                "raster must be at least 1×1, got {width}×{height}"
            )));
        }
        if bands != 1 && bands != 3 {
            return Err(GeoError::Unsupported(format!("{bands} bands (only 1 or 3 supported)")));
        }
        let expected = width as usize * height as usize * bands as usize;
        if pixels.len() != expected {
            return Err(GeoError::DimensionMismatch(format!(
                "buffer holds {} samples, {width}×{height}×{bands} needs {expected}",
                pixels.len()
            )));
        }
        transform.validate()?;
        Ok(Self {
            width,
            height,
            bands,
            pixels,
            transform,
        })
    }

    /// 3-band u8 raster from interleaved RGB bytes.
    pub fn rgb8(width: u32, height: u32, data: Vec<u8>, transform: GeoTransform) -> Result<Self, GeoError> {
        Self::new(width, height, 3, PixelBuffer::U8(data), transform)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bands(&self) -> u8 {
        self.bands
    }

    pub fn dtype(&self) -> DType {
        self.pixels.dtype()
    }

    pub fn pixels(&self) -> &PixelBuffer {
        &self.pixels
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn byte_len(&self) -> usize {
        self.pixels.len() * self.dtype().bytes()
    }

    /// The u8 sample buffer, if this is an 8-bit raster.
    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.pixels {
            PixelBuffer::U8(v) => Some(v),
            PixelBuffer::U16(_) => None,
        }
    }

    pub fn into_parts(self) -> (u32, u32, u8, PixelBuffer, GeoTransform) {
        (self.width, self.height, self.bands, self.pixels, self.transform)
    }

    /// Sample of `band` at `(col, row)` widened to u16.
    pub fn sample(&self, col: u32, row: u32, band: u8) -> u16 {
        let idx = (row as usize * self.width as usize + col as usize) * self.bands as usize + band as usize;
        match &self.pixels {
            PixelBuffer::U8(v) => v[idx] as u16,
            PixelBuffer::U16(v) => v[idx],
        }
    }

    /// Copy the window `[col, col+w) × [row, row+h)`; samples outside the raster
    /// are filled with zero.
    pub fn window(&self, col: i64, row: i64, w: u32, h: u32) -> Raster {
        let bands = self.bands as usize;
        let mut out = match &self.pixels {
            PixelBuffer::U8(_) => PixelBuffer::U8(vec![0; w as usize * h as usize * bands]),
            PixelBuffer::U16(_) => PixelBuffer::U16(vec![0; w as usize * h as usize * bands]),
        };
        let c0 = col.max(0);
        let c1 = (col + w as i64).min(self.width as i64);
        let r0 = row.max(0);
        let r1 = (row + h as i64).min(self.height as i64);
        if c0 < c1 && r0 < r1 {
            let run = (c1 - c0) as usize * bands;
            for r in r0..r1 {
                let src = (r as usize * self.width as usize + c0 as usize) * bands;
                let dst = ((r - row) as usize * w as usize + (c0 - col) as usize) * bands;
                match (&self.pixels, &mut out) {
                    (PixelBuffer::U8(s), PixelBuffer::U8(d)) => d[dst..dst + run].copy_from_slice(&s[src..src + run]),
                    (PixelBuffer::U16(s), PixelBuffer::U16(d)) => d[dst..dst + run].copy_from_slice(&s[src..src + run]),
                    _ => unreachable!("window buffer matches source dtype"),
                }
            }
        }
        Raster {
            width: w,
            height: h,
            bands: self.bands,
            pixels: out,
            transform: self.transform.window(col, row),
        }
    }

    /// Expand a single-band u8 raster to gray RGB; 3-band u8 rasters are returned as-is.
    pub fn to_rgb8(&self) -> Result<Raster, GeoError> {
        let data = self
            .as_u8()
            .ok_or_else(|| GeoError::Unsupported("expected an 8-bit raster".into()))?;
        let rgb = match self.bands {
            3 => data.to_vec(),
            _ => data.iter().flat_map(|&v| [v, v, v]).collect(),
        };
        Raster::rgb8(self.width, self.height, rgb, self.transform.clone())
    }

    /// BT.601 luma, integer weights (77, 150, 29) / 256.
    pub fn luma(&self) -> Vec<u8> {
        let n = self.width as usize * self.height as usize;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let v = if self.bands == 3 {
                let base = i * 3;
                let (r, g, b) = match &self.pixels {
                    PixelBuffer::U8(v) => (v[base] as u32, v[base + 1] as u32, v[base + 2] as u32),
                    PixelBuffer::U16(v) => (
                        (v[base] >> 8) as u32,
                        (v[base + 1] >> 8) as u32,
                        (v[base + 2] >> 8) as u32,
                    ),
                };
                ((77 * r + 150 * g + 29 * b) >> 8) as u8
            } else {
                match &self.pixels {
                    PixelBuffer::U8(v) => v[i],
                    PixelBuffer::U16(v) => (v[i] >> 8) as u8,
                }
            };
            out.push(v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> GeoTransform {
        GeoTransform::new(0.0, 10.0, 1.0, -1.0, "EPSG:32613").unwrap()
    }

    #[test]
    fn buffer_length_is_checked() {
        assert!(Raster::new(2, 2, 3, PixelBuffer::U8(vec![0; 12]), t()).is_ok());
        assert!(Raster::new(2, 2, 3, PixelBuffer::U8(vec![0; 11]), t()).is_err());
        assert!(Raster::new(0, 2, 1, PixelBuffer::U8(vec![]), t()).is_err());
        assert!(Raster::new(1, 1, 4, PixelBuffer::U8(vec![0; 4]), t()).is_err());
        let r = Raster::new(2, 2, 3, PixelBuffer::U16(vec![0; 12]), t()).unwrap();
        assert_eq!(r.byte_len(), 24);
    }

    #[test]
    fn window_pads_out_of_bounds_with_zero() {
        let data: Vec<u8> = (1..=9).collect();
        let r = Raster::new(3, 3, 1, PixelBuffer::U8(data), t()).unwrap();
        let w = r.window(1, 1, 3, 3);
        assert_eq!(w.as_u8().unwrap(), &[5, 6, 0, 8, 9, 0, 0, 0, 0]);
        assert_eq!(w.transform().origin_x, 1.0);
        assert_eq!(w.transform().origin_y, 9.0);
    }

    #[test]
    fn luma_of_gray_is_near_identity() {
        let r = Raster::rgb8(1, 1, vec![200, 200, 200], t()).unwrap();
        assert_eq!(r.luma(), vec![200]);
    }
}
