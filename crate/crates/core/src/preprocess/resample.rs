use crate::geo::{BitMask, PixelBuffer, Raster};

use super::PreprocessError;

const LOW_PERCENTILE: f64 = 0.02;
const HIGH_PERCENTILE: f64 = 0.98;

/// Value at quantile `q` of a histogram, by nearest lower rank:
/// the sample at 0-based index `floor(q · (n − 1))` in sorted order.
fn quantile_from_hist(hist: &[u64], n: u64, q: f64) -> u16 {
    let rank = (q * (n - 1) as f64).floor() as u64;
    let mut seen = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        seen += count;
        if seen > rank {
            return v as u16;
        }
    }
    (hist.len() - 1) as u16
}

/// Quantile of a sample list (same rank rule as the stretch).
pub fn percentile_u16(values: &[u16], q: f64) -> Option<u16> {
    if values.is_empty() {
        return None;
    }
    let mut hist = vec![0u64; 65536];
    for &v in values {
        hist[v as usize] += 1;
    }
    Some(quantile_from_hist(&hist, values.len() as u64, q))
}

/// Per-band linear stretch of a 16-bit raster from its [p2, p98] range over
/// valid pixels to [0, 255], clamped. A band whose p2 equals its p98 maps to 0.
/// 8-bit rasters pass through unchanged.
pub fn resample_to_u8(raster: &Raster, valid: Option<&BitMask>) -> Result<Raster, PreprocessError> {
    let data = match raster.pixels() {
        PixelBuffer::U8(_) => return Ok(raster.clone()),
        PixelBuffer::U16(v) => v,
    };
    let (w, h, bands) = (
        raster.width() as usize,
        raster.height() as usize,
        raster.bands() as usize,
    );
    let is_valid = |i: usize| valid.is_none_or(|m| m.get((i % w) as u32, (i / w) as u32));
    let n_valid = (0..w * h).filter(|&i| is_valid(i)).count() as u64;
    if n_valid == 0 {
        return Err(PreprocessError::EmptyValidRegion);
    }
    let mut out = vec![0u8; data.len()];
    for b in 0..bands {
        let mut hist = vec![0u64; 65536];
        for i in (0..w * h).filter(|&i| is_valid(i)) {
            hist[data[i * bands + b] as usize] += 1;
        }
        let lo = quantile_from_hist(&hist, n_valid, LOW_PERCENTILE) as i64;
        let hi = quantile_from_hist(&hist, n_valid, HIGH_PERCENTILE) as i64;
        let span = hi - lo;
        for i in 0..w * h {
            let v = data[i * bands + b] as i64;
            out[i * bands + b] = if span <= 0 {
                0
            } else {
                ((((v - lo) * 255) + span / 2).div_euclid(span)).clamp(0, 255) as u8
            };
        }
    }
    Ok(Raster::new(
        raster.width(),
        raster.height(),
        raster.bands(),
        PixelBuffer::U8(out),
        raster.transform().clone(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoTransform;

    fn t() -> GeoTransform {
        GeoTransform::new(0.0, 0.0, 0.5, -0.5, "EPSG:32613").unwrap()
    }

    #[test]
    fn constant_band_maps_to_zero() {
        let r = Raster::new(4, 4, 1, PixelBuffer::U16(vec![1234; 16]), t()).unwrap();
        let out = resample_to_u8(&r, None).unwrap();
        assert!(out.as_u8().unwrap().iter().all(|&v| v == 0));
    }

    #[test]
    fn ramp_matches_closed_form() {
        // 0..=1000: p2 sits at index 20 and p98 at index 980.
        let data: Vec<u16> = (0..=1000).collect();
        let r = Raster::new(1001, 1, 1, PixelBuffer::U16(data.clone()), t()).unwrap();
        let out = resample_to_u8(&r, None).unwrap();
        let (lo, hi) = (20.0, 980.0);
        for (v, &o) in data.iter().zip(out.as_u8().unwrap()) {
            let expect = ((*v as f64 - lo) * 255.0 / (hi - lo)).clamp(0.0, 255.0);
            assert!((o as f64 - expect).abs() <= 1.0, "{v}: {o} vs {expect}");
        }
        assert_eq!(out.as_u8().unwrap()[20], 0);
        assert_eq!(out.as_u8().unwrap()[980], 255);
    }

    #[test]
    fn u8_passes_through() {
        let r = Raster::new(2, 1, 1, PixelBuffer::U8(vec![3, 200]), t()).unwrap();
        assert_eq!(resample_to_u8(&r, None).unwrap(), r);
    }

    #[test]
    fn empty_valid_region_is_error() {
        let r = Raster::new(2, 1, 1, PixelBuffer::U16(vec![3, 200]), t()).unwrap();
        let none = BitMask::new(2, 1);
        assert!(matches!(
            resample_to_u8(&r, Some(&none)),
            Err(PreprocessError::EmptyValidRegion)
        ));
    }

    #[test]
    fn nodata_is_excluded_from_percentiles() {
        let mut data = vec![0u16; 50];
        data.extend((1..=50).map(|v| v * 10));
        let valid = BitMask::from_fn(100, 1, |c, _| c >= 50);
        let r = Raster::new(100, 1, 1, PixelBuffer::U16(data), t()).unwrap();
        let out = resample_to_u8(&r, Some(&valid)).unwrap();
        // p2 of 10..=500 (50 samples) is 10, p98 is 490.
        assert_eq!(out.as_u8().unwrap()[50], 0);
        assert_eq!(out.as_u8().unwrap()[98], 255);
    }
}
