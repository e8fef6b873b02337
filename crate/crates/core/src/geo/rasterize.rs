//! Scanline polygon fill with pixel-center sampling and the even-odd rule.

use super::{crs_eq, BitMask, GeoError, GeoTransform, Polygon};

/// Burn `polygons` into a `width × height` mask aligned with `transform`.
///
/// A pixel is set iff its center lies inside some polygon (even-odd over the
/// polygon's rings). `polygons_crs` must match the transform's CRS.
pub fn rasterize(
    polygons: &[Polygon],
    polygons_crs: &str,
    transform: &GeoTransform,
    width: u32,
    height: u32,
) -> Result<BitMask, GeoError> {
    if !crs_eq(polygons_crs, &transform.crs_id) {
        return Err(GeoError::CrsMismatch {
            expected: transform.crs_id.clone(),
            found: polygons_crs.to_string(),
        });
    }
    Ok(rasterize_unchecked(polygons, transform, width, height))
}

/// [`rasterize`] without the CRS check, for polygons already known to share
/// the raster's CRS.
pub fn rasterize_unchecked(polygons: &[Polygon], transform: &GeoTransform, width: u32, height: u32) -> BitMask {
    let mut mask = BitMask::new(width, height);
    for p in polygons {
        burn(&mut mask, p, transform);
    }
    mask
}

fn burn(mask: &mut BitMask, polygon: &Polygon, transform: &GeoTransform) {
    let edges: Vec<((f64, f64), (f64, f64))> = polygon
        .edges()
        .map(|(a, b)| (transform.map_to_pixel(a.x, a.y), transform.map_to_pixel(b.x, b.y)))
        .filter(|(a, b)| a.1 != b.1)
        .collect();
    if edges.is_empty() {
        return;
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in &edges {
        lo = lo.min(a.1).min(b.1);
        hi = hi.max(a.1).max(b.1);
    }
    // Rows whose center y = row + 0.5 falls inside [lo, hi).
    let first = ((lo - 0.5).ceil().max(0.0)) as i64;
    let last = ((hi - 0.5).ceil().min(mask.height() as f64)) as i64;
    let mut xs: Vec<f64> = Vec::with_capacity(16);
    for row in first..last {
        let y = row as f64 + 0.5;
        xs.clear();
        for &(a, b) in &edges {
            if (a.1 > y) != (b.1 > y) {
                xs.push(a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(|p, q| p.total_cmp(q));
        for pair in xs.chunks_exact(2) {
            let start = (pair[0] - 0.5).ceil().clamp(0.0, mask.width() as f64) as u32;
            let end = (pair[1] - 0.5).ceil().clamp(0.0, mask.width() as f64) as u32;
            mask.fill_span(row as u32, start, end);
        }
    }
}
