//! Reference implementations the library is checked against.

use agavescan::geo::{BitMask, GeoTransform, Maturity, ParcelLabel, Point, Polygon, Provenance, Raster};
use agavescan::maturity::extract_tiles;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CRS: &str = "EPSG:32613";

pub fn random_mask(w: u32, h: u32, density: f64, seed: u64) -> BitMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BitMask::from_fn(w, h, |_, _| rng.random_bool(density))
}

/// IoU and DSI by visiting every pixel.
pub fn naive_iou(pred: &BitMask, truth: &BitMask) -> (f64, f64) {
    let (mut i, mut p, mut t) = (0u64, 0u64, 0u64);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let (a, b) = (pred.get(x, y), truth.get(x, y));
            i += u64::from(a && b);
            p += u64::from(a);
            t += u64::from(b);
        }
    }
    if p + t == 0 {
        return (1.0, 1.0);
    }
    (i as f64 / (p + t - i) as f64, 2.0 * i as f64 / (p + t) as f64)
}

/// Tile origins the extractor returns for a pixel-space rectangle parcel on
/// a 256 px clip.
pub fn tiles_in_rect(x0: u32, y0: u32, x1: u32, y1: u32) -> Vec<(u32, u32)> {
    let n = 256;
    let t = GeoTransform::pixel_grid(n, CRS);
    let clip = Raster::rgb8(n, n, vec![0; (n * n * 3) as usize], t.clone()).unwrap();
    let (mx0, my1) = t.pixel_to_map(x0 as f64, y0 as f64);
    let (mx1, my0) = t.pixel_to_map(x1 as f64, y1 as f64);
    let parcel = ParcelLabel::new(
        "r",
        Polygon::rect(mx0, my0, mx1, my1).unwrap(),
        Maturity::Young,
        Provenance::Expert,
        1,
    )
    .unwrap();
    extract_tiles("c", &clip, None, &parcel, 32)
        .iter()
        .map(|s| s.origin)
        .collect()
}

/// Lattice tiles all of whose 1024 pixel centers lie inside the rectangle.
pub fn brute_force_tiles(x0: u32, y0: u32, x1: u32, y1: u32) -> Vec<(u32, u32)> {
    let poly = Polygon::rect(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap();
    let mut out = Vec::new();
    for ty in 0..8 {
        for tx in 0..8 {
            let inside = (0..32).all(|dy| {
                (0..32).all(|dx| {
                    let c = Point::new((tx * 32 + dx) as f64 + 0.5, (ty * 32 + dy) as f64 + 0.5);
                    poly.contains(c)
                })
            });
            if inside {
                out.push((tx * 32, ty * 32));
            }
        }
    }
    out
}
