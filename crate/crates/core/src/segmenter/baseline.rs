//! Deterministic texture baseline for row-planted crops.
//!
//! All arithmetic is integer, so maps are bit-identical across platforms and
//! thread counts.

use serde::{Deserialize, Serialize};

use crate::geo::Raster;

use super::ProbabilityMap;

/// Fixed-point scale of the raw score: 128 means a correlation gain of 1.0.
pub const SCORE_ONE: i64 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    /// Side of the local standard-deviation window.
    pub std_window: u32,
    /// Pixels whose local std (luma units) is below this score 0.
    pub min_std: u32,
    pub lag_min: u32,
    pub lag_max: u32,
    /// Side of the window over which autocorrelations are measured.
    pub corr_window: u32,
    /// Side of the box filter applied to the score before scaling.
    pub smooth_window: u32,
    /// Raw score mapped to probability 1.0; the scale runs from 0 to this
    /// value for every clip, so a clip without periodic texture stays low
    /// instead of being stretched to full range.
    pub full_scale: u32,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            std_window: 9,
            min_std: 3,
            lag_min: 4,
            lag_max: 16,
            corr_window: 21,
            smooth_window: 9,
            full_scale: 120,
        }
    }
}

/// Summed-area table with clamped box queries.
struct Integral {
    w: usize,
    h: usize,
    data: Vec<u64>,
}

impl Integral {
    fn new(w: usize, h: usize, value: impl Fn(usize) -> u64) -> Self {
        let mut data = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += value(y * w + x);
                data[(y + 1) * (w + 1) + x + 1] = data[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, data }
    }

    /// Box of half-size `r` around `(x, y)`, clipped to the image: (sum, count).
    fn boxed(&self, x: usize, y: usize, r: usize) -> (u64, u64) {
        let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
        let (x1, y1) = ((x + r + 1).min(self.w), (y + r + 1).min(self.h));
        let s = |xx: usize, yy: usize| self.data[yy * (self.w + 1) + xx];
        let sum = s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0);
        (sum, ((x1 - x0) * (y1 - y0)) as u64)
    }
}

const DIRECTIONS: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// Raw per-pixel periodicity score in units of [`SCORE_ONE`].
///
/// For each direction and lag `l`, the score is the local
/// autocorrelation at `l` minus that at `l / 2`: near 2 for stripes of
/// period `l`, near 0 for noise and for smooth gradients. The best direction
/// and lag wins. Pixels in flat neighborhoods (local std below `min_std`)
/// score 0. The result is box-smoothed over `smooth_window`.
pub fn texture_score(clip: &Raster, p: &BaselineParams) -> Vec<i32> {
    let (w, h) = (clip.width() as usize, clip.height() as usize);
    let luma = clip.luma();
    let px = |i: usize| luma[i] as u64;
    let s1 = Integral::new(w, h, px);
    let s2 = Integral::new(w, h, |i| px(i) * px(i));

    let rs = (p.std_window / 2) as usize;
    let rc = (p.corr_window / 2) as usize;
    let min_var = u64::from(p.min_std) * u64::from(p.min_std);

    let mut best = vec![i32::MIN; w * h];
    let half_min = (p.lag_min / 2).max(1);
    for (dx, dy) in DIRECTIONS {
        // Correlation images for every lag this direction needs.
        let corr: Vec<Vec<i32>> = (half_min..=p.lag_max)
            .map(|lag| {
                let shifted: Vec<u64> = (0..w * h)
                    .map(|i| {
                        let (x, y) = ((i % w) as i64, (i / w) as i64);
                        let sx = (x + dx * lag as i64).clamp(0, w as i64 - 1) as usize;
                        let sy = (y + dy * lag as i64).clamp(0, h as i64 - 1) as usize;
                        px(sy * w + sx)
                    })
                    .collect();
                let t1 = Integral::new(w, h, |i| shifted[i]);
                let t2 = Integral::new(w, h, |i| shifted[i] * shifted[i]);
                let st = Integral::new(w, h, |i| px(i) * shifted[i]);
                let mut out = vec![0i32; w * h];
                for y in 0..h {
                    for x in 0..w {
                        let (a, n) = s1.boxed(x, y, rc);
                        let (aa, _) = s2.boxed(x, y, rc);
                        let (b, _) = t1.boxed(x, y, rc);
                        let (bb, _) = t2.boxed(x, y, rc);
                        let (ab, _) = st.boxed(x, y, rc);
                        // max(var_a, var_b) ≥ sqrt(var_a·var_b) keeps the
                        // ratio in [-1, 1] without a square root.
                        let den = (n * aa - a * a).max(n * bb - b * b) as i64;
                        if den == 0 {
                            continue;
                        }
                        let cov = (n * ab) as i64 - (a * b) as i64;
                        out[y * w + x] = (cov * SCORE_ONE / den) as i32;
                    }
                }
                out
            })
            .collect();
        let at = |lag: u32| &corr[(lag - half_min) as usize];
        for lag in p.lag_min..=p.lag_max {
            let (full, half) = (at(lag), at((lag / 2).max(half_min)));
            for i in 0..w * h {
                best[i] = best[i].max(full[i] - half[i]);
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (sum, n) = s1.boxed(x, y, rs);
            let (sq, _) = s2.boxed(x, y, rs);
            let var_n2 = n * sq - sum * sum;
            if var_n2 < min_var * n * n || best[i] == i32::MIN {
                best[i] = 0;
            }
        }
    }
    smooth(&best, w, h, (p.smooth_window / 2) as usize)
}

/// Box mean (rounded toward zero) of half-size `r`.
fn smooth(v: &[i32], w: usize, h: usize, r: usize) -> Vec<i32> {
    if r == 0 {
        return v.to_vec();
    }
    let lo = i64::from(i32::MIN).unsigned_abs();
    // Offset into unsigned range for the summed-area table.
    let sat = Integral::new(w, h, |i| (i64::from(v[i]) + lo as i64) as u64);
    (0..w * h)
        .map(|i| {
            let (sum, n) = sat.boxed(i % w, i / w, r);
            ((sum / n) as i64 - lo as i64) as i32
        })
        .collect()
}

/// Texture score min-max scaled to u8 over the fixed range
/// `[0, full_scale]`, clamped.
pub fn builtin_baseline(clip: &Raster, p: &BaselineParams) -> ProbabilityMap {
    let span = i64::from(p.full_scale.max(1));
    let values = texture_score(clip, p)
        .iter()
        .map(|&v| (i64::from(v.max(0)) * 255 / span).min(255) as u8)
        .collect();
    ProbabilityMap::new(clip.width(), clip.height(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoTransform, PixelBuffer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(n: u32, f: impl Fn(u32, u32) -> u8) -> Raster {
        let t = GeoTransform::new(0.0, 0.0, 0.5, -0.5, "").unwrap();
        let mut data = Vec::with_capacity((n * n * 3) as usize);
        for y in 0..n {
            for x in 0..n {
                let v = f(x, y);
                data.extend_from_slice(&[v, v, v]);
            }
        }
        Raster::new(n, n, 3, PixelBuffer::U8(data), t).unwrap()
    }

    #[test]
    fn constant_clip_scores_zero() {
        let m = builtin_baseline(&gray(64, |_, _| 120), &BaselineParams::default());
        assert!(m.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn stripes_score_above_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<u8> = (0..96 * 96).map(|_| rng.random_range(90..130)).collect();
        let clip = gray(96, |x, y| {
            if (24..72).contains(&x) && (24..72).contains(&y) {
                if y % 8 < 3 {
                    200
                } else {
                    60
                }
            } else {
                noise[(y * 96 + x) as usize]
            }
        });
        let m = builtin_baseline(&clip, &BaselineParams::default());
        let mut bg: Vec<u8> = (0..96 * 96)
            .filter(|&i| {
                let (x, y) = (i % 96, i / 96);
                !(16..80).contains(&x) || !(16..80).contains(&y)
            })
            .map(|i| m.values[i])
            .collect();
        bg.sort_unstable();
        let median = bg[bg.len() / 2];
        for y in 32..64 {
            for x in 32..64 {
                assert!(m.get(x, y) > median && m.get(x, y) >= 128, "({x},{y}) {}", m.get(x, y));
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<u8> = (0..64 * 64).map(|_| rng.random()).collect();
        let clip = gray(64, |x, y| noise[(y * 64 + x) as usize]);
        let p = BaselineParams::default();
        assert_eq!(builtin_baseline(&clip, &p), builtin_baseline(&clip, &p));
    }
}
