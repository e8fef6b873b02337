use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::{BitMask, PixelBuffer, Raster};

use super::{ClipPair, PreprocessError};

/// The 8 symmetries of the square, in pixel space (y down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dihedral {
    Identity,
    /// Quarter turn clockwise as displayed.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    /// Swap x and y.
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    /// Clip id suffix; empty for the identity.
    pub fn suffix(self) -> &'static str {
        match self {
            Dihedral::Identity => "",
            Dihedral::Rot90 => "~r90",
            Dihedral::Rot180 => "~r180",
            Dihedral::Rot270 => "~r270",
            Dihedral::FlipH => "~fh",
            Dihedral::FlipV => "~fv",
            Dihedral::Transpose => "~t",
            Dihedral::AntiTranspose => "~at",
        }
    }

    pub fn inverse(self) -> Dihedral {
        match self {
            Dihedral::Rot90 => Dihedral::Rot270,
            Dihedral::Rot270 => Dihedral::Rot90,
            d => d,
        }
    }

    /// Where pixel `(x, y)` of an `n`×`n` image lands.
    pub fn map_pixel(self, x: u32, y: u32, n: u32) -> (u32, u32) {
        let m = n - 1;
        match self {
            Dihedral::Identity => (x, y),
            Dihedral::Rot90 => (m - y, x),
            Dihedral::Rot180 => (m - x, m - y),
            Dihedral::Rot270 => (y, m - x),
            Dihedral::FlipH => (m - x, y),
            Dihedral::FlipV => (x, m - y),
            Dihedral::Transpose => (y, x),
            Dihedral::AntiTranspose => (m - y, m - x),
        }
    }

    /// Same map for continuous pixel-space coordinates on `[0, n]²`, so
    /// pixel centers map to pixel centers.
    pub fn map_point(self, x: f64, y: f64, n: f64) -> (f64, f64) {
        match self {
            Dihedral::Identity => (x, y),
            Dihedral::Rot90 => (n - y, x),
            Dihedral::Rot180 => (n - x, n - y),
            Dihedral::Rot270 => (y, n - x),
            Dihedral::FlipH => (n - x, y),
            Dihedral::FlipV => (x, n - y),
            Dihedral::Transpose => (y, x),
            Dihedral::AntiTranspose => (n - y, n - x),
        }
    }

    pub fn apply_mask(self, mask: &BitMask) -> BitMask {
        let n = mask.width();
        let inv = self.inverse();
        BitMask::from_fn(n, n, |x, y| {
            let (sx, sy) = inv.map_pixel(x, y, n);
            mask.get(sx, sy)
        })
    }

    pub fn apply_raster(self, raster: &Raster) -> Raster {
        let n = raster.width();
        let bands = raster.bands() as usize;
        let inv = self.inverse();
        let src_index = |i: usize| {
            let (x, y) = ((i % n as usize) as u32, (i / n as usize) as u32);
            let (sx, sy) = inv.map_pixel(x, y, n);
            (sy as usize * n as usize + sx as usize) * bands
        };
        fn permute<T: Copy>(src: &[T], len: usize, bands: usize, idx: impl Fn(usize) -> usize) -> Vec<T> {
            let mut out = Vec::with_capacity(src.len());
            for i in 0..len {
                let s = idx(i);
                out.extend_from_slice(&src[s..s + bands]);
            }
            out
        }
        let len = (n * n) as usize;
        let pixels = match raster.pixels() {
            PixelBuffer::U8(v) => PixelBuffer::U8(permute(v, len, bands, src_index)),
            PixelBuffer::U16(v) => PixelBuffer::U16(permute(v, len, bands, src_index)),
        };
        Raster::new(n, n, raster.bands(), pixels, raster.transform().clone())
            .expect("dihedral permutation preserves raster shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// All 8 variants, identity first.
    Exhaustive,
    /// One variant drawn reproducibly from the seed.
    SeededRandom(u64),
}

fn transform_pair(pair: &ClipPair, d: Dihedral) -> ClipPair {
    ClipPair {
        clip_id: format!("{}{}", pair.clip_id, d.suffix()),
        image: d.apply_raster(&pair.image),
        mask: d.apply_mask(&pair.mask),
        validity: d.apply_mask(&pair.validity),
        source_cell: pair.source_cell,
        padded: pair.padded,
    }
}

/// Dihedral variants of a clip with image, mask and validity moved together.
pub fn augment(pair: &ClipPair, mode: AugmentMode) -> Result<Vec<ClipPair>, PreprocessError> {
    let (w, h) = (pair.image.width(), pair.image.height());
    if w != h {
        return Err(PreprocessError::NotSquare(w, h));
    }
    Ok(match mode {
        AugmentMode::Exhaustive => Dihedral::ALL.iter().map(|&d| transform_pair(pair, d)).collect(),
        AugmentMode::SeededRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Dihedral::ALL[rng.random_range(0..Dihedral::ALL.len())];
            vec![transform_pair(pair, d)]
        }
    })
}
