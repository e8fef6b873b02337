//! Parcel maturity: 32×32 tiles fully inside parcels, class-balanced
//! splits, a tile classifier and parcel-level voting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::io::{self, LabelLayer};
use crate::geo::{BitMask, GeoError, Maturity, ParcelLabel, Point, Polygon, Raster};
use crate::preprocess::Split;
use crate::segmenter::protocol::{Frame, ImageFrame};
use crate::segmenter::{Adapter, AdapterError, ExternalConfig, SegmenterConfig, SegmenterKind};

pub const TILE_SIZE: u32 = 32;

#[derive(Debug, thiserror::Error)]
pub enum MaturityError {
    #[error("no votes for parcel {0}")]
    NoVotes(String),
    #[error("class {0} has no samples")]
    MissingClass(&'static str),
    #[error("tile {0} has no young/mature label")]
    Unlabeled(String),
    #[error("invalid ratios {0:?}")]
    Ratios([f64; 3]),
    #[error("invalid tile manifest: {0}")]
    InvalidManifest(String),
    #[error("tile {tile_id}: {source}")]
    Adapter {
        tile_id: String,
        #[source]
        source: AdapterError,
    },
    #[error("invalid maturity config: {0}")]
    Config(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// A 32×32 image patch lying entirely inside one parcel.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSample {
    pub tile_id: String,
    pub image: Raster,
    pub label: Maturity,
    pub parcel_id: String,
    pub clip_id: String,
    /// Top-left pixel within the source clip.
    pub origin: (u32, u32),
}

/// Metadata the split balancer needs from a tile.
pub trait TileMeta {
    fn tile_id(&self) -> &str;
    fn parcel_id(&self) -> &str;
    fn label(&self) -> Maturity;
}

impl TileMeta for TileSample {
    fn tile_id(&self) -> &str {
        &self.tile_id
    }
    fn parcel_id(&self) -> &str {
        &self.parcel_id
    }
    fn label(&self) -> Maturity {
        self.label
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.~".contains(c) {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Whether segment `a→b` meets the closed axis-aligned box (Liang–Barsky).
fn segment_meets_box(a: Point, b: Point, lo: (f64, f64), hi: (f64, f64)) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.x - lo.0), (dx, hi.0 - a.x), (-dy, a.y - lo.1), (dy, hi.1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Whether every pixel center of the `size`-square tile at `(x0, y0)` lies
/// inside `pixel_poly` (a polygon in pixel coordinates).
///
/// The four corner pixel centers and the tile center must be inside, and no
/// polygon edge may touch the square spanned by the pixel centers; together
/// these leave no room for a notch or hole between the sample points.
pub fn tile_inside(pixel_poly: &Polygon, x0: u32, y0: u32, size: u32) -> bool {
    let (lo_x, lo_y) = (x0 as f64 + 0.5, y0 as f64 + 0.5);
    let (hi_x, hi_y) = (lo_x + size as f64 - 1.0, lo_y + size as f64 - 1.0);
    let probes = [
        Point::new(lo_x, lo_y),
        Point::new(hi_x, lo_y),
        Point::new(lo_x, hi_y),
        Point::new(hi_x, hi_y),
        Point::new(x0 as f64 + size as f64 / 2.0, y0 as f64 + size as f64 / 2.0),
    ];
    probes.iter().all(|&p| pixel_poly.contains(p))
        && !pixel_poly
            .edges()
            .any(|(a, b)| segment_meets_box(a, b, (lo_x, lo_y), (hi_x, hi_y)))
}

/// Tiles on a `size`-stride lattice anchored at the clip origin that lie
/// fully inside the parcel and on valid pixels.
pub fn extract_tiles(
    clip_id: &str,
    clip: &Raster,
    validity: Option<&BitMask>,
    parcel: &ParcelLabel,
    size: u32,
) -> Vec<TileSample> {
    let t = clip.transform();
    let pixel_poly = parcel.polygon.map_points(|p| {
        let (c, r) = t.map_to_pixel(p.x, p.y);
        Point::new(c, r)
    });
    let bb = pixel_poly.bbox();
    let (nx, ny) = (clip.width() / size, clip.height() / size);
    let mut out = Vec::new();
    for ty in 0..ny {
        for tx in 0..nx {
            let (x0, y0) = (tx * size, ty * size);
            if (x0 as f64) < bb.min_x - 0.5
                || (y0 as f64) < bb.min_y - 0.5
                || ((x0 + size) as f64) > bb.max_x + 0.5
                || ((y0 + size) as f64) > bb.max_y + 0.5
            {
                continue;
            }
            if !tile_inside(&pixel_poly, x0, y0, size) {
                continue;
            }
            if let Some(v) = validity {
                if v.window(x0 as i64, y0 as i64, size, size).count_ones() != u64::from(size * size) {
                    continue;
                }
            }
            out.push(TileSample {
                tile_id: format!("{}_{}_{x0}_{y0}", sanitize(clip_id), sanitize(&parcel.id)),
                image: clip.window(x0 as i64, y0 as i64, size, size),
                label: parcel.maturity,
                parcel_id: parcel.id.clone(),
                clip_id: clip_id.to_string(),
                origin: (x0, y0),
            });
        }
    }
    out
}

/// Per-split, per-class tile counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub young: u64,
    pub mature: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.young + self.mature
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TileCounts {
    pub train: ClassCounts,
    pub val: ClassCounts,
    pub test: ClassCounts,
}

impl TileCounts {
    pub fn get(&self, s: Split) -> ClassCounts {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    fn get_mut(&mut self, s: Split) -> &mut ClassCounts {
        match s {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn total(&self) -> u64 {
        self.train.total() + self.val.total() + self.test.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T: TileMeta> BalancedSplit<T> {
    pub fn get(&self, s: Split) -> &[T] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn counts(&self) -> TileCounts {
        let mut c = TileCounts::default();
        for s in Split::ALL {
            for t in self.get(s) {
                match t.label() {
                    Maturity::Young => c.get_mut(s).young += 1,
                    Maturity::Mature => c.get_mut(s).mature += 1,
                    Maturity::Unknown => {}
                }
            }
        }
        c
    }
}

fn class_quotas(n: u64, ratios: [f64; 3]) -> [u64; 3] {
    let a = (ratios[0] * n as f64).round() as u64;
    let b = ((ratios[1] * n as f64).round() as u64).min(n - a.min(n));
    [a.min(n), b, n - a.min(n) - b]
}

/// Split tiles into train/val/test with equal class counts per split.
///
/// Ratios are fractions of each class's tiles (normalized to sum 1). Whole
/// parcels go to one split, filling per-class quotas in a seeded order; the
/// majority class of each split is then down-sampled, also seeded.
pub fn balance_split<T: TileMeta>(
    samples: Vec<T>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<BalancedSplit<T>, MaturityError> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || total <= 0.0 {
        return Err(MaturityError::Ratios(ratios));
    }
    let ratios = ratios.map(|r| r / total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Tiles grouped by class, then parcel (BTreeMap for a seed-only order).
    let mut by_class: [BTreeMap<String, Vec<T>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for s in samples {
        let k = match s.label() {
            Maturity::Young => 0,
            Maturity::Mature => 1,
            Maturity::Unknown => return Err(MaturityError::Unlabeled(s.tile_id().to_string())),
        };
        by_class[k].entry(s.parcel_id().to_string()).or_default().push(s);
    }
    for (k, name) in [(0, "young"), (1, "mature")] {
        if by_class[k].is_empty() {
            return Err(MaturityError::MissingClass(name));
        }
    }

    let mut assigned: [[Vec<T>; 2]; 3] = Default::default();
    for (k, parcels) in by_class.into_iter().enumerate() {
        let n: u64 = parcels.values().map(|v| v.len() as u64).sum();
        let quotas = class_quotas(n, ratios);
        let mut groups: Vec<Vec<T>> = parcels.into_values().collect();
        groups.shuffle(&mut rng);
        let mut filled = [0u64; 3];
        for mut g in groups {
            g.sort_by(|a, b| a.tile_id().cmp(b.tile_id()));
            // Largest remaining deficit; ties go to the earlier split.
            let s = (0..3)
                .max_by_key(|&s| (quotas[s] as i64 - filled[s] as i64, -(s as i64)))
                .expect("three splits");
            filled[s] += g.len() as u64;
            assigned[s][k].extend(g);
        }
    }

    let mut out: [Vec<T>; 3] = Default::default();
    for (s, [mut young, mut mature]) in assigned.into_iter().enumerate() {
        let keep = young.len().min(mature.len());
        for side in [&mut young, &mut mature] {
            if side.len() > keep {
                side.shuffle(&mut rng);
                side.truncate(keep);
            }
            side.sort_by(|a, b| a.tile_id().cmp(b.tile_id()));
        }
        out[s] = young.into_iter().chain(mature).collect();
    }
    let [train, val, test] = out;
    Ok(BalancedSplit { train, val, test })
}

/// One line of the tile manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEntry {
    pub tile_id: String,
    pub parcel_id: String,
    pub split: Split,
    pub class: Maturity,
}

impl TileMeta for TileEntry {
    fn tile_id(&self) -> &str {
        &self.tile_id
    }
    fn parcel_id(&self) -> &str {
        &self.parcel_id
    }
    fn label(&self) -> Maturity {
        self.class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub tile_size: u32,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub counts: TileCounts,
    pub entries: Vec<TileEntry>,
}

impl TileManifest {
    pub fn from_split<T: TileMeta>(split: &BalancedSplit<T>, tile_size: u32, seed: u64, ratios: [f64; 3]) -> Self {
        let mut entries = Vec::new();
        for s in Split::ALL {
            for t in split.get(s) {
                entries.push(TileEntry {
                    tile_id: t.tile_id().to_string(),
                    parcel_id: t.parcel_id().to_string(),
                    split: s,
                    class: t.label(),
                });
            }
        }
        Self {
            tile_size,
            seed,
            ratios,
            counts: split.counts(),
            entries,
        }
    }

    pub fn count_entries(&self) -> TileCounts {
        let mut c = TileCounts::default();
        for e in &self.entries {
            match e.class {
                Maturity::Young => c.get_mut(e.split).young += 1,
                Maturity::Mature => c.get_mut(e.split).mature += 1,
                Maturity::Unknown => {}
            }
        }
        c
    }

    /// Recorded counts match the entries, every split is class-balanced, no
    /// parcel straddles splits and tile ids are unique.
    pub fn validate(&self) -> Result<(), MaturityError> {
        let bad = |m: String| Err(MaturityError::InvalidManifest(m));
        if self.count_entries() != self.counts {
            return bad(format!(
                "recorded {:?}, entries give {:?}",
                self.counts,
                self.count_entries()
            ));
        }
        for s in Split::ALL {
            let c = self.counts.get(s);
            if c.young != c.mature {
                return bad(format!("{s} has {} young vs {} mature", c.young, c.mature));
            }
        }
        let mut parcel_split: BTreeMap<&str, Split> = BTreeMap::new();
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.class == Maturity::Unknown {
                return bad(format!("tile {} is unlabeled", e.tile_id));
            }
            if !ids.insert(e.tile_id.as_str()) {
                return bad(format!("tile {} listed twice", e.tile_id));
            }
            if *parcel_split.entry(&e.parcel_id).or_insert(e.split) != e.split {
                return bad(format!("parcel {} spans splits", e.parcel_id));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MaturityError> {
        let bytes = std::fs::read(path).map_err(|source| GeoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let m: TileManifest = serde_json::from_slice(&bytes).map_err(|e| GeoError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }
}

/// Write `{dir}/{split}/{class}/{tile_id}.png` for every tile plus
/// `{dir}/manifest.json`.
pub fn write_tile_dataset(
    dir: &Path,
    split: &BalancedSplit<TileSample>,
    tile_size: u32,
    seed: u64,
    ratios: [f64; 3],
) -> Result<TileManifest, MaturityError> {
    for s in Split::ALL {
        for t in split.get(s) {
            let p = dir
                .join(s.as_str())
                .join(t.label.as_str())
                .join(format!("{}.png", t.tile_id));
            io::write_raster_png(&p, &t.image.to_rgb8()?)?;
        }
    }
    let m = TileManifest::from_split(split, tile_size, seed, ratios);
    io::write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaturityConfig {
    pub kind: SegmenterKind,
    /// Mean 3×3 luma variance at or above which a tile is young.
    pub variance_cutoff: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for MaturityConfig {
    fn default() -> Self {
        Self {
            kind: SegmenterKind::Builtin,
            variance_cutoff: DEFAULT_VARIANCE_CUTOFF,
            external: None,
            split_ratios: [0.5625, 0.25, 0.1875],
            seed: 0,
        }
    }
}

/// Calibrated on the generator's young/mature fixtures (see
/// [`calibrate_cutoff`]).
pub const DEFAULT_VARIANCE_CUTOFF: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileVerdict {
    pub class: Maturity,
    /// 0..=255.
    pub confidence: u8,
    /// Set when the tile carries no usable texture.
    pub low_confidence: bool,
}

/// Mean over the tile of the 3×3 local luma variance (integer, ×1).
pub fn texture_variance(tile: &Raster) -> u32 {
    let (w, h) = (tile.width() as i64, tile.height() as i64);
    let l = tile.luma();
    let at = |x: i64, y: i64| l[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize] as u64;
    let mut total = 0u64;
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut s2) = (0u64, 0u64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let v = at(x + dx, y + dy);
                    s += v;
                    s2 += v * v;
                }
            }
            total += (9 * s2 - s * s) / 81;
        }
    }
    (total / (w * h) as u64) as u32
}

/// Builtin tile classifier. A flat tile is mature with zero confidence.
pub fn classify_builtin(tile: &Raster, cutoff: u32) -> TileVerdict {
    let v = texture_variance(tile);
    if v == 0 {
        return TileVerdict {
            class: Maturity::Mature,
            confidence: 0,
            low_confidence: true,
        };
    }
    let class = if v >= cutoff { Maturity::Young } else { Maturity::Mature };
    let dist = (v as i64 - cutoff as i64).unsigned_abs();
    let confidence = (dist * 255 / u64::from(cutoff.max(1))).min(255) as u8;
    TileVerdict {
        class,
        confidence,
        low_confidence: false,
    }
}

/// Threshold maximizing training accuracy of `young ≥ cutoff`; ties go to
/// the smallest cutoff.
pub fn calibrate_cutoff(young: &[u32], mature: &[u32]) -> u32 {
    let mut candidates: Vec<u32> = young.iter().chain(mature).copied().collect();
    candidates.sort_unstable();
    candidates.dedup();
    let score = |c: u32| young.iter().filter(|&&v| v >= c).count() + mature.iter().filter(|&&v| v < c).count();
    candidates
        .into_iter()
        .max_by_key(|&c| (score(c), std::cmp::Reverse(c)))
        .unwrap_or(DEFAULT_VARIANCE_CUTOFF)
}

pub struct TileClassifier {
    cfg: MaturityConfig,
    adapter: Option<Adapter>,
}

impl TileClassifier {
    pub fn new(cfg: MaturityConfig) -> Result<Self, MaturityError> {
        if cfg.variance_cutoff == 0 {
            return Err(MaturityError::Config("variance_cutoff must be > 0".into()));
        }
        let seg = SegmenterConfig {
            kind: cfg.kind,
            external: cfg.external.clone(),
            ..Default::default()
        };
        let adapter = seg
            .adapter(rayon::current_num_threads())
            .map_err(|e| MaturityError::Config(e.to_string()))?;
        Ok(Self { cfg, adapter })
    }

    pub fn classify(&self, tile_id: &str, tile: &Raster) -> Result<TileVerdict, MaturityError> {
        let Some(adapter) = &self.adapter else {
            return Ok(classify_builtin(tile, self.cfg.variance_cutoff));
        };
        let err = |source| MaturityError::Adapter {
            tile_id: tile_id.to_string(),
            source,
        };
        let rgb = tile.to_rgb8()?;
        let req = Frame::TileRequest(ImageFrame::new(
            rgb.width(),
            rgb.height(),
            3,
            rgb.as_u8().expect("rgb8").to_vec(),
        ));
        match adapter.exchange(&req).map_err(err)? {
            Frame::TileResponse { class, confidence } => Ok(TileVerdict {
                class: match class {
                    0 => Maturity::Young,
                    1 => Maturity::Mature,
                    c => return Err(err(AdapterError::Unexpected(format!("class {c}")))),
                },
                confidence,
                low_confidence: false,
            }),
            other => Err(err(AdapterError::Unexpected(format!(
                "message type {}",
                other.msg_type()
            )))),
        }
    }
}

// ---------------------------------------------------------------------------
// Parcel voting

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParcelVerdict {
    pub parcel_id: String,
    pub young: u32,
    pub mature: u32,
    pub maturity: Maturity,
    pub tie_broken: bool,
}

/// Mode of the tile votes; a tie goes to young and is flagged.
pub fn parcel_maturity(parcel_id: &str, votes: &[Maturity]) -> Result<ParcelVerdict, MaturityError> {
    let young = votes.iter().filter(|&&v| v == Maturity::Young).count() as u32;
    let mature = votes.iter().filter(|&&v| v == Maturity::Mature).count() as u32;
    if young + mature == 0 {
        return Err(MaturityError::NoVotes(parcel_id.to_string()));
    }
    Ok(ParcelVerdict {
        parcel_id: parcel_id.to_string(),
        young,
        mature,
        maturity: if young >= mature {
            Maturity::Young
        } else {
            Maturity::Mature
        },
        tie_broken: young == mature,
    })
}

/// Parcels with their verdicts as GeoJSON; parcels without tiles keep
/// maturity `unknown` and zero votes.
pub fn maturity_report(layer: &LabelLayer, verdicts: &BTreeMap<String, ParcelVerdict>) -> serde_json::Value {
    let mut out = layer.clone();
    for l in &mut out.labels {
        if let Some(v) = verdicts.get(&l.id) {
            l.maturity = v.maturity;
        }
    }
    io::labels_to_geojson_with(&out, |l, props| {
        let v = verdicts.get(&l.id);
        props.insert("young_votes".into(), v.map_or(0, |v| v.young).into());
        props.insert("mature_votes".into(), v.map_or(0, |v| v.mature).into());
        props.insert("tie_broken".into(), v.is_some_and(|v| v.tie_broken).into());
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoTransform, PixelBuffer, Provenance};

    fn clip(n: u32) -> Raster {
        let t = GeoTransform::new(1000.0, 2000.0, 0.5, -0.5, "EPSG:32613").unwrap();
        let data: Vec<u8> = (0..n * n * 3).map(|i| (i % 253) as u8).collect();
        Raster::new(n, n, 3, PixelBuffer::U8(data), t).unwrap()
    }

    /// Parcel over pixel rectangle [x0, x1) × [y0, y1) of the clip above.
    fn parcel(x0: f64, y0: f64, x1: f64, y1: f64, m: Maturity) -> ParcelLabel {
        let p = Polygon::rect(
            1000.0 + x0 * 0.5,
            2000.0 - y1 * 0.5,
            1000.0 + x1 * 0.5,
            2000.0 - y0 * 0.5,
        )
        .unwrap();
        ParcelLabel::new("p1", p, m, Provenance::Expert, 1).unwrap()
    }

    #[test]
    fn aligned_rectangle_gives_six_tiles() {
        let tiles = extract_tiles(
            "7_0_0",
            &clip(256),
            None,
            &parcel(32.0, 64.0, 96.0, 160.0, Maturity::Young),
            32,
        );
        assert_eq!(tiles.len(), 6);
        assert!(tiles
            .iter()
            .all(|t| t.label == Maturity::Young && t.image.width() == 32));
        assert_eq!(tiles[0].origin, (32, 64));
    }

    #[test]
    fn whole_clip_and_small_parcels() {
        assert_eq!(
            extract_tiles(
                "c",
                &clip(256),
                None,
                &parcel(0.0, 0.0, 256.0, 256.0, Maturity::Mature),
                32
            )
            .len(),
            64
        );
        assert!(extract_tiles(
            "c",
            &clip(256),
            None,
            &parcel(3.0, 3.0, 30.0, 30.0, Maturity::Mature),
            32
        )
        .is_empty());
        // Off-lattice 40×40 parcel at 10: no lattice tile fits.
        assert!(extract_tiles(
            "c",
            &clip(256),
            None,
            &parcel(10.0, 10.0, 50.0, 50.0, Maturity::Mature),
            32
        )
        .is_empty());
    }

    #[test]
    fn notch_between_probes_is_caught() {
        // 64×64 square with a thin slit reaching into the middle of the
        // first tile from the top, missing all five probes.
        let pts: Vec<Point> = [
            (0.0, 0.0),
            (10.0, 0.0),
            (10.0, 8.0),
            (11.0, 8.0),
            (11.0, 0.0),
            (64.0, 0.0),
            (64.0, 64.0),
            (0.0, 64.0),
        ]
        .iter()
        .map(|&(x, y)| Point::new(x, y))
        .collect();
        let poly = Polygon::from_vertices(&pts).unwrap();
        assert!(!tile_inside(&poly, 0, 0, 32));
        assert!(tile_inside(&poly, 32, 32, 32));
    }

    #[test]
    fn invalid_pixels_block_tiles() {
        let valid = BitMask::from_fn(256, 256, |x, _| x != 40);
        let tiles = extract_tiles(
            "c",
            &clip(256),
            Some(&valid),
            &parcel(0.0, 0.0, 64.0, 32.0, Maturity::Young),
            32,
        );
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].origin, (0, 0));
    }

    #[derive(Debug, Clone, PartialEq)]
    struct T(String, String, Maturity);
    impl TileMeta for T {
        fn tile_id(&self) -> &str {
            &self.0
        }
        fn parcel_id(&self) -> &str {
            &self.1
        }
        fn label(&self) -> Maturity {
            self.2
        }
    }

    fn tiles(young: usize, mature: usize, per_parcel: usize) -> Vec<T> {
        let mk = |n: usize, m: Maturity, tag: &'static str| {
            (0..n).map(move |i| T(format!("{tag}{i:05}"), format!("{tag}p{}", i / per_parcel), m))
        };
        mk(young, Maturity::Young, "y")
            .chain(mk(mature, Maturity::Mature, "m"))
            .collect()
    }

    #[test]
    fn down_sampling_keeps_minority() {
        let s = balance_split(tiles(10, 4, 1), [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(s.counts().train, ClassCounts { young: 4, mature: 4 });
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn balanced_input_loses_nothing() {
        let s = balance_split(tiles(40, 40, 1), [0.5, 0.25, 0.25], 9).unwrap();
        assert_eq!(s.counts().total(), 80);
        for sp in Split::ALL {
            let c = s.counts().get(sp);
            assert_eq!(c.young, c.mature);
        }
    }

    #[test]
    fn parcels_stay_whole_and_seed_reproduces() {
        let a = balance_split(tiles(60, 90, 4), [0.6, 0.2, 0.2], 5).unwrap();
        assert_eq!(a, balance_split(tiles(60, 90, 4), [0.6, 0.2, 0.2], 5).unwrap());
        let m = TileManifest::from_split(&a, 32, 5, [0.6, 0.2, 0.2]);
        m.validate().unwrap();
    }

    #[test]
    fn missing_class_is_error() {
        assert!(matches!(
            balance_split(tiles(5, 0, 1), [1.0, 0.0, 0.0], 0),
            Err(MaturityError::MissingClass("mature"))
        ));
    }

    #[test]
    fn voting() {
        use Maturity::*;
        let v = parcel_maturity("p", &[Young, Young, Mature]).unwrap();
        assert_eq!((v.maturity, v.tie_broken), (Young, false));
        assert_eq!(parcel_maturity("p", &[Mature; 5]).unwrap().maturity, Mature);
        let t = parcel_maturity("p", &[Young, Mature]).unwrap();
        assert_eq!((t.maturity, t.tie_broken), (Young, true));
        assert!(parcel_maturity("p", &[]).is_err());
    }

    #[test]
    fn flat_tile_is_low_confidence_mature() {
        let t = GeoTransform::new(0.0, 0.0, 0.5, -0.5, "").unwrap();
        let flat = Raster::new(32, 32, 3, PixelBuffer::U8(vec![77; 32 * 32 * 3]), t).unwrap();
        let v = classify_builtin(&flat, 600);
        assert_eq!(v.class, Maturity::Mature);
        assert!(v.low_confidence);
    }

    #[test]
    fn calibration_separates() {
        assert_eq!(calibrate_cutoff(&[900, 1000, 1200], &[100, 200, 400]), 900);
    }
}
