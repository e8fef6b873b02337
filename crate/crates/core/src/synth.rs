//! Procedural training clips: row-planted agave, look-alike decoys and bare
//! soil composited into backgrounds, with labels exact to the polygons.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::io::{self, LabelLayer};
use crate::geo::{
    rasterize, BitMask, GeoError, GeoTransform, Maturity, ParcelLabel, PixelBuffer, Point, Polygon, Provenance, Raster,
};
use crate::preprocess::store::write_clip;
use crate::preprocess::{ClipPair, Split, CLIP_SIZE};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("placement {index} leaves the {size}×{size} clip")]
    OutOfBounds { index: usize, size: u32 },
    #[error("invalid texture: {0}")]
    Texture(String),
    #[error("invalid recipe: {0}")]
    Recipe(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    AgaveRows,
    DecoyRows,
    BareSoil,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub kind: TextureKind,
    /// Distance between rows, 4..=16 px.
    pub row_spacing_px: f64,
    pub row_angle_deg: f64,
    pub base_color: [u8; 3],
    /// 0..=1.
    pub contrast: f64,
    pub seed: u64,
}

impl TextureSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(4.0..=16.0).contains(&self.row_spacing_px) {
            return Err(SynthError::Texture(format!(
                "row spacing {} outside 4..=16",
                self.row_spacing_px
            )));
        }
        if !(0.0..=1.0).contains(&self.contrast) || !self.row_angle_deg.is_finite() {
            return Err(SynthError::Texture(format!(
                "contrast {} / angle {}",
                self.contrast, self.row_angle_deg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Pixel coordinates, x right and y down, within `[0, size]²`.
    pub polygon: Polygon,
    pub texture: TextureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat([u8; 3]),
    Texture(TextureSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRecipe {
    pub clip_id: String,
    pub size: u32,
    pub transform: GeoTransform,
    pub background: Background,
    pub placements: Vec<Placement>,
    /// Width of the alpha ramp at placement edges, 0..=8 px.
    pub feather_px: u32,
}

const SOIL: [f32; 3] = [150.0, 122.0, 92.0];

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn color(c: [u8; 3]) -> [f32; 3] {
    c.map(f32::from)
}

/// Render a texture over the pixels inside `bbox` (x0, y0, x1, y1) of a
/// `size`² canvas; pixels outside are left at zero.
fn render_texture(spec: &TextureSpec, size: u32, bbox: (i64, i64, i64, i64)) -> Vec<[f32; 3]> {
    let n = size as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = vec![[0.0f32; 3]; n * n];
    let (x0, y0) = (bbox.0.max(0) as usize, bbox.1.max(0) as usize);
    let (x1, y1) = (
        bbox.2.clamp(0, size as i64) as usize,
        bbox.3.clamp(0, size as i64) as usize,
    );
    let c = (spec.contrast as f32).clamp(0.0, 1.0);
    let base = color(spec.base_color);
    match spec.kind {
        TextureKind::Noise => {
            for y in y0..y1 {
                for x in x0..x1 {
                    let d: f32 = rng.random_range(-1.0..1.0) * 127.0 * c;
                    out[y * n + x] = base.map(|v| v + d);
                }
            }
        }
        TextureKind::BareSoil => {
            // Bilinear value noise on a 16 px lattice plus fine grain.
            let cells = n / 16 + 2;
            let lattice: Vec<f32> = (0..cells * cells).map(|_| rng.random_range(-1.0..1.0)).collect();
            for y in y0..y1 {
                for x in x0..x1 {
                    let (fx, fy) = (x as f32 / 16.0, y as f32 / 16.0);
                    let (ix, iy) = (fx as usize, fy as usize);
                    let (tx, ty) = (fx - ix as f32, fy - iy as f32);
                    let l = |i: usize, j: usize| lattice[j * cells + i];
                    let v = l(ix, iy) * (1.0 - tx) * (1.0 - ty)
                        + l(ix + 1, iy) * tx * (1.0 - ty)
                        + l(ix, iy + 1) * (1.0 - tx) * ty
                        + l(ix + 1, iy + 1) * tx * ty;
                    let grain: f32 = rng.random_range(-2.0..2.0);
                    let d = v * 40.0 * c + grain;
                    out[y * n + x] = base.map(|b| b + d);
                }
            }
        }
        TextureKind::AgaveRows | TextureKind::DecoyRows => {
            let (sin, cos) = (
                spec.row_angle_deg.to_radians().sin(),
                spec.row_angle_deg.to_radians().cos(),
            );
            let s = spec.row_spacing_px;
            let soil = lerp3(SOIL, base, 0.15);
            let fg = lerp3(soil, base, c);
            let center = size as f64 / 2.0;
            if spec.kind == TextureKind::DecoyRows {
                // Continuous furrows: a smooth periodic profile across rows.
                let phase: f64 = rng.random_range(0.0..s);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (dx, dy) = (x as f64 + 0.5 - center, y as f64 + 0.5 - center);
                        let v = -dx * sin + dy * cos + phase;
                        let t = 0.5 + 0.5 * (std::f64::consts::TAU * v / s).cos();
                        out[y * n + x] = lerp3(soil, fg, t as f32);
                    }
                }
            } else {
                // Rosettes along rows, splatted as bright-centered disks.
                let mut intensity = vec![0.0f32; n * n];
                let reach = (n as f64) * 0.75;
                let radius = s * 0.3;
                let mut v = -reach;
                while v < reach {
                    let mut u = -reach + rng.random_range(0.0..s * 0.55);
                    while u < reach {
                        let ju: f64 = rng.random_range(-0.06..0.06) * s;
                        let jv: f64 = rng.random_range(-0.08..0.08) * s;
                        let r = radius * rng.random_range(0.85..1.15);
                        let (pu, pv) = (u + ju, v + jv);
                        let px = center + pu * cos - pv * sin;
                        let py = center + pu * sin + pv * cos;
                        let (lo_x, hi_x) = ((px - r).floor() as i64, (px + r).ceil() as i64);
                        let (lo_y, hi_y) = ((py - r).floor() as i64, (py + r).ceil() as i64);
                        if hi_x >= x0 as i64 && lo_x < x1 as i64 && hi_y >= y0 as i64 && lo_y < y1 as i64 {
                            for yy in lo_y.max(y0 as i64)..hi_y.min(y1 as i64) {
                                for xx in lo_x.max(x0 as i64)..hi_x.min(x1 as i64) {
                                    let d2 = (xx as f64 + 0.5 - px).powi(2) + (yy as f64 + 0.5 - py).powi(2);
                                    let t = (1.0 - d2 / (r * r)).max(0.0) as f32;
                                    let cell = &mut intensity[yy as usize * n + xx as usize];
                                    *cell = cell.max(t.sqrt());
                                }
                            }
                        }
                        u += s * rng.random_range(0.5..0.6);
                    }
                    v += s;
                }
                for y in y0..y1 {
                    for x in x0..x1 {
                        out[y * n + x] = lerp3(soil, fg, intensity[y * n + x]);
                    }
                }
            }
        }
    }
    out
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.x - a.x - t * dx).powi(2) + (p.y - a.y - t * dy).powi(2)).sqrt()
}

impl CompositeRecipe {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.size == 0 {
            return Err(SynthError::Recipe("size must be > 0".into()));
        }
        if self.feather_px > 8 {
            return Err(SynthError::Recipe(format!("feather {} > 8", self.feather_px)));
        }
        if let Background::Texture(t) = &self.background {
            if t.kind != TextureKind::BareSoil && t.kind != TextureKind::Noise {
                t.validate()?;
            }
        }
        let s = self.size as f64;
        for (index, p) in self.placements.iter().enumerate() {
            if p.texture.kind != TextureKind::BareSoil && p.texture.kind != TextureKind::Noise {
                p.texture.validate()?;
            }
            let b = p.polygon.bbox();
            if b.min_x < 0.0 || b.min_y < 0.0 || b.max_x > s || b.max_y > s {
                return Err(SynthError::OutOfBounds { index, size: self.size });
            }
        }
        Ok(())
    }

    /// Placement polygon in map coordinates.
    pub fn map_polygon(&self, p: &Polygon) -> Polygon {
        p.map_points(|q| {
            let (x, y) = self.transform.pixel_to_map(q.x, q.y);
            Point::new(x, y)
        })
    }

    /// Label mask: agave placements only, never feathered.
    pub fn label_mask(&self) -> Result<BitMask, SynthError> {
        let polys: Vec<Polygon> = self
            .placements
            .iter()
            .filter(|p| p.texture.kind == TextureKind::AgaveRows)
            .map(|p| self.map_polygon(&p.polygon))
            .collect();
        Ok(rasterize(
            &polys,
            &self.transform.crs_id,
            &self.transform,
            self.size,
            self.size,
        )?)
    }

    /// Agave placements as labels in map coordinates.
    pub fn labels(&self) -> Vec<ParcelLabel> {
        self.placements
            .iter()
            .filter(|p| p.texture.kind == TextureKind::AgaveRows)
            .enumerate()
            .map(|(k, p)| ParcelLabel {
                id: format!("{}#{k}", self.clip_id),
                polygon: self.map_polygon(&p.polygon),
                maturity: Maturity::Unknown,
                provenance: Provenance::Synthetic,
                phase: 3,
            })
            .collect()
    }
}

/// Render a recipe into a clip whose mask is the rasterized agave placements.
pub fn composite(recipe: &CompositeRecipe) -> Result<ClipPair, SynthError> {
    recipe.validate()?;
    let s = recipe.size;
    let n = s as usize;
    let mut canvas = match &recipe.background {
        Background::Flat(c) => vec![color(*c); n * n],
        Background::Texture(t) => render_texture(t, s, (0, 0, s as i64, s as i64)),
    };
    let f = recipe.feather_px as f64;
    for p in &recipe.placements {
        let b = p.polygon.bbox();
        let pad = f.ceil() + 1.0;
        let bbox = (
            (b.min_x - pad).floor() as i64,
            (b.min_y - pad).floor() as i64,
            (b.max_x + pad).ceil() as i64,
            (b.max_y + pad).ceil() as i64,
        );
        let tex = render_texture(&p.texture, s, bbox);
        for y in bbox.1.max(0)..bbox.3.min(s as i64) {
            for x in bbox.0.max(0)..bbox.2.min(s as i64) {
                let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                let inside = p.polygon.contains(c);
                let alpha = if f == 0.0 {
                    if inside {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let d = p
                        .polygon
                        .edges()
                        .map(|(a, b)| segment_distance(c, a, b))
                        .fold(f64::INFINITY, f64::min);
                    let sd = if inside { d } else { -d };
                    ((sd + f / 2.0) / f).clamp(0.0, 1.0)
                } as f32;
                if alpha > 0.0 {
                    let i = y as usize * n + x as usize;
                    canvas[i] = lerp3(canvas[i], tex[i], alpha);
                }
            }
        }
    }
    let data: Vec<u8> = canvas
        .iter()
        .flat_map(|px| px.map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect();
    let image = Raster::new(s, s, 3, PixelBuffer::U8(data), recipe.transform.clone())?;
    let mask = recipe.label_mask()?;
    ClipPair::new(recipe.clip_id.clone(), image, mask, BitMask::filled(s, s), None)
        .map_err(|e| SynthError::Recipe(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Mixed,
    Agave,
    Decoy,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixed" => Ok(Profile::Mixed),
            "agave" => Ok(Profile::Agave),
            "decoy" => Ok(Profile::Decoy),
            _ => Err(format!("unknown profile {s:?} (mixed, agave, decoy)")),
        }
    }
}

/// Snap to the quarter-pixel grid so map coordinates stay exact in binary.
fn quarter(v: f64) -> f64 {
    (v * 4.0).round() / 4.0
}

fn random_rect(rng: &mut ChaCha8Rng, size: f64) -> Option<Polygon> {
    let (w, h) = (rng.random_range(70.0..130.0), rng.random_range(70.0..130.0));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = (angle.sin(), angle.cos());
    let half_x = (w * cos.abs() + h * sin.abs()) / 2.0;
    let half_y = (w * sin.abs() + h * cos.abs()) / 2.0;
    let margin = 4.0;
    if 2.0 * half_x + 2.0 * margin > size || 2.0 * half_y + 2.0 * margin > size {
        return None;
    }
    let cx = rng.random_range(half_x + margin..size - half_x - margin);
    let cy = rng.random_range(half_y + margin..size - half_y - margin);
    let corners: Vec<Point> = [(-w, -h), (w, -h), (w, h), (-w, h)]
        .iter()
        .map(|&(u, v)| {
            let (u, v) = (u / 2.0, v / 2.0);
            Point::new(quarter(cx + u * cos - v * sin), quarter(cy + u * sin + v * cos))
        })
        .collect();
    Polygon::from_vertices(&corners).ok()
}

fn random_texture(rng: &mut ChaCha8Rng, kind: TextureKind) -> TextureSpec {
    let jitter = |rng: &mut ChaCha8Rng, c: u8| c.saturating_add_signed(rng.random_range(-20i8..=20));
    let base = match kind {
        TextureKind::AgaveRows => [150, 190, 170],
        TextureKind::DecoyRows => [70, 96, 48],
        _ => [150, 122, 92],
    };
    TextureSpec {
        kind,
        row_spacing_px: rng.random_range(5.0..10.0),
        row_angle_deg: rng.random_range(0.0..180.0),
        base_color: base.map(|c| jitter(rng, c)),
        contrast: rng.random_range(0.6..0.9),
        seed: rng.random(),
    }
}

/// A seeded random recipe for `profile`: a bare-soil background with one to
/// three non-overlapping rotated-rectangle placements.
pub fn random_recipe(seed: u64, clip_id: &str, transform: GeoTransform, profile: Profile) -> CompositeRecipe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = CLIP_SIZE;
    let mut background = random_texture(&mut rng, TextureKind::BareSoil);
    background.contrast = rng.random_range(0.2..0.5);
    let want = match profile {
        Profile::Mixed => rng.random_range(1..=3),
        _ => rng.random_range(1..=2),
    };
    let mut placements: Vec<Placement> = Vec::new();
    let gap = 24.0;
    for _ in 0..60 {
        if placements.len() == want {
            break;
        }
        let Some(poly) = random_rect(&mut rng, size as f64) else {
            continue;
        };
        let b = poly.bbox();
        let clear = placements.iter().all(|p| {
            let o = p.polygon.bbox();
            b.min_x > o.max_x + gap || o.min_x > b.max_x + gap || b.min_y > o.max_y + gap || o.min_y > b.max_y + gap
        });
        if !clear {
            continue;
        }
        let kind = match profile {
            Profile::Agave => TextureKind::AgaveRows,
            Profile::Decoy => TextureKind::DecoyRows,
            Profile::Mixed if rng.random_bool(0.6) => TextureKind::AgaveRows,
            Profile::Mixed => TextureKind::DecoyRows,
        };
        placements.push(Placement {
            polygon: poly,
            texture: random_texture(&mut rng, kind),
        });
    }
    CompositeRecipe {
        clip_id: clip_id.to_string(),
        size,
        transform,
        background: Background::Texture(background),
        placements,
        feather_px: rng.random_range(0..=3),
    }
}

/// Per-item seed, so an item does not depend on how many came before it.
fn item_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random()
}

pub const DELTA_ASSUMPTION: &str = "all clips added in phase 3 are synthetic; no newly labeled real clips are included";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntry {
    pub clip_id: String,
    pub split: Split,
    pub agave_px: u64,
    pub recipe: CompositeRecipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub profile: Profile,
    pub n: usize,
    pub val: usize,
    pub assumption: String,
    pub clips: Vec<SynthEntry>,
}

impl SynthManifest {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let bytes = std::fs::read(path).map_err(|source| GeoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_slice(&bytes).map_err(|e| GeoError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?)
    }
}

pub fn synth_transform(index: usize) -> GeoTransform {
    // Synthetic clips sit side by side on a made-up UTM strip.
    GeoTransform {
        origin_x: 500_000.0 + index as f64 * CLIP_SIZE as f64 * 0.5,
        origin_y: 2_000_000.0,
        pixel_size_x: 0.5,
        pixel_size_y: -0.5,
        crs_id: "EPSG:32613".into(),
    }
}

/// `n` seeded clips; the last `val` are marked for validation, the rest for
/// training.
pub fn generate_batch(
    n: usize,
    val: usize,
    seed: u64,
    profile: Profile,
) -> Result<(Vec<ClipPair>, SynthManifest), SynthError> {
    if val > n {
        return Err(SynthError::Recipe(format!("val count {val} exceeds n {n}")));
    }
    let recipes: Vec<CompositeRecipe> = (0..n)
        .map(|i| {
            random_recipe(
                item_seed(seed, i as u64),
                &format!("syn{seed}-{i:04}"),
                synth_transform(i),
                profile,
            )
        })
        .collect();
    let clips: Vec<ClipPair> = recipes.par_iter().map(composite).collect::<Result<_, _>>()?;
    let entries = recipes
        .into_iter()
        .zip(&clips)
        .enumerate()
        .map(|(i, (recipe, clip))| SynthEntry {
            clip_id: clip.clip_id.clone(),
            split: if i >= n - val { Split::Val } else { Split::Train },
            agave_px: clip.mask.count_ones(),
            recipe,
        })
        .collect();
    let manifest = SynthManifest {
        seed,
        profile,
        n,
        val,
        assumption: DELTA_ASSUMPTION.into(),
        clips: entries,
    };
    Ok((clips, manifest))
}

/// Write clips in the standard layout plus `manifest.json`.
pub fn write_batch(dir: &Path, clips: &[ClipPair], manifest: &SynthManifest) -> Result<(), SynthError> {
    clips
        .par_iter()
        .try_for_each(|c| write_clip(dir, c, Some(Provenance::Synthetic)))?;
    io::write_json(&dir.join("manifest.json"), manifest)?;
    Ok(())
}

/// A mosaic scene of `cols × rows` synthetic clips, as a 16-bit raster and
/// its agave labels, for running the full preprocessing pipeline.
pub struct SyntheticScene {
    pub raster: Raster,
    pub labels: LabelLayer,
    pub clips: Vec<ClipPair>,
}

pub fn generate_scene(cols: u32, rows: u32, seed: u64, profile: Profile) -> Result<SyntheticScene, SynthError> {
    let s = CLIP_SIZE;
    let scene_t = GeoTransform::new(500_000.0, 2_000_000.0, 0.5, -0.5, "EPSG:32613")?;
    let recipes: Vec<CompositeRecipe> = (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let t = scene_t.window((c * s) as i64, (r * s) as i64);
            random_recipe(item_seed(seed, i as u64), &format!("scene{seed}-{r}-{c}"), t, profile)
        })
        .collect();
    let clips: Vec<ClipPair> = recipes.par_iter().map(composite).collect::<Result<_, _>>()?;
    let (w, h) = (cols * s, rows * s);
    let mut data = vec![0u16; (w * h * 3) as usize];
    for (i, clip) in clips.iter().enumerate() {
        let (r, c) = (i as u32 / cols, i as u32 % cols);
        let px = clip.image.as_u8().expect("rgb8");
        for y in 0..s {
            for x in 0..s {
                let src = ((y * s + x) * 3) as usize;
                let dst = (((r * s + y) * w + c * s + x) * 3) as usize;
                for b in 0..3 {
                    // Spread 8-bit values over a 12-bit range like the sensor data.
                    data[dst + b] = u16::from(px[src + b]) * 16 + 8;
                }
            }
        }
    }
    let raster = Raster::new(w, h, 3, PixelBuffer::U16(data), scene_t)?;
    let labels = LabelLayer {
        crs: "EPSG:32613".into(),
        labels: recipes.iter().flat_map(|r| r.labels()).collect(),
    };
    Ok(SyntheticScene { raster, labels, clips })
}

/// A 32×32 maturity tile. Young plantations are dense small rosettes;
/// mature ones are large, smooth, widely spaced canopies.
pub fn maturity_tile(class: Maturity, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let young = class == Maturity::Young;
    let spec = TextureSpec {
        kind: TextureKind::AgaveRows,
        row_spacing_px: if young {
            rng.random_range(4.0..6.0)
        } else {
            rng.random_range(12.0..16.0)
        },
        row_angle_deg: rng.random_range(0.0..180.0),
        base_color: if young { [150, 190, 165] } else { [88, 125, 108] },
        contrast: if young {
            rng.random_range(0.8..1.0)
        } else {
            rng.random_range(0.35..0.55)
        },
        seed: rng.random(),
    };
    let n = 32;
    let tex = render_texture(&spec, n, (0, 0, n as i64, n as i64));
    let data = tex
        .iter()
        .flat_map(|px| px.map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect();
    Raster::new(n, n, 3, PixelBuffer::U8(data), GeoTransform::pixel_grid(n, "")).expect("tile shape")
}
