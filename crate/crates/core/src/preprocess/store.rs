//! On-disk clip layout and the scene → clips pipeline.
//!
//! A clip directory holds, per clip id:
//! `{id}.png` (RGB image), `{id}.mask.png` (0/255 label), `{id}.json`
//! (sidecar with geotransform) and, only when some pixels are nodata,
//! `{id}.valid.png`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::io::{self, LabelLayer};
use crate::geo::{make_grid, rasterize, BitMask, GeoError, GeoTransform, GridCell, Provenance};

use super::{clip_cell, resample_to_u8, ClipPair, PreprocessError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub clip_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_cell: Option<u32>,
    pub transform: GeoTransform,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub padded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

pub fn image_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("{clip_id}.png"))
}

pub fn mask_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("{clip_id}.mask.png"))
}

fn valid_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("{clip_id}.valid.png"))
}

fn sidecar_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("{clip_id}.json"))
}

pub fn write_clip(dir: &Path, clip: &ClipPair, provenance: Option<Provenance>) -> Result<(), GeoError> {
    io::write_raster_png(&image_path(dir, &clip.clip_id), &clip.image)?;
    io::write_mask_png(&mask_path(dir, &clip.clip_id), &clip.mask)?;
    let vp = valid_path(dir, &clip.clip_id);
    if clip.validity.count_ones() == u64::from(clip.size()) * u64::from(clip.image.height()) {
        if vp.exists() {
            std::fs::remove_file(&vp).map_err(|source| GeoError::Io {
                path: vp.display().to_string(),
                source,
            })?;
        }
    } else {
        io::write_mask_png(&vp, &clip.validity)?;
    }
    let side = ClipSidecar {
        clip_id: clip.clip_id.clone(),
        source_cell: clip.source_cell,
        transform: clip.image.transform().clone(),
        padded: clip.padded,
        provenance,
    };
    io::write_json(&sidecar_path(dir, &clip.clip_id), &side)
}

pub fn read_sidecar(dir: &Path, clip_id: &str) -> Result<ClipSidecar, GeoError> {
    let p = sidecar_path(dir, clip_id);
    let bytes = std::fs::read(&p).map_err(|source| GeoError::Io {
        path: p.display().to_string(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| GeoError::Decode {
        path: p.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_clip(dir: &Path, clip_id: &str) -> Result<ClipPair, GeoError> {
    let side = read_sidecar(dir, clip_id)?;
    let image = io::read_rgb_png(&image_path(dir, clip_id), side.transform)?;
    let (w, h) = (image.width(), image.height());
    let mp = mask_path(dir, clip_id);
    let mask = if mp.exists() {
        io::read_mask_png(&mp)?
    } else {
        BitMask::new(w, h)
    };
    let vp = valid_path(dir, clip_id);
    let validity = if vp.exists() {
        io::read_mask_png(&vp)?
    } else {
        BitMask::filled(w, h)
    };
    let mut pair =
        ClipPair::new(side.clip_id, image, mask, validity, side.source_cell).map_err(|e| GeoError::Decode {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    pair.padded = side.padded;
    Ok(pair)
}

/// Clip ids in a directory (those with a sidecar), sorted.
pub fn list_clips(dir: &Path) -> Result<Vec<String>, GeoError> {
    let rd = std::fs::read_dir(dir).map_err(|source| GeoError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut ids = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| GeoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".json") {
            if entry.path().with_file_name(format!("{id}.png")).exists() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[derive(Debug, Clone)]
pub struct SceneOptions {
    pub cell_size_m: f64,
    pub clip_size: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub cells: Vec<GridCell>,
    /// Cells with at least one clip.
    pub cells_with_data: Vec<u32>,
    pub clips: usize,
    pub labels: usize,
}

/// Stretch a scene to 8 bits, lay the grid over it, rasterize the labels
/// per cell and cut every cell into clips written to `out/clips`.
///
/// Clips with no valid pixel (parts of boundary cells past the data edge)
/// are not written.
pub fn preprocess_scene(
    scene: &Path,
    labels: &Path,
    opts: &SceneOptions,
    out: &Path,
) -> Result<PreprocessSummary, PreprocessError> {
    let tif = io::read_geotiff(scene)?;
    let layer = io::read_labels(labels)?;
    let validity = tif.validity();
    let raster = resample_to_u8(&tif.raster, Some(&validity))?;
    preprocess_raster(&raster, &validity, &layer, opts, out)
}

pub fn preprocess_raster(
    raster: &crate::geo::Raster,
    validity: &BitMask,
    layer: &LabelLayer,
    opts: &SceneOptions,
    out: &Path,
) -> Result<PreprocessSummary, PreprocessError> {
    let t = raster.transform();
    if !crate::geo::crs_eq(&layer.crs, &t.crs_id) {
        return Err(GeoError::CrsMismatch {
            expected: t.crs_id.clone(),
            found: layer.crs.clone(),
        }
        .into());
    }
    let cells = make_grid(t.bounds(raster.width(), raster.height()), opts.cell_size_m)?;
    let clip_dir = out.join("clips");
    let polygons = layer.polygons();
    let mut cells_with_data = Vec::new();
    let mut n_clips = 0;
    for cell in &cells {
        let (c0, r0) = t.map_to_pixel(cell.bounds.min_x, cell.bounds.max_y);
        let (c1, r1) = t.map_to_pixel(cell.bounds.max_x, cell.bounds.min_y);
        let (c0, r0) = (c0.round() as i64, r0.round() as i64);
        let (w, h) = ((c1.round() as i64 - c0) as u32, (r1.round() as i64 - r0) as u32);
        let win = raster.window(c0, r0, w, h);
        let valid = validity.window(c0, r0, w, h);
        if valid.is_empty() {
            continue;
        }
        let local: Vec<_> = polygons
            .iter()
            .filter(|p| p.bbox().intersects(&cell.bounds))
            .cloned()
            .collect();
        let mask = rasterize(&local, &layer.crs, win.transform(), w, h)?;
        let clips: Vec<ClipPair> = clip_cell(cell.cell_id, &win, &mask, Some(&valid), opts.clip_size)?
            .into_iter()
            .filter(|c| !c.validity.is_empty())
            .collect();
        clips
            .par_iter()
            .try_for_each(|c| write_clip(&clip_dir, c, Some(Provenance::Expert)))?;
        if !clips.is_empty() {
            cells_with_data.push(cell.cell_id);
        }
        n_clips += clips.len();
    }
    let summary = PreprocessSummary {
        cells,
        cells_with_data,
        clips: n_clips,
        labels: layer.labels.len(),
    };
    io::write_json(&out.join("grid.json"), &summary)?;
    Ok(summary)
}
