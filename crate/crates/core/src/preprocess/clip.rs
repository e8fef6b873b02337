use rayon::prelude::*;

use crate::geo::{BitMask, GeoError, Raster};

use super::PreprocessError;

pub const CLIP_SIZE: u32 = 256;

/// A fixed-size image clip with its label mask and data-validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPair {
    /// `{cell_id}_{row}_{col}` for clips cut from a grid cell.
    pub clip_id: String,
    /// 3-band u8 image.
    pub image: Raster,
    pub mask: BitMask,
    /// 1 where the image holds real data.
    pub validity: BitMask,
    pub source_cell: Option<u32>,
    /// Set when the source was smaller than the clip and had to be padded.
    pub padded: bool,
}

impl ClipPair {
    pub fn new(
        clip_id: impl Into<String>,
        image: Raster,
        mask: BitMask,
        validity: BitMask,
        source_cell: Option<u32>,
    ) -> Result<Self, PreprocessError> {
        let dims = (image.width(), image.height());
        if mask.dims() != dims || validity.dims() != dims {
            return Err(GeoError::DimensionMismatch(format!(
                "clip image {:?}, mask {:?}, validity {:?}",
                dims,
                mask.dims(),
                validity.dims()
            ))
            .into());
        }
        let image = image.to_rgb8()?;
        // No labels on nodata.
        let mask = mask.and(&validity)?;
        Ok(Self {
            clip_id: clip_id.into(),
            image,
            mask,
            validity,
            source_cell,
            padded: false,
        })
    }

    pub fn size(&self) -> u32 {
        self.image.width()
    }

    pub fn is_augmented(&self) -> bool {
        self.clip_id.contains('~')
    }
}

/// Window start offsets along one axis: a regular `size` stride, with the
/// last window shifted back to end exactly at `len`. A single offset 0 when
/// `len ≤ size`.
pub fn clip_offsets(len: u32, size: u32) -> Vec<u32> {
    if len <= size {
        return vec![0];
    }
    let mut offs: Vec<u32> = (0..len / size).map(|k| k * size).collect();
    if !len.is_multiple_of(size) {
        offs.push(len - size);
    }
    offs
}

/// Cut a cell raster and its label mask into `clip_size` square clips.
///
/// Every pixel is covered; edge windows overlap their neighbor instead of
/// running off the raster. A raster smaller than one clip yields a single
/// zero-padded clip with `padded` set and the pad marked invalid.
pub fn clip_cell(
    cell_id: u32,
    raster: &Raster,
    mask: &BitMask,
    validity: Option<&BitMask>,
    clip_size: u32,
) -> Result<Vec<ClipPair>, PreprocessError> {
    let dims = (raster.width(), raster.height());
    if mask.dims() != dims || validity.is_some_and(|v| v.dims() != dims) {
        return Err(GeoError::DimensionMismatch(format!("cell raster {:?} vs mask {:?}", dims, mask.dims())).into());
    }
    let rgb = raster.to_rgb8()?;
    let full_valid;
    let validity = match validity {
        Some(v) => v,
        None => {
            full_valid = BitMask::filled(dims.0, dims.1);
            &full_valid
        }
    };
    let cols = clip_offsets(dims.0, clip_size);
    let rows = clip_offsets(dims.1, clip_size);
    let padded = dims.0 < clip_size || dims.1 < clip_size;
    let windows: Vec<(usize, usize, u32, u32)> = rows
        .iter()
        .enumerate()
        .flat_map(|(ri, &r)| cols.iter().enumerate().map(move |(ci, &c)| (ri, ci, c, r)))
        .collect();
    windows
        .into_par_iter()
        .map(|(ri, ci, c, r)| {
            let (c, r) = (c as i64, r as i64);
            let image = rgb.window(c, r, clip_size, clip_size);
            let valid = validity.window(c, r, clip_size, clip_size);
            let m = mask.window(c, r, clip_size, clip_size);
            let mut pair = ClipPair::new(format!("{cell_id}_{ri}_{ci}"), image, m, valid, Some(cell_id))?;
            pair.padded = padded;
            Ok(pair)
        })
        .collect()
}
