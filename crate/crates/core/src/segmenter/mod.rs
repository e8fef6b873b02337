//! Clip-level segmentation: a built-in texture baseline, external models
//! behind the AGV1 adapter protocol, and proposal extraction.

pub mod adapter;
mod baseline;
pub mod protocol;

use serde::{Deserialize, Serialize};

use crate::geo::{polygonize, BitMask, GeoTransform, Maturity, ParcelLabel, Provenance, Raster};

pub use adapter::{Adapter, AdapterError, HttpAdapter, SubprocessAdapter};
pub use baseline::{builtin_baseline, texture_score, BaselineParams, SCORE_ONE};
use protocol::{Frame, ImageFrame};

#[derive(Debug, thiserror::Error)]
pub enum SegmenterError {
    #[error("adapter failed on {clip_id}: {source}")]
    Adapter {
        clip_id: String,
        #[source]
        source: AdapterError,
    },
    #[error("invalid input {clip_id}: {message}")]
    InvalidInput { clip_id: String, message: String },
    #[error("invalid segmenter config: {0}")]
    Config(String),
}

/// Per-pixel agave probability quantized to u8 (255 ⇔ 1.0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbabilityMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u8>,
}

impl ProbabilityMap {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize, "map size");
        Self { width, height, values }
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![0; width as usize * height as usize])
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[(y * self.width + x) as usize]
    }

    /// Pixels with probability ≥ `threshold`.
    pub fn threshold(&self, threshold: u8) -> BitMask {
        BitMask::from_fn(self.width, self.height, |x, y| self.get(x, y) >= threshold)
    }

    /// Rounded mean probability over the set pixels of `mask` (0 if empty).
    pub fn mean_under(&self, mask: &BitMask) -> u8 {
        let (mut sum, mut n) = (0u64, 0u64);
        for (x, y) in mask.ones() {
            if x < self.width && y < self.height {
                sum += self.get(x, y) as u64;
                n += 1;
            }
        }
        (sum + n / 2).checked_div(n).unwrap_or(0) as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    #[default]
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Program and arguments of a stdio adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    /// Base URL of an HTTP adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub kind: SegmenterKind,
    pub threshold: u8,
    pub min_component_px: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
    pub baseline: BaselineParams,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            kind: SegmenterKind::Builtin,
            threshold: 128,
            min_component_px: 64,
            external: None,
            baseline: BaselineParams::default(),
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmenterError> {
        if self.threshold == 0 {
            return Err(SegmenterError::Config("threshold must be in 1..=255".into()));
        }
        let b = &self.baseline;
        if b.lag_min < 2 || b.lag_min > b.lag_max || b.corr_window == 0 || b.std_window == 0 {
            return Err(SegmenterError::Config(format!("bad baseline parameters {b:?}")));
        }
        if self.kind == SegmenterKind::External {
            match &self.external {
                Some(ExternalConfig {
                    command: Some(c),
                    endpoint: None,
                    ..
                }) if !c.is_empty() => {}
                Some(ExternalConfig {
                    command: None,
                    endpoint: Some(_),
                    ..
                }) => {}
                _ => {
                    return Err(SegmenterError::Config(
                        "external kind needs exactly one of command or endpoint".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Build the adapter for an external config, if any.
    pub fn adapter(&self, workers: usize) -> Result<Option<Adapter>, SegmenterError> {
        self.validate()?;
        let Some(ext) = self.external.as_ref().filter(|_| self.kind == SegmenterKind::External) else {
            return Ok(None);
        };
        Ok(Some(match (&ext.command, &ext.endpoint) {
            (Some(cmd), _) => Adapter::Subprocess(SubprocessAdapter::new(cmd.clone(), ext.timeout_ms, workers)),
            (None, Some(url)) => Adapter::Http(HttpAdapter::new(url, ext.timeout_ms)),
            (None, None) => unreachable!("validated"),
        }))
    }
}

/// Runs clips through the configured model.
pub struct Segmenter {
    cfg: SegmenterConfig,
    adapter: Option<Adapter>,
}

impl Segmenter {
    pub fn new(cfg: SegmenterConfig) -> Result<Self, SegmenterError> {
        Self::with_workers(cfg, rayon::current_num_threads())
    }

    pub fn with_workers(cfg: SegmenterConfig, workers: usize) -> Result<Self, SegmenterError> {
        let adapter = cfg.adapter(workers)?;
        Ok(Self { cfg, adapter })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.cfg
    }

    /// Probability map for one RGB u8 clip. The builtin model never fails;
    /// an external map is returned verbatim.
    pub fn infer(&self, clip_id: &str, clip: &Raster) -> Result<ProbabilityMap, SegmenterError> {
        let invalid = |message: String| SegmenterError::InvalidInput {
            clip_id: clip_id.to_string(),
            message,
        };
        let Some(adapter) = &self.adapter else {
            return Ok(builtin_baseline(clip, &self.cfg.baseline));
        };
        let rgb = clip.to_rgb8().map_err(|e| invalid(e.to_string()))?;
        let (w, h) = (rgb.width(), rgb.height());
        let request = Frame::SegmentRequest(ImageFrame::new(w, h, 3, rgb.as_u8().expect("rgb8").to_vec()));
        let adapter_err = |source| SegmenterError::Adapter {
            clip_id: clip_id.to_string(),
            source,
        };
        match adapter.exchange(&request).map_err(adapter_err)? {
            Frame::SegmentResponse(img) if img.width == w && img.height == h => Ok(ProbabilityMap::new(w, h, img.data)),
            Frame::SegmentResponse(img) => Err(adapter_err(AdapterError::Unexpected(format!(
                "map is {}×{}, clip is {w}×{h}",
                img.width, img.height
            )))),
            other => Err(adapter_err(AdapterError::Unexpected(format!(
                "message type {}",
                other.msg_type()
            )))),
        }
    }

    pub fn extract_proposals(
        &self,
        clip_id: &str,
        map: &ProbabilityMap,
        transform: &GeoTransform,
        phase: u8,
    ) -> Vec<ParcelLabel> {
        extract_proposals(map, &self.cfg, transform, clip_id, phase)
    }
}

/// Threshold a map and drop 4-connected components under `min_component_px`.
pub fn proposal_mask(map: &ProbabilityMap, cfg: &SegmenterConfig) -> BitMask {
    let mask = map.threshold(cfg.threshold);
    let mut kept = BitMask::new(map.width, map.height);
    for comp in crate::geo::label_components(&mask) {
        if comp.len() as u64 >= u64::from(cfg.min_component_px) {
            for (x, y) in comp {
                kept.set(x, y, true);
            }
        }
    }
    kept
}

/// Candidate parcels from a probability map, one per surviving component,
/// with ids `{clip_id}#{k}`.
pub fn extract_proposals(
    map: &ProbabilityMap,
    cfg: &SegmenterConfig,
    transform: &GeoTransform,
    clip_id: &str,
    phase: u8,
) -> Vec<ParcelLabel> {
    polygonize(&proposal_mask(map, cfg), transform)
        .into_iter()
        .enumerate()
        .map(|(k, polygon)| ParcelLabel {
            id: format!("{clip_id}#{k}"),
            polygon,
            maturity: Maturity::Unknown,
            provenance: Provenance::ModelProposed,
            phase,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::rasterize_unchecked;

    fn t() -> GeoTransform {
        GeoTransform::new(100.0, 200.0, 0.5, -0.5, "EPSG:32613").unwrap()
    }

    fn blobs(sizes: &[(u32, u32, u32, u32)]) -> ProbabilityMap {
        let mut m = ProbabilityMap::zeros(64, 64);
        for &(x0, y0, w, h) in sizes {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    m.values[(y * 64 + x) as usize] = 200;
                }
            }
        }
        m
    }

    #[test]
    fn empty_map_no_proposals() {
        let cfg = SegmenterConfig::default();
        assert!(extract_proposals(&ProbabilityMap::zeros(64, 64), &cfg, &t(), "c", 2).is_empty());
    }

    #[test]
    fn small_components_dropped() {
        let cfg = SegmenterConfig::default();
        let one = extract_proposals(&blobs(&[(2, 2, 10, 10)]), &cfg, &t(), "c", 2);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].provenance, Provenance::ModelProposed);
        assert_eq!(one[0].maturity, Maturity::Unknown);
        // 30 px and 300 px.
        let map = blobs(&[(0, 0, 5, 6), (20, 20, 15, 20)]);
        let props = extract_proposals(&map, &cfg, &t(), "c", 2);
        assert_eq!(props.len(), 1);
        let polys: Vec<_> = props.iter().map(|p| p.polygon.clone()).collect();
        assert_eq!(rasterize_unchecked(&polys, &t(), 64, 64), proposal_mask(&map, &cfg));
    }

    #[test]
    fn count_monotone_in_min_size() {
        let map = blobs(&[(0, 0, 5, 6), (20, 20, 15, 20), (40, 0, 9, 9), (50, 50, 12, 12)]);
        let mut last = usize::MAX;
        for min in [0, 10, 31, 82, 145, 301, 1000] {
            let cfg = SegmenterConfig {
                min_component_px: min,
                ..Default::default()
            };
            let n = extract_proposals(&map, &cfg, &t(), "c", 2).len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn mean_under_rounds() {
        let m = ProbabilityMap::new(2, 1, vec![1, 2]);
        assert_eq!(m.mean_under(&BitMask::filled(2, 1)), 2);
        assert_eq!(m.mean_under(&BitMask::new(2, 1)), 0);
    }

    #[test]
    fn config_validation() {
        let mut c = SegmenterConfig {
            threshold: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.threshold = 1;
        c.kind = SegmenterKind::External;
        assert!(c.validate().is_err());
        c.external = Some(ExternalConfig {
            command: Some(vec!["x".into()]),
            endpoint: None,
            timeout_ms: 10,
        });
        assert!(c.validate().is_ok());
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<SegmenterConfig>(&s).unwrap(), c);
    }
}
