//! Pipeline configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::maturity::MaturityConfig;
use crate::segmenter::SegmenterConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            scene: None,
            labels: None,
            workdir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Side of a square grid cell, in kilometres.
    pub cell_km: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { cell_km: 2.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// IoU at or above which a predicted object matches a reference object.
    pub object_iou: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { object_iou: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Static files (the review client) served next to the API.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub clip_size: u32,
    pub tile_size: u32,
    pub paths: Paths,
    pub grid: GridConfig,
    pub segmenter: SegmenterConfig,
    pub maturity: MaturityConfig,
    pub metrics: MetricsConfig,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            clip_size: 256,
            tile_size: 32,
            paths: Paths::default(),
            grid: GridConfig::default(),
            segmenter: SegmenterConfig::default(),
            maturity: MaturityConfig::default(),
            metrics: MetricsConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, "<string>")
    }

    fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.clip_size == 0 || self.tile_size == 0 {
            return bad("clip_size and tile_size must be positive".into());
        }
        if !self.clip_size.is_multiple_of(self.tile_size) {
            return bad(format!(
                "clip_size {} is not a multiple of tile_size {}",
                self.clip_size, self.tile_size
            ));
        }
        if !(self.grid.cell_km.is_finite() && self.grid.cell_km > 0.0) {
            return bad(format!("grid.cell_km must be positive, got {}", self.grid.cell_km));
        }
        if !(0.0..=1.0).contains(&self.metrics.object_iou) {
            return bad(format!("metrics.object_iou {} outside [0, 1]", self.metrics.object_iou));
        }
        self.segmenter
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.maturity.variance_cutoff == 0 {
            return bad("maturity.variance_cutoff must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{ExternalConfig, SegmenterKind};

    #[test]
    fn default_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn full_round_trips() {
        let mut c = PipelineConfig::default();
        c.paths.scene = Some("scene.tif".into());
        c.paths.labels = Some("labels.geojson".into());
        c.segmenter.kind = SegmenterKind::External;
        c.segmenter.external = Some(ExternalConfig {
            command: Some(vec!["python".into(), "model.py".into()]),
            endpoint: None,
            timeout_ms: 5000,
        });
        c.service.static_dir = Some("ui/dist".into());
        c.maturity.seed = 9;
        let text = c.to_toml();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_toml("clip_size = 128\n[grid]\ncell_km = 1.0\n").unwrap();
        assert_eq!(c.clip_size, 128);
        assert_eq!(c.grid.cell_km, 1.0);
        assert_eq!(c.tile_size, 32);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("clip_size = 100").is_err());
        assert!(PipelineConfig::from_toml("tile_size = 0").is_err());
        assert!(PipelineConfig::from_toml("[grid]\ncell_km = -1.0").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }
}
