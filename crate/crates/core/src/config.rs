//! Pipeline configuration, stored as JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::fusion::{Pooling, DEFAULT_OCTAVES};
use crate::geometry::{default_focal, PatchSpec};
use crate::tempfilter::FilterConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const SEED_ENV: &str = "DAHYF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FocalPolicy {
    /// Every patch spec must carry its own focal length.
    Explicit,
    /// Missing focal lengths fall back to the frame diagonal.
    #[default]
    SqrtFallback,
}

impl FocalPolicy {
    pub fn resolve(&self, spec: &PatchSpec) -> Result<f64> {
        match (self, spec.focal) {
            (_, Some(f)) => Ok(f),
            (FocalPolicy::Explicit, None) => Err(Error::invalid(
                "focal length required by the explicit focal policy",
            )),
            (FocalPolicy::SqrtFallback, None) => default_focal(spec.frame_w, spec.frame_h),
        }
    }
}

fn config_version() -> u32 {
    CONFIG_FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(default = "config_version")]
    pub format_version: u32,
    pub codec: CodecConfig,
    pub filter: FilterConfig,
    /// Hand model file; the built-in toy model when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub focal_policy: FocalPolicy,
    pub pe_octaves: usize,
    pub pooling: Pooling,
    pub negative_target: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            codec: CodecConfig::default(),
            filter: FilterConfig::default(),
            model_path: None,
            focal_policy: FocalPolicy::default(),
            pe_octaves: DEFAULT_OCTAVES,
            pooling: Pooling::Mean,
            negative_target: -1.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::malformed(
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        self.codec.validate()?;
        self.filter.validate()?;
        if self.pe_octaves == 0 {
            return Err(Error::invalid("pe_octaves must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.negative_target) {
            return Err(Error::invalid("negative_target must lie in [-1, 1]"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::records::write_json(path, self)
    }

    /// Applies `DAHYF_SEED` when set.
    pub fn with_env_seed(self) -> Result<Self> {
        self.with_seed_override(std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| {
                Error::malformed(SEED_ENV, format!("not an unsigned integer: {v:?}"))
            })?;
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        assert_eq!(serde_json::from_str::<PipelineConfig>("{}").unwrap(), cfg);
    }

    #[test]
    fn seed_override() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.clone().with_seed_override(Some("42")).unwrap().seed, 42);
        assert_eq!(cfg.clone().with_seed_override(None).unwrap().seed, 0);
        assert!(cfg.with_seed_override(Some("-3")).is_err());
    }

    #[test]
    fn focal_policies() {
        let spec = PatchSpec::new(640.0, 480.0, Vector2::zeros(), 100.0);
        assert_eq!(FocalPolicy::SqrtFallback.resolve(&spec).unwrap(), 800.0);
        assert!(FocalPolicy::Explicit.resolve(&spec).is_err());
        assert_eq!(
            FocalPolicy::Explicit
                .resolve(&spec.with_focal(500.0))
                .unwrap(),
            500.0
        );
    }

    #[test]
    fn invalid_nested_values_are_rejected() {
        let bad: PipelineConfig = serde_json::from_str(
            r#"{"filter": {"smoothing": {"kind": "exponential", "alpha": 0.0}}}"#,
        )
        .unwrap();
        assert!(bad.validate().is_err());
        let bad: PipelineConfig = serde_json::from_str(r#"{"pe_octaves": 0}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
