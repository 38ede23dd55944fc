//! Run configuration: every tunable in one JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conflict::ConflictConfig;
use crate::ego_state::EgoNoise;
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Vec2};
use crate::prediction::PredictionConfig;
use crate::route::{
    DeviationThresholds, FileProvider, HttpProvider, ProviderKind, RouteProvider, StraightLineProvider, ROUTE_URL_ENV,
};
use crate::scenario::CameraModel;
use crate::tracking::TrackingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteConfig {
    pub provider: ProviderKind,
    /// Route JSON for the file provider.
    pub file: Option<PathBuf>,
    /// Endpoint for the http provider. Falls back to the environment.
    pub url: Option<String>,
    /// Destination used when a route is requested. When unset, a point far
    /// ahead of the start pose is used.
    pub destination: Option<Vec2>,
    pub deviation: DeviationThresholds,
}

impl Default for RouteConfig {
    fn default() -> Self {
        RouteConfig {
            provider: ProviderKind::Line,
            file: None,
            url: None,
            destination: None,
            deviation: DeviationThresholds::default(),
        }
    }
}

/// Distance to the default destination along the start heading, m.
const DEFAULT_DESTINATION_RANGE: f64 = 1000.0;

impl RouteConfig {
    pub fn destination_for(&self, start: &Pose2) -> Vec2 {
        self.destination
            .unwrap_or_else(|| start.transform_to_world(Vec2::new(DEFAULT_DESTINATION_RANGE, 0.0)))
    }

    pub fn build_provider(&self) -> Result<Box<dyn RouteProvider + Send>> {
        Ok(match self.provider {
            ProviderKind::Line => Box::new(StraightLineProvider),
            ProviderKind::File => {
                let path = self
                    .file
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("file provider needs route.file".into()))?;
                Box::new(FileProvider::new(path))
            }
            ProviderKind::Http => {
                let url = self
                    .url
                    .clone()
                    .or_else(|| std::env::var(ROUTE_URL_ENV).ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("http provider needs route.url or {ROUTE_URL_ENV}")))?;
                Box::new(HttpProvider::new(url))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tracking: TrackingConfig,
    pub prediction: PredictionConfig,
    pub conflict: ConflictConfig,
    pub camera: CameraModel,
    pub sensors: EgoNoise,
    pub route: RouteConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let p = &self.prediction;
        if p.min_lateral_samples < 2 || p.min_longitudinal_samples < 2 {
            return bad("regression gates need at least 2 samples");
        }
        if p.window < p.min_lateral_samples.max(p.min_longitudinal_samples) {
            return bad("prediction window is smaller than a gate");
        }
        let c = &self.conflict;
        if !(c.step > 0.0 && c.horizon > 0.0) {
            return bad("conflict step and horizon must be positive");
        }
        if !(c.corridor_half_width > 0.0) {
            return bad("corridor half width must be positive");
        }
        let t = &self.tracking;
        if !(t.t_miss >= 0.0 && t.ghost_lifetime >= t.t_miss) {
            return bad("ghost lifetime must not be shorter than t_miss");
        }
        if t.max_samples == 0 {
            return bad("tracks need room for at least one sample");
        }
        let s = &self.sensors;
        if !(s.imu_rate_hz > 0.0 && s.gps_rate_hz > 0.0) {
            return bad("sensor rates must be positive");
        }
        self.camera.validate().map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"conflict":{"warn_time":3.5},"route":{"provider":"file","file":"r.json"}}"#)
            .unwrap();
        assert_eq!(cfg.conflict.warn_time, 3.5);
        assert_eq!(cfg.conflict.warn_distance, 60.0);
        assert_eq!(cfg.route.provider, ProviderKind::File);
        assert_eq!(cfg.prediction, PredictionConfig::default());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"conflict":{"warn_tme":3.5}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = RunConfig::default();
        cfg.prediction.window = 10;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = RunConfig::default();
        cfg.camera.rate_hz = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn provider_selection() {
        let mut route = RouteConfig::default();
        assert!(route.build_provider().is_ok());
        route.provider = ProviderKind::File;
        assert!(route.build_provider().is_err());
        route.provider = ProviderKind::Http;
        route.url = Some("http://127.0.0.1:1/route".into());
        assert!(route.build_provider().is_ok());
    }

    #[test]
    fn default_destination_is_ahead() {
        let start = Pose2::new(Vec2::new(5.0, 5.0), std::f64::consts::FRAC_PI_2);
        let d = RouteConfig::default().destination_for(&start);
        assert!((d.x - 5.0).abs() < 1e-9 && (d.y - 1005.0).abs() < 1e-9);
    }
}
