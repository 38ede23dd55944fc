//! Per-axis linear motion model fitted by ordinary least squares.
//!
//! Each axis of the analysis frame gets its own line `p(t) = intercept + slope·(t - t_ref)`.
//! Lateral positions from a monocular camera are far more accurate than
//! longitudinal ones, so the two axes have separate sample-count gates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Timestamp, Vec2};
use crate::tracking::PedTrack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    /// Regression uses at most this many of the most recent samples.
    pub window: usize,
    pub min_lateral_samples: usize,
    pub min_longitudinal_samples: usize,
    /// Jogging-pace ceiling on fitted speed, m/s.
    pub max_speed: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            window: 54,
            min_lateral_samples: 12,
            min_longitudinal_samples: 30,
            max_speed: 3.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisFit {
    pub intercept: f64,
    pub slope: f64,
}

impl AxisFit {
    pub fn at(&self, dt: f64) -> f64 {
        self.intercept + self.slope * dt
    }
}

/// Fitted per-axis model for one track, in the analysis frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFit {
    /// Time origin of both lines: the first windowed sample.
    pub t_ref: Timestamp,
    pub lateral: AxisFit,
    pub longitudinal: AxisFit,
    pub n_samples: usize,
    pub lat_valid: bool,
    pub long_valid: bool,
    pub speed_gate_failed: bool,
}

impl TrajectoryFit {
    /// Fitted velocity (longitudinal, lateral) in m/s.
    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.longitudinal.slope, self.lateral.slope)
    }

    pub fn speed(&self) -> f64 {
        self.velocity().norm()
    }

    /// Enough samples for the lateral axis and a physically plausible speed.
    pub fn usable_for_warning(&self) -> bool {
        self.lat_valid && !self.speed_gate_failed
    }

    /// Position at `t` without validity checks.
    pub fn extrapolate(&self, t: Timestamp) -> Vec2 {
        let dt = t - self.t_ref;
        Vec2::new(self.longitudinal.at(dt), self.lateral.at(dt))
    }
}

/// Ordinary least squares of `ys` on `ts`.
///
/// Uses centered sums, which keeps the normal equations well conditioned when
/// timestamps are large relative to their spread.
pub fn ols(ts: &[f64], ys: &[f64]) -> Result<AxisFit> {
    assert_eq!(ts.len(), ys.len(), "ols: length mismatch");
    let n = ts.len();
    if n < 2 {
        return Err(Error::DegenerateFit("fewer than 2 samples"));
    }
    let nf = n as f64;
    let t_mean = ts.iter().sum::<f64>() / nf;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (&t, &y) in ts.iter().zip(ys) {
        let dt = t - t_mean;
        stt += dt * dt;
        sty += dt * (y - y_mean);
    }
    if stt <= 0.0 {
        return Err(Error::DegenerateFit("zero time spread"));
    }
    let slope = sty / stt;
    Ok(AxisFit {
        intercept: y_mean - slope * t_mean,
        slope,
    })
}

/// Fits the windowed samples of `samples` that are not newer than `now`.
pub fn fit_samples(samples: &[(Timestamp, Vec2)], now: Timestamp, cfg: &PredictionConfig) -> Result<TrajectoryFit> {
    let upto = samples.partition_point(|(t, _)| *t <= now);
    let start = upto.saturating_sub(cfg.window.max(2));
    let window = &samples[start..upto];
    if window.len() < 2 {
        return Err(Error::DegenerateFit("fewer than 2 samples"));
    }

    let t_ref = window[0].0;
    let ts: Vec<f64> = window.iter().map(|(t, _)| *t - t_ref).collect();
    let lat: Vec<f64> = window.iter().map(|(_, p)| p.y).collect();
    let long: Vec<f64> = window.iter().map(|(_, p)| p.x).collect();

    let n = window.len();
    let lat_valid = n >= cfg.min_lateral_samples;
    let long_valid = n >= cfg.min_longitudinal_samples;

    let lateral = ols(&ts, &lat)?;
    let longitudinal = if long_valid {
        ols(&ts, &long)?
    } else {
        // Not enough samples to trust the longitudinal slope: hold the latest position.
        AxisFit {
            intercept: *long.last().expect("window is non-empty"),
            slope: 0.0,
        }
    };

    let speed = lateral.slope.hypot(longitudinal.slope);
    Ok(TrajectoryFit {
        t_ref,
        lateral,
        longitudinal,
        n_samples: n,
        lat_valid,
        long_valid,
        speed_gate_failed: speed > cfg.max_speed,
    })
}

pub fn fit_track(track: &PedTrack, now: Timestamp, cfg: &PredictionConfig) -> Result<TrajectoryFit> {
    let samples: Vec<(Timestamp, Vec2)> = track.samples().copied().collect();
    fit_samples(&samples, now, cfg)
}

/// Predicted analysis-frame position at `t`.
pub fn predict_position(fit: &TrajectoryFit, t: Timestamp) -> Result<Vec2> {
    if !fit.lat_valid {
        return Err(Error::InvalidFit);
    }
    Ok(fit.extrapolate(t))
}
