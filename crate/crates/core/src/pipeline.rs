//! Log replay: ego filter, tracking, prediction and warnings at camera cadence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::conflict::{Warning, WarningEngine};
use crate::ego_state::{EgoFilter, EgoInit, EgoRecord};
use crate::error::{Error, Result};
use crate::geometry::{Detection, FrameSet, Pose2, Timestamp, Vec2};
use crate::logs::check_time_order;
use crate::prediction::fit_track;
use crate::route::{RouteManager, RoutePath, RouteProvider};
use crate::tracking::{TrackStatus, TrackStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub frames: usize,
    pub detections: usize,
    /// Detections dropped for a stale ego pose or a duplicate timestamp.
    pub rejected: usize,
    pub tracks: usize,
    pub merges: usize,
    pub reroutes: usize,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub warnings: Vec<Warning>,
    pub summary: PipelineSummary,
}

/// Serves one fixed route regardless of the request.
struct FixedRoute(RoutePath);

impl RouteProvider for FixedRoute {
    fn route(&self, _start: &Pose2, _dest: Vec2) -> Result<RoutePath> {
        Ok(self.0.clone())
    }
}

/// Replays logs against a fixed route.
pub fn run_pipeline(
    cfg: &RunConfig,
    detections: &[Detection],
    ego_log: &[EgoRecord],
    route: RoutePath,
) -> Result<PipelineOutput> {
    let init = initial_ego(ego_log, detections);
    let dest = route.end();
    let manager = RouteManager::new(
        Box::new(FixedRoute(route)),
        &Pose2::new(init.pos, init.heading),
        dest,
        cfg.route.deviation,
    )?;
    run_pipeline_with(cfg, detections, ego_log, manager)
}

/// Replays logs, requesting the initial route and any reroutes from the
/// provider selected in `cfg`.
pub fn run_pipeline_with_provider(
    cfg: &RunConfig,
    detections: &[Detection],
    ego_log: &[EgoRecord],
) -> Result<PipelineOutput> {
    let init = initial_ego(ego_log, detections);
    let start = Pose2::new(init.pos, init.heading);
    let manager = RouteManager::new(
        cfg.route.build_provider()?,
        &start,
        cfg.route.destination_for(&start),
        cfg.route.deviation,
    )?;
    run_pipeline_with(cfg, detections, ego_log, manager)
}

fn initial_ego(ego_log: &[EgoRecord], detections: &[Detection]) -> EgoInit {
    match ego_log.first() {
        Some(EgoRecord::Init(init)) => *init,
        first => EgoInit {
            t: first
                .map(EgoRecord::t)
                .or_else(|| detections.first().map(|d| d.t))
                .unwrap_or(Timestamp::ZERO),
            ..EgoInit::default()
        },
    }
}

pub fn run_pipeline_with(
    cfg: &RunConfig,
    detections: &[Detection],
    ego_log: &[EgoRecord],
    mut routes: RouteManager,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    check_time_order(detections, |d| d.t.secs())?;
    check_time_order(ego_log, |r| r.t().secs())?;
    if detections
        .iter()
        .any(|d| !d.t.is_finite() || !d.pos_vehicle_frame().is_finite())
    {
        return Err(Error::InvalidScenario("non-finite detection".into()));
    }

    let mut summary = PipelineSummary::default();
    let mut warnings = Vec::new();
    if detections.is_empty() {
        return Ok(PipelineOutput { warnings, summary });
    }

    let init = initial_ego(ego_log, detections);
    let frames = FrameSet::new(init.heading);
    let mut filter = EgoFilter::new(&init, cfg.sensors);
    let mut store = TrackStore::new(cfg.tracking);
    let mut engine = WarningEngine::new(cfg.conflict);

    let rate = cfg.camera.rate_hz;
    let half_period = 0.5 / rate;
    let t0 = init.t.secs().min(detections[0].t.secs());
    let t_last = detections[detections.len() - 1].t.secs();
    // Keep stepping after the last detection so ghosts can still warn.
    let t_end = t_last + cfg.tracking.ghost_lifetime;
    let n_frames = ((t_end - t0) * rate).ceil() as usize + 1;

    let mut ego_idx = usize::from(matches!(ego_log.first(), Some(EgoRecord::Init(_))));
    let mut det_idx = 0;
    let mut fits = BTreeMap::new();
    let mut seen_ids = BTreeSet::new();
    let mut track_ids = BTreeSet::new();

    for k in 0..n_frames {
        let now = Timestamp::from_secs(t0 + k as f64 / rate);

        while ego_idx < ego_log.len() && ego_log[ego_idx].t() <= now {
            filter.process(&ego_log[ego_idx])?;
            ego_idx += 1;
        }
        filter.coast_to(now);
        let ego = *filter.state();
        let fix = routes.update(&ego)?;

        // Detections belong to the nearest frame.
        let cutoff = now + half_period;
        while det_idx < detections.len() && detections[det_idx].t <= cutoff {
            let det = &detections[det_idx];
            det_idx += 1;
            summary.detections += 1;
            match store.ingest(det, &ego, &frames) {
                Ok(id) => {
                    if seen_ids.insert(det.track_id) && id != det.track_id {
                        summary.merges += 1;
                    }
                    track_ids.insert(id);
                }
                Err(Error::StaleEgo { .. } | Error::DuplicateSample { .. }) => summary.rejected += 1,
                Err(e) => return Err(e),
            }
        }

        fits.clear();
        for track in store.tracks() {
            if track.status() == TrackStatus::Dead {
                continue;
            }
            match fit_track(track, cutoff, &cfg.prediction) {
                Ok(fit) => {
                    fits.insert(track.id(), fit);
                }
                Err(Error::DegenerateFit(_)) => {}
                Err(e) => return Err(e),
            }
        }
        store.tick(now, &fits);

        for track in store.tracks() {
            if track.status() == TrackStatus::Dead {
                continue;
            }
            let Some(fit) = fits.get(&track.id()) else {
                continue;
            };
            if let Some(w) = engine.assess(track.id(), track.class(), fit, routes.route(), &fix, &ego, now, &frames)? {
                warnings.push(w);
            }
        }
        store.prune_dead();
        summary.frames += 1;
    }

    summary.tracks = track_ids.len();
    summary.reroutes = routes.reroutes();
    summary.warnings = warnings.len();
    Ok(PipelineOutput { warnings, summary })
}
