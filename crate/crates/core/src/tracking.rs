//! Per-object sample buffers in the analysis frame.
//!
//! Lifecycle: a track is `Active` while detections keep arriving. Once it has
//! been unseen for longer than `t_miss` it either becomes a `Ghost` (it has a
//! valid fit, so its position can still be extrapolated) or goes straight to
//! `Dead`. Ghosts die once unseen for more than `ghost_lifetime`.
//!
//! Cameras occasionally lose an object for a few frames and then report it
//! under a fresh id. [`TrackStore::reassociate`] tries to map such an id back
//! onto the track it came from.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ego_state::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{to_world, Detection, FrameSet, ObjectClass, Timestamp, Vec2, CAMERA_PERIOD};
use crate::prediction::TrajectoryFit;

const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Re-association gate around a predicted position, m.
    pub gate_radius: f64,
    /// Unseen time after which an active track is considered lost, s.
    pub t_miss: f64,
    /// How long a lost track keeps being predicted, s.
    pub ghost_lifetime: f64,
    /// Maximum speed implied by a merge, m/s.
    pub max_speed: f64,
    pub merge_enabled: bool,
    /// Samples kept per track (10 s at 36 Hz).
    pub max_samples: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            gate_radius: 2.0,
            t_miss: 0.2,
            ghost_lifetime: 4.0,
            max_speed: 3.5,
            merge_enabled: true,
            max_samples: 360,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Active,
    Ghost,
    Dead,
}

#[derive(Debug, Clone)]
pub struct PedTrack {
    id: u64,
    class: ObjectClass,
    samples: VecDeque<(Timestamp, Vec2)>,
    last_seen: Timestamp,
    status: TrackStatus,
    merged_ids: Vec<u64>,
    fit: Option<TrajectoryFit>,
}

impl PedTrack {
    fn new(id: u64, class: ObjectClass) -> Self {
        PedTrack {
            id,
            class,
            samples: VecDeque::new(),
            last_seen: Timestamp::ZERO,
            status: TrackStatus::Active,
            merged_ids: Vec::new(),
            fit: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn class(&self) -> ObjectClass {
        self.class
    }

    pub fn status(&self) -> TrackStatus {
        self.status
    }

    pub fn last_seen(&self) -> Timestamp {
        self.last_seen
    }

    pub fn merged_ids(&self) -> &[u64] {
        &self.merged_ids
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Analysis-frame samples, oldest first.
    pub fn samples(&self) -> impl Iterator<Item = &(Timestamp, Vec2)> + '_ {
        self.samples.iter()
    }

    pub fn last_position(&self) -> Option<Vec2> {
        self.samples.back().map(|(_, p)| *p)
    }

    /// Fit supplied by the most recent [`TrackStore::tick`].
    pub fn fit(&self) -> Option<&TrajectoryFit> {
        self.fit.as_ref()
    }

    fn push(&mut self, t: Timestamp, p: Vec2, cap: usize) -> Result<()> {
        if let Some((last_t, _)) = self.samples.back() {
            if t == *last_t {
                return Err(Error::DuplicateSample {
                    id: self.id,
                    t: t.secs(),
                });
            }
            if t < *last_t {
                return Err(Error::NonMonotonicTime {
                    prev: last_t.secs(),
                    next: t.secs(),
                });
            }
        }
        self.samples.push_back((t, p));
        while self.samples.len() > cap.max(1) {
            self.samples.pop_front();
        }
        self.last_seen = t;
        self.status = TrackStatus::Active;
        Ok(())
    }

    /// Where the track is expected to be at `t`: the fitted line when it has a
    /// usable one, otherwise the last observation.
    pub fn expected_position(&self, t: Timestamp) -> Option<Vec2> {
        match &self.fit {
            Some(fit) if fit.lat_valid => Some(fit.extrapolate(t)),
            _ => self.last_position(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrackStore {
    tracks: BTreeMap<u64, PedTrack>,
    /// Detection id -> track id for ids that were merged into an older track.
    aliases: BTreeMap<u64, u64>,
    config: TrackingConfig,
}

impl TrackStore {
    pub fn new(config: TrackingConfig) -> Self {
        TrackStore {
            tracks: BTreeMap::new(),
            aliases: BTreeMap::new(),
            config,
        }
    }

    pub fn config(&self) -> &TrackingConfig {
        &self.config
    }

    pub fn get(&self, id: u64) -> Option<&PedTrack> {
        self.tracks.get(&id)
    }

    pub fn tracks(&self) -> impl Iterator<Item = &PedTrack> + '_ {
        self.tracks.values()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Track id a detection id currently maps to, following merges.
    pub fn resolve(&self, det_id: u64) -> u64 {
        self.aliases.get(&det_id).copied().unwrap_or(det_id)
    }

    /// Motion-compensates `det` into the analysis frame and appends it to its track.
    ///
    /// Returns the id of the track that received the sample.
    pub fn ingest(&mut self, det: &Detection, ego: &VehicleState, frames: &FrameSet) -> Result<u64> {
        let world = to_world(det, &ego.stamped_pose())?;
        let p = frames.to_analysis(world);

        let mut target = self.resolve(det.track_id);
        let known_live = self.tracks.get(&target).is_some_and(|t| t.status != TrackStatus::Dead);

        if !known_live {
            let predicted = self.candidate_predictions(det.t);
            if let Some(ghost) = self.reassociate(det, p, &predicted) {
                self.aliases.insert(det.track_id, ghost);
                let track = self.tracks.get_mut(&ghost).expect("candidate exists");
                track.merged_ids.push(det.track_id);
                target = ghost;
            } else {
                self.aliases.remove(&det.track_id);
                target = det.track_id;
                self.tracks.insert(target, PedTrack::new(target, det.class));
            }
        }

        let cap = self.config.max_samples;
        let track = self.tracks.get_mut(&target).expect("target exists");
        track.push(det.t, p, cap)?;
        Ok(target)
    }

    /// Predicted positions at `t` of every track that could have produced a
    /// fresh id: ghosts, plus active tracks that have missed at least one frame.
    pub fn candidate_predictions(&self, t: Timestamp) -> BTreeMap<u64, Vec2> {
        self.tracks
            .values()
            .filter(|tr| match tr.status {
                TrackStatus::Ghost => true,
                TrackStatus::Active => t - tr.last_seen > 1.5 * CAMERA_PERIOD,
                TrackStatus::Dead => false,
            })
            .filter_map(|tr| tr.expected_position(t).map(|p| (tr.id, p)))
            .collect()
    }

    /// Picks the lost track a new detection id most plausibly belongs to.
    ///
    /// `pos` is the detection in the analysis frame. Candidates must share the
    /// detection's class, have a prediction within the gate radius, and not
    /// imply a speed above the jogging ceiling since they were last seen.
    pub fn reassociate(&self, det: &Detection, pos: Vec2, predicted: &BTreeMap<u64, Vec2>) -> Option<u64> {
        if !self.config.merge_enabled {
            return None;
        }
        let mut best: Option<(f64, u64)> = None;
        for (&id, &pred) in predicted {
            let Some(track) = self.tracks.get(&id) else {
                continue;
            };
            if track.class != det.class || track.status == TrackStatus::Dead {
                continue;
            }
            let d = pred.distance(pos);
            if d > self.config.gate_radius {
                continue;
            }
            let gap = det.t - track.last_seen;
            let Some(last) = track.last_position() else {
                continue;
            };
            if gap <= 0.0 || last.distance(pos) / gap > self.config.max_speed {
                continue;
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// Advances lifecycles to `now` and records the latest fits.
    pub fn tick(&mut self, now: Timestamp, fits: &BTreeMap<u64, TrajectoryFit>) {
        for track in self.tracks.values_mut() {
            if let Some(fit) = fits.get(&track.id) {
                track.fit = Some(*fit);
            }
            if track.status == TrackStatus::Dead {
                continue;
            }
            // Boundaries are inclusive up to rounding of the subtraction.
            let gap = now - track.last_seen - BOUNDARY_EPS;
            track.status = if gap > self.config.ghost_lifetime {
                TrackStatus::Dead
            } else if gap > self.config.t_miss {
                let can_ghost = track.fit.is_some_and(|f| f.lat_valid);
                if can_ghost {
                    TrackStatus::Ghost
                } else {
                    TrackStatus::Dead
                }
            } else {
                TrackStatus::Active
            };
        }
    }

    /// Drops dead tracks and any aliases pointing at them.
    pub fn prune_dead(&mut self) {
        self.tracks.retain(|_, t| t.status != TrackStatus::Dead);
        let tracks = &self.tracks;
        self.aliases.retain(|_, target| tracks.contains_key(target));
    }
}
