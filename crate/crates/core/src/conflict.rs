//! Conflict detection and warning decisions.
//!
//! A pedestrian's fitted line is sampled forward in time and tested against a
//! corridor around the route. The first stretch inside the corridor (ahead of
//! the ego) yields the interception point. Warnings fire when the vehicle will
//! reach that point in under 4 s, no more than 60 m along the route, and the
//! pedestrian is expected in the corridor around the vehicle's arrival.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ego_state::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{FrameSet, ObjectClass, Pose2, Timestamp, Vec2};
use crate::prediction::TrajectoryFit;
use crate::route::{RouteFix, RoutePath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConflictConfig {
    /// Half width of the swept vehicle path, m.
    pub corridor_half_width: f64,
    /// Lateral band reported as "ahead", m.
    pub ahead_half_width: f64,
    pub horizon: f64,
    pub step: f64,
    /// Warn only if the vehicle arrives in less than this many seconds.
    pub warn_time: f64,
    /// Warn only if the interception point is at most this far along the route, m.
    pub warn_distance: f64,
    pub emergency_time: f64,
    /// Slack around the vehicle's arrival when matching pedestrian occupancy, s.
    pub overlap_tolerance: f64,
    pub prompt_duration: f64,
    /// Below this speed the vehicle is not considered to be approaching, m/s.
    pub speed_floor: f64,
    /// Minimum spacing between warnings for one track unless severity rises, s.
    pub rate_limit: f64,
    /// A maneuver due within this many seconds is merged into the warning prompt.
    pub maneuver_lookahead: f64,
}

impl Default for ConflictConfig {
    fn default() -> Self {
        ConflictConfig {
            corridor_half_width: 1.5,
            ahead_half_width: 1.75,
            horizon: 8.0,
            step: 0.1,
            warn_time: 4.0,
            warn_distance: 60.0,
            emergency_time: 1.0,
            overlap_tolerance: 1.5,
            prompt_duration: 1.0,
            speed_floor: 0.5,
            rate_limit: 10.0,
            maneuver_lookahead: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub track_id: u64,
    /// World-frame interception point on the route.
    pub point: Vec2,
    /// Arc length from the ego to the interception point, m.
    pub s_intercept: f64,
    /// Vehicle time to the interception point, s.
    pub t_veh: f64,
    /// Pedestrian corridor occupancy, seconds from now.
    pub t_ped_enter: f64,
    pub t_ped_exit: f64,
}

impl Conflict {
    pub fn occupancy_overlaps(&self, tolerance: f64) -> bool {
        self.t_ped_enter <= self.t_veh + tolerance && self.t_ped_exit >= self.t_veh - tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Early,
    Emergency,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Early => "early",
            Severity::Emergency => "emergency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Ahead,
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Ahead => "ahead",
            Direction::Right => "right",
        }
    }

    pub fn mirrored(self) -> Direction {
        match self {
            Direction::Left => Direction::Right,
            Direction::Ahead => Direction::Ahead,
            Direction::Right => Direction::Left,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub t_issued: Timestamp,
    pub track_id: u64,
    pub class: ObjectClass,
    pub severity: Severity,
    pub direction: Direction,
    pub utterance: String,
    pub conflict: Conflict,
}

/// Looks for the first time the predicted path enters the route corridor ahead of the ego.
#[allow(clippy::too_many_arguments)]
pub fn find_interception(
    track_id: u64,
    fit: &TrajectoryFit,
    route: &RoutePath,
    ego_fix: &RouteFix,
    ego_speed: f64,
    now: Timestamp,
    frames: &FrameSet,
    cfg: &ConflictConfig,
) -> Result<Option<Conflict>> {
    if !fit.lat_valid {
        return Err(Error::InvalidFit);
    }
    if ego_speed < cfg.speed_floor {
        return Ok(None);
    }

    let steps = (cfg.horizon / cfg.step).round() as usize;
    let mut interval: Option<(usize, usize)> = None;
    for k in 0..=steps {
        let dt = k as f64 * cfg.step;
        let p = frames.from_analysis(fit.extrapolate(now + dt));
        let proj = route.project_point(p);
        let inside = proj.distance <= cfg.corridor_half_width && proj.s > ego_fix.s;
        match (inside, interval) {
            (true, None) => interval = Some((k, k)),
            (true, Some((enter, _))) => interval = Some((enter, k)),
            (false, Some(_)) => break,
            (false, None) => {}
        }
    }
    let Some((enter, exit)) = interval else {
        return Ok(None);
    };

    let mid = (enter + exit) / 2;
    let p_mid = frames.from_analysis(fit.extrapolate(now + mid as f64 * cfg.step));
    let proj = route.project_point(p_mid);
    let s_intercept = (proj.s - ego_fix.s).max(0.0);
    Ok(Some(Conflict {
        track_id,
        point: proj.point,
        s_intercept,
        t_veh: s_intercept / ego_speed,
        t_ped_enter: enter as f64 * cfg.step,
        t_ped_exit: exit as f64 * cfg.step,
    }))
}

/// The warning rule: severity if a warning is due, `None` otherwise.
pub fn decide_warning(conflict: &Conflict, cfg: &ConflictConfig) -> Option<Severity> {
    let due = conflict.t_veh < cfg.warn_time
        && conflict.s_intercept <= cfg.warn_distance
        && conflict.occupancy_overlaps(cfg.overlap_tolerance);
    if !due {
        return None;
    }
    Some(if conflict.t_veh < cfg.emergency_time {
        Severity::Emergency
    } else {
        Severity::Early
    })
}

pub fn classify_lateral(y: f64, ahead_half_width: f64) -> Direction {
    if y > ahead_half_width {
        Direction::Left
    } else if y < -ahead_half_width {
        Direction::Right
    } else {
        Direction::Ahead
    }
}

/// Which side the pedestrian will be on once the prompt has been heard.
///
/// The predicted position at `now + prompt_duration` is expressed in the
/// vehicle frame of `ego` (the pose at `now`).
pub fn direction(
    fit: &TrajectoryFit,
    now: Timestamp,
    ego: &Pose2,
    frames: &FrameSet,
    cfg: &ConflictConfig,
) -> Result<Direction> {
    if !fit.lat_valid {
        return Err(Error::InvalidFit);
    }
    let p_world = frames.from_analysis(fit.extrapolate(now + cfg.prompt_duration));
    let p_vehicle = ego.transform_to_vehicle(p_world);
    Ok(classify_lateral(p_vehicle.y, cfg.ahead_half_width))
}

pub fn compose_utterance(class: ObjectClass, direction: Direction, pending_maneuver: Option<&str>) -> String {
    match (pending_maneuver, direction) {
        (None, Direction::Ahead) => format!("Watch out for the {class} ahead"),
        (None, dir) => format!("Watch out for the {class} on the {dir}"),
        (Some(m), Direction::Ahead) => format!("{m} and watch out for {class} ahead"),
        (Some(m), dir) => format!("{m} and watch out for {class} on your {dir}"),
    }
}

/// One warning per track per `rate_limit` seconds, unless severity escalates.
#[derive(Debug, Clone, Default)]
pub struct WarningLimiter {
    last: BTreeMap<u64, (Timestamp, Severity)>,
}

impl WarningLimiter {
    pub fn admit(&mut self, track_id: u64, t: Timestamp, severity: Severity, rate_limit: f64) -> bool {
        let allowed = match self.last.get(&track_id) {
            None => true,
            Some(&(prev_t, prev_sev)) => severity > prev_sev || t - prev_t >= rate_limit,
        };
        if allowed {
            self.last.insert(track_id, (t, severity));
        }
        allowed
    }
}

/// Stateful warning stage: decision rule plus rate limiter.
#[derive(Debug, Clone, Default)]
pub struct WarningEngine {
    cfg: ConflictConfig,
    limiter: WarningLimiter,
}

impl WarningEngine {
    pub fn new(cfg: ConflictConfig) -> Self {
        WarningEngine {
            cfg,
            limiter: WarningLimiter::default(),
        }
    }

    pub fn config(&self) -> &ConflictConfig {
        &self.cfg
    }

    /// Runs the full conflict check for one track and returns a warning if one should be issued.
    #[allow(clippy::too_many_arguments)]
    pub fn assess(
        &mut self,
        track_id: u64,
        class: ObjectClass,
        fit: &TrajectoryFit,
        route: &RoutePath,
        ego_fix: &RouteFix,
        ego: &VehicleState,
        now: Timestamp,
        frames: &FrameSet,
    ) -> Result<Option<Warning>> {
        if !fit.usable_for_warning() {
            return Ok(None);
        }
        let Some(conflict) = find_interception(track_id, fit, route, ego_fix, ego.speed, now, frames, &self.cfg)?
        else {
            return Ok(None);
        };
        let Some(severity) = decide_warning(&conflict, &self.cfg) else {
            return Ok(None);
        };
        if !self.limiter.admit(track_id, now, severity, self.cfg.rate_limit) {
            return Ok(None);
        }
        let dir = direction(fit, now, &ego.pose, frames, &self.cfg)?;
        let lookahead = ego.speed * self.cfg.maneuver_lookahead;
        let maneuver = route
            .maneuver_between(ego_fix.s, ego_fix.s + lookahead)
            .map(|m| m.text.as_str());
        Ok(Some(Warning {
            t_issued: now,
            track_id,
            class,
            severity,
            direction: dir,
            utterance: compose_utterance(class, dir, maneuver),
            conflict,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::{fit_samples, AxisFit, PredictionConfig};
    use crate::route::RoutePath;

    const MPH15: f64 = 15.0 * 0.44704;

    fn straight() -> RoutePath {
        RoutePath::new(vec![Vec2::ZERO, Vec2::new(500.0, 0.0)], vec![]).unwrap()
    }

    fn linear_fit(p0: Vec2, v: Vec2) -> TrajectoryFit {
        TrajectoryFit {
            t_ref: Timestamp::ZERO,
            lateral: AxisFit {
                intercept: p0.y,
                slope: v.y,
            },
            longitudinal: AxisFit {
                intercept: p0.x,
                slope: v.x,
            },
            n_samples: 40,
            lat_valid: true,
            long_valid: true,
            speed_gate_failed: false,
        }
    }

    fn fix0() -> RouteFix {
        RouteFix {
            s: 0.0,
            cross_track: 0.0,
            heading_error: 0.0,
        }
    }

    fn conflict(t_veh: f64, s: f64, enter: f64, exit: f64) -> Conflict {
        Conflict {
            track_id: 1,
            point: Vec2::new(s, 0.0),
            s_intercept: s,
            t_veh,
            t_ped_enter: enter,
            t_ped_exit: exit,
        }
    }

    #[test]
    fn pedestrian_on_centerline_is_inside_now() {
        let fit = linear_fit(Vec2::new(25.0, 0.0), Vec2::ZERO);
        let c = find_interception(
            1,
            &fit,
            &straight(),
            &fix0(),
            5.0,
            Timestamp::ZERO,
            &FrameSet::new(0.0),
            &ConflictConfig::default(),
        )
        .unwrap()
        .unwrap();
        assert_eq!(c.t_ped_enter, 0.0);
        assert!((c.point.x - 25.0).abs() < 1e-12);
        assert!((c.s_intercept - 25.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_at_fifteen_mph() {
        let fit = linear_fit(Vec2::new(20.0, -6.0), Vec2::new(0.0, 1.5));
        let cfg = ConflictConfig::default();
        let c = find_interception(
            1,
            &fit,
            &straight(),
            &fix0(),
            MPH15,
            Timestamp::ZERO,
            &FrameSet::new(0.0),
            &cfg,
        )
        .unwrap()
        .unwrap();
        // Corridor entry at (6 - 1.5) / 1.5 = 3 s, exit at (6 + 1.5) / 1.5 = 5 s.
        assert!((c.t_ped_enter - 3.0).abs() <= cfg.step);
        assert!((c.t_ped_exit - 5.0).abs() <= cfg.step);
        assert!((c.s_intercept - 20.0).abs() < 1e-9);
        assert!((c.t_veh - 20.0 / MPH15).abs() < 1e-9);
        assert!((c.t_veh - 2.98).abs() < 0.01);
        assert_eq!(decide_warning(&c, &cfg), Some(Severity::Early));
    }

    #[test]
    fn parallel_walker_never_conflicts() {
        let fit = linear_fit(Vec2::new(20.0, 5.0), Vec2::new(1.4, 0.0));
        let c = find_interception(
            1,
            &fit,
            &straight(),
            &fix0(),
            MPH15,
            Timestamp::ZERO,
            &FrameSet::new(0.0),
            &ConflictConfig::default(),
        )
        .unwrap();
        assert!(c.is_none());
    }

    #[test]
    fn slow_ego_is_not_approaching() {
        let fit = linear_fit(Vec2::new(20.0, 0.0), Vec2::ZERO);
        let c = find_interception(
            1,
            &fit,
            &straight(),
            &fix0(),
            0.2,
            Timestamp::ZERO,
            &FrameSet::new(0.0),
            &ConflictConfig::default(),
        )
        .unwrap();
        assert!(c.is_none());
    }

    #[test]
    fn pedestrian_behind_ego_ignored() {
        let fit = linear_fit(Vec2::new(20.0, 0.0), Vec2::ZERO);
        let fix = RouteFix { s: 30.0, ..fix0() };
        let c = find_interception(
            1,
            &fit,
            &straight(),
            &fix,
            5.0,
            Timestamp::ZERO,
            &FrameSet::new(0.0),
            &ConflictConfig::default(),
        )
        .unwrap();
        assert!(c.is_none());
    }

    #[test]
    fn invalid_fit_is_an_error() {
        let mut fit = linear_fit(Vec2::new(20.0, 0.0), Vec2::ZERO);
        fit.lat_valid = false;
        let cfg = ConflictConfig::default();
        let frames = FrameSet::new(0.0);
        assert!(find_interception(1, &fit, &straight(), &fix0(), 5.0, Timestamp::ZERO, &frames, &cfg).is_err());
        assert!(direction(&fit, Timestamp::ZERO, &Pose2::default(), &frames, &cfg).is_err());
    }

    #[test]
    fn warning_rule_examples() {
        let cfg = ConflictConfig::default();
        assert_eq!(
            decide_warning(&conflict(2.98, 20.0, 3.0, 5.0), &cfg),
            Some(Severity::Early)
        );
        assert_eq!(decide_warning(&conflict(4.5, 20.0, 3.0, 5.0), &cfg), None);
        assert_eq!(decide_warning(&conflict(3.0, 70.0, 2.0, 4.0), &cfg), None);
        assert_eq!(
            decide_warning(&conflict(0.9, 6.0, 0.0, 1.0), &cfg),
            Some(Severity::Emergency)
        );
        // Pedestrian long gone by the time the vehicle arrives.
        assert_eq!(decide_warning(&conflict(3.5, 20.0, 0.0, 1.5), &cfg), None);
    }

    #[test]
    fn direction_examples() {
        let cfg = ConflictConfig::default();
        let frames = FrameSet::new(0.0);
        let ego = Pose2::default();
        // Crossing left to right, dead ahead in 1 s.
        let crossing = linear_fit(Vec2::new(15.0, 1.4), Vec2::new(0.0, -1.4));
        assert_eq!(
            direction(&crossing, Timestamp::ZERO, &ego, &frames, &cfg).unwrap(),
            Direction::Ahead
        );
        let left = linear_fit(Vec2::new(15.0, 5.0), Vec2::ZERO);
        assert_eq!(
            direction(&left, Timestamp::ZERO, &ego, &frames, &cfg).unwrap(),
            Direction::Left
        );
        let right = linear_fit(Vec2::new(15.0, -4.0), Vec2::ZERO);
        assert_eq!(
            direction(&right, Timestamp::ZERO, &ego, &frames, &cfg).unwrap(),
            Direction::Right
        );
    }

    #[test]
    fn direction_uses_current_vehicle_frame() {
        let cfg = ConflictConfig::default();
        // Ego has turned left by 90 degrees; a point straight ahead of it lies on world +y.
        let ego = Pose2::new(Vec2::new(10.0, 0.0), std::f64::consts::FRAC_PI_2);
        let fit = linear_fit(Vec2::new(10.0, 20.0), Vec2::ZERO);
        let d = direction(&fit, Timestamp::ZERO, &ego, &FrameSet::new(0.0), &cfg).unwrap();
        assert_eq!(d, Direction::Ahead);
        let fit = linear_fit(Vec2::new(4.0, 20.0), Vec2::ZERO);
        let d = direction(&fit, Timestamp::ZERO, &ego, &FrameSet::new(0.0), &cfg).unwrap();
        assert_eq!(d, Direction::Left);
    }

    #[test]
    fn utterances() {
        assert_eq!(
            compose_utterance(ObjectClass::Pedestrian, Direction::Left, None),
            "Watch out for the pedestrian on the left"
        );
        assert_eq!(
            compose_utterance(ObjectClass::Bicycle, Direction::Right, Some("turn right")),
            "turn right and watch out for bicycle on your right"
        );
        assert_eq!(
            compose_utterance(ObjectClass::Pedestrian, Direction::Ahead, None),
            "Watch out for the pedestrian ahead"
        );
    }

    #[test]
    fn limiter_allows_escalation_only() {
        let mut lim = WarningLimiter::default();
        let t = Timestamp::from_secs;
        assert!(lim.admit(1, t(0.0), Severity::Early, 10.0));
        assert!(!lim.admit(1, t(1.0), Severity::Early, 10.0));
        assert!(lim.admit(1, t(2.0), Severity::Emergency, 10.0));
        assert!(!lim.admit(1, t(2.5), Severity::Emergency, 10.0));
        assert!(!lim.admit(1, t(3.0), Severity::Early, 10.0));
        assert!(lim.admit(1, t(12.5), Severity::Early, 10.0));
        assert!(lim.admit(2, t(3.0), Severity::Early, 10.0));
    }

    #[test]
    fn warnings_need_twelve_samples() {
        let cfg = ConflictConfig::default();
        let route = straight();
        let frames = FrameSet::new(0.0);
        let mut ego = VehicleState::from_init(&crate::ego_state::EgoInit::default());
        ego.speed = MPH15;
        for n in 2..=20 {
            let samples: Vec<(Timestamp, Vec2)> = (0..n)
                .map(|i| {
                    let t = i as f64 / 36.0;
                    (Timestamp::from_secs(t), Vec2::new(20.0, -2.0 + 1.4 * t))
                })
                .collect();
            let now = samples.last().unwrap().0;
            let fit = fit_samples(&samples, now, &PredictionConfig::default()).unwrap();
            let mut engine = WarningEngine::new(cfg);
            let w = engine
                .assess(1, ObjectClass::Pedestrian, &fit, &route, &fix0(), &ego, now, &frames)
                .unwrap();
            assert_eq!(w.is_some(), n >= 12, "n={n}");
        }
    }

    #[test]
    fn maneuver_merged_into_prompt() {
        let cfg = ConflictConfig::default();
        let route = RoutePath::new(
            vec![Vec2::ZERO, Vec2::new(500.0, 0.0)],
            vec![crate::route::Maneuver {
                s: 10.0,
                text: "turn right".into(),
            }],
        )
        .unwrap();
        let mut ego = VehicleState::from_init(&crate::ego_state::EgoInit::default());
        ego.speed = MPH15;
        let fit = linear_fit(Vec2::new(20.0, -6.0), Vec2::new(0.0, 1.5));
        let mut engine = WarningEngine::new(cfg);
        let w = engine
            .assess(
                1,
                ObjectClass::Bicycle,
                &fit,
                &route,
                &fix0(),
                &ego,
                Timestamp::ZERO,
                &FrameSet::new(0.0),
            )
            .unwrap()
            .unwrap();
        assert_eq!(w.utterance, "turn right and watch out for bicycle on your right");
    }
}
