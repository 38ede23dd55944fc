//! Synthetic scenarios: scripted ego motion and actors, a monocular
//! ground-plane camera model, and matching inertial/wheel/GPS streams.
//!
//! The camera model projects each true foot point to a pixel, perturbs the
//! pixel, and intersects the pixel ray with the flat road again. One row of
//! error at range `d` moves the point by roughly `d² / (f·h)`, which is why
//! longitudinal error explodes with distance while lateral error stays small.
//!
//! When the ego moves, the camera inverse-projects with the ego pose from
//! `lag_frames` frames earlier, reproducing the overcorrection artefacts seen
//! on moving platforms.

use std::f64::consts::PI;

use rand::rngs::ChaCha8Rng;
use rand::{Rng, RngExt, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ego_state::{EgoInit, EgoNoise, EgoRecord, GpsFix, ImuSample, WheelSample, GRAVITY};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Detection, ObjectClass, Pose2, Timestamp, Vec2};
use crate::logs::{TruthRecord, EGO_TRUTH_ID};
use crate::route::{Maneuver, RoutePath};

/// 15 mph in m/s.
pub const MPH_15: f64 = 15.0 * 0.44704;

/// Walking pace used by the crossing presets, m/s.
pub const WALKING_SPEED: f64 = 1.4;

/// Scripted pedestrians may not exceed jogging pace.
pub const MAX_PEDESTRIAN_SPEED: f64 = 3.5;

/// Detection ids after an id switch are `actor_id + k * ID_SWITCH_STRIDE`.
pub const ID_SWITCH_STRIDE: u64 = 1000;

/// GPS records never advertise a sigma below this, even in noiseless runs.
const MIN_GPS_SIGMA: f64 = 0.01;

pub fn actor_of_detection_id(id: u64) -> u64 {
    id % ID_SWITCH_STRIDE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub hfov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub mount_height: f64,
    pub rate_hz: f64,
    pub pixel_sigma: f64,
    pub quantize: bool,
    pub dropout_prob: f64,
    pub id_switch_prob: f64,
    /// Ego pose lag used for inverse projection, in camera frames.
    pub lag_frames: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            hfov_deg: 40.0,
            width: 1280,
            height: 960,
            mount_height: 1.3,
            rate_hz: 36.0,
            pixel_sigma: 2.0,
            quantize: true,
            dropout_prob: 0.0,
            id_switch_prob: 0.0,
            lag_frames: 2,
        }
    }
}

impl CameraModel {
    pub fn noiseless() -> Self {
        CameraModel {
            pixel_sigma: 0.0,
            quantize: false,
            dropout_prob: 0.0,
            id_switch_prob: 0.0,
            lag_frames: 0,
            ..CameraModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScenario(format!("camera: {m}")));
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return bad("hfov must be in (0, 180)");
        }
        if !(self.rate_hz > 0.0) {
            return bad("rate must be positive");
        }
        if self.width == 0 || self.height == 0 || !(self.mount_height > 0.0) {
            return bad("image size and mount height must be positive");
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) || !(0.0..=1.0).contains(&self.id_switch_prob) {
            return bad("probabilities must be in [0, 1]");
        }
        if !(self.pixel_sigma >= 0.0) {
            return bad("pixel sigma must be non-negative");
        }
        Ok(())
    }

    pub fn half_fov(&self) -> f64 {
        self.hfov_deg.to_radians() / 2.0
    }

    /// Focal length in pixels (square pixels, set by the horizontal FOV).
    pub fn focal_px(&self) -> f64 {
        (self.width as f64 / 2.0) / self.half_fov().tan()
    }

    fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Pixel (column, row) of a ground point in the vehicle frame. The camera
    /// looks level along +x; the horizon is the middle row.
    pub fn project(&self, p: Vec2) -> Option<(f64, f64)> {
        if !(p.x > 0.0) {
            return None;
        }
        let f = self.focal_px();
        let (cx, cy) = self.principal_point();
        Some((cx - f * p.y / p.x, cy + f * self.mount_height / p.x))
    }

    /// Intersects the ray through pixel (u, v) with the ground plane.
    pub fn unproject(&self, u: f64, v: f64) -> Option<Vec2> {
        let f = self.focal_px();
        let (cx, cy) = self.principal_point();
        let below_horizon = v - cy;
        if below_horizon <= 0.0 {
            return None;
        }
        let x = f * self.mount_height / below_horizon;
        Some(Vec2::new(x, (cx - u) * x / f))
    }

    /// True when the point is ahead, within the horizontal FOV, and its foot
    /// point falls inside the image.
    pub fn in_fov(&self, p: Vec2) -> bool {
        if !(p.x > 0.0) || p.y.atan2(p.x).abs() > self.half_fov() {
            return false;
        }
        self.project(p).is_some_and(|(_, v)| v < self.height as f64)
    }
}

/// One camera frame's measurement of a true vehicle-frame point. Returns
/// `None` when the point is outside the FOV or the frame is dropped.
pub fn camera_observe<R: Rng + ?Sized>(truth: Vec2, cam: &CameraModel, rng: &mut R) -> Option<Vec2> {
    if !cam.in_fov(truth) {
        return None;
    }
    if cam.dropout_prob > 0.0 && rng.random_bool(cam.dropout_prob) {
        return None;
    }
    let (mut u, mut v) = cam.project(truth)?;
    if cam.pixel_sigma > 0.0 {
        let du: f64 = rng.sample(StandardNormal);
        let dv: f64 = rng.sample(StandardNormal);
        u += du * cam.pixel_sigma;
        v += dv * cam.pixel_sigma;
    }
    if cam.quantize {
        u = u.round();
        v = v.round();
    }
    cam.unproject(u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EgoScript {
    Stationary,
    /// Constant speed along +x from the origin.
    ConstantSpeed {
        speed: f64,
    },
    /// Piecewise-linear motion through timed waypoints.
    Waypoints {
        points: Vec<Waypoint>,
    },
}

/// True ego kinematics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoTruth {
    pub pose: Pose2,
    pub speed: f64,
}

impl EgoScript {
    pub fn validate(&self) -> Result<()> {
        match self {
            EgoScript::Stationary => Ok(()),
            EgoScript::ConstantSpeed { speed } => {
                if speed.is_finite() && *speed >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidScenario("ego speed must be finite and >= 0".into()))
                }
            }
            EgoScript::Waypoints { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidScenario("waypoint schedule needs >= 2 points".into()));
                }
                if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
                    return Err(Error::InvalidScenario("waypoint times must increase".into()));
                }
                if points
                    .iter()
                    .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.t.is_finite()))
                {
                    return Err(Error::InvalidScenario("non-finite waypoint".into()));
                }
                if points.windows(2).all(|w| w[0].x == w[1].x && w[0].y == w[1].y) {
                    return Err(Error::InvalidScenario("waypoints never move".into()));
                }
                Ok(())
            }
        }
    }

    pub fn at(&self, t: f64) -> EgoTruth {
        match self {
            EgoScript::Stationary => EgoTruth {
                pose: Pose2::default(),
                speed: 0.0,
            },
            EgoScript::ConstantSpeed { speed } => EgoTruth {
                pose: Pose2::new(Vec2::new(speed * t.max(0.0), 0.0), 0.0),
                speed: *speed,
            },
            EgoScript::Waypoints { points } => waypoint_state(points, t),
        }
    }

    pub fn initial_heading(&self) -> f64 {
        self.at(0.0).pose.heading
    }
}

fn waypoint_state(points: &[Waypoint], t: f64) -> EgoTruth {
    // Heading of the last segment that actually moves, at or before index i.
    let heading_before = |i: usize| -> f64 {
        (0..=i)
            .rev()
            .chain(i + 1..points.len() - 1)
            .map(|j| Vec2::new(points[j + 1].x - points[j].x, points[j + 1].y - points[j].y))
            .find(|d| d.norm() > 0.0)
            .map(|d| d.y.atan2(d.x))
            .unwrap_or(0.0)
    };
    let pos = |w: &Waypoint| Vec2::new(w.x, w.y);

    let last = points.len() - 1;
    if t <= points[0].t {
        return EgoTruth {
            pose: Pose2::new(pos(&points[0]), heading_before(0)),
            speed: 0.0,
        };
    }
    if t >= points[last].t {
        return EgoTruth {
            pose: Pose2::new(pos(&points[last]), heading_before(last - 1)),
            speed: 0.0,
        };
    }
    let i = points.partition_point(|w| w.t <= t) - 1;
    let (a, b) = (&points[i], &points[i + 1]);
    let u = (t - a.t) / (b.t - a.t);
    let d = pos(b) - pos(a);
    EgoTruth {
        pose: Pose2::new(pos(a) + d * u, heading_before(i)),
        speed: d.norm() / (b.t - a.t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub class: ObjectClass,
    /// World position at `t_start`.
    pub start: Vec2,
    pub velocity: Vec2,
    /// The actor exists in `[t_start, t_stop]`.
    pub t_start: f64,
    pub t_stop: f64,
}

impl Actor {
    pub fn position(&self, t: f64) -> Option<Vec2> {
        (t >= self.t_start && t <= self.t_stop).then(|| self.start + self.velocity * (t - self.t_start))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub ego: EgoScript,
    pub actors: Vec<Actor>,
    #[serde(default)]
    pub camera: CameraModel,
    #[serde(default)]
    pub sensors: EgoNoise,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Everything a scenario run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedLogs {
    pub detections: Vec<Detection>,
    pub truth: Vec<TruthRecord>,
    pub ego: Vec<EgoRecord>,
    pub route: RoutePath,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidScenario("duration must be positive".into()));
        }
        self.camera.validate()?;
        self.ego.validate()?;
        for (i, a) in self.actors.iter().enumerate() {
            if !(a.start.is_finite() && a.velocity.is_finite()) || !(a.t_stop >= a.t_start) {
                return Err(Error::InvalidScenario(format!("actor {} is malformed", i + 1)));
            }
            if a.class == ObjectClass::Pedestrian && a.velocity.norm() > MAX_PEDESTRIAN_SPEED {
                return Err(Error::InvalidScenario(format!(
                    "pedestrian {} faster than {MAX_PEDESTRIAN_SPEED} m/s",
                    i + 1
                )));
            }
        }
        if self.actors.len() as u64 >= ID_SWITCH_STRIDE {
            return Err(Error::InvalidScenario("too many actors".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Same geometry with a perfect camera and perfect ego sensors.
    pub fn noiseless(mut self) -> Self {
        self.sensors = EgoNoise {
            gyro_sigma: 0.0,
            accel_sigma: 0.0,
            wheel_sigma: 0.0,
            gps_sigma: 0.0,
            ..self.sensors
        };
        self.camera = CameraModel {
            hfov_deg: self.camera.hfov_deg,
            width: self.camera.width,
            height: self.camera.height,
            mount_height: self.camera.mount_height,
            rate_hz: self.camera.rate_hz,
            ..CameraModel::noiseless()
        };
        self
    }

    /// Most probable path the vehicle follows: the waypoint polyline, or a
    /// long straight road ahead of the start pose.
    pub fn route(&self) -> Result<RoutePath> {
        const RUN_OUT: f64 = 1000.0;
        match &self.ego {
            EgoScript::Stationary | EgoScript::ConstantSpeed { .. } => {
                RoutePath::new(vec![Vec2::ZERO, Vec2::new(RUN_OUT, 0.0)], Vec::new())
            }
            EgoScript::Waypoints { points } => {
                let mut verts: Vec<Vec2> = Vec::new();
                for w in points {
                    let p = Vec2::new(w.x, w.y);
                    if verts.last() != Some(&p) {
                        verts.push(p);
                    }
                }
                let end = verts[verts.len() - 1];
                let dir = end - verts[verts.len() - 2];
                verts.push(end + dir * (RUN_OUT / dir.norm()));

                let mut maneuvers = Vec::new();
                let mut s = 0.0;
                for i in 1..verts.len() - 1 {
                    s += verts[i].distance(verts[i - 1]);
                    let a = verts[i] - verts[i - 1];
                    let b = verts[i + 1] - verts[i];
                    let turn = normalize_angle(b.y.atan2(b.x) - a.y.atan2(a.x));
                    if turn.abs() > PI / 9.0 {
                        let text = if turn > 0.0 { "turn left" } else { "turn right" };
                        maneuvers.push(Maneuver { s, text: text.into() });
                    }
                }
                RoutePath::new(verts, maneuvers)
            }
        }
    }

    pub fn camera_frames(&self) -> usize {
        (self.duration * self.camera.rate_hz).floor() as usize + 1
    }

    pub fn generate(&self) -> Result<GeneratedLogs> {
        self.validate()?;
        let route = self.route()?;
        let mut cam_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut sensor_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);

        let (detections, truth) = self.camera_stream(&mut cam_rng);
        let ego = self.ego_stream(&mut sensor_rng);
        Ok(GeneratedLogs {
            detections,
            truth,
            ego,
            route,
        })
    }

    fn camera_stream(&self, rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<TruthRecord>) {
        let cam = &self.camera;
        let period = cam.period();
        let mut detections = Vec::new();
        let mut truth = Vec::new();
        // Per actor: detection id in use and whether the previous visible frame was dropped.
        let mut ids: Vec<u64> = (1..=self.actors.len() as u64).collect();
        let mut switches = vec![0u64; self.actors.len()];
        let mut dropped = vec![false; self.actors.len()];

        for frame in 0..self.camera_frames() {
            let t = frame as f64 / cam.rate_hz;
            let ts = Timestamp::from_secs(t);
            let ego_now = self.ego.at(t);
            let lag_t = (t - cam.lag_frames as f64 * period).max(0.0);
            let ego_lagged = self.ego.at(lag_t);
            truth.push(TruthRecord {
                t: ts,
                id: EGO_TRUTH_ID,
                x: ego_now.pose.position.x,
                y: ego_now.pose.position.y,
            });

            for (i, actor) in self.actors.iter().enumerate() {
                let Some(p_world) = actor.position(t) else {
                    continue;
                };
                let actor_id = i as u64 + 1;
                truth.push(TruthRecord {
                    t: ts,
                    id: actor_id,
                    x: p_world.x,
                    y: p_world.y,
                });

                let p_now = ego_now.pose.transform_to_vehicle(p_world);
                if !cam.in_fov(p_now) {
                    dropped[i] = false;
                    continue;
                }
                let p_lagged = ego_lagged.pose.transform_to_vehicle(p_world);
                let measured = if cam.in_fov(p_lagged) {
                    camera_observe(p_lagged, cam, rng)
                } else {
                    camera_observe(p_now, cam, rng)
                };
                match measured {
                    None => dropped[i] = true,
                    Some(pos) => {
                        if dropped[i] && cam.id_switch_prob > 0.0 && rng.random_bool(cam.id_switch_prob) {
                            switches[i] += 1;
                            ids[i] = actor_id + switches[i] * ID_SWITCH_STRIDE;
                        }
                        dropped[i] = false;
                        detections.push(Detection::new(ts, ids[i], actor.class, pos));
                    }
                }
            }
        }
        (detections, truth)
    }

    fn ego_stream(&self, rng: &mut ChaCha8Rng) -> Vec<EgoRecord> {
        let noise = &self.sensors;
        let start = self.ego.at(0.0);
        let mut out = vec![EgoRecord::Init(EgoInit {
            t: Timestamp::ZERO,
            pos: start.pose.position,
            heading: start.pose.heading,
            speed: start.speed,
        })];

        let dt = 1.0 / noise.imu_rate_hz;
        let gps_every = (noise.imu_rate_hz / noise.gps_rate_hz).round().max(1.0) as usize;
        let steps = (self.duration * noise.imu_rate_hz).floor() as usize;
        let mut gauss = |sigma: f64| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            z * sigma
        };

        let mut prev = start;
        for k in 1..=steps {
            let t = k as f64 * dt;
            let ts = Timestamp::from_secs(t);
            let now = self.ego.at(t);
            let yaw_rate = normalize_angle(now.pose.heading - prev.pose.heading) / dt;
            let a_long = (now.speed - prev.speed) / dt;
            out.push(EgoRecord::Imu(ImuSample {
                t: ts,
                gyro: [
                    gauss(noise.gyro_sigma),
                    gauss(noise.gyro_sigma),
                    yaw_rate + gauss(noise.gyro_sigma),
                ],
                accel: [
                    a_long + gauss(noise.accel_sigma),
                    now.speed * yaw_rate + gauss(noise.accel_sigma),
                    GRAVITY + gauss(noise.accel_sigma),
                ],
            }));
            out.push(EgoRecord::Wheel(WheelSample {
                t: ts,
                speed: (now.speed + gauss(noise.wheel_sigma)).max(0.0),
            }));
            if k % gps_every == 0 {
                let p = now.pose.position;
                out.push(EgoRecord::Gps(GpsFix {
                    t: ts,
                    pos: Vec2::new(p.x + gauss(noise.gps_sigma), p.y + gauss(noise.gps_sigma)),
                    sigma_pos: noise.gps_sigma.max(MIN_GPS_SIGMA),
                }));
            }
            prev = now;
        }
        out
    }
}

/// Built-in crossing scenarios.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 5] = ["fig5", "fig6", "fig7", "fig8", "conflict15"];

    pub fn describe(name: &str) -> Option<&'static str> {
        Some(match name {
            "fig5" => "stationary ego at origin; pedestrians cross +y at x = 20, 30, 40 m",
            "fig6" => "stationary ego at origin; one pedestrian crosses +y at x = 40 m",
            "fig7" => "ego at 15 mph along +x; pedestrians cross +y at x = 20, 30, 40 m",
            "fig8" => "ego at 15 mph along +x; pedestrian at x = 40 m with dropouts and id switches",
            "conflict15" => "ego at 15 mph; pedestrian at x = 40 m reaches the lane centre as the ego arrives",
            _ => return None,
        })
    }

    pub fn get(name: &str) -> Option<Scenario> {
        let mut s = match name {
            "fig5" => multi_crossing(None, &[20.0, 30.0, 40.0]),
            "fig6" => stationary_crossing(40.0),
            "fig7" => multi_crossing(Some(MPH_15), &[20.0, 30.0, 40.0]),
            "fig8" => {
                let mut s = moving_crossing(40.0);
                s.camera.dropout_prob = 0.05;
                s.camera.id_switch_prob = 0.5;
                s
            }
            "conflict15" => conflict_crossing(40.0),
            _ => return None,
        };
        s.name = name.to_owned();
        Some(s)
    }

    fn pedestrian(start: Vec2, duration: f64) -> Actor {
        Actor {
            class: ObjectClass::Pedestrian,
            start,
            velocity: Vec2::new(0.0, WALKING_SPEED),
            t_start: 0.0,
            t_stop: duration,
        }
    }

    fn fov_edge(x: f64) -> f64 {
        x * CameraModel::default().half_fov().tan()
    }

    /// Stationary ego; a pedestrian walks +y at `x` from just outside the FOV
    /// to just beyond the opposite edge.
    pub fn stationary_crossing(x: f64) -> Scenario {
        let y0 = -(fov_edge(x) + 1.0);
        let duration = 2.0 * (-y0) / WALKING_SPEED + 0.5;
        Scenario {
            name: format!("stationary_x{x}"),
            ego: EgoScript::Stationary,
            actors: vec![pedestrian(Vec2::new(x, y0), duration)],
            camera: CameraModel::default(),
            sensors: EgoNoise::default(),
            duration,
            seed: 0,
        }
    }

    /// Ego at 15 mph; a pedestrian walks +y at `x` from halfway to the FOV
    /// edge, so it stays in view while the ego closes in.
    pub fn moving_crossing(x: f64) -> Scenario {
        let duration = x / MPH_15;
        Scenario {
            name: format!("moving_x{x}"),
            ego: EgoScript::ConstantSpeed { speed: MPH_15 },
            actors: vec![pedestrian(Vec2::new(x, moving_start_y(x)), duration)],
            camera: CameraModel::default(),
            sensors: EgoNoise::default(),
            duration,
            seed: 0,
        }
    }

    fn moving_start_y(x: f64) -> f64 {
        -0.5 * fov_edge(x)
    }

    /// Ego at 15 mph; the pedestrian reaches y = 0 exactly when the ego reaches `x`.
    pub fn conflict_crossing(x: f64) -> Scenario {
        let arrival = x / MPH_15;
        let duration = arrival + 1.0;
        Scenario {
            name: format!("conflict_x{x}"),
            ego: EgoScript::ConstantSpeed { speed: MPH_15 },
            actors: vec![pedestrian(Vec2::new(x, -WALKING_SPEED * arrival), duration)],
            camera: CameraModel::default(),
            sensors: EgoNoise::default(),
            duration,
            seed: 0,
        }
    }

    fn multi_crossing(speed: Option<f64>, xs: &[f64]) -> Scenario {
        let mut base = match speed {
            None => stationary_crossing(xs[xs.len() - 1]),
            Some(_) => moving_crossing(xs[xs.len() - 1]),
        };
        let duration = base.duration;
        base.actors = xs
            .iter()
            .map(|&x| {
                let y0 = match speed {
                    None => -(fov_edge(x) + 1.0),
                    Some(_) => moving_start_y(x),
                };
                pedestrian(Vec2::new(x, y0), duration)
            })
            .collect();
        base
    }
}
