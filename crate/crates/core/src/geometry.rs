//! Reference frames and the shared value types every other module consumes.
//!
//! Three planar frames are in play:
//!
//! * **vehicle**: origin at the ego reference point, +x forward, +y left.
//! * **world**: local ENU plane anchored at scenario start.
//! * **analysis**: world rotated so the ego's *initial* heading is +x. Longitudinal
//!   motion lives on x and lateral motion on y, so each axis can be fitted alone.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal camera period used for timestamp alignment checks.
pub const CAMERA_PERIOD: f64 = 1.0 / 36.0;

/// Seconds since scenario epoch.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(f64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0.0);

    pub fn from_secs(secs: f64) -> Self {
        Timestamp(secs)
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl Sub for Timestamp {
    type Output = f64;

    fn sub(self, rhs: Timestamp) -> f64 {
        self.0 - rhs.0
    }
}

impl Add<f64> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: f64) -> Timestamp {
        Timestamp(self.0 + rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}s", self.0)
    }
}

/// Planar vector in meters. In vehicle and analysis frames x is longitudinal and y lateral.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product; positive when `other` is left of `self`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2 { x, y }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;

    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;

    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;

    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;

    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// World-frame position and heading of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Pose2 {
            position,
            heading: normalize_angle(heading),
        }
    }

    /// Maps a vehicle-frame point into the world frame.
    pub fn transform_to_world(&self, p_vehicle: Vec2) -> Vec2 {
        self.position + p_vehicle.rotate(self.heading)
    }

    /// Maps a world point into this pose's vehicle frame.
    pub fn transform_to_vehicle(&self, p_world: Vec2) -> Vec2 {
        (p_world - self.position).rotate(-self.heading)
    }
}

/// A pose together with the time it is valid for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub t: Timestamp,
    pub pose: Pose2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Pedestrian,
    Bicycle,
    Vehicle,
}

impl ObjectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Bicycle => "bicycle",
            ObjectClass::Vehicle => "vehicle",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One camera observation, already projected to the ground plane in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t: Timestamp,
    #[serde(rename = "id")]
    pub track_id: u64,
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
}

impl Detection {
    pub fn new(t: Timestamp, track_id: u64, class: ObjectClass, pos: Vec2) -> Self {
        Detection {
            t,
            track_id,
            class,
            x: pos.x,
            y: pos.y,
        }
    }

    pub fn pos_vehicle_frame(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Bearing from the vehicle's forward axis, radians.
    pub fn bearing(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

/// Fixes the world→analysis rotation for the lifetime of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameSet {
    pub initial_heading: f64,
}

impl FrameSet {
    pub fn new(initial_heading: f64) -> Self {
        FrameSet {
            initial_heading: normalize_angle(initial_heading),
        }
    }

    pub fn to_analysis(&self, p_world: Vec2) -> Vec2 {
        p_world.rotate(-self.initial_heading)
    }

    pub fn from_analysis(&self, p_analysis: Vec2) -> Vec2 {
        p_analysis.rotate(self.initial_heading)
    }
}

/// Motion-compensates a detection into the world frame using the ego pose at `ego.t`.
///
/// The pose must be no older (or newer) than one camera period relative to the detection.
pub fn to_world(det: &Detection, ego: &StampedPose) -> Result<Vec2> {
    // Small slack so a pose sampled exactly one period away is still accepted.
    if (det.t - ego.t).abs() > CAMERA_PERIOD + 1e-9 {
        return Err(Error::StaleEgo {
            det_t: det.t.secs(),
            ego_t: ego.t.secs(),
        });
    }
    Ok(ego.pose.transform_to_world(det.pos_vehicle_frame()))
}

pub fn to_analysis(p_world: Vec2, frames: &FrameSet) -> Vec2 {
    frames.to_analysis(p_world)
}
