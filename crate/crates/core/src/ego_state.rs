//! Ego-motion EKF over the state (x, y, yaw, pitch, roll, v).
//!
//! The IMU drives the prediction at 200 Hz. Wheel speed, GPS and the gravity
//! direction seen by the accelerometer are applied as measurement updates.
//! Pitch and roll are only observable through gravity, so that update runs
//! with a deliberately large measurement noise.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2, StampedPose, Timestamp, Vec2};

pub const GRAVITY: f64 = 9.80665;

/// Measurements this far behind (or ahead of) the filter time are still applied
/// against the current state.
pub const MEASUREMENT_WINDOW: f64 = 0.010;

pub type StateVec = SVector<f64, 6>;
pub type Covariance = SMatrix<f64, 6, 6>;

const IX: usize = 0;
const IY: usize = 1;
const IYAW: usize = 2;
const IPITCH: usize = 3;
const IROLL: usize = 4;
const IV: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: Timestamp,
    /// Body rates (roll, pitch, yaw axes), rad/s.
    pub gyro: [f64; 3],
    /// Specific force in the body frame, m/s². Level and at rest this reads (0, 0, g).
    pub accel: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelSample {
    pub t: Timestamp,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub t: Timestamp,
    pub pos: Vec2,
    pub sigma_pos: f64,
}

/// Initial pose for the filter; written as the first record of an ego log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoInit {
    pub t: Timestamp,
    pub pos: Vec2,
    pub heading: f64,
    pub speed: f64,
}

impl Default for EgoInit {
    fn default() -> Self {
        EgoInit {
            t: Timestamp::ZERO,
            pos: Vec2::ZERO,
            heading: 0.0,
            speed: 0.0,
        }
    }
}

/// One line of the ego sensor log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EgoRecord {
    Init(EgoInit),
    Imu(ImuSample),
    Wheel(WheelSample),
    Gps(GpsFix),
}

impl EgoRecord {
    pub fn t(&self) -> Timestamp {
        match self {
            EgoRecord::Init(r) => r.t,
            EgoRecord::Imu(r) => r.t,
            EgoRecord::Wheel(r) => r.t,
            EgoRecord::Gps(r) => r.t,
        }
    }
}

/// Sensor noise levels. The same values drive the simulator and the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoNoise {
    pub gyro_sigma: f64,
    pub accel_sigma: f64,
    pub wheel_sigma: f64,
    pub gps_sigma: f64,
    /// Noise of the pitch/roll pseudo-measurement derived from gravity, rad.
    pub attitude_sigma: f64,
    /// Random-walk density added to x and y, m/√s.
    pub position_walk: f64,
    pub imu_rate_hz: f64,
    pub gps_rate_hz: f64,
}

impl Default for EgoNoise {
    fn default() -> Self {
        EgoNoise {
            gyro_sigma: 0.01,
            accel_sigma: 0.1,
            wheel_sigma: 0.05,
            gps_sigma: 0.05,
            attitude_sigma: 0.05,
            position_walk: 0.01,
            imu_rate_hz: 200.0,
            gps_rate_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub t: Timestamp,
    pub pose: Pose2,
    pub pitch: f64,
    pub roll: f64,
    pub speed: f64,
    pub covariance: Covariance,
}

impl VehicleState {
    pub fn new(init: &EgoInit, covariance: Covariance) -> Self {
        VehicleState {
            t: init.t,
            pose: Pose2::new(init.pos, init.heading),
            pitch: 0.0,
            roll: 0.0,
            speed: init.speed.max(0.0),
            covariance,
        }
    }

    /// Default prior for a surveyed start: 5 cm position, 2 mrad heading,
    /// 1 m/s speed. Heading matters most, since every detection is rotated
    /// by it and an error of ε moves a pedestrian at range d by ε·d.
    pub fn from_init(init: &EgoInit) -> Self {
        let sd = [0.05, 0.05, 0.002, 0.02, 0.02, 1.0];
        let cov = Covariance::from_diagonal(&SVector::from_iterator(sd.iter().map(|s| s * s)));
        Self::new(init, cov)
    }

    pub fn stamped_pose(&self) -> StampedPose {
        StampedPose {
            t: self.t,
            pose: self.pose,
        }
    }

    fn vector(&self) -> StateVec {
        StateVec::from_column_slice(&[
            self.pose.position.x,
            self.pose.position.y,
            self.pose.heading,
            self.pitch,
            self.roll,
            self.speed,
        ])
    }

    fn with_vector(&self, t: Timestamp, x: &StateVec, covariance: Covariance) -> VehicleState {
        VehicleState {
            t,
            pose: Pose2::new(Vec2::new(x[IX], x[IY]), x[IYAW]),
            pitch: x[IPITCH],
            roll: x[IROLL],
            speed: x[IV].max(0.0),
            covariance,
        }
    }

    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.covariance.symmetric_eigen().eigenvalues.min()
    }

    /// Symmetric to 1e-9 and no eigenvalue below -1e-9.
    pub fn covariance_is_psd(&self) -> bool {
        let asym = (self.covariance - self.covariance.transpose()).abs().max();
        asym <= 1e-9 && self.min_covariance_eigenvalue() >= -1e-9
    }
}

/// Dead-reckoning step shared by IMU prediction and coasting.
fn propagate(state: &VehicleState, t: Timestamp, rates: [f64; 3], a_long: f64, noise: &EgoNoise) -> VehicleState {
    let dt = t - state.t;
    let x = state.vector();
    let (yaw, pitch, v) = (x[IYAW], x[IPITCH], x[IV]);
    let (s, c) = yaw.sin_cos();

    let mut next = x;
    next[IX] += v * c * dt;
    next[IY] += v * s * dt;
    next[IYAW] = normalize_angle(yaw + rates[2] * dt);
    next[IPITCH] += rates[1] * dt;
    next[IROLL] += rates[0] * dt;
    next[IV] += (a_long - GRAVITY * pitch.sin()) * dt;

    let mut f = Covariance::identity();
    f[(IX, IYAW)] = -v * s * dt;
    f[(IX, IV)] = c * dt;
    f[(IY, IYAW)] = v * c * dt;
    f[(IY, IV)] = s * dt;
    f[(IV, IPITCH)] = -GRAVITY * pitch.cos() * dt;

    let gyro_var = (noise.gyro_sigma * dt).powi(2);
    let mut q = Covariance::zeros();
    q[(IX, IX)] = noise.position_walk.powi(2) * dt;
    q[(IY, IY)] = noise.position_walk.powi(2) * dt;
    q[(IYAW, IYAW)] = gyro_var;
    q[(IPITCH, IPITCH)] = gyro_var;
    q[(IROLL, IROLL)] = gyro_var;
    q[(IV, IV)] = (noise.accel_sigma * dt).powi(2);

    let p = f * state.covariance * f.transpose() + q;
    state.with_vector(t, &next, symmetrize(p))
}

/// Propagates the state to `imu.t` using the IMU sample as control input.
pub fn ekf_predict(state: &VehicleState, imu: &ImuSample, noise: &EgoNoise) -> Result<VehicleState> {
    if imu.t < state.t {
        return Err(Error::NonMonotonicTime {
            prev: state.t.secs(),
            next: imu.t.secs(),
        });
    }
    Ok(propagate(state, imu.t, imu.gyro, imu.accel[0], noise))
}

/// Pitch and roll implied by the gravity direction, when the accelerometer reads close to 1 g.
pub fn attitude_from_accel(accel: [f64; 3]) -> Option<(f64, f64)> {
    let [ax, ay, az] = accel;
    let norm = (ax * ax + ay * ay + az * az).sqrt();
    if (norm - GRAVITY).abs() > 0.5 {
        return None;
    }
    let pitch = ax.atan2(ay.hypot(az));
    let roll = ay.atan2(az);
    Some((pitch, roll))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    Wheel(WheelSample),
    Gps(GpsFix),
    /// Gravity-derived pitch/roll pseudo-measurement.
    Attitude {
        t: Timestamp,
        pitch: f64,
        roll: f64,
    },
}

impl Measurement {
    pub fn t(&self) -> Timestamp {
        match self {
            Measurement::Wheel(w) => w.t,
            Measurement::Gps(g) => g.t,
            Measurement::Attitude { t, .. } => *t,
        }
    }
}

/// Result of a measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction {
    pub state: VehicleState,
    /// Normalized innovation squared.
    pub nis: f64,
    /// Measurement dimension (degrees of freedom of `nis`).
    pub dof: usize,
}

pub fn ekf_update(state: &VehicleState, meas: &Measurement, noise: &EgoNoise) -> Result<Correction> {
    if (meas.t() - state.t).abs() > MEASUREMENT_WINDOW {
        return Err(Error::MeasurementOutOfWindow {
            meas_t: meas.t().secs(),
            state_t: state.t.secs(),
        });
    }
    match *meas {
        Measurement::Wheel(w) => {
            let mut h = SMatrix::<f64, 1, 6>::zeros();
            h[(0, IV)] = 1.0;
            let z = SVector::<f64, 1>::new(w.speed);
            let r = SMatrix::<f64, 1, 1>::new(noise.wheel_sigma.powi(2));
            kalman_update(state, &h, z - h * state.vector(), &r)
        }
        Measurement::Gps(g) => {
            if !(g.sigma_pos > 0.0) {
                return Err(Error::SingularInnovation);
            }
            let mut h = SMatrix::<f64, 2, 6>::zeros();
            h[(0, IX)] = 1.0;
            h[(1, IY)] = 1.0;
            let z = SVector::<f64, 2>::new(g.pos.x, g.pos.y);
            let r = SMatrix::<f64, 2, 2>::identity() * g.sigma_pos.powi(2);
            kalman_update(state, &h, z - h * state.vector(), &r)
        }
        Measurement::Attitude { pitch, roll, .. } => {
            let mut h = SMatrix::<f64, 2, 6>::zeros();
            h[(0, IPITCH)] = 1.0;
            h[(1, IROLL)] = 1.0;
            let innovation =
                SVector::<f64, 2>::new(normalize_angle(pitch - state.pitch), normalize_angle(roll - state.roll));
            let r = SMatrix::<f64, 2, 2>::identity() * noise.attitude_sigma.powi(2);
            kalman_update(state, &h, innovation, &r)
        }
    }
}

fn kalman_update<const M: usize>(
    state: &VehicleState,
    h: &SMatrix<f64, M, 6>,
    innovation: SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
) -> Result<Correction> {
    if innovation.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInnovation);
    }
    let p = &state.covariance;
    let s = h * p * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    if s_inv.iter().any(|v| !v.is_finite()) || s.diagonal().iter().any(|d| !(*d > 0.0)) {
        return Err(Error::SingularInnovation);
    }
    let k = p * h.transpose() * s_inv;
    let mut x = state.vector() + k * innovation;
    x[IYAW] = normalize_angle(x[IYAW]);

    // Joseph form keeps the covariance symmetric PSD under rounding.
    let i_kh = Covariance::identity() - k * h;
    let p_post = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    let nis = (innovation.transpose() * s_inv * innovation)[(0, 0)];

    Ok(Correction {
        state: state.with_vector(state.t, &x, symmetrize(p_post)),
        nis,
        dof: M,
    })
}

fn symmetrize(p: Covariance) -> Covariance {
    (p + p.transpose()) * 0.5
}

/// Single-owner filter driver: feeds log records through predict/update in arrival order.
#[derive(Debug, Clone)]
pub struct EgoFilter {
    state: VehicleState,
    noise: EgoNoise,
}

impl EgoFilter {
    pub fn new(init: &EgoInit, noise: EgoNoise) -> Self {
        EgoFilter {
            state: VehicleState::from_init(init),
            noise,
        }
    }

    pub fn with_state(state: VehicleState, noise: EgoNoise) -> Self {
        EgoFilter { state, noise }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn noise(&self) -> &EgoNoise {
        &self.noise
    }

    /// Applies one log record. Returns the correction for measurement records.
    pub fn process(&mut self, record: &EgoRecord) -> Result<Option<Correction>> {
        match record {
            EgoRecord::Init(init) => {
                self.state = VehicleState::from_init(init);
                Ok(None)
            }
            EgoRecord::Imu(imu) => {
                self.state = ekf_predict(&self.state, imu, &self.noise)?;
                if let Some((pitch, roll)) = attitude_from_accel(imu.accel) {
                    let meas = Measurement::Attitude { t: imu.t, pitch, roll };
                    self.state = ekf_update(&self.state, &meas, &self.noise)?.state;
                }
                Ok(None)
            }
            EgoRecord::Wheel(w) => self.apply(Measurement::Wheel(*w)),
            EgoRecord::Gps(g) => self.apply(Measurement::Gps(*g)),
        }
    }

    fn apply(&mut self, meas: Measurement) -> Result<Option<Correction>> {
        // A measurement slightly ahead of the last IMU sample: coast up to it first.
        if meas.t() > self.state.t {
            self.coast_to(meas.t());
        }
        let correction = ekf_update(&self.state, &meas, &self.noise)?;
        self.state = correction.state;
        Ok(Some(correction))
    }

    /// Constant-velocity, constant-heading propagation with no IMU input.
    pub fn coast_to(&mut self, t: Timestamp) {
        if t > self.state.t {
            let a_hold = GRAVITY * self.state.pitch.sin();
            self.state = propagate(&self.state, t, [0.0; 3], a_hold, &self.noise);
        }
    }
}
