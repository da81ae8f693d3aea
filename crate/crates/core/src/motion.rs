//! Constant-velocity Kalman filter over the 10-dimensional box state
//! `(x, y, z, l, w, h, a, vx, vy, vz)`.
//!
//! Velocities are displacements per frame. Observations are the 7 pose and
//! size components of a detected box.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::geometry::{wrap_angle, Box3D};

pub const STATE_DIM: usize = 10;
pub const MEAS_DIM: usize = 7;
const HEADING: usize = 6;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Observation = SVector<f64, MEAS_DIM>;
pub type MeasurementMatrix = SMatrix<f64, MEAS_DIM, STATE_DIM>;
pub type MeasurementCovariance = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotionError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

/// Mean and covariance of one track's motion state.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

impl KalmanState {
    /// The pose/size part of the mean as a box.
    pub fn to_box(&self) -> Box3D {
        let m = &self.mean;
        Box3D { x: m[0], y: m[1], z: m[2], l: m[3].max(0.0), w: m[4].max(0.0), h: m[5].max(0.0), a: wrap_angle(m[6]) }
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.mean[7], self.mean[8], self.mean[9]]
    }
}

/// Filter matrices. `Default` gives the constant-velocity model with the
/// library's default noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanConfig {
    pub transition: StateMatrix,
    pub measurement: MeasurementMatrix,
    pub measurement_noise: MeasurementCovariance,
    pub process_noise: StateMatrix,
    pub initial_covariance: StateMatrix,
}

pub const DEFAULT_P0_DIAG: [f64; STATE_DIM] = [1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1, 10.0, 10.0, 10.0];
pub const DEFAULT_R_DIAG: [f64; MEAS_DIM] = [0.5, 0.5, 0.5, 0.05, 0.05, 0.05, 0.05];
pub const DEFAULT_Q_DIAG: [f64; STATE_DIM] = [0.01; STATE_DIM];

impl Default for KalmanConfig {
    fn default() -> Self {
        Self::from_diagonals(&DEFAULT_P0_DIAG, &DEFAULT_R_DIAG, &DEFAULT_Q_DIAG)
    }
}

impl KalmanConfig {
    /// Constant-velocity model with diagonal noise matrices.
    pub fn from_diagonals(
        p0: &[f64; STATE_DIM],
        r: &[f64; MEAS_DIM],
        q: &[f64; STATE_DIM],
    ) -> Self {
        KalmanConfig {
            transition: constant_velocity_transition(),
            measurement: pose_measurement(),
            measurement_noise: MeasurementCovariance::from_diagonal(&SVector::from(*r)),
            process_noise: StateMatrix::from_diagonal(&SVector::from(*q)),
            initial_covariance: StateMatrix::from_diagonal(&SVector::from(*p0)),
        }
    }
}

/// Identity plus unit coupling from velocity into position.
pub fn constant_velocity_transition() -> StateMatrix {
    let mut a = StateMatrix::identity();
    for i in 0..3 {
        a[(i, 7 + i)] = 1.0;
    }
    a
}

/// Selects `(x, y, z, l, w, h, a)` from the state.
pub fn pose_measurement() -> MeasurementMatrix {
    let mut h = MeasurementMatrix::zeros();
    for i in 0..MEAS_DIM {
        h[(i, i)] = 1.0;
    }
    h
}

pub fn observation_from_box(b: &Box3D) -> Observation {
    Observation::from(b.to_array())
}

/// Starts a track at the detected box with zero velocity and covariance `P0`.
pub fn kf_init(b: &Box3D, cfg: &KalmanConfig) -> KalmanState {
    let mut mean = StateVector::zeros();
    for (i, v) in b.to_array().into_iter().enumerate() {
        mean[i] = v;
    }
    mean[HEADING] = wrap_angle(mean[HEADING]);
    KalmanState { mean, covariance: cfg.initial_covariance }
}

/// One-frame prediction. Returns the prior state and its box.
pub fn kf_predict(s: &KalmanState, cfg: &KalmanConfig) -> (KalmanState, Box3D) {
    let a = &cfg.transition;
    let mut mean = a * s.mean;
    mean[HEADING] = wrap_angle(mean[HEADING]);
    let covariance = a * s.covariance * a.transpose() + cfg.process_noise;
    let predicted = KalmanState { mean, covariance };
    let b = predicted.to_box();
    (predicted, b)
}

/// Measurement update of a predicted state.
///
/// The heading innovation is wrapped into `(-pi, pi]`. The covariance uses the
/// Joseph form and is re-symmetrized.
pub fn kf_update(s: &KalmanState, obs: &Observation, cfg: &KalmanConfig) -> Result<KalmanState, MotionError> {
    let h = &cfg.measurement;
    let p = &s.covariance;
    let innovation_cov = h * p * h.transpose() + cfg.measurement_noise;
    let inv = innovation_cov.try_inverse().ok_or(MotionError::SingularInnovation)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(MotionError::SingularInnovation);
    }
    let gain = p * h.transpose() * inv;

    let mut innovation = obs - h * s.mean;
    innovation[HEADING] = wrap_angle(innovation[HEADING]);
    let mut mean = s.mean + gain * innovation;
    mean[HEADING] = wrap_angle(mean[HEADING]);

    let i_kh = StateMatrix::identity() - gain * h;
    let joseph = i_kh * p * i_kh.transpose() + gain * cfg.measurement_noise * gain.transpose();
    let covariance = (joseph + joseph.transpose()) * 0.5;
    Ok(KalmanState { mean, covariance })
}
