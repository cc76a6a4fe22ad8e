use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::types::{Box3D, ObjectClass};

pub const STATE_DIM: usize = 9;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

const MIN_SIZE: f64 = 1e-3;

/// Constant-velocity model over `(x, y, z, vx, vy, vz, w, h, l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanModel {
    /// Diagonal of the process noise, scaled by `dt` at each forecast.
    pub process_noise: [f64; STATE_DIM],
    /// Diagonal of the measurement noise.
    pub measurement_noise: [f64; STATE_DIM],
}

impl Default for KalmanModel {
    fn default() -> Self {
        Self {
            process_noise: [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.01, 0.01, 0.01],
            measurement_noise: [0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.04, 0.04, 0.04],
        }
    }
}

impl KalmanModel {
    pub fn transition(dt: f64) -> StateMatrix {
        let mut a = StateMatrix::identity();
        for i in 0..3 {
            a[(i, i + 3)] = dt;
        }
        a
    }

    pub fn q(&self) -> StateMatrix {
        StateMatrix::from_diagonal(&StateVector::from(self.process_noise))
    }

    pub fn r(&self) -> StateMatrix {
        StateMatrix::from_diagonal(&StateVector::from(self.measurement_noise))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub mean: StateVector,
    pub covariance: StateMatrix,
    pub class: ObjectClass,
    pub confidence: f64,
    pub misses: u32,
    pub age: u32,
    /// Carried from the latest detection; not part of the filtered state.
    pub yaw: f64,
}

impl TrackState {
    /// Starts a track from a detection; the initial covariance is the
    /// measurement noise.
    pub fn birth(id: u64, detection: &Box3D, model: &KalmanModel) -> Self {
        Self {
            id,
            mean: measurement(detection),
            covariance: model.r(),
            class: detection.class,
            confidence: detection.confidence,
            misses: 0,
            age: 0,
            yaw: detection.yaw,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.mean[0], self.mean[1], self.mean[2]]
    }

    pub fn planar_speed(&self) -> f64 {
        self.mean[3].hypot(self.mean[4])
    }

    /// The track as a box, in whatever frame the track lives in.
    pub fn to_box(&self) -> Box3D {
        let m = &self.mean;
        Box3D {
            center: [m[0], m[1], m[2]],
            size: [m[6].max(MIN_SIZE), m[7].max(MIN_SIZE), m[8].max(MIN_SIZE)],
            velocity: [m[3], m[4], m[5]],
            yaw: self.yaw,
            class: self.class,
            confidence: self.confidence,
        }
    }
}

pub fn measurement(b: &Box3D) -> StateVector {
    StateVector::from([
        b.center[0],
        b.center[1],
        b.center[2],
        b.velocity[0],
        b.velocity[1],
        b.velocity[2],
        b.size[0],
        b.size[1],
        b.size[2],
    ])
}

/// Propagates a track `dt` seconds ahead: `mean' = A mean`,
/// `P' = A P A^T + Q dt`.
pub fn forecast(track: &TrackState, dt: f64, model: &KalmanModel) -> TrackState {
    debug_assert!(dt >= 0.0);
    let a = KalmanModel::transition(dt);
    let mut covariance = a * track.covariance * a.transpose() + model.q() * dt;
    symmetrize(&mut covariance);
    TrackState {
        mean: a * track.mean,
        covariance,
        ..track.clone()
    }
}

/// Result of a Kalman correction.
#[derive(Debug, Clone)]
pub struct Corrected {
    pub track: TrackState,
    /// Set when the updated covariance had a negative eigenvalue and was
    /// projected back onto the PSD cone.
    pub repaired: bool,
}

/// Corrects a forecast track with a full 9-dim measurement taken from
/// `detection`. Uses the Joseph form so the covariance stays PSD.
pub fn update(track: &TrackState, detection: &Box3D, model: &KalmanModel) -> Corrected {
    let z = measurement(detection);
    let p = &track.covariance;
    let r = model.r();
    let s = p + r;
    let gain = match s.try_inverse() {
        Some(s_inv) => p * s_inv,
        None => StateMatrix::zeros(),
    };
    let innovation = z - track.mean;
    let mut mean = track.mean + gain * innovation;
    for i in 6..9 {
        mean[i] = mean[i].max(MIN_SIZE);
    }
    let ikh = StateMatrix::identity() - gain;
    let mut covariance = ikh * p * ikh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut covariance);
    let repaired = if min_eigenvalue(&covariance) < -1e-9 {
        log::warn!("track {}: covariance lost positive semidefiniteness, repairing", track.id);
        covariance = project_psd(&covariance);
        true
    } else {
        false
    };
    Corrected {
        track: TrackState {
            mean,
            covariance,
            confidence: track.confidence.max(detection.confidence),
            misses: 0,
            yaw: detection.yaw,
            ..track.clone()
        },
        repaired,
    }
}

pub fn symmetrize(m: &mut StateMatrix) {
    *m = (*m + m.transpose()) * 0.5;
}

pub fn min_eigenvalue(m: &StateMatrix) -> f64 {
    m.symmetric_eigenvalues().min()
}

fn project_psd(m: &StateMatrix) -> StateMatrix {
    let eig = m.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut out = eig.eigenvectors * StateMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}
