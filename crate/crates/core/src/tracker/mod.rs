//! 3D multi-object tracking: constant-velocity Kalman forecasting, optimal
//! association and the confidence-halving track lifecycle.

mod assignment;
mod kalman;

pub use assignment::hungarian;
pub use kalman::{forecast, measurement, min_eigenvalue, update, Corrected, KalmanModel, StateMatrix, StateVector, TrackState, STATE_DIM};

use serde::{Deserialize, Serialize};

use crate::types::Box3D;

/// Penalty applied to an unmatched track's confidence per missed frame.
pub const CONFIDENCE_HALVING_FACTOR: f64 = 0.5;

const INVALID_PAIR_COST: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Base association gate in meters; the track's speed times `dt` is
    /// added per pair.
    pub gate_distance: f64,
    pub confidence_threshold: f64,
    /// When set, tracks whose forecast lies in a view that produced no
    /// detections this frame are not penalized.
    pub exempt_uncovered_views: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate_distance: 2.0,
            confidence_threshold: 0.10,
            exempt_uncovered_views: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.gate_distance > 0.0) {
            return Err(crate::Error::config("tracker", "gate_distance", "must be positive"));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(crate::Error::config("tracker", "confidence_threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)`
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Planar center distance.
fn planar(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Optimal one-to-one matching of forecast tracks to detections minimizing
/// total planar center distance. Pairs of different class or beyond the
/// gate are never matched.
pub fn associate(tracks: &[TrackState], detections: &[Box3D], dt: f64, config: &TrackerConfig) -> Association {
    let gate = |t: &TrackState| config.gate_distance + t.planar_speed() * dt;
    let valid = |t: &TrackState, d: &Box3D| t.class == d.class && planar(t.position(), d.center) <= gate(t);
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .map(|t| {
            detections
                .iter()
                .map(|d| {
                    if valid(t, d) {
                        planar(t.position(), d.center)
                    } else {
                        INVALID_PAIR_COST
                    }
                })
                .collect()
        })
        .collect();

    let mut out = Association::default();
    let mut det_used = vec![false; detections.len()];
    for (ti, col) in hungarian(&cost).into_iter().enumerate() {
        match col {
            Some(di) if valid(&tracks[ti], &detections[di]) => {
                out.pairs.push((ti, di));
                det_used[di] = true;
            }
            _ => out.unmatched_tracks.push(ti),
        }
    }
    out.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

pub fn forecast_all(tracks: &[TrackState], dt: f64, model: &KalmanModel) -> Vec<TrackState> {
    tracks.iter().map(|t| forecast(t, dt, model)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub matched: usize,
    pub penalized: usize,
    pub removed: usize,
    pub born: usize,
    pub covariance_repairs: usize,
}

/// Owns the live tracks of one episode. All mutation goes through
/// [`Tracker::step`]; ids are never reused.
#[derive(Debug, Clone)]
pub struct Tracker {
    model: KalmanModel,
    config: TrackerConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
}

impl Tracker {
    pub fn new(model: KalmanModel, config: TrackerConfig) -> Self {
        Self {
            model,
            config,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn model(&self) -> &KalmanModel {
        &self.model
    }

    pub fn forecast_all(&self, dt: f64) -> Vec<TrackState> {
        forecast_all(&self.tracks, dt, &self.model)
    }

    /// Advances all tracks by `dt` and folds in this frame's detections.
    ///
    /// `covered` reports whether a forecast track lies in a view that ran
    /// detection this frame. Unmatched tracks outside covered views keep
    /// their confidence unless the exemption is disabled.
    pub fn step(&mut self, detections: &[Box3D], dt: f64, covered: &dyn Fn(&TrackState) -> bool) -> StepReport {
        let predicted = self.forecast_all(dt);
        let assoc = associate(&predicted, detections, dt, &self.config);
        let mut report = StepReport {
            matched: assoc.pairs.len(),
            ..Default::default()
        };

        let mut next: Vec<Option<TrackState>> = predicted.into_iter().map(Some).collect();
        for &(ti, di) in &assoc.pairs {
            if let Some(t) = next[ti].as_mut() {
                let c = update(t, &detections[di], &self.model);
                report.covariance_repairs += usize::from(c.repaired);
                *t = c.track;
            }
        }
        for &ti in &assoc.unmatched_tracks {
            if let Some(t) = next[ti].as_mut() {
                if !self.config.exempt_uncovered_views || covered(t) {
                    t.confidence *= CONFIDENCE_HALVING_FACTOR;
                    t.misses += 1;
                    report.penalized += 1;
                }
            }
        }

        let threshold = self.config.confidence_threshold;
        let before = next.len();
        self.tracks = next
            .into_iter()
            .flatten()
            .filter(|t| t.confidence >= threshold)
            .map(|mut t| {
                t.age += 1;
                t
            })
            .collect();
        report.removed = before - self.tracks.len();

        for &di in &assoc.unmatched_detections {
            self.tracks.push(TrackState::birth(self.next_id, &detections[di], &self.model));
            self.next_id += 1;
            report.born += 1;
        }
        report
    }
}
