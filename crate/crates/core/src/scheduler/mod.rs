//! Per-frame branch-to-view scheduling.

mod solve;

pub use solve::{best_uniform, solve, solve_bruteforce, ScheduleDecision, ScheduleProblem, BRUTE_FORCE_LIMIT, MAX_BATCHED_VIEWS};

use serde::Serialize;

use crate::branches::{BranchConfig, DeviceProfile};
use crate::error::Result;
use crate::predictors::{AccuracyFeatures, AccuracyPredictor, LinearLatencyModel, FEATURE_WIDTH};
use crate::tracker::Tracker;
use crate::types::{distribution, ego_transform, view_of, Box3D, CameraRig, EgoPose};

/// Row of the heaviest branch: largest marginal latency, ties to the later
/// row.
pub fn heaviest_row(latencies: &[f64]) -> usize {
    let mut best = 0;
    for (i, l) in latencies.iter().enumerate() {
        if *l >= latencies[best] {
            best = i;
        }
    }
    best
}

/// Divides each view's column by the score of row `reference`. Columns where
/// that score is not positive pass through unchanged; their view indices are
/// returned.
pub fn normalize_scores(scores: &[Vec<f64>], reference: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut out = scores.to_vec();
    let mut unscaled = Vec::new();
    let views = scores.first().map_or(0, Vec::len);
    for j in 0..views {
        let d = scores[reference][j];
        if d > 0.0 {
            for row in out.iter_mut() {
                row[j] /= d;
            }
        } else {
            unscaled.push(j);
        }
    }
    if !unscaled.is_empty() {
        log::debug!("reference branch scores zero in views {unscaled:?}; columns left unscaled");
    }
    (out, unscaled)
}

/// Budget left for per-view work: `max(target - update - fixed, 0)`.
pub fn effective_budget(target_ms: f64, predicted_update_ms: f64, fixed_ms: f64) -> f64 {
    let t = target_ms - predicted_update_ms - fixed_ms;
    if t > 0.0 {
        t
    } else {
        log::warn!("no budget left for detection: target {target_ms} ms, update {predicted_update_ms:.3} ms, fixed {fixed_ms} ms");
        0.0
    }
}

/// Everything `sched` needs besides the tracker state.
pub struct SchedContext<'a> {
    pub rig: &'a CameraRig,
    /// Deployed branches in enumeration order; must include the tracker.
    pub branches: &'a [BranchConfig],
    pub accuracy: &'a dyn AccuracyPredictor,
    pub update_model: &'a LinearLatencyModel,
    pub device: &'a DeviceProfile,
    pub target_ms: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SchedOutcome {
    pub decision: ScheduleDecision,
    #[serde(skip)]
    pub problem: ScheduleProblem,
    /// Raw predicted scores, `[row][view]`.
    pub raw_scores: Vec<Vec<f64>>,
    pub t_max_ms: f64,
    pub predicted_update_ms: f64,
    pub fixed_ms: f64,
    /// Forecast track boxes in the current ego frame.
    #[serde(skip)]
    pub forecasts: Vec<Box3D>,
}

impl SchedOutcome {
    /// Predicted full-frame latency of the chosen assignment.
    pub fn predicted_frame_ms(&self) -> f64 {
        self.decision.predicted_latency + self.fixed_ms + self.predicted_update_ms
    }
}

/// Forecasts the tracker's state to the current frame and schedules it.
pub fn sched(tracker: &Tracker, dt: f64, pose: &EgoPose, ctx: &SchedContext<'_>) -> Result<SchedOutcome> {
    let forecasts: Vec<Box3D> = tracker
        .forecast_all(dt)
        .iter()
        .map(|t| ego_transform(&t.to_box(), &EgoPose::ORIGIN, pose))
        .collect();
    sched_forecasts(forecasts, ctx)
}

/// Schedules a frame from forecast boxes already expressed in the ego frame.
pub fn sched_forecasts(forecasts: Vec<Box3D>, ctx: &SchedContext<'_>) -> Result<SchedOutcome> {
    let views = ctx.rig.view_count();
    let dists = distribution(&forecasts, ctx.rig);
    let mut conf_sum = vec![0.0; views];
    let mut conf_n = vec![0usize; views];
    for b in &forecasts {
        let v = view_of(b.center, ctx.rig);
        conf_sum[v] += b.confidence;
        conf_n[v] += 1;
    }

    let mut raw = vec![vec![0.0; views]; ctx.branches.len()];
    let mut latencies = Vec::with_capacity(ctx.branches.len());
    let mut buf = Vec::with_capacity(FEATURE_WIDTH);
    for (i, &b) in ctx.branches.iter().enumerate() {
        latencies.push(ctx.device.branch_latency(b)?);
        for j in 0..views {
            let conf = if conf_n[j] > 0 { conf_sum[j] / conf_n[j] as f64 } else { 0.0 };
            AccuracyFeatures::new(dists[j].clone(), b, conf).write_into(&mut buf);
            raw[i][j] = ctx.accuracy.predict_features(&buf)?;
        }
    }
    let (scores, _) = normalize_scores(&raw, heaviest_row(&latencies));

    let predicted_update_ms = ctx.update_model.predict(forecasts.len());
    let fixed_ms = ctx.device.fixed_latency();
    let t_max_ms = effective_budget(ctx.target_ms, predicted_update_ms, fixed_ms);
    let problem = ScheduleProblem::new(ctx.branches.to_vec(), scores, latencies, t_max_ms, ctx.alpha)?;
    let decision = solve(&problem);
    Ok(SchedOutcome {
        decision,
        problem,
        raw_scores: raw,
        t_max_ms,
        predicted_update_ms,
        fixed_ms,
        forecasts,
    })
}
