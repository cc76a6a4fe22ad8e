use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::branches::{batched_cost, BranchConfig, DeviceProfile};
use crate::error::{Error, Result};
use crate::scheduler::MAX_BATCHED_VIEWS;

/// Tracker update latency as a linear function of the tracked-object count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearLatencyModel {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearLatencyModel {
    pub fn predict(&self, tracks: usize) -> f64 {
        (self.intercept + self.slope * tracks as f64).max(0.0)
    }
}

/// Ordinary least squares over `(track count, measured ms)`. The slope and
/// intercept are clamped to be non-negative.
pub fn fit_update_latency(samples: &[(usize, f64)]) -> Result<LinearLatencyModel> {
    if samples.len() < 2 {
        return Err(Error::DegenerateDesign("need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 as f64 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateDesign("all track counts are identical".into()));
    }
    let sxy: f64 = samples.iter().map(|s| (s.0 as f64 - mx) * (s.1 - my)).sum();
    let mut slope = sxy / sxx;
    let mut intercept = my - slope * mx;
    if slope < 0.0 {
        slope = 0.0;
        intercept = my;
    }
    Ok(LinearLatencyModel {
        slope,
        intercept: intercept.max(0.0),
    })
}

/// Total per-view latency of an assignment. Without batching the views are
/// summed in order; with batching, views are grouped per branch and the
/// groups summed in branch index order.
pub fn assignment_latency(assignment: &[BranchConfig], device: &DeviceProfile, alpha: f64) -> Result<f64> {
    if alpha == 1.0 || assignment.len() > MAX_BATCHED_VIEWS {
        let mut total = 0.0;
        for b in assignment {
            total += device.branch_latency(*b)?;
        }
        return Ok(total);
    }
    let mut groups: BTreeMap<usize, (BranchConfig, usize)> = BTreeMap::new();
    for b in assignment {
        groups.entry(b.index()).or_insert((*b, 0)).1 += 1;
    }
    let mut total = 0.0;
    for (b, k) in groups.into_values() {
        total += batched_cost(device.branch_latency(b)?, k, alpha);
    }
    Ok(total)
}

/// Predicted end-to-end frame latency for a per-view assignment.
pub fn predict_frame_latency(
    assignment: &[BranchConfig],
    device: &DeviceProfile,
    update: &LinearLatencyModel,
    track_count: usize,
    alpha: f64,
) -> Result<f64> {
    Ok(assignment_latency(assignment, device, alpha)? + device.fixed_latency() + update.predict(track_count))
}
