use serde::{Deserialize, Serialize};

use super::capability::{synth_detect, CapabilityProfile};
use super::episode::{split_by_view, FrameRecord};
use crate::branches::BranchConfig;
use crate::error::{Error, Result};
use crate::metrics::{summarize, EvalConfig};
use crate::predictors::{fit_update_latency, train_gbrt, AccuracyFeatures, GbrtParams, LinearLatencyModel, TrainReport};
use crate::rng::{stream, Stream};
use crate::types::{distribution, CameraRig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub gbrt: GbrtParams,
    /// Use every n-th logged frame.
    pub frame_stride: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            gbrt: GbrtParams::default(),
            frame_stride: 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Replays every deployed branch on each logged view that holds ground
/// truth and scores it with the per-view detection score. Views without
/// ground truth are skipped: their score is undefined.
#[allow(clippy::too_many_arguments)]
pub fn collect_samples(
    frames: &[FrameRecord],
    episode: u64,
    rig: &CameraRig,
    branches: &[BranchConfig],
    caps: &CapabilityProfile,
    seed: u64,
    stride: usize,
    out: &mut TrainingSet,
) -> Result<()> {
    let eval = EvalConfig::default();
    for rec in frames.iter().step_by(stride.max(1)) {
        let gt_by_view = split_by_view(&rec.gt, rig);
        let fc_by_view = split_by_view(&rec.forecasts, rig);
        let dists = distribution(&rec.forecasts, rig);
        for (j, gts) in gt_by_view.iter().enumerate() {
            if gts.is_empty() {
                continue;
            }
            let fc = &fc_by_view[j];
            let conf = if fc.is_empty() {
                0.0
            } else {
                fc.iter().map(|b| b.confidence).sum::<f64>() / fc.len() as f64
            };
            for &b in branches {
                let preds = if b.is_tracker() {
                    fc.clone()
                } else {
                    let mut rng = stream(seed, Stream::Training, &[episode, rec.frame as u64, j as u64]);
                    synth_detect(b, gts, &rig.sectors()[j], caps, &mut rng)?
                };
                let ds = summarize([(&preds[..], &gts[..])], &eval).summary.ds;
                out.features.push(AccuracyFeatures::new(dists[j].clone(), b, conf).to_vec());
                out.targets.push(ds);
            }
        }
    }
    Ok(())
}

/// `(track count, measured update ms)` pairs from logged frames.
pub fn update_samples(frames: &[FrameRecord]) -> Vec<(usize, f64)> {
    frames.iter().map(|r| (r.track_count, r.actual_update_ms)).collect()
}

pub struct TrainedModels {
    pub accuracy: crate::predictors::GbrtModel,
    pub update: LinearLatencyModel,
    pub report: TrainReport,
}

pub fn train_from_logs(
    episodes: &[Vec<FrameRecord>],
    rig: &CameraRig,
    branches: &[BranchConfig],
    caps: &CapabilityProfile,
    seed: u64,
    params: &TrainingParams,
) -> Result<TrainedModels> {
    if episodes.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut set = TrainingSet::default();
    let mut lat = Vec::new();
    for (e, frames) in episodes.iter().enumerate() {
        collect_samples(frames, e as u64, rig, branches, caps, seed, params.frame_stride, &mut set)?;
        lat.extend(update_samples(frames));
    }
    let (accuracy, report) = train_gbrt(&set.features, &set.targets, &params.gbrt)?;
    let update = fit_update_latency(&lat)?;
    log::info!("trained on {} samples, train R2 {:.4}", report.samples, report.r_squared);
    Ok(TrainedModels { accuracy, update, report })
}
