use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::capability::{synth_detect, CapabilityProfile};
use super::scenario::{generate_scenario, GroundTruthFrame, ScenarioConfig};
use crate::branches::{batched_cost, BranchConfig, DeviceProfile};
use crate::error::{Error, Result};
use crate::metrics::{EvalConfig, EvalReport, Evaluator};
use crate::predictors::{assignment_latency, AccuracyPredictor, LinearLatencyModel};
use crate::rng::{stream, Stream};
use crate::scheduler::{best_uniform, effective_budget, sched_forecasts, SchedContext, MAX_BATCHED_VIEWS};
use crate::tracker::{KalmanModel, StepReport, Tracker, TrackerConfig};
use crate::types::{ego_transform, view_of, Box3D, CameraRig, EgoPose};

/// How each frame's branch assignment is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "branch", rename_all = "snake_case")]
pub enum Policy {
    /// Optimal per-view assignment from predicted scores.
    Adaptive,
    /// One branch for every view: the best predicted total within budget.
    PerFrame,
    /// The given branch on every view, every frame, regardless of budget.
    Fixed(BranchConfig),
    /// Tracker on every view after the first frame.
    AllTracker,
    /// Seeded random assignment, used to collect training logs.
    Explore,
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::Adaptive => "adaptive".into(),
            Policy::PerFrame => "per_frame".into(),
            Policy::Fixed(b) => format!("fixed:{b}"),
            Policy::AllTracker => "all_tracker".into(),
            Policy::Explore => "explore".into(),
        }
    }

    fn needs_predictor(&self) -> bool {
        matches!(self, Policy::Adaptive | Policy::PerFrame)
    }
}

/// Stamped into every record written for a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest_hash: String,
    pub tool_version: String,
}

pub struct Predictors<'a> {
    pub accuracy: &'a dyn AccuracyPredictor,
    pub update: LinearLatencyModel,
}

pub struct SystemConfig<'a> {
    /// Deployed branches in enumeration order, tracker included.
    pub branches: &'a [BranchConfig],
    pub tracker: TrackerConfig,
    pub kalman: KalmanModel,
    pub predictors: Option<Predictors<'a>>,
    pub device: &'a DeviceProfile,
    pub capability: &'a CapabilityProfile,
    pub target_ms: f64,
    pub alpha: f64,
    /// Sigma of the mean-one lognormal multiplier on every simulated
    /// module latency; 0 disables noise.
    pub latency_noise_sigma: f64,
    pub policy: Policy,
    pub eval: EvalConfig,
    pub provenance: Provenance,
}

/// One JSON-Lines record per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub timestamp: f64,
    pub ego: EgoPose,
    pub gt_ids: Vec<u64>,
    /// Ground truth in the ego frame.
    pub gt: Vec<Box3D>,
    /// Track forecasts for this frame in the ego frame, before the update.
    pub forecasts: Vec<Box3D>,
    pub forecast_ids: Vec<u64>,
    pub assignment: Vec<BranchConfig>,
    /// Detector output of all detection views, in the ego frame.
    pub detections: Vec<Box3D>,
    /// Scheduler objective of the executed assignment.
    pub predicted_objective: Option<f64>,
    /// Best objective any single-branch assignment reaches within budget.
    pub uniform_best_objective: Option<f64>,
    /// Objective of the optimal per-view assignment.
    pub optimal_objective: Option<f64>,
    pub t_max_ms: f64,
    pub predicted_latency_ms: f64,
    pub actual_latency_ms: f64,
    pub predicted_update_ms: f64,
    pub actual_update_ms: f64,
    pub track_count: usize,
    pub warmup: bool,
    pub step: StepReport,
    pub manifest_hash: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Frames after the warm-up frame.
    pub scheduled_frames: usize,
    pub within_target: usize,
    pub compliance: f64,
    pub mean_actual_ms: f64,
    pub max_actual_ms: f64,
    pub mean_abs_error_ms: f64,
    /// Mean of `|predicted - actual| / actual`.
    pub mean_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub policy: String,
    pub seed: u64,
    pub frames: usize,
    pub target_ms: f64,
    pub evaluation: EvalReport,
    pub latency: LatencyStats,
    pub manifest_hash: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub frames: Vec<FrameRecord>,
    pub summary: EpisodeSummary,
}

fn noise(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (sigma * z - 0.5 * sigma * sigma).exp()
    }
}

/// Simulated execution time of a frame: per-view module costs, fixed
/// modules and the tracker update, each with its own noise multiplier.
/// With zero noise this reproduces the profile sums exactly.
fn realized_latency(assignment: &[BranchConfig], tracks: usize, sys: &SystemConfig<'_>, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let d = sys.device;
    let mut per_view = Vec::with_capacity(assignment.len());
    for b in assignment {
        let mut v = 0.0;
        for name in d.modules_of(*b) {
            let m = d.module(name).ok_or_else(|| Error::MissingModule(name.clone()))?;
            if !m.fixed {
                v += m.latency_ms * noise(rng, sys.latency_noise_sigma);
            }
        }
        per_view.push(v);
    }
    let marginal = if sys.alpha == 1.0 || assignment.len() > MAX_BATCHED_VIEWS {
        per_view.iter().fold(0.0, |acc, v| acc + v)
    } else {
        let mut total = 0.0;
        let mut seen: Vec<usize> = assignment.iter().map(|b| b.index()).collect();
        seen.sort_unstable();
        seen.dedup();
        for idx in seen {
            let views: Vec<f64> = assignment
                .iter()
                .zip(&per_view)
                .filter(|(b, _)| b.index() == idx)
                .map(|(_, v)| *v)
                .collect();
            let mean = views.iter().sum::<f64>() / views.len() as f64;
            total += batched_cost(mean, views.len(), sys.alpha);
        }
        total
    };
    let mut fixed = 0.0;
    for m in d.modules.iter().filter(|m| m.fixed) {
        fixed += m.latency_ms * noise(rng, sys.latency_noise_sigma);
    }
    let update = d.tracker_update.latency(tracks) * noise(rng, sys.latency_noise_sigma);
    Ok((marginal + fixed + update, update))
}

/// Heaviest deployed detection branch whose uniform assignment fits.
fn warmup_assignment(sys: &SystemConfig<'_>, views: usize, update: &LinearLatencyModel) -> Result<Vec<BranchConfig>> {
    let t_max = effective_budget(sys.target_ms, update.predict(0), sys.device.fixed_latency());
    for &b in sys.branches.iter().rev() {
        if b.is_tracker() {
            continue;
        }
        if assignment_latency(&vec![b; views], sys.device, sys.alpha)? <= t_max {
            return Ok(vec![b; views]);
        }
    }
    Ok(vec![BranchConfig::Tracker; views])
}

/// Per-view exploration state: each view holds a random branch for a
/// random number of frames, so tracker streaks of several frames appear in
/// the logs alongside fresh detections.
struct Explorer {
    current: Vec<(BranchConfig, usize)>,
    detection: Vec<BranchConfig>,
}

impl Explorer {
    const TRACKER_SHARE: f64 = 0.5;
    const MAX_TRACKER_RUN: usize = 30;
    const MAX_DETECTION_RUN: usize = 3;

    fn new(sys: &SystemConfig<'_>, views: usize) -> Self {
        Self {
            current: vec![(BranchConfig::Tracker, 0); views],
            detection: sys.branches.iter().copied().filter(|b| !b.is_tracker()).collect(),
        }
    }

    fn next(&mut self, seed: u64, frame: usize) -> Vec<BranchConfig> {
        let mut rng = stream(seed, Stream::Exploration, &[frame as u64]);
        for slot in self.current.iter_mut() {
            if slot.1 == 0 {
                *slot = if self.detection.is_empty() || rng.random_bool(Self::TRACKER_SHARE) {
                    (BranchConfig::Tracker, rng.random_range(1..=Self::MAX_TRACKER_RUN))
                } else {
                    (
                        self.detection[rng.random_range(0..self.detection.len())],
                        rng.random_range(1..=Self::MAX_DETECTION_RUN),
                    )
                };
            }
            slot.1 -= 1;
        }
        self.current.iter().map(|s| s.0).collect()
    }
}

/// Splits boxes by the view their center falls in.
pub fn split_by_view(boxes: &[Box3D], rig: &CameraRig) -> Vec<Vec<Box3D>> {
    let mut out = vec![Vec::new(); rig.view_count()];
    for b in boxes {
        out[view_of(b.center, rig)].push(*b);
    }
    out
}

/// Detector output for one frame. Each view draws from its own stream
/// keyed by frame and view, so every policy sees the same randomness.
pub fn detect_frame(assignment: &[BranchConfig], gt: &GroundTruthFrame, rig: &CameraRig, caps: &CapabilityProfile, seed: u64) -> Result<Vec<Box3D>> {
    let by_view = split_by_view(&gt.boxes, rig);
    let mut out = Vec::new();
    for (j, b) in assignment.iter().enumerate() {
        if b.is_tracker() {
            continue;
        }
        let mut rng = stream(seed, Stream::Detection, &[gt.index as u64, j as u64]);
        out.extend(synth_detect(*b, &by_view[j], &rig.sectors()[j], caps, &mut rng)?);
    }
    Ok(out)
}

/// Runs a generated scenario through schedule, detect, track and evaluate.
pub fn run_episode(scenario: &ScenarioConfig, sys: &SystemConfig<'_>) -> Result<EpisodeLog> {
    let frames = generate_scenario(scenario);
    run_frames(&frames, scenario, sys)
}

pub fn run_frames(frames: &[GroundTruthFrame], scenario: &ScenarioConfig, sys: &SystemConfig<'_>) -> Result<EpisodeLog> {
    if !sys.branches.contains(&BranchConfig::Tracker) {
        return Err(Error::config("system", "branches", "the tracker branch must be deployed"));
    }
    if sys.policy.needs_predictor() && sys.predictors.is_none() {
        return Err(Error::config(
            "system",
            "predictor",
            format!("policy {} needs a trained predictor", sys.policy.label()),
        ));
    }
    let rig = &scenario.rig;
    let views = rig.view_count();
    let dt = scenario.dt();
    let seed = scenario.seed;
    let update_model = sys.predictors.as_ref().map(|p| p.update).unwrap_or(LinearLatencyModel {
        slope: sys.device.tracker_update.per_track_ms,
        intercept: sys.device.tracker_update.base_ms,
    });
    let mut tracker = Tracker::new(sys.kalman.clone(), sys.tracker.clone());
    let mut evaluator = Evaluator::new(sys.eval.clone());
    let mut records = Vec::with_capacity(frames.len());
    let mut explorer = Explorer::new(sys, views);

    for gt in frames {
        let k = gt.index;
        let forecast_states = tracker.forecast_all(dt);
        let forecasts: Vec<Box3D> = forecast_states
            .iter()
            .map(|t| ego_transform(&t.to_box(), &EgoPose::ORIGIN, &gt.ego))
            .collect();
        let forecast_ids: Vec<u64> = forecast_states.iter().map(|t| t.id).collect();
        let warmup = k == 0 && !matches!(sys.policy, Policy::Fixed(_) | Policy::Explore);

        let outcome = match &sys.predictors {
            Some(p) => {
                let ctx = SchedContext {
                    rig,
                    branches: sys.branches,
                    accuracy: p.accuracy,
                    update_model: &p.update,
                    device: sys.device,
                    target_ms: sys.target_ms,
                    alpha: sys.alpha,
                };
                Some(sched_forecasts(forecasts.clone(), &ctx)?)
            }
            None => None,
        };
        let assignment = if warmup {
            warmup_assignment(sys, views, &update_model)?
        } else {
            match sys.policy {
                Policy::Adaptive => outcome.as_ref().map(|o| o.decision.assignment.clone()).expect("checked above"),
                Policy::PerFrame => outcome.as_ref().map(|o| best_uniform(&o.problem).assignment).expect("checked above"),
                Policy::Fixed(b) => vec![b; views],
                Policy::AllTracker => vec![BranchConfig::Tracker; views],
                Policy::Explore => explorer.next(seed, k),
            }
        };

        let (predicted_objective, uniform_best_objective, optimal_objective) = match &outcome {
            Some(o) => {
                let rows: Option<Vec<usize>> = assignment.iter().map(|b| o.problem.branches.iter().position(|x| x == b)).collect();
                (
                    rows.map(|r| o.problem.objective(&r)),
                    Some(best_uniform(&o.problem).predicted_objective),
                    Some(o.decision.predicted_objective),
                )
            }
            None => (None, None, None),
        };

        let predicted_update_ms = update_model.predict(forecasts.len());
        let fixed_ms = sys.device.fixed_latency();
        let t_max_ms = outcome
            .as_ref()
            .map_or_else(|| effective_budget(sys.target_ms, predicted_update_ms, fixed_ms), |o| o.t_max_ms);
        let predicted_latency_ms = assignment_latency(&assignment, sys.device, sys.alpha)? + fixed_ms + predicted_update_ms;
        let mut noise_rng = stream(seed, Stream::LatencyNoise, &[k as u64]);
        let (actual_latency_ms, actual_update_ms) = realized_latency(&assignment, forecasts.len(), sys, &mut noise_rng)?;

        let detections = detect_frame(&assignment, gt, rig, sys.capability, seed)?;
        let global: Vec<Box3D> = detections.iter().map(|d| ego_transform(d, &gt.ego, &EgoPose::ORIGIN)).collect();
        let ego = gt.ego;
        let covered = |t: &crate::tracker::TrackState| {
            let b = ego_transform(&t.to_box(), &EgoPose::ORIGIN, &ego);
            !assignment[view_of(b.center, rig)].is_tracker()
        };
        let step = tracker.step(&global, dt, &covered);

        let mut outputs = detections.clone();
        outputs.extend(forecasts.iter().filter(|f| assignment[view_of(f.center, rig)].is_tracker()).copied());
        evaluator.add_frame(&outputs, &gt.boxes);

        records.push(FrameRecord {
            frame: k,
            timestamp: gt.timestamp,
            ego: gt.ego,
            gt_ids: gt.ids.clone(),
            gt: gt.boxes.clone(),
            track_count: forecasts.len(),
            forecasts,
            forecast_ids,
            assignment,
            detections,
            predicted_objective,
            uniform_best_objective,
            optimal_objective,
            t_max_ms,
            predicted_latency_ms,
            actual_latency_ms,
            predicted_update_ms,
            actual_update_ms,
            warmup,
            step,
            manifest_hash: sys.provenance.manifest_hash.clone(),
            tool_version: sys.provenance.tool_version.clone(),
        });
    }

    let scheduled: Vec<&FrameRecord> = records.iter().filter(|r| !r.warmup).collect();
    let n = scheduled.len().max(1) as f64;
    let within = scheduled.iter().filter(|r| r.actual_latency_ms <= sys.target_ms).count();
    let latency = LatencyStats {
        scheduled_frames: scheduled.len(),
        within_target: within,
        compliance: if scheduled.is_empty() { 1.0 } else { within as f64 / n },
        mean_actual_ms: scheduled.iter().map(|r| r.actual_latency_ms).sum::<f64>() / n,
        max_actual_ms: scheduled.iter().map(|r| r.actual_latency_ms).fold(0.0, f64::max),
        mean_abs_error_ms: scheduled
            .iter()
            .map(|r| (r.predicted_latency_ms - r.actual_latency_ms).abs())
            .sum::<f64>()
            / n,
        mean_relative_error: scheduled
            .iter()
            .map(|r| (r.predicted_latency_ms - r.actual_latency_ms).abs() / r.actual_latency_ms.max(1e-9))
            .sum::<f64>()
            / n,
    };
    Ok(EpisodeLog {
        summary: EpisodeSummary {
            policy: sys.policy.label(),
            seed,
            frames: records.len(),
            target_ms: sys.target_ms,
            evaluation: evaluator.summarize(),
            latency,
            manifest_hash: sys.provenance.manifest_hash.clone(),
            tool_version: sys.provenance.tool_version.clone(),
        },
        frames: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branches::enumerate_branches;
    use crate::simulator::scenario::EgoPath;
    use crate::types::ObjectClass;

    fn scenario(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            version: 1,
            seed,
            duration_s: 3.0,
            fps: 10.0,
            world_radius_m: 50.0,
            despawn_radius_m: 60.0,
            spawn_rate_per_s: 1.0,
            initial_objects: 12,
            class_mix: [(ObjectClass::Car, 0.6), (ObjectClass::Pedestrian, 0.4)].into_iter().collect(),
            speed_ranges: Default::default(),
            position_jitter_m: 0.0,
            ego_path: EgoPath::Straight {
                speed_mps: 5.0,
                heading_rad: 0.0,
            },
            rig: CameraRig::default(),
            synthetic: true,
        }
    }

    fn system<'a>(branches: &'a [BranchConfig], device: &'a DeviceProfile, caps: &'a CapabilityProfile, policy: Policy) -> SystemConfig<'a> {
        SystemConfig {
            branches,
            tracker: TrackerConfig::default(),
            kalman: KalmanModel::default(),
            predictors: None,
            device,
            capability: caps,
            target_ms: 1000.0,
            alpha: 1.0,
            latency_noise_sigma: 0.0,
            policy,
            eval: EvalConfig::default(),
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn perfect_detector_scores_high() {
        let branches = enumerate_branches();
        let device = DeviceProfile::bundled_orin();
        let caps = CapabilityProfile::uniform(1.0, 0.0, 0.0, 0.0, 0.0);
        let best = *branches.last().unwrap();
        let log = run_episode(&scenario(1), &system(&branches, &device, &caps, Policy::Fixed(best))).unwrap();
        assert!(log.summary.evaluation.summary.map >= 0.95, "{:?}", log.summary.evaluation.summary);
    }

    #[test]
    fn all_tracker_produces_no_detections_and_tracks_decay() {
        let branches = enumerate_branches();
        let device = DeviceProfile::bundled_orin();
        let caps = CapabilityProfile::uniform(1.0, 0.0, 0.0, 0.0, 0.0);
        let mut sys = system(&branches, &device, &caps, Policy::AllTracker);
        sys.tracker.exempt_uncovered_views = false;
        let log = run_episode(&scenario(2), &sys).unwrap();
        assert!(log.frames[0].warmup);
        assert!(!log.frames[0].detections.is_empty());
        for f in &log.frames[1..] {
            assert!(f.detections.is_empty());
            assert!(f.assignment.iter().all(|b| b.is_tracker()));
        }
        // Warm-up detections arrive at confidence 1.0; halving each frame
        // removes them after the fourth miss.
        assert!(log.frames[1].track_count > 0);
        assert_eq!(log.frames[6].track_count, 0);
    }

    #[test]
    fn episodes_are_deterministic() {
        let branches = enumerate_branches();
        let device = DeviceProfile::bundled_orin();
        let caps = crate::simulator::default_capability();
        let mut sys = system(&branches, &device, &caps, Policy::Explore);
        sys.latency_noise_sigma = 0.05;
        let a = run_episode(&scenario(3), &sys).unwrap();
        let b = run_episode(&scenario(3), &sys).unwrap();
        assert_eq!(serde_json::to_string(&a.frames).unwrap(), serde_json::to_string(&b.frames).unwrap());
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn noiseless_latency_matches_profile() {
        let branches = enumerate_branches();
        let device = DeviceProfile::bundled_orin();
        let caps = crate::simulator::default_capability();
        let log = run_episode(&scenario(4), &system(&branches, &device, &caps, Policy::Explore)).unwrap();
        for f in &log.frames {
            let want =
                assignment_latency(&f.assignment, &device, 1.0).unwrap() + device.fixed_latency() + device.tracker_update.latency(f.track_count);
            assert!((f.actual_latency_ms - want).abs() < 1e-9);
        }
    }

    #[test]
    fn adaptive_without_predictor_is_a_config_error() {
        let branches = enumerate_branches();
        let device = DeviceProfile::bundled_orin();
        let caps = crate::simulator::default_capability();
        assert!(matches!(
            run_episode(&scenario(5), &system(&branches, &device, &caps, Policy::Adaptive)),
            Err(Error::Config { .. })
        ));
    }
}
