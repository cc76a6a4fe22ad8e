//! Command-line surface: manifest loading, the four subcommands and their
//! artifacts.

mod manifest;

pub use manifest::{load_manifest, CompareSetup, Loaded, RunManifest, TrainingSetup, MANIFEST_VERSION};

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::branches::{adapt, enumerate_branches, Adaptation, BranchConfig, DeviceProfile};
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_json, write_jsonl};
use crate::metrics::{EvalConfig, Summary};
use crate::predictors::{assignment_latency, AccuracyFeatures, AccuracyPredictor, PredictorBundle, TrainingSummary, MODEL_FILE_VERSION};
use crate::simulator::{
    generate_scenario, run_episode, train_from_logs, EpisodeLog, EpisodeSummary, FrameRecord, Policy, Predictors, Provenance, ScenarioConfig,
    SystemConfig,
};
use crate::tracker::KalmanModel;
use crate::types::distribution;
use crate::TOOL_VERSION;

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "omnisched", version, about = "Spatial-adaptive branch scheduling simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its logs and evaluation report.
    Simulate(SimulateArgs),
    /// Fit the accuracy and update-latency predictors from episode logs.
    Train(TrainArgs),
    /// Prune the branch set for a device and latency target.
    Adapt(AdaptArgs),
    /// Compare adaptive, per-frame and fixed-branch policies.
    Compare(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the manifest latency target.
    #[arg(long = "target-ms")]
    pub target_ms: Option<f64>,
    /// Overrides the manifest output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// adaptive, per-frame, explore, all-tracker or fixed:<branch>
    #[arg(long, default_value = "adaptive")]
    pub policy: String,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Glob matching episode logs.
    #[arg(long)]
    pub episodes: String,
}

#[derive(Debug, Clone, Args)]
pub struct AdaptArgs {
    /// Device profile; defaults to the manifest's.
    #[arg(long)]
    pub device: Option<PathBuf>,
    /// Supplies defaults and, when it names a predictor, predicted scores.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long = "target-ms")]
    pub target_ms: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_policy(s: &str) -> Result<Policy> {
    Ok(match s {
        "adaptive" => Policy::Adaptive,
        "per-frame" | "per_frame" => Policy::PerFrame,
        "explore" => Policy::Explore,
        "all-tracker" | "all_tracker" => Policy::AllTracker,
        _ => match s.strip_prefix("fixed:") {
            Some(b) => Policy::Fixed(b.parse()?),
            None => return Err(Error::config("--policy", "policy", format!("unknown policy `{s}`"))),
        },
    })
}

/// Resolved settings shared by the run-style commands.
pub struct Session {
    pub loaded: Loaded,
    pub seed: u64,
    pub target_ms: f64,
    pub out: PathBuf,
    pub provenance: Provenance,
}

impl Session {
    pub fn new(args: &RunArgs) -> Result<Self> {
        let loaded = load_manifest(&args.manifest)?;
        let target_ms = args.target_ms.unwrap_or(loaded.manifest.latency_target_ms);
        if !(target_ms > 0.0) {
            return Err(Error::config("--target-ms", "target_ms", "must be positive"));
        }
        let out = args.out.clone().unwrap_or_else(|| loaded.resolve(&loaded.manifest.output_dir));
        fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
        Ok(Self {
            seed: args.seed.unwrap_or(loaded.manifest.seed),
            provenance: Provenance {
                manifest_hash: loaded.hash.clone(),
                tool_version: TOOL_VERSION.to_string(),
            },
            loaded,
            target_ms,
            out,
        })
    }

    pub fn scenario(&self, seed: u64) -> ScenarioConfig {
        let mut s = self.loaded.scenario.clone();
        s.seed = seed;
        s
    }

    pub fn branches(&self) -> Result<Vec<BranchConfig>> {
        Ok(adapt(&self.loaded.device, self.target_ms)?.branches)
    }

    pub fn system<'a>(&'a self, branches: &'a [BranchConfig], predictor: Option<&'a PredictorBundle>, policy: Policy) -> SystemConfig<'a> {
        let m = &self.loaded.manifest;
        SystemConfig {
            branches,
            tracker: m.tracker.clone(),
            kalman: KalmanModel::default(),
            predictors: predictor.map(|p| Predictors {
                accuracy: &p.accuracy as &dyn AccuracyPredictor,
                update: p.update_latency,
            }),
            device: &self.loaded.device,
            capability: &self.loaded.capability,
            target_ms: self.target_ms,
            alpha: m.batching_alpha,
            latency_noise_sigma: m.latency_noise_sigma,
            policy,
            eval: EvalConfig::default(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn train(&self, episodes: &[Vec<FrameRecord>]) -> Result<PredictorBundle> {
        let branches = self.branches()?;
        let params = &self.loaded.manifest.training.params;
        let t = train_from_logs(episodes, &self.loaded.scenario.rig, &branches, &self.loaded.capability, self.seed, params)?;
        Ok(PredictorBundle {
            version: MODEL_FILE_VERSION,
            accuracy: t.accuracy,
            update_latency: t.update,
            training: Some(TrainingSummary {
                samples: t.report.samples,
                train_r_squared: t.report.r_squared,
                train_mse: *t.report.mse_per_round.last().unwrap_or(&0.0),
                episodes: episodes.len(),
                params: params.gbrt,
            }),
            manifest_hash: Some(self.provenance.manifest_hash.clone()),
            tool_version: Some(self.provenance.tool_version.clone()),
        })
    }

    /// Predictor from the manifest, or one trained on fresh exploration
    /// episodes (written to `model.json`).
    pub fn predictor(&self) -> Result<PredictorBundle> {
        if let Some(p) = &self.loaded.predictor {
            return Ok(p.clone());
        }
        let setup = &self.loaded.manifest.training;
        log::info!("no predictor given; training on {} exploration episodes", setup.episodes);
        let branches = self.branches()?;
        let mut logs = Vec::with_capacity(setup.episodes);
        for i in 0..setup.episodes {
            let seed = self.seed.wrapping_add(setup.seed_offset).wrapping_add(i as u64);
            logs.push(run_episode(&self.scenario(seed), &self.system(&branches, None, Policy::Explore))?.frames);
        }
        let bundle = self.train(&logs)?;
        bundle.save(&self.out.join("model.json"))?;
        Ok(bundle)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub frame: usize,
    pub assignment: Vec<BranchConfig>,
    pub predicted_objective: Option<f64>,
    pub predicted_latency_ms: f64,
    pub t_max_ms: f64,
    pub manifest_hash: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub manifest_hash: String,
    pub tool_version: String,
    pub deployed_branches: Vec<BranchConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor: Option<TrainingSummary>,
    pub episode: EpisodeSummary,
}

pub fn write_episode(dir: &Path, log: &EpisodeLog) -> Result<()> {
    write_jsonl(&dir.join("episode.jsonl"), &log.frames)?;
    let decisions: Vec<DecisionRecord> = log
        .frames
        .iter()
        .map(|f| DecisionRecord {
            frame: f.frame,
            assignment: f.assignment.clone(),
            predicted_objective: f.predicted_objective,
            predicted_latency_ms: f.predicted_latency_ms,
            t_max_ms: f.t_max_ms,
            manifest_hash: f.manifest_hash.clone(),
            tool_version: f.tool_version.clone(),
        })
        .collect();
    write_jsonl(&dir.join("decisions.jsonl"), &decisions)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulationReport> {
    let session = Session::new(&args.run)?;
    let policy = parse_policy(&args.policy)?;
    let branches = session.branches()?;
    let predictor = if matches!(policy, Policy::Adaptive | Policy::PerFrame) || session.loaded.predictor.is_some() {
        Some(session.predictor()?)
    } else {
        None
    };
    let log = run_episode(&session.scenario(session.seed), &session.system(&branches, predictor.as_ref(), policy))?;
    write_episode(&session.out, &log)?;
    let report = SimulationReport {
        manifest_hash: session.provenance.manifest_hash.clone(),
        tool_version: session.provenance.tool_version.clone(),
        deployed_branches: branches,
        predictor: predictor.and_then(|p| p.training),
        episode: log.summary,
    };
    write_json(&session.out.join("report.json"), &report)?;
    let s = report.episode.evaluation.summary;
    out!(
        "{}: DS {:.4} (mAP {:.4}, mATE {:.4}, mAVE {:.4}); latency compliance {:.1}%",
        report.episode.policy,
        s.ds,
        s.map,
        s.mate,
        s.mave,
        100.0 * report.episode.latency.compliance
    );
    Ok(report)
}

pub fn cmd_train(args: &TrainArgs) -> Result<PredictorBundle> {
    let session = Session::new(&args.run)?;
    let pattern = glob::glob(&args.episodes).map_err(|e| Error::config("--episodes", "episodes", e.to_string()))?;
    let mut paths: Vec<PathBuf> = pattern.filter_map(std::result::Result::ok).filter(|p| p.is_file()).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config(
            "--episodes",
            "episodes",
            format!("no episode logs match `{}`", args.episodes),
        ));
    }
    let mut logs = Vec::with_capacity(paths.len());
    for p in &paths {
        logs.push(read_jsonl::<FrameRecord>(p)?);
    }
    let bundle = session.train(&logs)?;
    bundle.save(&session.out.join("model.json"))?;
    if let Some(t) = &bundle.training {
        log::info!(
            "train R2 {:.4} over {} samples from {} episodes",
            t.train_r_squared,
            t.samples,
            t.episodes
        );
        out!(
            "trained on {} samples from {} episodes; train R2 {:.4}",
            t.samples,
            t.episodes,
            t.train_r_squared
        );
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoRow {
    pub branch: BranchConfig,
    pub marginal_ms: f64,
    pub frame_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_score: Option<f64>,
    pub pareto: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub tool_version: String,
    pub device: String,
    pub target_ms: f64,
    pub adaptation: Adaptation,
    pub table: Vec<ParetoRow>,
}

/// Mean predicted score of a branch over the views of a short scenario,
/// using ground truth as the forecast.
fn mean_scores(model: &PredictorBundle, scenario: &ScenarioConfig, branches: &[BranchConfig]) -> Result<Vec<f64>> {
    let mut s = scenario.clone();
    s.duration_s = s.duration_s.min(5.0);
    let frames = generate_scenario(&s);
    let mut out = Vec::with_capacity(branches.len());
    for &b in branches {
        let mut sum = 0.0;
        let mut n = 0usize;
        for f in &frames {
            for d in distribution(&f.boxes, &s.rig) {
                sum += model.accuracy.predict_features(&AccuracyFeatures::new(d, b, 0.5).to_vec())?;
                n += 1;
            }
        }
        out.push(if n > 0 { sum / n as f64 } else { 0.0 });
    }
    Ok(out)
}

pub fn cmd_adapt(args: &AdaptArgs) -> Result<AdaptReport> {
    let loaded = args.manifest.as_deref().map(load_manifest).transpose()?;
    let device = match (&args.device, &loaded) {
        (Some(p), _) => DeviceProfile::load(p)?,
        (None, Some(l)) => l.device.clone(),
        (None, None) => return Err(Error::config("adapt", "--device", "a device profile or manifest is required")),
    };
    let target_ms = args
        .target_ms
        .or(loaded.as_ref().map(|l| l.manifest.latency_target_ms))
        .unwrap_or(f64::INFINITY);
    let adaptation = adapt(&device, target_ms)?;
    let views = loaded.as_ref().map_or(6, |l| l.scenario.rig.view_count());
    let scores = match loaded.as_ref().and_then(|l| l.predictor.as_ref().map(|p| (l, p))) {
        Some((l, p)) => Some(mean_scores(p, &l.scenario, &adaptation.branches)?),
        None => None,
    };
    let mut table = Vec::with_capacity(adaptation.branches.len());
    for (i, &b) in adaptation.branches.iter().enumerate() {
        table.push(ParetoRow {
            branch: b,
            marginal_ms: device.branch_latency(b)?,
            frame_ms: assignment_latency(&vec![b; views], &device, 1.0)? + device.fixed_latency(),
            predicted_score: scores.as_ref().map(|s| s[i]),
            pareto: true,
        });
    }
    if scores.is_some() {
        let snapshot = table.clone();
        for row in table.iter_mut() {
            let (l, s) = (row.marginal_ms, row.predicted_score.unwrap_or(0.0));
            row.pareto = !snapshot.iter().any(|o| {
                let os = o.predicted_score.unwrap_or(0.0);
                o.marginal_ms <= l && os >= s && (o.marginal_ms < l || os > s)
            });
        }
    }
    out!(
        "{} of {} branches fit {} ms on {}:",
        adaptation.branches.len(),
        enumerate_branches().len(),
        target_ms,
        device.name
    );
    for r in &table {
        let score = r.predicted_score.map_or(String::from("-"), |s| format!("{s:.4}"));
        out!(
            "  {:<20} {:>8.2} ms/view {:>8.2} ms/frame  score {:>7}{}",
            r.branch.to_string(),
            r.marginal_ms,
            r.frame_ms,
            score,
            if r.pareto && r.predicted_score.is_some() { "  *" } else { "" }
        );
    }
    for m in &adaptation.removed_modules {
        out!("  detached module {m} (memory)");
    }
    let report = AdaptReport {
        manifest_hash: loaded.as_ref().map(|l| l.hash.clone()),
        tool_version: TOOL_VERSION.to_string(),
        device: device.name.clone(),
        target_ms,
        adaptation,
        table,
    };
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|source| Error::Io { path: out.clone(), source })?;
        write_json(&out.join("adapt.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: String,
    /// Fixed branches whose uniform frame cost exceeds the target are not
    /// run.
    pub feasible: bool,
    pub ds: Vec<f64>,
    pub mean_ds: Option<f64>,
    pub mean_map: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub compliance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub manifest_hash: String,
    pub tool_version: String,
    pub target_ms: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<PolicyRow>,
    /// Adaptive frames whose predicted objective fell below the best
    /// single-branch assignment.
    pub dominance_violations: usize,
    pub audited_frames: usize,
    /// Seeds on which adaptive DS was at least the per-frame DS.
    pub adaptive_not_worse: usize,
}

fn row(policy: String, logs: &[EpisodeLog]) -> PolicyRow {
    let n = logs.len() as f64;
    let mean = |f: &dyn Fn(&Summary) -> f64| Some(logs.iter().map(|l| f(&l.summary.evaluation.summary)).sum::<f64>() / n);
    PolicyRow {
        policy,
        feasible: true,
        ds: logs.iter().map(|l| l.summary.evaluation.summary.ds).collect(),
        mean_ds: mean(&|s| s.ds),
        mean_map: mean(&|s| s.map),
        mean_latency_ms: Some(logs.iter().map(|l| l.summary.latency.mean_actual_ms).sum::<f64>() / n),
        compliance: Some(logs.iter().map(|l| l.summary.latency.compliance).sum::<f64>() / n),
    }
}

/// Runs every policy on the same seeds. Returns the report and the
/// adaptive and per-frame episode logs.
pub fn compare(run_args: &RunArgs) -> Result<(CompareReport, Vec<EpisodeLog>, Vec<EpisodeLog>)> {
    let session = Session::new(run_args)?;
    let predictor = session.predictor()?;
    let branches = session.branches()?;
    let seeds: Vec<u64> = (0..session.loaded.manifest.compare.episodes as u64)
        .map(|i| session.seed.wrapping_add(i))
        .collect();
    let views = session.loaded.scenario.rig.view_count();

    let episodes = |policy: Policy| -> Result<Vec<EpisodeLog>> {
        let sys = session.system(&branches, Some(&predictor), policy);
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    let sc = session.scenario(seed);
                    let sys = &sys;
                    s.spawn(move || run_episode(&sc, sys))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("episode thread panicked")).collect()
        })
    };

    let adaptive = episodes(Policy::Adaptive)?;
    let per_frame = episodes(Policy::PerFrame)?;
    let mut rows = vec![row(Policy::Adaptive.label(), &adaptive), row(Policy::PerFrame.label(), &per_frame)];
    for &b in branches.iter().filter(|b| !b.is_tracker()) {
        let frame_ms = assignment_latency(&vec![b; views], &session.loaded.device, session.loaded.manifest.batching_alpha)?
            + session.loaded.device.fixed_latency()
            + predictor.update_latency.predict(0);
        let label = Policy::Fixed(b).label();
        if frame_ms > session.target_ms {
            rows.push(PolicyRow {
                policy: label,
                feasible: false,
                ds: Vec::new(),
                mean_ds: None,
                mean_map: None,
                mean_latency_ms: None,
                compliance: None,
            });
        } else {
            rows.push(row(label, &episodes(Policy::Fixed(b))?));
        }
    }

    let mut violations = 0;
    let mut audited = 0;
    for log in &adaptive {
        for f in log.frames.iter().filter(|f| !f.warmup) {
            audited += 1;
            if let (Some(a), Some(u)) = (f.predicted_objective, f.uniform_best_objective) {
                if a < u {
                    violations += 1;
                }
            }
        }
    }
    let not_worse = adaptive
        .iter()
        .zip(&per_frame)
        .filter(|(a, p)| a.summary.evaluation.summary.ds >= p.summary.evaluation.summary.ds)
        .count();
    let report = CompareReport {
        manifest_hash: session.provenance.manifest_hash.clone(),
        tool_version: session.provenance.tool_version.clone(),
        target_ms: session.target_ms,
        seeds,
        rows,
        dominance_violations: violations,
        audited_frames: audited,
        adaptive_not_worse: not_worse,
    };
    write_json(&session.out.join("compare.json"), &report)?;
    Ok((report, adaptive, per_frame))
}

pub fn cmd_compare(args: &RunArgs) -> Result<CompareReport> {
    let (report, _, _) = compare(args)?;
    out!("{:<28} {:>8} {:>8} {:>10} {:>10}", "policy", "DS", "mAP", "latency", "in-budget");
    for r in &report.rows {
        match (r.mean_ds, r.mean_map, r.mean_latency_ms, r.compliance) {
            (Some(ds), Some(map), Some(lat), Some(c)) => {
                out!("{:<28} {:>8.4} {:>8.4} {:>8.2}ms {:>9.1}%", r.policy, ds, map, lat, 100.0 * c)
            }
            _ => out!("{:<28} {:>8}", r.policy, "infeasible"),
        }
    }
    out!(
        "adaptive >= per-frame DS on {}/{} episodes; {} dominance violations over {} frames",
        report.adaptive_not_worse,
        report.seeds.len(),
        report.dominance_violations,
        report.audited_frames
    );
    Ok(report)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Adapt(a) => cmd_adapt(a).map(drop),
        Command::Compare(a) => cmd_compare(a).map(drop),
    }
}
