//! Deterministic closed-loop simulation: scene generation, synthetic
//! detectors and the per-frame schedule/detect/track/evaluate loop.

mod capability;
mod episode;
mod scenario;
mod training;

pub use capability::{
    default_capability, synth_detect, BranchCapability, CapabilityFile, CapabilityProfile, CategoryCapability, CAPABILITY_FILE_VERSION,
    VELOCITY_NOISE_RATIO,
};
pub use episode::{
    detect_frame, run_episode, run_frames, split_by_view, EpisodeLog, EpisodeSummary, FrameRecord, LatencyStats, Policy, Predictors, Provenance,
    SystemConfig,
};
pub use scenario::{class_size, default_speed_range, generate_scenario, EgoPath, GroundTruthFrame, ScenarioConfig, SCENARIO_FILE_VERSION};
pub use training::{collect_samples, train_from_logs, update_samples, TrainedModels, TrainingParams, TrainingSet};
