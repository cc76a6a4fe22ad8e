use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::branches::DeviceProfile;
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::predictors::PredictorBundle;
use crate::simulator::{CapabilityProfile, ScenarioConfig, TrainingParams};
use crate::tracker::TrackerConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSetup {
    /// Exploration episodes generated when no predictor is given.
    pub episodes: usize,
    /// Added to the run seed to derive each exploration episode's seed.
    pub seed_offset: u64,
    pub params: TrainingParams,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        Self {
            episodes: 5,
            seed_offset: 10_000,
            params: TrainingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSetup {
    /// Number of episodes; seeds are consecutive from the run seed.
    pub episodes: usize,
}

impl Default for CompareSetup {
    fn default() -> Self {
        Self { episodes: 10 }
    }
}

fn one() -> f64 {
    1.0
}

/// A run description. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub scenario: PathBuf,
    pub device_profile: PathBuf,
    pub capability: PathBuf,
    #[serde(default)]
    pub predictor: Option<PathBuf>,
    pub latency_target_ms: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default = "one")]
    pub batching_alpha: f64,
    #[serde(default)]
    pub latency_noise_sigma: f64,
    #[serde(default)]
    pub training: TrainingSetup,
    #[serde(default)]
    pub compare: CompareSetup,
}

/// A manifest with every referenced file loaded and validated.
pub struct Loaded {
    pub manifest: RunManifest,
    pub dir: PathBuf,
    pub hash: String,
    pub scenario: ScenarioConfig,
    pub device: DeviceProfile,
    pub capability: CapabilityProfile,
    pub predictor: Option<PredictorBundle>,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

fn require(dir: &Path, origin: &str, field: &str, p: &Path) -> Result<PathBuf> {
    let full = if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
    if !full.is_file() {
        return Err(Error::config(origin, field, format!("file not found: {}", full.display())));
    }
    Ok(full)
}

pub fn load_manifest(path: &Path) -> Result<Loaded> {
    let origin = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: RunManifest = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::config(
            &origin,
            "version",
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    if !(manifest.latency_target_ms > 0.0) {
        return Err(Error::config(&origin, "latency_target_ms", "must be positive"));
    }
    if !(manifest.batching_alpha >= 0.0) {
        return Err(Error::config(&origin, "batching_alpha", "must be non-negative"));
    }
    if !(manifest.latency_noise_sigma >= 0.0) {
        return Err(Error::config(&origin, "latency_noise_sigma", "must be non-negative"));
    }
    manifest
        .tracker
        .validate()
        .map_err(|e| Error::config(&origin, "tracker", e.to_string()))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let scenario = ScenarioConfig::load(&require(&dir, &origin, "scenario", &manifest.scenario)?)?;
    let device = DeviceProfile::load(&require(&dir, &origin, "device_profile", &manifest.device_profile)?)?;
    let capability = CapabilityProfile::load(&require(&dir, &origin, "capability", &manifest.capability)?)?;
    let predictor = match &manifest.predictor {
        Some(p) => Some(PredictorBundle::load(&require(&dir, &origin, "predictor", p)?)?),
        None => None,
    };
    Ok(Loaded {
        hash: sha256_hex(&bytes),
        manifest,
        dir,
        scenario,
        device,
        capability,
        predictor,
    })
}
