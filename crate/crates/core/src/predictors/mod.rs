//! Accuracy and latency predictors used by the scheduler.

mod gbrt;
mod latency;

pub use gbrt::{train_gbrt, GbrtModel, GbrtParams, Node, TrainReport};
pub use latency::{assignment_latency, fit_update_latency, predict_frame_latency, LinearLatencyModel};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::branches::{BranchConfig, BRANCH_COUNT};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::types::{DistributionVector, CATEGORY_COUNT};

/// Width of the accuracy feature vector: distribution, branch one-hot and
/// mean track confidence.
pub const FEATURE_WIDTH: usize = CATEGORY_COUNT + BRANCH_COUNT + 1;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyFeatures {
    pub distribution: DistributionVector,
    pub branch: BranchConfig,
    /// Mean confidence of the view's tracks; zero for detection branches.
    pub mean_track_confidence: f64,
}

impl AccuracyFeatures {
    pub fn new(distribution: DistributionVector, branch: BranchConfig, mean_track_confidence: f64) -> Self {
        let mean_track_confidence = if branch.is_tracker() {
            mean_track_confidence.clamp(0.0, 1.0)
        } else {
            0.0
        };
        Self {
            distribution,
            branch,
            mean_track_confidence,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_WIDTH);
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, v: &mut Vec<f64>) {
        v.clear();
        v.extend_from_slice(self.distribution.as_slice());
        let onehot = CATEGORY_COUNT + self.branch.index();
        v.resize(CATEGORY_COUNT + BRANCH_COUNT, 0.0);
        v[onehot] = 1.0;
        v.push(self.mean_track_confidence);
    }
}

/// Anything that maps a 98-wide feature vector to a score in `[0, 1]`.
pub trait AccuracyPredictor: Send + Sync {
    fn predict_features(&self, features: &[f64]) -> Result<f64>;
}

impl AccuracyPredictor for GbrtModel {
    fn predict_features(&self, features: &[f64]) -> Result<f64> {
        self.predict(features)
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> AccuracyPredictor for F {
    fn predict_features(&self, features: &[f64]) -> Result<f64> {
        if features.len() != FEATURE_WIDTH {
            return Err(Error::FeatureWidth {
                expected: FEATURE_WIDTH,
                got: features.len(),
            });
        }
        Ok(self(features).clamp(0.0, 1.0))
    }
}

pub fn predict_accuracy(model: &dyn AccuracyPredictor, features: &AccuracyFeatures) -> Result<f64> {
    model.predict_features(&features.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub samples: usize,
    pub train_r_squared: f64,
    pub train_mse: f64,
    pub episodes: usize,
    pub params: GbrtParams,
}

/// Serialized predictor pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBundle {
    pub version: u32,
    pub accuracy: GbrtModel,
    pub update_latency: LinearLatencyModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
}

impl PredictorBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let raw: serde_json::Value = read_json(path)?;
        match raw.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(MODEL_FILE_VERSION) => {}
            Some(v) => {
                return Err(Error::config(
                    path.display().to_string(),
                    "version",
                    format!("unsupported model version {v}"),
                ))
            }
            None => return Err(Error::config(path.display().to_string(), "version", "missing")),
        }
        let b: PredictorBundle = serde_json::from_value(raw).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if b.accuracy.feature_width != FEATURE_WIDTH {
            return Err(Error::FeatureWidth {
                expected: FEATURE_WIDTH,
                got: b.accuracy.feature_width,
            });
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branches::enumerate_branches;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_distribution(rng: &mut ChaCha8Rng) -> DistributionVector {
        let mut counts = [0usize; CATEGORY_COUNT];
        for _ in 0..rng.random_range(0..12) {
            counts[rng.random_range(0..CATEGORY_COUNT)] += 1;
        }
        DistributionVector::from_counts(&counts)
    }

    #[test]
    fn feature_layout() {
        let branches = enumerate_branches();
        let mut counts = [0usize; CATEGORY_COUNT];
        counts[3] = 2;
        let f = AccuracyFeatures::new(DistributionVector::from_counts(&counts), branches[5], 0.7);
        let v = f.to_vec();
        assert_eq!(v.len(), 98);
        assert_eq!(v[3], 1.0);
        assert_eq!(v[80..97].iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(v[85], 1.0);
        assert_eq!(v[97], 0.0, "confidence feature is zero for detection branches");
        let t = AccuracyFeatures::new(DistributionVector::zeros(), BranchConfig::Tracker, 0.7).to_vec();
        assert_eq!(t[80], 1.0);
        assert_eq!(t[97], 0.7);
    }

    #[test]
    fn linear_target_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let branches = enumerate_branches();
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let b = branches[rng.random_range(0..17)];
                AccuracyFeatures::new(random_distribution(&mut rng), b, rng.random()).to_vec()
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let params = GbrtParams {
            rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
        };
        let (m, rep) = train_gbrt(&rows, &y, &params).unwrap();
        assert!(rep.r_squared >= 0.95, "R2 = {}", rep.r_squared);
        for r in &rows {
            let p = predict_accuracy(
                &m,
                &AccuracyFeatures::new(DistributionVector::try_from(r[..80].to_vec()).unwrap(), BranchConfig::Tracker, 0.0),
            )
            .unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn d0_mass_step_generalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let branches = enumerate_branches();
        let d0_mass = |r: &[f64]| (0..80).filter(|k| k % 5 == 0).map(|k| r[k]).sum::<f64>();
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let mut counts = [0usize; CATEGORY_COUNT];
                let (v, s) = (rng.random_range(0..4), rng.random_range(0..4));
                for _ in 0..rng.random_range(1..10) {
                    let near = rng.random_bool(0.5);
                    let d = if near { 0 } else { rng.random_range(1..5) };
                    counts[d + 5 * v + 20 * s] += 1;
                }
                AccuracyFeatures::new(DistributionVector::from_counts(&counts), branches[rng.random_range(0..17)], 0.0).to_vec()
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| if d0_mass(r) > 0.5 { 0.9 } else { 0.3 }).collect();
        let (train_x, test_x) = rows.split_at(800);
        let (train_y, test_y) = y.split_at(800);
        let (m, _) = train_gbrt(
            train_x,
            train_y,
            &GbrtParams {
                rounds: 100,
                max_depth: 4,
                learning_rate: 0.2,
                min_samples_leaf: 2,
            },
        )
        .unwrap();
        let close = test_x
            .iter()
            .zip(test_y)
            .filter(|(x, &t)| (m.predict(x).unwrap() - t).abs() <= 0.05)
            .count();
        assert!(close as f64 >= 0.9 * test_x.len() as f64, "{close}/{}", test_x.len());
    }

    #[test]
    fn training_mse_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = rng.random_range(20..120);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|r| (r[0] * r[1] + 0.3 * r[2] + 0.1 * rng.random::<f64>()).min(1.0))
                .collect();
            let params = GbrtParams {
                rounds: 25,
                max_depth: rng.random_range(1..5),
                learning_rate: rng.random_range(0.05..1.0),
                min_samples_leaf: rng.random_range(1..6),
            };
            let (_, rep) = train_gbrt(&rows, &y, &params).unwrap();
            for w in rep.mse_per_round.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", rep.mse_per_round);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        let a = train_gbrt(&rows, &y, &GbrtParams::default()).unwrap().0;
        let b = train_gbrt(&rows, &y, &GbrtParams::default()).unwrap().0;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn model_file_requires_version() {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = train_gbrt(&[vec![0.0; FEATURE_WIDTH], vec![1.0; FEATURE_WIDTH]], &[0.2, 0.4], &GbrtParams::default()).unwrap();
        let bundle = PredictorBundle {
            version: MODEL_FILE_VERSION,
            accuracy: m,
            update_latency: LinearLatencyModel { slope: 0.02, intercept: 0.3 },
            training: None,
            manifest_hash: None,
            tool_version: None,
        };
        let p = dir.path().join("model.json");
        bundle.save(&p).unwrap();
        assert_eq!(PredictorBundle::load(&p).unwrap(), bundle);

        let mut raw: serde_json::Value = serde_json::to_value(&bundle).unwrap();
        raw.as_object_mut().unwrap().remove("version");
        std::fs::write(&p, raw.to_string()).unwrap();
        assert!(matches!(PredictorBundle::load(&p), Err(Error::Config { field, .. }) if field == "version"));
    }
}
