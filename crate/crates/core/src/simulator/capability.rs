use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenario::class_size;
use crate::branches::{enumerate_branches, BackboneKind, BranchConfig, DepthNet, BRANCH_COUNT};
use crate::error::{Error, Result};
use crate::io::read_json;
use crate::types::{
    categorize, wrap_angle, Box3D, CategoryLevel, ObjectClass, Sector, CATEGORY_COUNT, DISTANCE_LEVELS, SIZE_LEVELS, VELOCITY_LEVELS,
};

pub const CAPABILITY_FILE_VERSION: u32 = 1;

/// Ratio between plain r50 and dense+fusion r50 velocity noise at the top
/// velocity level that every loaded profile must reproduce.
pub const VELOCITY_NOISE_RATIO: f64 = 2.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallBlock {
    pub synthetic: bool,
    /// Per-distance-level recall of the sparse, non-fusion variant.
    pub base: BTreeMap<BackboneKind, [f64; DISTANCE_LEVELS]>,
    pub dense_gain: f64,
    pub fusion_gain: f64,
    pub velocity_factor: [f64; VELOCITY_LEVELS],
    pub size_factor: [f64; SIZE_LEVELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionNoiseBlock {
    pub synthetic: bool,
    /// Per-axis sigma by distance level for the sparse variant.
    pub base_m: [f64; DISTANCE_LEVELS],
    pub backbone_scale: BTreeMap<BackboneKind, f64>,
    pub dense_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityNoiseBlock {
    pub synthetic: bool,
    /// Per-axis sigma by velocity level for the plain variant.
    pub base_mps: [f64; VELOCITY_LEVELS],
    pub backbone_scale: BTreeMap<BackboneKind, f64>,
    pub dense_scale: f64,
    pub fusion_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeNoiseBlock {
    pub synthetic: bool,
    /// Relative sigma of each box dimension.
    pub relative: f64,
    pub backbone_scale: BTreeMap<BackboneKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsePositiveBlock {
    pub synthetic: bool,
    /// Expected false positives per view per frame.
    pub rate_per_view: BTreeMap<BackboneKind, f64>,
    pub max_range_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBlock {
    pub synthetic: bool,
    pub true_positive: [f64; 2],
    pub false_positive: [f64; 2],
}

/// On-disk form: a compact parameterization expanded into the full
/// per-branch, per-category table at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub recall: RecallBlock,
    pub position_noise: PositionNoiseBlock,
    pub velocity_noise: VelocityNoiseBlock,
    pub size_noise: SizeNoiseBlock,
    pub false_positives: FalsePositiveBlock,
    pub confidence: ConfidenceBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryCapability {
    pub recall: f64,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    pub sigma_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchCapability {
    /// Indexed by `CategoryLevel::index`.
    pub categories: Vec<CategoryCapability>,
    pub fp_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityProfile {
    /// Indexed by branch index; the tracker slot is empty.
    pub branches: Vec<Option<BranchCapability>>,
    pub tp_confidence: [f64; 2],
    pub fp_confidence: [f64; 2],
    pub fp_max_range_m: f64,
}

const BUNDLED: &str = include_str!("../../data/capability.json");

fn scale(map: &BTreeMap<BackboneKind, f64>, b: BackboneKind, field: &str) -> Result<f64> {
    map.get(&b)
        .copied()
        .ok_or_else(|| Error::config("capability", field, format!("missing entry for {}", b.name())))
}

pub fn default_capability() -> CapabilityProfile {
    CapabilityProfile::from_json_str(BUNDLED, "capability.json").expect("bundled capability profile is valid")
}

impl CapabilityProfile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: CapabilityFile = read_json(path)?;
        Self::from_file(&f, &path.display().to_string())
    }

    pub fn from_json_str(s: &str, origin: &str) -> Result<Self> {
        let f: CapabilityFile = serde_json::from_str(s).map_err(|e| Error::config(origin, "json", e.to_string()))?;
        Self::from_file(&f, origin)
    }

    /// Expands and validates, including the ordering constraints.
    pub fn from_file(f: &CapabilityFile, origin: &str) -> Result<Self> {
        if f.version != CAPABILITY_FILE_VERSION {
            return Err(Error::config(origin, "version", format!("unsupported capability version {}", f.version)));
        }
        let mut branches = vec![None; BRANCH_COUNT];
        for b in enumerate_branches() {
            let BranchConfig::Detection {
                backbone,
                depthnet,
                temporal_fusion,
            } = b
            else {
                continue;
            };
            let dense = depthnet == DepthNet::Dense;
            let base = f
                .recall
                .base
                .get(&backbone)
                .ok_or_else(|| Error::config(origin, "recall.base", format!("missing {}", backbone.name())))?;
            let pos_scale = scale(&f.position_noise.backbone_scale, backbone, "position_noise.backbone_scale")?;
            let vel_scale = scale(&f.velocity_noise.backbone_scale, backbone, "velocity_noise.backbone_scale")?;
            let size_scale = scale(&f.size_noise.backbone_scale, backbone, "size_noise.backbone_scale")?;
            let categories = CategoryLevel::all()
                .map(|c| {
                    let (d, v, s) = (c.distance as usize, c.velocity as usize, c.size as usize);
                    let mut recall = base[d];
                    if dense {
                        recall += f.recall.dense_gain;
                    }
                    if temporal_fusion {
                        recall += f.recall.fusion_gain;
                    }
                    recall = recall.min(1.0) * f.recall.velocity_factor[v] * f.recall.size_factor[s];
                    let mut sigma_pos = f.position_noise.base_m[d] * pos_scale;
                    let mut sigma_vel = f.velocity_noise.base_mps[v] * vel_scale;
                    if dense {
                        sigma_pos *= f.position_noise.dense_scale;
                        sigma_vel *= f.velocity_noise.dense_scale;
                    }
                    if temporal_fusion {
                        sigma_vel *= f.velocity_noise.fusion_scale;
                    }
                    CategoryCapability {
                        recall,
                        sigma_pos,
                        sigma_vel,
                        sigma_size: f.size_noise.relative * size_scale,
                    }
                })
                .collect();
            branches[b.index()] = Some(BranchCapability {
                categories,
                fp_rate: scale(&f.false_positives.rate_per_view, backbone, "false_positives.rate_per_view")?,
            });
        }
        let p = CapabilityProfile {
            branches,
            tp_confidence: f.confidence.true_positive,
            fp_confidence: f.confidence.false_positive,
            fp_max_range_m: f.false_positives.max_range_m,
        };
        p.validate_ranges(origin)?;
        p.validate_ordering(origin)?;
        Ok(p)
    }

    /// Every detection branch gets the same parameters in every category.
    /// Not subject to the ordering constraints.
    pub fn uniform(recall: f64, sigma_pos: f64, sigma_vel: f64, sigma_size: f64, fp_rate: f64) -> Self {
        let cap = CategoryCapability {
            recall,
            sigma_pos,
            sigma_vel,
            sigma_size,
        };
        let branches = (0..BRANCH_COUNT)
            .map(|i| {
                (i > 0).then(|| BranchCapability {
                    categories: vec![cap; CATEGORY_COUNT],
                    fp_rate,
                })
            })
            .collect();
        Self {
            branches,
            tp_confidence: [1.0, 1.0],
            fp_confidence: [0.05, 0.4],
            fp_max_range_m: 55.0,
        }
    }

    pub fn branch(&self, b: BranchConfig) -> Result<&BranchCapability> {
        self.branches.get(b.index()).and_then(Option::as_ref).ok_or(Error::TrackerBranch)
    }

    pub fn get(&self, b: BranchConfig, c: CategoryLevel) -> Result<&CategoryCapability> {
        Ok(&self.branch(b)?.categories[c.index()])
    }

    pub fn validate_ranges(&self, origin: &str) -> Result<()> {
        let conf_ok = |r: [f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if !conf_ok(self.tp_confidence) || !conf_ok(self.fp_confidence) {
            return Err(Error::config(origin, "confidence", "ranges must satisfy 0 <= lo <= hi <= 1"));
        }
        if !(self.fp_max_range_m > 0.0) {
            return Err(Error::config(origin, "false_positives.max_range_m", "must be positive"));
        }
        for b in enumerate_branches().into_iter().skip(1) {
            let bc = self.branch(b)?;
            if !(bc.fp_rate >= 0.0) {
                return Err(Error::config(origin, format!("{b}.fp_rate"), "must be non-negative"));
            }
            for (k, c) in bc.categories.iter().enumerate() {
                if !(0.0..=1.0).contains(&c.recall) || !(c.sigma_pos >= 0.0) || !(c.sigma_vel >= 0.0) || !(c.sigma_size >= 0.0) {
                    return Err(Error::config(
                        origin,
                        format!("{b}.{}", CategoryLevel::from_index(k)),
                        "recall must lie in [0, 1] and sigmas must be non-negative",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks the capability trends a realistic profile must follow: recall
    /// falls with distance, grows with backbone size, dense depth sharpens
    /// position, and dense depth with fusion cuts top-speed velocity noise
    /// by the fixed ratio.
    pub fn validate_ordering(&self, origin: &str) -> Result<()> {
        let fail = |field: String, msg: String| Err(Error::config(origin, field, msg));
        let det = |backbone, depthnet, temporal_fusion| BranchConfig::Detection {
            backbone,
            depthnet,
            temporal_fusion,
        };
        for b in enumerate_branches().into_iter().skip(1) {
            for c in CategoryLevel::all().filter(|c| c.distance > 0) {
                let near = CategoryLevel::new(c.distance - 1, c.velocity, c.size);
                if self.get(b, c)?.recall > self.get(b, near)?.recall {
                    return fail(format!("{b}.{c}"), "recall increases with distance".into());
                }
            }
        }
        for depthnet in [DepthNet::Sparse, DepthNet::Dense] {
            for fusion in [false, true] {
                for w in BackboneKind::ALL.windows(2) {
                    let (lo, hi) = (det(w[0], depthnet, fusion), det(w[1], depthnet, fusion));
                    for c in CategoryLevel::all() {
                        if self.get(hi, c)?.recall < self.get(lo, c)?.recall {
                            return fail(format!("{hi}.{c}"), format!("recall below {lo}"));
                        }
                    }
                }
            }
        }
        for backbone in BackboneKind::ALL {
            for fusion in [false, true] {
                let (sparse, dense) = (det(backbone, DepthNet::Sparse, fusion), det(backbone, DepthNet::Dense, fusion));
                for c in CategoryLevel::all() {
                    if self.get(dense, c)?.sigma_pos >= self.get(sparse, c)?.sigma_pos {
                        return fail(format!("{dense}.{c}"), format!("position noise not below {sparse}"));
                    }
                }
            }
        }
        let plain = det(BackboneKind::R50, DepthNet::Sparse, false);
        let best = det(BackboneKind::R50, DepthNet::Dense, true);
        for c in CategoryLevel::all().filter(|c| c.velocity == 3) {
            let ratio = self.get(plain, c)?.sigma_vel / self.get(best, c)?.sigma_vel;
            if (ratio - VELOCITY_NOISE_RATIO).abs() > 0.01 {
                return fail(
                    format!("{best}.{c}"),
                    format!("velocity noise ratio {ratio:.4}, expected {VELOCITY_NOISE_RATIO}"),
                );
            }
        }
        Ok(())
    }
}

/// Simulated detector output for one view.
///
/// Every ground-truth box consumes the same number of draws whether or not
/// it is detected, so branches fed the same stream see correlated outcomes.
pub fn synth_detect(branch: BranchConfig, gts: &[Box3D], sector: &Sector, caps: &CapabilityProfile, rng: &mut ChaCha8Rng) -> Result<Vec<Box3D>> {
    let bc = caps.branch(branch)?;
    let mut out = Vec::with_capacity(gts.len() + 2);
    let [tlo, thi] = caps.tp_confidence;
    for gt in gts {
        let c = bc.categories[categorize(gt).index()];
        let u: f64 = rng.random();
        let z: [f64; 7] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let uc: f64 = rng.random();
        if u >= c.recall {
            continue;
        }
        let mut d = *gt;
        d.center[0] += c.sigma_pos * z[0];
        d.center[1] += c.sigma_pos * z[1];
        d.velocity[0] += c.sigma_vel * z[2];
        d.velocity[1] += c.sigma_vel * z[3];
        for k in 0..3 {
            d.size[k] = (gt.size[k] * (1.0 + c.sigma_size * z[4 + k])).max(0.1 * gt.size[k]);
        }
        d.confidence = tlo + (thi - tlo) * uc;
        out.push(d);
    }
    if bc.fp_rate > 0.0 {
        let n = Poisson::new(bc.fp_rate).expect("positive rate").sample(rng) as usize;
        let [flo, fhi] = caps.fp_confidence;
        for _ in 0..n {
            let angle = wrap_angle(sector.lo + sector.width * rng.random::<f64>());
            let range = 2.0 + (caps.fp_max_range_m - 2.0).max(0.0) * rng.random::<f64>();
            let class = ObjectClass::ALL[rng.random_range(0..ObjectClass::ALL.len())];
            let size = class_size(class);
            let speed = 3.0 * rng.random::<f64>();
            let heading = TAU * rng.random::<f64>();
            out.push(Box3D {
                center: [range * angle.cos(), range * angle.sin(), size[1] / 2.0],
                size,
                velocity: [speed * heading.cos(), speed * heading.sin(), 0.0],
                yaw: heading,
                class,
                confidence: flo + (fhi - flo) * rng.random::<f64>(),
            });
        }
    }
    Ok(out)
}
