//! The 17-branch design space, per-module latency/memory accounting and
//! offline model adaptation to a device's memory and latency limits.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_json;

pub const BRANCH_COUNT: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// ResNet-34 at 256x448
    R34,
    /// ResNet-50 at 400x704
    R50,
    /// ResNet-101 at 544x960
    R101,
    /// ResNet-152 at 720x1280
    R152,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [BackboneKind::R34, BackboneKind::R50, BackboneKind::R101, BackboneKind::R152];

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::R34 => "r34",
            BackboneKind::R50 => "r50",
            BackboneKind::R101 => "r101",
            BackboneKind::R152 => "r152",
        }
    }

    pub fn input_resolution(self) -> (u32, u32) {
        match self {
            BackboneKind::R34 => (256, 448),
            BackboneKind::R50 => (400, 704),
            BackboneKind::R101 => (544, 960),
            BackboneKind::R152 => (720, 1280),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthNet {
    Sparse,
    Dense,
}

impl DepthNet {
    pub fn name(self) -> &'static str {
        match self {
            DepthNet::Sparse => "sparse",
            DepthNet::Dense => "dense",
        }
    }
}

/// One inference configuration for a single camera view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BranchConfig {
    /// Emits forecast track states instead of running detection.
    Tracker,
    Detection {
        backbone: BackboneKind,
        depthnet: DepthNet,
        temporal_fusion: bool,
    },
}

impl BranchConfig {
    /// Stable index: 0 is the tracker, detection branches follow ordered by
    /// `(backbone, depthnet, fusion)`.
    pub fn index(self) -> usize {
        match self {
            BranchConfig::Tracker => 0,
            BranchConfig::Detection {
                backbone,
                depthnet,
                temporal_fusion,
            } => 1 + backbone as usize * 4 + depthnet as usize * 2 + usize::from(temporal_fusion),
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(BranchConfig::Tracker),
            1..BRANCH_COUNT => {
                let k = index - 1;
                Some(BranchConfig::Detection {
                    backbone: BackboneKind::ALL[k / 4],
                    depthnet: if (k / 2).is_multiple_of(2) { DepthNet::Sparse } else { DepthNet::Dense },
                    temporal_fusion: k % 2 == 1,
                })
            }
            _ => None,
        }
    }

    pub fn is_tracker(self) -> bool {
        matches!(self, BranchConfig::Tracker)
    }

    pub fn backbone(self) -> Option<BackboneKind> {
        match self {
            BranchConfig::Tracker => None,
            BranchConfig::Detection { backbone, .. } => Some(backbone),
        }
    }

    /// Default module path of this branch, used when generating profiles.
    pub fn default_modules(self) -> Vec<String> {
        match self {
            BranchConfig::Tracker => Vec::new(),
            BranchConfig::Detection {
                backbone,
                depthnet,
                temporal_fusion,
            } => {
                let mut m = vec![
                    format!("backbone_{}", backbone.name()),
                    format!("depthnet_{}_{}", depthnet.name(), backbone.name()),
                ];
                if temporal_fusion {
                    m.push("temporal_fusion".to_string());
                }
                m
            }
        }
    }
}

impl fmt::Display for BranchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchConfig::Tracker => f.write_str("tracker"),
            BranchConfig::Detection {
                backbone,
                depthnet,
                temporal_fusion,
            } => {
                write!(f, "{}-{}", backbone.name(), depthnet.name())?;
                if *temporal_fusion {
                    f.write_str("-fusion")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for BranchConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        enumerate_branches()
            .into_iter()
            .find(|b| b.to_string() == s)
            .ok_or_else(|| Error::config("branch", "name", format!("unknown branch `{s}`")))
    }
}

impl Serialize for BranchConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BranchConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn enumerate_branches() -> Vec<BranchConfig> {
    (0..BRANCH_COUNT).filter_map(BranchConfig::from_index).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleProfile {
    pub name: String,
    /// Per-view latency, or per-frame latency for fixed modules.
    pub latency_ms: f64,
    pub memory_mb: f64,
    /// Charged once per frame regardless of view assignment.
    #[serde(default)]
    pub fixed: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchModules {
    pub index: usize,
    pub modules: Vec<String>,
}

/// Simulated cost of the tracker's association/update step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateCost {
    pub base_ms: f64,
    pub per_track_ms: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

impl UpdateCost {
    pub fn latency(&self, tracks: usize) -> f64 {
        self.base_ms + self.per_track_ms * tracks as f64
    }
}

impl Default for UpdateCost {
    fn default() -> Self {
        Self {
            base_ms: 0.3,
            per_track_ms: 0.02,
            synthetic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub memory_limit_mb: f64,
    pub modules: Vec<ModuleProfile>,
    pub branches: Vec<BranchModules>,
    #[serde(default)]
    pub tracker_update: UpdateCost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

const ORIN_PROFILE: &str = include_str!("../data/device_orin.json");
const ORIN_NANO_PROFILE: &str = include_str!("../data/device_orin_nano.json");

impl DeviceProfile {
    /// Orin-like profile anchored to a 33 ms full-frame latency for
    /// r34-sparse and 750 ms for r152-sparse. Other values are synthetic.
    pub fn bundled_orin() -> Self {
        Self::from_json_str(ORIN_PROFILE, "device_orin.json").expect("bundled profile is valid")
    }

    /// A 6.3 GB memory-limited device. Latencies are synthetic.
    pub fn bundled_orin_nano() -> Self {
        Self::from_json_str(ORIN_NANO_PROFILE, "device_orin_nano.json").expect("bundled profile is valid")
    }

    pub fn from_json_str(s: &str, origin: &str) -> Result<Self> {
        let p: DeviceProfile = serde_json::from_str(s).map_err(|e| Error::config(origin, "json", e.to_string()))?;
        p.validate(origin)?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: DeviceProfile = read_json(path)?;
        p.validate(&path.display().to_string())?;
        Ok(p)
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        if !(self.memory_limit_mb > 0.0) {
            return Err(Error::config(origin, "memory_limit_mb", "must be positive"));
        }
        for m in &self.modules {
            if !(m.latency_ms >= 0.0) || !(m.memory_mb >= 0.0) {
                return Err(Error::config(
                    origin,
                    format!("modules.{}", m.name),
                    "latency and memory must be non-negative",
                ));
            }
        }
        let mut seen = BTreeSet::new();
        for b in &self.branches {
            if b.index >= BRANCH_COUNT || !seen.insert(b.index) {
                return Err(Error::config(
                    origin,
                    "branches.index",
                    format!("bad or duplicate branch index {}", b.index),
                ));
            }
            for name in &b.modules {
                if self.module(name).is_none() {
                    return Err(Error::config(
                        origin,
                        format!("branches[{}].modules", b.index),
                        format!("module `{name}` has no profile entry"),
                    ));
                }
            }
        }
        if seen.len() != BRANCH_COUNT {
            return Err(Error::config(
                origin,
                "branches",
                format!("expected {BRANCH_COUNT} branches, found {}", seen.len()),
            ));
        }
        if !self.modules_of(BranchConfig::Tracker).is_empty() {
            return Err(Error::config(origin, "branches[0].modules", "the tracker branch runs no modules"));
        }
        Ok(())
    }

    pub fn module(&self, name: &str) -> Option<&ModuleProfile> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn modules_of(&self, branch: BranchConfig) -> &[String] {
        self.branches
            .iter()
            .find(|b| b.index == branch.index())
            .map(|b| b.modules.as_slice())
            .unwrap_or(&[])
    }

    /// Per-view marginal latency: the branch's non-fixed modules summed.
    pub fn branch_latency(&self, branch: BranchConfig) -> Result<f64> {
        if branch.is_tracker() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for name in self.modules_of(branch) {
            let m = self.module(name).ok_or_else(|| Error::MissingModule(name.clone()))?;
            if !m.fixed {
                total += m.latency_ms;
            }
        }
        Ok(total)
    }

    /// Latency charged once per frame.
    pub fn fixed_latency(&self) -> f64 {
        self.modules.iter().filter(|m| m.fixed).map(|m| m.latency_ms).sum()
    }

    /// Memory held by the given branches' modules plus all fixed modules.
    pub fn resident_memory(&self, branches: &[BranchConfig]) -> f64 {
        let mut names: BTreeSet<&str> = self.modules.iter().filter(|m| m.fixed).map(|m| m.name.as_str()).collect();
        for b in branches {
            names.extend(self.modules_of(*b).iter().map(String::as_str));
        }
        names.iter().filter_map(|n| self.module(n)).map(|m| m.memory_mb).sum()
    }

    /// Full-frame latency when every one of `views` runs `branch`.
    pub fn uniform_frame_latency(&self, branch: BranchConfig, views: usize, alpha: f64) -> Result<f64> {
        Ok(batched_cost(self.branch_latency(branch)?, views, alpha) + self.fixed_latency())
    }
}

/// Cost of running `k` views on one branch: `marginal * (1 + alpha (k - 1))`.
pub fn batched_cost(marginal: f64, k: usize, alpha: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        marginal * (1.0 + alpha * (k as f64 - 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adaptation {
    pub branches: Vec<BranchConfig>,
    pub removed_modules: Vec<String>,
    pub removed_for_latency: Vec<BranchConfig>,
    pub warnings: Vec<String>,
}

/// Prunes the branch set for a device: first detach the largest-memory
/// modules until the resident set fits, then drop detection branches whose
/// single-view latency plus fixed latency exceeds `target_ms`. The tracker
/// branch always survives.
pub fn adapt(device: &DeviceProfile, target_ms: f64) -> Result<Adaptation> {
    if !(target_ms > 0.0) {
        return Err(Error::config("adapt", "target_ms", "must be positive"));
    }
    let mut branches = enumerate_branches();
    let mut removed_modules = Vec::new();
    let mut warnings = Vec::new();

    while device.resident_memory(&branches) > device.memory_limit_mb {
        let mut candidates: Vec<&ModuleProfile> = branches
            .iter()
            .flat_map(|b| device.modules_of(*b))
            .filter_map(|n| device.module(n))
            .filter(|m| !m.fixed)
            .collect();
        candidates.sort_by(|a, b| b.memory_mb.total_cmp(&a.memory_mb).then_with(|| a.name.cmp(&b.name)));
        let Some(victim) = candidates.first().map(|m| m.name.clone()) else {
            warnings.push(format!(
                "fixed modules alone need {:.0} MB, above the {:.0} MB limit",
                device.resident_memory(&branches),
                device.memory_limit_mb
            ));
            break;
        };
        branches.retain(|b| !device.modules_of(*b).contains(&victim));
        removed_modules.push(victim);
    }

    let fixed = device.fixed_latency();
    let mut removed_for_latency = Vec::new();
    let mut kept = Vec::with_capacity(branches.len());
    for b in branches {
        if !b.is_tracker() && device.branch_latency(b)? + fixed > target_ms {
            removed_for_latency.push(b);
        } else {
            kept.push(b);
        }
    }
    if kept.len() == 1 {
        warnings.push(format!("only the tracker branch fits a {target_ms} ms target"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Adaptation {
        branches: kept,
        removed_modules,
        removed_for_latency,
        warnings,
    })
}
