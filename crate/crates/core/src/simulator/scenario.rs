use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_json;
use crate::rng::{stream, Stream};
use crate::types::{ego_transform, wrap_angle, Box3D, CameraRig, EgoPose, ObjectClass};

pub const SCENARIO_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EgoPath {
    Static,
    Straight {
        speed_mps: f64,
        #[serde(default)]
        heading_rad: f64,
    },
    Circular {
        radius_m: f64,
        speed_mps: f64,
    },
    /// Piecewise-linear path traversed at constant speed; holds the last
    /// point once reached.
    Waypoints {
        points: Vec<[f64; 2]>,
        speed_mps: f64,
    },
}

impl EgoPath {
    pub fn pose(&self, t: f64) -> EgoPose {
        let (position, yaw) = match self {
            EgoPath::Static => ([0.0, 0.0], 0.0),
            EgoPath::Straight { speed_mps, heading_rad } => {
                let d = speed_mps * t;
                ([d * heading_rad.cos(), d * heading_rad.sin()], *heading_rad)
            }
            EgoPath::Circular { radius_m, speed_mps } => {
                // Counter-clockwise around (0, radius), starting at the origin
                // heading +x.
                let a = speed_mps * t / radius_m;
                ([radius_m * a.sin(), radius_m * (1.0 - a.cos())], wrap_angle(a))
            }
            EgoPath::Waypoints { points, speed_mps } => {
                let mut left = speed_mps * t;
                let mut pose = (points[0], 0.0);
                for w in points.windows(2) {
                    let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
                    let len = dx.hypot(dy);
                    let yaw = dy.atan2(dx);
                    if left <= len {
                        let f = if len > 0.0 { left / len } else { 0.0 };
                        pose = ([w[0][0] + f * dx, w[0][1] + f * dy], yaw);
                        break;
                    }
                    left -= len;
                    pose = (w[1], yaw);
                }
                pose
            }
        };
        EgoPose { position, yaw, timestamp: t }
    }

    fn validate(&self, origin: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::config(origin, "ego_path", m));
        match self {
            EgoPath::Static => Ok(()),
            EgoPath::Straight { speed_mps, .. } if !(*speed_mps >= 0.0) => bad("speed must be non-negative"),
            EgoPath::Circular { radius_m, speed_mps } if !(*radius_m > 0.0) || !(*speed_mps >= 0.0) => {
                bad("radius must be positive and speed non-negative")
            }
            EgoPath::Waypoints { points, speed_mps } if points.is_empty() || !(*speed_mps >= 0.0) => {
                bad("needs at least one waypoint and a non-negative speed")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_world_radius")]
    pub world_radius_m: f64,
    #[serde(default = "default_despawn_radius")]
    pub despawn_radius_m: f64,
    /// Objects per second entering at the world edge.
    pub spawn_rate_per_s: f64,
    /// Objects placed uniformly inside the world disk at the first frame.
    #[serde(default)]
    pub initial_objects: usize,
    /// Class weights; must sum to 1.
    pub class_mix: BTreeMap<ObjectClass, f64>,
    /// `[min, max]` speed per class in m/s. Missing classes use defaults.
    #[serde(default)]
    pub speed_ranges: BTreeMap<ObjectClass, [f64; 2]>,
    /// Per-axis standard deviation of the per-frame position perturbation.
    #[serde(default)]
    pub position_jitter_m: f64,
    pub ego_path: EgoPath,
    #[serde(default)]
    pub rig: CameraRig,
    #[serde(default = "yes")]
    pub synthetic: bool,
}

fn default_fps() -> f64 {
    10.0
}
fn default_world_radius() -> f64 {
    60.0
}
fn default_despawn_radius() -> f64 {
    70.0
}
fn yes() -> bool {
    true
}

/// `(w, h, l)` in meters.
pub fn class_size(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Car => [1.9, 1.6, 4.6],
        ObjectClass::Truck => [2.5, 3.0, 7.5],
        ObjectClass::Bus => [2.9, 3.3, 11.0],
        ObjectClass::Pedestrian => [0.7, 1.75, 0.7],
        ObjectClass::Motorcycle => [0.9, 1.5, 2.1],
        ObjectClass::Bicycle => [0.6, 1.3, 1.8],
    }
}

pub fn default_speed_range(class: ObjectClass) -> [f64; 2] {
    match class {
        ObjectClass::Car => [0.0, 14.0],
        ObjectClass::Truck => [0.0, 10.0],
        ObjectClass::Bus => [0.0, 9.0],
        ObjectClass::Pedestrian => [0.0, 2.0],
        ObjectClass::Motorcycle => [0.0, 12.0],
        ObjectClass::Bicycle => [0.0, 6.0],
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: ScenarioConfig = read_json(path)?;
        c.validate(&path.display().to_string())?;
        Ok(c)
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        if self.version != SCENARIO_FILE_VERSION {
            return Err(Error::config(origin, "version", format!("unsupported scenario version {}", self.version)));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config(origin, "fps", "must be positive"));
        }
        if !(self.duration_s >= 0.0) {
            return Err(Error::config(origin, "duration_s", "must be non-negative"));
        }
        if !(self.world_radius_m > 0.0) || !(self.despawn_radius_m > 0.0) {
            return Err(Error::config(origin, "world_radius_m", "radii must be positive"));
        }
        if self.despawn_radius_m < self.world_radius_m {
            return Err(Error::config(origin, "despawn_radius_m", "must be at least the world radius"));
        }
        if !(self.spawn_rate_per_s >= 0.0) || !(self.position_jitter_m >= 0.0) {
            return Err(Error::config(origin, "spawn_rate_per_s", "rates and jitter must be non-negative"));
        }
        let total: f64 = self.class_mix.values().sum();
        if self.class_mix.values().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::config(
                origin,
                "class_mix",
                format!("weights must be non-negative and sum to 1 (got {total})"),
            ));
        }
        for (c, r) in &self.speed_ranges {
            if !(r[0] >= 0.0 && r[1] >= r[0]) {
                return Err(Error::config(origin, format!("speed_ranges.{c}"), "expected 0 <= min <= max"));
            }
        }
        self.ego_path.validate(origin)
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    fn speed_range(&self, class: ObjectClass) -> [f64; 2] {
        self.speed_ranges.get(&class).copied().unwrap_or_else(|| default_speed_range(class))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub index: usize,
    pub timestamp: f64,
    pub ego: EgoPose,
    /// Stable object ids, parallel to `boxes`.
    pub ids: Vec<u64>,
    /// Boxes in the ego frame.
    pub boxes: Vec<Box3D>,
}

#[derive(Debug, Clone)]
struct WorldObject {
    id: u64,
    class: ObjectClass,
    position: [f64; 2],
    velocity: [f64; 2],
    size: [f64; 3],
}

impl WorldObject {
    fn global_box(&self) -> Box3D {
        Box3D {
            center: [self.position[0], self.position[1], self.size[1] / 2.0],
            size: self.size,
            velocity: [self.velocity[0], self.velocity[1], 0.0],
            yaw: self.velocity[1].atan2(self.velocity[0]),
            class: self.class,
            confidence: 1.0,
        }
    }
}

fn sample_class(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> ObjectClass {
    let mut u: f64 = rng.random();
    let mut last = ObjectClass::Car;
    for (&c, &w) in &cfg.class_mix {
        if w <= 0.0 {
            continue;
        }
        last = c;
        if u < w {
            return c;
        }
        u -= w;
    }
    last
}

fn spawn(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, id: u64, position: [f64; 2], heading: f64) -> WorldObject {
    let class = sample_class(cfg, rng);
    let [lo, hi] = cfg.speed_range(class);
    let speed = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    WorldObject {
        id,
        class,
        position,
        velocity: [speed * heading.cos(), speed * heading.sin()],
        size: class_size(class),
    }
}

/// Generates the full ground-truth sequence. Pure in the config.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Vec<GroundTruthFrame> {
    let mut rng = stream(cfg.seed, Stream::Scenario, &[]);
    let dt = cfg.dt();
    let jitter = Normal::new(0.0, cfg.position_jitter_m).expect("jitter validated non-negative");
    let arrivals = (cfg.spawn_rate_per_s > 0.0).then(|| Poisson::new(cfg.spawn_rate_per_s * dt).expect("positive rate"));
    let mut objects: Vec<WorldObject> = Vec::new();
    let mut next_id = 0u64;
    let mut frames = Vec::with_capacity(cfg.frame_count());

    for k in 0..cfg.frame_count() {
        let t = k as f64 * dt;
        let ego = cfg.ego_path.pose(t);
        if k == 0 {
            for _ in 0..cfg.initial_objects {
                let r = cfg.world_radius_m * rng.random::<f64>().sqrt().max(0.05);
                let a = rng.random_range(0.0..TAU);
                let p = [ego.position[0] + r * a.cos(), ego.position[1] + r * a.sin()];
                let heading = rng.random_range(0.0..TAU);
                objects.push(spawn(cfg, &mut rng, next_id, p, heading));
                next_id += 1;
            }
        } else {
            for o in objects.iter_mut() {
                o.position[0] += o.velocity[0] * dt + jitter.sample(&mut rng);
                o.position[1] += o.velocity[1] * dt + jitter.sample(&mut rng);
            }
            let n = arrivals.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            for _ in 0..n {
                let a = rng.random_range(0.0..TAU);
                let r = cfg.world_radius_m;
                let p = [ego.position[0] + r * a.cos(), ego.position[1] + r * a.sin()];
                // Head inward, within +-60 degrees of the ego direction.
                let heading = a + PI + rng.random_range(-PI / 3.0..PI / 3.0);
                objects.push(spawn(cfg, &mut rng, next_id, p, heading));
                next_id += 1;
            }
        }
        let dist = |o: &WorldObject| (o.position[0] - ego.position[0]).hypot(o.position[1] - ego.position[1]);
        objects.retain(|o| dist(o) <= cfg.despawn_radius_m);

        let mut ids = Vec::new();
        let mut boxes = Vec::new();
        for o in &objects {
            if dist(o) <= cfg.world_radius_m {
                ids.push(o.id);
                boxes.push(ego_transform(&o.global_box(), &EgoPose::ORIGIN, &ego));
            }
        }
        frames.push(GroundTruthFrame {
            index: k,
            timestamp: t,
            ego,
            ids,
            boxes,
        });
    }
    frames
}
