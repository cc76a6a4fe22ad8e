//! Squared-error gradient boosting over axis-aligned regression trees with
//! exact greedy split search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbrtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbrtParams {
    fn default() -> Self {
        Self {
            rounds: 60,
            max_depth: 4,
            learning_rate: 0.15,
            min_samples_leaf: 5,
        }
    }
}

/// A regression tree node. Samples with `x[feature_index] < threshold` go
/// left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature_index: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        leaf_value: f64,
    },
}

impl Node {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { leaf_value } => return *leaf_value,
                Node::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature_index] < *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbrtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub feature_width: usize,
    pub trees: Vec<Node>,
}

impl GbrtModel {
    /// Unclamped ensemble output.
    pub fn raw(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Ensemble output clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_width {
            return Err(Error::FeatureWidth {
                expected: self.feature_width,
                got: x.len(),
            });
        }
        Ok(self.raw(x).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples: usize,
    /// Training-set MSE after each round; index 0 is the base score alone.
    pub mse_per_round: Vec<f64>,
    pub r_squared: f64,
}

#[derive(Clone, Copy)]
struct SplitChoice {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Fits a boosted ensemble to `(features, target)` pairs. Deterministic for
/// a given sample order and parameter set.
pub fn train_gbrt(features: &[Vec<f64>], targets: &[f64], params: &GbrtParams) -> Result<(GbrtModel, TrainReport)> {
    let n = features.len();
    if n == 0 || targets.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if targets.len() != n {
        return Err(Error::DegenerateDesign(format!("{n} feature rows but {} targets", targets.len())));
    }
    let width = features[0].len();
    if let Some(row) = features.iter().find(|r| r.len() != width) {
        return Err(Error::FeatureWidth {
            expected: width,
            got: row.len(),
        });
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::config("gbrt", "learning_rate", "must lie in (0, 1]"));
    }

    // Presorted sample order per feature, reused by every tree.
    let sorted: Vec<Vec<u32>> = (0..width)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| features[a as usize][f].total_cmp(&features[b as usize][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mse = |pred: &[f64]| targets.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / n as f64;
    let mut report = TrainReport {
        samples: n,
        mse_per_round: vec![mse(&pred)],
        r_squared: 0.0,
    };

    let mut trees = Vec::with_capacity(params.rounds);
    let min_leaf = params.min_samples_leaf.max(1);
    for _ in 0..params.rounds {
        let residual: Vec<f64> = targets.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let tree = grow_tree(features, &sorted, &residual, params.max_depth, min_leaf);
        for (p, x) in pred.iter_mut().zip(features) {
            *p += params.learning_rate * tree.eval(x);
        }
        trees.push(tree);
        report.mse_per_round.push(mse(&pred));
    }

    let mean = base_score;
    let sst: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    let sse: f64 = targets.iter().zip(&pred).map(|(t, p)| (t - p).powi(2)).sum();
    report.r_squared = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };

    Ok((
        GbrtModel {
            base_score,
            learning_rate: params.learning_rate,
            max_depth: params.max_depth,
            feature_width: width,
            trees,
        },
        report,
    ))
}

enum Building {
    Open,
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

/// Grows one tree level by level. Each level scans every feature's presorted
/// order once, accumulating per-node prefix sums.
fn grow_tree(features: &[Vec<f64>], sorted: &[Vec<u32>], residual: &[f64], max_depth: usize, min_leaf: usize) -> Node {
    let n = residual.len();
    let mut node_of: Vec<usize> = vec![0; n];
    let mut nodes: Vec<Building> = vec![Building::Open];
    let mut sum = vec![residual.iter().sum::<f64>()];
    let mut count = vec![n];
    let mut frontier: Vec<usize> = vec![0];

    for _depth in 0..max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; nodes.len()];
        for (k, &node) in frontier.iter().enumerate() {
            slot[node] = k;
        }
        let mut best: Vec<Option<SplitChoice>> = vec![None; frontier.len()];
        let mut run_sum = vec![0.0f64; frontier.len()];
        let mut run_cnt = vec![0usize; frontier.len()];
        let mut last = vec![f64::NAN; frontier.len()];

        for (f, order) in sorted.iter().enumerate() {
            run_sum.iter_mut().for_each(|s| *s = 0.0);
            run_cnt.iter_mut().for_each(|c| *c = 0);
            for &i in order {
                let i = i as usize;
                let node = node_of[i];
                let k = match slot.get(node) {
                    Some(&k) if k != usize::MAX => k,
                    _ => continue,
                };
                let v = features[i][f];
                let cl = run_cnt[k];
                if cl >= min_leaf && v > last[k] && count[node] - cl >= min_leaf {
                    let sl = run_sum[k];
                    let sr = sum[node] - sl;
                    let cr = count[node] - cl;
                    let gain = sl * sl / cl as f64 + sr * sr / cr as f64 - sum[node] * sum[node] / count[node] as f64;
                    if gain > 1e-12 && best[k].is_none_or(|b| gain > b.gain) {
                        let mut threshold = 0.5 * (last[k] + v);
                        if threshold <= last[k] {
                            threshold = v;
                        }
                        best[k] = Some(SplitChoice { gain, feature: f, threshold });
                    }
                }
                run_sum[k] += residual[i];
                run_cnt[k] += 1;
                last[k] = v;
            }
        }

        let mut next = Vec::new();
        for (k, &node) in frontier.iter().enumerate() {
            let Some(choice) = best[k] else {
                continue;
            };
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Building::Open);
            nodes.push(Building::Open);
            sum.extend([0.0, 0.0]);
            count.extend([0, 0]);
            nodes[node] = Building::Split {
                feature: choice.feature,
                threshold: choice.threshold,
                left,
                right,
            };
            next.push(left);
            next.push(right);
        }
        for i in 0..n {
            if let Building::Split {
                feature,
                threshold,
                left,
                right,
            } = nodes[node_of[i]]
            {
                let child = if features[i][feature] < threshold { left } else { right };
                node_of[i] = child;
                sum[child] += residual[i];
                count[child] += 1;
            }
        }
        frontier = next;
    }

    for (idx, node) in nodes.iter_mut().enumerate() {
        if matches!(node, Building::Open) {
            *node = Building::Leaf(if count[idx] > 0 { sum[idx] / count[idx] as f64 } else { 0.0 });
        }
    }
    fn assemble(nodes: &[Building], idx: usize) -> Node {
        match nodes[idx] {
            Building::Leaf(v) => Node::Leaf { leaf_value: v },
            Building::Split {
                feature,
                threshold,
                left,
                right,
            } => Node::Split {
                feature_index: feature,
                threshold,
                left: Box::new(assemble(nodes, left)),
                right: Box::new(assemble(nodes, right)),
            },
            Building::Open => unreachable!("open nodes are closed before assembly"),
        }
    }
    assemble(&nodes, 0)
}
