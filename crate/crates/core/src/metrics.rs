//! Detection evaluation: center-distance matching, AP, translation and
//! velocity errors, and the composite detection score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Box3D, ObjectClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Planar center-distance thresholds in meters, ascending.
    pub thresholds: Vec<f64>,
    /// Threshold whose true positives feed the error terms.
    pub tp_threshold: f64,
    pub recall_floor: f64,
    pub classes: Vec<ObjectClass>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.5, 1.0, 2.0, 4.0],
            tp_threshold: 2.0,
            recall_floor: 0.10,
            classes: ObjectClass::ALL.to_vec(),
        }
    }
}

fn planar(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Result of greedy matching: `pairs` holds `(pred, gt)` indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub missed: Vec<usize>,
}

/// Visits predictions by descending confidence (stable on ties) and matches
/// each to the nearest unmatched same-class ground truth within `threshold`.
pub fn match_boxes(preds: &[Box3D], gts: &[Box3D], threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut taken = vec![false; gts.len()];
    let mut m = Matching::default();
    for p in order {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class != preds[p].class {
                continue;
            }
            let d = planar(preds[p].center, gt.center);
            if d <= threshold && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, g));
            }
        }
        match best {
            Some((_, g)) => {
                taken[g] = true;
                m.pairs.push((p, g));
            }
            None => m.false_positives.push(p),
        }
    }
    m.missed = (0..gts.len()).filter(|&g| !taken[g]).collect();
    m
}

/// Interpolated AP over recall points `floor+0.01 .. 1.00` in steps of
/// 0.01, normalized so a perfect ranking scores 1.
///
/// `ranked` lists true/false-positive flags in descending confidence.
pub fn average_precision(ranked: &[bool], gt_count: usize, recall_floor: f64) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    // Precision at each prefix plus the integer TP count that sets recall.
    let mut points = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, &hit) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    // Suffix maximum of precision gives the interpolated curve.
    let mut envelope = vec![0.0f64; points.len() + 1];
    for i in (0..points.len()).rev() {
        envelope[i] = envelope[i + 1].max(points[i].1);
    }
    let start = (recall_floor * 100.0).round() as usize + 1;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut cursor = 0usize;
    for k in start..=100 {
        // First prefix whose recall reaches k/100.
        while cursor < points.len() && points[cursor].0 * 100 < k * gt_count {
            cursor += 1;
        }
        sum += envelope[cursor];
        count += 1;
    }
    Some(sum / count as f64)
}

/// `(6 mAP + 2 max(1 - mATE, 0) + 2 max(1 - mAVE, 0)) / 10`, evaluated on
/// a 100-point scale so round inputs give round outputs.
pub fn detection_score(map: f64, mate: f64, mave: f64) -> f64 {
    (60.0 * map + 20.0 * (1.0 - mate).max(0.0) + 20.0 * (1.0 - mave).max(0.0)) / 100.0
}

#[derive(Debug, Clone, Default)]
struct ClassAccumulator {
    gt: usize,
    /// `(confidence, tp flag per threshold)`
    dets: Vec<(f64, Vec<bool>)>,
    trans: Vec<f64>,
    vel: Vec<f64>,
}

/// Per-frame evaluation outcome, kept for inspection.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FrameEval {
    pub true_positives: Vec<usize>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub translation_errors: Vec<f64>,
    pub velocity_errors: Vec<f64>,
}

/// Accumulates frames and summarizes them.
#[derive(Debug, Clone)]
pub struct Evaluator {
    config: EvalConfig,
    classes: Vec<ClassAccumulator>,
}

impl Evaluator {
    pub fn new(config: EvalConfig) -> Self {
        Self {
            classes: vec![ClassAccumulator::default(); ObjectClass::ALL.len()],
            config,
        }
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn add_frame(&mut self, preds: &[Box3D], gts: &[Box3D]) -> FrameEval {
        let preds: Vec<Box3D> = preds.iter().filter(|b| self.config.classes.contains(&b.class)).copied().collect();
        let gts: Vec<Box3D> = gts.iter().filter(|b| self.config.classes.contains(&b.class)).copied().collect();
        let nt = self.config.thresholds.len();
        let mut flags = vec![vec![false; nt]; preds.len()];
        let mut eval = FrameEval::default();
        for (t, &thr) in self.config.thresholds.iter().enumerate() {
            let m = match_boxes(&preds, &gts, thr);
            for &(p, _) in &m.pairs {
                flags[p][t] = true;
            }
            if thr == self.config.tp_threshold {
                for &(p, g) in &m.pairs {
                    let acc = &mut self.classes[gts[g].class.index()];
                    let te = planar(preds[p].center, gts[g].center);
                    let ve = planar(preds[p].velocity, gts[g].velocity);
                    acc.trans.push(te);
                    acc.vel.push(ve);
                    eval.true_positives.push(p);
                    eval.translation_errors.push(te);
                    eval.velocity_errors.push(ve);
                }
                eval.false_positives = m.false_positives;
                eval.false_negatives = m.missed;
            }
        }
        for g in &gts {
            self.classes[g.class.index()].gt += 1;
        }
        for (p, f) in preds.iter().zip(flags) {
            self.classes[p.class.index()].dets.push((p.confidence, f));
        }
        eval
    }

    pub fn summarize(&self) -> EvalReport {
        let mut per_class = BTreeMap::new();
        let mut ap_sum = 0.0;
        let mut ap_n = 0usize;
        let mut ate = Vec::new();
        let mut ave = Vec::new();
        let mut defaulted = false;
        for &c in &self.config.classes {
            let acc = &self.classes[c.index()];
            if acc.gt == 0 {
                continue;
            }
            let mut order: Vec<usize> = (0..acc.dets.len()).collect();
            order.sort_by(|&a, &b| acc.dets[b].0.total_cmp(&acc.dets[a].0));
            let mut aps = Vec::with_capacity(self.config.thresholds.len());
            for t in 0..self.config.thresholds.len() {
                let ranked: Vec<bool> = order.iter().map(|&i| acc.dets[i].1[t]).collect();
                let ap = average_precision(&ranked, acc.gt, self.config.recall_floor).unwrap_or(0.0);
                ap_sum += ap;
                ap_n += 1;
                aps.push(ap);
            }
            let (te, ve) = if acc.trans.is_empty() {
                defaulted = true;
                (1.0, 1.0)
            } else {
                let n = acc.trans.len() as f64;
                (acc.trans.iter().sum::<f64>() / n, acc.vel.iter().sum::<f64>() / n)
            };
            ate.push(te);
            ave.push(ve);
            per_class.insert(
                c.name().to_string(),
                ClassReport {
                    gt: acc.gt,
                    predictions: acc.dets.len(),
                    ap: aps,
                    ate: te,
                    ave: ve,
                    true_positives: acc.trans.len(),
                },
            );
        }
        let mean = |v: &[f64]| if v.is_empty() { 1.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let map = if ap_n == 0 { 0.0 } else { ap_sum / ap_n as f64 };
        let mate = mean(&ate);
        let mave = mean(&ave);
        EvalReport {
            thresholds: self.config.thresholds.clone(),
            per_class,
            summary: Summary {
                map,
                mate,
                mave,
                ds: detection_score(map, mate, mave),
                classes_evaluated: ate.len(),
                errors_defaulted: defaulted || ate.is_empty(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub gt: usize,
    pub predictions: usize,
    /// One AP per threshold.
    pub ap: Vec<f64>,
    pub ate: f64,
    pub ave: f64,
    pub true_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub map: f64,
    pub mate: f64,
    pub mave: f64,
    pub ds: f64,
    pub classes_evaluated: usize,
    /// Set when some class had no true positives and its errors were
    /// reported as 1.0.
    pub errors_defaulted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub per_class: BTreeMap<String, ClassReport>,
    pub summary: Summary,
}

/// Evaluates a set of `(predictions, ground truth)` frames.
pub fn summarize<'a>(frames: impl IntoIterator<Item = (&'a [Box3D], &'a [Box3D])>, config: &EvalConfig) -> EvalReport {
    let mut ev = Evaluator::new(config.clone());
    for (p, g) in frames {
        ev.add_frame(p, g);
    }
    ev.summarize()
}
