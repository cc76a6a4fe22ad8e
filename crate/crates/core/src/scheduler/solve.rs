//! Exact solvers for the per-frame branch-to-view assignment: pick one
//! branch per view, maximize total score, keep total latency within budget.
//!
//! Ties are broken by lower total latency, then by the lexicographically
//! smallest row assignment.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::branches::{batched_cost, BranchConfig};
use crate::error::{Error, Result};

/// Largest view count for which the batched (non-separable) cost model is
/// solved exactly; above it the batching factor is treated as 1.
pub const MAX_BATCHED_VIEWS: usize = 8;

pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleProblem {
    /// Row labels, in enumeration order.
    pub branches: Vec<BranchConfig>,
    /// `scores[row][view]`
    pub scores: Vec<Vec<f64>>,
    /// Per-view marginal latency of each row.
    pub latencies: Vec<f64>,
    pub budget: f64,
    pub alpha: f64,
}

impl ScheduleProblem {
    pub fn new(branches: Vec<BranchConfig>, scores: Vec<Vec<f64>>, latencies: Vec<f64>, budget: f64, alpha: f64) -> Result<Self> {
        let m = branches.len();
        if m == 0 || scores.len() != m || latencies.len() != m {
            return Err(Error::config(
                "schedule",
                "rows",
                "branches, scores and latencies must have equal, non-zero length",
            ));
        }
        let n = scores[0].len();
        if scores.iter().any(|r| r.len() != n || r.iter().any(|s| !s.is_finite())) {
            return Err(Error::config("schedule", "scores", "score matrix must be rectangular and finite"));
        }
        if latencies.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("schedule", "latencies", "latencies must be non-negative"));
        }
        if !latencies.contains(&0.0) {
            return Err(Error::config("schedule", "latencies", "a zero-latency row is required for feasibility"));
        }
        if !(budget >= 0.0) || !(alpha >= 0.0) {
            return Err(Error::config("schedule", "budget", "budget and batching factor must be non-negative"));
        }
        Ok(Self {
            branches,
            scores,
            latencies,
            budget,
            alpha,
        })
    }

    pub fn rows(&self) -> usize {
        self.branches.len()
    }

    pub fn views(&self) -> usize {
        self.scores[0].len()
    }

    /// Batching factor actually used by the solvers.
    pub fn effective_alpha(&self) -> f64 {
        if self.alpha != 1.0 && self.views() > MAX_BATCHED_VIEWS {
            1.0
        } else {
            self.alpha
        }
    }

    fn separable(&self) -> bool {
        self.effective_alpha() == 1.0
    }

    /// Objective summed in view order.
    pub fn objective(&self, rows: &[usize]) -> f64 {
        rows.iter().enumerate().fold(0.0, |acc, (j, &i)| acc + self.scores[i][j])
    }

    /// Total marginal latency. Separable costs are summed in view order;
    /// batched costs group views per row, rows in index order.
    pub fn latency(&self, rows: &[usize]) -> f64 {
        if self.separable() {
            return rows.iter().fold(0.0, |acc, &i| acc + self.latencies[i]);
        }
        let mut counts = vec![0usize; self.rows()];
        for &i in rows {
            counts[i] += 1;
        }
        counts
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, &k)| acc + batched_cost(self.latencies[i], k, self.alpha))
    }

    fn decision(&self, rows: Vec<usize>) -> ScheduleDecision {
        ScheduleDecision {
            assignment: rows.iter().map(|&i| self.branches[i]).collect(),
            predicted_objective: self.objective(&rows),
            predicted_latency: self.latency(&rows),
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    /// Chosen branch per view.
    pub assignment: Vec<BranchConfig>,
    /// Chosen row per view.
    pub rows: Vec<usize>,
    pub predicted_objective: f64,
    /// Sum of marginal latencies; fixed and update costs are excluded.
    pub predicted_latency: f64,
}

/// `a` is preferred over `b`: higher score, then lower latency, then the
/// lexicographically smaller assignment.
fn better(a: (f64, f64, &[u16]), b: (f64, f64, &[u16])) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.1.total_cmp(&b.1) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.2 < b.2,
        },
    }
}

#[derive(Debug, Clone)]
struct Partial {
    latency: f64,
    score: f64,
    rows: Vec<u16>,
}

/// Keeps the Pareto frontier of `(latency, score)`; on exact ties the
/// lexicographically smaller assignment survives.
fn prune(mut states: Vec<Partial>) -> Vec<Partial> {
    states.sort_by(|a, b| {
        a.latency
            .total_cmp(&b.latency)
            .then(b.score.total_cmp(&a.score))
            .then_with(|| a.rows.cmp(&b.rows))
    });
    let mut out: Vec<Partial> = Vec::with_capacity(states.len());
    for s in states {
        if out.last().is_none_or(|best| s.score > best.score) {
            out.push(s);
        }
    }
    out
}

/// Exact optimum of the assignment problem.
pub fn solve(problem: &ScheduleProblem) -> ScheduleDecision {
    if problem.alpha != 1.0 && problem.views() > MAX_BATCHED_VIEWS {
        log::warn!("batching factor {} ignored for {} views", problem.alpha, problem.views());
    }
    let rows = if problem.separable() {
        solve_separable(problem)
    } else {
        solve_batched(problem)
    };
    problem.decision(rows)
}

/// Dynamic program over views, carrying the exact Pareto frontier of
/// partial assignments.
fn solve_separable(p: &ScheduleProblem) -> Vec<usize> {
    let mut frontier = vec![Partial {
        latency: 0.0,
        score: 0.0,
        rows: Vec::new(),
    }];
    for j in 0..p.views() {
        let mut next = Vec::with_capacity(frontier.len() * p.rows());
        for s in &frontier {
            for i in 0..p.rows() {
                let latency = s.latency + p.latencies[i];
                if latency > p.budget {
                    continue;
                }
                let mut rows = s.rows.clone();
                rows.push(i as u16);
                next.push(Partial {
                    latency,
                    score: s.score + p.scores[i][j],
                    rows,
                });
            }
        }
        frontier = prune(next);
    }
    // The frontier's score strictly increases with latency, so the last
    // entry is the unique optimum under the tie-breaking rule.
    let best = frontier.pop().expect("the zero-latency row keeps the frontier non-empty");
    best.rows.into_iter().map(usize::from).collect()
}

/// Dynamic program over rows and covered-view subsets for batched costs.
fn solve_batched(p: &ScheduleProblem) -> Vec<usize> {
    const UNSET: u16 = u16::MAX;
    let n = p.views();
    let full = (1usize << n) - 1;
    let mut table: Vec<Vec<Partial>> = vec![Vec::new(); full + 1];
    table[0].push(Partial {
        latency: 0.0,
        score: 0.0,
        rows: vec![UNSET; n],
    });
    for i in 0..p.rows() {
        let mut next: Vec<Vec<Partial>> = vec![Vec::new(); full + 1];
        for (mask, states) in table.iter().enumerate() {
            if states.is_empty() {
                continue;
            }
            let free = full & !mask;
            // Every subset of the uncovered views, including the empty one.
            let mut sub = free;
            loop {
                let k = sub.count_ones() as usize;
                let cost = batched_cost(p.latencies[i], k, p.alpha);
                let gain: f64 = (0..n).filter(|j| sub >> j & 1 == 1).map(|j| p.scores[i][j]).sum();
                for s in states {
                    let latency = s.latency + cost;
                    if latency > p.budget {
                        continue;
                    }
                    let mut rows = s.rows.clone();
                    for (j, r) in rows.iter_mut().enumerate() {
                        if sub >> j & 1 == 1 {
                            *r = i as u16;
                        }
                    }
                    next[mask | sub].push(Partial {
                        latency,
                        score: s.score + gain,
                        rows,
                    });
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & free;
            }
        }
        table = next.into_iter().map(prune).collect();
    }
    let finals = std::mem::take(&mut table[full]);
    let mut best: Option<(f64, f64, Vec<u16>)> = None;
    for s in finals {
        let rows: Vec<usize> = s.rows.iter().map(|&r| usize::from(r)).collect();
        let cand = (p.objective(&rows), p.latency(&rows), s.rows);
        if best.as_ref().is_none_or(|b| better((cand.0, cand.1, &cand.2), (b.0, b.1, &b.2))) {
            best = Some(cand);
        }
    }
    best.expect("the zero-latency row keeps a full assignment feasible")
        .2
        .into_iter()
        .map(usize::from)
        .collect()
}

/// Exhaustive search over all `M^N` assignments with the same tie-breaking.
pub fn solve_bruteforce(problem: &ScheduleProblem) -> Result<ScheduleDecision> {
    let m = problem.rows();
    let n = problem.views();
    let total = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(total));
    }
    let mut rows = vec![0usize; n];
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    loop {
        let latency = problem.latency(&rows);
        if latency <= problem.budget {
            let score = problem.objective(&rows);
            // Enumeration runs in lexicographic order, so only strictly
            // better candidates replace the incumbent.
            let replace = match &best {
                None => true,
                Some((bs, bl, _)) => score > *bs || (score == *bs && latency < *bl),
            };
            if replace {
                best = Some((score, latency, rows.clone()));
            }
        }
        // Odometer increment, last view fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                let (_, _, r) = best.expect("the zero-latency row is always feasible");
                return Ok(problem.decision(r));
            }
            pos -= 1;
            rows[pos] += 1;
            if rows[pos] < m {
                break;
            }
            rows[pos] = 0;
        }
    }
}

/// The per-frame policy: every view runs the same branch; pick the branch
/// with the highest total score whose full-frame cost fits the budget.
pub fn best_uniform(problem: &ScheduleProblem) -> ScheduleDecision {
    let n = problem.views();
    let mut best: Option<(f64, f64, usize)> = None;
    for i in 0..problem.rows() {
        let rows = vec![i; n];
        let latency = problem.latency(&rows);
        if latency > problem.budget {
            continue;
        }
        let score = problem.objective(&rows);
        let replace = match best {
            None => true,
            Some((bs, bl, _)) => score > bs || (score == bs && latency < bl),
        };
        if replace {
            best = Some((score, latency, i));
        }
    }
    let (_, _, i) = best.expect("the zero-latency row is always feasible");
    problem.decision(vec![i; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branches::enumerate_branches;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(scores: Vec<Vec<f64>>, latencies: Vec<f64>, budget: f64) -> ScheduleProblem {
        let branches = enumerate_branches()[..scores.len()].to_vec();
        ScheduleProblem::new(branches, scores, latencies, budget, 1.0).unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, alpha: f64) -> ScheduleProblem {
        let m = rng.random_range(1..=6);
        let n = rng.random_range(1..=4);
        let mut latencies: Vec<f64> = (0..m).map(|_| rng.random_range(0..=50) as f64).collect();
        latencies[0] = 0.0;
        let scores = (0..m).map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let branches = enumerate_branches()[..m].to_vec();
        ScheduleProblem::new(branches, scores, latencies, rng.random_range(0..=120) as f64, alpha).unwrap()
    }

    #[test]
    fn single_view_examples() {
        let p = problem(vec![vec![0.2], vec![0.9]], vec![0.0, 10.0], 10.0);
        let d = solve(&p);
        assert_eq!(d.rows, vec![1]);
        assert_eq!(d.predicted_objective, 0.9);

        let p = problem(vec![vec![0.2], vec![0.9]], vec![0.0, 10.0], 9.0);
        let d = solve(&p);
        assert_eq!(d.rows, vec![0]);
        assert_eq!(d.predicted_objective, 0.2);
        assert_eq!(solve_bruteforce(&p).unwrap(), d);
    }

    #[test]
    fn all_zero_scores_pick_tracker() {
        let p = problem(vec![vec![0.0; 4]; 5], vec![0.0, 3.0, 5.0, 7.0, 9.0], 100.0);
        assert_eq!(solve(&p).rows, vec![0; 4]);
        assert_eq!(solve_bruteforce(&p).unwrap().rows, vec![0; 4]);
    }

    #[test]
    fn equal_score_prefers_lower_latency_then_lexicographic() {
        let p = problem(vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0, 0.0, 0.0], 1.0);
        assert_eq!(solve(&p).rows, vec![0, 0]);
        let p = problem(vec![vec![0.1, 0.1], vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0, 4.0, 2.0], 100.0);
        assert_eq!(solve(&p).rows, vec![2, 2]);
    }

    #[test]
    fn matches_brute_force_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..200 {
            let p = random_problem(&mut rng, 1.0);
            assert_eq!(solve(&p), solve_bruteforce(&p).unwrap());
        }
    }

    #[test]
    fn matches_brute_force_batched() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..200 {
            let alpha = rng.random_range(0.3..1.0);
            let p = random_problem(&mut rng, alpha);
            let a = solve(&p);
            let b = solve_bruteforce(&p).unwrap();
            assert!((a.predicted_objective - b.predicted_objective).abs() < 1e-9);
            assert!(a.predicted_latency <= p.budget);
            assert_eq!(a.rows, b.rows);
        }
    }

    #[test]
    fn brute_force_refuses_huge_instances() {
        let p = problem(vec![vec![0.0; 6]; 17], vec![0.0; 17], 1.0);
        assert!(matches!(solve_bruteforce(&p), Err(Error::TooLarge(_))));
    }

    #[test]
    fn uniform_policy_never_beats_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        for _ in 0..200 {
            let p = random_problem(&mut rng, 1.0);
            let u = best_uniform(&p);
            let o = solve(&p);
            assert!(u.predicted_latency <= p.budget);
            assert!(o.predicted_objective >= u.predicted_objective);
        }
    }

    #[test]
    fn problem_validation() {
        let b = enumerate_branches()[..2].to_vec();
        assert!(ScheduleProblem::new(b.clone(), vec![vec![0.1], vec![0.2]], vec![1.0, 2.0], 5.0, 1.0).is_err());
        assert!(ScheduleProblem::new(b.clone(), vec![vec![0.1], vec![f64::NAN]], vec![0.0, 2.0], 5.0, 1.0).is_err());
        assert!(ScheduleProblem::new(b, vec![vec![0.1], vec![0.2, 0.3]], vec![0.0, 2.0], 5.0, 1.0).is_err());
    }

    #[test]
    fn batching_is_ignored_for_many_views() {
        let m = 3;
        let n = 9;
        let scores = (0..m).map(|i| vec![i as f64 * 0.1; n]).collect();
        let p = ScheduleProblem::new(enumerate_branches()[..m].to_vec(), scores, vec![0.0, 1.0, 2.0], 10.0, 0.5).unwrap();
        assert_eq!(p.effective_alpha(), 1.0);
        let d = solve(&p);
        assert!(d.predicted_latency <= 10.0);
    }
}
