//! Minimum-cost one-to-one assignment (Hungarian method with potentials).

/// Solves the rectangular assignment problem for `cost[row][col]`.
///
/// Returns, for each row, the assigned column. When there are more rows
/// than columns some rows stay unassigned (`None`).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let by_col = solve_wide(&transposed);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            out[r] = Some(c);
        }
        return out;
    }
    solve_wide(cost).into_iter().map(Some).collect()
}

/// `rows <= cols`; every row gets a column.
fn solve_wide(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-indexed: column 0 is a virtual start node.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(cost: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(r, c)| c.map(|c| cost[r][c])).sum()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn square_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let perms = permutations(5);
        assert_eq!(perms.len(), 120);
        for _ in 0..100 {
            let cost: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let a = hungarian(&cost);
            assert!((total(&cost, &a) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn rectangular_shapes() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        let a = hungarian(&cost);
        assert_eq!(total(&cost, &a), 3.0);
        let t: Vec<Vec<f64>> = (0..3).map(|c| (0..2).map(|r| cost[r][c]).collect()).collect();
        let b = hungarian(&t);
        assert_eq!(b.iter().filter(|x| x.is_some()).count(), 2);
        assert_eq!(total(&t, &b), 3.0);
        assert!(hungarian(&[]).is_empty());
    }
}
