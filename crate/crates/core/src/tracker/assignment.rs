//! Rectangular minimum-cost assignment (Hungarian method with potentials).

/// Solves min Σ cost[i][assign[i]] over one-to-one assignments.
///
/// `cost` is row-major with `rows` rows of equal length. When there are more
/// rows than columns the problem is transposed internally, so every row is
/// assigned when `rows <= cols` and every column otherwise. Returns
/// `(row, col)` pairs sorted by row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if rows <= cols {
        solve(rows, cols, |i, j| cost[i][j])
    } else {
        let mut pairs: Vec<(usize, usize)> = solve(cols, rows, |i, j| cost[j][i]).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Shortest augmenting path variant, O(n²m) for n ≤ m.
fn solve(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based indexing; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| row_of[j] != 0).map(|j| (row_of[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    // Exhaustive oracle over all injective maps from the smaller side.
    fn brute(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        let k = rows.min(cols);
        let mut best = f64::INFINITY;
        let mut used_r = vec![false; rows];
        let mut used_c = vec![false; cols];
        fn rec(
            cost: &[Vec<f64>],
            depth: usize,
            k: usize,
            by_rows: bool,
            used_r: &mut [bool],
            used_c: &mut [bool],
            acc: f64,
            best: &mut f64,
        ) {
            if depth == k {
                *best = best.min(acc);
                return;
            }
            if by_rows {
                let i = depth;
                for j in 0..used_c.len() {
                    if !used_c[j] {
                        used_c[j] = true;
                        rec(cost, depth + 1, k, by_rows, used_r, used_c, acc + cost[i][j], best);
                        used_c[j] = false;
                    }
                }
            } else {
                let j = depth;
                for i in 0..used_r.len() {
                    if !used_r[i] {
                        used_r[i] = true;
                        rec(cost, depth + 1, k, by_rows, used_r, used_c, acc + cost[i][j], best);
                        used_r[i] = false;
                    }
                }
            }
        }
        rec(cost, 0, k, rows <= cols, &mut used_r, &mut used_c, 0.0, &mut best);
        best
    }

    #[test]
    fn classic_3x3() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let pairs = min_cost_assignment(&cost);
        assert_eq!(total(&cost, &pairs), 5.0);
        assert_eq!(pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn rectangular_and_empty() {
        assert!(min_cost_assignment(&[]).is_empty());
        assert!(min_cost_assignment(&[vec![], vec![]]).is_empty());
        let wide = vec![vec![5.0, 1.0, 9.0]];
        assert_eq!(min_cost_assignment(&wide), vec![(0, 1)]);
        let tall = vec![vec![5.0], vec![1.0], vec![9.0]];
        assert_eq!(min_cost_assignment(&tall), vec![(1, 0)]);
    }

    proptest! {
        #[test]
        fn matches_exhaustive(rows in 1usize..5, cols in 1usize..5, seed in proptest::collection::vec(0.0..1.0f64, 16)) {
            let cost: Vec<Vec<f64>> = (0..rows).map(|i| (0..cols).map(|j| seed[i * 4 + j]).collect()).collect();
            let pairs = min_cost_assignment(&cost);
            prop_assert_eq!(pairs.len(), rows.min(cols));
            let mut seen_c = std::collections::HashSet::new();
            for &(_, c) in &pairs { prop_assert!(seen_c.insert(c)); }
            prop_assert!((total(&cost, &pairs) - brute(&cost)).abs() < 1e-9);
        }
    }
}
