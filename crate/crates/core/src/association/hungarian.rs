//! Rectangular assignment by the Hungarian method with row/column
//! potentials (shortest augmenting paths), `O(n^2 m)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

/// Maximum-total-value assignment of `min(rows, cols)` pairs.
///
/// Returns, for every row, the column it was assigned to. When there are
/// more rows than columns some rows stay `None`.
pub fn max_weight_assignment(values: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = values.shape();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        min_cost_rows_le_cols(rows, cols, |i, j| -values[(i, j)])
    } else {
        let by_col = min_cost_rows_le_cols(cols, rows, |i, j| -values[(j, i)]);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    }
}

fn min_cost_rows_le_cols(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    debug_assert!(n <= m);
    // 1-based bookkeeping; index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut min_v = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        min_v.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
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

    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Hungarian association baseline: every detection and track is trusted, so
/// all `min(M, N)` pairs are matched for maximum total affinity. Pairs below
/// `gate` are dropped afterwards.
pub fn hungarian_baseline(x_aff: &DMatrix<f64>, gate: Option<f64>) -> Vec<(usize, usize)> {
    max_weight_assignment(x_aff)
        .into_iter()
        .enumerate()
        .filter_map(|(d, k)| k.map(|k| (d, k)))
        .filter(|&(d, k)| gate.is_none_or(|g| x_aff[(d, k)] >= g))
        .collect()
}
