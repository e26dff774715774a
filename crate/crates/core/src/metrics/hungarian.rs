use crate::error::{Error, Result};

/// Minimum-cost assignment for a rectangular cost matrix.
///
/// The matrix is padded with zero-cost dummy rows or columns to a square
/// and solved exactly with the O(n³) shortest-augmenting-path method using
/// row and column potentials. Returns, for each row, the column assigned to
/// it, or `None` when the row went to a dummy column.
///
/// ```
/// use flowtrack::metrics::hungarian;
///
/// let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
/// assert_eq!(hungarian(&cost).unwrap(), vec![Some(1), Some(0), Some(2)]);
/// ```
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::BadMatrix(format!(
                "row {i} has {} entries, row 0 has {cols}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadMatrix(format!("entry ({i}, {j}) is not finite")));
        }
    }
    if cols == 0 {
        return Ok(vec![None; rows]);
    }

    let n = rows.max(cols);
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            0.0
        }
    };
    // 1-based arrays; index 0 is the virtual root of each augmenting path
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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

    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = owner[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    Ok(out)
}

/// Assignment maximizing the summed `score`; pairs scoring at most zero are
/// dropped from the result. Returns `(row, col)` pairs in row order.
pub fn max_weight_pairs(score: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let cost: Vec<Vec<f64>> = score
        .iter()
        .map(|r| r.iter().map(|s| -s).collect())
        .collect();
    Ok(hungarian(&cost)?
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .filter(|&(i, j)| score[i][j] > 0.0)
        .collect())
}
