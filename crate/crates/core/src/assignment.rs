//! Minimum-cost linear assignment (Hungarian method, shortest augmenting paths
//! with potentials).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn entries(&self) -> &[T] {
        &self.data
    }
}

/// Total cost of a set of `(row, col)` pairs, summed in the given order.
pub fn assignment_cost<T: Scalar>(m: &Matrix<T>, pairs: &[(usize, usize)]) -> T {
    pairs.iter().fold(T::zero(), |acc, &(r, c)| acc + m.get(r, c))
}

/// Optimal assignment on an `n x n` cost function; returns `col_of_row` and the total.
fn hungarian_square<T: Scalar>(n: usize, cost: impl Fn(usize, usize) -> T) -> (Vec<usize>, T) {
    if n == 0 {
        return (Vec::new(), T::zero());
    }
    let inf = T::infinity();
    // 1-based potentials; index 0 is the virtual source column.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
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
            if j1 == 0 {
                // every remaining reduced cost is infinite; cannot happen for finite input
                break;
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] = u[row_of_col[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![usize::MAX; n];
    for j in 1..=n {
        if row_of_col[j] > 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    let total = (0..n).fold(T::zero(), |acc, r| acc + cost(r, col_of_row[r]));
    (col_of_row, total)
}

/// Minimum-cost maximum matching of `min(rows, cols)` pairs.
///
/// Rectangular input is padded to square with a dummy cost strictly above every
/// real entry; padded pairs are dropped. Among optimal assignments the
/// lexicographically smallest (by row, then column) is returned, so output is
/// sorted by row.
pub fn solve_assignment<T: Scalar>(m: &Matrix<T>) -> Result<Vec<(usize, usize)>> {
    if m.entries().iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("assignment cost matrix has non-finite entries"));
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let n = m.rows().max(m.cols());
    let max = m.entries().iter().copied().fold(T::neg_infinity(), T::max);
    let min = m.entries().iter().copied().fold(T::infinity(), T::min);
    let pad = max + (max - min).abs() + T::one();
    let padded = |r: usize, c: usize| {
        if r < m.rows() && c < m.cols() {
            m.get(r, c)
        } else {
            pad
        }
    };

    let (mut col_of_row, best) = hungarian_square(n, padded);

    // Lexicographic refinement: fix rows in order to the smallest column that
    // still admits an optimal completion.
    let tol = T::epsilon() * T::lit(64.0) * T::from_usize(n).unwrap_or_else(T::one) * (T::one() + best.abs() + pad.abs());
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    for r in 0..n {
        let mut chosen = col_of_row[r];
        for c in 0..n {
            if c == col_of_row[r] {
                chosen = c;
                break;
            }
            if fixed.contains(&c) {
                continue;
            }
            let mut trial = fixed.clone();
            trial.push(c);
            let (assign, total) = complete(n, &trial, &padded);
            if total <= best + tol {
                chosen = c;
                col_of_row = assign;
                break;
            }
        }
        fixed.push(chosen);
    }

    Ok((0..m.rows())
        .filter_map(|r| {
            let c = col_of_row[r];
            (c < m.cols()).then_some((r, c))
        })
        .collect())
}

/// Best assignment with rows `0..prefix.len()` pinned to `prefix`.
fn complete<T: Scalar>(n: usize, prefix: &[usize], cost: &impl Fn(usize, usize) -> T) -> (Vec<usize>, T) {
    let k = prefix.len();
    let free_cols: Vec<usize> = (0..n).filter(|c| !prefix.contains(c)).collect();
    let (sub, _) = hungarian_square(n - k, |r, c| cost(r + k, free_cols[c]));
    let mut assign = prefix.to_vec();
    assign.extend(sub.iter().map(|&c| free_cols[c]));
    let total = (0..n).fold(T::zero(), |acc, r| acc + cost(r, assign[r]));
    (assign, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over all injective row->column maps.
    fn brute_force(m: &Matrix<f64>) -> f64 {
        fn rec(m: &Matrix<f64>, r: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let rows = m.rows().min(m.cols());
            if r == rows {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for c in 0..m.cols() {
                if !used[c] {
                    used[c] = true;
                    rec(m, r + 1, used, acc + m.get(r, c), best);
                    used[c] = false;
                }
            }
        }
        if m.is_empty() {
            return 0.0;
        }
        let t = if m.rows() > m.cols() {
            Matrix::from_fn(m.cols(), m.rows(), |r, c| m.get(c, r))
        } else {
            m.clone()
        };
        let mut best = f64::INFINITY;
        rec(&t, 0, &mut vec![false; t.cols()], 0.0, &mut best);
        best
    }

    #[test]
    fn two_by_two_example() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let pairs = solve_assignment(&m).unwrap();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(assignment_cost(&m, &pairs), 4.0);
    }

    #[test]
    fn zero_diagonal_is_chosen() {
        let m = Matrix::from_fn(5, 5, |r, c| if r == c { 0.0 } else { 1.0 + (r * 5 + c) as f64 });
        let pairs = solve_assignment(&m).unwrap();
        assert_eq!(pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let m = Matrix::from_fn(3, 3, |_, _| 1.0);
        assert_eq!(solve_assignment(&m).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        let m = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(solve_assignment(&m).unwrap(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_inputs() {
        let wide = Matrix::from_rows(&[vec![5.0, 1.0, 9.0]]).unwrap();
        assert_eq!(solve_assignment(&wide).unwrap(), vec![(0, 1)]);
        let tall = Matrix::from_rows(&[vec![5.0], vec![1.0], vec![9.0]]).unwrap();
        assert_eq!(solve_assignment(&tall).unwrap(), vec![(1, 0)]);
        let empty = Matrix::<f64>::new(0, 3, vec![]).unwrap();
        assert!(solve_assignment(&empty).unwrap().is_empty());
    }

    #[test]
    fn non_finite_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        assert!(solve_assignment(&m).is_err());
        let m = Matrix::from_rows(&[vec![1.0, f64::INFINITY]]).unwrap();
        assert!(solve_assignment(&m).is_err());
    }

    #[test]
    fn random_six_by_six_matches_permutations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let m = Matrix::from_fn(6, 6, |_, _| rng.random_range(0.0..10.0));
            let pairs = solve_assignment(&m).unwrap();
            assert_eq!(assignment_cost(&m, &pairs), brute_force(&m));
        }
    }

    #[test]
    fn works_in_f32() {
        let m = Matrix::from_rows(&[vec![4.0_f32, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).unwrap();
        let pairs = solve_assignment(&m).unwrap();
        assert_eq!(assignment_cost(&m, &pairs), 5.0);
    }

    proptest! {
        #[test]
        fn optimal_on_random_rectangles(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..3.0_f64).round());
            let pairs = solve_assignment(&m).unwrap();
            prop_assert_eq!(pairs.len(), rows.min(cols));
            let mut seen = vec![false; cols];
            for &(_, c) in &pairs {
                prop_assert!(!seen[c]);
                seen[c] = true;
            }
            prop_assert_eq!(assignment_cost(&m, &pairs), brute_force(&m));
        }
    }
}
