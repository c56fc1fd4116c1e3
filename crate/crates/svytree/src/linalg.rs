//! Rank-revealing weighted least squares.
//!
//! Columns are orthogonalized sequentially (modified Gram-Schmidt with one
//! re-orthogonalization pass); a column whose pivot falls below
//! `drop_tol` times the largest pivot seen is dropped. Columns are
//! processed in the given order, so among a collinear group the earliest
//! column is kept — indicator blocks keep their leading categories.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("SingularSystem: no usable columns remain after dropping")]
    SingularSystem,
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
}

/// Relative pivot threshold below which a column is treated as collinear.
pub const DEFAULT_DROP_TOL: f64 = 1e-10;

/// QR factorization of the weight-scaled design matrix, restricted to the
/// kept (independent) columns.
pub struct WlsFactor {
    /// Orthonormal columns of sqrt(w)-scaled kept predictors, n x rank.
    q: Vec<Vec<f64>>,
    /// Upper-triangular factor, rank x rank, row-major.
    r: Vec<Vec<f64>>,
    /// Original indices of kept columns.
    kept: Vec<usize>,
    /// Total number of original columns.
    p: usize,
    sqrt_w: Vec<f64>,
}

impl WlsFactor {
    /// Factor the design given as columns over the sample, with weights `w`.
    pub fn new(cols: &[Vec<f64>], w: &[f64], drop_tol: f64) -> Result<Self, LinalgError> {
        let n = w.len();
        if cols.iter().any(|c| c.len() != n) {
            return Err(LinalgError::DimensionMismatch(
                "column length != weight length".into(),
            ));
        }
        let sqrt_w: Vec<f64> = w.iter().map(|&x| x.sqrt()).collect();
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut r: Vec<Vec<f64>> = Vec::new();
        let mut kept = Vec::new();
        let mut max_pivot = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            let mut v: Vec<f64> = col.iter().zip(&sqrt_w).map(|(&x, &s)| x * s).collect();
            let mut rj = vec![0.0; q.len()];
            for pass in 0..2 {
                for (k, qk) in q.iter().enumerate() {
                    let dot: f64 = qk.iter().zip(&v).map(|(&a, &b)| a * b).sum();
                    for (vi, &qi) in v.iter_mut().zip(qk) {
                        *vi -= dot * qi;
                    }
                    if pass == 0 {
                        rj[k] = dot;
                    } else {
                        rj[k] += dot;
                    }
                }
            }
            let pivot = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
            let threshold = drop_tol * max_pivot.max(pivot);
            if pivot <= threshold || pivot == 0.0 {
                continue; // collinear with earlier kept columns
            }
            max_pivot = max_pivot.max(pivot);
            for x in &mut v {
                *x /= pivot;
            }
            for (row, &val) in r.iter_mut().zip(&rj) {
                row.push(val);
            }
            let mut new_row = vec![0.0; q.len()];
            new_row.push(pivot);
            r.push(new_row);
            q.push(v);
            kept.push(j);
        }
        if kept.is_empty() {
            return Err(LinalgError::SingularSystem);
        }
        Ok(Self {
            q,
            r,
            kept,
            p: cols.len(),
            sqrt_w,
        })
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// Least-squares coefficients for target `y`; dropped columns get 0.
    /// Returns (full-length coefficients, weighted RSS).
    pub fn solve_ls(&self, y: &[f64]) -> Result<(Vec<f64>, f64), LinalgError> {
        let n = self.sqrt_w.len();
        if y.len() != n {
            return Err(LinalgError::DimensionMismatch("y length".into()));
        }
        let b: Vec<f64> = y.iter().zip(&self.sqrt_w).map(|(&v, &s)| v * s).collect();
        let c: Vec<f64> = self
            .q
            .iter()
            .map(|qk| qk.iter().zip(&b).map(|(&a, &x)| a * x).sum())
            .collect();
        let z = self.back_substitute(&c);
        // Weighted RSS from the orthogonal complement.
        let mut rss = 0.0;
        for i in 0..n {
            let fit: f64 = self.q.iter().zip(&c).map(|(qk, &ck)| qk[i] * ck).sum();
            let e = b[i] - fit;
            rss += e * e;
        }
        let mut full = vec![0.0; self.p];
        for (slot, &j) in z.iter().zip(&self.kept) {
            full[j] = *slot;
        }
        Ok((full, rss.max(0.0)))
    }

    /// Solve (X' W X) g = v (full-length right-hand side); dropped columns
    /// get g = 0. Uses X'WX = R'R.
    pub fn solve_gram(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.p {
            return Err(LinalgError::DimensionMismatch("rhs length".into()));
        }
        let vk: Vec<f64> = self.kept.iter().map(|&j| v[j]).collect();
        // Forward solve R' u = vk, then back solve R g = u.
        let m = self.rank();
        let mut u = vec![0.0; m];
        for i in 0..m {
            let mut s = vk[i];
            for (k, uk) in u.iter().enumerate().take(i) {
                s -= self.r[k][i] * uk;
            }
            u[i] = s / self.r[i][i];
        }
        let g = self.back_substitute(&u);
        let mut full = vec![0.0; self.p];
        for (val, &j) in g.iter().zip(&self.kept) {
            full[j] = *val;
        }
        Ok(full)
    }

    fn back_substitute(&self, c: &[f64]) -> Vec<f64> {
        let m = self.rank();
        let mut z = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = c[i];
            for (k, zk) in z.iter().enumerate().take(m).skip(i + 1) {
                s -= self.r[i][k] * zk;
            }
            z[i] = s / self.r[i][i];
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_recovered() {
        // y = 2 + 3x with unequal weights fits exactly.
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ones = vec![1.0; 10];
        let y: Vec<f64> = x.iter().map(|&v| 2.0 + 3.0 * v).collect();
        let w: Vec<f64> = (0..10).map(|i| 1.0 + (i % 3) as f64).collect();
        let f = WlsFactor::new(&[ones, x], &w, DEFAULT_DROP_TOL).unwrap();
        let (coef, rss) = f.solve_ls(&y).unwrap();
        assert!((coef[0] - 2.0).abs() < 1e-10);
        assert!((coef[1] - 3.0).abs() < 1e-10);
        assert!(rss < 1e-18);
    }

    #[test]
    fn duplicate_column_dropped_keeping_first() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let ones = vec![1.0; 20];
        let y: Vec<f64> = x.iter().map(|&v| 1.0 + v).collect();
        let w = vec![1.0; 20];
        let with_dup = WlsFactor::new(&[ones.clone(), x.clone(), x.clone()], &w, DEFAULT_DROP_TOL)
            .unwrap();
        assert_eq!(with_dup.kept(), &[0, 1]);
        let without = WlsFactor::new(&[ones, x], &w, DEFAULT_DROP_TOL).unwrap();
        let (c1, _) = with_dup.solve_ls(&y).unwrap();
        let (c2, _) = without.solve_ls(&y).unwrap();
        assert!((c1[0] - c2[0]).abs() < 1e-10);
        assert!((c1[1] - c2[1]).abs() < 1e-10);
        assert_eq!(c1[2], 0.0);
    }

    #[test]
    fn gram_solve_matches_direct_inverse() {
        // 2x2 case solvable by hand.
        let cols = vec![vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0]];
        let w = vec![1.0, 2.0, 1.0];
        // X'WX = [[4, 4], [4, 6]]; inverse = 1/8 [[6, -4], [-4, 4]].
        let f = WlsFactor::new(&cols, &w, DEFAULT_DROP_TOL).unwrap();
        let g = f.solve_gram(&[1.0, 0.0]).unwrap();
        assert!((g[0] - 6.0 / 8.0).abs() < 1e-12);
        assert!((g[1] + 4.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_matrix_is_singular() {
        let cols = vec![vec![0.0; 4]];
        let w = vec![1.0; 4];
        assert!(matches!(
            WlsFactor::new(&cols, &w, DEFAULT_DROP_TOL),
            Err(LinalgError::SingularSystem)
        ));
    }
}
