//! Banded linear systems solved by Gaussian elimination with partial pivoting.
//!
//! Row `r` keeps a dense window of columns `[r - kl, r + kl + ku]`; the extra
//! `kl` columns hold fill-in produced by row interchanges.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedSystem {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
}

impl BandedSystem {
    /// Zero system of order `n` with lower/upper bandwidths `kl`, `ku`.
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            rhs: vec![0.0; n],
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let start = row as isize - self.kl as isize;
        let off = col as isize - start;
        if off < 0 || off as usize >= self.width {
            None
        } else {
            Some(row * self.width + off as usize)
        }
    }

    /// Adds `value` to entry `(row, col)`; the entry must lie inside the band.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        let within = col + self.kl >= row && col <= row + self.ku;
        assert!(within, "entry ({row}, {col}) outside band kl={} ku={}", self.kl, self.ku);
        let idx = self.slot(row, col).expect("band slot");
        self.data[idx] += value;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |i| self.data[i])
    }

    pub fn set_rhs(&mut self, row: usize, value: f64) {
        self.rhs[row] = value;
    }

    pub fn add_rhs(&mut self, row: usize, value: f64) {
        self.rhs[row] += value;
    }

    /// `A x` with the stored (unfactored) matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                let lo = r.saturating_sub(self.kl);
                let hi = (r + self.ku).min(self.n - 1);
                (lo..=hi).map(|c| self.get(r, c) * x[c]).sum()
            })
            .collect()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Factor in place and return the solution.
    pub fn solve(mut self) -> Result<Vec<f64>> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
        let reach = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut pivot = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best <= 1e-14 * scale {
                return Err(Error::Singular(format!("banded system pivot {best:.3e} at column {k}")));
            }
            let last_col = (k + reach).min(n - 1);
            if pivot != k {
                for c in k..=last_col {
                    let a = self.slot(k, c).expect("pivot row slot");
                    let b = self.slot(pivot, c).expect("candidate row slot");
                    self.data.swap(a, b);
                }
                self.rhs.swap(k, pivot);
            }
            let diag = self.get(k, k);
            let pivot_base = self.slot(k, k).expect("diag slot");
            for r in k + 1..=last_row {
                let idx = self.slot(r, k).expect("sub slot");
                let factor = self.data[idx] / diag;
                if factor == 0.0 {
                    continue;
                }
                self.data[idx] = 0.0;
                let row_base = self.slot(r, k).expect("sub slot");
                for off in 1..=(last_col - k) {
                    let v = self.data[pivot_base + off];
                    if v != 0.0 {
                        self.data[row_base + off] -= factor * v;
                    }
                }
                self.rhs[r] -= factor * self.rhs[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let last_col = (k + reach).min(n - 1);
            let base = self.slot(k, k).expect("diag slot");
            let mut acc = self.rhs[k];
            for off in 1..=(last_col - k) {
                acc -= self.data[base + off] * x[k + off];
            }
            x[k] = acc / self.data[base];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("banded solve produced non-finite values".into()));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Mat, Vector};
    use proptest::prelude::*;

    #[test]
    fn tridiagonal() {
        let n = 6;
        let mut sys = BandedSystem::new(n, 1, 1);
        for i in 0..n {
            sys.add(i, i, 2.0);
            if i > 0 {
                sys.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                sys.add(i, i + 1, -1.0);
            }
            sys.set_rhs(i, 1.0);
        }
        let x = sys.clone().solve().unwrap();
        let ax = sys.apply(&x);
        for v in ax {
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn needs_pivoting() {
        // Zero on the diagonal forces a row swap.
        let mut sys = BandedSystem::new(3, 1, 1);
        sys.add(0, 1, 1.0);
        sys.add(1, 0, 1.0);
        sys.add(1, 2, 1.0);
        sys.add(2, 1, 1.0);
        sys.add(2, 2, 1.0);
        sys.set_rhs(0, 2.0);
        sys.set_rhs(1, 4.0);
        sys.set_rhs(2, 5.0);
        let x = sys.solve().unwrap();
        // x1 = 2, x2 = 3, x0 = 1
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14 && (x[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_detected() {
        let sys = BandedSystem::new(3, 1, 1);
        assert!(sys.solve().is_err());
    }

    proptest! {
        #[test]
        fn matches_dense(n in 2usize..20, kl in 0usize..4, ku in 0usize..4,
                         vals in proptest::collection::vec(-1.0f64..1.0, 400)) {
            let mut sys = BandedSystem::new(n, kl, ku);
            let mut dense = Mat::zeros(n, n);
            for r in 0..n {
                for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                    let mut v = vals[(r * 20 + c) % 400];
                    if r == c { v += 0.3 * v.signum(); }
                    sys.add(r, c, v);
                    dense[(r, c)] = v;
                }
                sys.set_rhs(r, vals[(r * 7 + 3) % 400]);
            }
            let b = Vector::from_column_slice(sys.rhs());
            if let Some(expect) = dense.clone().lu().solve(&b) {
                let cond = dense.clone().svd(false, false).singular_values;
                let ratio = cond.max() / cond.min();
                prop_assume!(ratio < 1e8);
                let x = sys.solve().unwrap();
                for (a, e) in x.iter().zip(expect.iter()) {
                    prop_assert!((a - e).abs() <= 1e-8 * (1.0 + e.abs()));
                }
            }
        }
    }
}
