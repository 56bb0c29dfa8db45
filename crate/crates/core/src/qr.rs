//! Column-pivoted Householder least squares on small dense column-major blocks.
//!
//! Pivoting can be restricted to a leading group of columns (`split`): the
//! first `split` columns are pivoted among themselves and triangularized
//! before any later column is considered. Nuisance columns go first so that
//! the leading entries of `Q'b` carry exactly the nuisance-only fit.

/// Rank deficiency detected at elimination step `rank`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deficient {
    pub rank: usize,
}

/// A factored block `A P = Q R` together with `Q'b`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    rows: usize,
    cols: usize,
    /// Column-major; `R` occupies the upper triangle of the leading `cols` rows.
    a: Vec<f64>,
    /// `perm[k]` is the original column now in position `k`.
    perm: Vec<usize>,
    qtb: Vec<f64>,
}

impl PivotedQr {
    /// Factor `a` (column-major, `rows x cols`) and apply the reflectors to `b`.
    ///
    /// A pivot whose trailing norm is below `tol` (or running out of rows)
    /// reports the rank reached so far.
    pub fn factor(mut a: Vec<f64>, rows: usize, cols: usize, mut b: Vec<f64>, split: usize, tol: f64) -> Result<Self, Deficient> {
        debug_assert_eq!(a.len(), rows * cols);
        debug_assert_eq!(b.len(), rows);
        let mut perm: Vec<usize> = (0..cols).collect();
        let mut norms = vec![0.0; cols];
        for k in 0..cols {
            if k >= rows {
                return Err(Deficient { rank: k });
            }
            let group_end = if k < split { split } else { cols };
            for j in k..group_end {
                let col = &a[j * rows + k..(j + 1) * rows];
                norms[j] = col.iter().map(|v| v * v).sum::<f64>();
            }
            let mut best = k;
            for j in k + 1..group_end {
                if norms[j] > norms[best] {
                    best = j;
                }
            }
            if best != k {
                for i in 0..rows {
                    a.swap(k * rows + i, best * rows + i);
                }
                perm.swap(k, best);
            }
            let norm = norms[best].sqrt();
            if !(norm > tol) {
                return Err(Deficient { rank: k });
            }
            // Householder vector stored in place below the diagonal.
            let akk = a[k * rows + k];
            let alpha = if akk >= 0.0 { -norm } else { norm };
            let v0 = akk - alpha;
            a[k * rows + k] = v0;
            let vnorm2 = v0 * v0 + a[k * rows + k + 1..(k + 1) * rows].iter().map(|v| v * v).sum::<f64>();
            if vnorm2 > 0.0 {
                let scale = 2.0 / vnorm2;
                for j in k + 1..cols {
                    let mut dot = 0.0;
                    for i in k..rows {
                        dot += a[k * rows + i] * a[j * rows + i];
                    }
                    let f = dot * scale;
                    for i in k..rows {
                        a[j * rows + i] -= f * a[k * rows + i];
                    }
                }
                let mut dot = 0.0;
                for i in k..rows {
                    dot += a[k * rows + i] * b[i];
                }
                let f = dot * scale;
                for i in k..rows {
                    b[i] -= f * a[k * rows + i];
                }
            }
            a[k * rows + k] = alpha;
            for i in k + 1..rows {
                a[k * rows + i] = 0.0;
            }
        }
        Ok(Self { rows, cols, a, perm, qtb: b })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `Q'b`; entries past `cols` hold the residual.
    pub fn qtb(&self) -> &[f64] {
        &self.qtb
    }

    /// Residual sum of squares `||b - A x||^2`.
    pub fn rss(&self) -> f64 {
        self.qtb[self.cols..].iter().map(|v| v * v).sum()
    }

    /// Squared length of the component of `b` explained by factored columns `range`.
    pub fn explained(&self, range: std::ops::Range<usize>) -> f64 {
        self.qtb[range].iter().map(|v| v * v).sum()
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.rows + i]
    }

    /// Least-squares coefficients in the original column order.
    pub fn coefficients(&self) -> Vec<f64> {
        let p = self.cols;
        let mut z = self.qtb[..p].to_vec();
        for k in (0..p).rev() {
            let mut s = z[k];
            for j in k + 1..p {
                s -= self.r(k, j) * z[j];
            }
            z[k] = s / self.r(k, k);
        }
        let mut out = vec![0.0; p];
        for (k, &orig) in self.perm.iter().enumerate() {
            out[orig] = z[k];
        }
        out
    }

    /// `(A'A)^{-1}` in the original column order, row-major `cols x cols`.
    pub fn inverse_gram(&self) -> Vec<f64> {
        let p = self.cols;
        // Rinv upper triangular, column-major.
        let mut rinv = vec![0.0; p * p];
        for j in 0..p {
            rinv[j * p + j] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in i + 1..=j {
                    s += self.r(i, k) * rinv[j * p + k];
                }
                rinv[j * p + i] = -s / self.r(i, i);
            }
        }
        let mut out = vec![0.0; p * p];
        for a in 0..p {
            for b in a..p {
                // (Rinv Rinv')[a,b] = sum_k Rinv[a,k] Rinv[b,k], k >= max(a,b)
                let mut s = 0.0;
                for k in b..p {
                    s += rinv[k * p + a] * rinv[k * p + b];
                }
                let (oa, ob) = (self.perm[a], self.perm[b]);
                out[oa * p + ob] = s;
                out[ob * p + oa] = s;
            }
        }
        out
    }

    /// Diagonal of `(A'A)^{-1}` in the original column order.
    pub fn inverse_gram_diag(&self) -> Vec<f64> {
        let g = self.inverse_gram();
        (0..self.cols).map(|j| g[j * self.cols + j]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn sample() -> (DMatrix<f64>, DVector<f64>) {
        let a = DMatrix::from_row_slice(
            6,
            3,
            &[1.0, 0.5, 2.0, 1.0, -1.0, 0.3, 1.0, 2.0, -0.7, 1.0, 0.1, 1.1, 1.0, 3.0, 0.0, 1.0, -2.0, 0.4],
        );
        let b = DVector::from_row_slice(&[1.0, 2.0, 0.5, -1.0, 3.0, 0.2]);
        (a, b)
    }

    #[test]
    fn matches_normal_equations() {
        let (a, b) = sample();
        let qr = PivotedQr::factor(a.as_slice().to_vec(), 6, 3, b.as_slice().to_vec(), 0, 1e-12).unwrap();
        let gram = a.transpose() * &a;
        let inv = gram.clone().try_inverse().unwrap();
        let beta = &inv * a.transpose() * &b;
        let coef = qr.coefficients();
        for j in 0..3 {
            assert!((coef[j] - beta[j]).abs() < 1e-12);
        }
        let resid = &b - &a * &beta;
        assert!((qr.rss() - resid.norm_squared()).abs() < 1e-12);
        let g = qr.inverse_gram();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[i * 3 + j] - inv[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_keeps_leading_group_first() {
        let (a, b) = sample();
        let qr = PivotedQr::factor(a.as_slice().to_vec(), 6, 3, b.as_slice().to_vec(), 1, 1e-12).unwrap();
        // First pivot is forced to column 0, so qtb[0]^2 is the fit on column 0 alone.
        let c0 = a.column(0);
        let proj = c0.dot(&b).powi(2) / c0.norm_squared();
        assert!((qr.explained(0..1) - proj).abs() < 1e-12);
    }

    #[test]
    fn detects_collinearity() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 3.0, 2.0, 1.0, 3.0, 0.5, 0.5, 1.0, 1.0, 0.0, 1.0]);
        let b = vec![1.0, 0.0, 1.0, 2.0];
        let err = PivotedQr::factor(a.as_slice().to_vec(), 4, 3, b, 0, 1e-10 * 4.0).unwrap_err();
        assert_eq!(err.rank, 2);
    }

    #[test]
    fn too_few_rows_is_deficient() {
        let err = PivotedQr::factor(vec![1.0, 2.0, 3.0, 4.0], 1, 4, vec![1.0], 0, 1e-12).unwrap_err();
        assert_eq!(err.rank, 1);
    }
}
