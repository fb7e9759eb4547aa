use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Relative threshold on the R diagonal below which a matrix counts as rank deficient.
pub const RANK_RTOL: f64 = 1e-12;

/// Householder factorization kept in compact form: reflectors plus the triangular factor.
struct Householder {
    m: usize,
    n: usize,
    /// `(start row, v, beta)`; the reflector is `I − beta·v·vᵀ` acting on rows `start..m`.
    reflectors: Vec<(usize, Vec<f64>, f64)>,
    r: Matrix,
}

impl Householder {
    fn factor(a: &Matrix) -> Householder {
        let (m, n) = a.shape();
        let mut r = a.clone();
        let mut reflectors = Vec::with_capacity(n.min(m));
        for k in 0..n.min(m.saturating_sub(1)) {
            let x: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
            let xnorm = dot(&x, &x).sqrt();
            if xnorm == 0.0 {
                continue;
            }
            let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
            let mut v = x;
            v[0] -= alpha;
            let vtv = dot(&v, &v);
            if vtv == 0.0 {
                continue;
            }
            let beta = 2.0 / vtv;
            for j in k..n {
                let s: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum::<f64>() * beta;
                for i in k..m {
                    r[(i, j)] -= s * v[i - k];
                }
            }
            // Below-diagonal entries are exact zeros by construction.
            for i in k + 1..m {
                r[(i, k)] = 0.0;
            }
            reflectors.push((k, v, beta));
        }
        Householder { m, n, reflectors, r }
    }

    /// Applies `Q = H_0 H_1 ⋯` to the columns of `x` (m × p).
    fn apply_q(&self, x: &mut Matrix) {
        for (k, v, beta) in self.reflectors.iter().rev() {
            for j in 0..x.cols() {
                let s: f64 = (*k..self.m).map(|i| v[i - k] * x[(i, j)]).sum::<f64>() * beta;
                for i in *k..self.m {
                    x[(i, j)] -= s * v[i - k];
                }
            }
        }
    }

    fn diag_range(&self) -> (f64, f64) {
        let d: Vec<f64> = (0..self.n.min(self.m)).map(|i| self.r[(i, i)].abs()).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        (min, max)
    }

    fn check_full_rank(&self) -> Result<()> {
        let (min, max) = self.diag_range();
        if self.n > self.m || max == 0.0 || min < RANK_RTOL * max {
            return Err(Error::RankDeficient { min_diag: min, max_diag: max });
        }
        Ok(())
    }
}

/// Thin QR of a full-column-rank matrix: `A = Q·R`, `QᵀQ = I`, R upper triangular with
/// a positive diagonal.
pub fn qr_orthonormal(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, n) = a.shape();
    let h = Householder::factor(a);
    h.check_full_rank()?;

    let mut q = Matrix::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    h.apply_q(&mut q);

    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r[(i, j)] = h.r[(i, j)];
        }
    }
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for j in i..n {
                r[(i, j)] = -r[(i, j)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    Ok((q, r))
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
pub fn orthonormalize(a: &Matrix) -> Result<Matrix> {
    qr_orthonormal(a).map(|(q, _)| q)
}

/// Rows spanning the orthogonal complement of `span(D)`: an (n−k)×n matrix `F` with
/// orthonormal rows and `F·D = 0`.
pub fn left_annihilator(d: &Matrix) -> Result<Matrix> {
    let (n, k) = d.shape();
    let h = Householder::factor(d);
    h.check_full_rank()?;
    if k >= n {
        return Err(Error::NoComplement(n));
    }
    let mut q = Matrix::identity(n);
    h.apply_q(&mut q);
    let mut f = Matrix::zeros(n - k, n);
    for (row, j) in (k..n).enumerate() {
        for i in 0..n {
            f[(row, i)] = q[(i, j)];
        }
    }
    Ok(f)
}

/// Ordinary least squares `argmin ‖A·x − b‖₂` for full-column-rank `A`.
pub fn least_squares(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for {} rows",
            b.len(),
            a.rows()
        )));
    }
    let (q, r) = qr_orthonormal(a)?;
    let qtb = q.tr_matvec(b)?;
    Ok(back_substitute(&r, &qtb))
}

/// Solves `R·x = y` for upper-triangular, nonsingular `R`.
pub(crate) fn back_substitute(r: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = r.cols();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_fixed_point() {
        let (q, r) = qr_orthonormal(&Matrix::identity(3)).unwrap();
        assert_eq!(q, Matrix::identity(3));
        assert_eq!(r, Matrix::identity(3));
    }

    #[test]
    fn hand_gram_schmidt_case() {
        let a = Matrix::from_columns(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let (q, r) = qr_orthonormal(&a).unwrap();
        let want_q = Matrix::identity(2);
        let want_r = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(q.sub(&want_q).unwrap().max_abs() < 1e-15);
        assert!(r.sub(&want_r).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let a = Matrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert!(matches!(qr_orthonormal(&a), Err(Error::RankDeficient { .. })));
        assert!(matches!(qr_orthonormal(&Matrix::zeros(3, 2)), Err(Error::RankDeficient { .. })));
        // more columns than rows cannot be full column rank
        assert!(qr_orthonormal(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn annihilator_of_e1() {
        let d = Matrix::column_vector(&[1.0, 0.0, 0.0]);
        let f = left_annihilator(&d).unwrap();
        assert_eq!(f.shape(), (2, 3));
        assert!(f.matmul(&d).unwrap().max_abs() < 1e-15);
        for i in 0..2 {
            assert!(f[(i, 0)].abs() < 1e-15);
        }
        assert!(f.transpose().orthonormality_defect() < 1e-14);
    }

    #[test]
    fn annihilator_needs_a_complement() {
        assert!(matches!(left_annihilator(&Matrix::identity(3)), Err(Error::NoComplement(3))));
    }

    #[test]
    fn least_squares_small_cases() {
        let x = least_squares(&Matrix::identity(2), &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        let x = least_squares(&Matrix::column_vector(&[1.0, 1.0]), &[0.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
    }
}
