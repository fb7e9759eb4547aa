use super::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Maximum number of Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 60;

/// Thin singular value decomposition `A = U·diag(S)·Vᵀ`.
///
/// For an m×n input with r = min(m, n): `U` is m×r, `S` has r entries sorted
/// nonincreasing, `V` is n×r. Both `U` and `V` have orthonormal columns, including
/// columns paired with zero singular values.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// Numerical rank: singular values above `rtol · σ_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > rtol * smax).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    if m < n {
        let t = jacobi(&a.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    jacobi(a)
}

/// Singular values only, nonincreasing.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    svd(a).map(|d| d.s)
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?[0])
}

// Requires m >= n.
fn jacobi(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    // Work on columns stored contiguously.
    let mut cols: Vec<Vec<f64>> = a.columns();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let fro = a.frobenius_norm();
    let abs_floor = (1e-14 * fro).powi(2);
    let rel_tol = 1e-15;

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= abs_floor || gamma.abs() <= rel_tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<(f64, usize)> = cols.iter().enumerate().map(|(j, c)| (norm(c), j)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let smax = order.first().map_or(0.0, |o| o.0);
    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        v.set_column(k, &vcols[j]);
        if sigma > 0.0 && sigma > 1e-300_f64.max(f64::EPSILON * 1e-3 * smax) {
            let uc: Vec<f64> = cols[j].iter().map(|x| x / sigma).collect();
            u.set_column(k, &uc);
        } else {
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Ok(Svd { u, s, v })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every other column.
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u.rows();
    let mut basis: Vec<Vec<f64>> = (0..u.cols())
        .filter(|j| !missing.contains(j))
        .map(|j| u.column(j))
        .collect();
    let mut candidate = 0;
    for &k in missing {
        loop {
            assert!(candidate < m, "ran out of completion candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&e, b);
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= c * y;
                    }
                }
            }
            let nrm = norm(&e);
            if nrm > 1e-8 {
                e.iter_mut().for_each(|x| *x /= nrm);
                u.set_column(k, &e);
                basis.push(e);
                break;
            }
        }
    }
}
