//! Dense real linear algebra used throughout the crate.
//!
//! Everything here is a pure function on owned or borrowed values. Vectors are plain
//! `Vec<f64>` / `&[f64]`; matrices are row-major [`Matrix`] values.

mod matrix;
mod qr;
mod svd;

pub use matrix::Matrix;
pub use qr::{least_squares, left_annihilator, orthonormalize, qr_orthonormal, RANK_RTOL};
pub use svd::{singular_values, spectral_norm, svd, Svd, MAX_SWEEPS};

use crate::error::{Error, Result};

/// Dense real vector.
pub type Vector = Vec<f64>;

/// Default absolute tolerance of [`close`].
pub const ATOL: f64 = 1e-12;
/// Default relative tolerance of [`close`].
pub const RTOL: f64 = 1e-9;

/// Hybrid comparison `|x − y| ≤ atol + rtol·|y|` with the crate defaults.
pub fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= ATOL + RTOL * y.abs()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vector {
    a.iter().map(|x| x * s).collect()
}

/// `y += s·x`.
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Solves `A·X = B` for square nonsingular `A` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve with {:?} and rhs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let p = b.cols();
    let scale = a.max_abs();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
            .unwrap_or(k);
        if lu[(piv, k)].abs() <= RANK_RTOL * scale || scale == 0.0 {
            return Err(Error::RankDeficient { min_diag: lu[(piv, k)].abs(), max_diag: scale });
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..p {
                let t = x[(k, j)];
                x[(k, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        for i in k + 1..n {
            let f = lu[(i, k)] / lu[(k, k)];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            for j in 0..p {
                x[(i, j)] -= f * x[(k, j)];
            }
        }
    }
    for j in 0..p {
        for i in (0..n).rev() {
            let mut s = x[(i, j)];
            for c in i + 1..n {
                s -= lu[(i, c)] * x[(c, j)];
            }
            x[(i, j)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

/// Tolerance on `‖AᵀA − I‖_F` accepted as an orthonormal basis by [`principal_angles`].
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Principal angles between `span(A)` and `span(B)` for orthonormal bases `A`, `B`.
///
/// Returns `min(cols(A), cols(B))` angles in radians, nondecreasing, in `[0, π/2]`.
/// Their cosines are the singular values of `AᵀB`.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vector> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch(format!(
            "subspaces of R^{} and R^{}",
            a.rows(),
            b.rows()
        )));
    }
    for m in [a, b] {
        let defect = m.orthonormality_defect();
        if defect > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(defect));
        }
    }
    // Angles are symmetric in (A, B); keep B the narrower basis.
    let (a, b) = if a.cols() < b.cols() { (b, a) } else { (a, b) };
    let atb = a.tr_matmul(b)?;
    let cosines = singular_values(&atb)?;
    // Small angles lose accuracy through acos; take them from the sines of the residual
    // (I − AAᵀ)B instead.
    let residual = b.sub(&a.matmul(&atb)?)?;
    let mut sines = singular_values(&residual)?;
    sines.reverse();
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            if c * c >= 0.5 {
                s.clamp(0.0, 1.0).asin()
            } else {
                c.clamp(0.0, 1.0).acos()
            }
        })
        .collect())
}
