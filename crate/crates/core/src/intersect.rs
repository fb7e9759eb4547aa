//! Intersection estimation by coupled cross-projection, residual decomposition around the
//! estimate, and multi-branch residual sharing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::projector::UnionProjector;

/// `a·(aᵀb)/(aᵀa + eps)`: the component of `b` along `a`, with a guarded denominator.
pub fn cross_project(a: &[f64], b: &[f64], eps: f64) -> Vector {
    numerics::scale(a, numerics::dot(a, b) / (numerics::dot(a, a) + eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
}

fn default_eps() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    2000
}
fn default_gap_tol() -> f64 {
    1e-12
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { eps: default_eps(), max_iter: default_max_iter(), gap_tol: default_gap_tol() }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1e-6) {
            return Err(Error::InvalidConfig(format!("eps {} outside (0, 1e-6]", self.eps)));
        }
        if !(self.gap_tol >= 1e-12 && self.gap_tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("gap_tol {} below 1e-12", self.gap_tol)));
        }
        Ok(())
    }
}

/// Pair of branch iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchState {
    pub z_i: Vector,
    pub z_j: Vector,
    pub iter: usize,
}

/// One simultaneous update `z_i ← P_i(cross(z_j, z_i))`, `z_j ← P_j(cross(z_i, z_j))`.
pub fn refine_step(pi: &UnionProjector, pj: &UnionProjector, state: &BranchState, eps: f64) -> Result<BranchState> {
    let z_i = pi.project_onto(0, &cross_project(&state.z_j, &state.z_i, eps))?;
    let z_j = pj.project_onto(0, &cross_project(&state.z_i, &state.z_j, eps))?;
    Ok(BranchState { z_i, z_j, iter: state.iter + 1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub z_star: Vector,
    /// `‖z_i − z_j‖` for the initial state and after every update.
    pub gap_history: Vec<f64>,
    pub converged: bool,
    pub trace: Vec<BranchState>,
}

/// Iterates [`refine_step`] from `(P_i(s), P_j(s))` until the gap drops below `gap_tol` or
/// `max_iter` updates were made. A state already within tolerance is never updated, so
/// points on the intersection are returned unchanged.
pub fn coupled_refine(pi: &UnionProjector, pj: &UnionProjector, s: &[f64], cfg: &RefineConfig) -> Result<RefineResult> {
    cfg.validate()?;
    if pi.len() != 1 || pj.len() != 1 {
        return Err(Error::InvalidSpec("coupled refinement needs single-component projectors".into()));
    }
    if pi.ambient_dim() != pj.ambient_dim() {
        return Err(Error::DimensionMismatch(format!("branches in R^{} and R^{}", pi.ambient_dim(), pj.ambient_dim())));
    }
    let mut state = BranchState { z_i: pi.project_onto(0, s)?, z_j: pj.project_onto(0, s)?, iter: 0 };
    let mut gap = numerics::distance(&state.z_i, &state.z_j);
    let mut gap_history = vec![gap];
    let mut trace = vec![state.clone()];
    while gap >= cfg.gap_tol && state.iter < cfg.max_iter {
        state = refine_step(pi, pj, &state, cfg.eps)?;
        gap = numerics::distance(&state.z_i, &state.z_j);
        gap_history.push(gap);
        trace.push(state.clone());
    }
    let z_star = numerics::scale(&numerics::add(&state.z_i, &state.z_j), 0.5);
    Ok(RefineResult { z_star, gap_history, converged: gap < cfg.gap_tol, trace })
}

/// Norm below which `z*` carries no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub r_i: Vector,
    pub r_j: Vector,
    /// `z* + r_i + r_j`.
    pub s_hat: Vector,
    /// `‖s − ŝ‖`.
    pub recon_residual: f64,
    /// `z*` was too small to define a direction; residuals are the raw branch projections.
    pub degenerate: bool,
}

impl Decomposition {
    /// Turns the degenerate flag into an error.
    pub fn checked(self, z_star: &[f64]) -> Result<Self> {
        if self.degenerate {
            return Err(Error::DegenerateZStar(numerics::norm(z_star)));
        }
        Ok(self)
    }
}

/// `r_i = P_i(s) − ẑẑᵀP_i(s)` with `ẑ = z*/‖z*‖`, and likewise for `j`.
pub fn residual_decompose(s: &[f64], z_star: &[f64], pi: &UnionProjector, pj: &UnionProjector) -> Result<Decomposition> {
    if s.len() != z_star.len() {
        return Err(Error::DimensionMismatch(format!("sample of length {} with z* of length {}", s.len(), z_star.len())));
    }
    let bi = pi.project_onto(0, s)?;
    let bj = pj.project_onto(0, s)?;
    let zn = numerics::norm(z_star);
    let degenerate = zn < DEGENERATE_NORM;
    let (r_i, r_j) = if degenerate {
        (bi, bj)
    } else {
        let zh = numerics::scale(z_star, 1.0 / zn);
        let strip = |b: Vector| {
            let mut r = b;
            let c = numerics::dot(&zh, &r);
            numerics::axpy(&mut r, -c, &zh);
            r
        };
        (strip(bi), strip(bj))
    };
    let s_hat = numerics::add(&numerics::add(z_star, &r_i), &r_j);
    let recon_residual = numerics::distance(s, &s_hat);
    Ok(Decomposition { r_i, r_j, s_hat, recon_residual, degenerate })
}

/// Which branch a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    I,
    J,
}

/// `‖s − (z* + r_i + r_j)‖² + λ·‖r_wrong‖²` where the wrong residual is `r_j` for a sample of
/// branch `i` and `r_i` otherwise.
pub fn intersect_loss(s: &[f64], z_star: &[f64], r_i: &[f64], r_j: &[f64], label: Branch, lambda: f64) -> f64 {
    let e = recon_gap(s, z_star, r_i, r_j);
    let wrong = match label {
        Branch::I => r_j,
        Branch::J => r_i,
    };
    numerics::norm_sq(&e) + lambda * numerics::norm_sq(wrong)
}

fn recon_gap(s: &[f64], z: &[f64], ri: &[f64], rj: &[f64]) -> Vector {
    (0..s.len()).map(|k| s[k] - z[k] - ri[k] - rj[k]).collect()
}

/// Gradients of [`intersect_loss`] with respect to `(z*, r_i, r_j)`.
pub fn intersect_loss_grad(s: &[f64], z_star: &[f64], r_i: &[f64], r_j: &[f64], label: Branch, lambda: f64) -> (Vector, Vector, Vector) {
    let e = recon_gap(s, z_star, r_i, r_j);
    let dz = numerics::scale(&e, -2.0);
    let mut di = dz.clone();
    let mut dj = dz.clone();
    match label {
        Branch::I => numerics::axpy(&mut dj, 2.0 * lambda, r_j),
        Branch::J => numerics::axpy(&mut di, 2.0 * lambda, r_i),
    }
    (dz, di, dj)
}

/// `alphas[q][t] = r_qᵀr_t` and `shared[q] = Σ_t r_t·(r_tᵀr_q)/(r_tᵀr_t + eps)`, self term included.
/// Callers remove `shared[q]` from branch `q`.
pub fn multi_branch_step(residuals: &[Vector], eps: f64) -> Result<(Matrix, Vec<Vector>)> {
    let t = residuals.len();
    if t < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 residuals, got {t}")));
    }
    let n = residuals[0].len();
    if n == 0 || residuals.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("residuals have unequal lengths".into()));
    }
    let mut alphas = Matrix::zeros(t, t);
    for q in 0..t {
        for u in q..t {
            let a = numerics::dot(&residuals[q], &residuals[u]);
            alphas[(q, u)] = a;
            alphas[(u, q)] = a;
        }
    }
    let shared = (0..t)
        .map(|q| {
            let mut acc = vec![0.0; n];
            for u in 0..t {
                numerics::axpy(&mut acc, alphas[(u, q)] / (alphas[(u, u)] + eps), &residuals[u]);
            }
            acc
        })
        .collect();
    Ok((alphas, shared))
}
