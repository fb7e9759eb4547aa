//! Orthogonal transforms (Cayley parametrized) trained to fold samples onto a fixed union.
//!
//! The learned isometry is `T(s) = R·s + b` with `R = (I − K/2)⁻¹(I + K/2)` for a skew
//! generator `K`. Folding applies `T⁻¹(s) = Rᵀ(s − b)` and measures the distance of the
//! result to the union.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::projector::{project_union, IsometryT, UnionProjector};

/// Skew generator plus optional learned offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct TransformParams {
    skew: Matrix,
    pub learn_offset: bool,
    offset: Vector,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    skew: Matrix,
    #[serde(default)]
    learn_offset: bool,
    #[serde(default)]
    offset: Option<Vector>,
}

impl TryFrom<TransformRepr> for TransformParams {
    type Error = Error;
    fn try_from(r: TransformRepr) -> Result<Self> {
        let n = r.skew.rows();
        TransformParams::new(r.skew, r.learn_offset, r.offset.unwrap_or_else(|| vec![0.0; n]))
    }
}

impl From<TransformParams> for TransformRepr {
    fn from(t: TransformParams) -> Self {
        TransformRepr { skew: t.skew, learn_offset: t.learn_offset, offset: Some(t.offset) }
    }
}

impl TransformParams {
    pub fn new(skew: Matrix, learn_offset: bool, offset: Vector) -> Result<Self> {
        let n = skew.rows();
        if !skew.is_square() || offset.len() != n {
            return Err(Error::DimensionMismatch(format!("skew {:?} with offset of length {}", skew.shape(), offset.len())));
        }
        let asym = skew.add(&skew.transpose())?.max_abs();
        if asym > 1e-12 {
            return Err(Error::InvalidSpec(format!("generator is not antisymmetric (|K + Kᵀ| = {asym:e})")));
        }
        Ok(TransformParams { skew, learn_offset, offset })
    }

    pub fn identity(n: usize) -> Self {
        TransformParams { skew: Matrix::zeros(n, n), learn_offset: false, offset: vec![0.0; n] }
    }

    /// Planar generator with `K[0][1] = −a`, i.e. a counter-clockwise rotation by `2·atan(a/2)`.
    pub fn planar(a: f64) -> Self {
        let mut t = Self::identity(2);
        t.skew[(0, 1)] = -a;
        t.skew[(1, 0)] = a;
        t
    }

    pub fn dim(&self) -> usize {
        self.skew.rows()
    }

    pub fn skew(&self) -> &Matrix {
        &self.skew
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Free parameters: strict upper triangle of `K` row by row, then the offset if learned.
    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.dim();
        let mut v: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| self.skew[(i, j)]).collect();
        if self.learn_offset {
            v.extend_from_slice(&self.offset);
        }
        v
    }

    pub fn with_flat(&self, flat: &[f64]) -> TransformParams {
        let n = self.dim();
        let mut t = self.clone();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                t.skew[(i, j)] = flat[k];
                t.skew[(j, i)] = -flat[k];
                k += 1;
            }
        }
        if self.learn_offset {
            t.offset.copy_from_slice(&flat[k..k + n]);
        }
        t
    }

    /// The inverse transform: negated generator, offset mapped so that `T⁻¹(s) = Rᵀ(s − b)`.
    pub fn inverse(&self) -> TransformParams {
        let r = cayley(&self.skew);
        let off = numerics::scale(&r.tr_matvec(&self.offset).expect("square"), -1.0);
        TransformParams { skew: self.skew.scale(-1.0), learn_offset: self.learn_offset, offset: off }
    }
}

fn cayley(k: &Matrix) -> Matrix {
    let n = k.rows();
    let half = k.scale(0.5);
    let a = Matrix::identity(n).sub(&half).expect("square");
    let b = Matrix::identity(n).add(&half).expect("square");
    // I − K/2 has eigenvalues 1 − iλ/2 for real λ: never singular.
    numerics::solve(&a, &b).expect("Cayley denominator is nonsingular for antisymmetric K")
}

/// `R = (I − K/2)⁻¹(I + K/2)` with the stored offset.
pub fn to_isometry(t: &TransformParams) -> IsometryT {
    IsometryT::new(cayley(&t.skew), t.offset.clone()).expect("Cayley transform of a skew matrix is orthogonal")
}

/// `T⁻¹(s) = Rᵀ(s − b)`.
pub fn unfold_point(t: &TransformParams, s: &[f64]) -> Result<Vector> {
    let r = cayley(&t.skew);
    r.tr_matvec(&numerics::sub(s, &t.offset))
}

/// Fold gap of one sample, with the tie flag of the projection it used.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldEval {
    pub loss: f64,
    pub component: usize,
    pub is_tie: bool,
}

pub fn fold_eval(t: &TransformParams, p: &UnionProjector, s: &[f64]) -> Result<FoldEval> {
    check_dims(t, p, s.len())?;
    let y = unfold_point(t, s)?;
    let pr = project_union(p, &y)?;
    Ok(FoldEval { loss: pr.distance * pr.distance, component: pr.component_index, is_tie: pr.is_tie })
}

/// `‖T⁻¹(s) − P(T⁻¹(s))‖²`.
pub fn fold_loss(t: &TransformParams, p: &UnionProjector, s: &[f64]) -> Result<f64> {
    Ok(fold_eval(t, p, s)?.loss)
}

/// `‖s − T(P(T⁻¹(s)))‖²`.
pub fn rep_loss(t: &TransformParams, p: &UnionProjector, s: &[f64]) -> Result<f64> {
    check_dims(t, p, s.len())?;
    let iso = to_isometry(t);
    let y = unfold_point(t, s)?;
    let back = iso.apply(&project_union(p, &y)?.point)?;
    Ok(numerics::norm_sq(&numerics::sub(s, &back)))
}

fn check_dims(t: &TransformParams, p: &UnionProjector, n: usize) -> Result<()> {
    if t.dim() != p.ambient_dim() || n != p.ambient_dim() {
        return Err(Error::DimensionMismatch(format!(
            "transform on R^{}, union in R^{}, sample of length {n}",
            t.dim(),
            p.ambient_dim()
        )));
    }
    Ok(())
}

/// Gradient of [`fold_loss`] in the layout of [`TransformParams::to_flat`], holding the
/// selected component fixed.
pub fn fold_grad(t: &TransformParams, p: &UnionProjector, s: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dims(t, p, s.len())?;
    let n = t.dim();
    let r = cayley(&t.skew);
    let u = numerics::sub(s, &t.offset);
    let y = r.tr_matvec(&u)?;
    let pr = project_union(p, &y)?;
    // J = ‖y − P_c(y)‖², dJ/dy = 2(y − P_c(y)) since the residual is orthogonal to the flat.
    let g = numerics::scale(&numerics::sub(&y, &pr.point), 2.0);
    let loss = pr.distance * pr.distance;

    // dJ/dR = u gᵀ; dJ/dK = ½ A⁻ᵀ (u gᵀ) (I + R)ᵀ with A = I − K/2.
    let a = Matrix::identity(n).sub(&t.skew.scale(0.5))?;
    let ug = Matrix::column_vector(&u).matmul(&Matrix::from_rows(&[g.clone()])?)?;
    let left = numerics::solve(&a.transpose(), &ug)?;
    let gk = left.matmul(&Matrix::identity(n).add(&r)?.transpose())?.scale(0.5);
    let mut flat = Vec::with_capacity(n * (n - 1) / 2 + n);
    for i in 0..n {
        for j in i + 1..n {
            flat.push(gk[(i, j)] - gk[(j, i)]);
        }
    }
    if t.learn_offset {
        flat.extend(numerics::scale(&r.matvec(&g)?, -1.0));
    }
    Ok((loss, flat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldConfig {
    pub step_size: f64,
    pub steps: usize,
    #[serde(default)]
    pub momentum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub params: TransformParams,
    /// Mean fold loss before each update.
    pub loss_history: Vec<f64>,
    /// Sample projections that landed on a tie during training.
    pub tie_count: usize,
}

/// Mean fold loss over a dataset.
pub fn mean_fold_loss(t: &TransformParams, p: &UnionProjector, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for s in &data.samples {
        total += fold_loss(t, p, s)?;
    }
    Ok(total / data.len() as f64)
}

/// Full-batch gradient descent on the mean fold loss.
pub fn train_fold(init: &TransformParams, p: &UnionProjector, data: &Dataset, cfg: &FoldConfig) -> Result<FoldReport> {
    if !(0.0..=1.0).contains(&cfg.step_size) {
        return Err(Error::InvalidConfig(format!("step_size {} outside [0, 1]", cfg.step_size)));
    }
    let mut t = init.clone();
    let mut history = Vec::with_capacity(cfg.steps);
    let mut ties = 0;
    let mut velocity = vec![0.0; t.to_flat().len()];
    let m = data.len() as f64;
    for step in 0..cfg.steps {
        let mut total = 0.0;
        let mut grad = vec![0.0; velocity.len()];
        for s in &data.samples {
            if fold_eval(&t, p, s)?.is_tie {
                ties += 1;
            }
            let (l, g) = fold_grad(&t, p, s)?;
            total += l;
            numerics::axpy(&mut grad, 1.0 / m, &g);
        }
        let loss = total / m;
        if !loss.is_finite() || loss > crate::autoenc::DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss });
        }
        history.push(loss);
        let mut flat = t.to_flat();
        for ((x, v), g) in flat.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = if cfg.momentum { 0.9 * *v + g } else { *g };
            *x -= cfg.step_size * *v;
        }
        t = t.with_flat(&flat);
    }
    Ok(FoldReport { params: t, loss_history: history, tie_count: ties })
}

/// Applies `T⁻¹` to every sample, keeping labels.
pub fn translate(t: &TransformParams, samples: &Dataset) -> Result<Dataset> {
    let out = samples.samples.iter().map(|s| unfold_point(t, s)).collect::<Result<Vec<_>>>()?;
    Dataset::new(out, samples.labels.clone())
}

/// Fits a fresh rotation to the single sample `s`; returns the folded sample and its
/// distance to the union.
pub fn align_explain(s: &[f64], p: &UnionProjector, cfg: &FoldConfig) -> Result<(Vector, f64)> {
    let data = Dataset::unlabeled(vec![s.to_vec()])?;
    let rep = train_fold(&TransformParams::identity(s.len()), p, &data, cfg)?;
    let aligned = unfold_point(&rep.params, s)?;
    let gap = project_union(p, &aligned)?.distance;
    Ok((aligned, gap))
}

/// Counter-clockwise angle of a planar rotation matrix.
pub fn planar_angle(r: &Matrix) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_error, FD_STEP};
    use crate::projector::DEFAULT_TIE_TOL;
    use crate::rng;

    fn line(v: &[f64]) -> Matrix {
        numerics::orthonormalize(&Matrix::column_vector(v)).unwrap()
    }

    fn x_axis() -> UnionProjector {
        UnionProjector::new(vec![line(&[1.0, 0.0])], DEFAULT_TIE_TOL).unwrap()
    }

    #[test]
    fn cayley_examples() {
        assert_eq!(*to_isometry(&TransformParams::identity(3)).rotation(), Matrix::identity(3));
        let a = 0.8;
        let r = to_isometry(&TransformParams::planar(a));
        assert!((planar_angle(r.rotation()) - 2.0 * (a / 2.0).atan()).abs() < 1e-14);
        let mut g = rng::stream(3, 0, 0, rng::tag::USER);
        let t = TransformParams::identity(5).with_flat(&rng::gaussian_vec(&mut g, 10));
        let r = to_isometry(&t);
        assert!(r.rotation().orthonormality_defect() < 1e-10);
        let inv = to_isometry(&TransformParams::new(t.skew().scale(-1.0), false, vec![0.0; 5]).unwrap());
        assert!(r.rotation().matmul(inv.rotation()).unwrap().sub(&Matrix::identity(5)).unwrap().max_abs() < 1e-12);
        assert!(TransformParams::new(Matrix::identity(2), false, vec![0.0; 2]).is_err());
    }

    #[test]
    fn fold_examples() {
        let p = x_axis();
        assert_eq!(fold_loss(&TransformParams::identity(2), &p, &[3.0, 0.0]).unwrap(), 0.0);
        // a = 2·tan(π/4) = 2 gives a quarter turn.
        let quarter = TransformParams::planar(2.0);
        assert!(fold_loss(&quarter, &p, &[0.0, 1.0]).unwrap() < 1e-30);
        assert!((fold_loss(&TransformParams::identity(2), &p, &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rep_loss_equals_fold_loss() {
        let p = UnionProjector::new(vec![line(&[1.0, 2.0, 0.0]), line(&[0.0, 1.0, -1.0])], DEFAULT_TIE_TOL).unwrap();
        let mut g = rng::stream(4, 0, 0, rng::tag::USER);
        for _ in 0..50 {
            let mut t = TransformParams::identity(3).with_flat(&rng::gaussian_vec(&mut g, 3));
            t.offset = rng::gaussian_vec(&mut g, 3);
            let s = rng::gaussian_vec(&mut g, 3);
            let f = fold_loss(&t, &p, &s).unwrap();
            let r = rep_loss(&t, &p, &s).unwrap();
            assert!((f - r).abs() <= 1e-10 * f.max(1.0));
        }
        let on = to_isometry(&TransformParams::planar(0.3)).apply(&[2.0, 0.0]).unwrap();
        assert!(rep_loss(&TransformParams::planar(0.3), &x_axis(), &on).unwrap() < 1e-28);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = UnionProjector::new(vec![line(&[1.0, 0.5, 0.0]), line(&[0.0, 1.0, 1.0])], DEFAULT_TIE_TOL).unwrap();
        let mut g = rng::stream(5, 0, 0, rng::tag::USER);
        for learn_offset in [false, true] {
            for _ in 0..10 {
                let mut t = TransformParams::identity(3);
                t.learn_offset = learn_offset;
                let t = t.with_flat(&numerics::scale(&rng::gaussian_vec(&mut g, 3 + 3 * learn_offset as usize), 0.7));
                let s = rng::gaussian_vec(&mut g, 3);
                let (_, an) = fold_grad(&t, &p, &s).unwrap();
                let fd = central_diff(|x| fold_loss(&t.with_flat(x), &p, &s).unwrap(), &t.to_flat(), FD_STEP);
                assert!(max_rel_error(&an, &fd) < 1e-5);
            }
        }
    }

    #[test]
    fn training_fixed_point_and_translate() {
        let p = x_axis();
        let data = Dataset::unlabeled(vec![vec![1.0, 0.0], vec![-2.0, 0.0]]).unwrap();
        let (_, g) = fold_grad(&TransformParams::identity(2), &p, &data.samples[0]).unwrap();
        assert_eq!(g, vec![0.0]);
        let rep = train_fold(&TransformParams::identity(2), &p, &data, &FoldConfig { step_size: 0.1, steps: 5, momentum: false }).unwrap();
        assert_eq!(rep.params, TransformParams::identity(2));
        assert_eq!(translate(&TransformParams::identity(2), &data).unwrap(), data);
        let mut t = TransformParams::planar(0.4);
        t.offset = vec![0.3, -1.0];
        let there = translate(&t, &data).unwrap();
        let back = translate(&t.inverse(), &there).unwrap();
        for (a, b) in back.samples.iter().zip(&data.samples) {
            assert!(numerics::distance(a, b) < 1e-10);
        }
    }

    #[test]
    fn align_single_sample() {
        let p = x_axis();
        let cfg = FoldConfig { step_size: 0.2, steps: 400, momentum: false };
        let (a, gap) = align_explain(&[2.0, 0.0], &p, &cfg).unwrap();
        assert_eq!((a, gap), (vec![2.0, 0.0], 0.0));
        let rotated = to_isometry(&TransformParams::planar(0.5)).apply(&[1.5, 0.0]).unwrap();
        let (_, gap) = align_explain(&rotated, &p, &cfg).unwrap();
        assert!(gap <= 1e-6, "{gap}");
    }

    #[test]
    fn json_round_trip() {
        let t = TransformParams::planar(0.25);
        let js = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<TransformParams>(&js).unwrap(), t);
    }
}
