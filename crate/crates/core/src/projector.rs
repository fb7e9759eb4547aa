//! Nearest-point projection onto a finite union of flats, with tie reporting, isometry
//! conjugation, orbit construction and the local residual decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

/// Default tolerance under which two component distances count as equal.
pub const DEFAULT_TIE_TOL: f64 = 1e-8;
/// Components whose bases deviate from orthonormal by more than this are rejected.
pub const BASIS_TOL: f64 = 1e-10;
/// Components closer than this (max principal angle, radians) merge in [`orbit`].
pub const DEDUP_ANGLE: f64 = 1e-6;

/// Orthogonal projection onto `span(basis)`.
pub fn project_component(basis: &Matrix, s: &[f64]) -> Result<Vector> {
    basis.matvec(&basis.tr_matvec(s)?)
}

/// Projector onto `⋃ᵢ (oᵢ + span(Bᵢ))`.
///
/// Origins are zero unless the projector came from conjugating by an offset isometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProjectorRepr", into = "ProjectorRepr")]
pub struct UnionProjector {
    components: Vec<Matrix>,
    origins: Vec<Vector>,
    tie_tol: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectorRepr {
    ambient_dim: usize,
    components: Vec<Matrix>,
    #[serde(default = "default_tie_tol")]
    tie_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origins: Option<Vec<Vector>>,
}

fn default_tie_tol() -> f64 {
    DEFAULT_TIE_TOL
}

impl TryFrom<ProjectorRepr> for UnionProjector {
    type Error = Error;
    fn try_from(r: ProjectorRepr) -> Result<Self> {
        let origins = r.origins.unwrap_or_else(|| vec![vec![0.0; r.ambient_dim]; r.components.len()]);
        let p = UnionProjector::with_origins(r.components, origins, r.tie_tol)?;
        if p.ambient_dim() != r.ambient_dim {
            return Err(Error::DimensionMismatch(format!(
                "declared ambient_dim {} but bases live in R^{}",
                r.ambient_dim,
                p.ambient_dim()
            )));
        }
        Ok(p)
    }
}

impl From<UnionProjector> for ProjectorRepr {
    fn from(p: UnionProjector) -> Self {
        let linear = p.is_linear();
        ProjectorRepr {
            ambient_dim: p.ambient_dim(),
            components: p.components,
            tie_tol: p.tie_tol,
            origins: (!linear).then_some(p.origins),
        }
    }
}

/// Outcome of [`project_union`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub point: Vector,
    pub component_index: usize,
    pub distance: f64,
    /// Another component is within `tie_tol` of the best distance: the input is outside the
    /// domain of the projection and `point` is only one of several nearest points.
    pub is_tie: bool,
}

impl UnionProjector {
    /// Linear subspaces through the origin. Bases must already be orthonormal.
    pub fn new(components: Vec<Matrix>, tie_tol: f64) -> Result<Self> {
        let n = components.first().map_or(0, Matrix::rows);
        let origins = vec![vec![0.0; n]; components.len()];
        Self::with_origins(components, origins, tie_tol)
    }

    pub fn with_origins(components: Vec<Matrix>, origins: Vec<Vector>, tie_tol: f64) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidSpec("a union needs at least one component".into()));
        };
        if !(tie_tol > 0.0 && tie_tol.is_finite()) {
            return Err(Error::InvalidSpec(format!("tie_tol {tie_tol} must be positive")));
        }
        let n = first.rows();
        if origins.len() != components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} origins for {} components",
                origins.len(),
                components.len()
            )));
        }
        for (b, o) in components.iter().zip(&origins) {
            if b.rows() != n || o.len() != n {
                return Err(Error::DimensionMismatch(format!("component in R^{} inside a union in R^{n}", b.rows())));
            }
            let defect = b.orthonormality_defect();
            if defect > BASIS_TOL {
                return Err(Error::NotOrthonormal(defect));
            }
        }
        Ok(UnionProjector { components, origins, tie_tol })
    }

    /// Orthonormalizes arbitrary full-rank spanning sets first.
    pub fn from_spans(spans: &[Matrix], tie_tol: f64) -> Result<Self> {
        let bases = spans.iter().map(numerics::orthonormalize).collect::<Result<Vec<_>>>()?;
        Self::new(bases, tie_tol)
    }

    pub fn ambient_dim(&self) -> usize {
        self.components[0].rows()
    }

    pub fn components(&self) -> &[Matrix] {
        &self.components
    }

    pub fn origins(&self) -> &[Vector] {
        &self.origins
    }

    pub fn tie_tol(&self) -> f64 {
        self.tie_tol
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// All components pass through the origin.
    pub fn is_linear(&self) -> bool {
        self.origins.iter().flatten().all(|&x| x == 0.0)
    }

    /// Projection onto component `i` alone.
    pub fn project_onto(&self, i: usize, s: &[f64]) -> Result<Vector> {
        let o = &self.origins[i];
        if s.len() != o.len() {
            return Err(Error::DimensionMismatch(format!("sample in R^{} for a union in R^{}", s.len(), o.len())));
        }
        let local = numerics::sub(s, o);
        Ok(numerics::add(o, &project_component(&self.components[i], &local)?))
    }

    /// Single-component projector for component `i`.
    pub fn component(&self, i: usize) -> UnionProjector {
        UnionProjector {
            components: vec![self.components[i].clone()],
            origins: vec![self.origins[i].clone()],
            tie_tol: self.tie_tol,
        }
    }
}

/// Nearest component; ties resolved toward the lowest index and flagged.
pub fn project_union(p: &UnionProjector, s: &[f64]) -> Result<ProjectionResult> {
    let candidates = (0..p.len())
        .map(|i| {
            let pt = p.project_onto(i, s)?;
            let d = numerics::distance(s, &pt);
            Ok((pt, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].1 - best <= p.tie_tol).collect();
    let idx = tied[0];
    let (point, distance) = candidates.into_iter().nth(idx).expect("index in range");
    Ok(ProjectionResult { point, component_index: idx, distance, is_tie: tied.len() > 1 })
}

/// Affine isometry `s ↦ R·s + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IsometryRepr", into = "IsometryRepr")]
pub struct IsometryT {
    rotation: Matrix,
    offset: Vector,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsometryRepr {
    rotation: Matrix,
    #[serde(default)]
    offset: Option<Vector>,
}

impl TryFrom<IsometryRepr> for IsometryT {
    type Error = Error;
    fn try_from(r: IsometryRepr) -> Result<Self> {
        let n = r.rotation.rows();
        IsometryT::new(r.rotation, r.offset.unwrap_or_else(|| vec![0.0; n]))
    }
}

impl From<IsometryT> for IsometryRepr {
    fn from(t: IsometryT) -> Self {
        IsometryRepr { rotation: t.rotation, offset: Some(t.offset) }
    }
}

impl IsometryT {
    pub fn new(rotation: Matrix, offset: Vector) -> Result<Self> {
        if !rotation.is_square() || offset.len() != rotation.rows() {
            return Err(Error::DimensionMismatch(format!(
                "rotation {:?} with offset of length {}",
                rotation.shape(),
                offset.len()
            )));
        }
        let defect = rotation.orthonormality_defect();
        if defect > BASIS_TOL {
            return Err(Error::NotOrthonormal(defect));
        }
        Ok(IsometryT { rotation, offset })
    }

    pub fn identity(n: usize) -> Self {
        IsometryT { rotation: Matrix::identity(n), offset: vec![0.0; n] }
    }

    pub fn linear(rotation: Matrix) -> Result<Self> {
        let n = rotation.rows();
        Self::new(rotation, vec![0.0; n])
    }

    /// Counter-clockwise planar rotation.
    pub fn rotation_2d(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix::from_vec(2, 2, vec![c, -s, s, c]).expect("2x2");
        IsometryT { rotation: r, offset: vec![0.0; 2] }
    }

    pub fn rotation(&self) -> &Matrix {
        &self.rotation
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, s: &[f64]) -> Result<Vector> {
        Ok(numerics::add(&self.rotation.matvec(s)?, &self.offset))
    }

    pub fn inverse(&self) -> IsometryT {
        let rt = self.rotation.transpose();
        let off = rt.matvec(&self.offset).expect("square");
        IsometryT { rotation: rt, offset: numerics::scale(&off, -1.0) }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &IsometryT) -> Result<IsometryT> {
        let rotation = self.rotation.matmul(&other.rotation)?;
        let offset = self.apply(&other.offset)?;
        Ok(IsometryT { rotation, offset })
    }

    fn is_identity(&self) -> bool {
        let n = self.dim();
        self.rotation.sub(&Matrix::identity(n)).map_or(false, |d| d.max_abs() < 1e-12)
            && self.offset.iter().all(|x| x.abs() < 1e-12)
    }
}

/// Projector onto `T(⋃ Mᵢ)`.
pub fn conjugate(p: &UnionProjector, t: &IsometryT) -> Result<UnionProjector> {
    if t.dim() != p.ambient_dim() {
        return Err(Error::DimensionMismatch(format!("isometry of R^{} on a union in R^{}", t.dim(), p.ambient_dim())));
    }
    let components = p.components.iter().map(|b| t.rotation.matmul(b)).collect::<Result<Vec<_>>>()?;
    let origins = p.origins.iter().map(|o| t.apply(o)).collect::<Result<Vec<_>>>()?;
    // R·B keeps orthonormal columns, so no re-validation.
    Ok(UnionProjector { components, origins, tie_tol: p.tie_tol })
}

/// Reuse of a projector across domains related by an isometry: `P_j = T ∘ P_i ∘ T⁻¹`.
#[derive(Debug, Clone)]
pub struct Transfer {
    source: UnionProjector,
    t: IsometryT,
    t_inv: IsometryT,
}

/// See [`Transfer`].
pub fn transfer(pi: &UnionProjector, t: &IsometryT) -> Result<Transfer> {
    if t.dim() != pi.ambient_dim() {
        return Err(Error::DimensionMismatch(format!("isometry of R^{} on a union in R^{}", t.dim(), pi.ambient_dim())));
    }
    Ok(Transfer { source: pi.clone(), t: t.clone(), t_inv: t.inverse() })
}

impl Transfer {
    pub fn project(&self, s: &[f64]) -> Result<ProjectionResult> {
        let mut r = project_union(&self.source, &self.t_inv.apply(s)?)?;
        r.point = self.t.apply(&r.point)?;
        Ok(r)
    }

    /// The same map as an explicit projector (identical to [`conjugate`]).
    pub fn to_projector(&self) -> Result<UnionProjector> {
        conjugate(&self.source, &self.t)
    }
}

fn same_flat(b1: &Matrix, o1: &[f64], b2: &Matrix, o2: &[f64]) -> Result<bool> {
    if b1.cols() != b2.cols() {
        return Ok(false);
    }
    let angles = numerics::principal_angles(b1, b2)?;
    if angles.iter().cloned().fold(0.0, f64::max) >= DEDUP_ANGLE {
        return Ok(false);
    }
    let d = numerics::sub(o1, o2);
    let off = numerics::sub(&d, &project_component(b1, &d)?);
    Ok(numerics::norm(&off) < 1e-9)
}

/// Union of `g(Mᵢ)` over the group (identity added when missing), duplicates merged.
pub fn orbit(p: &UnionProjector, group: &[IsometryT]) -> Result<UnionProjector> {
    let mut elements: Vec<IsometryT> = Vec::with_capacity(group.len() + 1);
    if !group.iter().any(IsometryT::is_identity) {
        elements.push(IsometryT::identity(p.ambient_dim()));
    }
    elements.extend(group.iter().cloned());
    let mut components: Vec<Matrix> = Vec::new();
    let mut origins: Vec<Vector> = Vec::new();
    for g in &elements {
        let image = conjugate(p, g)?;
        for (b, o) in image.components.into_iter().zip(image.origins) {
            let mut dup = false;
            for (b2, o2) in components.iter().zip(&origins) {
                if same_flat(b2, o2, &b, &o)? {
                    dup = true;
                    break;
                }
            }
            if !dup {
                components.push(b);
                origins.push(o);
            }
        }
    }
    Ok(UnionProjector { components, origins, tie_tol: p.tie_tol })
}

/// `P_B(s) + Φ·(P_R(s) − P_R(P_B(s)))` for single-component projectors and a linear `Φ`.
pub fn lemma1_decompose(pb: &UnionProjector, pr: &UnionProjector, phi: &Matrix, s: &[f64]) -> Result<Vector> {
    if pb.len() != 1 || pr.len() != 1 {
        return Err(Error::InvalidSpec("local decomposition needs single-component projectors".into()));
    }
    let n = pb.ambient_dim();
    if pr.ambient_dim() != n || phi.shape() != (n, n) || s.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "decomposition in R^{n} with P_R in R^{}, phi {:?}, sample of length {}",
            pr.ambient_dim(),
            phi.shape(),
            s.len()
        )));
    }
    let base = pb.project_onto(0, s)?;
    let correction = numerics::sub(&pr.project_onto(0, s)?, &pr.project_onto(0, &base)?);
    Ok(numerics::add(&base, &phi.matvec(&correction)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn axis(n: usize, i: usize) -> Matrix {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Matrix::column_vector(&v)
    }

    fn axes2() -> UnionProjector {
        UnionProjector::new(vec![axis(2, 0), axis(2, 1)], DEFAULT_TIE_TOL).unwrap()
    }

    fn near(a: &[f64], b: &[f64], tol: f64) -> bool {
        numerics::distance(a, b) <= tol
    }

    #[test]
    fn component_examples() {
        assert_eq!(project_component(&axis(2, 0), &[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_component(&axis(2, 0), &[3.0, 0.0]).unwrap(), vec![3.0, 0.0]);
        assert!(project_component(&axis(2, 0), &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn union_examples() {
        let p = axes2();
        let r = project_union(&p, &[2.0, 1.0]).unwrap();
        assert_eq!(r, ProjectionResult { point: vec![2.0, 0.0], component_index: 0, distance: 1.0, is_tie: false });
        let t = project_union(&p, &[1.0, 1.0]).unwrap();
        assert!(t.is_tie);
        assert_eq!(t.component_index, 0);
        assert_eq!(t.distance, 1.0);
        // Inside the tolerance band counts as a tie even when component 1 is strictly closer.
        let t = project_union(&p, &[1.0, 1.0 + 1e-9]).unwrap();
        assert!(t.is_tie && t.component_index == 0);
        assert!(project_union(&p, &[1.0]).is_err());
    }

    #[test]
    fn construction_checks() {
        assert!(UnionProjector::new(vec![], 1e-8).is_err());
        assert!(UnionProjector::new(vec![Matrix::column_vector(&[2.0, 0.0])], 1e-8).is_err());
        assert!(UnionProjector::new(vec![axis(2, 0), axis(3, 0)], 1e-8).is_err());
        assert!(UnionProjector::new(vec![axis(2, 0)], 0.0).is_err());
        let p = UnionProjector::from_spans(&[Matrix::column_vector(&[2.0, 2.0])], 1e-8).unwrap();
        assert!(near(&project_union(&p, &[1.0, 0.0]).unwrap().point, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn conjugate_examples() {
        let p = UnionProjector::new(vec![axis(2, 0)], DEFAULT_TIE_TOL).unwrap();
        assert_eq!(conjugate(&p, &IsometryT::identity(2)).unwrap(), p);
        let t = IsometryT::rotation_2d(FRAC_PI_2);
        let ts = t.apply(&[1.0, 1.0]).unwrap();
        assert!(near(&ts, &[-1.0, 1.0], 1e-15));
        let q = conjugate(&p, &t).unwrap();
        assert!(near(&project_union(&q, &ts).unwrap().point, &[0.0, 1.0], 1e-15));
        let x = transfer(&p, &t).unwrap();
        assert!(near(&x.project(&ts).unwrap().point, &[0.0, 1.0], 1e-15));
    }

    #[test]
    fn offset_isometry_conjugation() {
        let p = axes2();
        let t = IsometryT::new(IsometryT::rotation_2d(0.4).rotation().clone(), vec![1.5, -2.0]).unwrap();
        let q = conjugate(&p, &t).unwrap();
        assert!(!q.is_linear());
        let s = [0.3, 2.0];
        let lhs = project_union(&q, &t.apply(&s).unwrap()).unwrap().point;
        let rhs = t.apply(&project_union(&p, &s).unwrap().point).unwrap();
        assert!(near(&lhs, &rhs, 1e-12));
        let inv = t.compose(&t.inverse()).unwrap();
        assert!(inv.is_identity());
    }

    #[test]
    fn orbit_examples() {
        let p = UnionProjector::new(vec![axis(2, 0)], DEFAULT_TIE_TOL).unwrap();
        assert_eq!(orbit(&p, &[IsometryT::identity(2)]).unwrap(), p);
        let o = orbit(&p, &[IsometryT::rotation_2d(FRAC_PI_2)]).unwrap();
        assert_eq!(o.len(), 2);
        assert!(near(&project_union(&o, &[0.2, 3.0]).unwrap().point, &[0.0, 3.0], 1e-15));
        // 180° maps the axis onto itself: merged.
        let o = orbit(&p, &[IsometryT::rotation_2d(std::f64::consts::PI), IsometryT::rotation_2d(FRAC_PI_2)]).unwrap();
        assert_eq!(o.len(), 2);
    }

    #[test]
    fn lemma1_orthogonal_case() {
        let pb = UnionProjector::new(vec![axis(3, 0)], DEFAULT_TIE_TOL).unwrap();
        let pr = UnionProjector::new(vec![axis(3, 1)], DEFAULT_TIE_TOL).unwrap();
        let mut phi = Matrix::zeros(3, 3);
        phi[(1, 1)] = 1.0;
        let out = lemma1_decompose(&pb, &pr, &phi, &[1.0, 2.0, 3.0]).unwrap();
        assert!(near(&out, &[1.0, 2.0, 0.0], 1e-15));
        let on_base = lemma1_decompose(&pb, &pr, &phi, &[4.0, 0.0, 0.0]).unwrap();
        assert!(near(&on_base, &[4.0, 0.0, 0.0], 1e-15));
        assert!(lemma1_decompose(&axes2(), &pr, &phi, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = axes2();
        let js = serde_json::to_string(&p).unwrap();
        assert!(js.contains("\"ambient_dim\":2"));
        assert_eq!(serde_json::from_str::<UnionProjector>(&js).unwrap(), p);
        let bad = r#"{"ambient_dim":2,"components":[{"rows":2,"cols":1,"data":[1.0,0.0]}],"extra":1}"#;
        assert!(serde_json::from_str::<UnionProjector>(bad).is_err());
    }
}
