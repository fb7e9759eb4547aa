//! Diagnostics of a grouped dictionary: coherence, restricted isometry and orthogonality
//! constants, secant rank and the uniqueness condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

/// Strictly increasing column indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SupportSet(Vec<usize>);

impl SupportSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDictionary(format!("support {indices:?} is not strictly increasing")));
        }
        Ok(SupportSet(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for SupportSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        SupportSet::new(v)
    }
}

impl From<SupportSet> for Vec<usize> {
    fn from(s: SupportSet) -> Self {
        s.0
    }
}

/// Unit-norm atoms partitioned into groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionaryRepr", into = "DictionaryRepr")]
pub struct Dictionary {
    atoms: Matrix,
    groups: Vec<SupportSet>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryRepr {
    atoms: Matrix,
    groups: Vec<SupportSet>,
}

impl TryFrom<DictionaryRepr> for Dictionary {
    type Error = Error;
    fn try_from(r: DictionaryRepr) -> Result<Self> {
        Dictionary::new(r.atoms, r.groups)
    }
}

impl From<Dictionary> for DictionaryRepr {
    fn from(d: Dictionary) -> Self {
        DictionaryRepr { atoms: d.atoms, groups: d.groups }
    }
}

impl Dictionary {
    /// Columns are rescaled to unit norm; zero columns and non-partitions are rejected.
    pub fn new(atoms: Matrix, groups: Vec<SupportSet>) -> Result<Self> {
        let (_, n_atoms) = atoms.shape();
        let mut atoms = atoms;
        for j in 0..n_atoms {
            let c = atoms.column(j);
            let norm = numerics::norm(&c);
            if norm == 0.0 {
                return Err(Error::InvalidDictionary(format!("atom {j} is zero")));
            }
            atoms.set_column(j, &numerics::scale(&c, 1.0 / norm));
        }
        let mut seen = vec![false; n_atoms];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidDictionary("empty group".into()));
            }
            for &i in g.indices() {
                if i >= n_atoms || seen[i] {
                    return Err(Error::InvalidDictionary(format!("atom {i} is out of range or in two groups")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidDictionary(format!("atom {i} belongs to no group")));
        }
        Ok(Dictionary { atoms, groups })
    }

    /// Every atom in its own group.
    pub fn singletons(atoms: Matrix) -> Result<Self> {
        let groups = (0..atoms.cols()).map(|i| SupportSet(vec![i])).collect();
        Dictionary::new(atoms, groups)
    }

    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    pub fn groups(&self) -> &[SupportSet] {
        &self.groups
    }

    pub fn ambient_dim(&self) -> usize {
        self.atoms.rows()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.cols()
    }

    pub fn block(&self, group: usize) -> Matrix {
        self.atoms.select_columns(self.groups[group].indices())
    }
}

/// Largest absolute cosine between distinct atoms.
pub fn mutual_coherence(d: &Dictionary) -> Result<f64> {
    let n = d.num_atoms();
    if n < 2 {
        return Err(Error::TooFewAtoms(n));
    }
    let gram = d.atoms.tr_matmul(&d.atoms)?;
    let mut mu: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            mu = mu.max(gram[(i, j)].abs());
        }
    }
    Ok(mu.min(1.0))
}

/// Largest support size enumeration [`ric`] is willing to do.
pub const ENUMERATION_CAP: u128 = 1_000_000;

pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Calls `f` with every k-subset of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Distortion of one block: `max(λ_max − 1, 1 − λ_min)` of its Gram matrix.
pub fn block_isometry_constant(block: &Matrix) -> Result<f64> {
    let s = numerics::singular_values(block)?;
    let hi = s[0] * s[0];
    let lo = if block.cols() > block.rows() { 0.0 } else { s[s.len() - 1].powi(2) };
    Ok((hi - 1.0).max(1.0 - lo))
}

/// Restricted isometry constant δ_k by exhaustive support enumeration.
pub fn ric(d: &Dictionary, k: usize) -> Result<f64> {
    let n = d.num_atoms();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("RIC order {k} outside 1..={n}")));
    }
    let count = binomial(n, k).unwrap_or(u128::MAX);
    if count > ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge { atoms: n, k, cap: ENUMERATION_CAP });
    }
    let mut delta: f64 = 0.0;
    let mut failure = None;
    for_each_subset(n, k, |support| {
        if failure.is_some() {
            return;
        }
        match block_isometry_constant(&d.atoms.select_columns(support)) {
            Ok(v) => delta = delta.max(v),
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(delta),
    }
}

/// Restricted orthogonality constant θ = σ_max(DiᵀDj).
pub fn roc(di: &Matrix, dj: &Matrix) -> Result<f64> {
    if di.rows() != dj.rows() {
        return Err(Error::DimensionMismatch(format!("blocks in R^{} and R^{}", di.rows(), dj.rows())));
    }
    numerics::spectral_norm(&di.tr_matmul(dj)?)
}

/// Relative singular value threshold for numerical rank.
pub const SECANT_RANK_RTOL: f64 = 1e-9;

/// Largest rank of `[D_{Λi} D_{Λj}]` over distinct group pairs.
pub fn secant_kmax(d: &Dictionary) -> Result<usize> {
    let g = d.groups.len();
    if g < 2 {
        return Err(Error::TooFewGroups(g));
    }
    let mut kmax = 0;
    for i in 0..g {
        for j in i + 1..g {
            let pair = d.block(i).hstack(&d.block(j))?;
            kmax = kmax.max(numerics::svd(&pair)?.rank(SECANT_RANK_RTOL));
        }
    }
    Ok(kmax)
}

/// Whether `n ≥ k_max`. A dictionary with a single group is judged by that group's rank.
pub fn uniqueness_ok(d: &Dictionary, n: usize) -> bool {
    let kmax = match secant_kmax(d) {
        Ok(k) => k,
        Err(_) => numerics::svd(d.atoms()).map_or(usize::MAX, |s| s.rank(SECANT_RANK_RTOL)),
    };
    n >= kmax
}

/// Full diagnostic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mu: f64,
    /// `(k, δ_k)` pairs in the requested order.
    pub delta_k: Vec<(usize, f64)>,
    /// θ between every pair of groups (diagonal entries are 0 by convention).
    pub theta: Vec<Vec<f64>>,
    pub k_max: usize,
    pub uniqueness: bool,
}

pub fn diagnose(d: &Dictionary, orders: &[usize]) -> Result<Diagnostics> {
    let mu = mutual_coherence(d)?;
    let delta_k = orders.iter().map(|&k| Ok((k, ric(d, k)?))).collect::<Result<Vec<_>>>()?;
    let g = d.groups.len();
    let mut theta = vec![vec![0.0; g]; g];
    for i in 0..g {
        for j in i + 1..g {
            let t = roc(&d.block(i), &d.block(j))?;
            theta[i][j] = t;
            theta[j][i] = t;
        }
    }
    let k_max = secant_kmax(d)?;
    Ok(Diagnostics { mu, delta_k, theta, k_max, uniqueness: d.ambient_dim() >= k_max })
}
