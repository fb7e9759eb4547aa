//! Sample-complexity counts, greedy covering numbers and the reach-based covering bound.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::numerics;

/// Covering numbers of the data manifold, one component, and each transformation family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexitySpec {
    #[serde(alias = "cover_M")]
    pub cover_m: u64,
    #[serde(alias = "cover_Mi")]
    pub cover_mi: u64,
    #[serde(default)]
    pub group_sizes: Vec<u64>,
    #[serde(default = "one")]
    pub num_components: u64,
}

fn one() -> u64 {
    1
}

impl ComplexitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.cover_m == 0 || self.cover_mi == 0 || self.num_components == 0 || self.group_sizes.contains(&0) {
            return Err(Error::InvalidSpec("covering numbers and group sizes must be positive".into()));
        }
        Ok(())
    }
}

/// `C_ε(M)·∏ |G_ℓ|`, exact.
pub fn n_classical(spec: &ComplexitySpec) -> Result<u128> {
    spec.validate()?;
    spec.group_sizes
        .iter()
        .try_fold(spec.cover_m as u128, |acc, &g| acc.checked_mul(g as u128))
        .ok_or(Error::Overflow("n_classical"))
}

/// `C_ε(M) + Σ |G_ℓ|·C_ε(M_i)`, exact.
pub fn n_dnn(spec: &ComplexitySpec) -> Result<u128> {
    spec.validate()?;
    spec.group_sizes
        .iter()
        .try_fold(spec.cover_m as u128, |acc, &g| acc.checked_add((g as u128).checked_mul(spec.cover_mi as u128)?))
        .ok_or(Error::Overflow("n_dnn"))
}

/// Chosen centers of a greedy ε-cover.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cover {
    pub centers: Vec<usize>,
}

impl Cover {
    pub fn count(&self) -> usize {
        self.centers.len()
    }
}

/// Greedy ε-cover with centers drawn from the data.
///
/// Each round takes the uncovered point with the fewest uncovered ε-neighbors (the most
/// constrained one, lowest index on ties) and centers a ball at whichever of its ε-neighbors
/// covers the most uncovered points (lowest index on ties). The constrained point is always
/// covered, so the result is a valid ε-cover. On a curve the rule walks the frontier and
/// spaces centers about 2ε apart, close to the optimal count; picking an arbitrary uncovered
/// point as the center instead spaces them about ε apart. Every data-centered ε-cover is
/// within a factor 2 of an optimal ε-net.
pub fn greedy_cover(points: &Dataset, epsilon: f64) -> Result<Cover> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidSpec(format!("epsilon {epsilon} must be positive")));
    }
    if points.is_empty() {
        return Err(Error::InvalidSpec("no points to cover".into()));
    }
    let n = points.len();
    let eps2 = epsilon * epsilon;
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        neighbors[i].push(i);
        for j in i + 1..n {
            let d2: f64 = points.samples[i].iter().zip(&points.samples[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= eps2 {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    // Uncovered neighbors of every point; the frontier orders uncovered points by that count.
    let mut open: Vec<usize> = neighbors.iter().map(Vec::len).collect();
    let mut covered = vec![false; n];
    let mut frontier: BTreeSet<(usize, usize)> = (0..n).map(|i| (open[i], i)).collect();
    let mut centers = Vec::new();
    while let Some(&(_, x)) = frontier.iter().next() {
        let center = neighbors[x].iter().copied().max_by_key(|&c| (open[c], Reverse(c))).expect("a point neighbors itself");
        centers.push(center);
        for &q in &neighbors[center] {
            if covered[q] {
                continue;
            }
            covered[q] = true;
            frontier.remove(&(open[q], q));
            for &p in &neighbors[q] {
                if !covered[p] {
                    frontier.remove(&(open[p], p));
                    frontier.insert((open[p] - 1, p));
                }
                open[p] -= 1;
            }
        }
    }
    Ok(Cover { centers })
}

/// Size of [`greedy_cover`].
pub fn covering_number(points: &Dataset, epsilon: f64) -> Result<usize> {
    Ok(greedy_cover(points, epsilon)?.count())
}

/// Volume, intrinsic dimension, reach and scale of a manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachSpec {
    pub volume: f64,
    pub k: u32,
    pub tau: f64,
    pub epsilon: f64,
}

/// Volume of the Euclidean k-ball of radius r.
pub fn ball_volume(k: u32, r: f64) -> f64 {
    // Γ(k/2 + 1) by the half-integer recursion.
    let mut gamma = if k % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() / 2.0 };
    let mut x = if k % 2 == 0 { 1.0 } else { 1.5 };
    let target = k as f64 / 2.0 + 1.0;
    while x < target - 0.25 {
        gamma *= x;
        x += 1.0;
    }
    std::f64::consts::PI.powf(k as f64 / 2.0) / gamma * r.powi(k as i32)
}

/// `vol / (cos^k(arcsin(ε/8τ)) · vol_k(B_ε))`, with the asymptotic constant set to 1.
pub fn niyogi_bound(spec: &ReachSpec) -> Result<f64> {
    let ReachSpec { volume, k, tau, epsilon } = *spec;
    if !(volume > 0.0 && tau > 0.0 && epsilon > 0.0 && k >= 1) {
        return Err(Error::InvalidSpec("volume, tau, epsilon and k must be positive".into()));
    }
    if epsilon >= tau {
        return Err(Error::EpsilonExceedsReach { epsilon, tau });
    }
    let theta = (epsilon / (8.0 * tau)).asin();
    Ok(volume / (theta.cos().powi(k as i32) * ball_volume(k, epsilon)))
}

/// Cover of the pooled points vs the sum of per-component covers.
pub fn union_cover_audit(components: &[Dataset], epsilon: f64) -> Result<(usize, usize)> {
    let Some(first) = components.first() else {
        return Err(Error::InvalidSpec("no components".into()));
    };
    if components.iter().any(|c| c.dim() != first.dim()) {
        return Err(Error::DimensionMismatch("components live in different ambient spaces".into()));
    }
    let mut rhs = 0;
    let mut pooled = Vec::new();
    for c in components {
        rhs += covering_number(c, epsilon)?;
        pooled.extend(c.samples.iter().cloned());
    }
    let lhs = covering_number(&Dataset::unlabeled(pooled)?, epsilon)?;
    Ok((lhs, rhs))
}

/// Whether every point lies within ε of a center.
pub fn is_cover(points: &Dataset, cover: &Cover, epsilon: f64) -> bool {
    points
        .samples
        .iter()
        .all(|s| cover.centers.iter().any(|&c| numerics::distance(s, &points.samples[c]) <= epsilon))
}
