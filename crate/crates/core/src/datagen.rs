//! Seeded synthetic data and the degradation operators used in training.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::rng::{self, tag, Rng};

/// How the coefficients of a component sample are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientLaw {
    /// Standard normal per coordinate: the component is a full subspace.
    #[default]
    Gaussian,
    /// `|N(0,1)|` per coordinate: the component is the positive cone of its basis
    /// (a ray for one-dimensional bases).
    HalfGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub basis: Matrix,
    pub count: usize,
    #[serde(default)]
    pub coefficients: CoefficientLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub ambient_dim: usize,
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.ambient_dim == 0 {
            return bad("ambient_dim must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if self.components.is_empty() || self.components.iter().all(|c| c.count == 0) {
            return bad("at least one sample is required".into());
        }
        for (i, c) in self.components.iter().enumerate() {
            let (rows, k) = c.basis.shape();
            if rows != self.ambient_dim {
                return bad(format!("component {i} lives in R^{rows}, expected R^{}", self.ambient_dim));
            }
            if k >= self.ambient_dim {
                return bad(format!("component {i} has dimension {k}, not below {}", self.ambient_dim));
            }
            if numerics::qr_orthonormal(&c.basis).is_err() {
                return bad(format!("component {i} basis is rank deficient"));
            }
        }
        Ok(())
    }
}

/// Samples with integer component labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Vector>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Vector>, labels: Vec<usize>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSpec("dataset is empty".into()));
        }
        if samples.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let dim = samples[0].len();
        if dim == 0 || samples.iter().any(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch("samples have unequal or zero dimension".into()));
        }
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("non-finite sample entry".into()));
        }
        Ok(Dataset { samples, labels })
    }

    /// Unlabeled points (all labels 0).
    pub fn unlabeled(samples: Vec<Vector>) -> Result<Self> {
        let n = samples.len();
        Self::new(samples, vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Rows are samples.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.samples).expect("dataset invariants guarantee a rectangular matrix")
    }

    /// One row per sample, 17 significant digits, trailing integer label.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (s, l) in self.samples.iter().zip(&self.labels) {
            for x in s {
                let _ = write!(out, "{},", fmt_f64(*x));
            }
            let _ = writeln!(out, "{l}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse_err = || Error::InvalidSpec(format!("bad CSV row {}", lineno + 1));
            let (label, values) = fields.split_last().ok_or_else(parse_err)?;
            labels.push(usize::from_str(label).map_err(|_| parse_err())?);
            samples.push(
                values.iter().map(|v| f64::from_str(v).map_err(|_| parse_err())).collect::<Result<Vec<_>>>()?,
            );
        }
        Self::new(samples, labels)
    }
}

/// Shortest-round-trip formatting would also be exact; a fixed 17-digit scientific form keeps
/// columns aligned and matches the documented format.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Draws each sample as `basis·x + ε`. Sample `j` of component `i` uses its own streams, so
/// changing one component's count never perturbs another component's samples.
pub fn gen_union(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.ambient_dim;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (ci, comp) in spec.components.iter().enumerate() {
        let k = comp.basis.cols();
        for j in 0..comp.count {
            let mut crng = rng::stream(spec.seed, ci as u64, j as u64, tag::COEFFS);
            let coeffs: Vec<f64> = (0..k)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut crng);
                    match comp.coefficients {
                        CoefficientLaw::Gaussian => g,
                        CoefficientLaw::HalfGaussian => g.abs(),
                    }
                })
                .collect();
            let mut s = comp.basis.matvec(&coeffs)?;
            if spec.noise_sigma > 0.0 {
                let mut nrng = rng::stream(spec.seed, ci as u64, j as u64, tag::NOISE);
                for x in s.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut nrng);
                    *x += spec.noise_sigma * g;
                }
            }
            debug_assert_eq!(s.len(), n);
            samples.push(s);
            labels.push(ci);
        }
    }
    Dataset::new(samples, labels)
}

/// Evenly spaced points on the unit circle with Gaussian radial noise.
pub fn gen_circle(count: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if count < 3 {
        return Err(Error::InvalidSpec(format!("circle needs at least 3 points, got {count}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!("noise_sigma {noise_sigma} must be finite and >= 0")));
    }
    let samples = (0..count)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / count as f64;
            let r = if noise_sigma > 0.0 {
                let g: f64 = StandardNormal.sample(&mut rng::stream(seed, 0, i as u64, tag::CIRCLE));
                1.0 + noise_sigma * g
            } else {
                1.0
            };
            vec![r * t.cos(), r * t.sin()]
        })
        .collect();
    Dataset::unlabeled(samples)
}

/// Contiguous index window `[start, start + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskWindow {
    pub start: usize,
    pub length: usize,
}

impl MaskWindow {
    fn check(&self, dim: usize) -> Result<()> {
        if self.length == 0 || self.start + self.length > dim {
            return Err(Error::WindowOutOfRange { start: self.start, length: self.length, dim });
        }
        Ok(())
    }
}

/// Zeroes the window.
pub fn mask(v: &[f64], w: MaskWindow) -> Result<Vector> {
    w.check(v.len())?;
    let mut out = v.to_vec();
    out[w.start..w.start + w.length].fill(0.0);
    Ok(out)
}

/// Window length uniform in `[wmin, wmax]`, then start uniform over the valid positions.
pub fn random_mask(v: &[f64], wmin: usize, wmax: usize, rng: &mut Rng) -> Result<(Vector, MaskWindow)> {
    let w = random_window(v.len(), wmin, wmax, rng)?;
    Ok((mask(v, w)?, w))
}

pub fn random_window(dim: usize, wmin: usize, wmax: usize, rng: &mut Rng) -> Result<MaskWindow> {
    if wmin == 0 || wmin > wmax || wmax > dim {
        return Err(Error::InvalidSpec(format!(
            "mask bounds need 1 <= wmin <= wmax <= {dim}, got [{wmin}, {wmax}]"
        )));
    }
    let length = rng.random_range(wmin..=wmax);
    let start = rng.random_range(0..=dim - length);
    Ok(MaskWindow { start, length })
}

/// Normalized Gaussian kernel truncated at `ceil(3σ)` taps on each side.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Gaussian blur with symmetric (half-sample) reflection at both ends.
pub fn blur1d(v: &[f64], sigma: f64) -> Vector {
    if sigma <= 0.0 || v.is_empty() {
        return v.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let n = v.len() as i64;
    let reflect = |i: i64| -> usize {
        let m = i.rem_euclid(2 * n);
        (if m < n { m } else { 2 * n - 1 - m }) as usize
    };
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * v[reflect(i + k as i64 - radius)])
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn line(dir: &[f64], count: usize) -> ComponentSpec {
        ComponentSpec { basis: Matrix::column_vector(dir), count, coefficients: CoefficientLaw::Gaussian }
    }

    #[test]
    fn single_axis_component() {
        let spec = SyntheticSpec { ambient_dim: 3, components: vec![line(&e(3, 0), 3)], noise_sigma: 0.0, seed: 1 };
        let d = gen_union(&spec).unwrap();
        assert_eq!(d.len(), 3);
        for s in &d.samples {
            assert_eq!(s[1], 0.0);
            assert_eq!(s[2], 0.0);
        }
    }

    #[test]
    fn two_lines_at_120_degrees() {
        let a = 120f64.to_radians();
        let spec = SyntheticSpec {
            ambient_dim: 3,
            components: vec![line(&[1.0, 0.0, 0.0], 50), line(&[a.cos(), a.sin(), 0.0], 50)],
            noise_sigma: 0.0,
            seed: 3,
        };
        let d = gen_union(&spec).unwrap();
        for (s, &l) in d.samples.iter().zip(&d.labels) {
            let b = &spec.components[l].basis;
            let p = crate::projector::project_component(b, s).unwrap();
            assert!(numerics::distance(&p, s) <= 1e-12);
        }
        assert_eq!(d.labels.iter().filter(|&&l| l == 1).count(), 50);
    }

    #[test]
    fn rejects_bad_specs() {
        let full = SyntheticSpec {
            ambient_dim: 2,
            components: vec![ComponentSpec { basis: Matrix::identity(2), count: 3, coefficients: Default::default() }],
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(matches!(gen_union(&full), Err(Error::InvalidSpec(_))));
        let mut neg = full.clone();
        neg.components[0].basis = Matrix::column_vector(&[1.0, 0.0]);
        neg.noise_sigma = -1.0;
        assert!(gen_union(&neg).is_err());
        let mut deficient = neg.clone();
        deficient.noise_sigma = 0.0;
        deficient.components[0].basis = Matrix::column_vector(&[0.0, 0.0]);
        assert!(gen_union(&deficient).is_err());
    }

    #[test]
    fn half_gaussian_stays_on_the_ray() {
        let spec = SyntheticSpec {
            ambient_dim: 2,
            components: vec![ComponentSpec {
                basis: Matrix::column_vector(&[0.6, 0.8]),
                count: 200,
                coefficients: CoefficientLaw::HalfGaussian,
            }],
            noise_sigma: 0.0,
            seed: 9,
        };
        let d = gen_union(&spec).unwrap();
        assert!(d.samples.iter().all(|s| s[0] >= 0.0 && s[1] >= 0.0));
    }

    #[test]
    fn circle_examples() {
        let d = gen_circle(4, 0.0, 0).unwrap();
        let want = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (s, w) in d.samples.iter().zip(want) {
            assert!(numerics::distance(s, &w) < 1e-15);
        }
        let d = gen_circle(17, 0.0, 0).unwrap();
        assert!(d.samples.iter().all(|s| (numerics::norm(s) - 1.0).abs() < 1e-15));
        assert!(gen_circle(2, 0.0, 0).is_err());
    }

    #[test]
    fn mask_examples() {
        let v = vec![1.0; 5];
        assert_eq!(mask(&v, MaskWindow { start: 2, length: 2 }).unwrap(), vec![1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(mask(&v, MaskWindow { start: 0, length: 5 }).unwrap(), vec![0.0; 5]);
        let w = MaskWindow { start: 1, length: 3 };
        let once = mask(&v, w).unwrap();
        assert_eq!(mask(&once, w).unwrap(), once);
        assert!(matches!(mask(&v, MaskWindow { start: 4, length: 2 }), Err(Error::WindowOutOfRange { .. })));
        assert!(mask(&v, MaskWindow { start: 0, length: 0 }).is_err());
    }

    #[test]
    fn random_mask_full_width_and_determinism() {
        let v = vec![2.0; 6];
        let mut r = rng::stream(1, 0, 0, tag::MASK);
        for _ in 0..20 {
            let (m, w) = random_mask(&v, 6, 6, &mut r).unwrap();
            assert_eq!(m, vec![0.0; 6]);
            assert_eq!(w, MaskWindow { start: 0, length: 6 });
        }
        let a = random_mask(&v, 1, 4, &mut rng::stream(5, 0, 0, tag::MASK)).unwrap();
        let b = random_mask(&v, 1, 4, &mut rng::stream(5, 0, 0, tag::MASK)).unwrap();
        assert_eq!(a, b);
        assert!(random_mask(&v, 0, 2, &mut r).is_err());
        assert!(random_mask(&v, 3, 2, &mut r).is_err());
        assert!(random_mask(&v, 1, 7, &mut r).is_err());
    }

    #[test]
    fn blur_examples() {
        let v = vec![0.3, -1.0, 2.0, 5.0];
        assert_eq!(blur1d(&v, 0.0), v);
        let c = blur1d(&[4.0; 9], 1.3);
        assert!(c.iter().all(|x| (x - 4.0).abs() < 1e-14));
        let mut imp = vec![0.0; 21];
        imp[10] = 1.0;
        let b = blur1d(&imp, 1.0);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!((b[9] - b[11]).abs() < 1e-16);
    }

    #[test]
    fn blur_preserves_sum_with_wide_kernels() {
        let v: Vec<f64> = (0..7).map(|i| (i as f64).sin() + 0.5).collect();
        for sigma in [0.4, 1.0, 2.5, 6.0] {
            let b = blur1d(&v, sigma);
            assert!((b.iter().sum::<f64>() - v.iter().sum::<f64>()).abs() < 1e-10, "sigma {sigma}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(vec![vec![0.1, -2.0 / 3.0], vec![1e-300, 7.0]], vec![0, 1]).unwrap();
        let text = d.to_csv();
        assert!(text.lines().next().unwrap().ends_with(",0"));
        assert_eq!(Dataset::from_csv(&text).unwrap(), d);
        assert!(Dataset::from_csv("1.0,x\n").is_err());
    }
}
