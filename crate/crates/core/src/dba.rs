//! Dual-branch attention block at toy scale, with hand-written backpropagation.
//!
//! A sequence `S` is a `T×C` matrix, one row per token. The block computes two feature
//! branches `s_i = φ(S·P_i)`, `s_j = φ(S·P_j)` with `φ = ELU + 1`, estimates each branch's
//! shared part by associative cross-attention, removes it, gates the residuals and feeds them
//! through a small FFN added back to `S` before per-token normalization.

use serde::{Deserialize, Serialize};

use crate::datagen::{ComponentSpec, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::numerics::{self, Matrix};
use crate::rng::{self, tag};

/// Smallest admissible cross-attention normalizer entry.
pub const DEGENERATE_NORMALIZER: f64 = 1e-12;
/// Residual rows shorter than this contribute zero to the orthogonality loss.
pub const ROW_GUARD: f64 = 1e-12;
/// Added to the per-token variance before the square root.
pub const NORM_EPS: f64 = 1e-12;
/// Training stops with [`Error::Diverged`] past this loss.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DBAConfig {
    pub tokens: usize,
    pub channels: usize,
    pub lambda_orth: f64,
    pub seed: u64,
}

impl DBAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tokens < 2 || self.channels < 2 {
            return Err(Error::InvalidConfig(format!("need T ≥ 2 and C ≥ 2, got {}×{}", self.tokens, self.channels)));
        }
        if !(self.lambda_orth >= 0.0 && self.lambda_orth.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_orth {} must be finite and ≥ 0", self.lambda_orth)));
        }
        Ok(())
    }
}

/// Block weights. Token maps act on the right: `S·P_i`. The FFN hidden width is `2C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DBAParams {
    pub proj_i: Matrix,
    pub proj_j: Matrix,
    pub gate_w: Matrix,
    /// Weights on tokens `t−1, t, t+1` (zero padding) before the gate's linear map.
    pub gate_local: [f64; 3],
    /// `2C × 2C`, applied to the concatenated gated residuals.
    pub ffn_w1: Matrix,
    /// `C × 2C`.
    pub ffn_w2: Matrix,
}

impl DBAParams {
    /// Gaussian weights scaled by fan-in and a symmetric smoothing kernel.
    pub fn init(cfg: &DBAConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut r = rng::stream(cfg.seed, 0, 0, tag::INIT);
        let mut draw = |rows: usize, cols: usize, s: f64| {
            Matrix::from_vec(rows, cols, rng::gaussian_vec(&mut r, rows * cols).into_iter().map(|x| x * s).collect())
        };
        let s = 1.0 / (c as f64).sqrt();
        let sf = (0.5 / c as f64).sqrt();
        Ok(Self {
            proj_i: draw(c, c, s)?,
            proj_j: draw(c, c, s)?,
            gate_w: draw(c, c, s)?,
            gate_local: [0.25, 0.5, 0.25],
            ffn_w1: draw(2 * c, 2 * c, sf)?,
            ffn_w2: draw(c, 2 * c, sf)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.proj_i.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let shapes = [
            ("proj_i", self.proj_i.shape(), (c, c)),
            ("proj_j", self.proj_j.shape(), (c, c)),
            ("gate_w", self.gate_w.shape(), (c, c)),
            ("ffn_w1", self.ffn_w1.shape(), (2 * c, 2 * c)),
            ("ffn_w2", self.ffn_w2.shape(), (c, 2 * c)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    fn blocks(&self) -> [&Matrix; 5] {
        [&self.proj_i, &self.proj_j, &self.gate_w, &self.ffn_w1, &self.ffn_w2]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|m| m.as_slice().len()).sum::<usize>() + 3
    }

    /// Order: proj_i, proj_j, gate_w, gate_local, ffn_w1, ffn_w2, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.proj_i.as_slice());
        v.extend_from_slice(self.proj_j.as_slice());
        v.extend_from_slice(self.gate_w.as_slice());
        v.extend_from_slice(&self.gate_local);
        v.extend_from_slice(self.ffn_w1.as_slice());
        v.extend_from_slice(self.ffn_w2.as_slice());
        v
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut out = self.clone();
        let mut at = 0;
        let mut take = |m: &mut Matrix| {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        };
        take(&mut out.proj_i);
        take(&mut out.proj_j);
        take(&mut out.gate_w);
        let mut local = Matrix::zeros(1, 3);
        take(&mut local);
        out.gate_local.copy_from_slice(local.as_slice());
        take(&mut out.ffn_w1);
        take(&mut out.ffn_w2);
        Ok(out)
    }

    fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            proj_i: z(&self.proj_i),
            proj_j: z(&self.proj_j),
            gate_w: z(&self.gate_w),
            gate_local: [0.0; 3],
            ffn_w1: z(&self.ffn_w1),
            ffn_w2: z(&self.ffn_w2),
        }
    }
}

/// Elementwise `ELU(x) + 1`; strictly positive even where `exp` underflows.
pub fn feature_map(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v + 1.0 } else { v.exp().max(f64::MIN_POSITIVE) })
}

fn feature_map_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Cross-attention normalizer `b·(bᵀ1)`, one entry per token, broadcast across channels.
fn normalizer(b: &Matrix) -> Vec<f64> {
    let q: Vec<f64> = (0..b.cols()).map(|c| (0..b.rows()).map(|t| b[(t, c)]).sum()).collect();
    (0..b.rows()).map(|t| numerics::dot(b.row(t), &q)).collect()
}

/// `b(bᵀa)` with each row divided by its normalizer entry.
fn cross(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = normalizer(b);
    if let Some(&bad) = n.iter().find(|&&x| !(x >= DEGENERATE_NORMALIZER)) {
        return Err(Error::DegenerateNormalizer(bad));
    }
    let mut out = b.matmul(&b.tr_matmul(a)?)?;
    for (t, &nt) in n.iter().enumerate() {
        out.row_mut(t).iter_mut().for_each(|x| *x /= nt);
    }
    Ok(out)
}

/// Accumulates the gradients of `out = cross(a, b)` into `ga` and `gb`.
fn cross_backward(a: &Matrix, b: &Matrix, out: &Matrix, gout: &Matrix, ga: &mut Matrix, gb: &mut Matrix) -> Result<()> {
    let (t_len, c) = b.shape();
    let q: Vec<f64> = (0..c).map(|k| (0..t_len).map(|t| b[(t, k)]).sum()).collect();
    let n = normalizer(b);
    let m = b.tr_matmul(a)?;
    let mut gu = gout.clone();
    let mut gn = vec![0.0; t_len];
    for t in 0..t_len {
        gn[t] = -numerics::dot(gout.row(t), out.row(t)) / n[t];
        gu.row_mut(t).iter_mut().for_each(|x| *x /= n[t]);
    }
    gb.add_scaled(1.0, &gu.matmul(&m.transpose())?);
    let gm = b.tr_matmul(&gu)?;
    ga.add_scaled(1.0, &b.matmul(&gm)?);
    gb.add_scaled(1.0, &a.matmul(&gm.transpose())?);
    let gq = b.tr_matvec(&gn)?;
    for t in 0..t_len {
        for k in 0..c {
            gb[(t, k)] += gn[t] * q[k] + gq[k];
        }
    }
    Ok(())
}

/// Shared-part estimates `(sB_i, sB_j)` of two positive feature branches.
pub fn dba_intersection(s_i: &Matrix, s_j: &Matrix) -> Result<(Matrix, Matrix)> {
    if s_i.shape() != s_j.shape() {
        return Err(Error::DimensionMismatch(format!("branches {:?} and {:?}", s_i.shape(), s_j.shape())));
    }
    Ok((cross(s_i, s_j)?, cross(s_j, s_i)?))
}

/// `(s_i − sB_i, s_j − sB_j)`.
pub fn dba_residuals(s_i: &Matrix, s_j: &Matrix, sb_i: &Matrix, sb_j: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((s_i.sub(sb_i)?, s_j.sub(sb_j)?))
}

/// Mean over tokens of the squared cosine between residual rows.
pub fn orth_loss(r_i: &Matrix, r_j: &Matrix) -> Result<f64> {
    Ok(orth_loss_grad(r_i, r_j)?.0)
}

/// [`orth_loss`] with its gradients with respect to both arguments.
pub fn orth_loss_grad(r_i: &Matrix, r_j: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    if r_i.shape() != r_j.shape() {
        return Err(Error::DimensionMismatch(format!("residuals {:?} and {:?}", r_i.shape(), r_j.shape())));
    }
    let t_len = r_i.rows();
    let mut gi = Matrix::zeros(t_len, r_i.cols());
    let mut gj = Matrix::zeros(t_len, r_i.cols());
    let mut total = 0.0;
    for t in 0..t_len {
        let (u, v) = (r_i.row(t), r_j.row(t));
        let (a, b) = (numerics::norm_sq(u), numerics::norm_sq(v));
        if a.sqrt() < ROW_GUARD || b.sqrt() < ROW_GUARD {
            continue;
        }
        let d = numerics::dot(u, v);
        total += (d * d / (a * b)).min(1.0);
        let k = 2.0 * d / (a * b * t_len as f64);
        for c in 0..u.len() {
            gi[(t, c)] = k * (v[c] - d / a * u[c]);
            gj[(t, c)] = k * (u[c] - d / b * v[c]);
        }
    }
    Ok((total / t_len as f64, gi, gj))
}

fn smooth3(s: &Matrix, w: &[f64; 3]) -> Matrix {
    let (t_len, c) = s.shape();
    let mut out = Matrix::zeros(t_len, c);
    for t in 0..t_len {
        for k in 0..c {
            let prev = if t > 0 { s[(t - 1, k)] } else { 0.0 };
            let next = if t + 1 < t_len { s[(t + 1, k)] } else { 0.0 };
            out[(t, k)] = w[0] * prev + w[1] * s[(t, k)] + w[2] * next;
        }
    }
    out
}

/// Per-token zero mean and unit variance, no affine parameters. Returns the scale used per row.
pub fn token_norm(x: &Matrix) -> (Matrix, Vec<f64>) {
    let (t_len, c) = x.shape();
    let mut out = Matrix::zeros(t_len, c);
    let mut sigma = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let row = x.row(t);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let s = (var + NORM_EPS).sqrt();
        for k in 0..c {
            out[(t, k)] = (row[k] - mean) / s;
        }
        sigma.push(s);
    }
    (out, sigma)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Tape {
    a_i: Matrix,
    a_j: Matrix,
    s_i: Matrix,
    s_j: Matrix,
    sb_i: Matrix,
    sb_j: Matrix,
    r_i: Matrix,
    r_j: Matrix,
    sm: Matrix,
    gate: Matrix,
    z: Matrix,
    hidden: Matrix,
    y: Matrix,
    sigma: Vec<f64>,
    j_orth: f64,
}

fn run(p: &DBAParams, s: &Matrix) -> Result<Tape> {
    p.validate()?;
    if s.cols() != p.channels() {
        return Err(Error::DimensionMismatch(format!("sequence has {} channels, block expects {}", s.cols(), p.channels())));
    }
    let a_i = s.matmul(&p.proj_i)?;
    let a_j = s.matmul(&p.proj_j)?;
    let s_i = feature_map(&a_i);
    let s_j = feature_map(&a_j);
    let (sb_i, sb_j) = dba_intersection(&s_i, &s_j)?;
    let (r_i, r_j) = dba_residuals(&s_i, &s_j, &sb_i, &sb_j)?;
    let j_orth = orth_loss(&r_i, &r_j)?;
    let sm = smooth3(s, &p.gate_local);
    let gate = sm.matmul(&p.gate_w)?.map(sigmoid);
    let z = r_i.hadamard(&gate)?.hstack(&r_j.hadamard(&gate)?)?;
    let hidden = z.matmul(&p.ffn_w1.transpose())?.map(f64::tanh);
    let f = hidden.matmul(&p.ffn_w2.transpose())?;
    let (y, sigma) = token_norm(&s.add(&f)?);
    Ok(Tape { a_i, a_j, s_i, s_j, sb_i, sb_j, r_i, r_j, sm, gate, z, hidden, y, sigma, j_orth })
}

/// `(Norm(S + FFN([sR_i⊙G, sR_j⊙G])), J_orth)`.
pub fn block_forward(p: &DBAParams, s: &Matrix) -> Result<(Matrix, f64)> {
    let tape = run(p, s)?;
    Ok((tape.y, tape.j_orth))
}

/// Mean squared error of the block output against `target` plus `λ·J_orth`.
pub fn block_loss(p: &DBAParams, s: &Matrix, target: &Matrix, lambda_orth: f64) -> Result<f64> {
    let (y, j) = block_forward(p, s)?;
    let diff = y.sub(target)?;
    Ok(diff.as_slice().iter().map(|x| x * x).sum::<f64>() / diff.as_slice().len() as f64 + lambda_orth * j)
}

/// Loss, parameter gradients and input gradient of [`block_loss`].
pub fn block_grad(p: &DBAParams, s: &Matrix, target: &Matrix, lambda_orth: f64) -> Result<(f64, DBAParams, Matrix)> {
    let tp = run(p, s)?;
    let (t_len, c) = s.shape();
    let diff = tp.y.sub(target)?;
    let count = (t_len * c) as f64;
    let loss = diff.as_slice().iter().map(|x| x * x).sum::<f64>() / count + lambda_orth * tp.j_orth;
    let mut g = p.zeros_like();

    // Normalization.
    let gy = diff.scale(2.0 / count);
    let mut gx = Matrix::zeros(t_len, c);
    for t in 0..t_len {
        let (gr, yr) = (gy.row(t), tp.y.row(t));
        let mean_g = gr.iter().sum::<f64>() / c as f64;
        let mean_gy = numerics::dot(gr, yr) / c as f64;
        for k in 0..c {
            gx[(t, k)] = (gr[k] - mean_g - yr[k] * mean_gy) / tp.sigma[t];
        }
    }
    let mut gs = gx.clone();

    // FFN.
    g.ffn_w2 = gx.tr_matmul(&tp.hidden)?;
    let gh = gx.matmul(&p.ffn_w2)?;
    let gpre = gh.hadamard(&tp.hidden.map(|h| 1.0 - h * h))?;
    g.ffn_w1 = gpre.tr_matmul(&tp.z)?;
    let gz = gpre.matmul(&p.ffn_w1)?;

    // Gated concatenation.
    let mut gr_i = Matrix::zeros(t_len, c);
    let mut gr_j = Matrix::zeros(t_len, c);
    let mut ggate = Matrix::zeros(t_len, c);
    for t in 0..t_len {
        for k in 0..c {
            let (zi, zj) = (gz[(t, k)], gz[(t, c + k)]);
            gr_i[(t, k)] = zi * tp.gate[(t, k)];
            gr_j[(t, k)] = zj * tp.gate[(t, k)];
            ggate[(t, k)] = zi * tp.r_i[(t, k)] + zj * tp.r_j[(t, k)];
        }
    }
    if lambda_orth != 0.0 {
        let (_, oi, oj) = orth_loss_grad(&tp.r_i, &tp.r_j)?;
        gr_i.add_scaled(lambda_orth, &oi);
        gr_j.add_scaled(lambda_orth, &oj);
    }

    // Gate.
    let gpre_gate = ggate.hadamard(&tp.gate.map(|v| v * (1.0 - v)))?;
    g.gate_w = tp.sm.tr_matmul(&gpre_gate)?;
    let gsm = gpre_gate.matmul(&p.gate_w.transpose())?;
    for t in 0..t_len {
        for k in 0..c {
            let gv = gsm[(t, k)];
            if t > 0 {
                g.gate_local[0] += gv * s[(t - 1, k)];
                gs[(t - 1, k)] += p.gate_local[0] * gv;
            }
            g.gate_local[1] += gv * s[(t, k)];
            gs[(t, k)] += p.gate_local[1] * gv;
            if t + 1 < t_len {
                g.gate_local[2] += gv * s[(t + 1, k)];
                gs[(t + 1, k)] += p.gate_local[2] * gv;
            }
        }
    }

    // Residuals and cross-attention.
    let mut gs_i = gr_i.clone();
    let mut gs_j = gr_j.clone();
    cross_backward(&tp.s_i, &tp.s_j, &tp.sb_i, &gr_i.scale(-1.0), &mut gs_i, &mut gs_j)?;
    cross_backward(&tp.s_j, &tp.s_i, &tp.sb_j, &gr_j.scale(-1.0), &mut gs_j, &mut gs_i)?;

    // Feature maps and token projections.
    let ga_i = gs_i.hadamard(&tp.a_i.map(feature_map_deriv))?;
    let ga_j = gs_j.hadamard(&tp.a_j.map(feature_map_deriv))?;
    g.proj_i = s.tr_matmul(&ga_i)?;
    g.proj_j = s.tr_matmul(&ga_j)?;
    gs.add_scaled(1.0, &ga_i.matmul(&p.proj_i.transpose())?);
    gs.add_scaled(1.0, &ga_j.matmul(&p.proj_j.transpose())?);
    Ok((loss, g, gs))
}

/// Largest relative error between [`block_grad`] and central differences over every parameter.
pub fn block_grad_check(p: &DBAParams, s: &Matrix, target: &Matrix, lambda_orth: f64) -> Result<f64> {
    let (_, g, _) = block_grad(p, s, target, lambda_orth)?;
    let x = p.to_flat();
    let numeric = gradcheck::central_diff(
        |v| p.with_flat(v).and_then(|q| block_loss(&q, s, target, lambda_orth)).unwrap_or(f64::NAN),
        &x,
        gradcheck::FD_STEP,
    );
    Ok(gradcheck::max_rel_error(&g.to_flat(), &numeric))
}

/// Row-major `T×C` view of a flat sample.
pub fn to_sequence(v: &[f64], tokens: usize, channels: usize) -> Result<Matrix> {
    if v.len() != tokens * channels {
        return Err(Error::DimensionMismatch(format!("sample of length {} is not {tokens}×{channels}", v.len())));
    }
    Matrix::from_vec(tokens, channels, v.to_vec())
}

/// Two random 2-D subspaces of `R^{T·C}`, `per_class` Gaussian samples each.
pub fn toy_spec(cfg: &DBAConfig, per_class: usize, noise_sigma: f64) -> Result<SyntheticSpec> {
    cfg.validate()?;
    let dim = cfg.tokens * cfg.channels;
    let components = (0..2u64)
        .map(|k| {
            let mut r = rng::stream(cfg.seed, k, 0, tag::USER + 1);
            let raw = Matrix::from_vec(dim, 2, rng::gaussian_vec(&mut r, dim * 2))?;
            Ok(ComponentSpec { basis: numerics::orthonormalize(&raw)?, count: per_class, coefficients: Default::default() })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = SyntheticSpec { ambient_dim: dim, components, noise_sigma, seed: cfg.seed };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DBAHistory {
    /// Mean `J_orth` over the data before each step and after the last.
    pub j_orth: Vec<f64>,
    /// Mean training loss at the same points.
    pub loss: Vec<f64>,
    pub params: DBAParams,
}

/// Full-batch gradient descent on `mean_n ‖block(S_n) − Norm(mean of class(n))‖² + λ·J_orth`.
pub fn train_toy(cfg: &DBAConfig, data: &Dataset, steps: usize, step_size: f64) -> Result<DBAHistory> {
    cfg.validate()?;
    if !(step_size >= 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidConfig(format!("step_size {step_size} must be finite and ≥ 0")));
    }
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let seqs = data
        .samples
        .iter()
        .map(|v| to_sequence(v, cfg.tokens, cfg.channels))
        .collect::<Result<Vec<_>>>()?;
    let classes = data.labels.iter().max().map_or(0, |m| m + 1);
    let mut targets = Vec::with_capacity(classes);
    for k in 0..classes {
        let mut sum = Matrix::zeros(cfg.tokens, cfg.channels);
        let mut n = 0usize;
        for (s, &l) in seqs.iter().zip(&data.labels) {
            if l == k {
                sum.add_scaled(1.0, s);
                n += 1;
            }
        }
        targets.push(token_norm(&sum.scale(1.0 / n.max(1) as f64)).0);
    }
    let mut p = DBAParams::init(cfg)?;
    let mut hist = DBAHistory { j_orth: Vec::with_capacity(steps + 1), loss: Vec::with_capacity(steps + 1), params: p.clone() };
    let inv = 1.0 / seqs.len() as f64;
    for step in 0..=steps {
        let mut loss = 0.0;
        let mut j = 0.0;
        let mut acc = vec![0.0; p.num_params()];
        for (s, &l) in seqs.iter().zip(&data.labels) {
            let (li, gi, _) = block_grad(&p, s, &targets[l], cfg.lambda_orth)?;
            loss += li * inv;
            j += block_forward(&p, s)?.1 * inv;
            numerics::axpy(&mut acc, inv, &gi.to_flat());
        }
        if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss });
        }
        hist.loss.push(loss);
        hist.j_orth.push(j);
        if step == steps {
            break;
        }
        let mut flat = p.to_flat();
        numerics::axpy(&mut flat, -step_size, &acc);
        p = p.with_flat(&flat)?;
    }
    hist.params = p;
    Ok(hist)
}
