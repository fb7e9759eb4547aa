//! Small encoder/decoder models with hand-written gradients.
//!
//! `latent = act(E·u)`, `recon = D·latent` (or `u − D·latent` with a subtractive skip).
//! A tied model stores only `E` and uses `D = Eᵀ`.

mod metrics;

pub use metrics::{
    auroc, best_f1_threshold, compactness_metrics, f1_score, leakage_check, recon_scores, relu_selection_demo,
    CompactnessReport,
    F1Report,
};

use std::borrow::Cow;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, Dataset};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::numerics::{self, Matrix, Vector};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skip {
    #[default]
    None,
    Subtract,
}

/// Encoder/decoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct AEParams {
    enc: Matrix,
    dec: Option<Matrix>,
    pub activation: Activation,
    pub skip: Skip,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    input_dim: usize,
    latent_dim: usize,
    tied: bool,
    activation: Activation,
    #[serde(default)]
    skip: Skip,
    enc: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dec: Option<Matrix>,
}

impl TryFrom<ParamsRepr> for AEParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<Self> {
        let p = match (r.tied, r.dec) {
            (true, None) => AEParams::tied(r.enc, r.activation, r.skip),
            (false, Some(dec)) => AEParams::untied(r.enc, dec, r.activation, r.skip)?,
            (true, Some(_)) => return Err(Error::InvalidConfig("tied model must not carry a decoder".into())),
            (false, None) => return Err(Error::InvalidConfig("untied model needs a decoder".into())),
        };
        if p.input_dim() != r.input_dim || p.latent_dim() != r.latent_dim {
            return Err(Error::DimensionMismatch(format!(
                "declared {}x{} but weights are {:?}",
                r.latent_dim,
                r.input_dim,
                p.enc.shape()
            )));
        }
        Ok(p)
    }
}

impl From<AEParams> for ParamsRepr {
    fn from(p: AEParams) -> Self {
        ParamsRepr {
            input_dim: p.input_dim(),
            latent_dim: p.latent_dim(),
            tied: p.is_tied(),
            activation: p.activation,
            skip: p.skip,
            enc: p.enc,
            dec: p.dec,
        }
    }
}

impl AEParams {
    pub fn tied(enc: Matrix, activation: Activation, skip: Skip) -> Self {
        AEParams { enc, dec: None, activation, skip }
    }

    pub fn untied(enc: Matrix, dec: Matrix, activation: Activation, skip: Skip) -> Result<Self> {
        if dec.shape() != (enc.cols(), enc.rows()) {
            return Err(Error::DimensionMismatch(format!("encoder {:?} with decoder {:?}", enc.shape(), dec.shape())));
        }
        Ok(AEParams { enc, dec: Some(dec), activation, skip })
    }

    /// Encoder with orthonormal rows (or orthonormal columns when `latent > input`) from a
    /// QR of a Gaussian draw; an untied decoder starts at `Eᵀ`.
    pub fn init(
        input_dim: usize,
        latent_dim: usize,
        tied: bool,
        activation: Activation,
        skip: Skip,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        let (r, c) = if latent_dim <= input_dim { (input_dim, latent_dim) } else { (latent_dim, input_dim) };
        let mut g = rng::stream(seed, 0, 0, tag::INIT);
        let data = rng::gaussian_vec(&mut g, r * c);
        let q = numerics::orthonormalize(&Matrix::from_vec(r, c, data)?)?;
        let enc = if latent_dim <= input_dim { q.transpose() } else { q };
        Ok(if tied {
            AEParams::tied(enc, activation, skip)
        } else {
            let dec = enc.transpose();
            AEParams { enc, dec: Some(dec), activation, skip }
        })
    }

    pub fn is_tied(&self) -> bool {
        self.dec.is_none()
    }

    pub fn enc(&self) -> &Matrix {
        &self.enc
    }

    pub fn dec(&self) -> Cow<'_, Matrix> {
        match &self.dec {
            Some(d) => Cow::Borrowed(d),
            None => Cow::Owned(self.enc.transpose()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc.rows()
    }

    /// Flips encoder rows whose mean pre-activation over `data` is negative (and the matching
    /// decoder columns). Output of a linear model is unchanged; for ReLU it keeps units from
    /// starting dead on the training data.
    pub fn orient_to_data(&mut self, data: &Dataset) {
        let n_lat = self.latent_dim();
        for i in 0..n_lat {
            let mean: f64 = data.samples.iter().map(|s| numerics::dot(self.enc.row(i), s)).sum::<f64>();
            if mean < 0.0 {
                self.enc.row_mut(i).iter_mut().for_each(|x| *x = -*x);
                if let Some(d) = &mut self.dec {
                    for r in 0..d.rows() {
                        d[(r, i)] = -d[(r, i)];
                    }
                }
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.enc.as_slice().len() + self.dec.as_ref().map_or(0, |d| d.as_slice().len())
    }

    /// Encoder entries, then decoder entries when untied.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.enc.as_slice().to_vec();
        if let Some(d) = &self.dec {
            v.extend_from_slice(d.as_slice());
        }
        v
    }

    pub fn with_flat(&self, flat: &[f64]) -> AEParams {
        let mut p = self.clone();
        let ne = p.enc.as_slice().len();
        p.enc.as_mut_slice().copy_from_slice(&flat[..ne]);
        if let Some(d) = &mut p.dec {
            d.as_mut_slice().copy_from_slice(&flat[ne..]);
        }
        p
    }
}

/// Gradient with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub enc: Matrix,
    pub dec: Option<Matrix>,
}

impl Grads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.enc.as_slice().to_vec();
        if let Some(d) = &self.dec {
            v.extend_from_slice(d.as_slice());
        }
        v
    }
}

/// `(latent, recon)` for one sample.
pub fn forward(p: &AEParams, s: &[f64]) -> Result<(Vector, Vector)> {
    let c = Cache::new(p, &p.dec(), s)?;
    Ok((c.latent, c.recon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    Plain,
    /// Input masked with a random window of length in `[wmin, wmax]`; target is the clean sample.
    Masked { wmin: usize, wmax: usize },
    /// `λ1‖ŝ − s‖² + λ2‖ŝ_b − s‖² − λ3‖x − x_b‖²`, with `_b` the blurred input.
    PushPull { lambda1: f64, lambda2: f64, lambda3: f64, blur_sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub steps: usize,
    /// Mini-batch size; 0 means full batch.
    #[serde(default)]
    pub batch: usize,
    pub objective: Objective,
    #[serde(default)]
    pub seed: u64,
    /// Heavy-ball momentum 0.9.
    #[serde(default)]
    pub momentum: bool,
}

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.step_size) {
            return bad(format!("step_size {} outside [0, 1]", self.step_size));
        }
        match self.objective {
            Objective::Plain => {}
            Objective::Masked { wmin, wmax } => {
                if wmin == 0 || wmin > wmax {
                    return bad(format!("mask bounds [{wmin}, {wmax}] need 1 <= wmin <= wmax"));
                }
            }
            Objective::PushPull { lambda1, lambda2, lambda3, blur_sigma } => {
                if [lambda1, lambda2, lambda3].iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return bad("push-pull weights must be finite and >= 0".into());
                }
                if !(blur_sigma > 0.0 && blur_sigma.is_finite()) {
                    return bad(format!("push-pull needs blur_sigma > 0, got {blur_sigma}"));
                }
            }
        }
        Ok(())
    }
}

struct Cache {
    pre: Vector,
    latent: Vector,
    recon: Vector,
}

impl Cache {
    fn new(p: &AEParams, dec: &Matrix, u: &[f64]) -> Result<Cache> {
        let pre = p.enc.matvec(u)?;
        let latent: Vector = match p.activation {
            Activation::Linear => pre.clone(),
            Activation::Relu => pre.iter().map(|&x| x.max(0.0)).collect(),
        };
        let dl = dec.matvec(&latent)?;
        let recon = match p.skip {
            Skip::None => dl,
            Skip::Subtract => numerics::sub(u, &dl),
        };
        Ok(Cache { pre, latent, recon })
    }
}

struct Accum {
    enc: Matrix,
    dec: Matrix,
}

impl Accum {
    /// Backpropagates `dL/d latent` through the activation into the encoder.
    fn latent(&mut self, p: &AEParams, u: &[f64], c: &Cache, mut dlat: Vector) {
        if p.activation == Activation::Relu {
            for (d, &z) in dlat.iter_mut().zip(&c.pre) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        for (i, &d) in dlat.iter().enumerate() {
            if d != 0.0 {
                numerics::axpy(self.enc.row_mut(i), d, u);
            }
        }
    }

    /// Backpropagates `dL/d recon`.
    fn recon(&mut self, p: &AEParams, dec: &Matrix, u: &[f64], c: &Cache, g: &[f64]) {
        let sign = match p.skip {
            Skip::None => 1.0,
            Skip::Subtract => -1.0,
        };
        for (r, &gr) in g.iter().enumerate() {
            numerics::axpy(self.dec.row_mut(r), sign * gr, &c.latent);
        }
        let dlat = numerics::scale(&dec.tr_matvec(g).expect("shapes checked"), sign);
        self.latent(p, u, c, dlat);
    }
}

fn degrade_mask(s: &[f64], wmin: usize, wmax: usize, seed: u64, draw: u64, idx: usize) -> Result<Vector> {
    let mut r = rng::stream(seed, draw, idx as u64, tag::MASK);
    Ok(datagen::random_mask(s, wmin, wmax, &mut r)?.0)
}

fn evaluate(p: &AEParams, cfg: &TrainConfig, data: &Dataset, idx: &[usize], draw: u64, want_grad: bool) -> Result<(f64, Option<Grads>)> {
    cfg.validate()?;
    if data.dim() != p.input_dim() {
        return Err(Error::DimensionMismatch(format!("data in R^{} for a model on R^{}", data.dim(), p.input_dim())));
    }
    if idx.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let dec = p.dec();
    let mut acc = Accum { enc: Matrix::zeros(p.latent_dim(), p.input_dim()), dec: Matrix::zeros(p.input_dim(), p.latent_dim()) };
    let mut total = 0.0;
    for &i in idx {
        let s = &data.samples[i];
        match cfg.objective {
            Objective::Plain | Objective::Masked { .. } => {
                let u = match cfg.objective {
                    Objective::Masked { wmin, wmax } => degrade_mask(s, wmin, wmax, cfg.seed, draw, i)?,
                    _ => s.clone(),
                };
                let c = Cache::new(p, &dec, &u)?;
                let r = numerics::sub(&c.recon, s);
                total += numerics::norm_sq(&r);
                if want_grad {
                    acc.recon(p, &dec, &u, &c, &numerics::scale(&r, 2.0));
                }
            }
            Objective::PushPull { lambda1, lambda2, lambda3, blur_sigma } => {
                let sb = datagen::blur1d(s, blur_sigma);
                let c = Cache::new(p, &dec, s)?;
                let cb = Cache::new(p, &dec, &sb)?;
                let r = numerics::sub(&c.recon, s);
                let rb = numerics::sub(&cb.recon, s);
                let gap = numerics::sub(&c.latent, &cb.latent);
                total += lambda1 * numerics::norm_sq(&r) + lambda2 * numerics::norm_sq(&rb) - lambda3 * numerics::norm_sq(&gap);
                if want_grad {
                    acc.recon(p, &dec, s, &c, &numerics::scale(&r, 2.0 * lambda1));
                    acc.recon(p, &dec, &sb, &cb, &numerics::scale(&rb, 2.0 * lambda2));
                    if lambda3 != 0.0 {
                        acc.latent(p, s, &c, numerics::scale(&gap, -2.0 * lambda3));
                        acc.latent(p, &sb, &cb, numerics::scale(&gap, 2.0 * lambda3));
                    }
                }
            }
        }
    }
    let m = idx.len() as f64;
    let grads = want_grad.then(|| {
        let mut enc = acc.enc.scale(1.0 / m);
        let dec = acc.dec.scale(1.0 / m);
        if p.is_tied() {
            enc.add_scaled(1.0, &dec.transpose());
            Grads { enc, dec: None }
        } else {
            Grads { enc, dec: Some(dec) }
        }
    });
    Ok((total / m, grads))
}

/// Batch-mean objective. `draw` selects the degradation draw (mask windows), so the same
/// `draw` always sees the same masks.
pub fn loss(p: &AEParams, cfg: &TrainConfig, batch: &Dataset, draw: u64) -> Result<f64> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(evaluate(p, cfg, batch, &idx, draw, false)?.0)
}

/// Exact gradient of [`loss`] (ReLU derivative taken as 0 at 0). For tied models the
/// encoder and transposed decoder contributions are summed.
pub fn grad(p: &AEParams, cfg: &TrainConfig, batch: &Dataset, draw: u64) -> Result<(f64, Grads)> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (l, g) = evaluate(p, cfg, batch, &idx, draw, true)?;
    Ok((l, g.expect("requested")))
}

/// Central-difference check of [`grad`] at `p`; returns the max relative error.
///
/// Coordinates are all parameters when there are at most `max_coords`, otherwise an evenly
/// strided subset.
pub fn check_grad(p: &AEParams, cfg: &TrainConfig, data: &Dataset, draw: u64, max_coords: usize) -> Result<f64> {
    let (_, g) = grad(p, cfg, data, draw)?;
    let analytic = g.to_flat();
    let flat = p.to_flat();
    let stride = flat.len().div_ceil(max_coords.max(1));
    let coords: Vec<usize> = (0..flat.len()).step_by(stride).collect();
    let mut numeric = Vec::with_capacity(coords.len());
    let mut probe = flat.clone();
    for &c in &coords {
        let x0 = probe[c];
        let at = |x: f64, probe: &mut Vec<f64>| {
            probe[c] = x;
            loss(&p.with_flat(probe), cfg, data, draw)
        };
        let up = at(x0 + gradcheck::FD_STEP, &mut probe)?;
        let down = at(x0 - gradcheck::FD_STEP, &mut probe)?;
        probe[c] = x0;
        numeric.push((up - down) / (2.0 * gradcheck::FD_STEP));
    }
    let picked: Vec<f64> = coords.iter().map(|&c| analytic[c]).collect();
    Ok(gradcheck::max_rel_error(&picked, &numeric))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub final_params: AEParams,
    pub grad_check_max_rel_err: f64,
}

/// Gradient descent with a fixed step. `loss_history[t]` is the batch loss before update `t`.
pub fn train(init: &AEParams, cfg: &TrainConfig, data: &Dataset) -> Result<TrainReport> {
    cfg.validate()?;
    let grad_check_max_rel_err = check_grad(init, cfg, data, 0, 256)?;
    let mut p = init.clone();
    let mut velocity = vec![0.0; p.num_params()];
    let mut history = Vec::with_capacity(cfg.steps);
    let all: Vec<usize> = (0..data.len()).collect();
    for step in 0..cfg.steps {
        let idx = if cfg.batch == 0 || cfg.batch >= data.len() {
            Cow::Borrowed(&all)
        } else {
            let mut r = rng::stream(cfg.seed, step as u64, 0, tag::BATCH);
            let mut v = index::sample(&mut r, data.len(), cfg.batch).into_vec();
            v.sort_unstable();
            Cow::Owned(v)
        };
        let (l, g) = evaluate(&p, cfg, data, &idx, step as u64, true)?;
        if !l.is_finite() || l.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss: l });
        }
        history.push(l);
        let g = g.expect("requested").to_flat();
        let mut flat = p.to_flat();
        for ((x, v), gi) in flat.iter_mut().zip(velocity.iter_mut()).zip(&g) {
            *v = if cfg.momentum { 0.9 * *v + gi } else { *gi };
            *x -= cfg.step_size * *v;
        }
        p = p.with_flat(&flat);
    }
    Ok(TrainReport { loss_history: history, final_params: p, grad_check_max_rel_err })
}
