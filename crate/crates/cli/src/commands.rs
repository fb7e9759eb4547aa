//! Subcommand bodies. Every run resolves its seed and output directory, computes results
//! (fanning trials over a thread pool when asked), then writes files in trial order.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use poslab::autoenc::{self, auroc, compactness_metrics, forward, recon_scores, AEParams, F1Report};
use poslab::complexity::{self, greedy_cover, niyogi_bound, union_cover_audit, ComplexitySpec};
use poslab::dba::{self, DBAConfig};
use poslab::datagen::gen_union;
use poslab::dictionary::{self, Diagnostics};
use poslab::folding::{self, mean_fold_loss, planar_angle, to_isometry, train_fold, TransformParams};
use poslab::intersect::{coupled_refine, intersect_loss, residual_decompose, Branch};
use poslab::projector::project_union;
use poslab::rng::derive_seed;
use poslab::{Dataset, Matrix, SyntheticSpec, Vector};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{self, *};
use crate::output::{coords, trial_prefix, Cell, Csv, Output};
use crate::{svg, CliError, Command, RunArgs};

/// Seed index reserved for anomaly sets so they never coincide with a trial's data.
const ANOMALY_STREAM: u64 = u64::MAX;

pub fn run(cmd: &Command) -> anyhow::Result<()> {
    let args = cmd.args();
    log::info!("{} with config {}", cmd.name(), args.config.display());
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Project(a) => project(a),
        Command::TrainAe(a) => train_ae(a),
        Command::Fold(a) => fold(a),
        Command::Intersect(a) => intersect(a),
        Command::Dba(a) => dba_cmd(a),
        Command::Complexity(a) => complexity_cmd(a),
    }
}

/// Settings shared by every run: resolved seed, config directory, raw config and output.
struct Run {
    seed: u64,
    base: PathBuf,
    raw: serde_json::Value,
    jobs: usize,
    out: Output,
}

trait Common {
    fn seed(&self) -> u64;
    fn out(&self) -> Option<&Path>;
}

macro_rules! common {
    ($($t:ty),*) => {$(
        impl Common for $t {
            fn seed(&self) -> u64 {
                self.seed
            }
            fn out(&self) -> Option<&Path> {
                self.out.as_deref()
            }
        }
    )*};
}

common!(GenConfig, DiagnoseConfig, ProjectConfig, TrainAeConfig, FoldCmdConfig, IntersectCmdConfig, DbaCmdConfig, ComplexityCmdConfig);

fn start<T: DeserializeOwned + Common>(args: &RunArgs) -> anyhow::Result<(T, Run)> {
    let (raw, cfg): (serde_json::Value, T) = config::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed());
    let base = config::base_dir(&args.config);
    let out_dir = match (&args.out, cfg.out()) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CliError::Usage("no output directory: pass --out or set `out`".into()).into()),
    };
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()).into());
    }
    log::debug!("seed {seed}, output {}", out_dir.display());
    let out = Output::create(&out_dir)?;
    Ok((cfg, Run { seed, base, raw, jobs: args.jobs, out }))
}

/// Runs `f(trial, seed)` for every trial on `jobs` threads; results come back in trial order.
fn run_trials<T: Send>(
    trials: usize,
    seed: u64,
    jobs: usize,
    f: impl Fn(usize, u64) -> anyhow::Result<T> + Sync + Send,
) -> anyhow::Result<Vec<T>> {
    if trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("building the worker pool")?;
    pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let s = derive_seed(seed, t as u64);
                log::info!("trial {t} seed {s}");
                f(t, s)
            })
            .collect()
    })
}

fn opt_f(x: Option<f64>) -> Cell {
    Cell::F(x.unwrap_or(f64::NAN))
}

fn gen(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (GenConfig, _) = start(args)?;
    cfg.spec.validate()?;
    let sets = run_trials(cfg.trials, run.seed, run.jobs, |_, s| Ok(gen_union(&SyntheticSpec { seed: s, ..cfg.spec.clone() })?))?;
    for (t, data) in sets.iter().enumerate() {
        let pre = trial_prefix(cfg.trials, t);
        run.out.write(&format!("{pre}dataset.csv"), data.to_csv().as_bytes())?;
        if cfg.plot {
            run.out.write(&format!("{pre}plot.svg"), svg::scatter("samples", &data.samples, &data.labels, None).as_bytes())?;
        }
    }
    run.out.finish("gen", run.seed, &run.raw)?;
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseReport {
    ambient_dim: usize,
    num_atoms: usize,
    orders: Vec<usize>,
    #[serde(flatten)]
    diagnostics: Diagnostics,
}

fn diagnose(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (DiagnoseConfig, _) = start(args)?;
    let d = cfg.dictionary.load(&run.base)?;
    let diagnostics = dictionary::diagnose(&d, &cfg.orders)?;
    let report = DiagnoseReport { ambient_dim: d.ambient_dim(), num_atoms: d.num_atoms(), orders: cfg.orders.clone(), diagnostics };
    run.out.json("report.json", &report)?;
    run.out.finish("diagnose", run.seed, &run.raw)?;
    Ok(())
}

#[derive(Serialize)]
struct ProjectReport {
    samples: usize,
    mean_distance: f64,
    max_distance: f64,
    ties: usize,
    /// Samples assigned to each component.
    assignments: Vec<usize>,
}

fn project(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (ProjectConfig, _) = start(args)?;
    let p = cfg.projector.load(&run.base)?;
    let data = cfg.data.load(&run.base, run.seed)?;
    let n = data.dim();
    let header: Vec<String> = ["index", "label", "component", "distance", "is_tie"].iter().map(|s| s.to_string()).chain(coords("p", n)).collect();
    let mut csv = Csv::new(&header);
    let mut report = ProjectReport { samples: data.len(), mean_distance: 0.0, max_distance: 0.0, ties: 0, assignments: vec![0; p.len()] };
    let mut points = Vec::with_capacity(data.len());
    for (i, (s, &l)) in data.samples.iter().zip(&data.labels).enumerate() {
        let r = project_union(&p, s)?;
        report.mean_distance += r.distance / data.len() as f64;
        report.max_distance = report.max_distance.max(r.distance);
        report.ties += r.is_tie as usize;
        report.assignments[r.component_index] += 1;
        csv.row(
            [Cell::U(i as u64), Cell::U(l as u64), Cell::U(r.component_index as u64), Cell::F(r.distance), Cell::B(r.is_tie)]
                .into_iter()
                .chain(r.point.iter().map(|&x| Cell::F(x))),
        );
        points.push(r.point);
    }
    run.out.write("projections.csv", &csv.into_bytes())?;
    run.out.json("metrics.json", &report)?;
    if cfg.plot {
        run.out.write("plot.svg", svg::scatter("samples and projections", &data.samples, &data.labels, Some(&points)).as_bytes())?;
    }
    run.out.finish("project", run.seed, &run.raw)?;
    Ok(())
}

#[derive(Serialize)]
struct AeMetrics {
    seed: u64,
    steps: usize,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    grad_check_max_rel_err: f64,
    mean_recon_error: f64,
    mean_off_union_residual: Option<f64>,
    assignment_accuracy: Option<f64>,
    anomaly_auroc: Option<f64>,
    anomaly_f1: Option<F1Report>,
}

struct AeTrial {
    data: Dataset,
    init: AEParams,
    report: autoenc::TrainReport,
    recon: Vec<Vector>,
    recon_error: Vec<f64>,
    off_union: Option<Vec<f64>>,
    metrics: AeMetrics,
}

fn train_ae(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (TrainAeConfig, _) = start(args)?;
    let truth = cfg.truth.as_ref().map(|t| t.load(&run.base)).transpose()?;
    let base = run.base.clone();
    let trials = run_trials(cfg.trials, run.seed, run.jobs, |_, seed| {
        let data = cfg.data.load(&base, seed)?;
        let m = &cfg.model;
        let mut init = AEParams::init(data.dim(), m.latent_dim, m.tied, m.activation, m.skip, seed)?;
        if m.orient_to_data {
            init.orient_to_data(&data);
        }
        let train_cfg = autoenc::TrainConfig { seed, ..cfg.train.clone() };
        let report = autoenc::train(&init, &train_cfg, &data)?;
        let p = &report.final_params;
        let recon = data.samples.iter().map(|s| Ok(forward(p, s)?.1)).collect::<anyhow::Result<Vec<_>>>()?;
        let anomalies = cfg.anomalies.as_ref().map(|a| a.load(&base, derive_seed(seed, ANOMALY_STREAM))).transpose()?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut metrics = AeMetrics {
            seed,
            steps: train_cfg.steps,
            initial_loss: report.loss_history.first().copied(),
            final_loss: report.loss_history.last().copied(),
            grad_check_max_rel_err: report.grad_check_max_rel_err,
            mean_recon_error: 0.0,
            mean_off_union_residual: None,
            assignment_accuracy: None,
            anomaly_auroc: None,
            anomaly_f1: None,
        };
        let (recon_error, off_union) = match &truth {
            Some(u) => {
                let c = compactness_metrics(p, &data, u, anomalies.as_ref())?;
                metrics.mean_off_union_residual = Some(c.mean_off_union_residual);
                metrics.assignment_accuracy = Some(c.assignment_accuracy);
                metrics.anomaly_auroc = c.anomaly_auroc;
                metrics.anomaly_f1 = c.anomaly_f1;
                (c.recon_error, Some(c.off_union_residual))
            }
            None => {
                let e = recon_scores(p, &data)?;
                if let Some(a) = &anomalies {
                    metrics.anomaly_auroc = Some(auroc(&e, &recon_scores(p, a)?));
                }
                (e, None)
            }
        };
        metrics.mean_recon_error = mean(&recon_error);
        Ok(AeTrial { data, init, report, recon, recon_error, off_union, metrics })
    })?;
    let mut summary = Csv::new(&["trial", "seed", "final_loss", "mean_recon_error", "mean_off_union_residual", "anomaly_auroc"].map(String::from));
    for (t, tr) in trials.iter().enumerate() {
        let pre = trial_prefix(cfg.trials, t);
        run.out.json(&format!("{pre}init.json"), &tr.init)?;
        run.out.json(&format!("{pre}checkpoint.json"), &tr.report.final_params)?;
        let mut hist = Csv::new(&["step", "loss"].map(String::from));
        for (i, l) in tr.report.loss_history.iter().enumerate() {
            hist.row([Cell::U(i as u64), Cell::F(*l)]);
        }
        run.out.write(&format!("{pre}history.csv"), &hist.into_bytes())?;
        let mut scores = Csv::new(&["index", "label", "recon_error", "off_union_residual"].map(String::from));
        for (i, (&l, &e)) in tr.data.labels.iter().zip(&tr.recon_error).enumerate() {
            scores.row([Cell::U(i as u64), Cell::U(l as u64), Cell::F(e), opt_f(tr.off_union.as_ref().map(|o| o[i]))]);
        }
        run.out.write(&format!("{pre}scores.csv"), &scores.into_bytes())?;
        run.out.json(&format!("{pre}metrics.json"), &tr.metrics)?;
        if cfg.plot {
            let plot = svg::scatter("samples and reconstructions", &tr.data.samples, &tr.data.labels, Some(&tr.recon));
            run.out.write(&format!("{pre}plot.svg"), plot.as_bytes())?;
        }
        let m = &tr.metrics;
        summary.row([Cell::U(t as u64), Cell::U(m.seed), opt_f(m.final_loss), Cell::F(m.mean_recon_error), opt_f(m.mean_off_union_residual), opt_f(m.anomaly_auroc)]);
    }
    if cfg.trials > 1 {
        run.out.write("summary.csv", &summary.into_bytes())?;
    }
    run.out.finish("train-ae", run.seed, &run.raw)?;
    Ok(())
}

#[derive(Serialize)]
struct FoldMetrics {
    initial_loss: f64,
    final_loss: f64,
    tie_count: usize,
    rotation: Matrix,
    offset: Vector,
    /// Counter-clockwise angle of a planar rotation.
    angle: Option<f64>,
}

fn fold(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (FoldCmdConfig, _) = start(args)?;
    let p = cfg.projector.load(&run.base)?;
    let data = cfg.data.load(&run.base, run.seed)?;
    let n = data.dim();
    let init = TransformParams::new(Matrix::zeros(n, n), cfg.learn_offset, vec![0.0; n])?;
    let initial_loss = mean_fold_loss(&init, &p, &data)?;
    let rep = train_fold(&init, &p, &data, &cfg.fold)?;
    let folded = folding::translate(&rep.params, &data)?;
    let iso = to_isometry(&rep.params);
    let metrics = FoldMetrics {
        initial_loss,
        final_loss: mean_fold_loss(&rep.params, &p, &data)?,
        tie_count: rep.tie_count,
        rotation: iso.rotation().clone(),
        offset: iso.offset().to_vec(),
        angle: (n == 2).then(|| planar_angle(iso.rotation())),
    };
    run.out.json("transform.json", &rep.params)?;
    let mut hist = Csv::new(&["step", "loss"].map(String::from));
    for (i, l) in rep.loss_history.iter().enumerate() {
        hist.row([Cell::U(i as u64), Cell::F(*l)]);
    }
    run.out.write("history.csv", &hist.into_bytes())?;
    run.out.write("folded.csv", folded.to_csv().as_bytes())?;
    run.out.json("metrics.json", &metrics)?;
    if cfg.plot {
        run.out.write("plot.svg", svg::scatter("samples and folded samples", &data.samples, &data.labels, Some(&folded.samples)).as_bytes())?;
    }
    run.out.finish("fold", run.seed, &run.raw)?;
    Ok(())
}

#[derive(Serialize)]
struct IntersectReport {
    samples: usize,
    converged: usize,
    degenerate: usize,
    max_iterations: usize,
    mean_recon_residual: f64,
    mean_loss: f64,
}

fn intersect(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (IntersectCmdConfig, _) = start(args)?;
    let pi = cfg.branch_i.load(&run.base)?;
    let pj = cfg.branch_j.load(&run.base)?;
    let data = cfg.data.load(&run.base, run.seed)?;
    let header: Vec<String> = ["index", "label", "iterations", "gap", "converged", "degenerate", "recon_residual", "loss"]
        .iter()
        .map(|s| s.to_string())
        .chain(coords("z", data.dim()))
        .collect();
    let mut table = Csv::new(&header);
    let mut gaps = Csv::new(&["index", "iteration", "gap"].map(String::from));
    let mut report = IntersectReport { samples: data.len(), converged: 0, degenerate: 0, max_iterations: 0, mean_recon_residual: 0.0, mean_loss: 0.0 };
    let inv = 1.0 / data.len() as f64;
    for (i, (s, &l)) in data.samples.iter().zip(&data.labels).enumerate() {
        let r = coupled_refine(&pi, &pj, s, &cfg.refine)?;
        let d = residual_decompose(s, &r.z_star, &pi, &pj)?;
        let branch = if l == 0 { Branch::I } else { Branch::J };
        let loss = intersect_loss(s, &r.z_star, &d.r_i, &d.r_j, branch, cfg.lambda);
        let iters = r.gap_history.len() - 1;
        report.converged += r.converged as usize;
        report.degenerate += d.degenerate as usize;
        report.max_iterations = report.max_iterations.max(iters);
        report.mean_recon_residual += d.recon_residual * inv;
        report.mean_loss += loss * inv;
        let last = *r.gap_history.last().expect("history holds the initial gap");
        table.row(
            [
                Cell::U(i as u64),
                Cell::U(l as u64),
                Cell::U(iters as u64),
                Cell::F(last),
                Cell::B(r.converged),
                Cell::B(d.degenerate),
                Cell::F(d.recon_residual),
                Cell::F(loss),
            ]
            .into_iter()
            .chain(r.z_star.iter().map(|&x| Cell::F(x))),
        );
        for (k, g) in r.gap_history.iter().enumerate() {
            gaps.row([Cell::U(i as u64), Cell::U(k as u64), Cell::F(*g)]);
        }
    }
    run.out.write("intersection.csv", &table.into_bytes())?;
    run.out.write("gaps.csv", &gaps.into_bytes())?;
    run.out.json("metrics.json", &report)?;
    run.out.finish("intersect", run.seed, &run.raw)?;
    Ok(())
}

#[derive(Serialize)]
struct DbaMetrics {
    seed: u64,
    initial_j_orth: f64,
    final_j_orth: f64,
    /// Final minus initial `J_orth`.
    drift: f64,
    initial_loss: f64,
    final_loss: f64,
}

fn dba_cmd(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (DbaCmdConfig, _) = start(args)?;
    let trials = run_trials(cfg.trials, run.seed, run.jobs, |_, seed| {
        let dcfg = DBAConfig { tokens: cfg.tokens, channels: cfg.channels, lambda_orth: cfg.lambda_orth, seed };
        let data = gen_union(&dba::toy_spec(&dcfg, cfg.per_class, cfg.noise_sigma)?)?;
        let h = dba::train_toy(&dcfg, &data, cfg.steps, cfg.step_size)?;
        let (j0, j1) = (h.j_orth[0], *h.j_orth.last().expect("history is never empty"));
        let metrics = DbaMetrics {
            seed,
            initial_j_orth: j0,
            final_j_orth: j1,
            drift: j1 - j0,
            initial_loss: h.loss[0],
            final_loss: *h.loss.last().expect("history is never empty"),
        };
        Ok((h, metrics))
    })?;
    let mut summary = Csv::new(&["trial", "seed", "initial_j_orth", "final_j_orth", "final_loss"].map(String::from));
    for (t, (h, m)) in trials.iter().enumerate() {
        let pre = trial_prefix(cfg.trials, t);
        let mut hist = Csv::new(&["step", "j_orth", "loss"].map(String::from));
        for (i, (j, l)) in h.j_orth.iter().zip(&h.loss).enumerate() {
            hist.row([Cell::U(i as u64), Cell::F(*j), Cell::F(*l)]);
        }
        run.out.write(&format!("{pre}history.csv"), &hist.into_bytes())?;
        run.out.json(&format!("{pre}params.json"), &h.params)?;
        run.out.json(&format!("{pre}metrics.json"), m)?;
        summary.row([Cell::U(t as u64), Cell::U(m.seed), Cell::F(m.initial_j_orth), Cell::F(m.final_j_orth), Cell::F(m.final_loss)]);
    }
    if cfg.trials > 1 {
        run.out.write("summary.csv", &summary.into_bytes())?;
    }
    run.out.finish("dba", run.seed, &run.raw)?;
    Ok(())
}

#[derive(Serialize)]
struct Layer {
    layer: usize,
    group_size: u64,
    /// `C_ε(M)·∏_{l ≤ layer} |G_l|`.
    classical_cumulative: u128,
    /// `|G_layer|·C_ε(M_i)`.
    dnn_term: u128,
}

#[derive(Serialize)]
struct UnionAudit {
    pooled: usize,
    sum_of_components: usize,
}

#[derive(Serialize)]
struct ComplexityReport {
    epsilon: f64,
    /// Greedy cover of the supplied samples.
    cover: Option<usize>,
    component_covers: Vec<usize>,
    union_audit: Option<UnionAudit>,
    cover_m: u64,
    cover_mi: u64,
    bound: Option<f64>,
    classical: u128,
    dnn: u128,
    layers: Vec<Layer>,
    note: &'static str,
}

const COMPLEXITY_NOTE: &str = "Constants hidden in the asymptotic counts and in the reach bound are set to 1. \
Greedy covers use data points as centers and are within a factor 2 of an optimal epsilon-net.";

fn complexity_cmd(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, mut run): (ComplexityCmdConfig, _) = start(args)?;
    let eps = cfg.epsilon;
    let data = cfg.data.as_ref().map(|d| d.load(&run.base, run.seed)).transpose()?;
    let mut cover = None;
    let mut component_covers = Vec::new();
    let mut audit = None;
    if let Some(d) = &data {
        cover = Some(greedy_cover(d, eps)?.count());
        let classes = d.labels.iter().max().map_or(0, |m| m + 1);
        let parts: Vec<Dataset> = (0..classes)
            .filter_map(|k| {
                let s: Vec<Vector> = d.samples.iter().zip(&d.labels).filter(|(_, &l)| l == k).map(|(s, _)| s.clone()).collect();
                (!s.is_empty()).then(|| Dataset::unlabeled(s))
            })
            .collect::<poslab::Result<_>>()?;
        for part in &parts {
            component_covers.push(complexity::covering_number(part, eps)?);
        }
        let (pooled, sum_of_components) = union_cover_audit(&parts, eps)?;
        audit = Some(UnionAudit { pooled, sum_of_components });
    }
    let missing = |what: &str| CliError::Usage(format!("{what} needs either an explicit value or `data`"));
    let cover_m = cfg.cover_m.or(cover.map(|c| c as u64)).ok_or_else(|| missing("cover_m"))?;
    let cover_mi = cfg.cover_mi.or(component_covers.iter().max().map(|&c| c as u64)).ok_or_else(|| missing("cover_mi"))?;
    let spec = ComplexitySpec {
        cover_m,
        cover_mi,
        group_sizes: cfg.group_sizes.clone(),
        num_components: component_covers.len().max(1) as u64,
    };
    let classical = complexity::n_classical(&spec)?;
    let dnn = complexity::n_dnn(&spec)?;
    let mut acc = cover_m as u128;
    let mut layers = Vec::with_capacity(spec.group_sizes.len());
    for (l, &g) in spec.group_sizes.iter().enumerate() {
        acc = acc.checked_mul(g as u128).ok_or(poslab::Error::Overflow("n_classical"))?;
        layers.push(Layer { layer: l, group_size: g, classical_cumulative: acc, dnn_term: g as u128 * cover_mi as u128 });
    }
    let bound = cfg.reach.map(|r| niyogi_bound(&r.with_epsilon(eps))).transpose()?;
    let report = ComplexityReport {
        epsilon: eps,
        cover,
        component_covers,
        union_audit: audit,
        cover_m,
        cover_mi,
        bound,
        classical,
        dnn,
        layers,
        note: COMPLEXITY_NOTE,
    };
    run.out.json("report.json", &report)?;
    run.out.finish("complexity", run.seed, &run.raw)?;
    Ok(())
}
