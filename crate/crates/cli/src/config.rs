//! JSON run configurations. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use poslab::autoenc::{Activation, Skip, TrainConfig};
use poslab::complexity::ReachSpec;
use poslab::folding::FoldConfig;
use poslab::intersect::RefineConfig;
use poslab::{Dataset, Dictionary, SyntheticSpec, UnionProjector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A value given inline or as a path to a JSON file, relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    File(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    pub fn load(&self, base: &Path) -> Result<T, CliError> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::File(p) => {
                let path = base.join(p);
                let text = read(&path)?;
                serde_json::from_str(&text).map_err(|e| CliError::Config { path, message: e.to_string() })
            }
        }
    }
}

/// Samples from a headerless CSV file (label in the last column) or generated from a spec.
/// Generated samples use the run seed, not the seed inside the spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Csv(PathBuf),
    Generate(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self, base: &Path, seed: u64) -> anyhow::Result<Dataset> {
        match self {
            DataSource::Csv(p) => Ok(Dataset::from_csv(&read(&base.join(p))?)?),
            DataSource::Generate(spec) => Ok(poslab::datagen::gen_union(&SyntheticSpec { seed, ..spec.clone() })?),
        }
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_owned(), message: e.to_string() })
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub spec: SyntheticSpec,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default = "yes")]
    pub plot: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dictionary: Source<Dictionary>,
    /// Sparsity orders for the restricted isometry constants.
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
}

fn default_orders() -> Vec<usize> {
    vec![2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub projector: Source<UnionProjector>,
    pub data: DataSource,
    #[serde(default = "yes")]
    pub plot: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub tied: bool,
    pub activation: Activation,
    #[serde(default)]
    pub skip: Skip,
    /// Flip encoder rows so that no unit starts dead on the training data.
    #[serde(default = "yes")]
    pub orient_to_data: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainAeConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataSource,
    pub model: ModelConfig,
    /// The `seed` inside is replaced by the run seed.
    pub train: TrainConfig,
    /// Ground-truth union for off-union residuals and assignment accuracy.
    #[serde(default)]
    pub truth: Option<Source<UnionProjector>>,
    #[serde(default)]
    pub anomalies: Option<DataSource>,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default = "yes")]
    pub plot: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldCmdConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataSource,
    pub projector: Source<UnionProjector>,
    pub fold: FoldConfig,
    #[serde(default)]
    pub learn_offset: bool,
    #[serde(default = "yes")]
    pub plot: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectCmdConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub branch_i: Source<UnionProjector>,
    pub branch_j: Source<UnionProjector>,
    /// Label 0 marks branch `i`, any other label branch `j`.
    pub data: DataSource,
    #[serde(default)]
    pub refine: RefineConfig,
    /// Weight of the wrong-branch residual in the reported loss.
    #[serde(default = "unit")]
    pub lambda: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbaCmdConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub tokens: usize,
    pub channels: usize,
    pub lambda_orth: f64,
    pub per_class: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    pub steps: usize,
    pub step_size: f64,
    #[serde(default = "one")]
    pub trials: usize,
}

/// Reach data of the manifold; ε comes from the enclosing config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachConfig {
    pub volume: f64,
    pub k: u32,
    pub tau: f64,
}

impl ReachConfig {
    pub fn with_epsilon(&self, epsilon: f64) -> ReachSpec {
        ReachSpec { volume: self.volume, k: self.k, tau: self.tau, epsilon }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityCmdConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub epsilon: f64,
    /// Samples whose greedy cover supplies the covering numbers not given explicitly.
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default, alias = "cover_M")]
    pub cover_m: Option<u64>,
    #[serde(default, alias = "cover_Mi")]
    pub cover_mi: Option<u64>,
    #[serde(default)]
    pub group_sizes: Vec<u64>,
    #[serde(default)]
    pub reach: Option<ReachConfig>,
}

/// Parses a config file into both its raw JSON (echoed in the manifest) and the typed form.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(serde_json::Value, T), CliError> {
    let text = read(path)?;
    let bad = |e: serde_json::Error| CliError::Config { path: path.to_owned(), message: e.to_string() };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    let typed = serde_json::from_value(raw.clone()).map_err(bad)?;
    Ok((raw, typed))
}

pub fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}
