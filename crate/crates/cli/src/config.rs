//! JSON configuration files for each subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emsm_core::bounds::DiscreteDist;
use emsm_core::data::ColumnRoles;
use emsm_core::fit::{DesignSpec, LassoConfig};
use emsm_core::synthetic::{DvKind, SyntheticDgp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A parsed configuration together with the SHA-256 of its raw bytes and the
/// directory used to resolve relative paths.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub sha256: String,
    pub dir: PathBuf,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let value = serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { value, sha256, dir })
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    ContinuousNonneg,
    Continuous,
}

impl OutcomeKind {
    /// Whether ratio estimands are reported.
    pub fn with_ratio(&self) -> bool {
        !matches!(self, OutcomeKind::Continuous)
    }

    pub fn check(&self, y: &[f64]) -> Result<()> {
        match self {
            OutcomeKind::Binary => {
                if let Some(i) = y.iter().position(|v| *v != 0.0 && *v != 1.0) {
                    bail!("outcome declared binary but row {} has value {}", i + 1, y[i]);
                }
            }
            OutcomeKind::ContinuousNonneg => {
                if let Some(i) = y.iter().position(|v| *v < 0.0) {
                    bail!("outcome declared nonnegative but row {} has value {}", i + 1, y[i]);
                }
            }
            OutcomeKind::Continuous => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnalysisMethod {
    Cal,
    Rcal,
    Dv,
}

fn default_level() -> f64 {
    0.9
}

fn default_replicates() -> usize {
    1000
}

fn default_dv_kind() -> DvKind {
    DvKind::Original
}

/// Configuration shared by `estimate` and `dv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// CSV file, relative to the configuration file.
    pub input: PathBuf,
    pub columns: ColumnRoles,
    pub outcome_kind: OutcomeKind,
    /// Design of the propensity and outcome-mean models.
    #[serde(default)]
    pub design: DesignSpec,
    /// Design of the quantile model; defaults to `design`.
    #[serde(default)]
    pub quantile_design: Option<DesignSpec>,
    pub method: AnalysisMethod,
    /// Symmetric odds bounds `lambda`, giving the range `[1/lambda, lambda]`.
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub bootstrap_replicates: usize,
    #[serde(default = "default_dv_kind")]
    pub dv_kind: DvKind,
    #[serde(default)]
    pub lasso: LassoConfig,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.deltas.is_empty() {
            bail!("lambda and delta grids must be nonempty");
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l >= 1.0)) {
            bail!("lambda values must be finite and at least 1, got {l}");
        }
        if let Some(d) = self.deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            bail!("delta values must lie in [0, 1], got {d}");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            bail!("level must lie in (0, 1), got {}", self.level);
        }
        if self.method == AnalysisMethod::Dv && self.outcome_kind != OutcomeKind::Binary {
            bail!("the DV method requires a binary outcome");
        }
        Ok(())
    }
}

/// Conditional outcome law in a stratum: a discrete distribution or a
/// Bernoulli probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawSpec {
    Discrete { support: Vec<f64>, probs: Vec<f64> },
    Bernoulli { p: f64 },
}

impl LawSpec {
    pub fn to_dist(&self) -> Result<DiscreteDist> {
        Ok(match self {
            LawSpec::Discrete { support, probs } => DiscreteDist::new(support.clone(), probs.clone())?,
            LawSpec::Bernoulli { p } => DiscreteDist::bernoulli(*p)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumSpec {
    pub weight: f64,
    pub propensity: f64,
    pub treated: LawSpec,
    pub control: LawSpec,
}

/// Configuration of `bounds`: population strata and the parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub strata: Vec<StratumSpec>,
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl BoundsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strata.is_empty() {
            bail!("at least one stratum is required");
        }
        let total: f64 = self.strata.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            bail!("stratum weights must sum to 1, got {total}");
        }
        if self.lambdas.is_empty() || self.deltas.is_empty() {
            bail!("lambda and delta grids must be nonempty");
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l >= 1.0)) {
            bail!("lambda values must be finite and at least 1, got {l}");
        }
        if let Some(d) = self.deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            bail!("delta values must lie in [0, 1], got {d}");
        }
        Ok(())
    }
}

fn default_instances() -> usize {
    100
}

fn default_max_support() -> usize {
    10
}

fn default_resolution() -> usize {
    100
}

/// Configuration of `oracle`: random instances checked against brute force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_max_support")]
    pub max_support: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Range of `lambda1`; `lambda2` is drawn from `[1, lambda2_max]`.
    #[serde(default = "default_lambda1_range")]
    pub lambda1_range: [f64; 2],
    #[serde(default = "default_lambda2_max")]
    pub lambda2_max: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda1_range() -> [f64; 2] {
    [0.1, 1.0]
}

fn default_lambda2_max() -> f64 {
    5.0
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.max_support == 0 {
            bail!("instances and max_support must be positive");
        }
        if self.resolution < 2 {
            bail!("resolution must be at least 2");
        }
        let [a, b] = self.lambda1_range;
        if !(0.0 < a && a <= b && b <= 1.0) {
            bail!("lambda1_range must satisfy 0 < lo <= hi <= 1");
        }
        if !(self.lambda2_max.is_finite() && self.lambda2_max >= 1.0) {
            bail!("lambda2_max must be finite and at least 1");
        }
        Ok(())
    }
}

/// Configuration of `simulate`: a generating process plus the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub dgp: SyntheticDgp,
    #[serde(default)]
    pub seed: u64,
}
