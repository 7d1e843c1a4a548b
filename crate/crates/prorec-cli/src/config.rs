//! TOML experiment configuration. The schema is strict: unknown keys are
//! rejected with their name so sweep configs stay diffable and typo-safe.

use std::path::{Path, PathBuf};

use prorec::pipeline::{ProRecConfig, ThresholdKind, TransportKind};
use prorec::{ScoringScope, SplitScheme, SyntheticConfig};
use serde::{Deserialize, Serialize};

/// Whole config file. Every section has defaults, so `{}` is valid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub data: DataSection,
    pub split: Option<SplitSection>,
    pub noise: Option<NoiseSection>,
    pub model: ModelSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

/// Where interactions come from: the bundled-style synthetic generator or a
/// TSV file (`user <TAB> item [<TAB> value]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "synthetic" or "file".
    pub source: String,
    /// TSV path for `source = "file"`; relative paths fall back to
    /// `$PROREC_DATA_DIR` when they do not resolve locally.
    pub path: Option<String>,
    /// Dataset name used in summaries and artifact names.
    pub name: String,
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub in_cluster_prob: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let gen = SyntheticConfig::default();
        DataSection {
            source: "synthetic".to_string(),
            path: None,
            name: "synthetic".to_string(),
            n_users: gen.n_users,
            n_items: gen.n_items,
            n_clusters: gen.n_clusters,
            min_degree: gen.min_degree,
            max_degree: gen.max_degree,
            in_cluster_prob: gen.in_cluster_prob,
            seed: gen.seed,
        }
    }
}

impl DataSection {
    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_users: self.n_users,
            n_items: self.n_items,
            n_clusters: self.n_clusters,
            min_degree: self.min_degree,
            max_degree: self.max_degree,
            in_cluster_prob: self.in_cluster_prob,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// "4:1" (train/test) or "5:2:3" (train/val/test).
    pub scheme: String,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            scheme: "4:1".to_string(),
            seed: 7,
        }
    }
}

impl SplitSection {
    pub fn scheme(&self) -> prorec::Result<SplitScheme> {
        match self.scheme.as_str() {
            "4:1" => Ok(SplitScheme::FourToOne),
            "5:2:3" => Ok(SplitScheme::FiveTwoThree),
            other => Err(prorec::Error::InvalidArgument(format!(
                "unknown split scheme {other:?}; expected \"4:1\" or \"5:2:3\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Injected false positives as a fraction of the training positives.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            ratio: 0.1,
            seed: 11,
        }
    }
}

/// Pipeline hyperparameters; mirrors the library config with strings for the
/// enum-valued fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub zeta: f64,
    pub d: usize,
    pub outer_max: usize,
    pub als_epochs_per_outer: usize,
    pub rel_tol: f64,
    /// "relaxed-max", "sinkhorn", or "emd-small".
    pub transport: String,
    /// "personalized", "global", or "none".
    pub threshold: String,
    /// Kept positives per user when `threshold = "global"`.
    pub global_sigma: usize,
    /// "positives-only" or "all-items".
    pub scope: String,
    pub seed: u64,
    pub init_scale: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let cfg = ProRecConfig::default();
        ModelSection {
            gamma: cfg.gamma,
            lambda: cfg.lambda,
            beta: cfg.beta,
            zeta: cfg.zeta,
            d: cfg.d,
            outer_max: cfg.outer_max,
            als_epochs_per_outer: cfg.als_epochs_per_outer,
            rel_tol: cfg.rel_tol,
            transport: cfg.transport.as_str().to_string(),
            threshold: "personalized".to_string(),
            global_sigma: 10,
            scope: cfg.scope.as_str().to_string(),
            seed: cfg.seed,
            init_scale: cfg.init_scale,
            sinkhorn_max_iters: cfg.sinkhorn_max_iters,
            sinkhorn_tol: cfg.sinkhorn_tol,
        }
    }
}

impl ModelSection {
    pub fn to_pipeline_config(&self) -> prorec::Result<ProRecConfig> {
        let transport = match self.transport.as_str() {
            "relaxed-max" => TransportKind::RelaxedMax,
            "sinkhorn" => TransportKind::Sinkhorn,
            "emd-small" => TransportKind::EmdSmall,
            other => {
                return Err(prorec::Error::InvalidArgument(format!(
                    "unknown transport {other:?}; expected \"relaxed-max\", \"sinkhorn\", \
                     or \"emd-small\""
                )))
            }
        };
        let threshold = match self.threshold.as_str() {
            "personalized" => ThresholdKind::Personalized,
            "global" => ThresholdKind::Global(self.global_sigma),
            "none" => ThresholdKind::None,
            other => {
                return Err(prorec::Error::InvalidArgument(format!(
                    "unknown threshold {other:?}; expected \"personalized\", \"global\", \
                     or \"none\""
                )))
            }
        };
        let scope = match self.scope.as_str() {
            "positives-only" => ScoringScope::PositivesOnly,
            "all-items" => ScoringScope::AllItems,
            other => {
                return Err(prorec::Error::InvalidArgument(format!(
                    "unknown scope {other:?}; expected \"positives-only\" or \"all-items\""
                )))
            }
        };
        let cfg = ProRecConfig {
            gamma: self.gamma,
            lambda: self.lambda,
            beta: self.beta,
            zeta: self.zeta,
            d: self.d,
            outer_max: self.outer_max,
            als_epochs_per_outer: self.als_epochs_per_outer,
            rel_tol: self.rel_tol,
            transport,
            threshold,
            scope,
            seed: self.seed,
            init_scale: self.init_scale,
            sinkhorn_max_iters: self.sinkhorn_max_iters,
            sinkhorn_tol: self.sinkhorn_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Ranking cutoffs for the metric table.
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: vec![5, 10, 20] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    /// Seed shared by every grid point; defaults to the model seed.
    pub seed: Option<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            gamma: vec![0.05, 0.075, 0.1, 0.125, 0.15, 0.175],
            lambda: vec![0.25, 0.5, 0.75, 1.0],
            beta: vec![1.0, 5.0, 10.0, 20.0, 50.0],
            seed: None,
        }
    }
}

/// Config-file read failure. Its own type so exit-code mapping can tell a
/// missing config (config error) from a missing dataset (data error).
#[derive(Debug)]
pub struct ConfigReadError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

impl std::fmt::Display for ConfigReadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cannot read config {}", self.path.display())
    }
}

impl std::error::Error for ConfigReadError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Loads and parses a config file; `None` yields the defaults.
pub fn load_config(path: Option<&Path>) -> anyhow::Result<CliConfig> {
    let Some(path) = path else {
        return Ok(CliConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| ConfigReadError {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: CliConfig = toml::from_str(&text)?;
    Ok(cfg)
}
