//! Experiment orchestration: configuration, seeded runs, aggregation and
//! result files.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{Policy, PolicyError, RandomPolicy, RsPolicy};
use crate::env::{ArtificialConfig, EnvError};
use crate::linear::{EpisodicMemory, LinTsPrior, LinearPolicy, LinearStrategy};
use crate::neural::{InitScheme, NetworkConfig, NeuralPolicy, NeuralStrategy};
use crate::reliability::{CentroidBank, CentroidConfig, Estimator, ReliabilityKind};

mod config_file;
mod output;
mod run;

pub use config_file::{parse_config, read_config};
pub use output::{read_metadata, write_results, write_svg, Metadata};
pub use run::{aggregate, prepare_source, run_batch, run_simulation, AggregatedResult, DataSource, RunFailure};

/// Desk-scale run count.
pub const DESK_RUNS: usize = 10;
/// Run count of the full-scale profile (`--full`).
pub const FULL_RUNS: usize = 100;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data ingestion failed: {0}")]
    Ingest(#[from] EnvError),
    #[error("all {runs} runs of policy {policy:?} failed; first reason: {reason}")]
    AllRunsFailed { policy: String, runs: usize, reason: String },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 1,
            Self::Ingest(_) => 2,
            Self::AllRunsFailed { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Artificial,
    Shuttle,
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "artificial" => Ok(Self::Artificial),
            "shuttle" => Ok(Self::Shuttle),
            other => Err(format!("unknown environment {other:?} (artificial|shuttle)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    NeuralRs,
    RegLinRs,
    Rs,
    LinGreedy,
    LinUcb,
    LinTs,
    NeuralUcb,
    NeuralTs,
    Oracle,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 10] = [
        Self::NeuralRs,
        Self::RegLinRs,
        Self::Rs,
        Self::LinGreedy,
        Self::LinUcb,
        Self::LinTs,
        Self::NeuralUcb,
        Self::NeuralTs,
        Self::Oracle,
        Self::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NeuralRs => "neuralrs",
            Self::RegLinRs => "reglinrs",
            Self::Rs => "rs",
            Self::LinGreedy => "lingreedy",
            Self::LinUcb => "linucb",
            Self::LinTs => "lints",
            Self::NeuralUcb => "neuralucb",
            Self::NeuralTs => "neuralts",
            Self::Oracle => "oracle",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Every tunable constant, with the defaults used for the reference experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub aleph: f64,
    pub reliability: ReliabilityKind,
    /// Centroids per action as a multiple of K.
    pub centroids_per_action_factor: usize,
    pub gamma: f64,
    pub centroid_init_std: f64,
    pub centroid_eps: f64,
    pub decay_unchosen: bool,
    pub nu: f64,
    pub neural_lambda: f64,
    pub memory_capacity: usize,
    pub knn_k: usize,
    pub knn_eps: f64,
    pub linucb_alpha: f64,
    pub lints_lambda: f64,
    pub lints_alpha: f64,
    pub lints_beta: f64,
    pub width: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_network: bool,
    pub init: InitScheme,
    pub linear_refit_every: usize,
    pub warmup_pulls: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            aleph: 0.65,
            reliability: ReliabilityKind::Knn,
            centroids_per_action_factor: 2,
            gamma: 0.99,
            centroid_init_std: 1.0,
            centroid_eps: 1e-8,
            decay_unchosen: true,
            nu: 0.1,
            neural_lambda: 1e-5,
            memory_capacity: 10_000,
            knn_k: 50,
            knn_eps: 1e-4,
            linucb_alpha: 0.1,
            lints_lambda: 0.25,
            lints_alpha: 6.0,
            lints_beta: 6.0,
            width: 128,
            depth: 2,
            learning_rate: 1e-3,
            batch_size: 1024,
            train_network: true,
            init: InitScheme::Mirrored,
            linear_refit_every: 20,
            warmup_pulls: 10,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| format!("bad value {value:?} for {key}: {e}"))
}

impl Hyperparams {
    pub const KEYS: [&'static str; 24] = [
        "aleph",
        "reliability",
        "centroids_per_action_factor",
        "gamma",
        "centroid_init_std",
        "centroid_eps",
        "decay_unchosen",
        "nu",
        "neural_lambda",
        "memory_capacity",
        "knn_k",
        "knn_eps",
        "linucb_alpha",
        "lints_lambda",
        "lints_alpha",
        "lints_beta",
        "width",
        "depth",
        "learning_rate",
        "batch_size",
        "train_network",
        "init",
        "linear_refit_every",
        "warmup_pulls",
    ];

    /// Sets one field from its textual form. Returns `Ok(false)` if `key` is
    /// not a hyperparameter.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        match key {
            "aleph" => self.aleph = parse_value(key, value)?,
            "reliability" => self.reliability = parse_value(key, value)?,
            "centroids_per_action_factor" => self.centroids_per_action_factor = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "centroid_init_std" => self.centroid_init_std = parse_value(key, value)?,
            "centroid_eps" => self.centroid_eps = parse_value(key, value)?,
            "decay_unchosen" => self.decay_unchosen = parse_value(key, value)?,
            "nu" => self.nu = parse_value(key, value)?,
            "neural_lambda" => self.neural_lambda = parse_value(key, value)?,
            "memory_capacity" => self.memory_capacity = parse_value(key, value)?,
            "knn_k" => self.knn_k = parse_value(key, value)?,
            "knn_eps" => self.knn_eps = parse_value(key, value)?,
            "linucb_alpha" => self.linucb_alpha = parse_value(key, value)?,
            "lints_lambda" => self.lints_lambda = parse_value(key, value)?,
            "lints_alpha" => self.lints_alpha = parse_value(key, value)?,
            "lints_beta" => self.lints_beta = parse_value(key, value)?,
            "width" => self.width = parse_value(key, value)?,
            "depth" => self.depth = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "train_network" => self.train_network = parse_value(key, value)?,
            "init" => self.init = parse_value(key, value)?,
            "linear_refit_every" => self.linear_refit_every = parse_value(key, value)?,
            "warmup_pulls" => self.warmup_pulls = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks: [(bool, &str); 13] = [
            (self.aleph.is_finite(), "aleph must be finite"),
            (self.centroids_per_action_factor >= 1, "centroids_per_action_factor must be >= 1"),
            (self.gamma > 0.0 && self.gamma <= 1.0, "gamma must be in (0, 1]"),
            (self.centroid_init_std > 0.0, "centroid_init_std must be positive"),
            (self.centroid_eps > 0.0 && self.knn_eps > 0.0, "epsilons must be positive"),
            (self.nu >= 0.0, "nu must be non-negative"),
            (self.neural_lambda > 0.0, "neural_lambda must be positive"),
            (self.knn_k >= 1 && self.memory_capacity >= 1, "knn_k and memory_capacity must be >= 1"),
            (self.linucb_alpha >= 0.0, "linucb_alpha must be non-negative"),
            (
                self.lints_lambda > 0.0 && self.lints_alpha > 0.0 && self.lints_beta > 0.0,
                "LinTS prior parameters must be positive",
            ),
            (self.width >= 1 && self.depth >= 1, "width and depth must be >= 1"),
            (self.learning_rate > 0.0 && self.batch_size >= 1, "learning_rate and batch_size must be positive"),
            (self.linear_refit_every >= 1, "linear_refit_every must be >= 1"),
        ];
        if self.init == InitScheme::Mirrored && self.width % 2 != 0 {
            return Err(format!("mirrored init needs an even width, got {}", self.width));
        }
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err((*msg).to_string()),
            None => Ok(()),
        }
    }

    fn network(&self) -> NetworkConfig {
        NetworkConfig {
            width: self.width,
            depth: self.depth,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            train: self.train_network,
            init: self.init,
        }
    }
}

/// One policy of an experiment, with fully resolved hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: String,
    pub kind: PolicyKind,
    pub hyper: Hyperparams,
}

impl PolicySpec {
    /// Default label: the kind, suffixed with the estimator for NeuralRS.
    pub fn new(kind: PolicyKind, hyper: Hyperparams) -> Self {
        let name = match kind {
            PolicyKind::NeuralRs => format!("neuralrs-{}", hyper.reliability),
            _ => kind.to_string(),
        };
        Self { name, kind, hyper }
    }

    pub fn named(name: impl Into<String>, kind: PolicyKind, hyper: Hyperparams) -> Self {
        Self {
            name: name.into(),
            kind,
            hyper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub policies: Vec<PolicySpec>,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    /// Global hyperparameters; each policy carries its resolved copy.
    pub hyper: Hyperparams,
    /// Generator settings for the artificial environment. `seed` and
    /// `num_points` are replaced per run.
    pub artificial: ArtificialConfig,
    pub shuttle_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Whether the forced round-robin pulls add to cumulative regret.
    pub warmup_in_regret: bool,
    /// Keep every run's trace in the aggregated result.
    pub keep_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Artificial,
            policies: Vec::new(),
            steps: 10_000,
            runs: DESK_RUNS,
            seed: 0,
            hyper: Hyperparams::default(),
            artificial: ArtificialConfig::default(),
            shuttle_path: None,
            out_dir: None,
            warmup_in_regret: true,
            keep_traces: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.steps < 1 || self.runs < 1 {
            return Err(HarnessError::Config(format!(
                "steps and runs must be >= 1 (got {}, {})",
                self.steps, self.runs
            )));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::Config("no policies configured".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.policies {
            if !seen.insert(p.name.as_str()) {
                return Err(HarnessError::Config(format!("duplicate policy name {:?}", p.name)));
            }
            p.hyper
                .validate()
                .map_err(|e| HarnessError::Config(format!("policy {:?}: {e}", p.name)))?;
        }
        if self.env == EnvKind::Shuttle && self.shuttle_path.is_none() {
            return Err(HarnessError::Config("the shuttle environment needs a data file path".into()));
        }
        Ok(())
    }
}

/// Builds a learning policy for a `dim`-dimensional, `num_actions`-armed
/// problem. The oracle is not a [`Policy`] and is rejected here.
pub fn build_policy<R: rand::Rng + ?Sized>(
    spec: &PolicySpec,
    dim: usize,
    num_actions: usize,
    rng: &mut R,
) -> Result<Box<dyn Policy>, PolicyError> {
    let h = &spec.hyper;
    let name = spec.name.clone();
    let linear = |strategy| -> Box<dyn Policy> {
        Box::new(LinearPolicy::new(name.clone(), dim, num_actions, strategy, h.linear_refit_every))
    };
    Ok(match spec.kind {
        PolicyKind::Rs => Box::new(RsPolicy::new(num_actions, h.aleph)),
        PolicyKind::Random => Box::new(RandomPolicy::new(num_actions)),
        PolicyKind::LinGreedy => linear(LinearStrategy::Greedy),
        PolicyKind::LinUcb => linear(LinearStrategy::Ucb { alpha: h.linucb_alpha }),
        PolicyKind::LinTs => linear(LinearStrategy::Ts(LinTsPrior {
            lambda: h.lints_lambda,
            alpha: h.lints_alpha,
            beta: h.lints_beta,
        })),
        PolicyKind::RegLinRs => linear(LinearStrategy::RegLinRs {
            aleph: h.aleph,
            k: h.knn_k,
            eps: h.knn_eps,
            memory_capacity: h.memory_capacity,
        }),
        PolicyKind::NeuralRs => {
            let estimator = match h.reliability {
                ReliabilityKind::Knn => Estimator::Knn {
                    memory: EpisodicMemory::new(dim, h.memory_capacity),
                    k: h.knn_k,
                    eps: h.knn_eps,
                },
                ReliabilityKind::Kmeans => {
                    let cfg = CentroidConfig {
                        per_action: h.centroids_per_action_factor * num_actions,
                        gamma: h.gamma,
                        init_std: h.centroid_init_std,
                        eps: h.centroid_eps,
                        decay_unchosen: h.decay_unchosen,
                    };
                    Estimator::Kmeans(CentroidBank::new(num_actions, h.width, &cfg, rng)?)
                }
                ReliabilityKind::Xe => Estimator::Xe,
                ReliabilityKind::TrialRatio => Estimator::TrialRatio {
                    counts: vec![0; num_actions],
                },
            };
            let strategy = NeuralStrategy::Rs {
                aleph: h.aleph,
                estimator,
            };
            Box::new(NeuralPolicy::new(name, dim, num_actions, h.network(), strategy, h.neural_lambda, rng)?)
        }
        PolicyKind::NeuralUcb => Box::new(NeuralPolicy::new(
            name,
            dim,
            num_actions,
            h.network(),
            NeuralStrategy::Ucb { nu: h.nu },
            h.neural_lambda,
            rng,
        )?),
        PolicyKind::NeuralTs => Box::new(NeuralPolicy::new(
            name,
            dim,
            num_actions,
            h.network(),
            NeuralStrategy::Ts { nu: h.nu },
            h.neural_lambda,
            rng,
        )?),
        PolicyKind::Oracle => {
            return Err(PolicyError::Invalid(
                "the oracle reads expected rewards and is run by the harness directly".into(),
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn defaults_match_configuration_table() {
        let h = Hyperparams::default();
        assert_eq!(h.aleph, 0.65);
        assert_eq!(h.centroids_per_action_factor, 2);
        assert_eq!(h.gamma, 0.99);
        assert_eq!(h.nu, 0.1);
        assert_eq!(h.neural_lambda, 1e-5);
        assert_eq!(h.memory_capacity, 10_000);
        assert_eq!(h.knn_k, 50);
        assert_eq!(h.linucb_alpha, 0.1);
        assert_eq!((h.lints_lambda, h.lints_alpha, h.lints_beta), (0.25, 6.0, 6.0));
        assert_eq!((h.width, h.batch_size, h.learning_rate), (128, 1024, 1e-3));
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.steps, cfg.runs), (10_000, DESK_RUNS));
    }

    #[test]
    fn every_key_is_settable() {
        let mut h = Hyperparams::default();
        for key in Hyperparams::KEYS {
            let value = match key {
                "reliability" => "kmeans",
                "init" => "mirrored",
                "decay_unchosen" | "train_network" => "false",
                "aleph" | "gamma" | "nu" | "learning_rate" | "centroid_init_std" | "centroid_eps" | "knn_eps"
                | "neural_lambda" | "linucb_alpha" | "lints_lambda" | "lints_alpha" | "lints_beta" => "0.5",
                _ => "3",
            };
            assert_eq!(h.set(key, value), Ok(true), "{key}");
        }
        assert_eq!(h.set("nonsense", "1"), Ok(false));
        assert!(h.set("gamma", "abc").is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>(), Ok(k));
        }
        assert!("neural".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn oracle_is_not_buildable() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let spec = PolicySpec::new(PolicyKind::Oracle, Hyperparams::default());
        assert!(build_policy(&spec, 2, 2, &mut rng).is_err());
    }
}
