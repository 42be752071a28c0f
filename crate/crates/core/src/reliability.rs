//! Reliability estimators ρ for NeuralRS.
//!
//! Each estimator turns the current context (or the network's view of it)
//! into a probability vector over actions that stands in for the trial ratio
//! `n_i / N` of basic RS.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bandit::PolicyError;
use crate::linear::{knn_reliability, EpisodicMemory};
use crate::numeric::{softmax, squared_distance, Matrix, NumericError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityKind {
    Knn,
    Kmeans,
    Xe,
    TrialRatio,
}

impl ReliabilityKind {
    pub const ALL: [ReliabilityKind; 4] = [Self::Knn, Self::Kmeans, Self::Xe, Self::TrialRatio];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Knn => "knn",
            Self::Kmeans => "kmeans",
            Self::Xe => "xe",
            Self::TrialRatio => "trial",
        }
    }
}

impl fmt::Display for ReliabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReliabilityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knn" => Ok(Self::Knn),
            "kmeans" | "k-means" => Ok(Self::Kmeans),
            "xe" | "cross_entropy" => Ok(Self::Xe),
            "trial" | "trial_ratio" => Ok(Self::TrialRatio),
            other => Err(format!("unknown reliability estimator {other:?} (knn|kmeans|xe|trial)")),
        }
    }
}

/// Per-action centroids in latent space with decayed masses and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBank {
    centroids: Vec<Matrix>,
    masses: Vec<Vec<f64>>,
    counts: Vec<f64>,
    gamma: f64,
    eps: f64,
    decay_unchosen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidConfig {
    pub per_action: usize,
    pub gamma: f64,
    pub init_std: f64,
    pub eps: f64,
    /// Decay masses and counts of actions that were not chosen as well.
    pub decay_unchosen: bool,
}

impl CentroidBank {
    /// Centroids drawn from `N(0, σ² I)`; masses and counts start at zero.
    pub fn new<R: Rng + ?Sized>(num_actions: usize, dim: usize, cfg: &CentroidConfig, rng: &mut R) -> Result<Self, NumericError> {
        if cfg.per_action == 0 || !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
            return Err(NumericError::Invalid(format!(
                "centroid bank needs M >= 1 and γ in (0, 1] (got {}, {})",
                cfg.per_action, cfg.gamma
            )));
        }
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| NumericError::Invalid(e.to_string()))?;
        let centroids = (0..num_actions)
            .map(|_| {
                let data = (0..cfg.per_action * dim).map(|_| normal.sample(rng)).collect();
                Matrix::from_vec(cfg.per_action, dim, data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            centroids,
            masses: vec![vec![0.0; cfg.per_action]; num_actions],
            counts: vec![0.0; num_actions],
            gamma: cfg.gamma,
            eps: cfg.eps,
            decay_unchosen: cfg.decay_unchosen,
        })
    }

    pub fn from_parts(centroids: Vec<Matrix>, masses: Vec<Vec<f64>>, counts: Vec<f64>, gamma: f64, eps: f64) -> Self {
        Self {
            centroids,
            masses,
            counts,
            gamma,
            eps,
            decay_unchosen: true,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.centroids.len()
    }

    pub fn per_action(&self) -> usize {
        self.centroids.first().map_or(0, Matrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Matrix::cols)
    }

    pub fn centroid(&self, action: usize, m: usize) -> &[f64] {
        self.centroids[action].row(m)
    }

    pub fn masses(&self, action: usize) -> &[f64] {
        &self.masses[action]
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Weights `1 / (‖z − c_{i,m}‖ + ε)` for every action.
    pub fn weights(&self, z: &[f64]) -> Result<Vec<Vec<f64>>, NumericError> {
        (0..self.num_actions())
            .map(|i| centroid_distances(z, self, i).map(|d| centroid_weights(&d, self.eps)))
            .collect()
    }

    /// Moves the chosen action's centroids toward `z` and applies the decay.
    pub fn commit(&mut self, action: usize, z: &[f64], weights: &[f64]) {
        let centroids = &mut self.centroids[action];
        for (m, &w) in weights.iter().enumerate() {
            let mass = self.masses[action][m];
            let total = mass + w;
            if total > 0.0 {
                // (W c + w z) / (W + w), written as c + t (z − c) and clamped
                // to the segment so rounding never leaves [c, z]
                let t = w / total;
                for (c, &zj) in centroids.row_mut(m).iter_mut().zip(z) {
                    let moved = if t >= 1.0 { zj } else { *c + t * (zj - *c) };
                    *c = moved.clamp(c.min(zj), c.max(zj));
                }
            }
        }
        for i in 0..self.num_actions() {
            if i == action {
                for (mass, &w) in self.masses[i].iter_mut().zip(weights) {
                    *mass = self.gamma * *mass + w;
                }
                self.counts[i] = self.gamma * self.counts[i] + 1.0;
            } else if self.decay_unchosen {
                self.masses[i].iter_mut().for_each(|mass| *mass *= self.gamma);
                self.counts[i] *= self.gamma;
            }
        }
    }
}

/// `‖z − c_{i,m}‖` for each centroid `m` of `action`.
pub fn centroid_distances(z: &[f64], bank: &CentroidBank, action: usize) -> Result<Vec<f64>, NumericError> {
    if z.len() != bank.dim() {
        return Err(NumericError::DimensionMismatch {
            expected: bank.dim(),
            got: z.len(),
        });
    }
    let c = &bank.centroids[action];
    Ok((0..c.rows()).map(|m| squared_distance(z, c.row(m)).sqrt()).collect())
}

/// `w = 1 / (d + ε)`.
pub fn centroid_weights(distances: &[f64], eps: f64) -> Vec<f64> {
    distances.iter().map(|d| 1.0 / (d + eps)).collect()
}

/// `ρ = softmax_i((n_i / M) Σ_m w_{i,m})`.
pub fn kmeans_rho(bank: &CentroidBank, weights: &[Vec<f64>]) -> Vec<f64> {
    let m = bank.per_action() as f64;
    let scores: Vec<f64> = bank
        .counts
        .iter()
        .zip(weights)
        .map(|(n, w)| n / m * w.iter().sum::<f64>())
        .collect();
    softmax(&scores).expect("at least one action")
}

/// The network's own selection distribution, `softmax(f)`.
pub fn xe_reliability(outputs: &[f64]) -> Result<Vec<f64>, NumericError> {
    softmax(outputs)
}

/// Global trial ratios `n_i / N`.
pub fn trial_ratio_reliability(counts: &[u64]) -> Result<Vec<f64>, PolicyError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(PolicyError::Invalid("no trials recorded yet (N = 0)".into()));
    }
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Stateful reliability estimator owned by a NeuralRS policy.
#[derive(Debug, Clone)]
pub enum Estimator {
    Knn { memory: EpisodicMemory, k: usize, eps: f64 },
    Kmeans(CentroidBank),
    Xe,
    TrialRatio { counts: Vec<u64> },
}

impl Estimator {
    pub fn kind(&self) -> ReliabilityKind {
        match self {
            Self::Knn { .. } => ReliabilityKind::Knn,
            Self::Kmeans(_) => ReliabilityKind::Kmeans,
            Self::Xe => ReliabilityKind::Xe,
            Self::TrialRatio { .. } => ReliabilityKind::TrialRatio,
        }
    }

    /// ρ for context `x` with network outputs `f` and latent `z`.
    pub fn rho(&self, x: &[f64], outputs: &[f64], latent: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let k = outputs.len();
        match self {
            Self::Knn { memory, k: neighbors, eps } => {
                let k_eff = (*neighbors).min(memory.len());
                if k_eff == 0 {
                    return Ok(vec![1.0 / k as f64; k]);
                }
                knn_reliability(x, memory, k_eff, *eps, k)
            }
            Self::Kmeans(bank) => Ok(kmeans_rho(bank, &bank.weights(latent)?)),
            Self::Xe => Ok(xe_reliability(outputs)?),
            Self::TrialRatio { counts } => {
                if counts.iter().all(|&c| c == 0) {
                    return Ok(vec![1.0 / k as f64; k]);
                }
                trial_ratio_reliability(counts)
            }
        }
    }

    /// Records that `action` was played at `x` (latent `z`).
    pub fn observe(&mut self, x: &[f64], latent: &[f64], action: usize) -> Result<(), PolicyError> {
        match self {
            Self::Knn { memory, .. } => memory.push(x, action),
            Self::Kmeans(bank) => {
                let d = centroid_distances(latent, bank, action)?;
                let w = centroid_weights(&d, bank.eps);
                bank.commit(action, latent, &w);
            }
            Self::Xe => {}
            Self::TrialRatio { counts } => counts[action] += 1,
        }
        Ok(())
    }
}
