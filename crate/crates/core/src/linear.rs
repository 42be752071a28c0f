//! Linear-model policies: LinGreedy, LinUCB, LinTS and RegLinRS.
//!
//! All four keep per-action ridge statistics `A_i = λI + Σ x xᵀ`,
//! `b_i = Σ r x` over the steps where action `i` was played. Statistics are
//! accumulated every step; the solved model used for selection is refreshed
//! every `refit_every` updates and when warmup ends.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::{Policy, PolicyError, SimRng};
use crate::numeric::{argmax, dot, squared_distance, Cholesky, Matrix};

/// Per-action ridge regression sufficient statistics.
#[derive(Debug, Clone)]
pub struct LinearStats {
    dim: usize,
    prior: f64,
    precision: Vec<Matrix>,
    response: Vec<Vec<f64>>,
    reward_sq: Vec<f64>,
    counts: Vec<u64>,
}

impl LinearStats {
    /// Identity prior, as in the closed form `θ = (I + Σ x xᵀ)⁻¹ Σ r x`.
    pub fn new(dim: usize, num_actions: usize) -> Self {
        Self::with_prior(dim, num_actions, 1.0)
    }

    pub fn with_prior(dim: usize, num_actions: usize, prior: f64) -> Self {
        let mut a = Matrix::identity(dim);
        a.scale(prior);
        Self {
            dim,
            prior,
            precision: vec![a; num_actions],
            response: vec![vec![0.0; dim]; num_actions],
            reward_sq: vec![0.0; num_actions],
            counts: vec![0; num_actions],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_actions(&self) -> usize {
        self.counts.len()
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn precision(&self, action: usize) -> &Matrix {
        &self.precision[action]
    }

    pub fn response(&self, action: usize) -> &[f64] {
        &self.response[action]
    }

    pub fn count(&self, action: usize) -> u64 {
        self.counts[action]
    }

    /// `A_a += x xᵀ`, `b_a += r x`.
    pub fn update(&mut self, x: &[f64], action: usize, reward: f64) {
        self.precision[action].add_outer(1.0, x);
        for (b, &xi) in self.response[action].iter_mut().zip(x) {
            *b += reward * xi;
        }
        self.reward_sq[action] += reward * reward;
        self.counts[action] += 1;
    }

    /// Freshly solved `θ_a = A_a⁻¹ b_a`.
    pub fn theta(&self, action: usize) -> Result<Vec<f64>, PolicyError> {
        Ok(Cholesky::factor(&self.precision[action])?.solve(&self.response[action])?)
    }

    /// Solves every action's system.
    pub fn solve(&self) -> Result<LinearModel, PolicyError> {
        let mut arms = Vec::with_capacity(self.num_actions());
        for a in 0..self.num_actions() {
            let factor = Cholesky::factor(&self.precision[a])?;
            let theta = factor.solve(&self.response[a])?;
            // residual sum of squares around the posterior mean, Σr² − μᵀb
            let rss = (self.reward_sq[a] - dot(&theta, &self.response[a])).max(0.0);
            arms.push(ArmModel {
                theta,
                factor,
                count: self.counts[a],
                rss,
            });
        }
        Ok(LinearModel { arms })
    }
}

#[derive(Debug, Clone)]
pub struct ArmModel {
    pub theta: Vec<f64>,
    factor: Cholesky,
    pub count: u64,
    rss: f64,
}

/// Snapshot of solved per-action regressions.
#[derive(Debug, Clone)]
pub struct LinearModel {
    arms: Vec<ArmModel>,
}

impl LinearModel {
    pub fn num_actions(&self) -> usize {
        self.arms.len()
    }

    pub fn arm(&self, action: usize) -> &ArmModel {
        &self.arms[action]
    }

    /// `θ_iᵀ x` for every action.
    pub fn estimates(&self, x: &[f64]) -> Vec<f64> {
        self.arms.iter().map(|arm| dot(&arm.theta, x)).collect()
    }

    /// `√(xᵀ A_i⁻¹ x)` for every action.
    pub fn widths(&self, x: &[f64]) -> Vec<f64> {
        self.arms.iter().map(|arm| arm.factor.inv_quad(x).sqrt()).collect()
    }
}

/// `argmax_i θ_iᵀx`.
pub fn lingreedy_select(x: &[f64], model: &LinearModel) -> usize {
    argmax(&model.estimates(x))
}

/// `argmax_i θ_iᵀx + α √(xᵀ A_i⁻¹ x)`.
pub fn linucb_select(x: &[f64], model: &LinearModel, alpha: f64) -> usize {
    let scores: Vec<f64> = model
        .estimates(x)
        .iter()
        .zip(model.widths(x))
        .map(|(m, w)| m + alpha * w)
        .collect();
    argmax(&scores)
}

/// Normal-inverse-gamma posterior hyperparameters for LinTS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinTsPrior {
    /// Prior precision λ (the ridge term of `A_i`).
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Draws the noise variance `σ_i² ~ InvGamma(α + n_i/2, β + RSS_i/2)` per action.
pub fn lints_sample_variances<R: Rng + ?Sized>(model: &LinearModel, prior: &LinTsPrior, rng: &mut R) -> Vec<f64> {
    model
        .arms
        .iter()
        .map(|arm| {
            let shape = prior.alpha + arm.count as f64 / 2.0;
            let rate = prior.beta + arm.rss / 2.0;
            let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
            rate / g.max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Thompson step with given per-action noise variances: draws
/// `θ̃_iᵀx ~ N(θ_iᵀx, σ_i² xᵀA_i⁻¹x)` (the exact marginal of
/// `θ̃_i ~ N(θ_i, σ_i² A_i⁻¹)` along `x`) and returns the argmax.
pub fn lints_select_with_variance<R: Rng + ?Sized>(x: &[f64], model: &LinearModel, variances: &[f64], rng: &mut R) -> usize {
    let scores: Vec<f64> = model
        .arms
        .iter()
        .zip(variances)
        .map(|(arm, &var)| {
            let z: f64 = StandardNormal.sample(rng);
            dot(&arm.theta, x) + (var * arm.factor.inv_quad(x)).sqrt() * z
        })
        .collect();
    argmax(&scores)
}

pub fn lints_select<R: Rng + ?Sized>(x: &[f64], model: &LinearModel, prior: &LinTsPrior, rng: &mut R) -> usize {
    let variances = lints_sample_variances(model, prior, rng);
    lints_select_with_variance(x, model, &variances, rng)
}

/// Ring buffer of `(context, chosen action)` records.
#[derive(Debug, Clone)]
pub struct EpisodicMemory {
    dim: usize,
    capacity: usize,
    contexts: Vec<f64>,
    actions: Vec<usize>,
    /// Insertion sequence number per slot; lower wins distance ties.
    seqs: Vec<u64>,
    next_seq: u64,
}

impl EpisodicMemory {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            capacity,
            contexts: Vec::new(),
            actions: Vec::new(),
            seqs: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, x: &[f64], action: usize) {
        debug_assert_eq!(x.len(), self.dim);
        if self.capacity == 0 {
            return;
        }
        if self.len() < self.capacity {
            self.contexts.extend_from_slice(x);
            self.actions.push(action);
            self.seqs.push(self.next_seq);
        } else {
            let slot = (self.next_seq % self.capacity as u64) as usize;
            self.contexts[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(x);
            self.actions[slot] = action;
            self.seqs[slot] = self.next_seq;
        }
        self.next_seq += 1;
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.contexts[i * self.dim..(i + 1) * self.dim]
    }

    pub fn action(&self, i: usize) -> usize {
        self.actions[i]
    }

    /// One-hot action record of entry `i`.
    pub fn record(&self, i: usize, num_actions: usize) -> Vec<f64> {
        let mut u = vec![0.0; num_actions];
        u[self.actions[i]] = 1.0;
        u
    }

    /// The `k` nearest entries as `(squared distance, slot)`, nearest first;
    /// equal distances resolve to the earlier insertion.
    pub fn nearest(&self, x: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, u64, usize)> = (0..self.len())
            .map(|i| (squared_distance(x, self.context(i)), self.seqs[i], i))
            .collect();
        let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(all.len());
        if k == 0 {
            return Vec::new();
        }
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_unstable_by(cmp);
        all.into_iter().map(|(d, _, i)| (d, i)).collect()
    }
}

/// Similarity-weighted action frequencies among the `k` nearest memories:
/// `Sim_j = ε / (d_j² / mean(d²) + ε)`, `φ = Σ_j (Sim_j / Σ Sim) u_j`.
pub fn knn_reliability(x: &[f64], memory: &EpisodicMemory, k: usize, eps: f64, num_actions: usize) -> Result<Vec<f64>, PolicyError> {
    if k == 0 {
        return Err(PolicyError::Invalid("k must be at least 1".into()));
    }
    if memory.len() < k {
        return Err(PolicyError::Invalid(format!(
            "episodic memory holds {} entries, fewer than k = {k}",
            memory.len()
        )));
    }
    if x.len() != memory.dim() {
        return Err(PolicyError::Invalid(format!(
            "context dimension {} does not match memory dimension {}",
            x.len(),
            memory.dim()
        )));
    }
    let neighbors = memory.nearest(x, k);
    let mean_d2 = neighbors.iter().map(|(d, _)| d).sum::<f64>() / k as f64;
    let sims: Vec<f64> = neighbors
        .iter()
        .map(|&(d2, _)| {
            // all neighbors coincide with x: every ratio is 0
            let ratio = if mean_d2 > 0.0 { d2 / mean_d2 } else { 0.0 };
            eps / (ratio + eps)
        })
        .collect();
    let total: f64 = sims.iter().sum();
    let mut phi = vec![0.0; num_actions];
    for (&(_, slot), sim) in neighbors.iter().zip(&sims) {
        phi[memory.action(slot)] += sim / total;
    }
    Ok(phi)
}

/// RegLinRS value `φ_i (θ_iᵀx − ℵ)`.
pub fn reglinrs_values(phi: &[f64], estimates: &[f64], aleph: f64) -> Vec<f64> {
    phi.iter().zip(estimates).map(|(p, e)| p * (e - aleph)).collect()
}

pub fn reglinrs_select(phi: &[f64], estimates: &[f64], aleph: f64) -> usize {
    argmax(&reglinrs_values(phi, estimates, aleph))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearStrategy {
    Greedy,
    Ucb { alpha: f64 },
    Ts(LinTsPrior),
    RegLinRs { aleph: f64, k: usize, eps: f64, memory_capacity: usize },
}

/// A linear policy with periodic refits of its solved model.
#[derive(Debug, Clone)]
pub struct LinearPolicy {
    name: String,
    strategy: LinearStrategy,
    stats: LinearStats,
    model: LinearModel,
    memory: Option<EpisodicMemory>,
    refit_every: usize,
    since_refit: usize,
}

impl LinearPolicy {
    pub fn new(name: impl Into<String>, dim: usize, num_actions: usize, strategy: LinearStrategy, refit_every: usize) -> Self {
        let prior = match strategy {
            LinearStrategy::Ts(p) => p.lambda,
            _ => 1.0,
        };
        let stats = LinearStats::with_prior(dim, num_actions, prior);
        let model = stats.solve().expect("prior precision is positive definite");
        let memory = match strategy {
            LinearStrategy::RegLinRs { memory_capacity, .. } => Some(EpisodicMemory::new(dim, memory_capacity)),
            _ => None,
        };
        Self {
            name: name.into(),
            strategy,
            stats,
            model,
            memory,
            refit_every: refit_every.max(1),
            since_refit: 0,
        }
    }

    pub fn stats(&self) -> &LinearStats {
        &self.stats
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn memory(&self) -> Option<&EpisodicMemory> {
        self.memory.as_ref()
    }

    pub fn refit(&mut self) -> Result<(), PolicyError> {
        self.model = self.stats.solve()?;
        self.since_refit = 0;
        Ok(())
    }
}

impl Policy for LinearPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_actions(&self) -> usize {
        self.stats.num_actions()
    }

    fn warmup_complete(&mut self) -> Result<(), PolicyError> {
        self.refit()
    }

    fn select(&mut self, x: &[f64], rng: &mut SimRng) -> Result<usize, PolicyError> {
        Ok(match self.strategy {
            LinearStrategy::Greedy => lingreedy_select(x, &self.model),
            LinearStrategy::Ucb { alpha } => linucb_select(x, &self.model, alpha),
            LinearStrategy::Ts(prior) => lints_select(x, &self.model, &prior, rng),
            LinearStrategy::RegLinRs { aleph, k, eps, .. } => {
                let memory = self.memory.as_ref().expect("RegLinRS owns a memory");
                let k_eff = k.min(memory.len());
                let k_actions = self.num_actions();
                let phi = if k_eff == 0 {
                    vec![1.0 / k_actions as f64; k_actions]
                } else {
                    knn_reliability(x, memory, k_eff, eps, k_actions)?
                };
                reglinrs_select(&phi, &self.model.estimates(x), aleph)
            }
        })
    }

    fn update(&mut self, x: &[f64], action: usize, reward: f64, _rng: &mut SimRng) -> Result<(), PolicyError> {
        if action >= self.num_actions() || x.len() != self.stats.dim() {
            return Err(PolicyError::Invalid(format!("update with action {action}, dim {}", x.len())));
        }
        self.stats.update(x, action, reward);
        if let Some(memory) = self.memory.as_mut() {
            memory.push(x, action);
        }
        self.since_refit += 1;
        if self.since_refit >= self.refit_every {
            self.refit()?;
        }
        Ok(())
    }
}
