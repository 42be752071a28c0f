//! Neural policies on a shared bias-free ReLU value network.
//!
//! The network has one output per action. Every update appends to a replay
//! buffer and takes one Adam step on a uniform minibatch drawn from the whole
//! history.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::{Policy, PolicyError, SimRng};
use crate::numeric::{argmax, mlp_forward, mlp_train_step, output_gradient, AdamState, Batch, Matrix, MlpParams, NumericError};
use crate::reliability::Estimator;

/// Growable history of `(context, action, reward)`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    dim: usize,
    contexts: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            contexts: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, x: &[f64], action: usize, reward: f64) {
        self.contexts.extend_from_slice(x);
        self.actions.push(action);
        self.rewards.push(reward);
    }

    pub fn count_for(&self, action: usize) -> usize {
        self.actions.iter().filter(|&&a| a == action).count()
    }

    /// Uniform sample of `min(len, max)` entries without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, max: usize, rng: &mut R) -> Result<Batch, NumericError> {
        if self.is_empty() {
            return Err(NumericError::Empty);
        }
        let m = max.min(self.len());
        let picked = if m == self.len() {
            (0..m).collect::<Vec<_>>()
        } else {
            index::sample(rng, self.len(), m).into_vec()
        };
        let mut data = Vec::with_capacity(m * self.dim);
        let mut actions = Vec::with_capacity(m);
        let mut rewards = Vec::with_capacity(m);
        for i in picked {
            data.extend_from_slice(&self.contexts[i * self.dim..(i + 1) * self.dim]);
            actions.push(self.actions[i]);
            rewards.push(self.rewards[i]);
        }
        Batch::new(Matrix::from_vec(m, self.dim, data)?, actions, rewards)
    }
}

/// Weight initialization of a fresh network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    He,
    /// Zero initial outputs; see [`MlpParams::mirrored`].
    Mirrored,
}

impl std::str::FromStr for InitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "he" => Ok(Self::He),
            "mirrored" => Ok(Self::Mirrored),
            other => Err(format!("unknown init scheme {other:?} (he|mirrored)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub width: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// When false the network is never trained.
    pub train: bool,
    pub init: InitScheme,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width: 128,
            depth: 2,
            learning_rate: 1e-3,
            batch_size: 1024,
            train: true,
            init: InitScheme::Mirrored,
        }
    }
}

#[derive(Debug, Clone)]
pub enum NeuralStrategy {
    Rs { aleph: f64, estimator: Estimator },
    Ucb { nu: f64 },
    Ts { nu: f64 },
}

/// NeuralRS value `ρ_i (f_i − ℵ)`.
pub fn neuralrs_values(rho: &[f64], outputs: &[f64], aleph: f64) -> Vec<f64> {
    rho.iter().zip(outputs).map(|(r, f)| r * (f - aleph)).collect()
}

pub fn neuralrs_select(rho: &[f64], outputs: &[f64], aleph: f64) -> usize {
    argmax(&neuralrs_values(rho, outputs, aleph))
}

/// `gᵀ diag⁻¹ g / width` over all weights.
fn scaled_variance(grad: &[Matrix], diag: &[Matrix], width: usize) -> f64 {
    let mut s = 0.0;
    for (g, z) in grad.iter().zip(diag) {
        for (&gi, &zi) in g.as_slice().iter().zip(z.as_slice()) {
            s += gi * gi / zi;
        }
    }
    s / width as f64
}

pub struct NeuralPolicy {
    name: String,
    params: MlpParams,
    adam: AdamState,
    buffer: ReplayBuffer,
    strategy: NeuralStrategy,
    /// Diagonal confidence accumulator (NeuralUCB / NeuralTS only).
    diag: Vec<Matrix>,
    cfg: NetworkConfig,
    losses: Vec<f64>,
}

impl NeuralPolicy {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        input_dim: usize,
        num_actions: usize,
        cfg: NetworkConfig,
        strategy: NeuralStrategy,
        lambda: f64,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        let params = match cfg.init {
            InitScheme::He => MlpParams::new(input_dim, cfg.width, num_actions, cfg.depth, rng)?,
            InitScheme::Mirrored => MlpParams::mirrored(input_dim, cfg.width, num_actions, cfg.depth, rng)?,
        };
        Self::with_params(name, params, cfg, strategy, lambda)
    }

    pub fn with_params(
        name: impl Into<String>,
        params: MlpParams,
        cfg: NetworkConfig,
        strategy: NeuralStrategy,
        lambda: f64,
    ) -> Result<Self, PolicyError> {
        let diag = match strategy {
            NeuralStrategy::Ucb { .. } | NeuralStrategy::Ts { .. } => {
                if !(lambda > 0.0) {
                    return Err(PolicyError::Invalid(format!("λ must be positive, got {lambda}")));
                }
                params
                    .layers()
                    .iter()
                    .map(|m| Matrix::from_vec(m.rows(), m.cols(), vec![lambda; m.rows() * m.cols()]).expect("shape"))
                    .collect()
            }
            NeuralStrategy::Rs { .. } => Vec::new(),
        };
        Ok(Self {
            name: name.into(),
            adam: AdamState::new(params.layers(), cfg.learning_rate),
            buffer: ReplayBuffer::new(params.input_dim()),
            params,
            strategy,
            diag,
            cfg,
            losses: Vec::new(),
        })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn strategy(&self) -> &NeuralStrategy {
        &self.strategy
    }

    pub fn diag_confidence(&self) -> &[Matrix] {
        &self.diag
    }

    /// Loss of every training step so far.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// One Adam step on a replay minibatch; returns its loss.
    pub fn train(&mut self, rng: &mut SimRng) -> Result<f64, PolicyError> {
        let batch = self.buffer.sample(self.cfg.batch_size, rng)?;
        let loss = mlp_train_step(&mut self.params, &mut self.adam, &batch).map_err(|e| match e {
            NumericError::Divergence(_) => PolicyError::Divergence(e),
            other => PolicyError::Numeric(other),
        })?;
        self.losses.push(loss);
        Ok(loss)
    }

    /// Exploration widths `√(gᵀ diag⁻¹ g / width)` for every action at `x`.
    pub fn exploration_widths(&self, x: &[f64]) -> Result<Vec<f64>, PolicyError> {
        (0..self.params.num_actions())
            .map(|i| {
                let g = output_gradient(&self.params, x, i)?;
                Ok(scaled_variance(&g, &self.diag, self.params.width()).sqrt())
            })
            .collect()
    }

    /// NeuralUCB scores `f_i + ν · width_i`.
    pub fn ucb_scores(&self, x: &[f64], nu: f64) -> Result<Vec<f64>, PolicyError> {
        let (f, _) = mlp_forward(x, &self.params)?;
        let widths = self.exploration_widths(x)?;
        Ok(f.iter().zip(widths).map(|(fi, w)| fi + nu * w).collect())
    }

    pub fn rho(&self, x: &[f64]) -> Result<Option<Vec<f64>>, PolicyError> {
        match &self.strategy {
            NeuralStrategy::Rs { estimator, .. } => {
                let (f, z) = mlp_forward(x, &self.params)?;
                estimator.rho(x, &f, &z).map(Some)
            }
            _ => Ok(None),
        }
    }
}

impl Policy for NeuralPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_actions(&self) -> usize {
        self.params.num_actions()
    }

    fn select(&mut self, x: &[f64], rng: &mut SimRng) -> Result<usize, PolicyError> {
        match &self.strategy {
            NeuralStrategy::Rs { aleph, estimator } => {
                let (f, z) = mlp_forward(x, &self.params)?;
                let rho = estimator.rho(x, &f, &z)?;
                Ok(neuralrs_select(&rho, &f, *aleph))
            }
            NeuralStrategy::Ucb { nu } => Ok(argmax(&self.ucb_scores(x, *nu)?)),
            NeuralStrategy::Ts { nu } => {
                let (f, _) = mlp_forward(x, &self.params)?;
                let widths = self.exploration_widths(x)?;
                let samples: Vec<f64> = f
                    .iter()
                    .zip(widths)
                    .map(|(fi, w)| {
                        let z: f64 = StandardNormal.sample(rng);
                        fi + nu * w * z
                    })
                    .collect();
                Ok(argmax(&samples))
            }
        }
    }

    fn update(&mut self, x: &[f64], action: usize, reward: f64, rng: &mut SimRng) -> Result<(), PolicyError> {
        if action >= self.num_actions() {
            return Err(PolicyError::Invalid(format!("action {action} out of range")));
        }
        // the network has not moved since select, so this matches the select-time view
        match &mut self.strategy {
            NeuralStrategy::Rs { estimator, .. } => {
                let latent = match estimator {
                    Estimator::Kmeans(_) => mlp_forward(x, &self.params)?.1,
                    _ => Vec::new(),
                };
                estimator.observe(x, &latent, action)?;
            }
            NeuralStrategy::Ucb { .. } | NeuralStrategy::Ts { .. } => {
                let g = output_gradient(&self.params, x, action)?;
                for (z, gm) in self.diag.iter_mut().zip(&g) {
                    for (zi, &gi) in z.as_mut_slice().iter_mut().zip(gm.as_slice()) {
                        *zi += gi * gi;
                    }
                }
            }
        }
        self.buffer.push(x, action, reward);
        if self.cfg.train {
            self.train(rng)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::EpisodicMemory;
    use rand::SeedableRng;

    fn small_cfg() -> NetworkConfig {
        NetworkConfig {
            width: 8,
            depth: 2,
            learning_rate: 1e-2,
            batch_size: 16,
            train: true,
            init: InitScheme::He,
        }
    }

    #[test]
    fn neuralrs_select_examples() {
        assert_eq!(neuralrs_select(&[0.25; 4], &[0.8, 0.5, 0.5, 0.5], 0.65), 0);
        let v = neuralrs_values(&[0.9, 0.1], &[0.6, 0.5], 0.65);
        assert!((v[0] + 0.045).abs() < 1e-12 && (v[1] + 0.015).abs() < 1e-12);
        assert_eq!(neuralrs_select(&[0.9, 0.1], &[0.6, 0.5], 0.65), 1);
        assert_eq!(neuralrs_select(&[0.1, 0.2, 0.7], &[0.65; 3], 0.65), 0);
    }

    #[test]
    fn buffer_sampling() {
        let mut buf = ReplayBuffer::new(1);
        assert!(buf.sample(4, &mut SimRng::seed_from_u64(0)).is_err());
        for i in 0..10 {
            buf.push(&[i as f64], i % 3, 0.5);
        }
        let b = buf.sample(4, &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(b.len(), 4);
        let mut xs: Vec<f64> = (0..4).map(|i| b.inputs.get(i, 0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        assert_eq!(xs.len(), 4);
        assert_eq!(buf.sample(100, &mut SimRng::seed_from_u64(0)).unwrap().len(), 10);
        assert_eq!(buf.count_for(0), 4);
    }

    #[test]
    fn perfectly_fit_buffer_has_zero_loss() {
        let params = MlpParams::from_layers(vec![
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        ])
        .unwrap();
        let strategy = NeuralStrategy::Ucb { nu: 0.1 };
        let mut p = NeuralPolicy::with_params("t", params, NetworkConfig { train: false, ..small_cfg() }, strategy, 1e-5).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        for _ in 0..5 {
            p.update(&[0.5], 0, 0.5, &mut rng).unwrap();
        }
        assert_eq!(p.train(&mut rng).unwrap(), 0.0);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut rng = SimRng::seed_from_u64(3);
            let mut p = NeuralPolicy::new("t", 3, 2, small_cfg(), NeuralStrategy::Ts { nu: 0.1 }, 1e-5, &mut rng).unwrap();
            for i in 0..30 {
                let x = [i as f64 / 30.0, 0.5, -0.25];
                let a = p.select(&x, &mut rng).unwrap();
                p.update(&x, a, (i % 2) as f64, &mut rng).unwrap();
            }
            p.losses().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ucb_without_bonus_is_greedy() {
        let mut rng = SimRng::seed_from_u64(8);
        let mut p = NeuralPolicy::new("t", 4, 3, small_cfg(), NeuralStrategy::Ucb { nu: 0.0 }, 1e-5, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (f, _) = mlp_forward(&x, p.params()).unwrap();
            assert_eq!(p.select(&x, &mut rng).unwrap(), argmax(&f));
        }
    }

    #[test]
    fn identical_arms_tie_to_lowest() {
        let layers = vec![
            Matrix::from_vec(2, 1, vec![1.0, 0.5]).unwrap(),
            Matrix::from_vec(2, 2, vec![0.3, 0.2, 0.3, 0.2]).unwrap(),
        ];
        let params = MlpParams::from_layers(layers).unwrap();
        let mut p = NeuralPolicy::with_params("t", params, small_cfg(), NeuralStrategy::Ucb { nu: 0.1 }, 1e-5).unwrap();
        assert_eq!(p.select(&[1.0], &mut SimRng::seed_from_u64(0)).unwrap(), 0);
    }

    #[test]
    fn ucb_bonus_shrinks_for_repeated_arm() {
        let mut rng = SimRng::seed_from_u64(5);
        let cfg = NetworkConfig { train: false, ..small_cfg() };
        let mut p = NeuralPolicy::new("t", 3, 2, cfg, NeuralStrategy::Ucb { nu: 0.1 }, 1e-5, &mut rng).unwrap();
        let x = [0.4, -0.2, 0.9];
        let mut last = p.exploration_widths(&x).unwrap()[1];
        for _ in 0..10 {
            p.update(&x, 1, 1.0, &mut rng).unwrap();
            let w = p.exploration_widths(&x).unwrap()[1];
            assert!(w < last, "{w} !< {last}");
            last = w;
        }
        assert!(p.diag_confidence().iter().all(|m| m.as_slice().iter().all(|&v| v >= 1e-5)));
    }

    #[test]
    fn ts_with_zero_nu_is_greedy() {
        let mut rng = SimRng::seed_from_u64(9);
        let mut p = NeuralPolicy::new("t", 2, 4, small_cfg(), NeuralStrategy::Ts { nu: 0.0 }, 1e-5, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (f, _) = mlp_forward(&x, p.params()).unwrap();
            assert_eq!(p.select(&x, &mut rng).unwrap(), argmax(&f));
        }
    }

    #[test]
    fn ts_symmetric_arms_split_evenly() {
        let layers = vec![
            Matrix::from_vec(2, 1, vec![1.0, 0.5]).unwrap(),
            Matrix::from_vec(2, 2, vec![0.3, 0.2, 0.3, 0.2]).unwrap(),
        ];
        let params = MlpParams::from_layers(layers).unwrap();
        let mut p = NeuralPolicy::with_params("t", params, small_cfg(), NeuralStrategy::Ts { nu: 0.1 }, 1e-5).unwrap();
        let mut rng = SimRng::seed_from_u64(12);
        let n = 10_000;
        let zeros = (0..n).filter(|_| p.select(&[1.0], &mut rng).unwrap() == 0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.025, "{frac}");
    }

    #[test]
    fn neuralrs_observes_estimator() {
        let mut rng = SimRng::seed_from_u64(0);
        let estimator = Estimator::Knn {
            memory: EpisodicMemory::new(2, 100),
            k: 5,
            eps: 1e-4,
        };
        let strategy = NeuralStrategy::Rs { aleph: 0.5, estimator };
        let mut p = NeuralPolicy::new("t", 2, 2, small_cfg(), strategy, 1e-5, &mut rng).unwrap();
        assert_eq!(p.rho(&[0.0, 1.0]).unwrap().unwrap(), vec![0.5, 0.5]);
        for _ in 0..6 {
            p.update(&[0.0, 1.0], 1, 1.0, &mut rng).unwrap();
        }
        assert_eq!(p.rho(&[0.0, 1.0]).unwrap().unwrap(), vec![0.0, 1.0]);
        assert_eq!(p.buffer().len(), 6);
        assert_eq!(p.losses().len(), 6);
    }
}
