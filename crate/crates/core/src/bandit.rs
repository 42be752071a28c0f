//! Policy contract, regret accounting and the basic RS value function.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{argmax, NumericError};

/// RNG handed to policies. One stream per run keeps runs reproducible.
pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("training diverged: {0}")]
    Divergence(NumericError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// A bandit policy. `update` never sees the environment's expected rewards.
pub trait Policy: Send {
    fn name(&self) -> &str;

    fn num_actions(&self) -> usize;

    /// Whether the harness should force round-robin pulls before `select` is used.
    fn needs_warmup(&self) -> bool {
        true
    }

    /// Called once when forced warmup pulls are over.
    fn warmup_complete(&mut self) -> Result<(), PolicyError> {
        Ok(())
    }

    fn select(&mut self, x: &[f64], rng: &mut SimRng) -> Result<usize, PolicyError>;

    fn update(&mut self, x: &[f64], action: usize, reward: f64, rng: &mut SimRng) -> Result<(), PolicyError>;
}

/// What happened on one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub chosen_action: usize,
    pub observed_reward: f64,
    /// Hidden from policies; used only for regret.
    pub expected_rewards: Vec<f64>,
    pub step: usize,
}

impl StepOutcome {
    pub fn regret(&self) -> f64 {
        let best = self.expected_rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (best - self.expected_rewards[self.chosen_action]).max(0.0)
    }

    /// True when the chosen action attains the best expected reward.
    pub fn is_correct(&self) -> bool {
        self.regret() == 0.0
    }
}

/// Per-step series for one simulation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub cumulative_regret: Vec<f64>,
    pub cumulative_reward: Vec<f64>,
    /// Running fraction of steps whose choice was an argmax action.
    pub correct_rate: Vec<f64>,
    pub chosen_actions: Vec<usize>,
    pub correct: Vec<bool>,
}

impl RegretTrace {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            cumulative_regret: Vec::with_capacity(n),
            cumulative_reward: Vec::with_capacity(n),
            correct_rate: Vec::with_capacity(n),
            chosen_actions: Vec::with_capacity(n),
            correct: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.chosen_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen_actions.is_empty()
    }

    /// Appends one step, adding `max_i p_i − p_chosen` to the cumulative regret.
    pub fn push(&mut self, outcome: &StepOutcome) {
        self.push_counted(outcome, true);
    }

    /// Like [`push`](Self::push), but the regret increment is dropped when
    /// `count_regret` is false (used to exclude warmup steps).
    pub fn push_counted(&mut self, outcome: &StepOutcome, count_regret: bool) {
        let increment = if count_regret { outcome.regret() } else { 0.0 };
        let prev_regret = self.cumulative_regret.last().copied().unwrap_or(0.0);
        let prev_reward = self.cumulative_reward.last().copied().unwrap_or(0.0);
        let correct = outcome.is_correct();
        let n = self.len() as f64;
        let prev_hits = self.correct_rate.last().map_or(0.0, |r| r * n);
        self.cumulative_regret.push(prev_regret + increment);
        self.cumulative_reward.push(prev_reward + outcome.observed_reward);
        self.correct_rate.push((prev_hits + f64::from(u8::from(correct))) / (n + 1.0));
        self.chosen_actions.push(outcome.chosen_action);
        self.correct.push(correct);
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// Fraction of correct choices over the last `window` steps.
    pub fn trailing_accuracy(&self, window: usize) -> f64 {
        let w = window.min(self.len());
        if w == 0 {
            return 0.0;
        }
        let hits = self.correct[self.len() - w..].iter().filter(|&&c| c).count();
        hits as f64 / w as f64
    }
}

/// Functional form of [`RegretTrace::push`].
pub fn regret_update(mut trace: RegretTrace, outcome: &StepOutcome) -> RegretTrace {
    trace.push(outcome);
    trace
}

/// Σ_t (ℵ − p_t): the agent-observable shortfall below the aspiration level.
pub fn subjective_regret(series: &[f64], aleph: f64) -> f64 {
    series.iter().map(|p| aleph - p).sum()
}

/// RS value `(n_i / N)(E_i − ℵ)`.
pub fn rs_value(pulls: u64, total: u64, mean: f64, aleph: f64) -> Result<f64, PolicyError> {
    if total == 0 {
        return Err(PolicyError::Invalid("total trial count N must be at least 1".into()));
    }
    if pulls > total {
        return Err(PolicyError::Invalid(format!("n_i = {pulls} exceeds N = {total}")));
    }
    Ok(pulls as f64 / total as f64 * (mean - aleph))
}

/// Context-free RS on a K-armed bandit with incremental sample means.
#[derive(Debug, Clone)]
pub struct RsPolicy {
    aleph: f64,
    pulls: Vec<u64>,
    means: Vec<f64>,
}

impl RsPolicy {
    pub fn new(num_actions: usize, aleph: f64) -> Self {
        Self {
            aleph,
            pulls: vec![0; num_actions],
            means: vec![0.0; num_actions],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let total: u64 = self.pulls.iter().sum();
        if total == 0 {
            return vec![0.0; self.pulls.len()];
        }
        self.pulls
            .iter()
            .zip(&self.means)
            .map(|(&n, &e)| n as f64 / total as f64 * (e - self.aleph))
            .collect()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }
}

impl Policy for RsPolicy {
    fn name(&self) -> &str {
        "rs"
    }

    fn num_actions(&self) -> usize {
        self.pulls.len()
    }

    fn select(&mut self, _x: &[f64], _rng: &mut SimRng) -> Result<usize, PolicyError> {
        Ok(argmax(&self.values()))
    }

    fn update(&mut self, _x: &[f64], action: usize, reward: f64, _rng: &mut SimRng) -> Result<(), PolicyError> {
        let n = &mut self.pulls[action];
        *n += 1;
        self.means[action] += (reward - self.means[action]) / *n as f64;
        Ok(())
    }
}

/// Uniformly random baseline.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    num_actions: usize,
}

impl RandomPolicy {
    pub fn new(num_actions: usize) -> Self {
        Self { num_actions }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn needs_warmup(&self) -> bool {
        false
    }

    fn select(&mut self, _x: &[f64], rng: &mut SimRng) -> Result<usize, PolicyError> {
        Ok(rng.random_range(0..self.num_actions))
    }

    fn update(&mut self, _: &[f64], _: usize, _: f64, _: &mut SimRng) -> Result<(), PolicyError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn outcome(expected: &[f64], chosen: usize) -> StepOutcome {
        StepOutcome {
            chosen_action: chosen,
            observed_reward: expected[chosen],
            expected_rewards: expected.to_vec(),
            step: 0,
        }
    }

    #[test]
    fn regret_update_examples() {
        let t = regret_update(RegretTrace::default(), &outcome(&[0.9, 0.7], 0));
        assert_eq!(t.final_regret(), 0.0);
        assert_eq!(t.correct_rate, vec![1.0]);

        let mut t = RegretTrace::default();
        for _ in 0..10 {
            t.push(&outcome(&[0.9, 0.7], 1));
        }
        assert!((t.final_regret() - 2.0).abs() < 1e-12);
        assert_eq!(t.correct_rate.last(), Some(&0.0));

        let mut t = RegretTrace::default();
        t.push(&outcome(&[0.4, 0.4, 0.4], 2));
        assert_eq!(t.final_regret(), 0.0);
        assert!(t.correct[0]);
    }

    #[test]
    fn uncounted_steps_add_no_regret() {
        let mut t = RegretTrace::default();
        t.push_counted(&outcome(&[1.0, 0.0], 1), false);
        t.push_counted(&outcome(&[1.0, 0.0], 1), true);
        assert_eq!(t.cumulative_regret, vec![0.0, 1.0]);
        assert_eq!(t.correct_rate, vec![0.0, 0.0]);
    }

    #[test]
    fn subjective_regret_examples() {
        assert!(subjective_regret(&[0.7; 3], 0.7).abs() < 1e-12);
        assert!((subjective_regret(&[0.9; 5], 0.7) + 1.0).abs() < 1e-12);
        assert!((subjective_regret(&[0.5, 0.6, 0.7], 0.65) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn rs_value_examples() {
        assert!((rs_value(5, 10, 0.8, 0.7).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(rs_value(3, 7, 0.65, 0.65).unwrap(), 0.0);
        assert!((rs_value(1, 100, 0.2, 0.7).unwrap() + 0.005).abs() < 1e-12);
        assert!(rs_value(0, 0, 0.5, 0.5).is_err());
        assert!(rs_value(5, 4, 0.5, 0.5).is_err());
    }

    #[test]
    fn rs_argmax_exploits_over_achiever() {
        // E0 > ℵ > E1 with n0/N near 1
        let mut p = RsPolicy::new(2, 0.6);
        p.pulls = vec![95, 5];
        p.means = vec![0.7, 0.5];
        assert_eq!(argmax(&p.values()), 0);
    }

    #[test]
    fn rs_argmax_explores_under_tried_arm() {
        // both below ℵ: the smaller n_i (ℵ − E_i) wins
        let aleph = 0.6;
        let cases = [
            ([10u64, 40], [0.5, 0.55]),
            ([40, 10], [0.5, 0.55]),
            ([30, 30], [0.1, 0.5]),
            ([3, 50], [0.1, 0.59]),
        ];
        for (pulls, means) in cases {
            let mut p = RsPolicy::new(2, aleph);
            p.pulls = pulls.to_vec();
            p.means = means.to_vec();
            let shortfall: Vec<f64> = (0..2).map(|i| pulls[i] as f64 * (aleph - means[i])).collect();
            let expected = if shortfall[1] < shortfall[0] { 1 } else { 0 };
            assert_eq!(argmax(&p.values()), expected, "{pulls:?} {means:?}");
        }
    }

    #[test]
    fn rs_tracks_incremental_means() {
        let mut p = RsPolicy::new(2, 0.5);
        let mut rng = <SimRng as rand::SeedableRng>::seed_from_u64(0);
        for r in [1.0, 0.0, 1.0, 1.0] {
            p.update(&[], 1, r, &mut rng).unwrap();
        }
        assert_eq!(p.means(), &[0.0, 0.75]);
        assert_eq!(p.pulls(), &[0, 4]);
    }

    proptest! {
        #[test]
        fn regret_is_monotone(steps in prop::collection::vec((prop::collection::vec(0.0f64..=1.0, 3), 0usize..3), 1..60)) {
            let mut t = RegretTrace::default();
            for (p, a) in &steps {
                t.push(&outcome(p, *a));
            }
            let r = &t.cumulative_regret;
            prop_assert!(r[0] >= 0.0 && r[0] <= 1.0);
            for w in r.windows(2) {
                let inc = w[1] - w[0];
                prop_assert!((0.0..=1.0 + 1e-12).contains(&inc));
            }
        }
    }
}
