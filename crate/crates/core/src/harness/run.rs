use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_policy, EnvKind, ExperimentConfig, HarnessError, PolicyKind, PolicySpec};
use crate::bandit::{PolicyError, RegretTrace, SimRng, StepOutcome};
use crate::env::{env_step, generate_artificial, read_shuttle_table, ArtificialConfig, BanditDataset, EnvError, ShuttleTable};
use crate::numeric::argmax;

/// Window for the trailing accuracy statistic.
pub const TRAILING_WINDOW: usize = 1000;

const STREAM_POLICY: u64 = 1;
const STREAM_ENV: u64 = 2;

/// Where per-run datasets come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Artificial(ArtificialConfig),
    Shuttle(Arc<ShuttleTable>),
}

impl DataSource {
    /// The dataset for one run; every policy sees the same one for a given seed.
    pub fn dataset(&self, steps: usize, seed: u64) -> Result<BanditDataset, EnvError> {
        match self {
            Self::Artificial(base) => generate_artificial(&ArtificialConfig {
                num_points: steps,
                seed,
                ..base.clone()
            }),
            Self::Shuttle(table) => ShuttleTable::clone(table).into_dataset(Some(steps), seed),
        }
    }
}

pub fn prepare_source(cfg: &ExperimentConfig) -> Result<DataSource, HarnessError> {
    Ok(match cfg.env {
        EnvKind::Artificial => DataSource::Artificial(cfg.artificial.clone()),
        EnvKind::Shuttle => {
            let path = cfg
                .shuttle_path
                .as_ref()
                .ok_or_else(|| HarnessError::Config("the shuttle environment needs a data file path".into()))?;
            DataSource::Shuttle(Arc::new(read_shuttle_table(path)?))
        }
    })
}

fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn env_failure(e: EnvError) -> PolicyError {
    PolicyError::Invalid(e.to_string())
}

/// Plays one policy against `ds` for `steps` steps (cycling the dataset if it
/// is shorter). Learning policies and the oracle first pull every action
/// `warmup_pulls` times round-robin; those steps are part of the budget.
pub fn run_simulation(
    spec: &PolicySpec,
    ds: &BanditDataset,
    steps: usize,
    seed: u64,
    warmup_in_regret: bool,
) -> Result<RegretTrace, PolicyError> {
    let k = ds.num_actions();
    let mut policy_rng = rng_stream(seed, STREAM_POLICY);
    let mut env_rng = rng_stream(seed, STREAM_ENV);
    let mut policy = match spec.kind {
        PolicyKind::Oracle => None,
        _ => Some(build_policy(spec, ds.dim(), k, &mut policy_rng)?),
    };
    let warmup = match &policy {
        Some(p) if !p.needs_warmup() => 0,
        _ => (k * spec.hyper.warmup_pulls).min(steps),
    };

    let mut trace = RegretTrace::with_capacity(steps);
    for t in 0..steps {
        let row = t % ds.len();
        let x = ds.context(row);
        if t == warmup && t > 0 {
            if let Some(p) = policy.as_mut() {
                p.warmup_complete()?;
            }
        }
        let action = if t < warmup {
            t % k
        } else {
            match policy.as_mut() {
                Some(p) => p.select(x, &mut policy_rng)?,
                None => argmax(ds.expected_rewards(row)),
            }
        };
        if action >= k {
            return Err(PolicyError::Invalid(format!("policy chose action {action} of {k}")));
        }
        let StepOutcome {
            observed_reward,
            expected_rewards,
            ..
        } = env_step(ds, row, action, &mut env_rng).map_err(env_failure)?;
        if let Some(p) = policy.as_mut() {
            p.update(x, action, observed_reward, &mut policy_rng)?;
        }
        let outcome = StepOutcome {
            chosen_action: action,
            observed_reward,
            expected_rewards,
            step: t,
        };
        trace.push_counted(&outcome, warmup_in_regret || t >= warmup);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub reason: String,
}

/// Per-step statistics across the successful runs of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedResult {
    pub policy: String,
    pub kind: PolicyKind,
    pub steps: usize,
    pub runs_ok: usize,
    pub failures: Vec<RunFailure>,
    pub mean_regret: Vec<f64>,
    pub stderr_regret: Vec<f64>,
    /// Mean over runs of the running average reward.
    pub mean_reward: Vec<f64>,
    /// Mean over runs of the running fraction of optimal choices.
    pub mean_accuracy: Vec<f64>,
    /// Final cumulative regret of each successful run, in run order.
    pub final_regrets: Vec<f64>,
    pub final_regret_mean: f64,
    pub final_regret_stderr: f64,
    pub final_accuracy_mean: f64,
    pub final_accuracy_stderr: f64,
    /// Accuracy over the last [`TRAILING_WINDOW`] steps.
    pub trailing_accuracy_mean: f64,
    pub trailing_accuracy_stderr: f64,
    pub traces: Vec<RegretTrace>,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn trace_is_finite(trace: &RegretTrace) -> bool {
    trace
        .cumulative_regret
        .iter()
        .chain(&trace.cumulative_reward)
        .chain(&trace.correct_rate)
        .all(|v| v.is_finite())
}

/// Reduces run outcomes (in run order) to per-step statistics. Failed runs
/// are logged and excluded.
pub fn aggregate(
    spec: &PolicySpec,
    steps: usize,
    outcomes: Vec<(u64, Result<RegretTrace, PolicyError>)>,
    keep_traces: bool,
) -> Result<AggregatedResult, HarnessError> {
    let total = outcomes.len();
    let mut traces = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (run, (seed, outcome)) in outcomes.into_iter().enumerate() {
        let reason = match outcome {
            Ok(trace) if trace.len() == steps && trace_is_finite(&trace) => {
                traces.push(trace);
                continue;
            }
            Ok(_) => "trace has non-finite values or wrong length".to_string(),
            Err(e) => e.to_string(),
        };
        log::warn!("policy {} run {run} (seed {seed}) failed: {reason}", spec.name);
        failures.push(RunFailure { run, seed, reason });
    }
    if traces.is_empty() {
        return Err(HarnessError::AllRunsFailed {
            policy: spec.name.clone(),
            runs: total,
            reason: failures.first().map_or_else(String::new, |f| f.reason.clone()),
        });
    }

    let mut mean_regret = Vec::with_capacity(steps);
    let mut stderr_regret = Vec::with_capacity(steps);
    let mut mean_reward = Vec::with_capacity(steps);
    let mut mean_accuracy = Vec::with_capacity(steps);
    let n = traces.len() as f64;
    let mut column = vec![0.0; traces.len()];
    for t in 0..steps {
        for (c, tr) in column.iter_mut().zip(&traces) {
            *c = tr.cumulative_regret[t];
        }
        let (m, se) = mean_stderr(&column);
        mean_regret.push(m);
        stderr_regret.push(se);
        mean_reward.push(traces.iter().map(|tr| tr.cumulative_reward[t] / (t + 1) as f64).sum::<f64>() / n);
        mean_accuracy.push(traces.iter().map(|tr| tr.correct_rate[t]).sum::<f64>() / n);
    }
    let final_regrets: Vec<f64> = traces.iter().map(RegretTrace::final_regret).collect();
    let (final_regret_mean, final_regret_stderr) = mean_stderr(&final_regrets);
    let finals: Vec<f64> = traces.iter().map(|tr| tr.correct_rate[steps - 1]).collect();
    let (final_accuracy_mean, final_accuracy_stderr) = mean_stderr(&finals);
    let trailing: Vec<f64> = traces.iter().map(|tr| tr.trailing_accuracy(TRAILING_WINDOW)).collect();
    let (trailing_accuracy_mean, trailing_accuracy_stderr) = mean_stderr(&trailing);

    Ok(AggregatedResult {
        policy: spec.name.clone(),
        kind: spec.kind,
        steps,
        runs_ok: traces.len(),
        failures,
        mean_regret,
        stderr_regret,
        mean_reward,
        mean_accuracy,
        final_regrets,
        final_regret_mean,
        final_regret_stderr,
        final_accuracy_mean,
        final_accuracy_stderr,
        trailing_accuracy_mean,
        trailing_accuracy_stderr,
        traces: if keep_traces { traces } else { Vec::new() },
    })
}

/// Runs every configured policy `runs` times with seeds `seed + run_index`.
/// Runs execute on the rayon pool and are merged by run index, so results
/// do not depend on the degree of parallelism.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<Vec<AggregatedResult>, HarnessError> {
    cfg.validate()?;
    let source = prepare_source(cfg)?;
    // surface data problems once, up front, rather than as per-run failures
    source.dataset(cfg.steps, cfg.seed)?;

    let tasks: Vec<(usize, usize)> = (0..cfg.policies.len())
        .flat_map(|p| (0..cfg.runs).map(move |r| (p, r)))
        .collect();
    let outcomes: Vec<(u64, Result<RegretTrace, PolicyError>)> = tasks
        .par_iter()
        .map(|&(p, r)| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let outcome = source
                .dataset(cfg.steps, seed)
                .map_err(env_failure)
                .and_then(|ds| run_simulation(&cfg.policies[p], &ds, cfg.steps, seed, cfg.warmup_in_regret));
            (seed, outcome)
        })
        .collect();

    let mut outcomes = outcomes.into_iter();
    cfg.policies
        .iter()
        .map(|spec| {
            let chunk: Vec<_> = outcomes.by_ref().take(cfg.runs).collect();
            aggregate(spec, cfg.steps, chunk, cfg.keep_traces)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{RewardKind, stationary_bernoulli};
    use crate::harness::Hyperparams;
    use crate::numeric::Matrix;

    fn spec(kind: PolicyKind) -> PolicySpec {
        PolicySpec::new(kind, Hyperparams::default())
    }

    #[test]
    fn oracle_has_no_regret_after_warmup() {
        let ds = stationary_bernoulli(&[0.2, 0.8, 0.5], 300).unwrap();
        let trace = run_simulation(&spec(PolicyKind::Oracle), &ds, 300, 1, true).unwrap();
        // warmup: 10 rounds of (0.6 + 0 + 0.3)
        assert!((trace.cumulative_regret[29] - 9.0).abs() < 1e-9);
        assert_eq!(trace.final_regret(), trace.cumulative_regret[29]);
        let excluded = run_simulation(&spec(PolicyKind::Oracle), &ds, 300, 1, false).unwrap();
        assert_eq!(excluded.final_regret(), 0.0);
    }

    #[test]
    fn random_policy_regret_matches_expectation() {
        let n = 1000;
        let expected = Matrix::from_vec(n, 2, (0..n).flat_map(|_| [1.0, 0.8]).collect()).unwrap();
        let ds = BanditDataset::new("gap", Matrix::from_vec(n, 1, vec![1.0; n]).unwrap(), expected, RewardKind::Deterministic)
            .unwrap();
        let trace = run_simulation(&spec(PolicyKind::Random), &ds, n, 7, true).unwrap();
        assert!((trace.final_regret() - 100.0).abs() < 15.0, "{}", trace.final_regret());
    }

    #[test]
    fn same_seed_same_trace() {
        let ds = stationary_bernoulli(&[0.7, 0.5], 500).unwrap();
        let a = run_simulation(&spec(PolicyKind::Rs), &ds, 500, 3, true).unwrap();
        let b = run_simulation(&spec(PolicyKind::Rs), &ds, 500, 3, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_cycles_when_short() {
        let ds = stationary_bernoulli(&[0.7, 0.5], 10).unwrap();
        let trace = run_simulation(&spec(PolicyKind::Rs), &ds, 100, 3, true).unwrap();
        assert_eq!(trace.len(), 100);
    }

    #[test]
    fn single_run_aggregate_is_the_trace() {
        let ds = stationary_bernoulli(&[0.7, 0.5], 200).unwrap();
        let s = spec(PolicyKind::Rs);
        let trace = run_simulation(&s, &ds, 200, 0, true).unwrap();
        let agg = aggregate(&s, 200, vec![(0, Ok(trace.clone()))], true).unwrap();
        assert_eq!(agg.mean_regret, trace.cumulative_regret);
        assert!(agg.stderr_regret.iter().all(|&v| v == 0.0));
        assert_eq!(agg.mean_accuracy, trace.correct_rate);
    }

    #[test]
    fn failed_runs_are_excluded() {
        let ds = stationary_bernoulli(&[0.7, 0.5], 50).unwrap();
        let s = spec(PolicyKind::Rs);
        let trace = run_simulation(&s, &ds, 50, 0, true).unwrap();
        let outcomes = vec![(0, Err(PolicyError::Invalid("boom".into()))), (1, Ok(trace.clone()))];
        let agg = aggregate(&s, 50, outcomes, false).unwrap();
        assert_eq!(agg.runs_ok, 1);
        assert_eq!(agg.failures[0].run, 0);
        assert_eq!(agg.mean_regret, trace.cumulative_regret);

        let all_bad = vec![(0, Err(PolicyError::Invalid("boom".into())))];
        assert!(matches!(aggregate(&s, 50, all_bad, false), Err(HarnessError::AllRunsFailed { .. })));
    }
}
