//! Dataset-backed bandit environments.
//!
//! Two sources are supported: a synthetic linear-reward generator and the
//! Statlog-Shuttle classification file, read as a 7-armed bandit that pays 1
//! for naming the true class.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::StepOutcome;
use crate::numeric::{dot, Matrix};

pub const SHUTTLE_CLASSES: usize = 7;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("step {step} out of range for dataset of length {len}")]
    StepOutOfRange { step: usize, len: usize },
    #[error("action {action} out of range for {num_actions} actions")]
    ActionOutOfRange { action: usize, num_actions: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Reward ~ Bernoulli(p).
    Bernoulli,
    /// Reward = p.
    Deterministic,
}

/// Contexts and hidden expected rewards, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditDataset {
    pub name: String,
    contexts: Matrix,
    expected: Matrix,
    pub reward_kind: RewardKind,
}

impl BanditDataset {
    pub fn new(name: impl Into<String>, contexts: Matrix, expected: Matrix, reward_kind: RewardKind) -> Result<Self, EnvError> {
        if contexts.rows() != expected.rows() {
            return Err(EnvError::Invalid(format!(
                "{} contexts but {} expected-reward rows",
                contexts.rows(),
                expected.rows()
            )));
        }
        if expected.cols() < 1 {
            return Err(EnvError::Invalid("at least one action required".into()));
        }
        if let Some(p) = expected.as_slice().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(EnvError::Invalid(format!("expected reward {p} outside [0, 1]")));
        }
        if !contexts.is_finite() {
            return Err(EnvError::Invalid("non-finite context entry".into()));
        }
        Ok(Self {
            name: name.into(),
            contexts,
            expected,
            reward_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.contexts.cols()
    }

    pub fn num_actions(&self) -> usize {
        self.expected.cols()
    }

    pub fn context(&self, t: usize) -> &[f64] {
        self.contexts.row(t)
    }

    pub fn expected_rewards(&self, t: usize) -> &[f64] {
        self.expected.row(t)
    }

    /// Writes `x0..x{d-1},p0..p{K-1}` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (0..self.dim())
            .map(|j| format!("x{j}"))
            .chain((0..self.num_actions()).map(|i| format!("p{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for t in 0..self.len() {
            let row: Vec<String> = self
                .context(t)
                .iter()
                .chain(self.expected_rewards(t))
                .map(|v| v.to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Plays `action` at step `t`.
pub fn env_step<R: Rng + ?Sized>(ds: &BanditDataset, t: usize, action: usize, rng: &mut R) -> Result<StepOutcome, EnvError> {
    if t >= ds.len() {
        return Err(EnvError::StepOutOfRange { step: t, len: ds.len() });
    }
    if action >= ds.num_actions() {
        return Err(EnvError::ActionOutOfRange {
            action,
            num_actions: ds.num_actions(),
        });
    }
    let expected = ds.expected_rewards(t);
    let p = expected[action];
    let reward = match ds.reward_kind {
        RewardKind::Deterministic => p,
        RewardKind::Bernoulli => f64::from(u8::from(rng.random::<f64>() < p)),
    };
    Ok(StepOutcome {
        chosen_action: action,
        observed_reward: reward,
        expected_rewards: expected.to_vec(),
        step: t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtificialConfig {
    pub dim: usize,
    pub num_actions: usize,
    /// Mean over steps of the best arm's expected reward.
    pub target_top_mean: f64,
    pub num_points: usize,
    /// Number of distinct base contexts; each step serves one drawn uniformly
    /// from the pool. Zero gives every step its own base context.
    pub pool_size: usize,
    pub context_noise_std: f64,
    pub seed: u64,
}

impl Default for ArtificialConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            num_actions: 4,
            target_top_mean: 0.7,
            num_points: 10_000,
            pool_size: 0,
            context_noise_std: 0.01,
            seed: 0,
        }
    }
}

/// Spread of the affine map: one standard deviation of `θ·x` becomes this
/// many units of expected reward.
const SCORE_SPREAD: f64 = 1.0 / 6.0;

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn mean_top(scores: &[f64], k: usize, scale: f64, offset: f64) -> f64 {
    let rows = scores.len() / k;
    scores
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .map(|s| (offset + scale * s).clamp(0.0, 1.0))
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / rows as f64
}

/// Synthetic linear-reward dataset.
///
/// Arm parameters `θ_i` and a pool of base contexts are drawn uniformly on
/// the unit sphere. Expected rewards are `clip(b + a·θ_i·x, 0, 1)` where `a`
/// fixes the spread and `b` is solved on the pool so the mean best-arm reward
/// hits the target. Each step draws a base context from the pool and the
/// policy sees it with small Gaussian noise added.
pub fn generate_artificial(cfg: &ArtificialConfig) -> Result<BanditDataset, EnvError> {
    if cfg.dim < 1 || cfg.num_actions < 2 || cfg.num_points < 1 {
        return Err(EnvError::Invalid(format!(
            "artificial dataset needs dim >= 1, num_actions >= 2, num_points >= 1 (got {}, {}, {})",
            cfg.dim, cfg.num_actions, cfg.num_points
        )));
    }
    if !(cfg.target_top_mean > 0.0 && cfg.target_top_mean < 1.0) {
        return Err(EnvError::Invalid(format!("target_top_mean {} not in (0, 1)", cfg.target_top_mean)));
    }
    if !(cfg.context_noise_std >= 0.0 && cfg.context_noise_std.is_finite()) {
        return Err(EnvError::Invalid(format!("context_noise_std {}", cfg.context_noise_std)));
    }
    let (d, k, n) = (cfg.dim, cfg.num_actions, cfg.num_points);
    let pool = if cfg.pool_size == 0 { n } else { cfg.pool_size };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thetas: Vec<Vec<f64>> = (0..k).map(|_| random_unit(d, &mut rng)).collect();
    let base: Vec<Vec<f64>> = (0..pool).map(|_| random_unit(d, &mut rng)).collect();
    let scores: Vec<f64> = base
        .iter()
        .flat_map(|x| thetas.iter().map(move |th| dot(th, x)))
        .collect();

    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
    let scale = if var > 0.0 { SCORE_SPREAD / var.sqrt() } else { 0.0 };
    // mean_top is non-decreasing in the offset; bisect for the target
    let (mut lo, mut hi) = (-1.0 - scale * 2.0, 2.0 + scale * 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_top(&scores, k, scale, mid) < cfg.target_top_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let offset = 0.5 * (lo + hi);

    let pool_expected: Vec<f64> = scores.iter().map(|s| (offset + scale * s).clamp(0.0, 1.0)).collect();
    let noise = Normal::new(0.0, cfg.context_noise_std).map_err(|e| EnvError::Invalid(e.to_string()))?;
    let mut contexts = Vec::with_capacity(n * d);
    let mut expected = Vec::with_capacity(n * k);
    for t in 0..n {
        let j = if cfg.pool_size == 0 { t } else { rng.random_range(0..pool) };
        contexts.extend(base[j].iter().map(|v| v + noise.sample(&mut rng)));
        expected.extend_from_slice(&pool_expected[j * k..(j + 1) * k]);
    }
    BanditDataset::new(
        format!("artificial-d{d}-k{k}-seed{}", cfg.seed),
        Matrix::from_vec(n, d, contexts).expect("shape"),
        Matrix::from_vec(n, k, expected).expect("shape"),
        RewardKind::Bernoulli,
    )
}

/// Context-free Bernoulli arms with fixed means, as a dataset with a constant
/// one-dimensional context.
pub fn stationary_bernoulli(means: &[f64], steps: usize) -> Result<BanditDataset, EnvError> {
    let expected: Vec<f64> = (0..steps).flat_map(|_| means.iter().copied()).collect();
    BanditDataset::new(
        "stationary-bernoulli",
        Matrix::from_vec(steps, 1, vec![1.0; steps]).expect("shape"),
        Matrix::from_vec(steps, means.len(), expected).expect("shape"),
        RewardKind::Bernoulli,
    )
}

/// Raw Statlog-Shuttle table: integer attributes and class labels in 1..=7.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuttleTable {
    pub features: Vec<Vec<i64>>,
    pub labels: Vec<usize>,
}

impl ShuttleTable {
    pub fn num_attributes(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_fraction(&self, label: usize) -> f64 {
        self.labels.iter().filter(|&&l| l == label).count() as f64 / self.labels.len().max(1) as f64
    }
}

/// Parses whitespace-separated integer records; the last field is the class.
pub fn parse_shuttle<R: BufRead>(reader: R) -> Result<ShuttleTable, EnvError> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EnvError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<i64>().map_err(|_| EnvError::Parse {
                    line: line_no,
                    message: format!("non-integer token {tok:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() < 2 {
            return Err(EnvError::Parse {
                line: line_no,
                message: "expected attributes followed by a class label".into(),
            });
        }
        let (label, attrs) = values.split_last().expect("non-empty");
        if !(1..=SHUTTLE_CLASSES as i64).contains(label) {
            return Err(EnvError::Parse {
                line: line_no,
                message: format!("class label {label} outside 1..={SHUTTLE_CLASSES}"),
            });
        }
        if let Some(first) = features.first() {
            let expected: &Vec<i64> = first;
            if expected.len() != attrs.len() {
                return Err(EnvError::Parse {
                    line: line_no,
                    message: format!("expected {} attributes, found {}", expected.len(), attrs.len()),
                });
            }
        }
        features.push(attrs.to_vec());
        labels.push(*label as usize);
    }
    if labels.is_empty() {
        return Err(EnvError::Parse {
            line: 0,
            message: "no records".into(),
        });
    }
    Ok(ShuttleTable { features, labels })
}

impl ShuttleTable {
    /// Min-max normalizes every column to [0, 1], shuffles rows with `seed`,
    /// and fits the result to `steps` rows (truncating, or topping up with
    /// rows drawn with replacement).
    pub fn into_dataset(self, steps: Option<usize>, seed: u64) -> Result<BanditDataset, EnvError> {
        let n = self.labels.len();
        let d = self.num_attributes();
        let mut lo = vec![i64::MAX; d];
        let mut hi = vec![i64::MIN; d];
        for row in &self.features {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let normalize = |j: usize, v: i64| -> f64 {
            let span = hi[j] - lo[j];
            if span == 0 {
                0.0
            } else {
                (v - lo[j]) as f64 / span as f64
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let steps = steps.unwrap_or(n);
        if steps == 0 {
            return Err(EnvError::Invalid("step count must be at least 1".into()));
        }
        order.truncate(steps);
        while order.len() < steps {
            order.push(rng.random_range(0..n));
        }

        let mut contexts = Vec::with_capacity(steps * d);
        let mut expected = vec![0.0; steps * SHUTTLE_CLASSES];
        for (t, &row) in order.iter().enumerate() {
            contexts.extend(self.features[row].iter().enumerate().map(|(j, &v)| normalize(j, v)));
            expected[t * SHUTTLE_CLASSES + self.labels[row] - 1] = 1.0;
        }
        BanditDataset::new(
            "shuttle",
            Matrix::from_vec(steps, d, contexts).expect("shape"),
            Matrix::from_vec(steps, SHUTTLE_CLASSES, expected).expect("shape"),
            RewardKind::Deterministic,
        )
    }
}

/// Reads a UCI `shuttle.trn` / `shuttle.tst` file as a bandit dataset.
pub fn load_shuttle(path: &Path, steps: Option<usize>, seed: u64) -> Result<BanditDataset, EnvError> {
    read_shuttle_table(path)?.into_dataset(steps, seed)
}

pub fn read_shuttle_table(path: &Path) -> Result<ShuttleTable, EnvError> {
    let file = File::open(path).map_err(|source| EnvError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_shuttle(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artificial_is_deterministic_and_calibrated() {
        let cfg = ArtificialConfig {
            num_points: 2_000,
            seed: 7,
            ..Default::default()
        };
        let a = generate_artificial(&cfg).unwrap();
        let b = generate_artificial(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.len(), a.dim(), a.num_actions()), (2_000, 64, 4));

        // empirical mean of the best arm's expected reward
        let top: f64 = (0..a.len())
            .map(|t| a.expected_rewards(t).iter().copied().fold(0.0, f64::max))
            .sum::<f64>()
            / a.len() as f64;
        assert!((top - 0.7).abs() <= 0.02, "mean top reward {top}");
        assert!((0..a.len()).all(|t| a.expected_rewards(t).iter().all(|p| (0.0..=1.0).contains(p))));

        let other = generate_artificial(&ArtificialConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn artificial_rejects_bad_config() {
        for cfg in [
            ArtificialConfig { dim: 0, ..Default::default() },
            ArtificialConfig { num_actions: 1, ..Default::default() },
            ArtificialConfig { target_top_mean: 1.0, ..Default::default() },
            ArtificialConfig { context_noise_std: -0.1, ..Default::default() },
        ] {
            assert!(matches!(generate_artificial(&cfg), Err(EnvError::Invalid(_))));
        }
    }

    #[test]
    fn artificial_noise_is_small() {
        let cfg = ArtificialConfig { num_points: 50, ..Default::default() };
        let ds = generate_artificial(&cfg).unwrap();
        for t in 0..ds.len() {
            let norm = dot(ds.context(t), ds.context(t)).sqrt();
            assert!((norm - 1.0).abs() < 0.2);
        }
    }

    const SAMPLE: &str = "50 21 77 0 28 0 27 48 22 2\n55 0 81 0 -6 11 25 88 64 4\n56 0 96 0 52 -4 40 44 4 4\n";

    #[test]
    fn parses_sample_line() {
        let table = parse_shuttle(SAMPLE.as_bytes()).unwrap();
        assert_eq!(table.num_attributes(), 9);
        assert_eq!(table.features[0], vec![50, 21, 77, 0, 28, 0, 27, 48, 22]);
        assert_eq!(table.labels, vec![2, 4, 4]);
        let ds = table.into_dataset(None, 0).unwrap();
        assert_eq!(ds.num_actions(), 7);
        assert_eq!(ds.reward_kind, RewardKind::Deterministic);
        let row_with_label_2 = (0..3).find(|&t| ds.expected_rewards(t)[1] == 1.0).unwrap();
        let mut expected = vec![0.0; 7];
        expected[1] = 1.0;
        assert_eq!(ds.expected_rewards(row_with_label_2), expected.as_slice());
        for t in 0..ds.len() {
            assert!(ds.context(t).iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(ds.expected_rewards(t).iter().filter(|&&p| p == 1.0).count(), 1);
            assert_eq!(ds.expected_rewards(t).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn shuttle_fits_to_step_count() {
        let table = parse_shuttle(SAMPLE.as_bytes()).unwrap();
        let short = table.clone().into_dataset(Some(2), 1).unwrap();
        assert_eq!(short.len(), 2);
        let long = table.clone().into_dataset(Some(25), 1).unwrap();
        assert_eq!(long.len(), 25);
        assert_eq!(long, table.into_dataset(Some(25), 1).unwrap());
    }

    #[test]
    fn shuttle_ingestion_errors_carry_line_numbers() {
        let bad_token = "1 2 3 1\n4 x 6 1\n";
        assert!(matches!(parse_shuttle(bad_token.as_bytes()), Err(EnvError::Parse { line: 2, .. })));
        let bad_label = "1 2 3 1\n4 5 6 8\n";
        assert!(matches!(parse_shuttle(bad_label.as_bytes()), Err(EnvError::Parse { line: 2, .. })));
        let zero_label = "1 2 3 0\n";
        assert!(matches!(parse_shuttle(zero_label.as_bytes()), Err(EnvError::Parse { line: 1, .. })));
        let missing = load_shuttle(Path::new("/nonexistent/shuttle.trn"), None, 0);
        assert!(matches!(missing, Err(EnvError::Io { .. })));
    }

    #[test]
    fn env_step_rewards() {
        let table = parse_shuttle("1 2 3\n".as_bytes()).unwrap();
        let ds = table.into_dataset(None, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(env_step(&ds, 0, 2, &mut rng).unwrap().observed_reward, 1.0);
        assert_eq!(env_step(&ds, 0, 0, &mut rng).unwrap().observed_reward, 0.0);
        assert!(matches!(env_step(&ds, 1, 0, &mut rng), Err(EnvError::StepOutOfRange { .. })));
        assert!(matches!(env_step(&ds, 0, 7, &mut rng), Err(EnvError::ActionOutOfRange { .. })));
    }

    #[test]
    fn bernoulli_rewards_match_mean() {
        let ds = stationary_bernoulli(&[0.7, 0.2], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let total: f64 = (0..n).map(|_| env_step(&ds, 0, 0, &mut rng).unwrap().observed_reward).sum();
        assert!((total / n as f64 - 0.7).abs() <= 0.015);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let ds = stationary_bernoulli(&[0.5, 0.25], 3).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,p0,p1");
        assert_eq!(lines[1], "1,0.5,0.25");
        assert_eq!(lines.len(), 4);
    }
}
