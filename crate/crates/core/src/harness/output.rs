use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::{RunFailure, TRAILING_WINDOW};
use super::{AggregatedResult, ExperimentConfig, HarnessError};

const METRICS: [&str; 4] = ["mean_regret", "stderr_regret", "mean_reward", "mean_accuracy"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub runs_ok: usize,
    pub failures: Vec<RunFailure>,
    pub final_regret_mean: f64,
    pub final_regret_stderr: f64,
    pub final_accuracy_mean: f64,
    pub trailing_accuracy_mean: f64,
}

/// Contents of `metadata.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    /// `sha256("blob <len>\0" + canonical config JSON)`.
    pub content_hash: String,
    pub version: String,
    pub design_flags: BTreeMap<String, serde_json::Value>,
    pub trailing_window: usize,
    pub summaries: Vec<PolicySummary>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hasher.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn design_flags(cfg: &ExperimentConfig) -> BTreeMap<String, serde_json::Value> {
    use serde_json::json;
    let h = &cfg.hyper;
    BTreeMap::from([
        ("warmup_in_regret".into(), json!(cfg.warmup_in_regret)),
        ("warmup_pulls_per_action".into(), json!(h.warmup_pulls)),
        ("kmeans_decay_unchosen_actions".into(), json!(h.decay_unchosen)),
        ("kmeans_softmax_over_actions".into(), json!(true)),
        ("kmeans_weights_normalized".into(), json!(false)),
        ("knn_k_clamped_to_memory_size".into(), json!(true)),
        ("knn_geometry".into(), json!("raw_context")),
        ("kmeans_geometry".into(), json!("penultimate_relu")),
        ("neural_confidence".into(), json!("diagonal")),
        ("replay_sampling".into(), json!("uniform_full_history_without_replacement")),
        ("train_steps_per_env_step".into(), json!(1)),
        ("network_training".into(), json!("incremental")),
        ("linear_refit_every".into(), json!(h.linear_refit_every)),
        ("argmax_tie_break".into(), json!("lowest_index")),
        ("dataset_cycles_when_short".into(), json!(true)),
    ])
}

fn file_stem(policy: &str) -> String {
    policy
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn metric_values(r: &AggregatedResult) -> [&[f64]; 4] {
    [&r.mean_regret, &r.stderr_regret, &r.mean_reward, &r.mean_accuracy]
}

/// Writes per-policy CSVs, `results_long.csv`, `summary.csv`,
/// `metadata.json` and `regret.svg` into `dir`. Returns the paths written.
pub fn write_results(results: &[AggregatedResult], cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    for r in results {
        let path = dir.join(format!("{}.csv", file_stem(&r.policy)));
        let mut out = create(&path)?;
        let body = (|| -> std::io::Result<()> {
            writeln!(out, "step,{}", METRICS.join(","))?;
            let cols = metric_values(r);
            for t in 0..r.steps {
                writeln!(out, "{},{},{},{},{}", t + 1, cols[0][t], cols[1][t], cols[2][t], cols[3][t])?;
            }
            out.flush()
        })();
        body.map_err(io_err(&path))?;
        written.push(path);
    }

    let path = dir.join("results_long.csv");
    let mut out = create(&path)?;
    let body = (|| -> std::io::Result<()> {
        writeln!(out, "policy,step,metric,value")?;
        for r in results {
            for (metric, values) in METRICS.iter().zip(metric_values(r)) {
                for (t, v) in values.iter().enumerate() {
                    writeln!(out, "{},{},{metric},{v}", r.policy, t + 1)?;
                }
            }
        }
        out.flush()
    })();
    body.map_err(io_err(&path))?;
    written.push(path);

    let path = dir.join("summary.csv");
    let mut out = create(&path)?;
    let body = (|| -> std::io::Result<()> {
        writeln!(
            out,
            "policy,runs_ok,runs_failed,final_regret_mean,final_regret_stderr,final_accuracy_mean,trailing_accuracy_mean"
        )?;
        for r in results {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.policy,
                r.runs_ok,
                r.failures.len(),
                r.final_regret_mean,
                r.final_regret_stderr,
                r.final_accuracy_mean,
                r.trailing_accuracy_mean
            )?;
        }
        out.flush()
    })();
    body.map_err(io_err(&path))?;
    written.push(path);

    let config_json = serde_json::to_vec(cfg).expect("config serializes");
    let meta = Metadata {
        config: cfg.clone(),
        content_hash: content_hash(&config_json),
        version: env!("CARGO_PKG_VERSION").to_string(),
        design_flags: design_flags(cfg),
        trailing_window: TRAILING_WINDOW,
        summaries: results
            .iter()
            .map(|r| PolicySummary {
                policy: r.policy.clone(),
                runs_ok: r.runs_ok,
                failures: r.failures.clone(),
                final_regret_mean: r.final_regret_mean,
                final_regret_stderr: r.final_regret_stderr,
                final_accuracy_mean: r.final_accuracy_mean,
                trailing_accuracy_mean: r.trailing_accuracy_mean,
            })
            .collect(),
    };
    let path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    written.push(path);

    let path = dir.join("regret.svg");
    fs::write(&path, write_svg(results, "Cumulative regret")).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

pub fn read_metadata(path: &Path) -> Result<Metadata, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const MAX_POINTS: usize = 500;

/// Static line chart of mean cumulative regret per policy.
pub fn write_svg(results: &[AggregatedResult], title: &str) -> String {
    let (w, h) = (800.0, 500.0);
    let (left, right, top, bottom) = (70.0, 180.0, 40.0, 50.0);
    let steps = results.iter().map(|r| r.steps).max().unwrap_or(1).max(1);
    let ymax = results
        .iter()
        .flat_map(|r| r.mean_regret.iter().copied())
        .fold(0.0, f64::max)
        .max(1e-12);
    let px = |t: usize| left + (w - left - right) * t as f64 / steps as f64;
    let py = |v: f64| h - bottom - (h - top - bottom) * v / ymax;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="16">{title}</text>"#, left);
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, left - 6.0, h - bottom);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{ymax:.1}</text>"#, left - 6.0, top + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{steps}</text>"#, w - right, h - bottom + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, (left + w - right) / 2.0, h - 12.0);

    for (i, r) in results.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let stride = r.mean_regret.len().div_ceil(MAX_POINTS).max(1);
        let mut points: Vec<usize> = (0..r.mean_regret.len()).step_by(stride).collect();
        if let Some(&last) = points.last() {
            if last + 1 != r.mean_regret.len() {
                points.push(r.mean_regret.len() - 1);
            }
        }
        let coords: Vec<String> = points
            .iter()
            .map(|&t| format!("{:.2},{:.2}", px(t + 1), py(r.mean_regret[t])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 18.0 * i as f64;
        let lx = w - right + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&r.policy));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
