//! Plain-text experiment files: `key = value` lines, `#` comments, and
//! `[policy.NAME]` sections whose keys override the global hyperparameters.
//!
//! ```text
//! env = artificial
//! runs = 10
//!
//! [policy.neuralrs-kmeans]
//! kind = neuralrs
//! reliability = kmeans
//! ```
//!
//! A section's `kind` defaults to its name. Without sections, a global
//! `policies = a, b, ...` line lists policy kinds with default labels.

use std::fs;
use std::path::{Path, PathBuf};

use super::{parse_value, EnvKind, ExperimentConfig, HarnessError, PolicyKind, PolicySpec, FULL_RUNS};

struct Section {
    name: String,
    line: usize,
    entries: Vec<(usize, String, String)>,
}

fn config_error(line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("line {line}: {msg}"))
}

/// Parses an experiment file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::default();
    let mut sections: Vec<Section> = Vec::new();
    let mut listed: Option<(usize, String)> = None;
    let mut full = false;
    let mut runs_set = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| config_error(line_no, "unterminated section header"))?
                .trim();
            let name = header
                .strip_prefix("policy.")
                .filter(|n| !n.is_empty())
                .ok_or_else(|| config_error(line_no, format!("unknown section [{header}] (expected [policy.NAME])")))?;
            sections.push(Section {
                name: name.to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| config_error(line_no, format!("expected `key = value`, got {line:?}")))?;
        if let Some(section) = sections.last_mut() {
            section.entries.push((line_no, key.to_string(), value.to_string()));
            continue;
        }
        let bad = |e: String| config_error(line_no, e);
        match key {
            "env" => cfg.env = value.parse::<EnvKind>().map_err(bad)?,
            "steps" => cfg.steps = parse_value(key, value).map_err(bad)?,
            "runs" => {
                cfg.runs = parse_value(key, value).map_err(bad)?;
                runs_set = true;
            }
            "seed" => cfg.seed = parse_value(key, value).map_err(bad)?,
            "full" => full = parse_value(key, value).map_err(bad)?,
            "warmup_in_regret" => cfg.warmup_in_regret = parse_value(key, value).map_err(bad)?,
            "keep_traces" => cfg.keep_traces = parse_value(key, value).map_err(bad)?,
            "shuttle_path" => cfg.shuttle_path = Some(PathBuf::from(value)),
            "out" | "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
            "policies" => listed = Some((line_no, value.to_string())),
            "dim" => cfg.artificial.dim = parse_value(key, value).map_err(bad)?,
            "num_actions" => cfg.artificial.num_actions = parse_value(key, value).map_err(bad)?,
            "context_noise_std" => cfg.artificial.context_noise_std = parse_value(key, value).map_err(bad)?,
            "target_top_mean" => cfg.artificial.target_top_mean = parse_value(key, value).map_err(bad)?,
            "pool_size" => cfg.artificial.pool_size = parse_value(key, value).map_err(bad)?,
            _ => {
                if !cfg.hyper.set(key, value).map_err(bad)? {
                    return Err(config_error(line_no, format!("unknown key {key:?}")));
                }
            }
        }
    }
    if full && !runs_set {
        cfg.runs = FULL_RUNS;
    }

    if let Some((line_no, list)) = listed {
        if !sections.is_empty() {
            return Err(config_error(line_no, "use either `policies = ...` or [policy.NAME] sections, not both"));
        }
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let kind = item.parse::<PolicyKind>().map_err(|e| config_error(line_no, e))?;
            cfg.policies.push(PolicySpec::new(kind, cfg.hyper.clone()));
        }
    }
    for section in sections {
        let mut hyper = cfg.hyper.clone();
        let mut kind = None;
        for (line_no, key, value) in &section.entries {
            if key == "kind" {
                kind = Some(value.parse::<PolicyKind>().map_err(|e| config_error(*line_no, e))?);
            } else if !hyper.set(key, value).map_err(|e| config_error(*line_no, e))? {
                return Err(config_error(*line_no, format!("unknown policy key {key:?}")));
            }
        }
        let kind = match kind {
            Some(k) => k,
            None => section.name.parse::<PolicyKind>().map_err(|_| {
                config_error(section.line, format!("section [policy.{}] needs a `kind = ...` line", section.name))
            })?,
        };
        cfg.policies.push(PolicySpec::named(section.name, kind, hyper));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses an experiment file. Relative data and output paths are
/// resolved against the file's directory.
pub fn read_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.shuttle_path, &mut cfg.out_dir].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reliability::ReliabilityKind;

    #[test]
    fn sections_override_globals() {
        let cfg = parse_config(
            "# suite\nenv = artificial\nsteps = 500\nruns = 3\naleph = 0.6\n\n\
             [policy.neuralrs-kmeans]\nkind = neuralrs\nreliability = kmeans\n\
             [policy.linucb]\nlinucb_alpha = 0.5 # wider\n",
        )
        .unwrap();
        assert_eq!((cfg.steps, cfg.runs), (500, 3));
        assert_eq!(cfg.policies.len(), 2);
        let p = &cfg.policies[0];
        assert_eq!((p.name.as_str(), p.kind), ("neuralrs-kmeans", PolicyKind::NeuralRs));
        assert_eq!(p.hyper.reliability, ReliabilityKind::Kmeans);
        assert_eq!(p.hyper.aleph, 0.6);
        assert_eq!(cfg.policies[1].kind, PolicyKind::LinUcb);
        assert_eq!(cfg.policies[1].hyper.linucb_alpha, 0.5);
        assert_eq!(cfg.hyper.linucb_alpha, 0.1);
    }

    #[test]
    fn policy_list_and_full_profile() {
        let cfg = parse_config("policies = rs, oracle\nfull = true\n").unwrap();
        assert_eq!(cfg.runs, FULL_RUNS);
        let names: Vec<_> = cfg.policies.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["rs", "oracle"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("steps = many\npolicies = rs", "line 1"),
            ("policies = rs\nbogus = 1", "line 2"),
            ("policies = rs\n[section]", "line 2"),
            ("[policy.mine]\naleph = 0.5", "line 1"),
            ("policies = rs\nno equals sign", "line 2"),
        ] {
            let err = parse_config(text).unwrap_err().to_string();
            assert!(err.contains(line), "{text:?}: {err}");
        }
        assert!(parse_config("env = artificial").is_err());
        assert!(parse_config("policies = rs\nsteps = 0").is_err());
    }
}
