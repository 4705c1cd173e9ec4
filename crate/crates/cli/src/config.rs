use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mtsp_core::baselines::MetaConfig;
use mtsp_core::domain::ObjectiveMode;
use mtsp_core::manager::ManagerConfig;
use mtsp_core::oracle::OracleLimits;
use mtsp_core::worker::WorkerConfig;
use mtsp_core::Exec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checkpoints {
    pub manager: Option<PathBuf>,
    pub workers: Vec<PathBuf>,
}

/// Everything a command may need. The problem family (`n`, `m`, `beta`,
/// `objective`) and `exec` live at the top level and are copied into the
/// nested solver configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub objective: ObjectiveMode,
    /// Instances written by `gen`.
    pub count: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub exec: Exec,
    pub checkpoints: Checkpoints,
    pub kmeans_max_iter: usize,
    pub worker: WorkerConfig,
    pub manager: ManagerConfig,
    pub meta: MetaConfig,
    pub oracle: OracleLimits,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 20,
            m: 4,
            beta: 100.0,
            objective: ObjectiveMode::Minmax,
            count: 100,
            seed: 0,
            out_dir: PathBuf::from("out"),
            exec: Exec::default(),
            checkpoints: Checkpoints::default(),
            kmeans_max_iter: 1000,
            worker: WorkerConfig::default(),
            manager: ManagerConfig::default(),
            meta: MetaConfig::default(),
            oracle: OracleLimits::default(),
        }
    }
}

/// Nested keys that are derived from the top level and may not be set.
const DERIVED: &[(&str, &str)] = &[
    ("worker.beta", "beta"),
    ("worker.exec", "exec"),
    ("manager.n", "n"),
    ("manager.beta", "beta"),
    ("manager.arch.m", "m"),
    ("manager.objective", "objective"),
    ("manager.exec", "exec"),
    ("meta.objective", "objective"),
    ("meta.exec", "exec"),
];

impl ExperimentConfig {
    /// Defaults, then the config file, then `overrides` (dotted key, raw
    /// value) in order. Unknown keys are errors.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let doc: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut tree, &doc, "")?;
        }
        for (key, raw) in overrides {
            set_path(&mut tree, key, raw)?;
        }
        let mut cfg: Self = serde_json::from_value(tree).context("invalid configuration")?;
        cfg.propagate();
        Ok(cfg)
    }

    fn propagate(&mut self) {
        self.worker.beta = self.beta;
        self.worker.exec = self.exec;
        self.manager.n = self.n;
        self.manager.beta = self.beta;
        self.manager.arch.m = self.m;
        self.manager.objective = self.objective;
        self.manager.exec = self.exec;
        self.meta.objective = self.objective;
        self.meta.exec = self.exec;
    }
}

fn check_derived(path: &str) -> Result<()> {
    if let Some((_, top)) = DERIVED.iter().find(|(k, _)| *k == path) {
        bail!("`{path}` is derived from the top-level `{top}`; set that instead");
    }
    Ok(())
}

fn merge(tree: &mut Value, doc: &Value, prefix: &str) -> Result<()> {
    let Value::Object(fields) = doc else {
        bail!("config section `{}` must be an object", if prefix.is_empty() { "<root>" } else { prefix });
    };
    for (k, v) in fields {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        check_derived(&path)?;
        let Some(slot) = tree.get_mut(k) else {
            bail!("unknown config key `{path}`");
        };
        if slot.is_object() && v.is_object() {
            merge(slot, v, &path)?;
        } else {
            *slot = v.clone();
        }
    }
    Ok(())
}

/// Raw values are read as JSON, except where the slot holds a string.
fn set_path(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    check_derived(key)?;
    let mut slot = tree;
    for part in key.split('.') {
        slot = match slot.get_mut(part) {
            Some(s) => s,
            None => bail!("unknown flag --{key}"),
        };
    }
    *slot = match slot {
        Value::String(_) => Value::String(raw.to_string()),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    };
    Ok(())
}

/// Splits `--dotted.key value` and `--key=value` pairs that are not in
/// `known` out of `args`, returning the rest for the argument parser.
pub fn split_overrides(args: Vec<String>, known: &[&str]) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    if let Some(bin) = it.next() {
        rest.push(bin);
    }
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| !f.is_empty()) else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if known.contains(&name.as_str()) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().with_context(|| format!("flag --{name} needs a value"))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                ("worker.epochs".into(), "3".into()),
                ("meta.sa.population".into(), "7".into()),
                ("beta".into(), "10".into()),
                ("objective".into(), "overall".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.worker.epochs, 3);
        assert_eq!(cfg.meta.sa.population, 7);
        assert_eq!(cfg.manager.beta, 10.0);
        assert_eq!(cfg.meta.objective, ObjectiveMode::Overall);
    }

    #[test]
    fn unknown_and_derived_keys_are_rejected() {
        let e = ExperimentConfig::load(None, &[("worker.epoch".into(), "3".into())]).unwrap_err();
        assert!(e.to_string().contains("--worker.epoch"), "{e}");
        let e = ExperimentConfig::load(None, &[("manager.n".into(), "3".into())]).unwrap_err();
        assert!(e.to_string().contains("top-level `n`"), "{e}");
    }

    #[test]
    fn split_keeps_known_flags() {
        let args = ["mtsp", "--config", "c.json", "solve", "--n", "5", "--meta.iterations=4", "d.ndjson"];
        let (rest, ov) = split_overrides(args.iter().map(|s| s.to_string()).collect(), &["config"]).unwrap();
        assert_eq!(rest, ["mtsp", "--config", "c.json", "solve", "d.ndjson"]);
        assert_eq!(ov, [("n".to_string(), "5".to_string()), ("meta.iterations".to_string(), "4".to_string())]);
    }
}
