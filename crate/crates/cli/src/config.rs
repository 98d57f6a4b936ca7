//! Flat `key=value` configuration shared by config files, command-line
//! flags and the resolved-config echo.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::CliError;

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    /// Boolean switch: `--name` alone means `true`.
    pub switch: bool,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help, switch: false }
}

const fn switch(name: &'static str, help: &'static str) -> Key {
    Key { name, default: "false", help, switch: true }
}

const EM_KEYS: [Key; 3] = [
    key("em-max-iters", "100", "EM iteration cap"),
    key("em-tol", "1e-6", "EM stopping tolerance on the objective"),
    key("em-smoothing", "1", "Dirichlet pseudo-count for the prior and confusion counts"),
];

const IMITATOR_KEYS: [Key; 3] = [
    key("epochs", "300", "imitator gradient-descent epochs"),
    key("learning-rate", "0.1", "imitator initial learning rate"),
    key("l2", "1e-4", "imitator L2 penalty"),
];

pub fn gen_keys() -> Vec<Key> {
    vec![
        key("seed", "0", "master seed"),
        key("m", "10", "number of workers"),
        key("k", "3", "number of classes"),
        key("n", "200", "number of items"),
        key("d", "5", "feature dimension"),
        key("acc", "0.6:0.9", "worker accuracy range LOW:HIGH"),
        key("observe", "0.5", "probability that a worker labels an item"),
        key("separation", "1.2", "spread of the class centers in feature space"),
        key("out-dir", ".", "output directory"),
        switch("with-features", "also write features.libsvm"),
    ]
}

pub fn train_keys() -> Vec<Key> {
    let mut keys = vec![
        key("annotations", "", "annotation CSV (worker_id,item_id,label)"),
        key("features", "", "feature file in libsvm format"),
        key("out-dir", ".", "output directory for model files"),
        key("imitators", "true", "fit per-worker imitators (needs --features)"),
        key("m", "", "number of workers (default: largest worker id)"),
        key("k", "", "number of classes (default: largest label or feature-file class count)"),
        key("seed", "0", "master seed"),
    ];
    keys.extend(EM_KEYS);
    keys.extend(IMITATOR_KEYS);
    keys
}

pub fn eval_keys() -> Vec<Key> {
    let mut keys = vec![
        key("seed", "2024", "master seed"),
        key("replicates", "20", "number of replicates"),
        key("methods", "IW,IS,DM,DR-DS", "comma-separated methods"),
        key("pi", "0.05,0.1,0.2,0.5,1", "inclusion probabilities for uniform-sampling methods"),
        key("rho", "0.9,0.99,0.9999,0.999999,0.99999999,0.9999999999,0.999999999999", "AIS margin thresholds"),
        key("lambda", "1,2,5,10", "AWS budget scales"),
        key("base-pi", "0.2", "inclusion probability on items escalated by DRC-AIS"),
        key("aws-margin", "likelihood", "worker score for AWS: likelihood or posterior (prior-weighted)"),
        switch("end-to-end", "simulate, train and evaluate from scratch (default without --model-dir)"),
        key("data", "", "libsvm dataset; synthetic data when empty"),
        key("n", "2000", "synthetic item count"),
        key("k", "5", "synthetic class count"),
        key("d", "10", "synthetic feature dimension"),
        key("separation", "1.2", "synthetic class-center spread"),
        key("m", "50", "number of simulated workers"),
        key("acc", "0.8:1.0", "worker accuracy range LOW:HIGH"),
        key("observe", "0.3", "probability that a worker labels a training item"),
        key("split", "0.5", "fraction of items used for training"),
    ];
    keys.extend(EM_KEYS);
    keys.extend(IMITATOR_KEYS);
    keys.extend([
        key("model-dir", "", "evaluate trained models from this directory instead"),
        key("workers", "", "with --model-dir: true worker confusion file used to simulate answers"),
        key("features", "", "with --model-dir: libsvm feature file of the evaluation items"),
        key("labels", "", "with --model-dir: true-label CSV (default: labels of the feature file)"),
        key("out", "", "sweep CSV path (stdout when empty)"),
        key("json-out", "", "JSON mirror path"),
    ]);
    keys
}

pub fn verify_keys() -> Vec<Key> {
    vec![
        key("instances", "60", "number of catalog instances (at least 50)"),
        key("seed", "24301", "catalog seed"),
        key("tol", "1e-12", "maximum allowed absolute deviation"),
    ]
}

/// Adds one `--name VALUE` argument per key plus the shared config flags.
pub fn with_keys(mut cmd: Command, keys: &[Key]) -> Command {
    cmd = cmd
        .arg(Arg::new("config").long("config").value_name("FILE").help("flat key=value config file; flags override it"))
        .arg(
            Arg::new("echo-config")
                .long("echo-config")
                .value_name("FILE")
                .help("also write the resolved config to FILE"),
        );
    for k in keys {
        let mut arg = Arg::new(k.name).long(k.name).help(k.help).action(ArgAction::Set);
        if k.switch {
            arg = arg.num_args(0..=1).default_missing_value("true").value_name("BOOL");
        } else {
            arg = arg.value_name("VALUE");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

pub fn parse_config_text(text: &str, keys: &[Key], origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("{origin}:{}: expected key=value, found '{line}'", idx + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !keys.iter().any(|key| key.name == k) {
            return Err(CliError::usage(format!(
                "{origin}:{}: unknown key '{k}'; valid keys: {}",
                idx + 1,
                keys.iter().map(|k| k.name).collect::<Vec<_>>().join(", ")
            )));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::usage(format!("{origin}:{}: key '{k}' set twice", idx + 1)));
        }
    }
    Ok(out)
}

/// Fully resolved settings: flag, then config file, then default.
#[derive(Debug, Clone)]
pub struct Resolved {
    command: &'static str,
    keys: Vec<Key>,
    values: BTreeMap<&'static str, String>,
}

impl Resolved {
    pub fn from_matches(command: &'static str, keys: Vec<Key>, m: &ArgMatches) -> Result<Self, CliError> {
        let file = match m.get_one::<String>("config") {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("cannot read config {path}: {e}")))?;
                parse_config_text(&text, &keys, path)?
            }
            None => BTreeMap::new(),
        };
        let values = keys
            .iter()
            .map(|k| {
                let v = m
                    .get_one::<String>(k.name)
                    .cloned()
                    .or_else(|| file.get(k.name).cloned())
                    .unwrap_or_else(|| k.default.to_string());
                (k.name, v)
            })
            .collect();
        Ok(Self { command, keys, values })
    }

    /// A config file that reproduces this run.
    pub fn echo(&self) -> String {
        let mut out = format!("# drc {} resolved config\n", self.command);
        for k in &self.keys {
            let _ = writeln!(out, "{}={}", k.name, self.values[k.name]);
        }
        out
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values.get(name).map_or("", String::as_str)
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(name);
        raw.parse().map_err(|e| CliError::usage(format!("invalid value '{raw}' for {name}: {e}")))
    }

    pub fn opt<T: FromStr>(&self, name: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(name).is_empty() {
            Ok(None)
        } else {
            self.get(name).map(Some)
        }
    }

    pub fn path(&self, name: &str) -> Option<&Path> {
        let raw = self.raw(name);
        (!raw.is_empty()).then(|| Path::new(raw))
    }

    pub fn flag(&self, name: &str) -> Result<bool, CliError> {
        self.get(name)
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::usage(format!("invalid value '{s}' in {name}: {e}"))))
            .collect()
    }

    /// `LOW:HIGH` pair.
    pub fn range(&self, name: &str) -> Result<(f64, f64), CliError> {
        let raw = self.raw(name);
        let bad = || CliError::usage(format!("{name} must look like LOW:HIGH, found '{raw}'"));
        let (lo, hi) = raw.split_once(':').ok_or_else(bad)?;
        Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
    }
}
