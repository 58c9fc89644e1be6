//! Run configuration: per-command key schemas, flat `key = value` files and
//! command-line overrides.
//!
//! Precedence is defaults < config file < flags. Every key is checked
//! against the command's schema; unknown keys and malformed values are usage
//! errors naming the key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usize,
    U64,
    F64,
    Bool,
    Choice(&'static [&'static str]),
    UsizeList,
    F64List,
    Text,
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, kind: Kind, help: &'static str) -> Key {
    Key {
        name,
        default,
        kind,
        help,
    }
}

const SCHEDULES: &[&str] = &["linear", "power-law"];
const POINTWISE: &[&str] = &["identity", "relu"];

pub const COMMON: &[Key] = &[
    key("seed", "0", Kind::U64, "random seed"),
    key("format", "csv", Kind::Choice(&["csv", "json"]), "output format"),
    key("out", "", Kind::Text, "output file (stdout when empty)"),
    key(
        "parallel",
        "false",
        Kind::Bool,
        "fan independent work items across threads",
    ),
];

const DEMO: &[Key] = &[
    key("n", "8", Kind::Usize, "sequence length"),
    key("c", "4", Kind::Usize, "channels"),
    key("k", "2", Kind::Usize, "groups"),
    key("schedule", "linear", Kind::Choice(SCHEDULES), "shift schedule"),
];

const RANK_DECAY: &[Key] = &[
    key("depth", "6", Kind::Usize, "number of layers"),
    key("n", "64", Kind::Usize, "sequence length"),
    key("c", "32", Kind::Usize, "channels"),
    key("k", "8", Kind::Usize, "CSP groups"),
    key("heads", "4", Kind::Usize, "softmax heads"),
    key(
        "sigma-scale",
        "0.2",
        Kind::F64,
        "weights have std sigma-scale / sqrt(c)",
    ),
    key(
        "pointwise",
        "identity",
        Kind::Choice(POINTWISE),
        "pointwise map after each layer",
    ),
    key("schedule", "linear", Kind::Choice(SCHEDULES), "shift schedule"),
];

const OT_CHECK: &[Key] = &[
    key("trials", "1000", Kind::Usize, "random instances"),
    key("gmin", "2", Kind::Usize, "smallest group size"),
    key("gmax", "6", Kind::Usize, "largest group size (at most 8)"),
];

const SINKHORN_CONVERGE: &[Key] = &[
    key("sizes", "4,8,16", Kind::UsizeList, "sequence lengths"),
    key("groups", "1,2,4", Kind::UsizeList, "group counts"),
    key("c", "4", Kind::Usize, "channels"),
    key("fixtures", "5", Kind::Usize, "random fixtures per (n, k)"),
    key("taus", "1,0.3,0.1,0.03,0.01", Kind::F64List, "temperatures, decreasing"),
    key("iteration-scale", "50", Kind::F64, "iterations = ceil(scale / tau)"),
    key(
        "spacing",
        "0.5",
        Kind::F64,
        "gap between the evenly spaced fixture values",
    ),
    key(
        "threshold",
        "0.01",
        Kind::F64,
        "required distance at the last temperature",
    ),
];

const BENCH: &[Key] = &[
    key(
        "sizes",
        "256,512,1024,2048,4096,8192",
        Kind::UsizeList,
        "sequence lengths",
    ),
    key("c", "8", Kind::Usize, "channels"),
    key("k", "1", Kind::Usize, "CSP groups"),
    key(
        "methods",
        "csp,softmax",
        Kind::Text,
        "comma-separated subset of csp,softmax",
    ),
    key("warmup", "3", Kind::Usize, "untimed runs per point"),
    key(
        "repetitions",
        "7",
        Kind::Usize,
        "timed samples per point (median reported)",
    ),
    key("min-sample-ms", "2", Kind::F64, "minimum duration of one timed sample"),
];

const TRAIN: &[Key] = &[
    key(
        "task",
        "majority_token",
        Kind::Choice(&["majority_token", "sorted_or_not", "long_range_match"]),
        "synthetic task",
    ),
    key(
        "model",
        "both",
        Kind::Choice(&["csp", "mha", "both"]),
        "which models to train",
    ),
    key("n", "32", Kind::Usize, "sequence length"),
    key("vocab", "2", Kind::Usize, "vocabulary size"),
    key("c", "32", Kind::Usize, "CSP model dim"),
    key("ffn", "32", Kind::Usize, "CSP feed-forward width"),
    key("k", "8", Kind::Usize, "CSP groups"),
    key("schedule", "linear", Kind::Choice(SCHEDULES), "shift schedule"),
    key("heads", "4", Kind::Usize, "MHA heads"),
    key(
        "matched",
        "true",
        Kind::Bool,
        "size the MHA model to the CSP parameter count",
    ),
    key("layers", "2", Kind::Usize, "blocks"),
    key("pooling", "mean", Kind::Choice(&["mean", "cls"]), "sequence pooling"),
    key("steps", "500", Kind::Usize, "SGD steps"),
    key("lr", "0.05", Kind::F64, "learning rate"),
    key("cosine", "false", Kind::Bool, "cosine learning-rate decay"),
    key("batch", "16", Kind::Usize, "batch size"),
    key("eval-every", "50", Kind::Usize, "metric interval"),
    key("eval-size", "256", Kind::Usize, "fixed evaluation batch size"),
    key("checkpoint", "", Kind::Text, "checkpoint path prefix (none when empty)"),
];

const SPECTRA: &[Key] = &[
    key("depth", "6", Kind::Usize, "number of layers"),
    key("n", "64", Kind::Usize, "sequence length"),
    key("c", "32", Kind::Usize, "channels"),
    key("k", "8", Kind::Usize, "CSP groups"),
    key("heads", "4", Kind::Usize, "softmax heads"),
    key(
        "sigma-scale",
        "0.2",
        Kind::F64,
        "weights have std sigma-scale / sqrt(c)",
    ),
    key(
        "csp-weights",
        "gaussian",
        Kind::Choice(&["gaussian", "signed-permutation"]),
        "CSP projections",
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Demo,
    RankDecay,
    OtCheck,
    SinkhornConverge,
    Bench,
    Train,
    Spectra,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Demo,
        Command::RankDecay,
        Command::OtCheck,
        Command::SinkhornConverge,
        Command::Bench,
        Command::Train,
        Command::Spectra,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Demo => "demo",
            Command::RankDecay => "rank-decay",
            Command::OtCheck => "ot-check",
            Command::SinkhornConverge => "sinkhorn-converge",
            Command::Bench => "bench",
            Command::Train => "train",
            Command::Spectra => "spectra",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Demo => "Run CSP on a small random input and print every channel's permutation",
            Command::RankDecay => "Residual decay of deep CSP and softmax stacks against the theoretical bound",
            Command::OtCheck => "Exhaustive check that sorting solves small 1-D transport problems",
            Command::SinkhornConverge => "Distance between grouped Sinkhorn maps and CSP maps as temperature falls",
            Command::Bench => "Forward-pass timings of CSP and softmax attention with log-log slopes",
            Command::Train => "Train CSP-former and/or MHA-former on a synthetic task",
            Command::Spectra => "Per-layer singular spectra of CSP and softmax stacks",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn keys(self) -> &'static [Key] {
        match self {
            Command::Demo => DEMO,
            Command::RankDecay => RANK_DECAY,
            Command::OtCheck => OT_CHECK,
            Command::SinkhornConverge => SINKHORN_CONVERGE,
            Command::Bench => BENCH,
            Command::Train => TRAIN,
            Command::Spectra => SPECTRA,
        }
    }

    fn find_key(self, name: &str) -> Option<Key> {
        COMMON.iter().chain(self.keys()).find(|k| k.name == name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// Every key of the command (common keys included), fully resolved.
    pub params: BTreeMap<String, String>,
}

fn normalize(name: &str) -> String {
    name.trim().replace('_', "-")
}

fn check_value(key: &Key, value: &str) -> Result<(), CliError> {
    let bad = |why: &str| CliError::Usage(format!("invalid value `{value}` for `{}`: {why}", key.name));
    let ok = match key.kind {
        Kind::Usize => value.parse::<usize>().is_ok(),
        Kind::U64 => value.parse::<u64>().is_ok(),
        Kind::F64 => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return Err(bad(&format!("expected one of {}", options.join(", "))));
            }
            true
        }
        Kind::UsizeList => !value.is_empty() && value.split(',').all(|v| v.trim().parse::<usize>().is_ok()),
        Kind::F64List => {
            !value.is_empty()
                && value
                    .split(',')
                    .all(|v| v.trim().parse::<f64>().is_ok_and(f64::is_finite))
        }
        Kind::Text => true,
    };
    if ok {
        Ok(())
    } else {
        Err(bad(&format!("expected {:?}", key.kind)))
    }
}

/// Parses a flat config file. Blank lines and `#` comments are ignored.
pub fn parse_config_text(command: Command, text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", i + 1)))?;
        let name = normalize(k);
        let key = command.find_key(&name).ok_or_else(|| {
            CliError::Usage(format!(
                "{origin}:{}: unknown key `{name}` for `{}`",
                i + 1,
                command.name()
            ))
        })?;
        let value = v.trim().to_string();
        check_value(&key, &value)?;
        if out.insert(name.clone(), value).is_some() {
            return Err(CliError::Usage(format!("{origin}:{}: duplicate key `{name}`", i + 1)));
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("config file {origin} has no entries")));
    }
    Ok(out)
}

pub fn load_config_file(command: Command, path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_text(command, &text, &path.display().to_string())
}

impl RunConfig {
    /// Merges defaults, an optional file and explicit overrides.
    pub fn resolve(
        command: Command,
        file: Option<BTreeMap<String, String>>,
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut params: BTreeMap<String, String> = COMMON
            .iter()
            .chain(command.keys())
            .map(|k| (k.name.to_string(), k.default.to_string()))
            .collect();
        params.extend(file.unwrap_or_default());
        for (name, value) in overrides {
            let name = normalize(name);
            let key = command
                .find_key(&name)
                .ok_or_else(|| CliError::Usage(format!("unknown key `{name}` for `{}`", command.name())))?;
            check_value(&key, value)?;
            params.insert(name, value.clone());
        }
        Ok(Self { command, params })
    }

    fn raw(&self, name: &str) -> &str {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("`{name}` is not a key of `{}`", self.command.name()))
    }

    pub fn usize(&self, name: &str) -> usize {
        self.raw(name).parse().expect("validated on resolve")
    }

    pub fn u64(&self, name: &str) -> u64 {
        self.raw(name).parse().expect("validated on resolve")
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.raw(name).parse().expect("validated on resolve")
    }

    pub fn bool(&self, name: &str) -> bool {
        self.raw(name) == "true"
    }

    pub fn text(&self, name: &str) -> &str {
        self.raw(name)
    }

    pub fn usize_list(&self, name: &str) -> Vec<usize> {
        self.raw(name)
            .split(',')
            .map(|v| v.trim().parse().expect("validated"))
            .collect()
    }

    pub fn f64_list(&self, name: &str) -> Vec<f64> {
        self.raw(name)
            .split(',')
            .map(|v| v.trim().parse().expect("validated"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn format(&self) -> Format {
        if self.text("format") == "json" {
            Format::Json
        } else {
            Format::Csv
        }
    }

    pub fn parallel(&self) -> bool {
        self.bool("parallel")
    }

    pub fn out(&self) -> Option<PathBuf> {
        let p = self.text("out");
        (!p.is_empty()).then(|| PathBuf::from(p))
    }

    /// SHA-256 over the command and every key that can change results
    /// (output location and threading excluded).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.name().as_bytes());
        h.update(b"\n");
        for (k, v) in &self.params {
            if k == "out" || k == "parallel" {
                continue;
            }
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }
}
