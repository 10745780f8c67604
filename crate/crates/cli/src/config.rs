//! Run configuration: `key = value` lines grouped under `[section]`
//! headers, overridable from the command line.
//!
//! ```text
//! # comment
//! [model]
//! classifier = SAB
//! source = abs
//! [train]
//! lr = 0.001
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sememnn::model::{Head, SemanticSource};
use sememnn::train::{OptimizerKind, TrainConfig};
use sememnn::{Error, Result};

type Apply = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

struct Key {
    section: &'static str,
    name: &'static str,
    default: &'static str,
    apply: Apply,
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

const SCHEMA: &[Key] = &[
    Key { section: "data", name: "train_cache", default: "", apply: |c, v| Ok(c.train_cache = opt_path(v)) },
    Key { section: "data", name: "test_cache", default: "", apply: |c, v| Ok(c.test_cache = opt_path(v)) },
    Key {
        section: "model",
        name: "classifier",
        default: "SAB",
        apply: |c, v| Ok(c.classifier = v.parse().map_err(|e: Error| e.to_string())?),
    },
    Key {
        section: "model",
        name: "source",
        default: "abs",
        apply: |c, v| Ok(c.source = v.parse().map_err(|e: Error| e.to_string())?),
    },
    Key { section: "model", name: "d_emb", default: "128", apply: |c, v| Ok(c.d_emb = num(v)?) },
    Key { section: "model", name: "memory_slots", default: "128", apply: |c, v| Ok(c.memory_slots = num(v)?) },
    Key { section: "model", name: "lstm_units", default: "128", apply: |c, v| Ok(c.lstm_units = num(v)?) },
    Key { section: "model", name: "attention_width", default: "16", apply: |c, v| Ok(c.attention_width = num(v)?) },
    Key {
        section: "train",
        name: "optimizer",
        default: "adam",
        apply: |c, v| Ok(c.train.optimizer = v.parse::<OptimizerKind>().map_err(|e| e.to_string())?),
    },
    Key { section: "train", name: "lr", default: "0.001", apply: |c, v| Ok(c.train.lr = num(v)?) },
    Key { section: "train", name: "beta1", default: "0.9", apply: |c, v| Ok(c.train.beta1 = num(v)?) },
    Key { section: "train", name: "beta2", default: "0.999", apply: |c, v| Ok(c.train.beta2 = num(v)?) },
    Key { section: "train", name: "eps", default: "1e-8", apply: |c, v| Ok(c.train.eps = num(v)?) },
    Key { section: "train", name: "batch_size", default: "64", apply: |c, v| Ok(c.train.batch_size = num(v)?) },
    Key { section: "train", name: "max_epochs", default: "10", apply: |c, v| Ok(c.train.max_epochs = num(v)?) },
    Key {
        section: "train",
        name: "grad_clip_norm",
        default: "5.0",
        apply: |c, v| {
            c.train.grad_clip_norm = if v.eq_ignore_ascii_case("none") { None } else { Some(num(v)?) };
            Ok(())
        },
    },
    Key { section: "train", name: "early_stop_patience", default: "3", apply: |c, v| Ok(c.train.early_stop_patience = num(v)?) },
    Key {
        section: "train",
        name: "validation_fraction",
        default: "0.05",
        apply: |c, v| Ok(c.train.validation_fraction = num(v)?),
    },
    Key { section: "train", name: "eval_test_each_epoch", default: "false", apply: |c, v| Ok(c.eval_test_each_epoch = flag(v)?) },
    Key { section: "run", name: "seed", default: "0", apply: |c, v| Ok(c.seed = num(v)?) },
    Key { section: "run", name: "out_dir", default: "", apply: |c, v| Ok(c.out_dir = opt_path(v)) },
    Key { section: "run", name: "threads", default: "1", apply: |c, v| Ok(c.threads = num(v)?) },
    Key { section: "run", name: "resume", default: "false", apply: |c, v| Ok(c.resume = flag(v)?) },
    Key { section: "run", name: "record_wall_time", default: "true", apply: |c, v| Ok(c.record_wall_time = flag(v)?) },
];

/// Fully resolved settings for `train`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_cache: Option<PathBuf>,
    pub test_cache: Option<PathBuf>,
    pub classifier: Head,
    pub source: SemanticSource,
    pub d_emb: usize,
    pub memory_slots: usize,
    pub lstm_units: usize,
    pub attention_width: usize,
    pub train: TrainConfig,
    pub eval_test_each_epoch: bool,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
    pub resume: bool,
    pub record_wall_time: bool,
    values: Vec<String>,
}

/// Accepts `section.key`, or a bare `key` that is unique across sections.
/// Dashes are read as underscores so `--batch-size` works.
fn lookup(key: &str) -> Result<usize> {
    let key = key.trim().replace('-', "_");
    let found = match key.split_once('.') {
        Some((s, k)) => SCHEMA.iter().position(|e| e.section == s && e.name == k),
        None => {
            let hits: Vec<usize> = (0..SCHEMA.len()).filter(|&i| SCHEMA[i].name == key).collect();
            (hits.len() == 1).then(|| hits[0])
        }
    };
    found.ok_or(Error::UnknownConfigKey(key))
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    for q in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            train_cache: None,
            test_cache: None,
            classifier: Head::SAB,
            source: SemanticSource::Abs,
            d_emb: 0,
            memory_slots: 0,
            lstm_units: 0,
            attention_width: 0,
            train: TrainConfig::default(),
            eval_test_each_epoch: false,
            seed: 0,
            out_dir: None,
            threads: 1,
            resume: false,
            record_wall_time: true,
            values: SCHEMA.iter().map(|k| k.default.to_string()).collect(),
        };
        for k in SCHEMA {
            (k.apply)(&mut c, k.default).expect("schema defaults parse");
        }
        c
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = lookup(key)?;
        let k = &SCHEMA[i];
        let value = unquote(value);
        (k.apply)(self, value).map_err(|e| Error::Config(format!("{}.{}: {e}", k.section, k.name)))?;
        self.values[i] = value.to_string();
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|k| k.section == name) {
                    return Err(Error::UnknownConfigKey(format!("[{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            let key = key.trim();
            let qualified = match &section {
                Some(s) if !key.contains('.') => format!("{s}.{key}"),
                _ => key.to_string(),
            };
            c.set(&qualified, value)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    /// Applies `--key value` pairs (or `--key=value`).
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected --key value override, got {arg:?}")))?;
            match key.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it.next().ok_or_else(|| Error::Config(format!("override --{key} is missing a value")))?;
                    self.set(key, v)?;
                }
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `parse` reads back.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut last = "";
        for (k, v) in SCHEMA.iter().zip(&self.values) {
            if k.section != last {
                if !last.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", k.section);
                last = k.section;
            }
            let _ = writeln!(out, "{} = {}", k.name, v);
        }
        out
    }

    /// Training settings with the run seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }
}
