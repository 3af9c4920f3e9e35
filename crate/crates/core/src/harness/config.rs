//! Run configuration.
//!
//! Values resolve in three layers: built-in defaults, then `key = value`
//! lines from a config file, then command-line flags. Every key is also a
//! long flag (`seq_len` ↔ `--seq-len`).

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetSpec, Symbol, Task};
use crate::network::{FactorSource, InputMode, ModelConfig, Pooling, TaskHead};
use crate::protocol::{ProtocolKind, ProtocolSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub seq_len: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub protocol: ProtocolKind,
    pub n_links: Option<usize>,
    pub factors: Option<usize>,
    pub pooling: Pooling,
    pub pos_embed: bool,
    pub factor_source: FactorSource,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps between evaluations; 0 evaluates once per epoch.
    pub eval_interval: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    /// Leading train samples scored at each evaluation.
    pub train_eval_count: usize,
    pub early_stop: bool,
    pub stop_accuracy: f64,
    /// Adds wall-clock seconds to metric records (breaks byte-identical reruns).
    pub record_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Adding,
            seq_len: 128,
            blocks: 1,
            embed_dim: 32,
            hidden: 32,
            protocol: ProtocolKind::Chord,
            n_links: None,
            factors: None,
            pooling: Pooling::Flat,
            pos_embed: true,
            factor_source: FactorSource::Input,
            lr: 1e-3,
            batch_size: 40,
            epochs: 30,
            eval_interval: 0,
            seed: 0,
            out: PathBuf::from("runs/default"),
            train_count: 20_000,
            test_count: 2_000,
            train_eval_count: 2_000,
            early_stop: true,
            stop_accuracy: 1.0,
            record_time: false,
        }
    }
}

/// Keys accepted by [`RunConfig::set`], in file order.
pub const KEYS: &[&str] = &[
    "task",
    "seq_len",
    "blocks",
    "embed_dim",
    "hidden",
    "protocol",
    "n_links",
    "factors",
    "pooling",
    "pos_embed",
    "factor_source",
    "lr",
    "batch_size",
    "epochs",
    "eval_interval",
    "seed",
    "out",
    "train_count",
    "test_count",
    "train_eval_count",
    "early_stop",
    "stop_accuracy",
    "record_time",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    match value.to_ascii_lowercase().as_str() {
        "" | "auto" | "default" => Ok(None),
        _ => parse(key, value).map(Some),
    }
}

impl RunConfig {
    /// Sets one key; hyphens and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "task" => self.task = value.parse()?,
            "seq_len" => self.seq_len = parse(&key, value)?,
            "blocks" => self.blocks = parse(&key, value)?,
            "embed_dim" => self.embed_dim = parse(&key, value)?,
            "hidden" => self.hidden = parse(&key, value)?,
            "protocol" => self.protocol = value.parse()?,
            "n_links" => self.n_links = parse_optional(&key, value)?,
            "factors" => self.factors = parse_optional(&key, value)?,
            "pooling" => {
                self.pooling = match value.to_ascii_lowercase().as_str() {
                    "flat" => Pooling::Flat,
                    "cls" => Pooling::Cls,
                    _ => return Err(Error::Config(format!("invalid pooling {value:?}"))),
                }
            }
            "pos_embed" => self.pos_embed = parse_bool(&key, value)?,
            "factor_source" => {
                self.factor_source = match value.to_ascii_lowercase().as_str() {
                    "input" | "x0" => FactorSource::Input,
                    "previous" | "prev" => FactorSource::Previous,
                    _ => return Err(Error::Config(format!("invalid factor_source {value:?}"))),
                }
            }
            "lr" => self.lr = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "eval_interval" => self.eval_interval = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "out" => self.out = PathBuf::from(value),
            "train_count" => self.train_count = parse(&key, value)?,
            "test_count" => self.test_count = parse(&key, value)?,
            "train_eval_count" => self.train_eval_count = parse(&key, value)?,
            "early_stop" => self.early_stop = parse_bool(&key, value)?,
            "stop_accuracy" => self.stop_accuracy = parse(&key, value)?,
            "record_time" => self.record_time = parse_bool(&key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then overrides in order.
    pub fn resolve<'a>(
        file_text: Option<&str>,
        overrides: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(text) = file_text {
            cfg.apply_text(text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config file text that resolves back to `self`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        let pooling = match self.pooling {
            Pooling::Flat => "flat",
            Pooling::Cls => "cls",
        };
        let source = match self.factor_source {
            FactorSource::Input => "input",
            FactorSource::Previous => "previous",
        };
        let values: [String; 23] = [
            self.task.to_string(),
            self.seq_len.to_string(),
            self.blocks.to_string(),
            self.embed_dim.to_string(),
            self.hidden.to_string(),
            self.protocol.to_string(),
            opt(self.n_links),
            opt(self.factors),
            pooling.into(),
            self.pos_embed.to_string(),
            source.into(),
            format!("{:?}", self.lr),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.eval_interval.to_string(),
            self.seed.to_string(),
            self.out.display().to_string(),
            self.train_count.to_string(),
            self.test_count.to_string(),
            self.train_eval_count.to_string(),
            self.early_stop.to_string(),
            format!("{:?}", self.stop_accuracy),
            self.record_time.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").expect("writing to String");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size < 1 {
            return bad("batch size must be at least 1");
        }
        if self.train_count < 1 || self.test_count < 1 {
            return bad("train and test counts must be at least 1");
        }
        if self.train_eval_count > self.train_count {
            return bad("train_eval_count exceeds train_count");
        }
        self.dataset_spec().validate()?;
        self.model_config()?.validate()
    }

    /// One dataset covering both splits: train indices first, then test.
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec { task: self.task, n: self.seq_len, count: self.train_count + self.test_count, seed: self.seed }
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.train_count
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.train_count..self.train_count + self.test_count
    }

    /// Model shape implied by the task: Adding uses projected real pairs and
    /// a scalar regression head; Temporal Order uses a 6-symbol embedding
    /// (plus a CLS symbol under CLS pooling) and a 4-way head.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let cls = self.pooling == Pooling::Cls;
        let n = self.seq_len + usize::from(cls);
        let (head, input_mode, vocab) = match self.task {
            Task::Adding => (TaskHead::Regression, InputMode::RealPair, 0),
            Task::TemporalOrder => {
                (TaskHead::Classification { classes: 4 }, InputMode::Token, Symbol::ALPHABET_SIZE + usize::from(cls))
            }
        };
        Ok(ModelConfig {
            head,
            n,
            blocks: self.blocks,
            d: self.embed_dim,
            hidden: self.hidden,
            vocab,
            pooling: self.pooling,
            use_pos_embed: self.pos_embed,
            protocol: ProtocolSpec::new(self.protocol, n, self.n_links, self.factors)?,
            input_mode,
            factor_source: self.factor_source,
            pad_token: 0,
            cls_token: cls.then_some(Symbol::ALPHABET_SIZE),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("task", "temporal_order").unwrap();
        cfg.set("n-links", "6").unwrap();
        cfg.set("lr", "0.0005").unwrap();
        cfg.set("pooling", "cls").unwrap();
        let back = RunConfig::resolve(Some(&cfg.to_text()), []).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn three_layer_precedence() {
        let file = "seq_len = 64\nblocks = 2\n# comment\nlr = 0.01\n";
        let cfg = RunConfig::resolve(Some(file), [("blocks", "3")]).unwrap();
        assert_eq!(cfg.blocks, 3); // flag
        assert_eq!(cfg.seq_len, 64); // file
        assert_eq!(cfg.lr, 0.01); // file
        assert_eq!(cfg.batch_size, 40); // default
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::resolve(Some("lr = 0"), []).is_err());
        assert!(RunConfig::resolve(Some("batch_size = 0"), []).is_err());
        assert!(RunConfig::resolve(Some("bogus = 1"), []).is_err());
        assert!(RunConfig::resolve(Some("seq_len"), []).is_err());
        assert!(RunConfig::resolve(None, [("protocol", "cdil"), ("n_links", "4")]).is_err());
        assert!(RunConfig::resolve(None, [("pooling", "cls")]).is_err()); // adding is real-valued
        assert!(RunConfig::resolve(None, [("pos_embed", "maybe")]).is_err());
    }

    #[test]
    fn derived_model_shapes() {
        let cfg = RunConfig::resolve(None, [("task", "temporal_order"), ("pooling", "cls"), ("seq_len", "16")]).unwrap();
        let model = cfg.model_config().unwrap();
        assert_eq!(model.n, 17);
        assert_eq!(model.vocab, 7);
        assert_eq!(model.cls_token, Some(6));
        assert_eq!(model.protocol.n, 17);
    }
}
