//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key maps to one
//! field of [`RunConfig`]; unknown and duplicate keys are errors.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decoding::DecodeOptions;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Regime};
use crate::pipeline::Stage;
use crate::reward::Smoothing;
use crate::training::TrainConfig;

/// Splits config text into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if !seen.insert(k.to_string()) {
            return Err(Error::Config(format!(
                "line {}: duplicate key {k:?}",
                i + 1
            )));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

/// Everything a run needs besides the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `vocab_size` is overwritten from the vocabulary at run time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeOptions,
    pub bpe_merges: usize,
    pub vocab_cap: usize,
    /// Training pairs longer than this after BPE are dropped.
    pub max_train_len: usize,
    pub stages: Vec<Stage>,
    pub source_lang: String,
    pub target_lang: String,
    pub train_src: Option<PathBuf>,
    pub train_tgt: Option<PathBuf>,
    pub valid_src: Option<PathBuf>,
    pub valid_tgt: Option<PathBuf>,
    pub train_features: Option<PathBuf>,
    pub valid_features: Option<PathBuf>,
    /// Learned from the training text when unset.
    pub merges_file: Option<PathBuf>,
    pub vocab_file: Option<PathBuf>,
    /// Starting checkpoint; a fresh model when unset.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::new(0),
            train: TrainConfig::default(),
            decode: DecodeOptions::default(),
            bpe_merges: 10_000,
            vocab_cap: 20_000,
            max_train_len: 100,
            stages: vec![Stage::new(Regime::Ce, 10)],
            source_lang: "src".into(),
            target_lang: "tgt".into(),
            train_src: None,
            train_tgt: None,
            valid_src: None,
            valid_tgt: None,
            train_features: None,
            valid_features: None,
            merges_file: None,
            vocab_file: None,
            init_checkpoint: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "embed_dim",
    "hidden_dim",
    "encoder_layers",
    "attention_dim",
    "image_feature_dim",
    "max_src_len",
    "max_tgt_len",
    "seed",
    "dropout",
    "batch_size",
    "learning_rate",
    "grad_clip_norm",
    "epochs",
    "regime",
    "ss_step",
    "ss_period",
    "ss_cap",
    "bleu_order",
    "smoothing",
    "bucketing",
    "max_decode_len",
    "beam",
    "length_reward",
    "bpe_merges",
    "vocab_cap",
    "max_train_len",
    "stages",
    "source_lang",
    "target_lang",
    "train_src",
    "train_tgt",
    "valid_src",
    "valid_tgt",
    "train_features",
    "valid_features",
    "merges_file",
    "vocab_file",
    "init_checkpoint",
];

fn smoothing_name(s: Smoothing) -> &'static str {
    match s {
        Smoothing::AddOneOnZero => "add-one",
        Smoothing::None => "none",
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_pairs(text)? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "embed_dim" => self.model.embed_dim = parse(key, value)?,
            "hidden_dim" => self.model.hidden_dim = parse(key, value)?,
            "encoder_layers" => self.model.encoder_layers = parse(key, value)?,
            "attention_dim" => self.model.attention_dim = parse(key, value)?,
            "image_feature_dim" => self.model.image_feature_dim = parse(key, value)?,
            "max_src_len" => self.model.max_src_len = parse(key, value)?,
            "max_tgt_len" => self.model.max_tgt_len = parse(key, value)?,
            "seed" => {
                self.train.seed = parse(key, value)?;
                self.model.seed = self.train.seed;
            }
            "dropout" => {
                self.train.dropout = parse(key, value)?;
                self.model.dropout_rate = self.train.dropout;
            }
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "grad_clip_norm" => self.train.grad_clip_norm = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "regime" => self.train.regime = parse(key, value)?,
            "ss_step" => self.train.ss_schedule.step_size = parse(key, value)?,
            "ss_period" => self.train.ss_schedule.period = parse(key, value)?,
            "ss_cap" => self.train.ss_schedule.cap = parse(key, value)?,
            "bleu_order" => self.train.reward.max_order = parse(key, value)?,
            "smoothing" => {
                self.train.reward.smoothing = match value {
                    "add-one" => Smoothing::AddOneOnZero,
                    "none" => Smoothing::None,
                    _ => {
                        return Err(Error::Config(format!(
                            "smoothing: expected add-one or none, got {value:?}"
                        )))
                    }
                }
            }
            "bucketing" => self.train.bucketing = parse_bool(key, value)?,
            "max_decode_len" => {
                self.train.max_decode_len = parse(key, value)?;
                self.decode.max_len = self.train.max_decode_len;
            }
            "beam" => self.decode.beam = parse(key, value)?,
            "length_reward" => {
                self.decode.length_reward = parse(key, value)?;
                self.train.reward.length_reward = self.decode.length_reward;
            }
            "bpe_merges" => self.bpe_merges = parse(key, value)?,
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "max_train_len" => self.max_train_len = parse(key, value)?,
            "stages" => self.stages = Stage::parse_list(value)?,
            "source_lang" => self.source_lang = value.to_string(),
            "target_lang" => self.target_lang = value.to_string(),
            "train_src" => self.train_src = path(),
            "train_tgt" => self.train_tgt = path(),
            "valid_src" => self.valid_src = path(),
            "valid_tgt" => self.valid_tgt = path(),
            "train_features" => self.train_features = path(),
            "valid_features" => self.valid_features = path(),
            "merges_file" => self.merges_file = path(),
            "vocab_file" => self.vocab_file = path(),
            "init_checkpoint" => self.init_checkpoint = path(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in [`KEYS`] order. Unset paths are
    /// omitted.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        let t = &self.train;
        let m = &self.model;
        let all: Vec<(&'static str, Option<String>)> = vec![
            ("embed_dim", Some(m.embed_dim.to_string())),
            ("hidden_dim", Some(m.hidden_dim.to_string())),
            ("encoder_layers", Some(m.encoder_layers.to_string())),
            ("attention_dim", Some(m.attention_dim.to_string())),
            ("image_feature_dim", Some(m.image_feature_dim.to_string())),
            ("max_src_len", Some(m.max_src_len.to_string())),
            ("max_tgt_len", Some(m.max_tgt_len.to_string())),
            ("seed", Some(t.seed.to_string())),
            ("dropout", Some(t.dropout.to_string())),
            ("batch_size", Some(t.batch_size.to_string())),
            ("learning_rate", Some(t.learning_rate.to_string())),
            ("grad_clip_norm", Some(t.grad_clip_norm.to_string())),
            ("epochs", Some(t.epochs.to_string())),
            ("regime", Some(t.regime.to_string())),
            ("ss_step", Some(t.ss_schedule.step_size.to_string())),
            ("ss_period", Some(t.ss_schedule.period.to_string())),
            ("ss_cap", Some(t.ss_schedule.cap.to_string())),
            ("bleu_order", Some(t.reward.max_order.to_string())),
            (
                "smoothing",
                Some(smoothing_name(t.reward.smoothing).to_string()),
            ),
            ("bucketing", Some(t.bucketing.to_string())),
            ("max_decode_len", Some(t.max_decode_len.to_string())),
            ("beam", Some(self.decode.beam.to_string())),
            ("length_reward", Some(self.decode.length_reward.to_string())),
            ("bpe_merges", Some(self.bpe_merges.to_string())),
            ("vocab_cap", Some(self.vocab_cap.to_string())),
            ("max_train_len", Some(self.max_train_len.to_string())),
            ("stages", Some(Stage::format_list(&self.stages))),
            ("source_lang", Some(self.source_lang.clone())),
            ("target_lang", Some(self.target_lang.clone())),
            ("train_src", p(&self.train_src)),
            ("train_tgt", p(&self.train_tgt)),
            ("valid_src", p(&self.valid_src)),
            ("valid_tgt", p(&self.valid_tgt)),
            ("train_features", p(&self.train_features)),
            ("valid_features", p(&self.valid_features)),
            ("merges_file", p(&self.merges_file)),
            ("vocab_file", p(&self.vocab_file)),
            ("init_checkpoint", p(&self.init_checkpoint)),
        ];
        all.into_iter().filter_map(|(k, v)| Some((k, v?))).collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.decode.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("stages must name at least one stage".into()));
        }
        let mut m = self.model.clone();
        m.vocab_size = m.vocab_size.max(5);
        m.validate()
    }
}
