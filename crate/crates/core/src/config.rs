use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Dims, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Glorot-uniform weights, zero biases, embeddings uniform in ±0.1.
    Glorot,
    /// Every parameter zero.
    Zero,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::Glorot => "glorot",
            InitScheme::Zero => "zero",
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot" => Ok(InitScheme::Glorot),
            "zero" => Ok(InitScheme::Zero),
            _ => Err(Error::Config(format!("unknown init_scheme '{s}' (expected glorot or zero)"))),
        }
    }
}

/// Training hyper-parameters and layer sizes. Defaults are the full-size
/// settings; the Adam constants are the usual Adam defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub init_scheme: InitScheme,
    pub clip_norm: Option<f64>,
    pub char_embed_dim: usize,
    pub word_embed_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub mlp_hidden: usize,
    /// Also apply dropout to the vectors entering the word-level encoder.
    pub word_dropout: bool,
    /// Clamp predictions to `[-0.5, 0.5]` at evaluation time.
    pub clamp_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 100,
            dropout_rate: 0.5,
            seed: 0,
            init_scheme: InitScheme::Glorot,
            clip_norm: None,
            char_embed_dim: 50,
            word_embed_dim: 256,
            char_hidden: 256,
            word_hidden: 256,
            mlp_hidden: 256,
            word_dropout: true,
            clamp_output: false,
        }
    }
}

const KEYS: &[&str] = &[
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "batch_size",
    "epochs",
    "dropout_rate",
    "seed",
    "init_scheme",
    "clip_norm",
    "char_embed_dim",
    "word_embed_dim",
    "char_hidden",
    "word_hidden",
    "mlp_hidden",
    "word_dropout",
    "clamp_output",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must be in [0, 1)");
        }
        if self.epsilon <= 0.0 {
            return fail("epsilon must be positive");
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0 || !c.is_finite()) {
            return fail("clip_norm must be positive");
        }
        if [self.char_embed_dim, self.word_embed_dim, self.char_hidden, self.word_hidden, self.mlp_hidden].contains(&0) {
            return fail("layer sizes must be positive");
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "init_scheme" => self.init_scheme = value.parse()?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" | "off" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "char_embed_dim" => self.char_embed_dim = parse_value(key, value)?,
            "word_embed_dim" => self.word_embed_dim = parse_value(key, value)?,
            "char_hidden" => self.char_hidden = parse_value(key, value)?,
            "word_hidden" => self.word_hidden = parse_value(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_value(key, value)?,
            "word_dropout" => self.word_dropout = parse_value(key, value)?,
            "clamp_output" => self.clamp_output = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `(key, value)` pairs in canonical order; values round-trip through
    /// [`TrainConfig::set`].
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.learning_rate.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.epsilon.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.dropout_rate.to_string(),
            self.seed.to_string(),
            self.init_scheme.to_string(),
            self.clip_norm.map_or("none".to_string(), |c| c.to_string()),
            self.char_embed_dim.to_string(),
            self.word_embed_dim.to_string(),
            self.char_hidden.to_string(),
            self.word_hidden.to_string(),
            self.mlp_hidden.to_string(),
            self.word_dropout.to_string(),
            self.clamp_output.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Layer sizes for `kind` over a vocabulary of `vocab_size` ids.
    pub fn dims(&self, kind: ModelKind, vocab_size: usize) -> Dims {
        Dims {
            vocab_size,
            embed_dim: if kind.uses_words() {
                self.word_embed_dim
            } else {
                self.char_embed_dim
            },
            char_hidden: self.char_hidden,
            word_hidden: self.word_hidden,
            mlp_hidden: self.mlp_hidden,
        }
    }
}
