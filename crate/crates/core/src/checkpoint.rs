//! Trained models and their on-disk format.
//!
//! A checkpoint is a UTF-8 header of `key = value` lines terminated by a
//! line reading `end`, followed by a binary payload. The header records the
//! format version, model kind, target trait, every layer size, the training
//! config and the full vocabulary as code points with ids. The payload holds
//! each tensor as: name length (u32 LE), name bytes, rank (u32 LE), each
//! dimension (u64 LE), then the row-major values as f64 LE.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::data::{build_char_vocab, build_text_char_vocab, build_word_vocab, preprocess, Trait, Tweet};
use crate::error::{Error, Result};
use crate::model::{self, Dims, DropoutMasks, Encoded, ModelKind, ModelParams};
use crate::params::ParamSet;
use crate::tensor::Vector;
use crate::vocab::{CharVocab, WordVocab};

const MAGIC: &str = "c2w2s4pt-checkpoint";
const VERSION: u32 = 1;

/// The symbol table a model reads its input through.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelVocab {
    None,
    Chars(CharVocab),
    Words(WordVocab),
}

impl ModelVocab {
    /// The vocabulary `kind` needs, built from `tweets`.
    pub fn build(kind: ModelKind, tweets: &[Tweet]) -> Result<Self> {
        Ok(match kind {
            ModelKind::Average => ModelVocab::None,
            ModelKind::C2w2s4pt => ModelVocab::Chars(build_char_vocab(tweets)?),
            ModelKind::BiGruChar => ModelVocab::Chars(build_text_char_vocab(tweets)?),
            ModelKind::BiGruWord => ModelVocab::Words(build_word_vocab(tweets)?),
        })
    }

    /// Number of ids including UNK; 0 when there is no vocabulary.
    pub fn len(&self) -> usize {
        match self {
            ModelVocab::None => 0,
            ModelVocab::Chars(v) => v.len(),
            ModelVocab::Words(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input ids of `tweet` for a model of `kind`.
    ///
    /// Panics if the vocabulary type does not fit `kind`.
    pub fn encode(&self, kind: ModelKind, tweet: &Tweet) -> Encoded {
        match (kind, self) {
            (ModelKind::C2w2s4pt, ModelVocab::Chars(v)) => {
                Encoded::Words(tweet.tokens.iter().map(|t| v.encode(t)).collect())
            }
            (ModelKind::BiGruChar, ModelVocab::Chars(v)) => Encoded::Sequence(v.encode(&tweet.text)),
            (ModelKind::BiGruWord, ModelVocab::Words(v)) => Encoded::Sequence(v.encode_tokens(&tweet.tokens)),
            _ => panic!("vocabulary does not fit a {kind} model"),
        }
    }

    fn fits(&self, kind: ModelKind) -> bool {
        matches!(
            (kind, self),
            (ModelKind::Average, ModelVocab::None)
                | (ModelKind::C2w2s4pt | ModelKind::BiGruChar, ModelVocab::Chars(_))
                | (ModelKind::BiGruWord, ModelVocab::Words(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Mean(f64),
    Network(ModelParams),
}

/// A trained predictor for one trait.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    target: Trait,
    config: TrainConfig,
    vocab: ModelVocab,
    body: Body,
}

impl Model {
    /// The constant predictor.
    pub fn average(target: Trait, mean: f64, config: TrainConfig) -> Self {
        Self {
            kind: ModelKind::Average,
            target,
            config,
            vocab: ModelVocab::None,
            body: Body::Mean(mean),
        }
    }

    pub fn neural(target: Trait, vocab: ModelVocab, params: ModelParams, config: TrainConfig) -> Result<Self> {
        let kind = params.kind();
        params.validate(kind)?;
        if !vocab.fits(kind) || vocab.len() != params.dims().vocab_size {
            return Err(Error::Invalid(format!(
                "vocabulary of {} ids does not fit a {kind} model with {} embedding columns",
                vocab.len(),
                params.dims().vocab_size
            )));
        }
        Ok(Self {
            kind,
            target,
            config,
            vocab,
            body: Body::Network(params),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn target(&self) -> Trait {
        self.target
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn vocab(&self) -> &ModelVocab {
        &self.vocab
    }

    pub fn params(&self) -> Option<&ModelParams> {
        match &self.body {
            Body::Network(p) => Some(p),
            Body::Mean(_) => None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self.body {
            Body::Mean(m) => Some(m),
            Body::Network(_) => None,
        }
    }

    fn finish(&self, y: f64) -> f64 {
        if self.config.clamp_output {
            y.clamp(-0.5, 0.5)
        } else {
            y
        }
    }

    /// Inference-mode prediction (no dropout).
    pub fn predict_tweet(&self, tweet: &Tweet) -> Result<f64> {
        match &self.body {
            Body::Mean(m) => Ok(self.finish(*m)),
            Body::Network(p) => {
                let input = self.vocab.encode(self.kind, tweet);
                Ok(self.finish(model::forward(p, &input, &DropoutMasks::none())?.prediction))
            }
        }
    }

    /// Predictions for many tweets, in input order.
    pub fn predict_all(&self, tweets: &[Tweet]) -> Result<Vec<f64>> {
        tweets.par_iter().map(|t| self.predict_tweet(t)).collect()
    }

    /// Preprocesses raw text and predicts; `None` when nothing is left to
    /// read after preprocessing.
    pub fn predict_text(&self, raw: &str) -> Result<Option<f64>> {
        let Some((text, tokens)) = preprocess(raw) else {
            return Ok(None);
        };
        let tweet = Tweet {
            user_id: String::new(),
            raw_text: raw.to_string(),
            text,
            tokens,
            traits: Default::default(),
        };
        self.predict_tweet(&tweet).map(Some)
    }

    /// The sentence vector `e_s` fed to the regression head.
    pub fn sentence_embedding(&self, tweet: &Tweet) -> Result<Vector> {
        match &self.body {
            Body::Mean(_) => Err(Error::Invalid("the average baseline has no sentence embedding".into())),
            Body::Network(p) => {
                let input = self.vocab.encode(self.kind, tweet);
                Ok(model::forward(p, &input, &DropoutMasks::none())?.sentence)
            }
        }
    }

    /// Tweet-level RMSE against this model's trait.
    pub fn rmse_on(&self, tweets: &[Tweet]) -> Result<f64> {
        let preds = self.predict_all(tweets)?;
        let truths: Vec<f64> = tweets.iter().map(|t| t.score(self.target)).collect();
        Ok(model::mse_loss(&preds, &truths)?.sqrt())
    }

    // -- serialization ---------------------------------------------------

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut h = String::new();
        let _ = writeln!(h, "{MAGIC} {VERSION}");
        let _ = writeln!(h, "kind = {}", self.kind);
        let _ = writeln!(h, "trait = {}", self.target);
        match &self.body {
            Body::Mean(m) => {
                let _ = writeln!(h, "mean = {m}");
            }
            Body::Network(p) => {
                let d = p.dims();
                let _ = writeln!(h, "vocab_size = {}", d.vocab_size);
                let _ = writeln!(h, "embed_dim = {}", d.embed_dim);
                let _ = writeln!(h, "char_hidden = {}", d.char_hidden);
                let _ = writeln!(h, "word_hidden = {}", d.word_hidden);
                let _ = writeln!(h, "mlp_hidden = {}", d.mlp_hidden);
            }
        }
        for (k, v) in self.config.entries() {
            let _ = writeln!(h, "config.{k} = {v}");
        }
        let code_points = |s: &mut String, chars: &mut dyn Iterator<Item = char>| {
            for c in chars {
                let _ = write!(s, " U+{:04X}", c as u32);
            }
        };
        match &self.vocab {
            ModelVocab::None => {
                let _ = writeln!(h, "vocab = none");
            }
            ModelVocab::Chars(v) => {
                let _ = writeln!(h, "vocab = chars");
                for (id, c) in v.entries() {
                    let _ = write!(h, "symbol = {id}");
                    code_points(&mut h, &mut std::iter::once(*c));
                    h.push('\n');
                }
            }
            ModelVocab::Words(v) => {
                let _ = writeln!(h, "vocab = words");
                for (id, w) in v.entries() {
                    let _ = write!(h, "symbol = {id}");
                    code_points(&mut h, &mut w.chars());
                    h.push('\n');
                }
            }
        }
        let tensors = self.params().map(|p| p.tensors()).unwrap_or_default();
        let _ = writeln!(h, "tensors = {}", tensors.len());
        h.push_str("end\n");

        let mut out = h.into_bytes();
        for t in tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let end = find_header_end(bytes).ok_or_else(|| bad("truncated checkpoint: header has no 'end' line".into()))?;
        let header = std::str::from_utf8(&bytes[..end - "end\n".len()]).map_err(|_| bad("header is not valid UTF-8".into()))?;
        let mut lines = header.lines();
        let first = lines.next().unwrap_or("");
        match first.split_once(' ') {
            Some((MAGIC, v)) if v == VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(bad(format!("unsupported checkpoint version {v}"))),
            _ => return Err(bad("not a checkpoint file".into())),
        }

        let mut fields: Vec<(&str, &str)> = Vec::new();
        let mut symbols: Vec<(usize, String)> = Vec::new();
        let mut config = TrainConfig::default();
        for line in lines {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
            if let Some(key) = k.strip_prefix("config.") {
                config.set(key, v).map_err(|e| bad(e.to_string()))?;
            } else if k == "symbol" {
                symbols.push(parse_symbol(v).ok_or_else(|| bad(format!("malformed symbol line '{line}'")))?);
            } else {
                fields.push((k, v));
            }
        }
        let field = |name: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Checkpoint(format!("header is missing '{name}'")))
        };
        let num = |name: &str| -> Result<usize> {
            field(name)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("header field '{name}' is not a number")))
        };
        let kind: ModelKind = field("kind")?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let target: Trait = field("trait")?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let n_tensors = num("tensors")?;
        let mut payload = &bytes[end..];

        if kind == ModelKind::Average {
            let mean: f64 = field("mean")?.parse().map_err(|_| bad("bad mean".into()))?;
            if n_tensors != 0 || !payload.is_empty() {
                return Err(bad("average checkpoint carries tensor data".into()));
            }
            return Ok(Model::average(target, mean, config));
        }

        for (i, (id, _)) in symbols.iter().enumerate() {
            if *id != i + 1 {
                return Err(bad(format!("vocabulary ids are not dense at symbol {id}")));
            }
        }
        let vocab = match field("vocab")? {
            "chars" => {
                let chars = symbols
                    .into_iter()
                    .map(|(_, s)| {
                        let mut it = s.chars();
                        match (it.next(), it.next()) {
                            (Some(c), None) => Ok(c),
                            _ => Err(bad("character symbol must be one code point".into())),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                ModelVocab::Chars(CharVocab::from_symbols(chars).ok_or_else(|| bad("duplicate symbol".into()))?)
            }
            "words" => ModelVocab::Words(
                WordVocab::from_symbols(symbols.into_iter().map(|(_, s)| s))
                    .ok_or_else(|| bad("duplicate symbol".into()))?,
            ),
            other => return Err(bad(format!("vocabulary type '{other}' does not fit a {kind} model"))),
        };
        let dims = Dims {
            vocab_size: num("vocab_size")?,
            embed_dim: num("embed_dim")?,
            char_hidden: num("char_hidden")?,
            word_hidden: num("word_hidden")?,
            mlp_hidden: num("mlp_hidden")?,
        };
        let mut params = ModelParams::zeros(kind, dims).map_err(|e| bad(e.to_string()))?;
        let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if expected.len() != n_tensors {
            return Err(bad(format!("expected {} tensors, header declares {n_tensors}", expected.len())));
        }
        for ((name, shape), dst) in expected.iter().zip(params.tensors_mut()) {
            let got_name = read_string(&mut payload)?;
            if &got_name != name {
                return Err(bad(format!("expected tensor '{name}', found '{got_name}'")));
            }
            let rank = read_u32(&mut payload)? as usize;
            let got_shape = (0..rank).map(|_| read_u64(&mut payload).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &got_shape != shape {
                return Err(bad(format!("tensor '{name}' has shape {got_shape:?}, expected {shape:?}")));
            }
            for x in dst.iter_mut() {
                *x = f64::from_le_bytes(take::<8>(&mut payload)?);
            }
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes after the last tensor", payload.len())));
        }
        Model::neural(target, vocab, params, config).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// Offset just past the `end\n` line.
fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let mut start = 0;
    while start < bytes.len() {
        let nl = start + bytes[start..].iter().position(|&b| b == b'\n')?;
        if &bytes[start..nl] == b"end" {
            return Some(nl + 1);
        }
        start = nl + 1;
    }
    None
}

fn parse_symbol(v: &str) -> Option<(usize, String)> {
    let mut parts = v.split(' ');
    let id = parts.next()?.parse().ok()?;
    let mut s = String::new();
    for p in parts {
        let cp = u32::from_str_radix(p.strip_prefix("U+")?, 16).ok()?;
        s.push(char::from_u32(cp)?);
    }
    if s.is_empty() {
        return None;
    }
    Some((id, s))
}

fn take<const N: usize>(buf: &mut &[u8]) -> Result<[u8; N]> {
    if buf.len() < N {
        return Err(Error::Checkpoint("truncated checkpoint: tensor payload ends early".into()));
    }
    let (head, rest) = buf.split_at(N);
    *buf = rest;
    Ok(head.try_into().unwrap())
}

fn read_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<4>(buf)?))
}

fn read_u64(buf: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take::<8>(buf)?))
}

fn read_string(buf: &mut &[u8]) -> Result<String> {
    let n = read_u32(buf)? as usize;
    if buf.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint: tensor payload ends early".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    String::from_utf8(head.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::InitScheme;
    use crate::data::{generate_fixture, FixtureSpec, Signal};
    use crate::train::init_params;

    fn corpus() -> Vec<Tweet> {
        let spec = FixtureSpec {
            signal: Signal::Exclamation,
            noise: 0.0,
        };
        let mut t: Vec<Tweet> = generate_fixture(2, 4, spec, 3).iter().filter_map(Tweet::from_record).collect();
        t[0].tokens.push("naïve\u{1F600}".into());
        t
    }

    fn random_model(kind: ModelKind) -> Model {
        let tweets = corpus();
        let vocab = ModelVocab::build(kind, &tweets).unwrap();
        let cfg = TrainConfig {
            seed: 17,
            clip_norm: Some(2.5),
            ..TrainConfig::default()
        };
        let dims = Dims {
            vocab_size: vocab.len(),
            embed_dim: 3,
            char_hidden: 2,
            word_hidden: 4,
            mlp_hidden: 3,
        };
        let params = init_params(kind, dims, InitScheme::Glorot, 9).unwrap();
        Model::neural(Trait::Agr, vocab, params, cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for kind in ModelKind::NEURAL {
            let m = random_model(kind);
            let bytes = m.to_bytes().unwrap();
            let back = Model::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
        let avg = Model::average(Trait::Opn, -0.123456789012345, TrainConfig::default());
        let bytes = avg.to_bytes().unwrap();
        assert_eq!(Model::from_bytes(&bytes).unwrap(), avg);
    }

    #[test]
    fn header_lists_vocabulary_as_code_points() {
        let m = random_model(ModelKind::BiGruWord);
        let bytes = m.to_bytes().unwrap();
        let end = find_header_end(&bytes).unwrap();
        let header = std::str::from_utf8(&bytes[..end]).unwrap();
        assert!(header.contains("U+00EF U+0076 U+0065 U+1F600"), "{header}");
        assert!(header.contains("kind = bigru-word"));
        assert!(header.contains("config.seed = 17"));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let bytes = random_model(ModelKind::C2w2s4pt).to_bytes().unwrap();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = Model::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated") || err.to_string().contains("checkpoint"), "{err}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Model::from_bytes(&extra).unwrap_err().to_string().contains("trailing"));
        assert!(Model::from_bytes(b"hello\nend\n").is_err());
    }

    #[test]
    fn zero_model_predicts_output_bias() {
        let tweets = corpus();
        let vocab = ModelVocab::build(ModelKind::BiGruChar, &tweets).unwrap();
        let dims = TrainConfig::default().dims(ModelKind::BiGruChar, vocab.len());
        let mut params = ModelParams::zeros(ModelKind::BiGruChar, Dims { embed_dim: 2, char_hidden: 2, mlp_hidden: 2, ..dims }).unwrap();
        params.head.b_y = 0.125;
        let m = Model::neural(Trait::Ext, vocab, params, TrainConfig::default()).unwrap();
        assert_eq!(m.predict_text("anything at all ☃").unwrap(), Some(0.125));
        assert_eq!(m.predict_text("   ").unwrap(), None);
        assert_eq!(m.predict_text("http://x.co/a").unwrap(), Some(0.125));
    }

    #[test]
    fn clamp_only_when_configured() {
        let mut cfg = TrainConfig::default();
        let m = Model::average(Trait::Ext, 0.9, cfg.clone());
        assert_eq!(m.predict_text("hi").unwrap(), Some(0.9));
        cfg.clamp_output = true;
        let m = Model::average(Trait::Ext, 0.9, cfg);
        assert_eq!(m.predict_text("hi").unwrap(), Some(0.5));
    }

    #[test]
    fn mismatched_vocab_is_rejected() {
        let tweets = corpus();
        let vocab = ModelVocab::build(ModelKind::BiGruWord, &tweets).unwrap();
        let dims = Dims {
            vocab_size: vocab.len(),
            embed_dim: 2,
            char_hidden: 2,
            word_hidden: 2,
            mlp_hidden: 2,
        };
        let params = ModelParams::zeros(ModelKind::C2w2s4pt, dims).unwrap();
        assert!(Model::neural(Trait::Ext, vocab, params, TrainConfig::default()).is_err());
    }
}
