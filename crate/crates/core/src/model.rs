//! The character → word → sentence network and the two single-level RNN
//! baselines that share its regression head.
//!
//! All three neural kinds store their parameters in [`ModelParams`]:
//!
//! | kind         | embedding     | char_birnn        | word_birnn          |
//! |--------------|---------------|-------------------|---------------------|
//! | `c2w2s4pt`   | characters    | chars → word vec  | word vecs → sentence|
//! | `bigru-char` | characters    | whole text        | n/a                 |
//! | `bigru-word` | words         | n/a               | word embeddings     |
//!
//! Gradients use the same struct, so every tensor has a congruent gradient.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gru::{birnn_backward, birnn_forward, BiRnnParams, BiRnnTrace};
use crate::params::{mat_ref, prefixed, vec_ref, ParamSet, TensorRef};
use crate::tensor::{assert_finite, Matrix, Vector};
use crate::vocab::CharVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Average,
    BiGruChar,
    BiGruWord,
    C2w2s4pt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Average,
        ModelKind::BiGruChar,
        ModelKind::BiGruWord,
        ModelKind::C2w2s4pt,
    ];
    pub const NEURAL: [ModelKind; 3] = [ModelKind::C2w2s4pt, ModelKind::BiGruChar, ModelKind::BiGruWord];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Average => "average",
            ModelKind::BiGruChar => "bigru-char",
            ModelKind::BiGruWord => "bigru-word",
            ModelKind::C2w2s4pt => "c2w2s4pt",
        }
    }

    pub fn is_neural(self) -> bool {
        self != ModelKind::Average
    }

    /// Whether the input vocabulary is made of words rather than characters.
    pub fn uses_words(self) -> bool {
        self == ModelKind::BiGruWord
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model kind '{s}'")))
    }
}

/// Layer sizes for one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub mlp_hidden: usize,
}

impl Dims {
    /// Full-size layer widths of the hierarchical model.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 50,
            char_hidden: 256,
            word_hidden: 256,
            mlp_hidden: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    /// `[mlp_hidden × sentence_dim]`
    pub w_eh: Matrix,
    pub b_h: Vector,
    /// `[1 × mlp_hidden]`
    pub w_hy: Matrix,
    pub b_y: f64,
}

impl MlpHead {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_eh: Matrix::zeros(hidden, input_dim),
            b_h: Vector::zeros(hidden),
            w_hy: Matrix::zeros(1, hidden),
            b_y: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_eh.cols()
    }
}

impl ParamSet for MlpHead {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            mat_ref("", "w_eh", &self.w_eh),
            vec_ref("", "b_h", &self.b_h),
            mat_ref("", "w_hy", &self.w_hy),
            TensorRef {
                name: "b_y".into(),
                shape: vec![],
                data: std::slice::from_ref(&self.b_y),
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_eh.as_mut_slice(),
            &mut self.b_h,
            self.w_hy.as_mut_slice(),
            std::slice::from_mut(&mut self.b_y),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[embed_dim × vocab_size]`; column `i` is the embedding of symbol `i`.
    pub embedding: Matrix,
    pub char_birnn: Option<BiRnnParams>,
    pub word_birnn: Option<BiRnnParams>,
    pub head: MlpHead,
}

impl ModelParams {
    pub fn zeros(kind: ModelKind, dims: Dims) -> Result<Self> {
        let embedding = Matrix::zeros(dims.embed_dim, dims.vocab_size);
        let (char_birnn, word_birnn, sentence_dim) = match kind {
            ModelKind::C2w2s4pt => (
                Some(BiRnnParams::zeros(dims.embed_dim, dims.char_hidden)),
                Some(BiRnnParams::zeros(2 * dims.char_hidden, dims.word_hidden)),
                2 * dims.word_hidden,
            ),
            ModelKind::BiGruChar => (
                Some(BiRnnParams::zeros(dims.embed_dim, dims.char_hidden)),
                None,
                2 * dims.char_hidden,
            ),
            ModelKind::BiGruWord => (
                None,
                Some(BiRnnParams::zeros(dims.embed_dim, dims.word_hidden)),
                2 * dims.word_hidden,
            ),
            ModelKind::Average => {
                return Err(Error::Invalid("the average baseline has no network parameters".into()))
            }
        };
        let params = Self {
            embedding,
            char_birnn,
            word_birnn,
            head: MlpHead::zeros(sentence_dim, dims.mlp_hidden),
        };
        params.validate(kind)?;
        Ok(params)
    }

    pub fn kind(&self) -> ModelKind {
        match (&self.char_birnn, &self.word_birnn) {
            (Some(_), Some(_)) => ModelKind::C2w2s4pt,
            (Some(_), None) => ModelKind::BiGruChar,
            (None, Some(_)) => ModelKind::BiGruWord,
            (None, None) => ModelKind::Average,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            vocab_size: self.embedding.cols(),
            embed_dim: self.embedding.rows(),
            char_hidden: self.char_birnn.as_ref().map_or(0, |p| p.hidden_dim()),
            word_hidden: self.word_birnn.as_ref().map_or(0, |p| p.hidden_dim()),
            mlp_hidden: self.head.w_eh.rows(),
        }
    }

    /// Checks that the layer shapes chain: embedding → char encoder → word
    /// encoder → head.
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if self.kind() != kind {
            return Err(Error::Invalid(format!(
                "parameters describe a {} model, expected {kind}",
                self.kind()
            )));
        }
        let mismatch = |what: &str, got: usize, want: usize| Error::Shape {
            op: "ModelParams",
            left: format!("{what} = {got}"),
            right: format!("expected {want}"),
        };
        let mut feed = self.embedding.rows();
        if let Some(c) = &self.char_birnn {
            c.validate()?;
            if c.input_dim() != feed {
                return Err(mismatch("char encoder input", c.input_dim(), feed));
            }
            feed = c.output_dim();
        }
        if let Some(w) = &self.word_birnn {
            w.validate()?;
            if w.input_dim() != feed {
                return Err(mismatch("word encoder input", w.input_dim(), feed));
            }
            feed = w.output_dim();
        }
        let h = &self.head;
        if h.w_eh.cols() != feed {
            return Err(mismatch("head input", h.w_eh.cols(), feed));
        }
        if h.b_h.len() != h.w_eh.rows() || h.w_hy.shape() != (1, h.w_eh.rows()) {
            return Err(mismatch("head hidden", h.w_hy.cols(), h.w_eh.rows()));
        }
        Ok(())
    }

    pub fn sentence_dim(&self) -> usize {
        self.head.input_dim()
    }

    /// Width of the vectors fed to the word-level encoder, if there is one.
    pub fn word_input_dim(&self) -> Option<usize> {
        self.word_birnn.as_ref().map(|w| w.input_dim())
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![mat_ref("", "embedding", &self.embedding)];
        if let Some(c) = &self.char_birnn {
            out.extend(prefixed("char_rnn", c.tensors()));
        }
        if let Some(w) = &self.word_birnn {
            out.extend(prefixed("word_rnn", w.tensors()));
        }
        out.extend(prefixed("head", self.head.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embedding.as_mut_slice()];
        if let Some(c) = &mut self.char_birnn {
            out.extend(c.tensors_mut());
        }
        if let Some(w) = &mut self.word_birnn {
            out.extend(w.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

/// Model input as vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encoded {
    /// Character ids per word, for the hierarchical model.
    Words(Vec<Vec<usize>>),
    /// One flat id sequence: characters of the whole text, or word ids.
    Sequence(Vec<usize>),
}

impl Encoded {
    pub fn is_empty(&self) -> bool {
        match self {
            Encoded::Words(ws) => ws.is_empty() || ws.iter().any(|w| w.is_empty()),
            Encoded::Sequence(s) => s.is_empty(),
        }
    }

    /// Number of vectors the word-level encoder consumes, if any.
    pub fn word_count(&self) -> usize {
        match self {
            Encoded::Words(ws) => ws.len(),
            Encoded::Sequence(s) => s.len(),
        }
    }

    fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        let (nested, flat): (&[Vec<usize>], &[usize]) = match self {
            Encoded::Words(ws) => (ws, &[]),
            Encoded::Sequence(s) => (&[], s),
        };
        nested.iter().flatten().chain(flat).copied()
    }
}

/// Inverted-dropout multipliers (0 or `1/(1-rate)`) for the two dropout
/// sites: the vectors entering the word-level encoder and the sentence
/// vector entering the head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropoutMasks {
    pub words: Option<Vec<Vector>>,
    pub sentence: Option<Vector>,
}

impl DropoutMasks {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Every intermediate of one forward pass, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct SentenceTrace {
    kind: ModelKind,
    dims: Dims,
    input: Encoded,
    /// Char-level encoder traces: one per word (hierarchical) or one for the
    /// whole text (char baseline).
    pub char_traces: Vec<BiRnnTrace>,
    /// Vectors entering the word-level encoder, before dropout.
    pub word_vectors: Vec<Vector>,
    pub word_trace: Option<BiRnnTrace>,
    pub masks: DropoutMasks,
    /// Sentence vector before dropout.
    pub sentence: Vector,
    head_input: Vector,
    head_pre: Vector,
    /// ReLU output of the head.
    pub hidden: Vector,
    pub prediction: f64,
}

impl SentenceTrace {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }
}

fn embed_ids(embedding: &Matrix, ids: &[usize]) -> Vec<Vector> {
    ids.iter().map(|&i| embedding.column(i)).collect()
}

fn apply_mask(v: &Vector, mask: Option<&Vector>) -> Vector {
    match mask {
        None => v.clone(),
        Some(m) => {
            assert_eq!(m.len(), v.len(), "dropout mask length");
            Vector::from_vec(v.iter().zip(m.iter()).map(|(a, b)| a * b).collect())
        }
    }
}

/// Full forward pass from ids to prediction.
pub fn forward(params: &ModelParams, input: &Encoded, masks: &DropoutMasks) -> Result<SentenceTrace> {
    let kind = params.kind();
    if input.is_empty() {
        return Err(Error::EmptyInput("model input has no symbols"));
    }
    let vocab_size = params.embedding.cols();
    if let Some(bad) = input.ids().find(|&i| i >= vocab_size) {
        return Err(Error::Invalid(format!(
            "symbol id {bad} outside vocabulary of size {vocab_size}"
        )));
    }

    let (char_traces, word_vectors, word_trace, sentence) = match (kind, input) {
        (ModelKind::C2w2s4pt, Encoded::Words(words)) => {
            let char_rnn = params.char_birnn.as_ref().expect("char encoder");
            let mut char_traces = Vec::with_capacity(words.len());
            let mut word_vectors = Vec::with_capacity(words.len());
            for ids in words {
                let (e_w, trace) = birnn_forward(char_rnn, &embed_ids(&params.embedding, ids))?;
                word_vectors.push(e_w);
                char_traces.push(trace);
            }
            let (e_s, word_trace) = word_level(params, &word_vectors, masks)?;
            (char_traces, word_vectors, Some(word_trace), e_s)
        }
        (ModelKind::BiGruChar, Encoded::Sequence(ids)) => {
            let char_rnn = params.char_birnn.as_ref().expect("char encoder");
            let (e_s, trace) = birnn_forward(char_rnn, &embed_ids(&params.embedding, ids))?;
            (vec![trace], Vec::new(), None, e_s)
        }
        (ModelKind::BiGruWord, Encoded::Sequence(ids)) => {
            let word_vectors = embed_ids(&params.embedding, ids);
            let (e_s, word_trace) = word_level(params, &word_vectors, masks)?;
            (Vec::new(), word_vectors, Some(word_trace), e_s)
        }
        (kind, input) => {
            let shape = match input {
                Encoded::Words(_) => "per-word",
                Encoded::Sequence(_) => "flat sequence",
            };
            return Err(Error::Invalid(format!("{kind} model cannot consume {shape} input")));
        }
    };

    let head_input = apply_mask(&sentence, masks.sentence.as_ref());
    let (head_pre, hidden, prediction) = head_forward(&params.head, &head_input);
    Ok(SentenceTrace {
        kind,
        dims: params.dims(),
        input: input.clone(),
        char_traces,
        word_vectors,
        word_trace,
        masks: masks.clone(),
        sentence,
        head_input,
        head_pre,
        hidden,
        prediction,
    })
}

/// Runs the word-level encoder over (optionally dropped-out) word vectors.
fn word_level(params: &ModelParams, word_vectors: &[Vector], masks: &DropoutMasks) -> Result<(Vector, BiRnnTrace)> {
    let word_rnn = params.word_birnn.as_ref().expect("word encoder");
    let inputs: Vec<Vector> = match &masks.words {
        None => word_vectors.to_vec(),
        Some(wm) if wm.len() == word_vectors.len() => {
            word_vectors.iter().zip(wm).map(|(v, m)| apply_mask(v, Some(m))).collect()
        }
        Some(wm) => {
            return Err(Error::Shape {
                op: "forward",
                left: format!("{} word dropout masks", wm.len()),
                right: format!("{} words", word_vectors.len()),
            })
        }
    };
    birnn_forward(word_rnn, &inputs)
}

fn head_forward(head: &MlpHead, e_s: &[f64]) -> (Vector, Vector, f64) {
    let mut pre = head.b_h.clone();
    head.w_eh.matvec_acc(e_s, &mut pre);
    assert_finite("predict", &pre);
    let hidden = Vector::from_vec(pre.iter().map(|&x| x.max(0.0)).collect());
    let y = head.b_y + crate::tensor::dot(head.w_hy.row(0), &hidden);
    assert_finite("predict", &[y]);
    (pre, hidden, y)
}

/// `ŷ = W_hy · relu(W_eh · (mask ⊙ e_s) + b_h) + b_y`.
pub fn predict(params: &ModelParams, e_s: &Vector, dropout: Option<&Vector>) -> Result<f64> {
    if e_s.len() != params.head.input_dim() {
        return Err(Error::Shape {
            op: "predict",
            left: format!("sentence vector of length {}", e_s.len()),
            right: format!("head input {}", params.head.input_dim()),
        });
    }
    Ok(head_forward(&params.head, &apply_mask(e_s, dropout)).2)
}

/// Adds `∂L/∂θ` into `grads`, where `d_pred = ∂L/∂ŷ`.
pub fn backward_acc(params: &ModelParams, trace: &SentenceTrace, d_pred: f64, grads: &mut ModelParams) -> Result<()> {
    if trace.kind != params.kind() || trace.dims != params.dims() || grads.dims() != params.dims() {
        return Err(Error::Invalid(
            "trace or gradient buffer does not match these parameters".into(),
        ));
    }
    if d_pred == 0.0 {
        return Ok(());
    }
    let head = &params.head;
    let gh = &mut grads.head;
    gh.b_y += d_pred;
    gh.w_hy.add_outer(&[d_pred], &trace.hidden);
    let d_pre: Vec<f64> = head
        .w_hy
        .row(0)
        .iter()
        .zip(trace.head_pre.iter())
        .map(|(&w, &a)| if a > 0.0 { w * d_pred } else { 0.0 })
        .collect();
    gh.w_eh.add_outer(&d_pre, &trace.head_input);
    for (b, d) in gh.b_h.iter_mut().zip(&d_pre) {
        *b += d;
    }
    let mut d_sentence = vec![0.0; head.input_dim()];
    head.w_eh.matvec_t_acc(&d_pre, &mut d_sentence);
    if let Some(m) = &trace.masks.sentence {
        d_sentence.iter_mut().zip(m.iter()).for_each(|(d, m)| *d *= m);
    }

    match (&trace.input, trace.kind) {
        (Encoded::Sequence(ids), ModelKind::BiGruChar) => {
            let rnn = params.char_birnn.as_ref().expect("char encoder");
            let d_x = birnn_backward(rnn, &trace.char_traces[0], &d_sentence, grads.char_birnn.as_mut().unwrap());
            for (&id, d) in ids.iter().zip(&d_x) {
                grads.embedding.add_to_column(id, d);
            }
        }
        (input, kind) => {
            let rnn = params.word_birnn.as_ref().expect("word encoder");
            let word_trace = trace.word_trace.as_ref().expect("word trace");
            let mut d_words = birnn_backward(rnn, word_trace, &d_sentence, grads.word_birnn.as_mut().unwrap());
            if let Some(wm) = &trace.masks.words {
                for (d, m) in d_words.iter_mut().zip(wm) {
                    d.iter_mut().zip(m.iter()).for_each(|(d, m)| *d *= m);
                }
            }
            match (input, kind) {
                (Encoded::Sequence(ids), ModelKind::BiGruWord) => {
                    for (&id, d) in ids.iter().zip(&d_words) {
                        grads.embedding.add_to_column(id, d);
                    }
                }
                (Encoded::Words(words), ModelKind::C2w2s4pt) => {
                    let rnn = params.char_birnn.as_ref().expect("char encoder");
                    let acc = grads.char_birnn.as_mut().unwrap();
                    let mut d_chars = Vec::with_capacity(words.len());
                    for ((ids, t), d_w) in words.iter().zip(&trace.char_traces).zip(&d_words) {
                        d_chars.push((ids, birnn_backward(rnn, t, d_w, acc)));
                    }
                    for (ids, d_x) in d_chars {
                        for (&id, d) in ids.iter().zip(&d_x) {
                            grads.embedding.add_to_column(id, d);
                        }
                    }
                }
                _ => unreachable!("forward only builds traces for matching input"),
            }
        }
    }
    Ok(())
}

/// Gradients of every parameter for upstream gradient `d_pred`.
pub fn backward_full(params: &ModelParams, trace: &SentenceTrace, d_pred: f64) -> Result<ModelParams> {
    let mut grads = ModelParams::zeros(params.kind(), params.dims())?;
    backward_acc(params, trace, d_pred, &mut grads)?;
    Ok(grads)
}

/// Character embeddings of `word`: the columns of `e_c` selected by each
/// character's id, unseen characters selecting the UNK column.
pub fn embed_chars(vocab: &CharVocab, e_c: &Matrix, word: &str) -> Result<Vec<Vector>> {
    if word.is_empty() {
        return Err(Error::EmptyInput("cannot embed an empty word"));
    }
    Ok(embed_ids(e_c, &vocab.encode(word)))
}

/// Word vector `[h_fwd_last ; h_bwd_first]` from the character encoder.
pub fn compose_word(params: &ModelParams, vocab: &CharVocab, word: &str) -> Result<Vector> {
    let rnn = params
        .char_birnn
        .as_ref()
        .ok_or_else(|| Error::Invalid("model has no character encoder".into()))?;
    crate::gru::birnn_encode(rnn, &embed_chars(vocab, &params.embedding, word)?)
}

/// Sentence vector of the hierarchical model, with the trace of a
/// dropout-free forward pass.
pub fn encode_sentence(params: &ModelParams, vocab: &CharVocab, tokens: &[String]) -> Result<(Vector, SentenceTrace)> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("sentence has no tokens"));
    }
    if tokens.iter().any(|t| t.is_empty()) {
        return Err(Error::EmptyInput("cannot embed an empty word"));
    }
    let input = Encoded::Words(tokens.iter().map(|t| vocab.encode(t)).collect());
    let trace = forward(params, &input, &DropoutMasks::none())?;
    Ok((trace.sentence.clone(), trace))
}

/// `(1/n) Σ (y_i − ŷ_i)²`
pub fn mse_loss(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Shape {
            op: "mse_loss",
            left: format!("{} predictions", preds.len()),
            right: format!("{} targets", truths.len()),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("mse_loss over zero examples"));
    }
    let sum: f64 = preds.iter().zip(truths).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(sum / preds.len() as f64)
}
