//! Mini-batch training with Adam and inverted dropout, plus the
//! finite-difference gradient checker.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::{Model, ModelVocab};
use crate::config::{InitScheme, TrainConfig};
use crate::data::{FoldPlan, Trait, Tweet};
use crate::error::{Error, Result};
use crate::model::{self, Dims, DropoutMasks, Encoded, ModelKind, ModelParams};
use crate::params::ParamSet;
use crate::rng::SplitMix64;
use crate::tensor::Vector;

const STREAM_INIT: u64 = 0x1417;
const STREAM_SHUFFLE: u64 = 0x5AFF;
const STREAM_DROPOUT: u64 = 0xD409;

/// Examples per gradient chunk. Chunks are fixed by position in the batch,
/// so the floating-point reduction order never depends on the thread count.
const GRAD_CHUNK: usize = 4;

/// Fresh parameters for `kind`. Under [`InitScheme::Glorot`] every weight
/// matrix is uniform in `±sqrt(6/(fan_in+fan_out))`, the embedding table is
/// uniform in ±0.1 and biases are zero.
pub fn init_params(kind: ModelKind, dims: Dims, scheme: InitScheme, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(kind, dims)?;
    if scheme == InitScheme::Zero {
        return Ok(params);
    }
    let shapes: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    let mut rng = SplitMix64::stream(seed, STREAM_INIT);
    for ((name, shape), data) in shapes.into_iter().zip(params.tensors_mut()) {
        let bound = if name == "embedding" {
            0.1
        } else if shape.len() == 2 {
            (6.0 / (shape[0] + shape[1]) as f64).sqrt()
        } else {
            continue;
        };
        data.iter_mut().for_each(|x| *x = rng.uniform(-bound, bound));
    }
    Ok(params)
}

/// Inverted-dropout multipliers: each entry is 0 with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut SplitMix64) -> Result<Vector> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(Vector::filled(len, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Vector::from_vec(
        (0..len).map(|_| if rng.next_f64() < rate { 0.0 } else { keep }).collect(),
    ))
}

/// Applies inverted dropout to `v`, returning the output and the mask used.
pub fn dropout_apply(v: &Vector, rate: f64, rng: &mut SplitMix64) -> Result<(Vector, Vector)> {
    let mask = dropout_mask(v.len(), rate, rng)?;
    let out = Vector::from_vec(v.iter().zip(mask.iter()).map(|(a, m)| a * m).collect());
    Ok((out, mask))
}

/// Adam moments, shape-congruent with the parameters they track.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = params.clone();
        m.zero();
        Self { v: m.clone(), m, t: 0 }
    }
}

fn check_congruent(a: &ModelParams, b: &ModelParams, what: &str) -> Result<()> {
    let sa: Vec<_> = a.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    let sb: Vec<_> = b.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if sa != sb {
        return Err(Error::Invalid(format!("{what}: tensor shapes do not match the parameters")));
    }
    Ok(())
}

/// One Adam update with bias correction. `grads` is rescaled in place when
/// `cfg.clip_norm` is set and exceeded.
pub fn adam_step(params: &mut ModelParams, grads: &mut ModelParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    check_congruent(params, grads, "adam_step gradients")?;
    check_congruent(params, &state.m, "adam_step state")?;
    if let Some(c) = cfg.clip_norm {
        let norm = grads.squared_norm().sqrt();
        if norm > c {
            grads.scale(c / norm);
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let g_all = grads.tensors();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
        for i in 0..p.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean squared error over the epoch's training examples, measured in
    /// training mode (with dropout).
    pub loss: f64,
    pub val_rmse: Option<f64>,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,loss,val_rmse,seconds";

impl EpochReport {
    /// One CSV row; an absent validation RMSE is an empty field.
    pub fn csv_row(&self) -> String {
        let val = self.val_rmse.map_or(String::new(), |v| v.to_string());
        format!("{},{},{},{:.3}", self.epoch, self.loss, val, self.seconds)
    }
}

pub fn reports_to_csv(reports: &[EpochReport]) -> String {
    let mut s = format!("{EPOCH_CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

pub fn write_reports(reports: &[EpochReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, reports_to_csv(reports)).map_err(|e| Error::io(path, e))
}

/// Draws the masks for one example from the sequential dropout stream.
fn draw_masks(params: &ModelParams, input: &Encoded, cfg: &TrainConfig, rng: &mut SplitMix64) -> Result<DropoutMasks> {
    if cfg.dropout_rate == 0.0 {
        return Ok(DropoutMasks::none());
    }
    let words = match params.word_input_dim() {
        Some(d) if cfg.word_dropout => Some(
            (0..input.word_count())
                .map(|_| dropout_mask(d, cfg.dropout_rate, rng))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let sentence = Some(dropout_mask(params.sentence_dim(), cfg.dropout_rate, rng)?);
    Ok(DropoutMasks { words, sentence })
}

/// Mean-gradient of one batch, plus the summed squared error.
fn batch_gradient(
    params: &ModelParams,
    batch: &[(&Encoded, f64, DropoutMasks)],
) -> Result<(ModelParams, f64)> {
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(ModelParams, f64)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = params.clone();
            grads.zero();
            let mut sq = 0.0;
            for (input, target, masks) in chunk {
                let trace = model::forward(params, input, masks)?;
                let err = trace.prediction - target;
                sq += err * err;
                model::backward_acc(params, &trace, 2.0 * err * scale, &mut grads)?;
            }
            Ok((grads, sq))
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut total, mut sq) = iter.next().expect("non-empty batch")?;
    for part in iter {
        let (g, s) = part?;
        total.add_assign(&g);
        sq += s;
    }
    Ok((total, sq))
}

/// Trains one model for `target` on `tweets`, optionally reporting RMSE on
/// `validation` after each epoch. The vocabulary is built from `tweets` only.
pub fn train_model(
    kind: ModelKind,
    tweets: &[Tweet],
    target: Trait,
    cfg: &TrainConfig,
    validation: Option<&[Tweet]>,
) -> Result<(Model, Vec<EpochReport>)> {
    train_model_streaming(kind, tweets, target, cfg, validation, |_| Ok(()))
}

/// [`train_model`], calling `on_epoch` as each epoch finishes.
pub fn train_model_streaming(
    kind: ModelKind,
    tweets: &[Tweet],
    target: Trait,
    cfg: &TrainConfig,
    validation: Option<&[Tweet]>,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<(Model, Vec<EpochReport>)> {
    cfg.validate()?;
    if tweets.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    if kind == ModelKind::Average {
        let scores: Vec<f64> = tweets.iter().map(|t| t.score(target)).collect();
        let mean = crate::eval::average_baseline_fit(&scores)?;
        return Ok((Model::average(target, mean, cfg.clone()), Vec::new()));
    }

    let vocab = ModelVocab::build(kind, tweets)?;
    let dims = cfg.dims(kind, vocab.len());
    let mut params = init_params(kind, dims, cfg.init_scheme, cfg.seed)?;
    let inputs: Vec<Encoded> = tweets.iter().map(|t| vocab.encode(kind, t)).collect();
    let targets: Vec<f64> = tweets.iter().map(|t| t.score(target)).collect();

    let mut shuffle_rng = SplitMix64::stream(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = SplitMix64::stream(cfg.seed, STREAM_DROPOUT);
    let mut adam = AdamState::new(&params);
    let mut order: Vec<usize> = (0..tweets.len()).collect();
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut sq_total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = idx
                .iter()
                .map(|&i| Ok((&inputs[i], targets[i], draw_masks(&params, &inputs[i], cfg, &mut dropout_rng)?)))
                .collect::<Result<Vec<_>>>()?;
            let (mut grads, sq) = batch_gradient(&params, &batch)?;
            sq_total += sq;
            adam_step(&mut params, &mut grads, &mut adam, cfg)?;
        }
        let val_rmse = match validation {
            Some(v) if !v.is_empty() => {
                Some(Model::neural(target, vocab.clone(), params.clone(), cfg.clone())?.rmse_on(v)?)
            }
            _ => None,
        };
        let report = EpochReport {
            epoch,
            loss: sq_total / tweets.len() as f64,
            val_rmse,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report)?;
        reports.push(report);
    }
    Ok((Model::neural(target, vocab, params, cfg.clone())?, reports))
}

/// Trains on every fold except `fold_index` and reports RMSE on the held-out
/// fold after each epoch.
pub fn train(
    kind: ModelKind,
    corpus: &[Tweet],
    target: Trait,
    plan: &FoldPlan,
    fold_index: usize,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochReport>)> {
    if plan.assignment.len() != corpus.len() {
        return Err(Error::Invalid("fold plan does not match the corpus".into()));
    }
    if fold_index >= plan.k {
        return Err(Error::Invalid(format!("fold {fold_index} out of range for k={}", plan.k)));
    }
    let train: Vec<Tweet> = plan.train_indices(fold_index).into_iter().map(|i| corpus[i].clone()).collect();
    let test: Vec<Tweet> = plan.test_indices(fold_index).into_iter().map(|i| corpus[i].clone()).collect();
    train_model(kind, &train, target, cfg, Some(&test))
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Size limits for the random instances built by [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckDims {
    /// Upper bound for every layer width.
    pub max_dim: usize,
    pub vocab_size: usize,
    pub max_words: usize,
    pub max_chars: usize,
    /// Parameters are drawn uniformly from `±weight_scale`.
    pub weight_scale: f64,
    /// The target is the instance's own prediction shifted by a uniform
    /// offset in `±residual`. A central difference carries about one ulp of
    /// the loss divided by `eps` in round-off, which swamps components below
    /// roughly 1e-7 of a unit-scale loss; a small residual shrinks the loss so
    /// those components fall under the 1e-8 denominator floor instead.
    pub residual: f64,
}

impl Default for GradCheckDims {
    fn default() -> Self {
        Self {
            max_dim: 5,
            vocab_size: 7,
            max_words: 3,
            max_chars: 4,
            weight_scale: 0.5,
            residual: 0.01,
        }
    }
}

/// The component with the largest relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub components: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            tensor: String::new(),
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
            components: 0,
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.components += other.components;
        if other.max_rel_error > self.max_rel_error || self.tensor.is_empty() {
            let components = self.components;
            *self = GradCheckReport { components, ..other };
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn squared_loss(params: &ModelParams, input: &Encoded, masks: &DropoutMasks, target: f64) -> Result<f64> {
    let y = model::forward(params, input, masks)?.prediction;
    Ok((y - target) * (y - target))
}

/// Compares the analytic gradient of `(ŷ - target)²` on one instance
/// against central differences, component by component. `tamper` may edit
/// the analytic gradient before comparison.
pub fn grad_check_instance(
    params: &ModelParams,
    input: &Encoded,
    masks: &DropoutMasks,
    target: f64,
    eps: f64,
    tamper: Option<&dyn Fn(&mut ModelParams)>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let trace = model::forward(params, input, masks)?;
    let mut grads = model::backward_full(params, &trace, 2.0 * (trace.prediction - target))?;
    if let Some(f) = tamper {
        f(&mut grads);
    }
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport::empty();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        for (i, &a_i) in a.iter().enumerate() {
            let orig = probe.tensors_mut()[ti][i];
            probe.tensors_mut()[ti][i] = orig + eps;
            let plus = squared_loss(&probe, input, masks, target)?;
            probe.tensors_mut()[ti][i] = orig - eps;
            let minus = squared_loss(&probe, input, masks, target)?;
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a_i, numeric);
            report.merge(GradCheckReport {
                max_rel_error: err,
                tensor: name.clone(),
                index: i,
                analytic: a_i,
                numeric,
                components: 1,
            });
        }
    }
    Ok(report)
}

/// One random instance with its own dimensions and weights. Odd trials also
/// fix dropout masks.
pub fn random_instance(
    kind: ModelKind,
    limits: GradCheckDims,
    trial: usize,
    rng: &mut SplitMix64,
) -> Result<(ModelParams, Encoded, DropoutMasks, f64)> {
    let mut dim = || 1 + rng.below(limits.max_dim);
    let dims = Dims {
        vocab_size: limits.vocab_size,
        embed_dim: dim(),
        char_hidden: dim(),
        word_hidden: dim(),
        mlp_hidden: dim(),
    };
    let mut params = ModelParams::zeros(kind, dims)?;
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|x| *x = rng.uniform(-limits.weight_scale, limits.weight_scale));
    }
    let v = limits.vocab_size;
    let input = match kind {
        ModelKind::C2w2s4pt => Encoded::Words(
            (0..1 + rng.below(limits.max_words))
                .map(|_| (0..1 + rng.below(limits.max_chars)).map(|_| rng.below(v)).collect())
                .collect(),
        ),
        ModelKind::BiGruChar => {
            Encoded::Sequence((0..1 + rng.below(limits.max_words * limits.max_chars)).map(|_| rng.below(v)).collect())
        }
        ModelKind::BiGruWord => Encoded::Sequence((0..1 + rng.below(limits.max_words)).map(|_| rng.below(v)).collect()),
        ModelKind::Average => return Err(Error::Invalid("the average baseline has no gradients".into())),
    };
    let masks = if trial % 2 == 1 {
        let cfg = TrainConfig {
            dropout_rate: 0.3,
            ..TrainConfig::default()
        };
        draw_masks(&params, &input, &cfg, rng)?
    } else {
        DropoutMasks::none()
    };
    let y = model::forward(&params, &input, &masks)?.prediction;
    let target = y + rng.uniform(-limits.residual, limits.residual);
    Ok((params, input, masks, target))
}

/// Maximum relative gradient error over `n_trials` seeded random instances.
pub fn grad_check(kind: ModelKind, limits: GradCheckDims, n_trials: usize, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let mut rng = SplitMix64::stream(seed, kind as u64 + 0x6C);
    let mut report = GradCheckReport::empty();
    for trial in 0..n_trials {
        let (params, input, masks, target) = random_instance(kind, limits, trial, &mut rng)?;
        report.merge(grad_check_instance(&params, &input, &masks, target, eps, None)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_fixture, FixtureSpec, Signal};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            char_embed_dim: 3,
            word_embed_dim: 3,
            char_hidden: 4,
            word_hidden: 4,
            mlp_hidden: 4,
            epochs: 2,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn fixture_tweets(n_users: usize, per_user: usize) -> Vec<Tweet> {
        let spec = FixtureSpec {
            signal: Signal::Exclamation,
            noise: 0.0,
        };
        generate_fixture(n_users, per_user, spec, 42).iter().filter_map(Tweet::from_record).collect()
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let dims = Dims {
            vocab_size: 9,
            embed_dim: 3,
            char_hidden: 4,
            word_hidden: 5,
            mlp_hidden: 6,
        };
        let a = init_params(ModelKind::C2w2s4pt, dims, InitScheme::Glorot, 1).unwrap();
        let b = init_params(ModelKind::C2w2s4pt, dims, InitScheme::Glorot, 1).unwrap();
        assert_eq!(a, b);
        for t in a.tensors() {
            let is_bias = t.shape.len() < 2;
            if is_bias {
                assert!(t.data.iter().all(|&x| x == 0.0), "{}", t.name);
            } else {
                let bound = if t.name == "embedding" {
                    0.1
                } else {
                    (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt()
                };
                assert!(t.data.iter().all(|x| x.abs() <= bound), "{}", t.name);
                assert!(t.data.iter().any(|&x| x != 0.0));
            }
        }
        let c = init_params(ModelKind::C2w2s4pt, dims, InitScheme::Glorot, 2).unwrap();
        assert_ne!(a, c);
        let z = init_params(ModelKind::C2w2s4pt, dims, InitScheme::Zero, 1).unwrap();
        assert_eq!(z.squared_norm(), 0.0);
    }

    #[test]
    fn glorot_sample_mean_matches_uniform_moments() {
        let dims = Dims {
            vocab_size: 2,
            embed_dim: 2,
            char_hidden: 2,
            word_hidden: 256,
            mlp_hidden: 256,
        };
        // head.w_eh is 256×512.
        let p = init_params(ModelKind::C2w2s4pt, dims, InitScheme::Glorot, 3).unwrap();
        let w = p.head.w_eh.as_slice();
        assert_eq!(w.len(), 256 * 512);
        let bound = (6.0f64 / (256.0 + 512.0)).sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 3.0 * bound / (3.0 * w.len() as f64).sqrt(), "{mean}");
    }

    #[test]
    fn dropout_examples() {
        let mut rng = SplitMix64::new(1);
        let v = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        let (out, mask) = dropout_apply(&v, 0.0, &mut rng).unwrap();
        assert_eq!(out, v);
        assert!(mask.iter().all(|&m| m == 1.0));
        let (out, mask) = dropout_apply(&v, 0.5, &mut rng).unwrap();
        for i in 0..3 {
            assert!(mask[i] == 0.0 || mask[i] == 2.0);
            assert_eq!(out[i], v[i] * mask[i]);
        }
        assert!(dropout_apply(&v, 1.0, &mut rng).is_err());
        assert!(dropout_apply(&v, -0.1, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = SplitMix64::new(9);
        let v = Vector::from_vec(vec![1.0, -0.5, 2.0, 0.25]);
        let n = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            let (out, _) = dropout_apply(&v, 0.5, &mut rng).unwrap();
            for i in 0..4 {
                sums[i] += out[i];
            }
        }
        for i in 0..4 {
            let mean = sums[i] / n as f64;
            assert!((mean - v[i]).abs() <= 0.02 * v[i].abs(), "{i}: {mean}");
        }
    }

    fn scalar_params() -> ModelParams {
        let dims = Dims {
            vocab_size: 1,
            embed_dim: 1,
            char_hidden: 1,
            word_hidden: 1,
            mlp_hidden: 1,
        };
        ModelParams::zeros(ModelKind::BiGruWord, dims).unwrap()
    }

    #[test]
    fn adam_first_step() {
        let cfg = TrainConfig::default();
        let mut p = scalar_params();
        let mut state = AdamState::new(&p);
        let mut g = p.clone();
        adam_step(&mut p, &mut g, &mut state, &cfg).unwrap();
        assert_eq!(p.squared_norm(), 0.0, "zero gradients leave params unchanged");

        let mut p = scalar_params();
        let mut state = AdamState::new(&p);
        let mut g = p.clone();
        g.head.b_y = 1.0;
        adam_step(&mut p, &mut g, &mut state, &cfg).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.head.b_y - expected).abs() < 1e-9);
        assert!((p.head.b_y + 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_sign_and_zero_lr() {
        let mut rng = SplitMix64::new(4);
        let dims = Dims {
            vocab_size: 4,
            embed_dim: 2,
            char_hidden: 3,
            word_hidden: 2,
            mlp_hidden: 3,
        };
        let p0 = init_params(ModelKind::C2w2s4pt, dims, InitScheme::Glorot, 1).unwrap();
        let mut g = p0.clone();
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|x| *x = rng.uniform(-1.0, 1.0));
        }
        let mut p = p0.clone();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &mut g.clone(), &mut state, &TrainConfig::default()).unwrap();
        for ((a, b), gr) in p.tensors().iter().zip(p0.tensors()).zip(g.tensors()) {
            for i in 0..a.data.len() {
                let delta = a.data[i] - b.data[i];
                assert_eq!(delta.signum(), -gr.data[i].signum());
            }
        }
        let zero_lr = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut q = p0.clone();
        let mut state = AdamState::new(&q);
        adam_step(&mut q, &mut g, &mut state, &zero_lr).unwrap();
        assert_eq!(q, p0);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut p = scalar_params();
        let mut state = AdamState::new(&p);
        let dims = Dims {
            vocab_size: 2,
            embed_dim: 1,
            char_hidden: 1,
            word_hidden: 1,
            mlp_hidden: 1,
        };
        let mut g = ModelParams::zeros(ModelKind::BiGruWord, dims).unwrap();
        assert!(adam_step(&mut p, &mut g, &mut state, &TrainConfig::default()).is_err());
    }

    #[test]
    fn clip_norm_bounds_the_update_input() {
        let cfg = TrainConfig {
            clip_norm: Some(0.5),
            ..TrainConfig::default()
        };
        let mut p = scalar_params();
        let mut state = AdamState::new(&p);
        let mut g = p.clone();
        g.head.b_y = 10.0;
        adam_step(&mut p, &mut g, &mut state, &cfg).unwrap();
        assert!((g.head.b_y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(train_model(ModelKind::C2w2s4pt, &[], Trait::Ext, &tiny_cfg(), None).is_err());
    }

    #[test]
    fn training_is_deterministic_and_independent_of_threads() {
        let tweets = fixture_tweets(3, 7);
        let cfg = tiny_cfg();
        for kind in ModelKind::NEURAL {
            let (a, ra) = train_model(kind, &tweets, Trait::Ext, &cfg, None).unwrap();
            let (b, _) = train_model(kind, &tweets, Trait::Ext, &cfg, None).unwrap();
            assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
            assert_eq!(ra.len(), cfg.epochs);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
            let (c, _) = pool.install(|| train_model(kind, &tweets, Trait::Ext, &cfg, None)).unwrap();
            assert_eq!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
        }
    }

    #[test]
    fn dropout_zero_training_pass_equals_inference() {
        let tweets = fixture_tweets(2, 3);
        let cfg = TrainConfig {
            dropout_rate: 0.0,
            ..tiny_cfg()
        };
        let (m, _) = train_model(ModelKind::C2w2s4pt, &tweets, Trait::Ext, &cfg, None).unwrap();
        let params = m.params().unwrap();
        let vocab = m.vocab();
        let mut rng = SplitMix64::new(0);
        for t in &tweets {
            let input = vocab.encode(ModelKind::C2w2s4pt, t);
            let masks = draw_masks(params, &input, &cfg, &mut rng).unwrap();
            let train_pass = model::forward(params, &input, &masks).unwrap().prediction;
            assert_eq!(train_pass, m.predict_tweet(t).unwrap());
        }
    }

    #[test]
    fn memorizes_a_single_tweet() {
        let tweets = fixture_tweets(1, 1);
        let cfg = TrainConfig {
            char_embed_dim: 4,
            char_hidden: 8,
            word_hidden: 8,
            mlp_hidden: 8,
            epochs: 500,
            dropout_rate: 0.0,
            seed: 1,
            ..TrainConfig::default()
        };
        let (m, reports) = train_model(ModelKind::C2w2s4pt, &tweets, Trait::Ext, &cfg, None).unwrap();
        let last = reports.last().unwrap();
        assert!(last.loss < 1e-4, "{}", last.loss);
        let err = m.predict_tweet(&tweets[0]).unwrap() - tweets[0].score(Trait::Ext);
        assert!(err * err < 1e-4);
    }

    #[test]
    fn fold_training_reports_validation() {
        let tweets = fixture_tweets(4, 5);
        let users: Vec<&str> = tweets.iter().map(|t| t.user_id.as_str()).collect();
        let plan = crate::data::kfold_split(&users, 2, crate::data::FoldLevel::User, 1).unwrap();
        let (_, reports) = train(ModelKind::BiGruWord, &tweets, Trait::Ext, &plan, 0, &tiny_cfg()).unwrap();
        assert!(reports.iter().all(|r| r.val_rmse.is_some() && r.loss >= 0.0));
        assert!(train(ModelKind::BiGruWord, &tweets, Trait::Ext, &plan, 2, &tiny_cfg()).is_err());
        let csv = reports_to_csv(&reports);
        assert!(csv.starts_with("epoch,loss,val_rmse,seconds\n"));
        assert_eq!(csv.lines().count(), 1 + reports.len());
    }

    #[test]
    fn grad_check_passes_for_every_neural_kind() {
        for kind in ModelKind::NEURAL {
            let r = grad_check(kind, GradCheckDims::default(), 20, 1e-5, 7).unwrap();
            assert!(r.max_rel_error < 1e-4, "{kind}: {r:?}");
            assert!(r.components > 0);
        }
    }

    #[test]
    fn grad_check_zero_loss_configuration() {
        let dims = Dims {
            vocab_size: 3,
            embed_dim: 2,
            char_hidden: 2,
            word_hidden: 2,
            mlp_hidden: 2,
        };
        let mut p = ModelParams::zeros(ModelKind::C2w2s4pt, dims).unwrap();
        p.head.b_y = 0.25;
        let input = Encoded::Words(vec![vec![1, 2], vec![0]]);
        let r = grad_check_instance(&p, &input, &DropoutMasks::none(), 0.25, 1e-5, None).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn grad_check_detects_a_corrupted_recurrent_gradient() {
        let mut rng = SplitMix64::new(11);
        let (p, input, masks, target) =
            random_instance(ModelKind::C2w2s4pt, GradCheckDims::default(), 0, &mut rng).unwrap();
        let clean = grad_check_instance(&p, &input, &masks, target, 1e-5, None).unwrap();
        assert!(clean.max_rel_error < 1e-4);
        let corrupt = |g: &mut ModelParams| {
            let u = &mut g.word_birnn.as_mut().unwrap().fwd.u_h;
            u.set(0, 0, u.get(0, 0) + 1e-2);
        };
        let bad = grad_check_instance(&p, &input, &masks, target, 1e-5, Some(&corrupt)).unwrap();
        assert!(bad.max_rel_error >= 1e-4, "{bad:?}");
        assert_eq!(bad.tensor, "word_rnn.fwd.u_h");
    }
}
