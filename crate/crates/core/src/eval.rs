//! RMSE at tweet and user level, and k-fold cross-validation including the
//! average baseline.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use rayon::prelude::*;

use crate::checkpoint::Model;
use crate::config::TrainConfig;
use crate::data::{kfold_split, FoldLevel, Trait, Tweet};
use crate::error::{Error, Result};
use crate::model::{mse_loss, ModelKind};
use crate::train::train_model;

#[derive(Debug, Clone, PartialEq)]
pub struct TweetPrediction {
    /// Index of the tweet in the evaluated corpus.
    pub index: usize,
    pub user_id: String,
    pub target: Trait,
    pub predicted: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPrediction {
    pub user_id: String,
    /// Mean of the user's tweet predictions.
    pub predicted: f64,
    pub truth: f64,
    pub tweets: usize,
}

/// `sqrt((1/T) Σ (y - ŷ)²)`
pub fn rmse_tweet(preds: &[TweetPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no tweet predictions"));
    }
    let p: Vec<f64> = preds.iter().map(|x| x.predicted).collect();
    let y: Vec<f64> = preds.iter().map(|x| x.truth).collect();
    Ok(mse_loss(&p, &y)?.sqrt())
}

/// Per-user mean prediction, in order of each user's first appearance.
/// Every tweet of a user must carry the same label.
pub fn aggregate_user(preds: &[TweetPrediction]) -> Result<Vec<UserPrediction>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut sums: Vec<(UserPrediction, f64)> = Vec::new();
    for p in preds {
        let slot = *index.entry(&p.user_id).or_insert_with(|| {
            sums.push((
                UserPrediction {
                    user_id: p.user_id.clone(),
                    predicted: 0.0,
                    truth: p.truth,
                    tweets: 0,
                },
                0.0,
            ));
            sums.len() - 1
        });
        let (u, sum) = &mut sums[slot];
        if u.truth != p.truth {
            return Err(Error::InconsistentLabels {
                user: p.user_id.clone(),
                first: u.truth,
                second: p.truth,
            });
        }
        *sum += p.predicted;
        u.tweets += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(mut u, sum)| {
            u.predicted = sum / u.tweets as f64;
            u
        })
        .collect())
}

/// `sqrt((1/U) Σ (y_user - ŷ_user)²)`
pub fn rmse_user(users: &[UserPrediction]) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::EmptyInput("no user predictions"));
    }
    let p: Vec<f64> = users.iter().map(|u| u.predicted).collect();
    let y: Vec<f64> = users.iter().map(|u| u.truth).collect();
    Ok(mse_loss(&p, &y)?.sqrt())
}

/// The constant predictor: arithmetic mean of the training scores.
pub fn average_baseline_fit(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no training scores for the average baseline"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// One score per user (the label shared by the user's tweets), in order of
/// first appearance.
pub fn user_scores(tweets: &[Tweet], target: Trait) -> Vec<f64> {
    let mut seen = std::collections::HashSet::new();
    tweets
        .iter()
        .filter(|t| seen.insert(t.user_id.as_str()))
        .map(|t| t.score(target))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub rmse: f64,
    /// Tweets (tweet level) or users (user level) in the held-out fold.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub kind: ModelKind,
    pub target: Trait,
    pub k: usize,
    pub level: FoldLevel,
    pub seed: u64,
    /// Hex digest of the training config.
    pub config_fingerprint: String,
    pub folds: Vec<FoldResult>,
    /// RMSE over the union of held-out predictions.
    pub pooled_rmse: f64,
    pub mean_fold_rmse: f64,
    pub predictions: Vec<TweetPrediction>,
}

impl CvReport {
    /// `model,trait,k,level,fold,rmse` rows, with the pooled value at fold -1.
    pub fn csv_rows(&self) -> Vec<String> {
        let prefix = format!("{},{},{},{}", self.kind, self.target, self.k, self.level);
        let mut rows: Vec<String> = self.folds.iter().map(|f| format!("{prefix},{},{}", f.fold, f.rmse)).collect();
        rows.push(format!("{prefix},-1,{}", self.pooled_rmse));
        rows
    }
}

pub const CSV_HEADER: &str = "model,trait,k,level,fold,rmse";

pub fn reports_to_csv(reports: &[CvReport]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in reports {
        for row in r.csv_rows() {
            s.push_str(&row);
            s.push('\n');
        }
    }
    s
}

/// One row per model, one column per trait (`EXT STA AGR CON OPN`), pooled
/// RMSE in each cell; traits that were not evaluated show `-`.
pub fn format_table(reports: &[CvReport]) -> String {
    let mut kinds: Vec<ModelKind> = Vec::new();
    for r in reports {
        if !kinds.contains(&r.kind) {
            kinds.push(r.kind);
        }
    }
    let mut s = format!("{:<22}", "model");
    for t in Trait::ALL {
        let _ = write!(s, " {:>8}", t.name().to_uppercase());
    }
    s.push('\n');
    for (label, pick) in [("pooled", true), ("fold-mean", false)] {
        for &kind in &kinds {
            let name = if pick { kind.to_string() } else { format!("{kind} ({label})") };
            let _ = write!(s, "{name:<22}");
            for t in Trait::ALL {
                match reports.iter().find(|r| r.kind == kind && r.target == t) {
                    Some(r) => {
                        let v = if pick { r.pooled_rmse } else { r.mean_fold_rmse };
                        let _ = write!(s, " {v:>8.4}");
                    }
                    None => {
                        let _ = write!(s, " {:>8}", "-");
                    }
                }
            }
            s.push('\n');
        }
    }
    s
}

fn fingerprint(cfg: &TrainConfig) -> String {
    let mut h = DefaultHasher::new();
    cfg.to_config_string().hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Seed for the training run of one fold.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// Called once per fold with the fold index, the training indices into the
/// corpus and the fitted model, before the held-out fold is predicted.
pub type FoldObserver<'a> = &'a (dyn Fn(usize, &[usize], &Model) + Sync);

pub fn run_cv(
    kind: ModelKind,
    corpus: &[Tweet],
    target: Trait,
    k: usize,
    level: FoldLevel,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CvReport> {
    run_cv_observed(kind, corpus, target, k, level, cfg, seed, None)
}

/// [`run_cv`] with an optional per-fold observer.
///
/// Each fold trains on the other folds only. At tweet level the folds are
/// stratified by user and scored with RMSE over tweets; at user level whole
/// users are held out and scored with RMSE over per-user mean predictions.
#[allow(clippy::too_many_arguments)]
pub fn run_cv_observed(
    kind: ModelKind,
    corpus: &[Tweet],
    target: Trait,
    k: usize,
    level: FoldLevel,
    cfg: &TrainConfig,
    seed: u64,
    observer: Option<FoldObserver<'_>>,
) -> Result<CvReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cross-validation corpus is empty"));
    }
    let users: Vec<&str> = corpus.iter().map(|t| t.user_id.as_str()).collect();
    let plan = kfold_split(&users, k, level, seed)?;

    let per_fold: Vec<Result<(FoldResult, Vec<TweetPrediction>)>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train_idx = plan.train_indices(fold);
            let test_idx = plan.test_indices(fold);
            let train: Vec<Tweet> = train_idx.iter().map(|&i| corpus[i].clone()).collect();
            let test: Vec<Tweet> = test_idx.iter().map(|&i| corpus[i].clone()).collect();
            let model = if kind == ModelKind::Average && level == FoldLevel::User {
                Model::average(target, average_baseline_fit(&user_scores(&train, target))?, cfg.clone())
            } else {
                let fold_cfg = TrainConfig {
                    seed: fold_seed(seed, fold),
                    ..cfg.clone()
                };
                train_model(kind, &train, target, &fold_cfg, None)?.0
            };
            if let Some(obs) = observer {
                obs(fold, &train_idx, &model);
            }
            let predicted = model.predict_all(&test)?;
            let preds: Vec<TweetPrediction> = test_idx
                .iter()
                .zip(predicted)
                .map(|(&i, p)| TweetPrediction {
                    index: i,
                    user_id: corpus[i].user_id.clone(),
                    target,
                    predicted: p,
                    truth: corpus[i].score(target),
                })
                .collect();
            let (rmse, count) = score(&preds, level)?;
            Ok((FoldResult { fold, rmse, count }, preds))
        })
        .collect();

    let mut folds = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(corpus.len());
    for r in per_fold {
        let (f, p) = r?;
        folds.push(f);
        predictions.extend(p);
    }
    let (pooled_rmse, _) = score(&predictions, level)?;
    let mean_fold_rmse = folds.iter().map(|f| f.rmse).sum::<f64>() / k as f64;
    predictions.sort_by_key(|p| p.index);
    Ok(CvReport {
        kind,
        target,
        k,
        level,
        seed,
        config_fingerprint: fingerprint(cfg),
        folds,
        pooled_rmse,
        mean_fold_rmse,
        predictions,
    })
}

fn score(preds: &[TweetPrediction], level: FoldLevel) -> Result<(f64, usize)> {
    match level {
        FoldLevel::Tweet => Ok((rmse_tweet(preds)?, preds.len())),
        FoldLevel::User => {
            let users = aggregate_user(preds)?;
            Ok((rmse_user(&users)?, users.len()))
        }
    }
}
