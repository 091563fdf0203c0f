//! `c2w2s4pt`: command-line front end for the trait-score regressors.
//!
//! Runtime errors exit with status 1 and usage errors with status 2.

use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use c2w2s4pt::checkpoint::Model;
use c2w2s4pt::config::TrainConfig;
use c2w2s4pt::data::{self, Dataset, FixtureSpec, FoldLevel, Signal, Trait};
use c2w2s4pt::eval;
use c2w2s4pt::model::ModelKind;
use c2w2s4pt::train::{self, GradCheckDims, EPOCH_CSV_HEADER};
use c2w2s4pt::viz::{self, ScatterFormat};

#[derive(Parser, Debug)]
#[command(name = "c2w2s4pt", version, about = "Character-to-sentence GRU regression of Big-5 trait scores from short texts")]
struct Cli {
    /// Worker threads for training and evaluation (default: available cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model on a whole dataset and write a checkpoint.
    Train(TrainArgs),
    /// k-fold cross-validation; prints a model × trait RMSE table.
    Eval(EvalArgs),
    /// Predict the trait score of texts with a trained checkpoint.
    Predict(PredictArgs),
    /// PCA scatter plot of sentence embeddings for both ends of a trait.
    Visualize(VisualizeArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset whose EXT score follows a surface signal.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TraitArg {
    Ext,
    Sta,
    Agr,
    Con,
    Opn,
}

impl From<TraitArg> for Trait {
    fn from(t: TraitArg) -> Self {
        match t {
            TraitArg::Ext => Trait::Ext,
            TraitArg::Sta => Trait::Sta,
            TraitArg::Agr => Trait::Agr,
            TraitArg::Con => Trait::Con,
            TraitArg::Opn => Trait::Opn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum KindArg {
    Average,
    C2w2s4pt,
    BigruChar,
    BigruWord,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Average => ModelKind::Average,
            KindArg::C2w2s4pt => ModelKind::C2w2s4pt,
            KindArg::BigruChar => ModelKind::BiGruChar,
            KindArg::BigruWord => ModelKind::BiGruWord,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    Tweet,
    User,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Svg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SignalArg {
    Exclamation,
    Length,
    Marker,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset TSV: user_id, ext, sta, agr, con, opn, text.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "trait", value_enum)]
    target: TraitArg,
    #[arg(long, value_enum)]
    model: KindArg,
    /// `key = value` training config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV (`epoch,loss,val_rmse,seconds`), written as training runs.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model_kind: KindArg,
    /// Traits to evaluate; repeat the flag or pass a comma-separated list.
    /// Every trait when omitted.
    #[arg(long = "trait", value_enum, value_delimiter = ',')]
    traits: Vec<TraitArg>,
    /// Number of folds (5 and 10 are the usual choices).
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value = "tweet")]
    level: LevelArg,
    /// Training config; not needed for the average baseline.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write `model,trait,k,level,fold,rmse` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["text", "stdin"])))]
struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Text to score; each line gets its own prediction.
    #[arg(long)]
    text: Option<String>,
    /// Read texts from standard input, one per line.
    #[arg(long)]
    stdin: bool,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Trait whose extremes are plotted (default: the checkpoint's trait).
    #[arg(long = "trait", value_enum)]
    target: Option<TraitArg>,
    /// Tweets per side.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Fraction of users forming each tail.
    #[arg(long, default_value_t = viz::DEFAULT_TAIL_QUANTILE)]
    quantile: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "svg")]
    format: FormatArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random instances per model kind.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Kind to check (default: every neural kind).
    #[arg(long, value_enum)]
    model_kind: Option<KindArg>,
    /// Pass/fail bound on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long)]
    users: usize,
    #[arg(long)]
    tweets_per_user: usize,
    #[arg(long, value_enum, default_value = "exclamation")]
    signal: SignalArg,
    /// Standard deviation of per-user noise on EXT.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

fn load_data(path: &Path) -> Result<Dataset> {
    let ds = data::load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    let r = &ds.report;
    eprintln!(
        "{}: parsed {} records, dropped {} empty after normalization, rejected {} lines",
        path.display(),
        r.parsed,
        r.dropped_empty,
        r.rejected.len()
    );
    for (line, why) in r.rejected.iter().take(5) {
        eprintln!("  line {line}: {why}");
    }
    if ds.tweets.is_empty() {
        bail!("{} contains no usable tweets", path.display());
    }
    Ok(ds)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let kind = ModelKind::from(a.model);
    let ds = load_data(&a.data)?;
    let mut report = match &a.report {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            writeln!(w, "{EPOCH_CSV_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let (model, _) = train::train_model_streaming(kind, &ds.tweets, a.target.into(), &cfg, None, |r| {
        eprintln!("epoch {:>4}  loss {:.6}  {:.1}s", r.epoch, r.loss, r.seconds);
        if let Some(w) = report.as_mut() {
            writeln!(w, "{}", r.csv_row()).and_then(|_| w.flush()).map_err(|e| {
                c2w2s4pt::Error::Invalid(format!("writing epoch report: {e}"))
            })?;
        }
        Ok(())
    })?;
    model.save(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let kind = ModelKind::from(a.model_kind);
    let cfg = load_config(a.config.as_deref())?;
    let level = match a.level {
        LevelArg::Tweet => FoldLevel::Tweet,
        LevelArg::User => FoldLevel::User,
    };
    let traits: Vec<Trait> = if a.traits.is_empty() {
        Trait::ALL.to_vec()
    } else {
        a.traits.iter().map(|&t| t.into()).collect()
    };
    let ds = load_data(&a.data)?;
    let mut reports = Vec::new();
    for t in traits {
        let r = eval::run_cv(kind, &ds.tweets, t, a.k, level, &cfg, a.seed)?;
        eprintln!("{kind} {t}: pooled RMSE {:.4} over {} folds", r.pooled_rmse, r.k);
        reports.push(r);
    }
    print!("{}", eval::format_table(&reports));
    if let Some(p) = &a.csv {
        std::fs::write(p, eval::reports_to_csv(&reports)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut emit = |line: &str| -> Result<()> {
        match model.predict_text(line)? {
            Some(y) => writeln!(out, "{y}")?,
            None => writeln!(out, "NA")?,
        }
        Ok(())
    };
    if let Some(text) = &a.text {
        for line in text.lines() {
            emit(line)?;
        }
    } else {
        for line in io::stdin().lock().lines() {
            emit(&line.context("reading standard input")?)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_visualize(a: VisualizeArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let target = a.target.map_or(model.target(), Trait::from);
    let ds = load_data(&a.data)?;
    let (points, pca) = viz::scatter_points(&model, &ds.tweets, target, a.n, a.quantile, a.seed)?;
    let format = match a.format {
        FormatArg::Csv => ScatterFormat::Csv,
        FormatArg::Svg => ScatterFormat::Svg,
    };
    let title = format!("{} sentence embeddings, {} extremes", model.kind(), target.name().to_uppercase());
    viz::export_scatter(&points, &a.out, format, &title)?;
    eprintln!(
        "{} points, explained variance {:.4e} / {:.4e}; wrote {}",
        points.len(),
        pca.explained_variance[0],
        pca.explained_variance[1],
        a.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let kinds: Vec<ModelKind> = match a.model_kind {
        Some(KindArg::Average) => bail!("the average baseline has no gradients to check"),
        Some(k) => vec![k.into()],
        None => ModelKind::NEURAL.to_vec(),
    };
    let mut ok = true;
    for kind in kinds {
        let r = train::grad_check(kind, GradCheckDims::default(), a.trials, a.eps, a.seed)?;
        let pass = r.max_rel_error < a.threshold;
        ok &= pass;
        println!(
            "{kind:<11} max_rel_error {:.3e}  ({} components; worst {}[{}] analytic {:.6e} numeric {:.6e})  {}",
            r.max_rel_error,
            r.components,
            r.tensor,
            r.index,
            r.analytic,
            r.numeric,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn cmd_fixture(a: FixtureArgs) -> Result<()> {
    let signal = match a.signal {
        SignalArg::Exclamation => Signal::Exclamation,
        SignalArg::Length => Signal::Length,
        SignalArg::Marker => Signal::Marker,
    };
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        bail!("--noise must be a non-negative number");
    }
    let records = data::generate_fixture(a.users, a.tweets_per_user, FixtureSpec { signal, noise: a.noise }, a.seed);
    data::save_dataset(&records, &a.out)?;
    eprintln!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Predict(a) => cmd_predict(a)?,
        Command::Visualize(a) => cmd_visualize(a)?,
        Command::Gradcheck(a) => {
            if !cmd_gradcheck(a)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Fixture(a) => cmd_fixture(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
