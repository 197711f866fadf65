use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use srl_core::autodiff::gradcheck::DEFAULT_TOLERANCE;
use srl_core::corpus::{
    load_embeddings, load_features, read_conll09, write_conll09, FeatureFile, ReadMode, SemanticGraph, Sentence,
};
use srl_core::diagnostics::pipeline_gradcheck;
use srl_core::eval::{bootstrap_significance, ho_profile, semantic_f1, subset_eval};
use srl_core::trainer::tagger::PredicateTagger;
use srl_core::trainer::{predict_all, prepare, train, train_tagger, LogEvent, TrainRun};
use srl_core::{Error, Mode, RunConfig, SrlModel};

#[derive(Parser)]
#[command(
    name = "srl",
    version,
    about = "Semantic role labeling with second-order mean-field inference"
)]
struct Cli {
    /// JSON config file; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.lr=0.002` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for gradient computation (sets `threads`).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed (sets `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (and a predicate tagger in without_predicates mode).
    Train(TrainArgs),
    /// Label a CoNLL-2009 file.
    Predict(PredictArgs),
    /// Score a system file against gold.
    Eval(EvalArgs),
    /// Check gradients of the full loss against finite differences.
    Gradcheck(GradcheckArgs),
    /// Report second-order structure statistics of a corpus.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus in CoNLL-2009 format (sets `paths.train`).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Development corpus (sets `paths.dev`).
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory (default: paths.output_dir, else ./srl-run).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Predicate tagger checkpoint (without_predicates mode; defaults to
    /// `tagger.ckpt` next to the model).
    #[arg(long)]
    tagger: Option<PathBuf>,
    /// CoNLL-2009 file to label; APRED columns are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the labeled file.
    #[arg(long)]
    output: PathBuf,
    /// Precomputed features aligned with the input.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold CoNLL-2009 file.
    #[arg(long)]
    gold: PathBuf,
    /// System output aligned with the gold file.
    #[arg(long)]
    system: PathBuf,
    /// Score labeled arcs only.
    #[arg(long)]
    no_senses: bool,
    /// Also score sentences with and without co-parent/grandparent structure.
    #[arg(long)]
    subsets: bool,
    /// Bootstrap test of `--system` against this baseline system file.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Sentences per bootstrap resample.
    #[arg(long, default_value_t = 50)]
    sample_size: usize,
    /// Write the report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Weight of the arc loss in the checked objective.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Perturb one analytic gradient entry (negative control).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Write the statistics as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Errors caused by the command line itself.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A failed numeric check that is not an internal error.
#[derive(Debug)]
struct NumericFailure(String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<NumericFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 1,
                e if e.is_numeric_failure() => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            Some(serde_json::from_str::<Value>(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?)
        }
        None => None,
    };
    let mut pairs = Vec::new();
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        pairs.push((k.trim().to_string(), v.to_string()));
    }
    if let Some(t) = cli.threads {
        pairs.push(("threads".into(), t.to_string()));
    }
    if let Some(s) = cli.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    RunConfig::from_json_with_overrides(base, &pairs).map_err(|e| Error::from(e).into())
}

fn write_config_echo(path: &Path, cfg: &RunConfig, extra: Value) -> anyhow::Result<()> {
    let body = json!({ "config": cfg, "invocation": extra });
    fs::write(path, serde_json::to_string_pretty(&body)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn echo_path(output: &Path) -> PathBuf {
    let mut p = output.as_os_str().to_owned();
    p.push(".config.json");
    PathBuf::from(p)
}

fn require_file(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.is_file() {
        return Err(Error::Corpus(srl_core::corpus::CorpusError::Io {
            path: p.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} file not found")),
        })
        .into());
    }
    Ok(())
}

fn read_gold(p: &Path, what: &str) -> anyhow::Result<Vec<(Sentence, SemanticGraph)>> {
    require_file(p, what)?;
    Ok(read_conll09(p, ReadMode::GoldPredicates)?)
}

fn maybe_features(p: Option<&PathBuf>) -> anyhow::Result<Option<FeatureFile>> {
    p.map(|p| {
        require_file(p, "feature")?;
        Ok(load_features(p)?)
    })
    .transpose()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train(a) => cmd_train(cfg, a),
        Command::Predict(a) => cmd_predict(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Gradcheck(a) => cmd_gradcheck(cfg, a),
        Command::Analyze(a) => cmd_analyze(cfg, a),
    }
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> anyhow::Result<()> {
    if a.train.is_some() {
        cfg.paths.train = a.train;
    }
    if a.dev.is_some() {
        cfg.paths.dev = a.dev;
    }
    if a.out.is_some() {
        cfg.paths.output_dir = a.out;
    }
    let train_path = cfg
        .paths
        .train
        .clone()
        .ok_or_else(|| usage("no training file (use --train or paths.train)"))?;
    let dev_path = cfg
        .paths
        .dev
        .clone()
        .ok_or_else(|| usage("no development file (use --dev or paths.dev)"))?;
    let out = cfg.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("srl-run"));
    let train_set = read_gold(&train_path, "training")?;
    let dev_set = read_gold(&dev_path, "development")?;
    let embeddings = match &cfg.paths.embeddings {
        Some(p) => {
            require_file(p, "embedding")?;
            Some(load_embeddings(p, cfg.encoder.word_dim)?)
        }
        None => None,
    };
    let train_features = maybe_features(cfg.paths.train_features.as_ref())?;
    let dev_features = maybe_features(cfg.paths.dev_features.as_ref())?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_config_echo(&out.join("config.json"), &cfg, json!({ "command": "train" }))?;

    let run = TrainRun {
        config: &cfg,
        train: &train_set,
        dev: &dev_set,
        embeddings: embeddings.as_ref(),
        train_features: train_features.as_ref(),
        dev_features: dev_features.as_ref(),
        freeze_triaffine: false,
    };
    let (model, outcome) = with_log(&out.join("train_log.jsonl"), |log| train(&run, log))?;
    model.save(&out.join("model.ckpt"), json!({ "config": cfg }))?;
    println!(
        "model: {} steps, stopped by {}, best dev F1 {}",
        outcome.steps,
        outcome.stop_reason,
        outcome
            .best
            .map_or("n/a".to_string(), |b| format!("{:.4} at step {}", b.1.f1, b.0))
    );
    if cfg.mode == Mode::WithoutPredicates {
        let (tagger, outcome) = with_log(&out.join("tagger_log.jsonl"), |log| train_tagger(&run, log))?;
        tagger.save(&out.join("tagger.ckpt"))?;
        println!(
            "tagger: {} steps, best dev predicate F1 {}",
            outcome.steps,
            outcome.best.map_or("n/a".to_string(), |b| format!("{:.4}", b.1.f1))
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Streams log events to a JSONL file while `f` runs.
fn with_log<T>(path: &Path, f: impl FnOnce(&mut dyn FnMut(&LogEvent)) -> srl_core::Result<T>) -> anyhow::Result<T> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    let mut io_err = None;
    let result = f(&mut |e: &LogEvent| {
        if io_err.is_none() {
            if let Err(err) = writeln!(w, "{}", e.to_json_line()) {
                io_err = Some(err);
            }
        }
    });
    w.flush()?;
    if let Some(e) = io_err {
        return Err(anyhow::Error::from(e).context(format!("writing {}", path.display())));
    }
    Ok(result?)
}

fn cmd_predict(cfg: RunConfig, a: PredictArgs) -> anyhow::Result<()> {
    require_file(&a.model, "model")?;
    require_file(&a.input, "input")?;
    let (model, _) = SrlModel::load(&a.model)?;
    let corpus: Vec<Sentence> = match cfg.mode {
        Mode::WithPredicates => read_conll09(&a.input, ReadMode::GoldPredicates)?
            .into_iter()
            .map(|(s, _)| s)
            .collect(),
        Mode::WithoutPredicates => {
            let raw: Vec<Sentence> = read_conll09(&a.input, ReadMode::Raw)?
                .into_iter()
                .map(|(s, _)| s)
                .collect();
            let tagger_path = a
                .tagger
                .clone()
                .unwrap_or_else(|| a.model.with_file_name("tagger.ckpt"));
            require_file(&tagger_path, "tagger")?;
            PredicateTagger::load(&tagger_path)?.tag_predicates(&raw)?
        }
    };
    let features = maybe_features(a.features.as_ref())?;
    let unlabeled: Vec<(Sentence, SemanticGraph)> = corpus
        .into_iter()
        .map(|s| {
            let n = s.len();
            (s, SemanticGraph::new(n))
        })
        .collect();
    let examples = prepare(&model, &unlabeled, features.as_ref())?;
    let predicted = predict_all(&model, &examples)?;
    write_conll09(&a.output, &predicted)?;
    write_config_echo(
        &echo_path(&a.output),
        &cfg,
        json!({ "command": "predict", "model": a.model, "input": a.input, "model_spec": model.spec }),
    )?;
    println!("labeled {} sentences -> {}", predicted.len(), a.output.display());
    Ok(())
}

fn cmd_eval(cfg: RunConfig, a: EvalArgs) -> anyhow::Result<()> {
    let gold = read_gold(&a.gold, "gold")?;
    let system = read_gold(&a.system, "system")?;
    let senses = !a.no_senses;
    let overall = semantic_f1(&gold, &system, senses)?;
    let mut report = json!({ "include_senses": senses, "overall": overall });
    let mut text = format!("overall        {overall}\n");
    if a.subsets {
        let s = subset_eval(&gold, &system, senses)?;
        text += &format!(
            "high-order     {}  [{} sentences]\nno high-order  {}  [{} sentences]\n",
            s.with_high_order, s.sentences_with, s.without_high_order, s.sentences_without
        );
        report["subsets"] = serde_json::to_value(s)?;
    }
    if let Some(base) = &a.baseline {
        let baseline = read_gold(base, "baseline")?;
        let b = bootstrap_significance(&gold, &baseline, &system, a.samples, a.sample_size, cfg.seed, senses)?;
        text += &format!(
            "bootstrap      p = {:.4}  ({} samples of {} sentences, system better in {}, ties {})\n",
            b.p_value, b.samples, a.sample_size, b.b_wins, b.ties
        );
        report["bootstrap"] = serde_json::to_value(b)?;
    }
    print!("{text}");
    if let Some(p) = &a.json {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
        write_config_echo(
            &echo_path(p),
            &cfg,
            json!({ "command": "eval", "gold": a.gold, "system": a.system }),
        )?;
    }
    Ok(())
}

fn cmd_gradcheck(cfg: RunConfig, a: GradcheckArgs) -> anyhow::Result<()> {
    let r = pipeline_gradcheck(cfg.seed, a.lambda, a.corrupt)?;
    println!("entries checked: {}", r.entries_checked);
    for (name, err) in &r.per_param {
        println!("  {name:<28} {err:.3e}");
    }
    if let Some((name, idx)) = &r.worst {
        println!("worst: {name}[{idx}]");
    }
    println!(
        "max relative error: {:.3e} (tolerance {:.0e})",
        r.max_rel_error, DEFAULT_TOLERANCE
    );
    if r.passed(DEFAULT_TOLERANCE) {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(NumericFailure(format!(
            "gradient check failed: max relative error {:.3e} at {:?}",
            r.max_rel_error, r.worst
        ))
        .into())
    }
}

fn length_bucket(n: usize) -> String {
    let lo = (n.saturating_sub(1)) / 10 * 10 + 1;
    format!("{lo}-{}", lo + 9)
}

fn cmd_analyze(cfg: RunConfig, a: AnalyzeArgs) -> anyhow::Result<()> {
    let corpus = read_gold(&a.corpus, "corpus")?;
    let (mut sib, mut cop, mut gp, mut ho) = (0, 0, 0, 0);
    let mut hist: std::collections::BTreeMap<usize, (String, usize, usize)> = Default::default();
    for (s, g) in &corpus {
        let p = ho_profile(g);
        sib += p.sib;
        cop += p.cop;
        gp += p.gp;
        ho += usize::from(p.has_high_order);
        let key = (s.len().max(1) - 1) / 10;
        let e = hist.entry(key).or_insert_with(|| (length_bucket(s.len()), 0, 0));
        e.1 += 1;
        e.2 += usize::from(p.has_high_order);
    }
    println!("sentences               {}", corpus.len());
    println!("with high-order parts   {ho}");
    println!("without                 {}", corpus.len() - ho);
    println!("sib / cop / gp          {sib} / {cop} / {gp}");
    println!("length   sentences  high-order");
    for (label, n, h) in hist.values() {
        println!("{label:<8} {n:>9}  {h:>10}");
    }
    if let Some(p) = &a.json {
        let histogram: Vec<Value> = hist
            .values()
            .map(|(l, n, h)| json!({ "lengths": l, "sentences": n, "high_order": h }))
            .collect();
        let report = json!({
            "sentences": corpus.len(),
            "high_order_sentences": ho,
            "sib": sib, "cop": cop, "gp": gp,
            "length_histogram": histogram,
        });
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
        write_config_echo(&echo_path(p), &cfg, json!({ "command": "analyze", "corpus": a.corpus }))?;
    }
    Ok(())
}
