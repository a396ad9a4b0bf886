//! Batch command-line front end for the language-identification toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
//! Failures print a single machine-parsable `error: ...` line to stderr;
//! every run prints its resolved configuration to stderr first.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use conlid::corpus::{self, DataFormat, Example, SplitSpec};
use conlid::encoder::EncoderConfig;
use conlid::evaluation::{self, ConfusionMatrix, MetricReport};
use conlid::inference::{self, LabelDist};
use conlid::model::Model;
use conlid::trainer::{self, TrainConfig, Variant};
use conlid::{Error, ErrorKind, Result};

use config::{ConfigMap, Resolver};

#[derive(Parser)]
#[command(
    name = "conlid",
    version,
    about = "Language identification over hashed character n-grams",
    disable_help_subcommand = true
)]
struct Cli {
    /// key=value file supplying defaults for any option below.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified train/test split of a labeled corpus.
    Split(SplitArgs),
    /// Cap the number of documents per language.
    Downsample(DownsampleArgs),
    /// Train a classifier and write a model file.
    Train(TrainArgs),
    /// Score one document per input line against a trained model.
    Predict(PredictArgs),
    /// Compare predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Combine two models' predictions.
    Ensemble(EnsembleArgs),
    /// Agreement rates between two prediction files.
    Agree(AgreeArgs),
    /// Five-step recovery filter over an undetermined-language bucket.
    RecoverUnd(RecoverUndArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Labeled corpus to split.
    input: PathBuf,
    /// Destination for the training portion.
    out_train: PathBuf,
    /// Destination for the held-out portion.
    out_test: PathBuf,
    /// Fraction of each language kept for training.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus encoding: jsonl or lines.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct DownsampleArgs {
    /// Labeled corpus to downsample.
    input: PathBuf,
    /// Destination for the capped corpus.
    output: PathBuf,
    /// Maximum documents kept per language.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus encoding: jsonl or lines.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled training corpus.
    input: PathBuf,
    /// Training variant: ce, scl, conlid-s, or conlid-h.
    #[arg(long)]
    variant: Option<String>,
    /// Destination model file.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate (decays linearly to zero).
    #[arg(long)]
    lr: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Memory-bank capacity.
    #[arg(long)]
    bank: Option<usize>,
    /// Minimum hard negatives per anchor before relaxing constraints.
    #[arg(long)]
    min_negatives: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Hashed n-gram table size.
    #[arg(long)]
    bucket: Option<usize>,
    /// Shortest character n-gram length.
    #[arg(long)]
    minn: Option<usize>,
    /// Longest character n-gram length.
    #[arg(long)]
    maxn: Option<usize>,
    /// Minimum frequency for a word to join the vocabulary.
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus encoding: jsonl or lines.
    #[arg(long)]
    format: Option<String>,
    /// Optional per-step loss CSV.
    #[arg(long)]
    telemetry: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<String>,
    /// Input text, one document per line.
    #[arg(long)]
    input: Option<String>,
    /// Labels reported per document.
    #[arg(long)]
    topk: Option<usize>,
    /// Destination TSV (stdout when omitted).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold labels: doc_id<TAB>label.
    #[arg(long)]
    gold: Option<String>,
    /// Predictions: doc_id<TAB>label<TAB>prob.
    #[arg(long)]
    pred: Option<String>,
    /// Optional language grouping: label<TAB>group.
    #[arg(long)]
    groups: Option<String>,
    /// Destination report (stdout when omitted).
    #[arg(long)]
    out: Option<String>,
    /// Emit the report as JSON instead of TSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Combination rule: max or avg.
    #[arg(long)]
    mode: Option<String>,
    /// First prediction TSV (max mode only).
    #[arg(long)]
    pred_a: Option<String>,
    /// Second prediction TSV (max mode only).
    #[arg(long)]
    pred_b: Option<String>,
    /// First model file.
    #[arg(long)]
    model_a: Option<String>,
    /// Second model file.
    #[arg(long)]
    model_b: Option<String>,
    /// Input text for model-based ensembling, one document per line.
    #[arg(long)]
    input: Option<String>,
    /// Destination TSV (stdout when omitted).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct AgreeArgs {
    /// First prediction TSV.
    #[arg(long)]
    pred_a: Option<String>,
    /// Second prediction TSV.
    #[arg(long)]
    pred_b: Option<String>,
    /// Language of each document: doc_id<TAB>label.
    #[arg(long)]
    langs: Option<String>,
}

#[derive(Args)]
struct RecoverUndArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<String>,
    /// Input text, one document per line.
    #[arg(long)]
    input: Option<String>,
    /// Script code the bucket was declared as (e.g. Cyrl).
    #[arg(long)]
    declared_script: Option<String>,
    /// Destination verdict TSV (stdout when omitted).
    #[arg(long)]
    out: Option<String>,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version on stdout and its own
            // `error: ...` line on stderr.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Internal => 3,
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::empty(),
    };
    let mut resolver = Resolver::new(cfg);
    match init_threads()? {
        Some(n) => resolver.note("threads", n),
        None => resolver.note("threads", "auto"),
    }
    match cli.command {
        Command::Split(args) => cmd_split(args, &mut resolver),
        Command::Downsample(args) => cmd_downsample(args, &mut resolver),
        Command::Train(args) => cmd_train(args, &mut resolver),
        Command::Predict(args) => cmd_predict(args, &mut resolver),
        Command::Evaluate(args) => cmd_evaluate(args, &mut resolver),
        Command::Ensemble(args) => cmd_ensemble(args, &mut resolver),
        Command::Agree(args) => cmd_agree(args, &mut resolver),
        Command::RecoverUnd(args) => cmd_recover_und(args, &mut resolver),
    }
}

/// Applies `CONLID_THREADS` to the global worker pool; 1 forces fully
/// sequential, deterministic execution.
fn init_threads() -> Result<Option<usize>> {
    let raw = match std::env::var("CONLID_THREADS") {
        Ok(v) => v,
        Err(std::env::VarError::NotPresent) => return Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            return Err(Error::Config("CONLID_THREADS is not valid UTF-8".into()))
        }
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            Error::Config(format!(
                "CONLID_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    Ok(Some(n))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_format(name: &str) -> Result<DataFormat> {
    match name {
        "jsonl" => Ok(DataFormat::Jsonl),
        "lines" => Ok(DataFormat::LabeledLines),
        other => Err(Error::Config(format!(
            "unknown format {other:?} (expected jsonl or lines)"
        ))),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .map_err(io_err(path))
}

/// Opens `path` for writing, or stdout when no path was given.
fn open_output(path: Option<&str>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(Path::new(p)))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn write_examples(path: &Path, examples: &[Example], format: DataFormat) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        match format {
            DataFormat::Jsonl => {
                serde_json::to_writer(&mut w, ex)
                    .map_err(|e| io_err(path)(io::Error::other(e)))?;
                w.write_all(b"\n").map_err(io_err(path))?;
            }
            DataFormat::LabeledLines => {
                writeln!(w, "__label__{} {}", ex.label, ex.text).map_err(io_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

fn cmd_split(args: SplitArgs, r: &mut Resolver) -> Result<()> {
    let fraction = r.resolve("fraction", args.fraction, 0.85)?;
    let seed = r.resolve("seed", args.seed, 0)?;
    let format = parse_format(&r.resolve("format", args.format, "jsonl".to_string())?)?;
    r.note("input", args.input.display());
    r.note("out-train", args.out_train.display());
    r.note("out-test", args.out_test.display());
    r.print();

    let (dataset, skipped) = corpus::load_dataset(&args.input, format)?;
    let spec = SplitSpec {
        train_fraction: fraction,
        seed,
    };
    let (train, test) = corpus::split(&dataset, &spec)?;
    write_examples(&args.out_train, &train.examples, format)?;
    write_examples(&args.out_test, &test.examples, format)?;
    eprintln!(
        "split: {} train / {} test documents ({skipped} malformed skipped)",
        train.len(),
        test.len()
    );
    Ok(())
}

fn cmd_downsample(args: DownsampleArgs, r: &mut Resolver) -> Result<()> {
    let cap = r.resolve_required("cap", args.cap)?;
    let seed = r.resolve("seed", args.seed, 0)?;
    let format = parse_format(&r.resolve("format", args.format, "jsonl".to_string())?)?;
    r.note("input", args.input.display());
    r.note("output", args.output.display());
    r.print();

    let (dataset, skipped) = corpus::load_dataset(&args.input, format)?;
    let capped = corpus::downsample(&dataset, cap, seed)?;
    write_examples(&args.output, &capped.examples, format)?;
    eprintln!(
        "downsample: kept {} of {} documents ({skipped} malformed skipped)",
        capped.len(),
        dataset.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, r: &mut Resolver) -> Result<()> {
    let variant = Variant::parse(&r.resolve_required("variant", args.variant)?)?;
    let out = r.resolve_required("out", args.out)?;
    let mut train_cfg = TrainConfig::for_variant(variant);
    train_cfg.batch_size = r.resolve("batch", args.batch, train_cfg.batch_size)?;
    train_cfg.epochs = r.resolve("epochs", args.epochs, train_cfg.epochs)?;
    train_cfg.lr0 = r.resolve("lr", args.lr, train_cfg.lr0)?;
    train_cfg.loss.tau = r.resolve("tau", args.tau, train_cfg.loss.tau)?;
    train_cfg.loss.bank_size = r.resolve("bank", args.bank, train_cfg.loss.bank_size)?;
    train_cfg.loss.min_negatives =
        r.resolve("min-negatives", args.min_negatives, train_cfg.loss.min_negatives)?;
    train_cfg.shuffle_seed = r.resolve("seed", args.seed, 0)?;

    let defaults = EncoderConfig::default();
    let enc = EncoderConfig {
        dim: r.resolve("dim", args.dim, defaults.dim)?,
        bucket: r.resolve("bucket", args.bucket, defaults.bucket)?,
        minn: r.resolve("minn", args.minn, defaults.minn)?,
        maxn: r.resolve("maxn", args.maxn, defaults.maxn)?,
        min_count: r.resolve("min-count", args.min_count, defaults.min_count)?,
        word_ngrams: defaults.word_ngrams,
    };
    let format = parse_format(&r.resolve("format", args.format, "jsonl".to_string())?)?;
    let telemetry = r.resolve_optional("telemetry", args.telemetry)?;
    r.note("input", args.input.display());
    r.print();

    let (dataset, skipped) = corpus::load_dataset(&args.input, format)?;
    if skipped > 0 {
        eprintln!("train: skipped {skipped} malformed records");
    }
    let outcome = trainer::train(&dataset, &enc, &train_cfg)?;
    outcome.model.save(Path::new(&out))?;
    if let Some(path) = telemetry {
        let file = File::create(&path).map_err(io_err(Path::new(&path)))?;
        let mut w = BufWriter::new(file);
        trainer::write_telemetry_csv(&mut w, &outcome.telemetry)
            .and_then(|()| w.flush())
            .map_err(io_err(Path::new(&path)))?;
    }
    let last = outcome.telemetry.last();
    eprintln!(
        "train: {} examples, {} classes, {} steps, final loss {}",
        dataset.len(),
        outcome.model.num_classes(),
        outcome.telemetry.len(),
        last.map_or("n/a".to_string(), |row| row.total.to_string())
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs, r: &mut Resolver) -> Result<()> {
    let model_path = r.resolve_required("model", args.model)?;
    let input = r.resolve_required("input", args.input)?;
    let topk = r.resolve("topk", args.topk, 1)?;
    let out = r.resolve_optional("out", args.out)?;
    r.print();

    if topk == 0 {
        return Err(Error::Config("topk must be at least 1".into()));
    }
    let model = Model::load(Path::new(&model_path))?;
    let lines = read_lines(Path::new(&input))?;

    let per_doc: Vec<Result<Vec<(String, String, f64)>>> = lines
        .par_iter()
        .enumerate()
        .map(|(doc_id, text)| {
            let preds = inference::predict_topk(&model, text, topk)?;
            Ok(preds
                .into_iter()
                .map(|p| (doc_id.to_string(), p.label, p.prob))
                .collect())
        })
        .collect();

    let mut rows = Vec::with_capacity(lines.len());
    for doc in per_doc {
        rows.extend(doc?);
    }
    let mut w = open_output(out.as_deref())?;
    inference::write_predictions(&mut w, &rows)
        .and_then(|()| w.flush())
        .map_err(io_err(Path::new(&input)))?;
    eprintln!("predict: {} documents scored", lines.len());
    Ok(())
}

/// Collapses a prediction file to one row per document (highest
/// probability, earliest row winning ties), preserving first-appearance
/// order.
fn top1_by_doc(rows: &[(String, String, f64)]) -> Vec<(String, String, f64)> {
    let mut order: Vec<&str> = Vec::new();
    let mut best: BTreeMap<&str, (&str, f64)> = BTreeMap::new();
    for (id, label, prob) in rows {
        match best.get_mut(id.as_str()) {
            None => {
                order.push(id);
                best.insert(id, (label, *prob));
            }
            Some(cur) => {
                if *prob > cur.1 {
                    *cur = (label, *prob);
                }
            }
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (label, prob) = best[id];
            (id.to_string(), label.to_string(), prob)
        })
        .collect()
}

fn doc_sets_match(a: &BTreeMap<String, (String, f64)>, b: &BTreeMap<String, (String, f64)>) -> bool {
    a.len() == b.len() && a.keys().eq(b.keys())
}

#[derive(Serialize)]
struct GroupSummary {
    languages: usize,
    mean_f1: f64,
    mean_fpr: f64,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    #[serde(flatten)]
    metrics: &'a MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<BTreeMap<String, GroupSummary>>,
}

fn read_label_groups(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut groups = BTreeMap::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, group)) = line.split_once('\t') else {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "expected label<TAB>group".into(),
            });
        };
        groups.insert(label.to_string(), group.to_string());
    }
    Ok(groups)
}

fn group_summaries(
    report: &MetricReport,
    groups: &BTreeMap<String, String>,
) -> BTreeMap<String, GroupSummary> {
    let mut agg: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for (lang, m) in &report.per_language {
        let group = groups
            .get(lang)
            .map(String::as_str)
            .unwrap_or(evaluation::UNGROUPED);
        let entry = agg.entry(group).or_insert((0, 0.0, 0.0));
        entry.0 += 1;
        entry.1 += m.f1;
        entry.2 += m.fpr;
    }
    agg.into_iter()
        .map(|(group, (n, f1, fpr))| {
            (
                group.to_string(),
                GroupSummary {
                    languages: n,
                    mean_f1: f1 / n as f64,
                    mean_fpr: fpr / n as f64,
                },
            )
        })
        .collect()
}

fn cmd_evaluate(args: EvaluateArgs, r: &mut Resolver) -> Result<()> {
    let gold_path = r.resolve_required("gold", args.gold)?;
    let pred_path = r.resolve_required("pred", args.pred)?;
    let groups_path = r.resolve_optional("groups", args.groups)?;
    let out = r.resolve_optional("out", args.out)?;
    r.note("json", args.json);
    r.print();

    let gold_rows = inference::read_gold(Path::new(&gold_path))?;
    let mut golds: BTreeMap<String, (String, f64)> = BTreeMap::new();
    for (i, (id, label)) in gold_rows.iter().enumerate() {
        if golds.insert(id.clone(), (label.clone(), 0.0)).is_some() {
            return Err(Error::Record {
                path: PathBuf::from(&gold_path),
                line: i + 1,
                detail: format!("duplicate doc_id {id:?}"),
            });
        }
    }
    let pred_rows = inference::read_predictions(Path::new(&pred_path))?;
    let preds: BTreeMap<String, (String, f64)> = top1_by_doc(&pred_rows)
        .into_iter()
        .map(|(id, label, prob)| (id, (label, prob)))
        .collect();
    if !doc_sets_match(&golds, &preds) {
        return Err(Error::DocSetMismatch {
            left: PathBuf::from(&gold_path),
            right: PathBuf::from(&pred_path),
        });
    }

    let pairs: Vec<(&str, &str)> = golds
        .iter()
        .map(|(id, (gold, _))| (gold.as_str(), preds[id].0.as_str()))
        .collect();
    let cm = ConfusionMatrix::from_pairs(pairs);
    let report = evaluation::metrics(&cm)?;
    let groups = match groups_path {
        Some(p) => Some(group_summaries(&report, &read_label_groups(Path::new(&p))?)),
        None => None,
    };

    let out_path = out.as_deref().map(PathBuf::from);
    let mut w = open_output(out.as_deref())?;
    let sink = out_path.unwrap_or_else(|| PathBuf::from("<stdout>"));
    if args.json {
        let full = EvalReport {
            metrics: &report,
            groups,
        };
        serde_json::to_writer_pretty(&mut w, &full)
            .map_err(|e| io_err(&sink)(io::Error::other(e)))?;
        writeln!(w).map_err(io_err(&sink))?;
    } else {
        evaluation::write_metric_report_tsv(&mut w, &report).map_err(io_err(&sink))?;
        if let Some(groups) = &groups {
            writeln!(w).map_err(io_err(&sink))?;
            writeln!(w, "group\tlanguages\tmean_f1\tmean_fpr").map_err(io_err(&sink))?;
            for (name, g) in groups {
                writeln!(w, "{name}\t{}\t{}\t{}", g.languages, g.mean_f1, g.mean_fpr)
                    .map_err(io_err(&sink))?;
            }
        }
    }
    w.flush().map_err(io_err(&sink))?;
    drop(w);

    if out.is_some() {
        println!("macro_f1\t{}", report.macro_f1);
    }
    eprintln!(
        "evaluate: {} documents, {} languages, macro F1 {:.4}",
        golds.len(),
        report.per_language.len(),
        report.macro_f1
    );
    Ok(())
}

/// Max-rule combination of two top-1 rows; the first argument wins ties.
fn max_rule<'a>(a: &'a (String, f64), b: &'a (String, f64)) -> &'a (String, f64) {
    if a.1 >= b.1 {
        a
    } else {
        b
    }
}

fn cmd_ensemble(args: EnsembleArgs, r: &mut Resolver) -> Result<()> {
    let mode = r.resolve_required("mode", args.mode)?;
    let pred_a = r.resolve_optional("pred-a", args.pred_a)?;
    let pred_b = r.resolve_optional("pred-b", args.pred_b)?;
    let model_a = r.resolve_optional("model-a", args.model_a)?;
    let model_b = r.resolve_optional("model-b", args.model_b)?;
    let input = r.resolve_optional("input", args.input)?;
    let out = r.resolve_optional("out", args.out)?;
    r.print();

    if mode != "max" && mode != "avg" {
        return Err(Error::Config(format!(
            "unknown ensemble mode {mode:?} (expected max or avg)"
        )));
    }
    let from_preds = pred_a.is_some() || pred_b.is_some();
    let from_models = model_a.is_some() || model_b.is_some() || input.is_some();
    if from_preds && from_models {
        return Err(Error::Config(
            "pass either --pred-a/--pred-b or --model-a/--model-b with --input, not both".into(),
        ));
    }

    let rows = if from_preds {
        let (Some(pa), Some(pb)) = (&pred_a, &pred_b) else {
            return Err(Error::Config("both --pred-a and --pred-b are required".into()));
        };
        if mode == "avg" {
            return Err(Error::Config(
                "avg needs full distributions; pass --model-a/--model-b with --input".into(),
            ));
        }
        ensemble_from_files(Path::new(pa), Path::new(pb))?
    } else {
        let (Some(ma), Some(mb), Some(input)) = (&model_a, &model_b, &input) else {
            return Err(Error::Config(
                "pass either --pred-a/--pred-b or --model-a/--model-b with --input".into(),
            ));
        };
        ensemble_from_models(Path::new(ma), Path::new(mb), Path::new(input), &mode)?
    };

    let mut w = open_output(out.as_deref())?;
    inference::write_predictions(&mut w, &rows)
        .and_then(|()| w.flush())
        .map_err(io_err(Path::new(out.as_deref().unwrap_or("<stdout>"))))?;
    eprintln!("ensemble: {} documents combined ({mode} rule)", rows.len());
    Ok(())
}

fn ensemble_from_files(path_a: &Path, path_b: &Path) -> Result<Vec<(String, String, f64)>> {
    let rows_a = top1_by_doc(&inference::read_predictions(path_a)?);
    let rows_b = top1_by_doc(&inference::read_predictions(path_b)?);
    let by_id_b: BTreeMap<String, (String, f64)> = rows_b
        .into_iter()
        .map(|(id, label, prob)| (id, (label, prob)))
        .collect();
    if rows_a.len() != by_id_b.len()
        || rows_a.iter().any(|(id, _, _)| !by_id_b.contains_key(id))
    {
        return Err(Error::DocSetMismatch {
            left: path_a.to_path_buf(),
            right: path_b.to_path_buf(),
        });
    }
    Ok(rows_a
        .into_iter()
        .map(|(id, label, prob)| {
            let a = (label, prob);
            let winner = max_rule(&a, &by_id_b[&id]).clone();
            (id, winner.0, winner.1)
        })
        .collect())
}

fn ensemble_from_models(
    path_a: &Path,
    path_b: &Path,
    input: &Path,
    mode: &str,
) -> Result<Vec<(String, String, f64)>> {
    let model_a = Model::load(path_a)?;
    let model_b = Model::load(path_b)?;
    let lines = read_lines(input)?;
    let avg = mode == "avg";
    let combined: Vec<Result<(String, f64)>> = lines
        .par_iter()
        .map(|text| {
            let da: LabelDist = model_a.predict_dist(text);
            let db = model_b.predict_dist(text);
            if avg {
                inference::ensemble_avg(&da, &db)
            } else {
                inference::ensemble_max(&da, &db)
            }
        })
        .collect();
    combined
        .into_iter()
        .enumerate()
        .map(|(doc_id, res)| res.map(|(label, prob)| (doc_id.to_string(), label, prob)))
        .collect()
}

fn cmd_agree(args: AgreeArgs, r: &mut Resolver) -> Result<()> {
    let pred_a = r.resolve_required("pred-a", args.pred_a)?;
    let pred_b = r.resolve_required("pred-b", args.pred_b)?;
    let langs_path = r.resolve_required("langs", args.langs)?;
    r.print();

    let a: BTreeMap<String, (String, f64)> =
        top1_by_doc(&inference::read_predictions(Path::new(&pred_a))?)
            .into_iter()
            .map(|(id, label, prob)| (id, (label, prob)))
            .collect();
    let b: BTreeMap<String, (String, f64)> =
        top1_by_doc(&inference::read_predictions(Path::new(&pred_b))?)
            .into_iter()
            .map(|(id, label, prob)| (id, (label, prob)))
            .collect();
    let langs: BTreeMap<String, (String, f64)> = inference::read_gold(Path::new(&langs_path))?
        .into_iter()
        .map(|(id, label)| (id, (label, 0.0)))
        .collect();
    if !doc_sets_match(&a, &b) {
        return Err(Error::DocSetMismatch {
            left: PathBuf::from(&pred_a),
            right: PathBuf::from(&pred_b),
        });
    }
    if !doc_sets_match(&a, &langs) {
        return Err(Error::DocSetMismatch {
            left: PathBuf::from(&pred_a),
            right: PathBuf::from(&langs_path),
        });
    }

    let ids: Vec<&String> = a.keys().collect();
    let labels_a: Vec<String> = ids.iter().map(|id| a[*id].0.clone()).collect();
    let labels_b: Vec<String> = ids.iter().map(|id| b[*id].0.clone()).collect();
    let doc_langs: Vec<String> = ids.iter().map(|id| langs[*id].0.clone()).collect();
    let (macro_avg, micro) = evaluation::agreement(&labels_a, &labels_b, &doc_langs)?;
    println!("agreement_macro\t{macro_avg}");
    println!("agreement_micro\t{micro}");
    eprintln!(
        "agree: {} documents, macro {macro_avg:.4}, micro {micro:.4}",
        ids.len()
    );
    Ok(())
}

fn cmd_recover_und(args: RecoverUndArgs, r: &mut Resolver) -> Result<()> {
    let model_path = r.resolve_required("model", args.model)?;
    let input = r.resolve_required("input", args.input)?;
    let script = r.resolve_required("declared-script", args.declared_script)?;
    let out = r.resolve_optional("out", args.out)?;
    r.print();

    let model = Model::load(Path::new(&model_path))?;
    let lines = read_lines(Path::new(&input))?;
    let verdicts: Vec<(inference::RecoveryVerdict, inference::Prediction)> = lines
        .par_iter()
        .map(|text| {
            (
                inference::recover_und(&model, text, &script),
                inference::predict(&model, text),
            )
        })
        .collect();

    let sink = PathBuf::from(out.as_deref().unwrap_or("<stdout>"));
    let mut w = open_output(out.as_deref())?;
    let mut accepted = 0usize;
    for (doc_id, (verdict, pred)) in verdicts.iter().enumerate() {
        if verdict.accepted {
            accepted += 1;
        }
        let failed = if verdict.failed_steps.is_empty() {
            "-".to_string()
        } else {
            verdict
                .failed_steps
                .iter()
                .map(u8::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(
            w,
            "{doc_id}\t{}\t{failed}\t{}\t{}",
            verdict.accepted, pred.label, pred.prob
        )
        .map_err(io_err(&sink))?;
    }
    w.flush().map_err(io_err(&sink))?;
    eprintln!("recover-und: accepted {accepted}/{} documents", lines.len());
    Ok(())
}
