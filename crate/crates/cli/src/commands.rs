//! One handler per subcommand, plus the shared file plumbing.
//!
//! Handlers read their inputs fully, compute in memory, and only then create
//! output files, so a failed invocation never leaves half-written artifacts
//! behind (a rerun with the same inputs always rewrites identical bytes).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;

use spl_core::corpus::{generate_target_set, generate_web_corpus, CorpusSpec};
use spl_core::eval::{class_distribution, evaluate_model, model_mean_ap, EvalReport};
use spl_core::model::{
    predict, train, AnyModel, Checkpoint, LinearSoftmaxModel, MlpModel, TrainConfig,
};
use spl_core::pipeline::{
    canonicalize_labels, examples_with_pseudo_labels, examples_with_true_labels,
    prepare_seed_context, run_arm_with_model, summarize_arm, sweep_scr, Arm, ComparisonReport,
    ExperimentConfig, SeedContext, SeedSummary,
};
use spl_core::record::{read_jsonl, write_jsonl, ClassCount, ClipRecord};
use spl_core::relabel::{
    relabel, relabel_baseline, ConfusionMatrix, SplLabelSpace, StrategyConfig, StrategyKind,
};
use spl_core::seed::{derive_seed, stage};

use crate::error::CliError;

/// The full strategy lineup run by `experiment` unless overridden.
const DEFAULT_STRATEGIES: &str = "spl,spl-m:2,spl-d:2,spl-b,weak-label,teacher-pred,agreement-filter";

// ---------------------------------------------------------------------------
// File plumbing
// ---------------------------------------------------------------------------

fn format_err(path: &Path, err: impl std::fmt::Display) -> CliError {
    CliError::Format(format!("{}: {err}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| format_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| format_err(path, e))
}

fn read_records(path: &Path) -> Result<Vec<ClipRecord>, CliError> {
    read_jsonl(open(path)?).map_err(|e| format_err(path, e))
}

fn write_records(path: &Path, records: &[ClipRecord]) -> Result<(), CliError> {
    write_jsonl(create(path)?, records).map_err(|e| format_err(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| format_err(path, e))
}

/// Writes a JSON document plus a trailing newline. Machine artifacts are
/// compact (one line); configs and reports are pretty-printed.
fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), CliError> {
    let json = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .map_err(|e| CliError::Internal(format!("serializing {}: {e}", path.display())))?;
    let mut out = create(path)?;
    out.write_all(json.as_bytes())
        .and_then(|()| out.write_all(b"\n"))
        .and_then(|()| out.flush())
        .map_err(|e| format_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| format_err(path, e))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::read_json(open(path)?).map_err(|e| format_err(path, e))
}

fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CliError> {
    checkpoint.write_json(create(path)?).map_err(|e| format_err(path, e))
}

fn feature_dim_of(path: &Path, records: &[ClipRecord]) -> Result<usize, CliError> {
    records
        .first()
        .map(|r| r.features.len())
        .ok_or_else(|| format_err(path, "no records"))
}

// ---------------------------------------------------------------------------
// Flag parsing shared by several subcommands
// ---------------------------------------------------------------------------

/// Parses `kind` or `kind:k`, e.g. `spl-b` or `spl-m:4`.
pub fn parse_strategy(text: &str) -> Result<StrategyConfig, CliError> {
    let (name, budget) = match text.split_once(':') {
        Some((name, budget)) => (name, Some(budget)),
        None => (text, None),
    };
    let kind = StrategyKind::ALL
        .into_iter()
        .find(|kind| kind.as_str() == name)
        .ok_or_else(|| {
            let names: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.as_str()).collect();
            CliError::Usage(format!(
                "unknown strategy {text:?}; expected one of {} (budgeted kinds take a :k suffix, e.g. spl-m:4)",
                names.join(", ")
            ))
        })?;
    match budget {
        Some(budget) => {
            let k: usize = budget.parse().map_err(|_| {
                CliError::Usage(format!("strategy budget must be a positive integer, got {budget:?}"))
            })?;
            Ok(StrategyConfig::with_budget(kind, k))
        }
        None => Ok(StrategyConfig::new(kind)),
    }
}

fn class_count(n: usize) -> Result<ClassCount, CliError> {
    ClassCount::new(n).map_err(CliError::from)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Output is JSONL, one record per line:
  {\"clip_id\", \"video_id\", \"weak_label\", \"features\", \"true_label\"}
The generating spec is saved alongside as <output stem>.spec.json.")]
pub struct SimulateArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Feature vector length.
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    /// Web videos generated per class.
    #[arg(long, default_value_t = 100)]
    pub videos_per_class: usize,
    /// Clips cut from each web video.
    #[arg(long, default_value_t = 10)]
    pub clips_per_video: usize,
    /// Probability that a clip depicts a related class instead of its
    /// video's class.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// JSON file holding an n-by-n row-stochastic matrix with a zero
    /// diagonal: row q is the distribution a noisy clip of class q is drawn
    /// from. Defaults to the two nearest prototypes, equally weighted.
    #[arg(long, value_name = "PATH")]
    pub relatedness: Option<PathBuf>,
    /// Distance of every class prototype from the origin.
    #[arg(long, default_value_t = 1.0)]
    pub prototype_separation: f64,
    /// Standard deviation of the isotropic feature noise.
    #[arg(long, default_value_t = 0.35)]
    pub noise_std: f64,
    /// Make class 0 a cleaner background class (noise rate 0.1 * p).
    #[arg(long)]
    pub background_mode: bool,
    /// Seed for the class prototype directions; defaults to --seed. Corpora
    /// meant to share geometry must share this value.
    #[arg(long)]
    pub prototype_seed: Option<u64>,
    /// Seed for clip sampling.
    #[arg(long)]
    pub seed: u64,
    /// Generate a clean set with this many clips per class (weak label ==
    /// true label, no temporal noise) instead of a noisy web corpus.
    #[arg(long, value_name = "CLIPS_PER_CLASS")]
    pub clean: Option<usize>,
    /// Where to write the spec JSON; defaults to the output stem plus .spec.json.
    #[arg(long, value_name = "PATH")]
    pub spec_out: Option<PathBuf>,
    /// Output JSONL path.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let relatedness = match &args.relatedness {
        Some(path) => Some(read_json(path)?),
        None => None,
    };
    let spec = CorpusSpec {
        n: class_count(args.n)?,
        feature_dim: args.feature_dim,
        videos_per_class: args.videos_per_class,
        clips_per_video: args.clips_per_video,
        temporal_noise_p: args.p,
        relatedness,
        prototype_separation: args.prototype_separation,
        noise_std: args.noise_std,
        background_mode: args.background_mode,
        prototype_seed: args.prototype_seed.unwrap_or(args.seed),
        seed: args.seed,
    };
    let corpus = match args.clean {
        Some(clips_per_class) => generate_target_set(&spec, clips_per_class, args.seed)?,
        None => generate_web_corpus(&spec)?,
    };
    write_records(&args.output, &corpus.records)?;
    let spec_path = args
        .spec_out
        .clone()
        .unwrap_or_else(|| args.output.with_extension("spec.json"));
    write_json(&spec_path, &corpus.spec, true)?;
    println!(
        "wrote {} records to {} (spec: {})",
        corpus.records.len(),
        args.output.display(),
        spec_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// teach
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Input is a clip-record JSONL with true_label on every record. Output is a
single-document JSON checkpoint tagged \"model_kind\": \"linear-softmax\".")]
pub struct TeachArgs {
    /// Input JSONL of records with true labels.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Number of classes.
    #[arg(long)]
    pub n: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    /// Passes over the training set.
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Seed for parameter initialization and epoch shuffling.
    #[arg(long)]
    pub seed: u64,
    /// Output checkpoint path (JSON).
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn teach(args: &TeachArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let feature_dim = feature_dim_of(&args.input, &records)?;
    let examples = examples_with_true_labels(&records)?;
    let mut model = LinearSoftmaxModel::init(args.n, feature_dim, args.seed)?;
    let cfg = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        shuffle: true,
    };
    let report = train(&mut model, &examples, &cfg)?;
    write_checkpoint(
        &args.output,
        &Checkpoint {
            model: model.into(),
            seed: args.seed,
            train_config: Some(cfg),
        },
    )?;
    println!(
        "trained on {} examples for {} epochs; final loss {:.6}",
        examples.len(),
        args.epochs,
        report.final_loss
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Copies the input JSONL to the output with teacher_pred set on every record.")]
pub struct InferArgs {
    /// Input JSONL of records to annotate.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Model checkpoint whose predictions to record.
    #[arg(long)]
    pub model: PathBuf,
    /// Output JSONL path.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn infer(args: &InferArgs) -> Result<(), CliError> {
    let mut records = read_records(&args.input)?;
    let checkpoint = read_checkpoint(&args.model)?;
    for record in &mut records {
        record.teacher_pred = Some(predict(&checkpoint.model, &record.features)?);
    }
    write_records(&args.output, &records)?;
    println!(
        "annotated {} records with {} predictions",
        records.len(),
        checkpoint.model.kind()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// confusion
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Output CSV: a header of column class ids, then one row per weak-label class.
Rows are weak labels, columns are teacher predictions.")]
pub struct ConfusionArgs {
    /// Input JSONL of records with teacher predictions.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Number of classes.
    #[arg(long)]
    pub n: usize,
    /// Output CSV path.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn confusion(args: &ConfusionArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let matrix = ConfusionMatrix::from_records(&records, class_count(args.n)?)?;
    matrix.write_csv(create(&args.output)?)?;
    if matrix.total() > 0 {
        let ratio = matrix.noise_ratio()?;
        println!(
            "{n}x{n} matrix over {} samples; off-diagonal ratio {ratio:.4}",
            matrix.total(),
            n = args.n
        );
    } else {
        println!("{n}x{n} matrix over 0 samples", n = args.n);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// labelspace
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Input is a confusion CSV as written by `spl confusion`. Output is a JSON
document mapping every (weak, teacher) cell to a pseudo-label class or to
\"discard\", with the samples-covered ratio (scr) of the selection.")]
pub struct LabelspaceArgs {
    /// Input confusion CSV.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Strategy name, with a :k budget where applicable (spl, spl-m:K,
    /// spl-d:K, spl-b).
    #[arg(long)]
    pub strategy: String,
    /// Output JSON path.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn labelspace(args: &LabelspaceArgs) -> Result<(), CliError> {
    let matrix = ConfusionMatrix::read_csv(open(&args.input)?)?;
    let strategy = parse_strategy(&args.strategy)?;
    let space = SplLabelSpace::build(&matrix, strategy)?;
    write_json(&args.output, &space, false)?;
    println!(
        "{}: {} classes over n={}, scr {:.4}",
        strategy.label(),
        space.num_classes(),
        space.n(),
        space.scr()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// relabel
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Copies records to the output with pseudo_label set; records in discarded
cells (spl-d) or dropped by agreement filtering are omitted. SPL strategies
need a label space built by `spl labelspace`; baselines (weak-label,
teacher-pred, agreement-filter) take --strategy and --n directly.")]
pub struct RelabelArgs {
    /// Input JSONL of records with teacher predictions (weak-label relabeling
    /// works without them).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Label space JSON built by `spl labelspace`.
    #[arg(long, value_name = "PATH")]
    pub space: Option<PathBuf>,
    /// Baseline strategy name (weak-label, teacher-pred, agreement-filter).
    #[arg(long)]
    pub strategy: Option<String>,
    /// Number of classes (required with --strategy).
    #[arg(long)]
    pub n: Option<usize>,
    /// Output JSONL path.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn relabel_records(args: &RelabelArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let relabeled = match (&args.space, &args.strategy) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("pass either --space or --strategy, not both".into()))
        }
        (None, None) => {
            return Err(CliError::Usage("one of --space or --strategy is required".into()))
        }
        (Some(path), None) => {
            let space: SplLabelSpace = read_json(path)?;
            relabel(&records, &space)?
        }
        (None, Some(text)) => {
            let strategy = parse_strategy(text)?;
            if strategy.kind.uses_label_space() {
                return Err(CliError::Usage(format!(
                    "strategy {} relabels through a label space; build one with `spl labelspace` and pass --space",
                    strategy.label()
                )));
            }
            let n = args
                .n
                .ok_or_else(|| CliError::Usage("--n is required with --strategy".into()))?;
            let n = class_count(n)?;
            strategy.validate(n)?;
            relabel_baseline(&records, strategy.kind, n)?
        }
    };
    write_records(&args.output, &relabeled)?;
    println!(
        "relabeled {} of {} records ({} discarded)",
        relabeled.len(),
        records.len(),
        records.len() - relabeled.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Output CSV has a `class_id,count` header and one row per pseudo-label class.
--json-out additionally writes the distribution summary (median count,
head/tail class split) as JSON.")]
pub struct StatsArgs {
    /// Input JSONL of relabeled records (pseudo_label set).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Size of the pseudo-label space.
    #[arg(long)]
    pub num_classes: usize,
    /// Output CSV path.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the distribution summary as JSON.
    #[arg(long, value_name = "PATH")]
    pub json_out: Option<PathBuf>,
}

pub fn stats(args: &StatsArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let dist = class_distribution(&records, args.num_classes)?;
    let mut out = create(&args.output)?;
    let mut csv = String::from("class_id,count\n");
    for (class_id, count) in dist.class_counts.iter().enumerate() {
        csv.push_str(&format!("{class_id},{count}\n"));
    }
    out.write_all(csv.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| format_err(&args.output, e))?;
    if let Some(path) = &args.json_out {
        write_json(path, &dist, true)?;
    }
    println!(
        "{} samples over {} classes; median count {}, {} head / {} tail",
        dist.total, dist.num_classes, dist.median_count, dist.head_classes, dist.tail_classes
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Trains a fresh tanh-MLP student on the records' pseudo-labels. Labels are
renumbered to first-appearance order before training, so label spaces that
induce the same sample partition train bit-identical students. Output is a
JSON checkpoint tagged \"model_kind\": \"mlp\".")]
pub struct PretrainArgs {
    /// Input JSONL of relabeled records (pseudo_label set).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Size of the pseudo-label space (the student head width).
    #[arg(long)]
    pub num_classes: usize,
    /// Hidden-layer width.
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.3)]
    pub learning_rate: f64,
    /// Passes over the training set.
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Seed for parameter initialization and epoch shuffling.
    #[arg(long)]
    pub seed: u64,
    /// Output checkpoint path (JSON).
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn pretrain(args: &PretrainArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let feature_dim = feature_dim_of(&args.input, &records)?;
    let mut examples = examples_with_pseudo_labels(&records)?;
    canonicalize_labels(&mut examples);
    let mut model = MlpModel::init(args.num_classes, feature_dim, args.hidden_dim, args.seed)?;
    let cfg = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        shuffle: true,
    };
    let report = train(&mut model, &examples, &cfg)?;
    write_checkpoint(
        &args.output,
        &Checkpoint {
            model: model.into(),
            seed: args.seed,
            train_config: Some(cfg),
        },
    )?;
    println!(
        "pretrained on {} examples over {} pseudo-classes; final loss {:.6}",
        examples.len(),
        args.num_classes,
        report.final_loss
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Continues training a checkpoint on the records' true labels. --swap-head
replaces a pretrained MLP's output layer with a freshly seeded one first
(the usual move from pseudo-label space back to the real classes). --scratch
skips pretraining entirely and fine-tunes a freshly initialized student.")]
pub struct FinetuneArgs {
    /// Input JSONL of records with true labels.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Student checkpoint to start from.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Replace the head with a fresh one of this many classes.
    #[arg(long, value_name = "N")]
    pub swap_head: Option<usize>,
    /// Seed for the replacement head (required with --swap-head).
    #[arg(long)]
    pub head_seed: Option<u64>,
    /// Fine-tune a fresh student instead of a checkpoint.
    #[arg(long)]
    pub scratch: bool,
    /// Class count of the fresh student (required with --scratch).
    #[arg(long)]
    pub n: Option<usize>,
    /// Hidden width of the fresh student (required with --scratch).
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Seed for the fresh student's parameters (required with --scratch).
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.2)]
    pub learning_rate: f64,
    /// Passes over the training set.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Seed for epoch shuffling.
    #[arg(long)]
    pub seed: u64,
    /// Output checkpoint path (JSON).
    #[arg(short, long)]
    pub output: PathBuf,
}

fn finetune_start(args: &FinetuneArgs, feature_dim: usize) -> Result<AnyModel, CliError> {
    let usage = |msg: &str| CliError::Usage(msg.into());
    if args.scratch {
        if args.model.is_some() || args.swap_head.is_some() || args.head_seed.is_some() {
            return Err(usage("--scratch cannot be combined with --model or --swap-head"));
        }
        let n = args.n.ok_or_else(|| usage("--scratch requires --n"))?;
        let hidden = args.hidden_dim.ok_or_else(|| usage("--scratch requires --hidden-dim"))?;
        let init_seed = args.init_seed.ok_or_else(|| usage("--scratch requires --init-seed"))?;
        return Ok(MlpModel::init(n, feature_dim, hidden, init_seed)?.into());
    }
    if args.n.is_some() || args.hidden_dim.is_some() || args.init_seed.is_some() {
        return Err(usage("--n, --hidden-dim, and --init-seed only apply with --scratch"));
    }
    let path = args.model.as_ref().ok_or_else(|| usage("one of --model or --scratch is required"))?;
    let checkpoint = read_checkpoint(path)?;
    match args.swap_head {
        Some(num_classes) => {
            let head_seed = args
                .head_seed
                .ok_or_else(|| usage("--swap-head requires --head-seed"))?;
            let mlp = checkpoint
                .model
                .as_mlp()
                .ok_or_else(|| usage("--swap-head needs an mlp checkpoint"))?;
            Ok(mlp.swap_head(num_classes, head_seed)?.into())
        }
        None if args.head_seed.is_some() => Err(usage("--head-seed requires --swap-head")),
        None => Ok(checkpoint.model),
    }
}

pub fn finetune(args: &FinetuneArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let feature_dim = feature_dim_of(&args.input, &records)?;
    let examples = examples_with_true_labels(&records)?;
    let mut model = finetune_start(args, feature_dim)?;
    let cfg = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        shuffle: true,
    };
    let report = train(&mut model, &examples, &cfg)?;
    write_checkpoint(
        &args.output,
        &Checkpoint {
            model,
            seed: args.seed,
            train_config: Some(cfg),
        },
    )?;
    println!(
        "fine-tuned on {} examples for {} epochs; final loss {:.6}",
        examples.len(),
        args.epochs,
        report.final_loss
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// What `evaluate` writes: the accuracy report, plus mean average precision
/// when a background class was given.
#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_ap: Option<f64>,
}

#[derive(Args)]
#[command(after_help = "\
Output JSON: {\"top1\", \"top5\" (models with at least 5 classes),
\"per_class_accuracy\", \"num_samples\", \"mean_ap\" (with --map-background)}.")]
pub struct EvaluateArgs {
    /// Input JSONL of records with true labels.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Model checkpoint to evaluate.
    #[arg(long)]
    pub model: PathBuf,
    /// Also report mean average precision over all classes except this one.
    #[arg(long, value_name = "CLASS")]
    pub map_background: Option<usize>,
    /// Output JSON path.
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let records = read_records(&args.input)?;
    let checkpoint = read_checkpoint(&args.model)?;
    let report = evaluate_model(&checkpoint.model, &records)?;
    let mean_ap = match args.map_background {
        Some(background) => Some(model_mean_ap(&checkpoint.model, &records, background)?),
        None => None,
    };
    let mut line = format!("top-1 {:.4}", report.top1);
    if let Some(top5) = report.top5 {
        line.push_str(&format!("  top-5 {top5:.4}"));
    }
    if let Some(map) = mean_ap {
        line.push_str(&format!("  mAP {map:.4}"));
    }
    line.push_str(&format!("  ({} samples)", report.num_samples));
    write_json(&args.output, &EvalOutput { report, mean_ap }, true)?;
    println!("{line}");
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Runs every requested strategy plus a no-pretrain arm over the config's master
seeds, sharing each seed's corpora, teacher, and confusion matrix across
arms. Writes config.json, report.json, and report.txt into --out-dir; with
--artifacts, also seed-<S>/{corpus,target,heldout}.jsonl, teacher.json,
confusion.csv, and per-arm arms/<arm>/{labelspace.json,relabeled.jsonl,
student.json}. Rerunning with the same config rewrites identical bytes.")]
pub struct ExperimentArgs {
    /// Experiment config JSON (see --emit-default-config).
    #[arg(long, value_name = "PATH", required_unless_present = "emit_default_config")]
    pub config: Option<PathBuf>,
    /// Directory for the run's artifacts (created if missing).
    #[arg(long, value_name = "DIR", required_unless_present = "emit_default_config")]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated strategies to compare.
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_STRATEGIES)]
    pub strategies: Vec<String>,
    /// Also write per-seed and per-arm data files.
    #[arg(long)]
    pub artifacts: bool,
    /// Print the stock benchmark config as JSON and exit.
    #[arg(long, conflicts_with_all = ["config", "out_dir", "artifacts"])]
    pub emit_default_config: bool,
}

/// Directory-safe arm name: budgets join with `-k` (`spl-m(k=2)` becomes
/// `spl-m-k2`).
fn arm_dir_name(arm: Arm) -> String {
    match arm {
        Arm::Strategy(StrategyConfig { kind, k: Some(k) }) => format!("{kind}-k{k}"),
        Arm::Strategy(StrategyConfig { kind, k: None }) => kind.to_string(),
        Arm::NoPretrain => "no-pretrain".into(),
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| format_err(path, e))
}

fn write_seed_artifacts(seed_dir: &Path, cfg: &ExperimentConfig, ctx: &SeedContext) -> Result<(), CliError> {
    create_dir(seed_dir)?;
    write_records(&seed_dir.join("corpus.jsonl"), &ctx.web.records)?;
    write_records(&seed_dir.join("target.jsonl"), &ctx.target.records)?;
    write_records(&seed_dir.join("heldout.jsonl"), &ctx.heldout.records)?;
    let teacher_seed = derive_seed(ctx.master_seed, stage::TEACHER);
    write_checkpoint(
        &seed_dir.join("teacher.json"),
        &Checkpoint {
            model: ctx.teacher.clone().into(),
            seed: teacher_seed,
            train_config: Some(cfg.teacher.with_seed(teacher_seed)),
        },
    )?;
    ctx.confusion.write_csv(create(&seed_dir.join("confusion.csv"))?)?;
    Ok(())
}

fn write_arm_artifacts(
    seed_dir: &Path,
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    arm: Arm,
    student: &MlpModel,
) -> Result<(), CliError> {
    let arm_dir = seed_dir.join("arms").join(arm_dir_name(arm));
    create_dir(&arm_dir)?;
    if let Arm::Strategy(strategy) = arm {
        let relabeled = if strategy.kind.uses_label_space() {
            let space = SplLabelSpace::build(&ctx.confusion, strategy)?;
            write_json(&arm_dir.join("labelspace.json"), &space, false)?;
            relabel(&ctx.web.records, &space)?
        } else {
            relabel_baseline(&ctx.web.records, strategy.kind, cfg.corpus.n)?
        };
        write_records(&arm_dir.join("relabeled.jsonl"), &relabeled)?;
    }
    let finetune_seed = derive_seed(ctx.master_seed, stage::FINETUNE);
    write_checkpoint(
        &arm_dir.join("student.json"),
        &Checkpoint {
            model: student.clone().into(),
            seed: finetune_seed,
            train_config: Some(cfg.finetune.with_seed(finetune_seed)),
        },
    )?;
    Ok(())
}

pub fn experiment(args: &ExperimentArgs) -> Result<(), CliError> {
    if args.emit_default_config {
        let cfg = ExperimentConfig::default_benchmark();
        let json = serde_json::to_string_pretty(&cfg)
            .map_err(|e| CliError::Internal(format!("serializing default config: {e}")))?;
        println!("{json}");
        return Ok(());
    }
    let config_path = args.config.as_ref().expect("clap enforces --config");
    let out_dir = args.out_dir.as_ref().expect("clap enforces --out-dir");
    let cfg: ExperimentConfig = read_json(config_path)?;
    cfg.validate()?;
    if args.strategies.is_empty() {
        return Err(CliError::Usage("at least one strategy is required".into()));
    }
    let strategies: Vec<StrategyConfig> = args
        .strategies
        .iter()
        .map(|text| {
            let strategy = parse_strategy(text)?;
            strategy.validate(cfg.corpus.n)?;
            Ok(strategy)
        })
        .collect::<Result<_, CliError>>()?;

    create_dir(out_dir)?;
    write_json(&out_dir.join("config.json"), &cfg, true)?;

    let mut contexts: Vec<SeedContext> = Vec::with_capacity(cfg.seeds.len());
    for &master_seed in &cfg.seeds {
        let ctx = prepare_seed_context(&cfg, master_seed)?;
        eprintln!(
            "seed {master_seed}: teacher top-1 {:.4}, noise ratio {:.4}",
            ctx.teacher_eval.top1, ctx.noise_ratio
        );
        if args.artifacts {
            write_seed_artifacts(&out_dir.join(format!("seed-{master_seed}")), &cfg, &ctx)?;
        }
        contexts.push(ctx);
    }
    let seeds: Vec<SeedSummary> = contexts
        .iter()
        .map(|ctx| SeedSummary {
            master_seed: ctx.master_seed,
            noise_ratio: ctx.noise_ratio,
            teacher_top1: ctx.teacher_eval.top1,
            confusion: ctx.confusion.clone(),
        })
        .collect();

    let arms_to_run: Vec<Arm> = strategies
        .iter()
        .map(|&s| Arm::Strategy(s))
        .chain([Arm::NoPretrain])
        .collect();
    let mut arms = Vec::with_capacity(arms_to_run.len());
    for arm in arms_to_run {
        let mut runs = Vec::with_capacity(contexts.len());
        for ctx in &contexts {
            let (result, student) = run_arm_with_model(&cfg, ctx, arm)?;
            eprintln!(
                "seed {} / {}: top-1 {:.4}",
                ctx.master_seed,
                arm.label(),
                result.final_eval.top1
            );
            if args.artifacts {
                let seed_dir = out_dir.join(format!("seed-{}", ctx.master_seed));
                write_arm_artifacts(&seed_dir, &cfg, ctx, arm, &student)?;
            }
            runs.push(result);
        }
        arms.push(summarize_arm(arm, runs));
    }

    let report = ComparisonReport {
        config: cfg,
        seeds,
        arms,
    };
    write_json(&out_dir.join("report.json"), &report, true)?;
    let text = report.render_text();
    write_text(&out_dir.join("report.txt"), &text)?;
    print!("{text}");
    println!("report written to {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(after_help = "\
Reruns one budgeted strategy at each class budget K, reusing each seed's
corpora and teacher across budgets. Writes config.json, report.json, and
report.txt into --out-dir.")]
pub struct SweepArgs {
    /// Experiment config JSON (see `spl experiment --emit-default-config`).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Budgeted strategy to sweep (spl-m or spl-d).
    #[arg(long)]
    pub kind: String,
    /// Comma-separated class budgets.
    #[arg(long, value_delimiter = ',', value_name = "K1,K2,...", required = true)]
    pub budgets: Vec<usize>,
    /// Directory for the sweep's reports (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg: ExperimentConfig = read_json(&args.config)?;
    cfg.validate()?;
    let parsed = parse_strategy(&args.kind)?;
    if parsed.k.is_some() {
        return Err(CliError::Usage("pass budgets via --budgets, not a :k suffix on --kind".into()));
    }
    if !parsed.kind.takes_budget() {
        return Err(CliError::Usage(format!(
            "--kind must be a budgeted strategy (spl-m or spl-d), got {}",
            parsed.kind
        )));
    }
    eprintln!(
        "sweeping {} over budgets {:?} with {} seed(s)",
        parsed.kind,
        args.budgets,
        cfg.seeds.len()
    );
    let report = sweep_scr(&cfg, parsed.kind, &args.budgets)?;
    create_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &cfg, true)?;
    write_json(&args.out_dir.join("report.json"), &report, true)?;
    let text = report.render_text();
    write_text(&args.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    println!("report written to {}", args.out_dir.display());
    Ok(())
}
