//! End-to-end experiment orchestration.
//!
//! One experiment run walks the full loop for a single master seed:
//!
//! 1. generate target, held-out, and web corpora over shared prototypes;
//! 2. train the linear teacher on the clean target set;
//! 3. annotate the web corpus with teacher predictions and build the
//!    (weak label, teacher prediction) confusion matrix;
//! 4. relabel the web corpus under a strategy and pretrain the MLP student
//!    on the pseudo-labels;
//! 5. swap the student's head back to the `n` real classes, fine-tune on the
//!    target set, and evaluate on the held-out set.
//!
//! Every stochastic stage draws its seed from the master seed via
//! [`derive_seed`], so arms that share a master seed share their corpora,
//! teacher, and confusion matrix bit-for-bit, and whole runs are exactly
//! reproducible.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{generate_target_set, generate_web_corpus, CorpusError, CorpusSpec, SyntheticCorpus};
use crate::eval::{evaluate_model, model_mean_ap, EvalError, EvalReport};
use crate::model::{
    predict, train, Example, LinearSoftmaxModel, MlpModel, ModelError, TrainConfig, TrainReport,
};
use crate::record::{ClassCount, ClipRecord};
use crate::relabel::{
    relabel, relabel_baseline, ConfusionMatrix, RelabelError, SplLabelSpace, StrategyConfig,
    StrategyKind,
};
use crate::seed::{derive_seed, stage};

/// Errors from experiment orchestration, tagged with the failing stage.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// A configuration that cannot run.
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    /// A record missing the label the stage needs.
    #[error("clip {clip_id} has no {which}")]
    MissingLabel {
        clip_id: String,
        which: &'static str,
    },
    #[error("{stage}: {source}")]
    Corpus {
        stage: &'static str,
        source: CorpusError,
    },
    #[error("{stage}: {source}")]
    Relabel {
        stage: &'static str,
        source: RelabelError,
    },
    #[error("{stage}: {source}")]
    Model {
        stage: &'static str,
        source: ModelError,
    },
    #[error("{stage}: {source}")]
    Eval {
        stage: &'static str,
        source: EvalError,
    },
}

impl PipelineError {
    /// The model error behind this failure, when there is one.
    #[must_use]
    pub fn model_error(&self) -> Option<&ModelError> {
        match self {
            PipelineError::Model { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Full description of one experiment; two equal configs reproduce each
/// other's reports byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Web corpus shape. Its `prototype_seed` and `seed` fields are
    /// placeholders: each run overrides them with seeds derived from the
    /// run's master seed.
    pub corpus: CorpusSpec,
    /// Clean clips per class for teacher training and fine-tuning.
    pub target_clips_per_class: usize,
    /// Clean clips per class in the held-out evaluation set.
    pub eval_clips_per_class: usize,
    /// Student hidden-layer width.
    pub hidden_dim: usize,
    /// Strategy used by single runs ([`run_experiment`]); comparisons take
    /// an explicit list instead.
    pub strategy: StrategyConfig,
    /// Teacher optimizer settings; the seed field is likewise derived.
    pub teacher: TrainConfig,
    /// Student pretraining optimizer settings.
    pub pretrain: TrainConfig,
    /// Fine-tuning optimizer settings (also used by the no-pretrain arm).
    pub finetune: TrainConfig,
    /// When set, final evaluations also report mean average precision
    /// excluding this class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_background: Option<usize>,
    /// Master seeds; one full run per seed.
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// The stock benchmark: 10 classes, 16-dim features, 100x10 web clips
    /// per class at 50% temporal noise, 25 target clips per class, and a
    /// 32-wide student. The target set is kept small on purpose — with
    /// plentiful clean data, fine-tuning converges from any initialization
    /// and pretraining stops mattering.
    #[must_use]
    pub fn default_benchmark() -> Self {
        let prototype_separation = 1.0;
        Self {
            corpus: CorpusSpec {
                n: ClassCount::new(10).expect("10 >= 2"),
                feature_dim: 16,
                videos_per_class: 100,
                clips_per_video: 10,
                temporal_noise_p: 0.5,
                relatedness: None,
                prototype_separation,
                noise_std: 0.35 * prototype_separation,
                background_mode: false,
                prototype_seed: 0,
                seed: 0,
            },
            target_clips_per_class: 25,
            eval_clips_per_class: 100,
            hidden_dim: 32,
            strategy: StrategyConfig::new(StrategyKind::SplB),
            teacher: TrainConfig {
                learning_rate: 0.5,
                epochs: 40,
                batch_size: 32,
                seed: 0,
                shuffle: true,
            },
            pretrain: TrainConfig {
                learning_rate: 0.3,
                epochs: 15,
                batch_size: 32,
                seed: 0,
                shuffle: true,
            },
            finetune: TrainConfig {
                learning_rate: 0.2,
                epochs: 10,
                batch_size: 32,
                seed: 0,
                shuffle: true,
            },
            map_background: None,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }

    /// Rejects configs that cannot run.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.corpus
            .validate()
            .map_err(|source| PipelineError::Corpus {
                stage: "corpus spec",
                source,
            })?;
        if self.target_clips_per_class == 0 || self.eval_clips_per_class == 0 {
            return Err(PipelineError::InvalidConfig(
                "target and eval clips per class must be positive".into(),
            ));
        }
        if self.hidden_dim == 0 {
            return Err(PipelineError::InvalidConfig("hidden_dim must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(PipelineError::InvalidConfig("at least one master seed is required".into()));
        }
        if let Some(background) = self.map_background {
            if background >= self.corpus.n.get() {
                return Err(PipelineError::InvalidConfig(format!(
                    "map_background class {background} out of range for {} classes",
                    self.corpus.n
                )));
            }
        }
        for (name, cfg) in [
            ("teacher", &self.teacher),
            ("pretrain", &self.pretrain),
            ("finetune", &self.finetune),
        ] {
            cfg.validate().map_err(|source| PipelineError::Model {
                stage: match name {
                    "teacher" => "teacher config",
                    "pretrain" => "pretrain config",
                    _ => "finetune config",
                },
                source,
            })?;
        }
        Ok(())
    }
}

/// Wall-clock seconds per stage; excluded from serialized reports so that
/// equal configs produce byte-identical report files.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub stages: Vec<(String, f64)>,
}

impl StageTimings {
    fn push(&mut self, name: &str, seconds: f64) {
        self.stages.push((name.to_string(), seconds));
    }

    /// Sum over all recorded stages.
    #[must_use]
    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, s)| s).sum()
    }
}

/// Everything the arms of one master seed share: corpora, teacher, and the
/// teacher's confusion matrix over the web corpus.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub master_seed: u64,
    /// Web corpus, annotated with teacher predictions.
    pub web: SyntheticCorpus,
    pub target: SyntheticCorpus,
    pub heldout: SyntheticCorpus,
    pub teacher: LinearSoftmaxModel,
    pub teacher_report: TrainReport,
    pub teacher_eval: EvalReport,
    pub confusion: ConfusionMatrix,
    pub noise_ratio: f64,
    pub timings: StageTimings,
}

/// One experiment arm: a relabeling strategy, or training from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Strategy(StrategyConfig),
    /// Fine-tuning budget only, from a fresh initialization.
    NoPretrain,
}

impl Arm {
    /// Stable human-readable arm name.
    #[must_use]
    pub fn label(&self) -> String {
        match self {
            Arm::Strategy(s) => s.label(),
            Arm::NoPretrain => "no-pretrain".into(),
        }
    }
}

/// Label-space shape and usage of one pretraining stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    /// Size of the pseudo-label space the student was pretrained over.
    pub pseudo_classes: usize,
    /// Samples covered ratio of the label space (1.0 for baselines that
    /// keep every sample; the kept fraction for filtering strategies).
    pub scr: f64,
    /// Relabeled examples actually pretrained on.
    pub examples: usize,
    /// Mean loss over the pretraining set after the last epoch.
    pub final_loss: f64,
}

/// The outcome of one arm under one master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    /// Arm name, e.g. `spl-b` or `no-pretrain`.
    pub arm: String,
    /// The strategy behind the arm; absent for `no-pretrain`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyConfig>,
    pub master_seed: u64,
    /// Off-diagonal share of the teacher-vs-weak confusion matrix.
    pub noise_ratio: f64,
    /// Teacher accuracy on the held-out set.
    pub teacher_eval: EvalReport,
    /// Pretraining stage summary; absent for `no-pretrain`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSummary>,
    /// Fine-tuning loss after the last epoch.
    pub finetune_loss: f64,
    /// Student accuracy on the held-out set.
    pub final_eval: EvalReport,
    /// Mean average precision excluding the configured background class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ap: Option<f64>,
    #[serde(skip)]
    pub timings: StageTimings,
}

fn timed<T>(timings: &mut StageTimings, name: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let value = f();
    timings.push(name, start.elapsed().as_secs_f64());
    value
}

/// Training examples from records' ground-truth labels.
pub fn examples_with_true_labels(records: &[ClipRecord]) -> Result<Vec<Example>, PipelineError> {
    records
        .iter()
        .map(|r| {
            let label = r.true_label.ok_or_else(|| PipelineError::MissingLabel {
                clip_id: r.clip_id.clone(),
                which: "true label",
            })?;
            Ok((r.features.clone(), label))
        })
        .collect()
}

/// Training examples from records' pseudo-labels.
pub fn examples_with_pseudo_labels(records: &[ClipRecord]) -> Result<Vec<Example>, PipelineError> {
    records
        .iter()
        .map(|r| {
            let label = r.pseudo_label.ok_or_else(|| PipelineError::MissingLabel {
                clip_id: r.clip_id.clone(),
                which: "pseudo-label",
            })?;
            Ok((r.features.clone(), label))
        })
        .collect()
}

/// Renumbers labels in place to first-appearance order; returns the map
/// from canonical id back to the original label.
///
/// Pseudo-label ids are arbitrary names, but SGD is sensitive to which head
/// row a class lands on and to summation order inside the softmax. Training
/// on canonical ids makes pretraining invariant to how a label space
/// numbered its classes, so strategies that induce the same partition of
/// samples (for example `spl-d` at `k = n` and plain `spl`) produce
/// bit-identical students.
pub fn canonicalize_labels(examples: &mut [Example]) -> Vec<usize> {
    let mut canonical_to_original = Vec::new();
    let mut mapping: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (_, label) in examples.iter_mut() {
        let next = canonical_to_original.len();
        let canonical = *mapping.entry(*label).or_insert_with(|| {
            canonical_to_original.push(*label);
            next
        });
        *label = canonical;
    }
    canonical_to_original
}

/// Builds the shared per-seed context: corpora, teacher, confusion matrix.
pub fn prepare_seed_context(
    cfg: &ExperimentConfig,
    master_seed: u64,
) -> Result<SeedContext, PipelineError> {
    cfg.validate()?;
    let mut timings = StageTimings::default();
    let corpus_err = |stage: &'static str| move |source| PipelineError::Corpus { stage, source };
    let model_err = |stage: &'static str| move |source| PipelineError::Model { stage, source };
    let eval_err = |stage: &'static str| move |source| PipelineError::Eval { stage, source };

    let mut web_spec = cfg.corpus.clone();
    web_spec.prototype_seed = derive_seed(master_seed, stage::PROTOTYPES);
    web_spec.seed = derive_seed(master_seed, stage::WEB_CORPUS);

    let target = timed(&mut timings, "target-set", || {
        generate_target_set(&web_spec, cfg.target_clips_per_class, derive_seed(master_seed, stage::TARGET_SET))
    })
    .map_err(corpus_err("target set"))?;
    let heldout = timed(&mut timings, "eval-set", || {
        generate_target_set(&web_spec, cfg.eval_clips_per_class, derive_seed(master_seed, stage::EVAL_SET))
    })
    .map_err(corpus_err("held-out set"))?;

    let teacher_seed = derive_seed(master_seed, stage::TEACHER);
    let target_examples = examples_with_true_labels(&target.records)?;
    let mut teacher = LinearSoftmaxModel::init(cfg.corpus.n.get(), cfg.corpus.feature_dim, teacher_seed)
        .map_err(model_err("teacher init"))?;
    let teacher_report = timed(&mut timings, "teacher-train", || {
        train(&mut teacher, &target_examples, &cfg.teacher.with_seed(teacher_seed))
    })
    .map_err(model_err("teacher training"))?;
    let teacher_eval =
        evaluate_model(&teacher, &heldout.records).map_err(eval_err("teacher evaluation"))?;

    let mut web = timed(&mut timings, "web-corpus", || generate_web_corpus(&web_spec))
        .map_err(corpus_err("web corpus"))?;
    timed(&mut timings, "teacher-infer", || -> Result<(), PipelineError> {
        for record in &mut web.records {
            record.teacher_pred =
                Some(predict(&teacher, &record.features).map_err(model_err("teacher inference"))?);
        }
        Ok(())
    })?;

    let confusion = ConfusionMatrix::from_records(&web.records, cfg.corpus.n)
        .map_err(|source| PipelineError::Relabel {
            stage: "confusion matrix",
            source,
        })?;
    let noise_ratio = confusion
        .noise_ratio()
        .map_err(|source| PipelineError::Relabel {
            stage: "noise ratio",
            source,
        })?;

    Ok(SeedContext {
        master_seed,
        web,
        target,
        heldout,
        teacher,
        teacher_report,
        teacher_eval,
        confusion,
        noise_ratio,
        timings,
    })
}

/// Runs one arm on a prepared context.
pub fn run_arm(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    arm: Arm,
) -> Result<RunResult, PipelineError> {
    run_arm_with_model(cfg, ctx, arm).map(|(result, _)| result)
}

/// [`run_arm`], also handing back the fine-tuned student for checkpointing.
pub fn run_arm_with_model(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    arm: Arm,
) -> Result<(RunResult, MlpModel), PipelineError> {
    let n = cfg.corpus.n;
    let mut timings = StageTimings::default();
    let model_err = |stage: &'static str| move |source| PipelineError::Model { stage, source };
    let master_seed = ctx.master_seed;
    let finetune_cfg = cfg.finetune.with_seed(derive_seed(master_seed, stage::FINETUNE));
    let target_examples = examples_with_true_labels(&ctx.target.records)?;

    let (mut student, pretrain_summary) = match arm {
        Arm::Strategy(strategy) => {
            let (relabeled, pseudo_classes, scr) = if strategy.kind.uses_label_space() {
                let space = SplLabelSpace::build(&ctx.confusion, strategy).map_err(|source| {
                    PipelineError::Relabel {
                        stage: "label space",
                        source,
                    }
                })?;
                let relabeled =
                    relabel(&ctx.web.records, &space).map_err(|source| PipelineError::Relabel {
                        stage: "relabel",
                        source,
                    })?;
                (relabeled, space.num_classes(), space.scr())
            } else {
                strategy.validate(n).map_err(|source| PipelineError::Relabel {
                    stage: "strategy config",
                    source,
                })?;
                let relabeled = relabel_baseline(&ctx.web.records, strategy.kind, n).map_err(
                    |source| PipelineError::Relabel {
                        stage: "relabel",
                        source,
                    },
                )?;
                let scr = if strategy.kind == StrategyKind::AgreementFilter {
                    ctx.confusion.trace() as f64 / ctx.confusion.total() as f64
                } else {
                    1.0
                };
                (relabeled, n.get(), scr)
            };

            let mut pretrain_examples = examples_with_pseudo_labels(&relabeled)?;
            canonicalize_labels(&mut pretrain_examples);
            let pretrain_seed = derive_seed(master_seed, stage::PRETRAIN);
            let mut student =
                MlpModel::init(pseudo_classes, cfg.corpus.feature_dim, cfg.hidden_dim, pretrain_seed)
                    .map_err(model_err("student init"))?;
            let report = timed(&mut timings, "pretrain", || {
                train(&mut student, &pretrain_examples, &cfg.pretrain.with_seed(pretrain_seed))
            })
            .map_err(model_err("student pretraining"))?;
            let swapped = student
                .swap_head(n.get(), derive_seed(master_seed, stage::HEAD_SWAP))
                .map_err(model_err("head swap"))?;
            (
                swapped,
                Some(PretrainSummary {
                    pseudo_classes,
                    scr,
                    examples: pretrain_examples.len(),
                    final_loss: report.final_loss,
                }),
            )
        }
        Arm::NoPretrain => {
            let student = MlpModel::init(
                n.get(),
                cfg.corpus.feature_dim,
                cfg.hidden_dim,
                derive_seed(master_seed, stage::SCRATCH),
            )
            .map_err(model_err("student init"))?;
            (student, None)
        }
    };

    let finetune_report = timed(&mut timings, "finetune", || {
        train(&mut student, &target_examples, &finetune_cfg)
    })
    .map_err(model_err("fine-tuning"))?;
    let final_eval = timed(&mut timings, "evaluate", || {
        evaluate_model(&student, &ctx.heldout.records)
    })
    .map_err(|source| PipelineError::Eval {
        stage: "final evaluation",
        source,
    })?;
    let mean_ap = match cfg.map_background {
        Some(background) => Some(
            model_mean_ap(&student, &ctx.heldout.records, background).map_err(|source| {
                PipelineError::Eval {
                    stage: "mean average precision",
                    source,
                }
            })?,
        ),
        None => None,
    };

    let result = RunResult {
        arm: arm.label(),
        strategy: match arm {
            Arm::Strategy(s) => Some(s),
            Arm::NoPretrain => None,
        },
        master_seed,
        noise_ratio: ctx.noise_ratio,
        teacher_eval: ctx.teacher_eval.clone(),
        pretrain: pretrain_summary,
        finetune_loss: finetune_report.final_loss,
        final_eval,
        mean_ap,
        timings,
    };
    Ok((result, student))
}

/// One full run: context plus the configured strategy's arm.
pub fn run_experiment(cfg: &ExperimentConfig, master_seed: u64) -> Result<RunResult, PipelineError> {
    cfg.strategy
        .validate(cfg.corpus.n)
        .map_err(|source| PipelineError::Relabel {
            stage: "strategy config",
            source,
        })?;
    let ctx = prepare_seed_context(cfg, master_seed)?;
    let mut result = run_arm(cfg, &ctx, Arm::Strategy(cfg.strategy))?;
    let mut timings = ctx.timings;
    timings.stages.extend(result.timings.stages.clone());
    result.timings = timings;
    Ok(result)
}

/// Context facts of one master seed, shared by every arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub master_seed: u64,
    pub noise_ratio: f64,
    pub teacher_top1: f64,
    pub confusion: ConfusionMatrix,
}

/// One arm aggregated over all master seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyConfig>,
    pub mean_top1: f64,
    /// Population standard deviation (zero for a single seed).
    pub std_top1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_top5: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_top5: Option<f64>,
    pub runs: Vec<RunResult>,
}

/// Cross-strategy comparison over shared per-seed contexts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedSummary>,
    pub arms: Vec<ArmSummary>,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    (mean, variance.sqrt())
}

/// Aggregates one arm's per-seed runs into its report row.
#[must_use]
pub fn summarize_arm(arm: Arm, runs: Vec<RunResult>) -> ArmSummary {
    let top1: Vec<f64> = runs.iter().map(|r| r.final_eval.top1).collect();
    let (mean_top1, std_top1) = mean_and_std(&top1);
    let top5: Option<Vec<f64>> = runs.iter().map(|r| r.final_eval.top5).collect();
    let (mean_top5, std_top5) = match top5 {
        Some(values) => {
            let (mean, std) = mean_and_std(&values);
            (Some(mean), Some(std))
        }
        None => (None, None),
    };
    ArmSummary {
        arm: arm.label(),
        strategy: match arm {
            Arm::Strategy(s) => Some(s),
            Arm::NoPretrain => None,
        },
        mean_top1,
        std_top1,
        mean_top5,
        std_top5,
        runs,
    }
}

/// Runs every strategy plus the no-pretrain arm over `cfg.seeds`, sharing
/// the per-seed corpora, teacher, and confusion matrix across arms.
pub fn compare_strategies(
    cfg: &ExperimentConfig,
    strategies: &[StrategyConfig],
) -> Result<ComparisonReport, PipelineError> {
    cfg.validate()?;
    for strategy in strategies {
        strategy
            .validate(cfg.corpus.n)
            .map_err(|source| PipelineError::Relabel {
                stage: "strategy config",
                source,
            })?;
    }
    let contexts: Vec<SeedContext> = cfg
        .seeds
        .iter()
        .map(|&seed| prepare_seed_context(cfg, seed))
        .collect::<Result<_, _>>()?;
    let seeds = contexts
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
        let runs: Vec<RunResult> = contexts
            .iter()
            .map(|ctx| run_arm(cfg, ctx, arm))
            .collect::<Result<_, _>>()?;
        arms.push(summarize_arm(arm, runs));
    }
    Ok(ComparisonReport {
        config: cfg.clone(),
        seeds,
        arms,
    })
}

/// One budget of an SCR sweep, aggregated over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub num_classes: usize,
    pub mean_scr: f64,
    pub mean_top1: f64,
    pub std_top1: f64,
    pub runs: Vec<RunResult>,
}

/// Accuracy as a function of the class budget for one budgeted strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub kind: StrategyKind,
    pub seeds: Vec<SeedSummary>,
    pub points: Vec<SweepPoint>,
}

/// Sweeps `kind` (`spl-m` or `spl-d`) over `budgets`, sharing per-seed
/// contexts across budgets.
pub fn sweep_scr(
    cfg: &ExperimentConfig,
    kind: StrategyKind,
    budgets: &[usize],
) -> Result<SweepReport, PipelineError> {
    cfg.validate()?;
    if budgets.is_empty() {
        return Err(PipelineError::InvalidConfig("sweep needs at least one budget".into()));
    }
    for &k in budgets {
        StrategyConfig::with_budget(kind, k)
            .validate(cfg.corpus.n)
            .map_err(|source| PipelineError::Relabel {
                stage: "sweep budget",
                source,
            })?;
    }
    let contexts: Vec<SeedContext> = cfg
        .seeds
        .iter()
        .map(|&seed| prepare_seed_context(cfg, seed))
        .collect::<Result<_, _>>()?;
    let seeds = contexts
        .iter()
        .map(|ctx| SeedSummary {
            master_seed: ctx.master_seed,
            noise_ratio: ctx.noise_ratio,
            teacher_top1: ctx.teacher_eval.top1,
            confusion: ctx.confusion.clone(),
        })
        .collect();
    let mut points = Vec::with_capacity(budgets.len());
    for &k in budgets {
        let arm = Arm::Strategy(StrategyConfig::with_budget(kind, k));
        let runs: Vec<RunResult> = contexts
            .iter()
            .map(|ctx| run_arm(cfg, ctx, arm))
            .collect::<Result<_, _>>()?;
        let top1: Vec<f64> = runs.iter().map(|r| r.final_eval.top1).collect();
        let (mean_top1, std_top1) = mean_and_std(&top1);
        let scr: Vec<f64> = runs
            .iter()
            .map(|r| r.pretrain.expect("strategy arms pretrain").scr)
            .collect();
        let (mean_scr, _) = mean_and_std(&scr);
        points.push(SweepPoint {
            k,
            num_classes: runs[0].pretrain.expect("strategy arms pretrain").pseudo_classes,
            mean_scr,
            mean_top1,
            std_top1,
            runs,
        });
    }
    Ok(SweepReport {
        config: cfg.clone(),
        kind,
        seeds,
        points,
    })
}

fn write_context_header(out: &mut String, config: &ExperimentConfig, seeds: &[SeedSummary]) {
    let c = &config.corpus;
    let _ = writeln!(
        out,
        "classes: {}  feature dim: {}  hidden dim: {}",
        c.n, c.feature_dim, config.hidden_dim
    );
    let _ = writeln!(
        out,
        "web corpus: {} videos/class x {} clips at temporal noise p = {}",
        c.videos_per_class, c.clips_per_video, c.temporal_noise_p
    );
    let _ = writeln!(
        out,
        "target: {} clips/class  held-out: {} clips/class",
        config.target_clips_per_class, config.eval_clips_per_class
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<12} {:>12} {:>13}", "seed", "noise_ratio", "teacher_top1");
    for seed in seeds {
        let _ = writeln!(
            out,
            "{:<12} {:>12.4} {:>13.4}",
            seed.master_seed, seed.noise_ratio, seed.teacher_top1
        );
    }
    let _ = writeln!(out);
}

impl ComparisonReport {
    /// Plain-text rendering for `report.txt`.
    #[must_use]
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "strategy comparison");
        let _ = writeln!(out, "===================");
        write_context_header(&mut out, &self.config, &self.seeds);
        let _ = writeln!(
            out,
            "{:<18} {:>9} {:>9} {:>9} {:>9} {:>8} {:>7} {:>10}",
            "arm", "top1_mean", "top1_std", "top5_mean", "top5_std", "classes", "scr", "pretrain_n"
        );
        for arm in &self.arms {
            let (classes, scr, examples) = match arm.runs.first().and_then(|r| r.pretrain) {
                Some(_) => {
                    let count = arm.runs.len() as f64;
                    let classes = arm.runs[0].pretrain.expect("checked").pseudo_classes;
                    let scr = arm.runs.iter().map(|r| r.pretrain.expect("checked").scr).sum::<f64>() / count;
                    let examples = arm
                        .runs
                        .iter()
                        .map(|r| r.pretrain.expect("checked").examples as f64)
                        .sum::<f64>()
                        / count;
                    (classes.to_string(), format!("{scr:.4}"), format!("{examples:.0}"))
                }
                None => ("-".into(), "-".into(), "-".into()),
            };
            let (top5_mean, top5_std) = match (arm.mean_top5, arm.std_top5) {
                (Some(m), Some(s)) => (format!("{m:.4}"), format!("{s:.4}")),
                _ => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{:<18} {:>9.4} {:>9.4} {:>9} {:>9} {:>8} {:>7} {:>10}",
                arm.arm, arm.mean_top1, arm.std_top1, top5_mean, top5_std, classes, scr, examples
            );
        }
        out
    }
}

impl SweepReport {
    /// Plain-text rendering for `report.txt`.
    #[must_use]
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "budget sweep: {}", self.kind);
        let _ = writeln!(out, "====================");
        write_context_header(&mut out, &self.config, &self.seeds);
        let _ = writeln!(
            out,
            "{:<6} {:>8} {:>9} {:>10} {:>9}",
            "k", "classes", "mean_scr", "mean_top1", "top1_std"
        );
        for point in &self.points {
            let _ = writeln!(
                out,
                "{:<6} {:>8} {:>9.4} {:>10.4} {:>9.4}",
                point.k, point.num_classes, point.mean_scr, point.mean_top1, point.std_top1
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small, fast config: 4 classes, light training.
    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_benchmark();
        cfg.corpus.n = ClassCount::new(4).unwrap();
        cfg.corpus.feature_dim = 6;
        cfg.corpus.videos_per_class = 20;
        cfg.corpus.clips_per_video = 5;
        cfg.target_clips_per_class = 30;
        cfg.eval_clips_per_class = 25;
        cfg.hidden_dim = 8;
        cfg.teacher.epochs = 12;
        cfg.pretrain.epochs = 4;
        cfg.finetune.epochs = 6;
        cfg.seeds = vec![7];
        cfg
    }

    #[test]
    fn canonicalize_labels_uses_first_appearance_order() {
        let mut examples: Vec<Example> = [5usize, 2, 5, 9, 2, 0]
            .iter()
            .map(|&l| (vec![0.0], l))
            .collect();
        let mapping = canonicalize_labels(&mut examples);
        let labels: Vec<usize> = examples.iter().map(|e| e.1).collect();
        assert_eq!(labels, vec![0, 1, 0, 2, 1, 3]);
        assert_eq!(mapping, vec![5, 2, 9, 0]);
    }

    #[test]
    fn canonicalize_labels_is_invariant_to_injective_renaming() {
        let original = [3usize, 1, 4, 1, 5, 9, 2, 6, 5, 3];
        let mut a: Vec<Example> = original.iter().map(|&l| (vec![0.0], l)).collect();
        // Same sequence under an injective relabeling l -> 2l + 1.
        let mut b: Vec<Example> = original.iter().map(|&l| (vec![0.0], 2 * l + 1)).collect();
        canonicalize_labels(&mut a);
        canonicalize_labels(&mut b);
        let la: Vec<usize> = a.iter().map(|e| e.1).collect();
        let lb: Vec<usize> = b.iter().map(|e| e.1).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn seed_context_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_config();
        let a = prepare_seed_context(&cfg, 7).unwrap();
        let b = prepare_seed_context(&cfg, 7).unwrap();
        assert_eq!(a.web.records, b.web.records);
        assert_eq!(a.target.records, b.target.records);
        assert_eq!(a.heldout.records, b.heldout.records);
        assert_eq!(a.teacher, b.teacher);
        assert_eq!(a.confusion, b.confusion);

        let c = prepare_seed_context(&cfg, 8).unwrap();
        assert_ne!(a.web.records, c.web.records);
        assert_ne!(a.teacher, c.teacher);
    }

    #[test]
    fn context_sets_are_disjoint_but_share_prototypes() {
        let ctx = prepare_seed_context(&tiny_config(), 3).unwrap();
        assert_eq!(ctx.web.prototypes, ctx.target.prototypes);
        assert_eq!(ctx.web.prototypes, ctx.heldout.prototypes);
        let target_ids: Vec<&str> = ctx.target.records.iter().map(|r| r.clip_id.as_str()).collect();
        assert!(ctx
            .heldout
            .records
            .iter()
            .all(|r| !target_ids.contains(&r.clip_id.as_str())));
        // Teacher predictions cover the web corpus.
        assert!(ctx.web.records.iter().all(|r| r.teacher_pred.is_some()));
        assert_eq!(ctx.confusion.total() as usize, ctx.web.records.len());
    }

    #[test]
    fn run_arm_produces_consistent_summaries() {
        let cfg = tiny_config();
        let ctx = prepare_seed_context(&cfg, 7).unwrap();
        let result = run_arm(&cfg, &ctx, Arm::Strategy(StrategyConfig::new(StrategyKind::Spl))).unwrap();
        assert_eq!(result.arm, "spl");
        let pretrain = result.pretrain.unwrap();
        assert_eq!(pretrain.pseudo_classes, 16);
        assert_eq!(pretrain.scr, 1.0);
        assert_eq!(pretrain.examples, ctx.web.records.len());
        assert_eq!(result.final_eval.num_samples, 100);
        // 4-class model: no top-5.
        assert_eq!(result.final_eval.top5, None);

        let scratch = run_arm(&cfg, &ctx, Arm::NoPretrain).unwrap();
        assert_eq!(scratch.arm, "no-pretrain");
        assert!(scratch.pretrain.is_none());
    }

    #[test]
    fn agreement_filter_arm_reports_kept_fraction_as_scr() {
        let cfg = tiny_config();
        let ctx = prepare_seed_context(&cfg, 7).unwrap();
        let arm = Arm::Strategy(StrategyConfig::new(StrategyKind::AgreementFilter));
        let result = run_arm(&cfg, &ctx, arm).unwrap();
        let pretrain = result.pretrain.unwrap();
        let expected = ctx.confusion.trace() as f64 / ctx.confusion.total() as f64;
        assert_eq!(pretrain.scr, expected);
        assert_eq!(pretrain.examples as u64, ctx.confusion.trace());
    }

    #[test]
    fn run_experiment_is_reproducible_byte_for_byte() {
        let mut cfg = tiny_config();
        cfg.strategy = StrategyConfig::new(StrategyKind::SplB);
        let a = run_experiment(&cfg, 11).unwrap();
        let b = run_experiment(&cfg, 11).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn discard_at_full_budget_matches_plain_spl_exactly() {
        let mut cfg = tiny_config();
        let ctx = prepare_seed_context(&cfg, 13).unwrap();
        cfg.strategy = StrategyConfig::new(StrategyKind::Spl);
        let full = run_arm(&cfg, &ctx, Arm::Strategy(cfg.strategy)).unwrap();
        let discard = run_arm(
            &cfg,
            &ctx,
            Arm::Strategy(StrategyConfig::with_budget(StrategyKind::SplD, 4)),
        )
        .unwrap();
        assert_eq!(full.final_eval.top1, discard.final_eval.top1);
        assert_eq!(full.final_eval.per_class_accuracy, discard.final_eval.per_class_accuracy);
        assert_eq!(full.finetune_loss, discard.finetune_loss);
    }

    #[test]
    fn noiseless_corpus_makes_weak_labels_and_agree_disagree_nearly_coincide() {
        // With p = 0 the only off-diagonal confusion mass comes from teacher
        // mistakes, so the two arms pretrain on almost identical labels. The
        // enlarged held-out set keeps sampling error well below the bound.
        let mut cfg = tiny_config();
        cfg.corpus.temporal_noise_p = 0.0;
        cfg.eval_clips_per_class = 250;
        let ctx = prepare_seed_context(&cfg, 17).unwrap();
        let weak = run_arm(&cfg, &ctx, Arm::Strategy(StrategyConfig::new(StrategyKind::WeakLabel)))
            .unwrap();
        let agree = run_arm(&cfg, &ctx, Arm::Strategy(StrategyConfig::new(StrategyKind::SplB)))
            .unwrap();
        assert!(
            (weak.final_eval.top1 - agree.final_eval.top1).abs() <= 0.02,
            "weak-label {} vs spl-b {}",
            weak.final_eval.top1,
            agree.final_eval.top1
        );
    }

    #[test]
    fn compare_strategies_shares_contexts_and_orders_arms() {
        let cfg = tiny_config();
        let strategies = [
            StrategyConfig::new(StrategyKind::SplB),
            StrategyConfig::new(StrategyKind::WeakLabel),
        ];
        let report = compare_strategies(&cfg, &strategies).unwrap();
        assert_eq!(report.seeds.len(), 1);
        let labels: Vec<&str> = report.arms.iter().map(|a| a.arm.as_str()).collect();
        assert_eq!(labels, ["spl-b", "weak-label", "no-pretrain"]);
        for arm in &report.arms {
            assert_eq!(arm.runs.len(), 1);
            assert_eq!(arm.mean_top1, arm.runs[0].final_eval.top1);
            assert_eq!(arm.std_top1, 0.0);
            // All arms saw the same context.
            assert_eq!(arm.runs[0].noise_ratio, report.seeds[0].noise_ratio);
        }
        let text = report.render_text();
        assert!(text.contains("spl-b"));
        assert!(text.contains("no-pretrain"));
    }

    #[test]
    fn sweep_reuses_contexts_and_reports_scr_per_budget() {
        let cfg = tiny_config();
        let report = sweep_scr(&cfg, StrategyKind::SplD, &[2, 4]).unwrap();
        assert_eq!(report.points.len(), 2);
        assert_eq!(report.points[0].k, 2);
        assert_eq!(report.points[0].num_classes, 8);
        assert_eq!(report.points[1].num_classes, 16);
        assert!(report.points[0].mean_scr <= report.points[1].mean_scr);
        assert_eq!(report.points[1].mean_scr, 1.0);
        assert!(sweep_scr(&cfg, StrategyKind::SplB, &[2]).is_err());
        assert!(sweep_scr(&cfg, StrategyKind::SplD, &[]).is_err());
    }

    #[test]
    fn config_validation_catches_mistakes() {
        let ok = tiny_config();
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.seeds = vec![];
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.hidden_dim = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.map_background = Some(9);
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.finetune.learning_rate = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.corpus.temporal_noise_p = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn experiment_config_round_trips_through_json() {
        let cfg = ExperimentConfig::default_benchmark();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn mean_ap_is_reported_when_background_is_configured() {
        let mut cfg = tiny_config();
        cfg.map_background = Some(0);
        cfg.corpus.background_mode = true;
        let ctx = prepare_seed_context(&cfg, 5).unwrap();
        let result = run_arm(&cfg, &ctx, Arm::Strategy(StrategyConfig::new(StrategyKind::SplB))).unwrap();
        let map = result.mean_ap.unwrap();
        assert!((0.0..=1.0).contains(&map), "mAP {map}");
    }
}
