//! Failure categories and their exit codes.
//!
//! Every runtime failure leaves the process through one of four documented
//! exit codes, after printing a single machine-parseable line to stderr:
//! `error[<category>]: <message>`. (Flag-syntax errors are handled by clap
//! before a command runs; they also exit 2.)

use std::fmt;
use std::process::ExitCode;

use spl_core::corpus::CorpusError;
use spl_core::eval::EvalError;
use spl_core::model::ModelError;
use spl_core::pipeline::PipelineError;
use spl_core::record::RecordError;
use spl_core::relabel::RelabelError;

/// A failed invocation, bucketed by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: flags or configuration values the command cannot act on.
    Usage(String),
    /// Exit 3: missing, unreadable, unwritable, or malformed files.
    Format(String),
    /// Exit 4: training or scoring produced non-finite numbers.
    Numeric(String),
    /// Exit 5: states that should be unreachable.
    Internal(String),
}

/// The variant constructor matching an error's category.
type Make = fn(String) -> CliError;

impl CliError {
    /// The category name printed inside `error[...]`.
    #[must_use]
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Format(_) => "format",
            CliError::Numeric(_) => "numeric",
            CliError::Internal(_) => "internal",
        }
    }

    /// The process exit code for this category.
    #[must_use]
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Internal(_) => 5,
        })
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Format(m) | CliError::Numeric(m) | CliError::Internal(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category(), self.message())
    }
}

fn corpus_category(_: &CorpusError) -> Make {
    // The only corpus error is a spec that cannot generate anything, and
    // specs come straight from flags or the config file.
    CliError::Usage
}

fn record_category(err: &RecordError) -> Make {
    match err {
        RecordError::ClassCountTooSmall(_) => CliError::Usage,
        RecordError::Io(_) | RecordError::Parse { .. } => CliError::Format,
    }
}

fn relabel_category(err: &RelabelError) -> Make {
    match err {
        RelabelError::BudgetRequired { .. }
        | RelabelError::BudgetTooSmall { .. }
        | RelabelError::BudgetTooLarge { .. }
        | RelabelError::BudgetNotApplicable { .. }
        | RelabelError::NotASplStrategy { .. }
        | RelabelError::NotABaseline { .. } => CliError::Usage,
        RelabelError::EmptyMatrix
        | RelabelError::LabelOutOfRange { .. }
        | RelabelError::MissingTeacherPred { .. }
        | RelabelError::ShapeMismatch { .. }
        | RelabelError::CsvParse { .. }
        | RelabelError::InvalidLabelSpace(_)
        | RelabelError::Io(_) => CliError::Format,
        RelabelError::Record(inner) => record_category(inner),
    }
}

fn model_category(err: &ModelError) -> Make {
    match err {
        ModelError::NonFiniteLoss { .. } => CliError::Numeric,
        ModelError::InvalidConfig(_) => CliError::Usage,
        ModelError::DimensionMismatch { .. }
        | ModelError::LabelOutOfRange { .. }
        | ModelError::EmptyDataset
        | ModelError::InvalidCheckpoint(_)
        | ModelError::Io(_) => CliError::Format,
    }
}

fn eval_category(err: &EvalError) -> Make {
    match err {
        EvalError::KOutOfRange { .. } | EvalError::BackgroundOutOfRange { .. } => CliError::Usage,
        EvalError::NonFiniteScore { .. } => CliError::Numeric,
        EvalError::Model(inner) => model_category(inner),
        _ => CliError::Format,
    }
}

fn pipeline_category(err: &PipelineError) -> Make {
    match err {
        PipelineError::InvalidConfig(_) => CliError::Usage,
        PipelineError::MissingLabel { .. } => CliError::Format,
        PipelineError::Corpus { source, .. } => corpus_category(source),
        PipelineError::Relabel { source, .. } => relabel_category(source),
        PipelineError::Model { source, .. } => model_category(source),
        PipelineError::Eval { source, .. } => eval_category(source),
    }
}

impl From<CorpusError> for CliError {
    fn from(err: CorpusError) -> Self {
        corpus_category(&err)(err.to_string())
    }
}

impl From<RecordError> for CliError {
    fn from(err: RecordError) -> Self {
        record_category(&err)(err.to_string())
    }
}

impl From<RelabelError> for CliError {
    fn from(err: RelabelError) -> Self {
        relabel_category(&err)(err.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        model_category(&err)(err.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        eval_category(&err)(err.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        pipeline_category(&err)(err.to_string())
    }
}
