//! Parameter sweeps over fused decoding: grid enumeration, the sweep
//! runner with checkpoint/resume, ROUGE-L, judge-score adapters and the
//! ablation-style reports.

pub mod grid;
pub mod judge;
pub mod records;
pub mod report;
pub mod rouge;
pub mod subset;
pub mod sweep;

use thiserror::Error;

pub use grid::{enumerate_configs, GridConfig, SweepGrid};
pub use judge::{HttpJudge, JudgeError, JudgeReport, OfflineScores};
pub use records::{
    judge_aggregate, parse_questions, read_questions, read_records, summarize, write_records,
    EvalRecord, JudgeAggregate, Question, SweepItem, SweepResult,
};
pub use report::{marginal_tables, write_marginals, write_results_csv, MarginalRow, MarginalTable};
pub use rouge::{rouge_l, rouge_l_tokens, tokenize, ROUGE_BETA};
pub use subset::sample_subset;
pub use sweep::{run_sweep, SweepOptions, SweepOutcome};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sweep grid axis {0} is empty")]
    EmptyAxis(&'static str),
    #[error(transparent)]
    Fusion(#[from] dualfuse_core::FusionError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("checkpoint {path} does not match this sweep: {message}")]
    CheckpointMismatch { path: String, message: String },
    #[error("no questions to evaluate")]
    NoQuestions,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}
