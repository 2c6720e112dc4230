//! Six-choice benchmark harness: loading and validating question files,
//! letter extraction, graded evaluation with retries, per-category
//! reports, and generation prompts for new questions.

pub mod eval;
pub mod extract;
pub mod fixture;
pub mod generate;
pub mod question;
pub mod targets;

use thiserror::Error;

pub use eval::{
    build_report, evaluate, Attempt, BenchReport, Bucket, EvalConfig, EvalRecord, SutError,
    SystemUnderTest, REPORT_SCHEMA_VERSION,
};
pub use extract::{extract_choice, EXTRACTOR_VERSION};
pub use generate::{compose_generation_prompt, load_cases, validate_generated, CaseReport, Verdict};
pub use question::{
    load_benchmark, parse_benchmark, BenchmarkQuestion, Competency, Issue, IssueKind, LoadReport,
    QuestionType, LETTERS,
};
pub use targets::{AgentTarget, BackendTarget, ImageResolver};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid record(s), {valid} valid", issues.len())]
    Invalid { valid: usize, issues: Vec<Issue> },
    #[error("case file line {line}: {detail}")]
    Case { line: usize, detail: String },
}
