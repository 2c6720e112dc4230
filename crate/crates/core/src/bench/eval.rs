use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::extract::{extract_choice, EXTRACTOR_VERSION};
use super::question::{BenchmarkQuestion, Competency, QuestionType};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SutError {
    /// Error or timeout for this query; the harness retries.
    #[error("{0}")]
    Transient(String),
    /// The system cannot be reached at all; evaluation stops.
    #[error("{0}")]
    Fatal(String),
}

/// Whatever answers benchmark prompts: an agent, a bare backend, a remote
/// gateway, or a test stub.
#[async_trait]
pub trait SystemUnderTest: Send + Sync {
    /// `attempt` is 1-based.
    async fn answer(
        &self,
        question: &BenchmarkQuestion,
        prompt: &str,
        attempt: u32,
    ) -> Result<String, SutError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub response: String,
    pub letter: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub attempts: Vec<Attempt>,
    /// `None` means the answer stayed invalid.
    pub final_letter: Option<char>,
    pub correct: bool,
    pub elapsed_ms: u64,
}

impl EvalRecord {
    pub fn invalid(&self) -> bool {
        self.final_letter.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub total: u64,
    pub correct: u64,
    /// Percentage; 0 for an empty bucket.
    pub accuracy: f64,
}

impl Bucket {
    fn new(total: u64, correct: u64) -> Self {
        Self {
            total,
            correct,
            accuracy: percent(correct, total),
        }
    }
}

fn percent(correct: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 * 100.0 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub extractor_version: u32,
    /// Questions in the benchmark, evaluated or not.
    pub questions: u64,
    /// Questions with a record.
    pub total: u64,
    pub correct: u64,
    pub invalid: u64,
    pub accuracy: f64,
    /// All seven competencies, tagged questions counted in each of their tags.
    pub by_competency: BTreeMap<Competency, Bucket>,
    pub by_question_type: BTreeMap<QuestionType, Bucket>,
    /// Evaluation stopped early because the system became unreachable.
    pub incomplete: bool,
    /// Ordered by question id.
    pub records: Vec<EvalRecord>,
}

/// Fold records into a report. Records for unknown question ids are
/// ignored in the per-category buckets but still count overall.
pub fn build_report(
    questions: &[BenchmarkQuestion],
    mut records: Vec<EvalRecord>,
    incomplete: bool,
) -> BenchReport {
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let by_id: HashMap<&str, &BenchmarkQuestion> =
        questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut comp: BTreeMap<Competency, (u64, u64)> =
        Competency::ALL.into_iter().map(|c| (c, (0, 0))).collect();
    let mut qtype: BTreeMap<QuestionType, (u64, u64)> =
        QuestionType::ALL.into_iter().map(|t| (t, (0, 0))).collect();
    let (mut correct, mut invalid) = (0, 0);
    for r in &records {
        let hit = u64::from(r.correct);
        correct += hit;
        invalid += u64::from(r.invalid());
        if let Some(q) = by_id.get(r.question_id.as_str()) {
            for c in &q.competencies {
                let b = comp.entry(*c).or_default();
                b.0 += 1;
                b.1 += hit;
            }
            let b = qtype.entry(q.question_type).or_default();
            b.0 += 1;
            b.1 += hit;
        }
    }
    let total = records.len() as u64;
    BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        extractor_version: EXTRACTOR_VERSION,
        questions: questions.len() as u64,
        total,
        correct,
        invalid,
        accuracy: percent(correct, total),
        by_competency: comp.into_iter().map(|(k, (t, c))| (k, Bucket::new(t, c))).collect(),
        by_question_type: qtype.into_iter().map(|(k, (t, c))| (k, Bucket::new(t, c))).collect(),
        incomplete,
        records,
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Queries per question before it is marked invalid.
    pub retries: u32,
    pub concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            retries: 3,
            concurrency: 4,
        }
    }
}

async fn evaluate_one(
    q: &BenchmarkQuestion,
    sut: &dyn SystemUnderTest,
    retries: u32,
    abort: &AtomicBool,
) -> Option<EvalRecord> {
    let started = Instant::now();
    let prompt = q.prompt();
    let mut attempts = Vec::new();
    let mut final_letter = None;
    for attempt in 1..=retries.max(1) {
        if abort.load(Ordering::SeqCst) {
            return None;
        }
        match sut.answer(q, &prompt, attempt).await {
            Ok(text) => {
                let letter = extract_choice(&text);
                attempts.push(Attempt {
                    response: text,
                    letter,
                    error: None,
                });
                if letter.is_some() {
                    final_letter = letter;
                    break;
                }
            }
            Err(SutError::Transient(e)) => attempts.push(Attempt {
                response: String::new(),
                letter: None,
                error: Some(e),
            }),
            Err(SutError::Fatal(e)) => {
                tracing::error!(question = %q.id, error = %e, "system under test unreachable");
                abort.store(true, Ordering::SeqCst);
                return None;
            }
        }
    }
    Some(EvalRecord {
        question_id: q.id.clone(),
        correct: final_letter == Some(q.answer),
        final_letter,
        attempts,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

/// Run every question through `sut` and grade it.
pub async fn evaluate(
    questions: &[BenchmarkQuestion],
    sut: &dyn SystemUnderTest,
    config: &EvalConfig,
) -> BenchReport {
    let abort = AtomicBool::new(false);
    let records: Vec<EvalRecord> = stream::iter(questions)
        .map(|q| evaluate_one(q, sut, config.retries, &abort))
        .buffer_unordered(config.concurrency.max(1))
        .filter_map(|r| async move { r })
        .collect()
        .await;
    build_report(questions, records, abort.load(Ordering::SeqCst))
}
