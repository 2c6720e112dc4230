//! Compose question-generation prompts from case reports and screen a
//! generated question against its case.
//!
//!     cargo run --example gen_prompts -- [cases.jsonl]

use std::path::PathBuf;

use anyhow::Result;
use cxr_agent::bench::{compose_generation_prompt, load_cases, validate_generated, BenchmarkQuestion, QuestionType, Verdict};

fn main() -> Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/bench/cases.jsonl"));
    let cases = load_cases(&path)?;
    let case = &cases[0];
    println!("{}\n", compose_generation_prompt(case, QuestionType::DetailedFindingAnalysis));

    // what a generator might return, once grounded and once not
    let grounded = r#"{"id":"g1","case_id":"case-cxr-1","question":"Which finding is present?",
        "options":{"A":"Moderate right pleural effusion","B":"Left pneumothorax","C":"Cardiomegaly",
                   "D":"Pneumoperitoneum","E":"Rib fracture","F":"Hilar mass"},
        "answer":"A","competencies":["detection","localization","characterization"],
        "question_type":"detailed_finding_analysis"}"#;
    let ungrounded = grounded.replace("Moderate right pleural effusion", "Right apical cavitation");
    for text in [grounded.to_string(), ungrounded] {
        let q: BenchmarkQuestion = serde_json::from_str(&text)?;
        let verdict = validate_generated(&q, case);
        let label = match &verdict {
            Verdict::Accept => "accepted".to_string(),
            Verdict::Reject(kind) => format!("rejected ({})", kind.as_str()),
        };
        println!("answer {:?}: {label}", q.answer_text());
    }
    Ok(())
}
