//! Building new benchmark items from structured case reports: prompt
//! composition for an external model and structural checks on its output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::question::{BenchmarkQuestion, IssueKind, QuestionType};
use super::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    #[serde(default)]
    pub history: String,
    pub findings: String,
    pub discussion: String,
    #[serde(default)]
    pub differential: Vec<String>,
    #[serde(default)]
    pub final_diagnosis: String,
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub area_of_interest: Vec<String>,
    #[serde(default)]
    pub images: Vec<String>,
}

impl CaseReport {
    pub fn is_valid(&self) -> bool {
        !self.findings.trim().is_empty() && !self.discussion.trim().is_empty()
    }
}

/// Read cases, one JSON object per line. Cases without findings or
/// discussion are rejected.
pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<CaseReport>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let case: CaseReport = serde_json::from_str(line).map_err(|e| BenchError::Case {
            line: i + 1,
            detail: e.to_string(),
        })?;
        if !case.is_valid() {
            return Err(BenchError::Case {
                line: i + 1,
                detail: format!("case {} needs non-empty findings and discussion", case.case_id),
            });
        }
        cases.push(case);
    }
    Ok(cases)
}

fn join_skills(qtype: QuestionType) -> String {
    let [a, b, c] = qtype.competencies().map(|c| c.skill_name());
    format!("{a}, {b}, and {c}")
}

/// Prompt asking a model for one six-choice question of type `qtype` about
/// `case`. Deterministic in its inputs.
pub fn compose_generation_prompt(case: &CaseReport, qtype: QuestionType) -> String {
    let mut p = String::new();
    let _ = writeln!(
        p,
        "You are writing one six-choice question for a chest X-ray reasoning benchmark."
    );
    let _ = writeln!(
        p,
        "Question type: {} (tests {}, together with medical reasoning).",
        qtype.display_name(),
        join_skills(qtype)
    );
    p.push('\n');
    let _ = writeln!(p, "Case {}", case.case_id);
    if let Some(age) = case.age {
        let _ = writeln!(p, "Age: {age}");
    }
    if let Some(g) = &case.gender {
        let _ = writeln!(p, "Gender: {g}");
    }
    if !case.area_of_interest.is_empty() {
        let _ = writeln!(p, "Area of interest: {}", case.area_of_interest.join(", "));
    }
    if !case.history.is_empty() {
        let _ = writeln!(p, "History: {}", case.history);
    }
    let _ = writeln!(p, "Findings: {}", case.findings);
    let _ = writeln!(p, "Discussion: {}", case.discussion);
    if !case.differential.is_empty() {
        let _ = writeln!(p, "Differential diagnosis: {}", case.differential.join("; "));
    }
    if !case.final_diagnosis.is_empty() {
        let _ = writeln!(p, "Final diagnosis: {}", case.final_diagnosis);
    }
    p.push('\n');
    p.push_str(
        "Requirements:\n\
         - Give the question the clinical context it needs from this case.\n\
         - Provide exactly six options labelled A to F with exactly one correct option.\n\
         - The correct answer must be explicitly verifiable from the case's radiological findings and discussion; \
         copy its wording from them.\n\
         - Do not reveal the answer in the question stem.\n\
         \n\
         Reply with one JSON object with keys: question, options (object A-F), answer (letter), competencies (list).\n",
    );
    p
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accept,
    Reject(IssueKind),
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Structural checks on a generated question: six options, one answer key
/// among them, and answer text found in the case's findings or discussion.
pub fn validate_generated(question: &BenchmarkQuestion, case: &CaseReport) -> Verdict {
    let issues = question.check();
    for kind in [IssueKind::ExactlySixOptions, IssueKind::AnswerNotInOptions] {
        if issues.contains(&kind) {
            return Verdict::Reject(kind);
        }
    }
    let answer = normalize(question.answer_text().unwrap_or_default());
    let source = format!(" {} {} ", normalize(&case.findings), normalize(&case.discussion));
    if answer.is_empty() || !source.contains(&format!(" {answer} ")) {
        return Verdict::Reject(IssueKind::UngroundedAnswer);
    }
    Verdict::Accept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::question::Competency;

    fn case() -> CaseReport {
        CaseReport {
            case_id: "c1".into(),
            history: "Dyspnoea for two weeks.".into(),
            findings: "Moderate right pleural effusion with adjacent atelectasis.".into(),
            discussion: "The effusion is likely parapneumonic.".into(),
            differential: vec!["empyema".into()],
            final_diagnosis: "Parapneumonic effusion".into(),
            age: Some(64),
            gender: Some("female".into()),
            area_of_interest: vec!["lung".into()],
            images: vec![],
        }
    }

    fn question(answer_text: &str, n: usize) -> BenchmarkQuestion {
        let mut options: std::collections::BTreeMap<char, String> = ['A', 'B', 'C', 'D', 'E', 'F', 'G']
            .into_iter()
            .take(n)
            .map(|l| (l, format!("distractor {l}")))
            .collect();
        options.insert('B', answer_text.into());
        BenchmarkQuestion {
            id: "g1".into(),
            case_id: "c1".into(),
            question: "What is on the right?".into(),
            options,
            answer: 'B',
            competencies: vec![Competency::Detection],
            question_type: QuestionType::DetailedFindingAnalysis,
            images: vec![],
        }
    }

    #[test]
    fn grounded_answer_accepted() {
        assert_eq!(validate_generated(&question("Right pleural effusion", 6), &case()), Verdict::Accept);
    }

    #[test]
    fn absent_finding_rejected() {
        assert_eq!(
            validate_generated(&question("Left pneumothorax", 6), &case()),
            Verdict::Reject(IssueKind::UngroundedAnswer)
        );
    }

    #[test]
    fn seven_options_rejected() {
        assert_eq!(
            validate_generated(&question("Right pleural effusion", 7), &case()),
            Verdict::Reject(IssueKind::ExactlySixOptions)
        );
    }

    #[test]
    fn prompt_names_type_competencies() {
        let p = compose_generation_prompt(&case(), QuestionType::SpatialUnderstanding);
        assert!(p.contains("localization, comparison, and relationships"));
        let p = compose_generation_prompt(&case(), QuestionType::ClinicalDecisionMaking);
        assert!(p.contains("classification, comparison, and diagnosis"));
        assert!(p.contains("explicitly verifiable from the case's radiological findings"));
        assert_eq!(p, compose_generation_prompt(&case(), QuestionType::ClinicalDecisionMaking));
    }
}
