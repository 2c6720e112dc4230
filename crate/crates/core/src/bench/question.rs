use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BenchError;

pub const LETTERS: [char; 6] = ['A', 'B', 'C', 'D', 'E', 'F'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Competency {
    Detection,
    Classification,
    Localization,
    Comparison,
    Relationship,
    Diagnosis,
    Characterization,
}

impl Competency {
    pub const ALL: [Competency; 7] = [
        Competency::Detection,
        Competency::Classification,
        Competency::Localization,
        Competency::Comparison,
        Competency::Relationship,
        Competency::Diagnosis,
        Competency::Characterization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Competency::Detection => "detection",
            Competency::Classification => "classification",
            Competency::Localization => "localization",
            Competency::Comparison => "comparison",
            Competency::Relationship => "relationship",
            Competency::Diagnosis => "diagnosis",
            Competency::Characterization => "characterization",
        }
    }

    /// Wording used in generation prompts.
    pub fn skill_name(self) -> &'static str {
        match self {
            Competency::Relationship => "relationships",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for Competency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Competency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        let norm = norm.strip_suffix('s').filter(|n| *n == "relationship").unwrap_or(&norm);
        Competency::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| format!("unknown competency {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    DetailedFindingAnalysis,
    PatternRecognition,
    SpatialUnderstanding,
    ClinicalDecisionMaking,
    DiagnosticCharacterization,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] = [
        QuestionType::DetailedFindingAnalysis,
        QuestionType::PatternRecognition,
        QuestionType::SpatialUnderstanding,
        QuestionType::ClinicalDecisionMaking,
        QuestionType::DiagnosticCharacterization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::DetailedFindingAnalysis => "detailed_finding_analysis",
            QuestionType::PatternRecognition => "pattern_recognition",
            QuestionType::SpatialUnderstanding => "spatial_understanding",
            QuestionType::ClinicalDecisionMaking => "clinical_decision_making",
            QuestionType::DiagnosticCharacterization => "diagnostic_characterization",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            QuestionType::DetailedFindingAnalysis => "Detailed Finding Analysis",
            QuestionType::PatternRecognition => "Pattern Recognition & Relations",
            QuestionType::SpatialUnderstanding => "Spatial Understanding",
            QuestionType::ClinicalDecisionMaking => "Clinical Decision Making",
            QuestionType::DiagnosticCharacterization => "Diagnostic Characterization",
        }
    }

    /// The three competencies each type combines.
    pub fn competencies(self) -> [Competency; 3] {
        use Competency::*;
        match self {
            QuestionType::DetailedFindingAnalysis => [Detection, Localization, Characterization],
            QuestionType::PatternRecognition => [Detection, Classification, Relationship],
            QuestionType::SpatialUnderstanding => [Localization, Comparison, Relationship],
            QuestionType::ClinicalDecisionMaking => [Classification, Comparison, Diagnosis],
            QuestionType::DiagnosticCharacterization => [Classification, Characterization, Diagnosis],
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionType {
    type Err = String;

    /// Accepts the snake_case id or the display name, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .replace("& relations", "")
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        QuestionType::ALL
            .into_iter()
            .find(|t| t.as_str() == key)
            .ok_or_else(|| format!("unknown question type {s:?}"))
    }
}

/// One six-choice benchmark item. Stored one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkQuestion {
    pub id: String,
    pub case_id: String,
    pub question: String,
    pub options: BTreeMap<char, String>,
    pub answer: char,
    pub competencies: Vec<Competency>,
    pub question_type: QuestionType,
    /// Paths relative to the benchmark file, or artifact ids.
    #[serde(default)]
    pub images: Vec<String>,
}

impl BenchmarkQuestion {
    /// Stem, lettered options and the single-letter instruction.
    pub fn prompt(&self) -> String {
        let mut out = format!("{}\n\n", self.question);
        for (letter, text) in &self.options {
            out.push_str(&format!("{letter}. {text}\n"));
        }
        out.push_str("\nAnswer with a single letter (A-F).");
        out
    }

    pub fn answer_text(&self) -> Option<&str> {
        self.options.get(&self.answer).map(String::as_str)
    }

    /// Invariant checks, in a fixed order.
    pub fn check(&self) -> Vec<IssueKind> {
        let mut issues = Vec::new();
        if self.id.trim().is_empty() {
            issues.push(IssueKind::MissingId);
        }
        if self.question.trim().is_empty() {
            issues.push(IssueKind::EmptyQuestion);
        }
        let keys: BTreeSet<char> = self.options.keys().copied().collect();
        if keys != LETTERS.into_iter().collect() {
            issues.push(IssueKind::ExactlySixOptions);
        }
        if !self.options.contains_key(&self.answer) || !LETTERS.contains(&self.answer) {
            issues.push(IssueKind::AnswerNotInOptions);
        }
        if self.options.values().any(|t| t.trim().is_empty()) {
            issues.push(IssueKind::EmptyOption);
        }
        if self.competencies.is_empty() {
            issues.push(IssueKind::EmptyCompetencies);
        } else {
            let allowed = self.question_type.competencies();
            if self.competencies.iter().any(|c| !allowed.contains(c)) {
                issues.push(IssueKind::CompetencyTypeMismatch);
            }
            let unique: BTreeSet<_> = self.competencies.iter().collect();
            if unique.len() != self.competencies.len() {
                issues.push(IssueKind::DuplicateCompetency);
            }
        }
        issues
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    ParseError,
    MissingId,
    DuplicateId,
    EmptyQuestion,
    ExactlySixOptions,
    AnswerNotInOptions,
    EmptyOption,
    EmptyCompetencies,
    DuplicateCompetency,
    CompetencyTypeMismatch,
    UngroundedAnswer,
}

impl IssueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueKind::ParseError => "parse_error",
            IssueKind::MissingId => "missing_id",
            IssueKind::DuplicateId => "duplicate_id",
            IssueKind::EmptyQuestion => "empty_question",
            IssueKind::ExactlySixOptions => "exactly_six_options",
            IssueKind::AnswerNotInOptions => "answer_not_in_options",
            IssueKind::EmptyOption => "empty_option",
            IssueKind::EmptyCompetencies => "empty_competencies",
            IssueKind::DuplicateCompetency => "duplicate_competency",
            IssueKind::CompetencyTypeMismatch => "competency_type_mismatch",
            IssueKind::UngroundedAnswer => "ungrounded_answer",
        }
    }
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    /// 1-based line in the source file.
    pub line: usize,
    pub id: Option<String>,
    pub kind: IssueKind,
    pub detail: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {} ({}): {}",
            self.line,
            self.id.as_deref().unwrap_or("?"),
            self.kind
        )?;
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub questions: Vec<BenchmarkQuestion>,
    pub issues: Vec<Issue>,
}

#[derive(Deserialize)]
struct RawQuestion {
    #[serde(default)]
    id: String,
    #[serde(default)]
    case_id: String,
    #[serde(default)]
    question: String,
    #[serde(default)]
    options: BTreeMap<String, String>,
    #[serde(default)]
    answer: String,
    #[serde(default)]
    competencies: Vec<String>,
    #[serde(default)]
    question_type: String,
    #[serde(default)]
    images: Vec<String>,
}

fn single_letter(s: &str) -> Option<char> {
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c.to_ascii_uppercase()),
        _ => None,
    }
}

/// Parse benchmark lines, keeping every valid question and itemizing the
/// rest. Blank lines and lines starting with `#` are skipped.
pub fn parse_benchmark(text: &str) -> LoadReport {
    let mut report = LoadReport::default();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut push = |id: Option<String>, kind, detail: String| {
            report.issues.push(Issue {
                line: line_no,
                id,
                kind,
                detail,
            })
        };
        let raw: RawQuestion = match serde_json::from_str(trimmed) {
            Ok(r) => r,
            Err(e) => {
                push(None, IssueKind::ParseError, e.to_string());
                continue;
            }
        };
        let id = Some(raw.id.clone()).filter(|s| !s.is_empty());
        let question_type = match raw.question_type.parse::<QuestionType>() {
            Ok(t) => t,
            Err(e) => {
                push(id, IssueKind::ParseError, e);
                continue;
            }
        };
        let competencies: Result<Vec<Competency>, String> =
            raw.competencies.iter().map(|c| c.parse()).collect();
        let competencies = match competencies {
            Ok(c) => c,
            Err(e) => {
                push(id, IssueKind::ParseError, e);
                continue;
            }
        };
        let mut options = BTreeMap::new();
        let mut bad_key = None;
        for (k, v) in raw.options {
            match single_letter(&k) {
                Some(letter) => {
                    options.insert(letter, v);
                }
                None => bad_key = Some(k),
            }
        }
        let answer = single_letter(&raw.answer).unwrap_or('?');
        let q = BenchmarkQuestion {
            id: raw.id,
            case_id: raw.case_id,
            question: raw.question,
            options,
            answer,
            competencies,
            question_type,
            images: raw.images,
        };
        let mut issues = q.check();
        if bad_key.is_some() && !issues.contains(&IssueKind::ExactlySixOptions) {
            issues.push(IssueKind::ExactlySixOptions);
        }
        if !q.id.is_empty() && !seen.insert(q.id.clone()) {
            issues.push(IssueKind::DuplicateId);
        }
        if issues.is_empty() {
            report.questions.push(q);
        } else {
            for kind in issues {
                let detail = match kind {
                    IssueKind::ExactlySixOptions => format!(
                        "options {:?}",
                        q.options.keys().collect::<String>()
                    ),
                    IssueKind::AnswerNotInOptions => format!("answer {:?}", raw.answer),
                    IssueKind::CompetencyTypeMismatch => format!(
                        "{} allows {:?}",
                        q.question_type,
                        q.question_type.competencies().map(Competency::as_str)
                    ),
                    _ => String::new(),
                };
                push(id.clone(), kind, detail);
            }
        }
    }
    report
}

/// Load a benchmark file. Any invalid record fails the load after every
/// line has been checked; the error lists all issues.
pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Vec<BenchmarkQuestion>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let report = parse_benchmark(&text);
    if report.issues.is_empty() {
        Ok(report.questions)
    } else {
        Err(BenchError::Invalid {
            valid: report.questions.len(),
            issues: report.issues,
        })
    }
}
