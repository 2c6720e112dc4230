//! The synthetic 50-question benchmark and the scripted policy authored
//! alongside it. Each question has a planned outcome; the policy answers
//! exactly as planned, so evaluation must reproduce the planned accuracy.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use super::generate::CaseReport;
use super::question::{BenchmarkQuestion, Competency, QuestionType, LETTERS};
use crate::backend::{Decision, ScriptedPolicy, Trigger};
use crate::fleet::fixtures::{fixture_images, CONFLICT_QUESTION, CXR_1, CXR_2, CXR_3};
use crate::toolkit::ToolCall;

pub const FIXTURE_QUESTIONS: usize = 50;
pub const BENCH_FILE: &str = "fixture_50.jsonl";
pub const POLICY_FILE: &str = "fixture_policy.json";
pub const CASES_FILE: &str = "cases.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Correct,
    Wrong,
    /// Names two letters, so extraction fails on every attempt.
    Ambiguous,
}

pub fn planned_outcome(index: usize) -> Outcome {
    if index % 12 == 5 {
        Outcome::Ambiguous
    } else if index % 8 == 3 {
        Outcome::Wrong
    } else {
        Outcome::Correct
    }
}

struct Template {
    image: &'static str,
    stem: &'static str,
    correct: &'static str,
    distractors: [&'static str; 5],
    tools: fn() -> Vec<ToolCall>,
}

fn call(tool: &str, args: serde_json::Value) -> ToolCall {
    let mut args = args;
    args["image"] = json!("{{image:0}}");
    ToolCall::new("planned", tool, args)
}

fn templates() -> Vec<Template> {
    vec![
        Template {
            image: CXR_1,
            stem: "Which abnormality is most prominent on this radiograph?",
            correct: "Right pleural effusion",
            distractors: ["Left apical pneumothorax", "Cardiomegaly", "Right upper lobe mass", "Pneumoperitoneum", "No abnormality"],
            tools: || vec![call("classifier", json!({}))],
        },
        Template {
            image: CXR_1,
            stem: "Where does the pleural fluid collect?",
            correct: "Right costophrenic region",
            distractors: ["Left apex", "Aortopulmonary window", "Left costophrenic region", "Right paratracheal stripe", "Retrocardiac region"],
            tools: || vec![call("grounding", json!({"phrase": "pleural effusion"}))],
        },
        Template {
            image: CXR_1,
            stem: "What accompanies the fluid at the lung base?",
            correct: "Basilar atelectasis",
            distractors: ["Cavitating mass", "Rib fracture", "Hiatal hernia", "Pneumomediastinum", "Miliary nodules"],
            tools: || vec![call("report_generation", json!({})), call("vqa", json!({"question": "is there a pleural effusion?"}))],
        },
        Template {
            image: CXR_1,
            stem: "How does the cardiac silhouette relate to the effusion?",
            correct: "Heart size normal",
            distractors: ["Heart displaced to the right", "Globular enlarged heart", "Pericardial calcification", "Heart obscured by mass", "Dextrocardia"],
            tools: || vec![call("segmentation", json!({"region": "heart"})), call("report_generation", json!({}))],
        },
        Template {
            image: CXR_2,
            stem: "Which finding is suggested in the upper zone?",
            correct: "Left apical pneumothorax",
            distractors: ["Right pleural effusion", "Apical lung mass", "Consolidation", "Pulmonary edema", "Normal lung apex"],
            tools: || vec![call("classifier", json!({})), call("vqa", json!({"question": CONFLICT_QUESTION}))],
        },
        Template {
            image: CXR_2,
            stem: "Where is the hyperlucent region?",
            correct: "Left upper zone",
            distractors: ["Right lower zone", "Retrocardiac region", "Right upper zone", "Left lower zone", "Subdiaphragmatic region"],
            tools: || vec![call("grounding", json!({"phrase": "pneumothorax"}))],
        },
        Template {
            image: CXR_2,
            stem: "Which feature supports the suspected air collection?",
            correct: "Absent lung markings",
            distractors: ["Air bronchograms", "Kerley lines", "Blunted costophrenic angle", "Tracheal deviation to the left", "Widened mediastinum"],
            tools: || vec![call("report_generation", json!({}))],
        },
        Template {
            image: CXR_3,
            stem: "What best explains the enlarged silhouette and vascular pattern?",
            correct: "Cardiomegaly with pulmonary edema",
            distractors: ["Pericardial effusion alone", "Lobar pneumonia", "Pneumothorax", "Mediastinal lymphoma", "Normal variant"],
            tools: || vec![call("classifier", json!({}))],
        },
        Template {
            image: CXR_3,
            stem: "Which vascular sign is present?",
            correct: "Cephalization of pulmonary vessels",
            distractors: ["Pruning of peripheral vessels", "Westermark sign", "Enlarged azygos vein only", "Normal vascular pattern", "Hilar calcification"],
            tools: || vec![call("report_generation", json!({})), call("vqa", json!({"question": "is the heart enlarged?"}))],
        },
        Template {
            image: CXR_3,
            stem: "Which clinical diagnosis do the findings support?",
            correct: "Congestive heart failure",
            distractors: ["Pulmonary embolism", "Sarcoidosis", "Tuberculosis", "Asbestosis", "Aspiration"],
            tools: || vec![call("segmentation", json!({"region": "heart"})), call("classifier", json!({}))],
        },
    ]
}

pub fn fixture_cases() -> Vec<CaseReport> {
    let case = |id: &str, image: &str, history: &str, findings: &str, discussion: &str, dx: &str, age, gender: &str, area: &[&str]| {
        CaseReport {
            case_id: id.into(),
            history: history.into(),
            findings: findings.into(),
            discussion: discussion.into(),
            differential: Vec::new(),
            final_diagnosis: dx.into(),
            age: Some(age),
            gender: Some(gender.into()),
            area_of_interest: area.iter().map(|s| s.to_string()).collect(),
            images: vec![format!("images/{image}.png")],
        }
    };
    let mut cases = vec![
        case(
            "case-cxr-1",
            CXR_1,
            "Progressive dyspnoea and low-grade fever for two weeks.",
            "Moderate right pleural effusion with adjacent basilar atelectasis. Fluid collects in the right costophrenic region. Heart size normal.",
            "The effusion is most likely parapneumonic; the atelectasis is compressive.",
            "Parapneumonic effusion",
            64,
            "female",
            &["lung", "pleura"],
        ),
        case(
            "case-cxr-2",
            CXR_2,
            "Sudden pleuritic chest pain in a tall young smoker.",
            "Hyperlucent left upper zone with absent lung markings; visceral pleural line not clearly seen.",
            "Appearances suggest a left apical pneumothorax; an expiratory film may help confirm it.",
            "Primary spontaneous pneumothorax",
            23,
            "male",
            &["lung", "thorax"],
        ),
        case(
            "case-cxr-3",
            CXR_3,
            "Orthopnoea and ankle swelling.",
            "Enlarged cardiac silhouette with cephalization of pulmonary vessels and interstitial edema.",
            "Cardiomegaly with pulmonary edema, in keeping with congestive heart failure.",
            "Congestive heart failure",
            78,
            "male",
            &["heart", "mediastinum"],
        ),
    ];
    cases[0].differential = vec!["empyema".into(), "malignant effusion".into()];
    cases[1].differential = vec!["bulla".into(), "skin fold".into()];
    cases[2].differential = vec!["pericardial effusion".into(), "fluid overload".into()];
    cases
}

fn case_for(image: &str) -> &'static str {
    match image {
        CXR_1 => "case-cxr-1",
        CXR_2 => "case-cxr-2",
        _ => "case-cxr-3",
    }
}

fn answer_text(i: usize, letter: char, text: &str) -> String {
    match i % 4 {
        0 => format!("The answer is {letter}."),
        1 => format!("{letter}) {text}"),
        2 => format!("Based on the tool outputs, the answer is ({letter})."),
        _ => format!("Answer: {letter}"),
    }
}

/// Questions, policy and planned correct count.
pub fn fixture_benchmark() -> (Vec<BenchmarkQuestion>, ScriptedPolicy) {
    let templates = templates();
    let mut questions = Vec::new();
    let mut policy = ScriptedPolicy::new(Decision::respond(
        "No rule matched this question.",
        "I cannot determine the answer.",
    ));
    for i in 0..FIXTURE_QUESTIONS {
        let t = &templates[i % templates.len()];
        let qtype = QuestionType::ALL[i % 5];
        let all = qtype.competencies();
        let competencies: Vec<Competency> = if i % 4 == 0 { all[..2].to_vec() } else { all.to_vec() };
        let answer = LETTERS[(i * 7 + 3) % 6];
        let mut distractors = t.distractors.iter();
        let options: BTreeMap<char, String> = LETTERS
            .into_iter()
            .map(|l| {
                let text = if l == answer { t.correct } else { distractors.next().expect("five distractors") };
                (l, text.to_string())
            })
            .collect();
        let stem = format!("Item {:02}. {}", i + 1, t.stem);
        questions.push(BenchmarkQuestion {
            id: format!("fx-{:02}", i + 1),
            case_id: case_for(t.image).into(),
            question: stem.clone(),
            options,
            answer,
            competencies,
            question_type: qtype,
            images: vec![format!("images/{}.png", t.image)],
        });

        let reply = match planned_outcome(i) {
            Outcome::Correct => answer_text(i, answer, t.correct),
            Outcome::Wrong => {
                let wrong = LETTERS[(LETTERS.iter().position(|&l| l == answer).unwrap() + 1) % 6];
                answer_text(i, wrong, "")
            }
            Outcome::Ambiguous => {
                let other = LETTERS[(LETTERS.iter().position(|&l| l == answer).unwrap() + 3) % 6];
                let (a, b) = if answer < other { (answer, other) } else { (other, answer) };
                format!("Both {a} and {b} seem plausible from the tool outputs.")
            }
        };
        let calls = (t.tools)();
        let tool_names: Vec<&str> = calls.iter().map(|c| c.tool.as_str()).collect();
        let respond = Decision::respond(format!("The {} output settles it.", tool_names.join(" and ")), reply);
        if i % 10 == 9 {
            // answered from the question alone, no tools
            policy = policy.rule(Trigger::contains(stem.as_str()), respond);
        } else {
            policy = policy
                .rule(
                    Trigger::all([Trigger::contains(stem.as_str()), Trigger::contains("Observations from cycle 0")]),
                    respond,
                )
                .rule(
                    Trigger::contains(stem.as_str()),
                    Decision::call_tools(format!("Consult {} first.", tool_names.join(" and ")), calls),
                );
        }
    }
    (questions, policy)
}

/// Write the benchmark, policy, cases and images under `dir`.
pub fn write_fixture_files(dir: &Path) -> std::io::Result<()> {
    let (questions, policy) = fixture_benchmark();
    std::fs::create_dir_all(dir.join("images"))?;
    let lines: String = questions
        .iter()
        .map(|q| serde_json::to_string(q).expect("question serializes") + "\n")
        .collect();
    std::fs::write(dir.join(BENCH_FILE), lines)?;
    std::fs::write(
        dir.join(POLICY_FILE),
        serde_json::to_string_pretty(&policy).expect("policy serializes") + "\n",
    )?;
    let cases: String = fixture_cases()
        .iter()
        .map(|c| serde_json::to_string(c).expect("case serializes") + "\n")
        .collect();
    std::fs::write(dir.join(CASES_FILE), cases)?;
    for img in fixture_images() {
        std::fs::write(dir.join("images").join(format!("{}.png", img.name)), &img.png)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generate::{validate_generated, Verdict};

    #[test]
    fn plan_counts() {
        let plan: Vec<Outcome> = (0..FIXTURE_QUESTIONS).map(planned_outcome).collect();
        assert_eq!(plan.iter().filter(|o| **o == Outcome::Correct).count(), 40);
        assert_eq!(plan.iter().filter(|o| **o == Outcome::Wrong).count(), 6);
        assert_eq!(plan.iter().filter(|o| **o == Outcome::Ambiguous).count(), 4);
    }

    #[test]
    fn questions_are_valid_and_grounded() {
        let (qs, _) = fixture_benchmark();
        let cases = fixture_cases();
        for q in &qs {
            assert!(q.check().is_empty(), "{}: {:?}", q.id, q.check());
            let case = cases.iter().find(|c| c.case_id == q.case_id).unwrap();
            assert_eq!(validate_generated(q, case), Verdict::Accept, "{}", q.id);
        }
    }
}
