//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines are always printed.

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::pin::Pin;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use cxr_agent::agent::{
    check_observations_reached, validate_transcript, Agent, AgentConfig, AgentTask, EventBody, MemoryBuffer,
    ResponseKind, TimeoutReason,
};
use cxr_agent::backend::{
    BackendContext, BackendError, Decision, ReasoningBackend, RecordingBackend, ScriptedBackend, ScriptedPolicy,
    Trigger,
};
use cxr_agent::bench::fixture::{BENCH_FILE, POLICY_FILE};
use cxr_agent::bench::{
    build_report, evaluate, extract_choice, load_benchmark, AgentTarget, Attempt, BenchmarkQuestion, Competency,
    EvalConfig, EvalRecord, ImageResolver, QuestionType, SutError, SystemUnderTest, LETTERS,
};
use cxr_agent::fleet::fixtures::{fixture_image, CONFLICT_QUESTION, CXR_1, CXR_2};
use cxr_agent::fleet::{FailureMode, FleetConfig, LocalFleet};
use cxr_agent::gateway::{Gateway, GatewayClient, GatewayConfig, StreamFrame};
use cxr_agent::media::display::{window_to_gray, DEGENERATE_GRAY};
use cxr_agent::media::dicom::{EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN};
use cxr_agent::media::{parse_dicom, write_dicom, DicomError, DicomImage, Photometric};
use cxr_agent::toolkit::catalog;
use cxr_agent::toolkit::spec::DEFAULT_TOOL_TIMEOUT_MS;
use cxr_agent::toolkit::{ToolCache, ToolCall};
use futures::StreamExt;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

type Outcome = Result<String, String>;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

// 1 -----------------------------------------------------------------------

async fn determinism() -> Outcome {
    let dir = data("bench");
    let questions = load_benchmark(dir.join(BENCH_FILE)).map_err(|e| e.to_string())?;
    let policy: ScriptedPolicy = serde_json::from_str(
        &std::fs::read_to_string(dir.join(POLICY_FILE)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let mut dumps = Vec::new();
    let mut times = Vec::new();
    for _ in 0..3 {
        let t = Instant::now();
        let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await.map_err(|e| e.to_string())?;
        let target = AgentTarget::new(
            Agent::default(),
            Arc::new(ScriptedBackend::new(policy.clone()).map_err(|e| e.to_string())?),
            fleet.bus.clone(),
            ImageResolver::new(fleet.bus.store().clone(), &dir),
            10_000,
        );
        let r = evaluate(&questions, &target, &EvalConfig::default()).await;
        let wall = t.elapsed();
        ensure(r.total == 50 && r.correct == 40 && r.accuracy == 80.0, || {
            format!("scored {}/{} = {:.1}%", r.correct, r.total, r.accuracy)
        })?;
        ensure(wall < Duration::from_secs(60), || format!("run took {wall:?}"))?;
        dumps.push(target.transcript_dump());
        times.push(wall);
    }
    ensure(dumps.iter().all(|d| d == &dumps[0]), || "transcripts differ between runs".into())?;
    Ok(format!(
        "40/50 = 80.0% in 3 runs, {} transcript bytes identical, slowest run {:?}",
        dumps[0].len(),
        times.iter().max().unwrap()
    ))
}

// 2 -----------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
enum Adversary {
    /// Calls tools forever.
    Loop,
    /// Thinks for 0-2000 ms, then calls tools.
    Slow(u64),
    /// Never answers.
    Never,
    Malformed,
    Retryable,
    /// Calls a tool whose server never replies.
    Hang,
}

struct AdversarialBackend {
    kind: Adversary,
    image: String,
}

#[async_trait]
impl ReasoningBackend for AdversarialBackend {
    async fn decide(&self, _ctx: &BackendContext) -> Result<Decision, BackendError> {
        let tools = |names: &[&str]| {
            Decision::call_tools(
                "keep going",
                names
                    .iter()
                    .map(|n| match *n {
                        catalog::VQA => ToolCall::new("x", *n, json!({"image": self.image, "question": "again?"})),
                        catalog::SEGMENTATION => ToolCall::new("x", *n, json!({"image": self.image, "region": "heart"})),
                        _ => ToolCall::new("x", *n, json!({"image": self.image})),
                    })
                    .collect(),
            )
        };
        match self.kind {
            Adversary::Loop => Ok(tools(&[catalog::CLASSIFIER, catalog::VQA])),
            Adversary::Slow(ms) => {
                tokio::time::sleep(Duration::from_millis(ms)).await;
                Ok(tools(&[catalog::REPORT_GENERATION]))
            }
            Adversary::Never => std::future::pending().await,
            Adversary::Malformed => Err(BackendError::Malformed("garbage".into())),
            Adversary::Retryable => Err(BackendError::Retryable("overloaded".into())),
            Adversary::Hang => Ok(tools(&[catalog::SEGMENTATION, catalog::CLASSIFIER])),
        }
    }
}

async fn termination() -> Outcome {
    const RUNS: usize = 1000;
    let slow = Arc::new(
        LocalFleet::start(
            FleetConfig::standard(0, 2000)
                .with_jitter()
                .with_failure(catalog::SEGMENTATION, FailureMode::Hang),
        )
        .await
        .map_err(|e| e.to_string())?,
    );
    let fast = Arc::new(LocalFleet::start(FleetConfig::standard(0, 0)).await.map_err(|e| e.to_string())?);
    let mut rng = StdRng::seed_from_u64(7);
    let plans: Vec<(u64, u32, Adversary, bool)> = (0..RUNS)
        .map(|_| {
            let budget = rng.gen_range(0..=1500);
            let max_cycles = rng.gen_range(1..=20);
            let kind = match rng.gen_range(0..6) {
                0 => Adversary::Loop,
                1 => Adversary::Slow(rng.gen_range(0..=2000)),
                2 => Adversary::Never,
                3 => Adversary::Malformed,
                4 => Adversary::Retryable,
                _ => Adversary::Hang,
            };
            (budget, max_cycles, kind, rng.gen_bool(0.5))
        })
        .collect();

    let max_call = DEFAULT_TOOL_TIMEOUT_MS;
    let outcomes: Vec<Result<(u64, Adversary, bool), String>> = futures::stream::iter(plans.into_iter().enumerate())
        .map(|(i, (budget, max_cycles, kind, use_fast))| {
            let fleet = if use_fast { fast.clone() } else { slow.clone() };
            async move {
                let image = fleet.image(CXR_1).expect("fixture image");
                let backend = AdversarialBackend {
                    kind,
                    image: image.id.clone(),
                };
                let agent = Agent::new(AgentConfig {
                    max_cycles,
                    ..AgentConfig::default()
                });
                let session = format!("fuzz-{i}");
                let mut mem = MemoryBuffer::new(session.clone());
                let task = AgentTask::new(session, "fuzz", budget).with_images(vec![image]);
                let t = Instant::now();
                let hang_after = Duration::from_millis(budget + max_call + 1000);
                let out = tokio::time::timeout(hang_after, agent.run(task, &backend, &*fleet.bus, &mut mem)).await;
                let elapsed = t.elapsed().as_millis() as u64;
                match out {
                    Err(_) => Err(format!("run {i} ({kind:?}, budget {budget}) hung")),
                    Ok(r) => {
                        let at_cycle_cap = matches!(&r, Ok(resp) if resp.timeout_reason == Some(TimeoutReason::MaxCycles));
                        if let Ok(resp) = &r {
                            validate_transcript(&resp.transcript).map_err(|e| format!("run {i}: {e}"))?;
                        }
                        if !at_cycle_cap && elapsed > budget + max_call {
                            return Err(format!("run {i} ({kind:?}) took {elapsed} ms on budget {budget}"));
                        }
                        Ok((elapsed.saturating_sub(budget), kind, at_cycle_cap))
                    }
                }
            }
        })
        .buffer_unordered(250)
        .collect()
        .await;
    let failures: Vec<&String> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    ensure(failures.is_empty(), || format!("{} bad runs, first: {}", failures.len(), failures[0]))?;
    let ok: Vec<&(u64, Adversary, bool)> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let (worst, worst_kind) = ok.iter().map(|o| (o.0, o.1)).max_by_key(|o| o.0).unwrap_or((0, Adversary::Loop));
    let capped = ok.iter().filter(|o| o.2).count();
    Ok(format!(
        "{RUNS} runs, 0 hangs, {capped} stopped at max_cycles, worst overshoot past budget {worst} ms ({worst_kind:?}; bound {max_call} ms)"
    ))
}

// 3 -----------------------------------------------------------------------

async fn cache() -> Outcome {
    let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await.map_err(|e| e.to_string())?;
    let img = fleet.image(CXR_1).unwrap().id;
    let cache = ToolCache::new();
    let budget = Duration::from_secs(10);
    let call = ToolCall::new("1", catalog::CLASSIFIER, json!({"image": img}));
    let a = fleet.bus.invoke(&call, budget, Some(&cache)).await;
    let b = fleet.bus.invoke(&ToolCall::new("2", catalog::CLASSIFIER, json!({"image": img})), budget, Some(&cache)).await;
    ensure(a.is_ok() && !a.from_cache && b.from_cache, || format!("from_cache {} then {}", a.from_cache, b.from_cache))?;
    ensure(fleet.handle.hits(catalog::CLASSIFIER) == 1, || {
        format!("classifier hit {} times", fleet.handle.hits(catalog::CLASSIFIER))
    })?;
    ensure(cache.hits() == 1, || format!("cache hit counter {}", cache.hits()))?;

    let mut x = serde_json::Map::new();
    x.insert("image".into(), json!(img));
    x.insert("question".into(), json!(CONFLICT_QUESTION));
    let mut y = serde_json::Map::new();
    y.insert("question".into(), json!(CONFLICT_QUESTION));
    y.insert("image".into(), json!(img));
    let before = cache.len();
    let c = fleet.bus.invoke(&ToolCall::new("3", catalog::VQA, serde_json::Value::Object(x)), budget, Some(&cache)).await;
    let d = fleet.bus.invoke(&ToolCall::new("4", catalog::VQA, serde_json::Value::Object(y)), budget, Some(&cache)).await;
    ensure(c.is_ok() && d.from_cache && cache.len() == before + 1, || {
        format!("permuted args: from_cache {}, entries {} -> {}", d.from_cache, before, cache.len())
    })?;
    ensure(fleet.handle.hits(catalog::VQA) == 1, || "vqa executed twice".into())?;
    Ok("duplicate: 1 server hit, cache hits 1, from_cache=true; permuted args share 1 entry".into())
}

// 4 -----------------------------------------------------------------------

async fn parallel_batch() -> Outcome {
    let fixed = LocalFleet::start(
        FleetConfig::standard(0, 0)
            .with_delay(catalog::CLASSIFIER, 100)
            .with_delay(catalog::REPORT_GENERATION, 100),
    )
    .await
    .map_err(|e| e.to_string())?;
    let img = fixed.image(CXR_1).unwrap().id;
    let budget = Duration::from_secs(10);
    let calls = vec![
        ToolCall::new("a", catalog::CLASSIFIER, json!({"image": img})),
        ToolCall::new("b", catalog::REPORT_GENERATION, json!({"image": img})),
    ];
    fixed
        .bus
        .invoke_batch(&[ToolCall::new("w", catalog::VQA, json!({"image": img, "question": "warm"}))], budget, None)
        .await;
    let mut walls = Vec::new();
    for _ in 0..5 {
        let t = Instant::now();
        let r = fixed.bus.invoke_batch(&calls, budget, None).await;
        walls.push(t.elapsed());
        ensure(r.iter().all(|x| x.is_ok()), || "batch call failed".into())?;
    }
    let worst = *walls.iter().max().unwrap();
    ensure(worst < Duration::from_millis(180), || format!("batch took {worst:?}"))?;

    // jittered delays make completion order vary with the call id
    let jittered = LocalFleet::start(FleetConfig::standard(0, 60).with_jitter()).await.map_err(|e| e.to_string())?;
    let img = jittered.image(CXR_1).unwrap().id;
    let mut rng = StdRng::seed_from_u64(4);
    let mut inverted = 0;
    for round in 0..100 {
        let mut tools = [catalog::CLASSIFIER, catalog::REPORT_GENERATION, catalog::GROUNDING];
        for i in (1..tools.len()).rev() {
            tools.swap(i, rng.gen_range(0..=i));
        }
        let calls: Vec<ToolCall> = tools
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let id = format!("r{round}-{i}-{}", rng.gen::<u32>());
                match *t {
                    catalog::GROUNDING => ToolCall::new(id, *t, json!({"image": img, "phrase": "pleural effusion"})),
                    _ => ToolCall::new(id, *t, json!({"image": img})),
                }
            })
            .collect();
        let r = jittered.bus.invoke_batch(&calls, budget, None).await;
        let ids: Vec<&str> = r.iter().map(|x| x.call_id.as_str()).collect();
        let want: Vec<&str> = calls.iter().map(|c| c.call_id.as_str()).collect();
        ensure(ids == want, || format!("round {round}: results {ids:?} for calls {want:?}"))?;
        let finished: Vec<u64> = r.iter().map(|x| x.latency_ms).collect();
        if finished.windows(2).any(|w| w[0] > w[1]) {
            inverted += 1;
        }
    }
    Ok(format!(
        "2-call batch at 100 ms each: worst of 5 = {worst:?}; call order kept in 100/100 jittered rounds ({inverted} finished out of order)"
    ))
}

// 5 -----------------------------------------------------------------------

fn corpus(name: &str) -> Result<Vec<String>, String> {
    Ok(std::fs::read_to_string(data("extractor").join(name))
        .map_err(|e| e.to_string())?
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.replace("\\n", "\n"))
        .collect())
}

async fn extractor() -> Outcome {
    let templates = corpus("templates.txt")?;
    let negatives = corpus("negatives.txt")?;
    let texts = ["Right pleural effusion", "Cardiomegaly with pulmonary edema", "Left upper zone"];
    let mut hits = 0;
    let mut total = 0;
    let mut misses = Vec::new();
    for (i, t) in templates.iter().enumerate() {
        for l in LETTERS {
            total += 1;
            let text = t.replace("{L}", &l.to_string()).replace("{T}", texts[i % texts.len()]);
            if extract_choice(&text) == Some(l) {
                hits += 1;
            } else {
                misses.push(text);
            }
        }
    }
    let false_pos: Vec<&String> = negatives.iter().filter(|n| extract_choice(n).is_some()).collect();
    ensure(misses.is_empty(), || format!("{hits}/{total}; first miss {:?}", misses[0]))?;
    ensure(false_pos.is_empty() && negatives.len() == 10, || format!("negatives extracted: {false_pos:?}"))?;
    Ok(format!("{hits}/{total} ({} templates x 6 letters), 0/10 negatives extracted", templates.len()))
}

// 6 -----------------------------------------------------------------------

fn question(id: &str, answer: char, qtype: QuestionType, competencies: Vec<Competency>) -> BenchmarkQuestion {
    BenchmarkQuestion {
        id: id.into(),
        case_id: "c".into(),
        question: format!("question {id}"),
        options: LETTERS.into_iter().map(|l| (l, format!("option {l}"))).collect(),
        answer,
        competencies,
        question_type: qtype,
        images: vec![],
    }
}

fn record_sets() -> impl Strategy<Value = (Vec<BenchmarkQuestion>, Vec<EvalRecord>)> {
    let q = (0usize..5, proptest::sample::subsequence(vec![0usize, 1, 2], 1..=3), 0usize..6);
    proptest::collection::vec((q, proptest::option::of(0usize..6)), 0..60).prop_map(|items| {
        let mut qs = Vec::new();
        let mut recs = Vec::new();
        for (i, ((t, picks, ans), given)) in items.into_iter().enumerate() {
            let qtype = QuestionType::ALL[t];
            let comps = picks.iter().map(|&p| qtype.competencies()[p]).collect();
            let q = question(&format!("r{i:03}"), LETTERS[ans], qtype, comps);
            let final_letter = given.map(|g| LETTERS[g]);
            recs.push(EvalRecord {
                question_id: q.id.clone(),
                attempts: vec![Attempt {
                    response: String::new(),
                    letter: final_letter,
                    error: None,
                }],
                final_letter,
                correct: final_letter == Some(q.answer),
                elapsed_ms: 0,
            });
            qs.push(q);
        }
        recs.reverse();
        (qs, recs)
    })
}

async fn accuracy_oracle() -> Outcome {
    let pct = |c: u64, t: u64| if t == 0 { 0.0 } else { c as f64 * 100.0 / t as f64 };
    let result = runner(200).run(&record_sets(), |(qs, recs)| {
        let report = build_report(&qs, recs.clone(), false);
        let answer: HashMap<&str, &BenchmarkQuestion> = qs.iter().map(|q| (q.id.as_str(), q)).collect();
        // brute force: one pass per bucket over every record
        let total = recs.len() as u64;
        let correct = recs.iter().filter(|r| r.final_letter == Some(answer[r.question_id.as_str()].answer)).count() as u64;
        prop_assert_eq!((report.total, report.correct), (total, correct));
        prop_assert_eq!(report.accuracy, pct(correct, total));
        for c in Competency::ALL {
            let m: Vec<&EvalRecord> = recs.iter().filter(|r| answer[r.question_id.as_str()].competencies.contains(&c)).collect();
            let k = m.iter().filter(|r| r.final_letter == Some(answer[r.question_id.as_str()].answer)).count() as u64;
            let b = report.by_competency[&c];
            prop_assert_eq!((b.total, b.correct), (m.len() as u64, k));
            prop_assert_eq!(b.accuracy, pct(k, m.len() as u64));
        }
        for t in QuestionType::ALL {
            let m: Vec<&EvalRecord> = recs.iter().filter(|r| answer[r.question_id.as_str()].question_type == t).collect();
            let k = m.iter().filter(|r| r.correct).count() as u64;
            let b = report.by_question_type[&t];
            prop_assert_eq!((b.total, b.correct), (m.len() as u64, k));
        }
        let tags: u64 = qs.iter().map(|q| q.competencies.len() as u64).sum();
        prop_assert_eq!(report.by_competency.values().map(|b| b.total).sum::<u64>(), tags);
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok("200 randomized record sets match the brute-force recount, including multi-tag competency totals".into())
}

// 7 -----------------------------------------------------------------------

type Reply = Box<dyn Fn(u32) -> Result<String, SutError> + Send + Sync>;

struct Stub {
    reply: Reply,
    queries: Mutex<BTreeMap<String, u32>>,
}

#[async_trait]
impl SystemUnderTest for Stub {
    async fn answer(&self, q: &BenchmarkQuestion, _prompt: &str, attempt: u32) -> Result<String, SutError> {
        *self.queries.lock().unwrap().entry(q.id.clone()).or_default() += 1;
        (self.reply)(attempt)
    }
}

async fn retry_policy() -> Outcome {
    let qs: Vec<BenchmarkQuestion> = (0..5)
        .map(|i| {
            let t = QuestionType::ALL[i];
            question(&format!("q{i}"), 'C', t, t.competencies().to_vec())
        })
        .collect();
    let gibberish = Stub {
        reply: Box::new(|_| Ok("lorem ipsum dolor".into())),
        queries: Mutex::default(),
    };
    let r = evaluate(&qs, &gibberish, &EvalConfig::default()).await;
    let counts: Vec<u32> = gibberish.queries.lock().unwrap().values().copied().collect();
    ensure(counts == [3; 5], || format!("gibberish query counts {counts:?}"))?;
    ensure(r.correct == 0 && r.invalid == 5 && r.records.iter().all(|x| !x.correct), || {
        format!("gibberish scored {} correct, {} invalid", r.correct, r.invalid)
    })?;

    let second = Stub {
        reply: Box::new(|a| if a == 1 { Ok("not sure".into()) } else { Ok("The answer is C".into()) }),
        queries: Mutex::default(),
    };
    let r = evaluate(&qs, &second, &EvalConfig::default()).await;
    let counts: Vec<u32> = second.queries.lock().unwrap().values().copied().collect();
    ensure(counts == [2; 5], || format!("succeed-on-2 query counts {counts:?}"))?;
    ensure(r.correct == 5, || format!("succeed-on-2 scored {}", r.correct))?;
    Ok("gibberish: 3 queries per question, all marked incorrect; success on attempt 2: exactly 2 queries".into())
}

// 8 -----------------------------------------------------------------------

fn dicom_images() -> impl Strategy<Value = DicomImage> {
    (1u16..=40, 1u16..=40, any::<bool>(), any::<bool>()).prop_flat_map(|(rows, columns, wide, mono1)| {
        let max = if wide { u16::MAX } else { 255 };
        proptest::collection::vec(0..=max, rows as usize * columns as usize).prop_map(move |pixels| DicomImage {
            rows,
            columns,
            bits_allocated: if wide { 16 } else { 8 },
            photometric: if mono1 { Photometric::Monochrome1 } else { Photometric::Monochrome2 },
            pixels,
            transfer_syntax: EXPLICIT_VR_LITTLE_ENDIAN.into(),
        })
    })
}

async fn dicom() -> Outcome {
    runner(500)
        .run(&dicom_images(), |d| {
            let back = parse_dicom(&write_dicom(&d));
            prop_assert_eq!(back.as_ref(), Ok(&d));
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let mut unsupported = DicomImage {
        rows: 2,
        columns: 2,
        bits_allocated: 8,
        photometric: Photometric::Monochrome2,
        pixels: vec![1, 2, 3, 4],
        transfer_syntax: "1.2.840.10008.1.2.4.50".into(),
    };
    let mut kinds = Vec::new();
    for ts in ["1.2.840.10008.1.2.4.50", IMPLICIT_VR_LITTLE_ENDIAN] {
        unsupported.transfer_syntax = ts.into();
        match parse_dicom(&write_dicom(&unsupported)) {
            Err(e @ DicomError::UnsupportedTransferSyntax(_)) => kinds.push(e.kind()),
            other => return Err(format!("transfer syntax {ts}: {other:?}")),
        }
    }

    let constant = DicomImage {
        rows: 7,
        columns: 5,
        bits_allocated: 16,
        photometric: Photometric::Monochrome1,
        pixels: vec![1234; 35],
        transfer_syntax: EXPLICIT_VR_LITTLE_ENDIAN.into(),
    };
    let g = window_to_gray(&constant);
    ensure(DEGENERATE_GRAY == 128 && g.pixels.iter().all(|&p| p == 128) && g.pixels.len() == 35, || {
        "constant image not uniform 128".into()
    })?;
    Ok(format!(
        "500 generated images round-trip; compressed/implicit syntaxes -> {}; constant image -> uniform 128",
        kinds[0]
    ))
}

// 9 -----------------------------------------------------------------------

fn gateway_policy() -> ScriptedPolicy {
    ScriptedPolicy::new(Decision::respond("nothing to do", "ok"))
        .rule(Trigger::contains("#ask"), Decision::ask_user("need more", "Which side hurts?"))
        .rule(Trigger::contains("#respond"), Decision::respond("easy", "Done."))
        .rule(
            Trigger::contains("#bad"),
            Decision::call_tools("try it", vec![ToolCall::new("x", "teleporter", json!({}))]),
        )
        .rule(
            Trigger::all([Trigger::contains("#classify"), Trigger::contains("Observations from cycle 0")]),
            Decision::respond("read it", "Right pleural effusion."),
        )
        .rule(
            Trigger::contains("#classify"),
            Decision::call_tools(
                "classify",
                vec![ToolCall::new("x", catalog::CLASSIFIER, json!({"image": "{{image:0}}"}))],
            ),
        )
        .rule(
            Trigger::contains("#loop"),
            Decision::call_tools(
                "again",
                vec![
                    ToolCall::new("x", catalog::CLASSIFIER, json!({"image": "{{image:0}}"})),
                    ToolCall::new("y", catalog::GENERATION, json!({"prompt": "a chest film"})),
                ],
            ),
        )
}

type BoxFut<'a, T> = Pin<Box<dyn Future<Output = T> + Send + 'a>>;

/// Read one task's frames, dropping the connection after random counts and
/// resuming from the last sequence seen.
fn read_with_kills<'a>(
    client: &'a GatewayClient,
    session: &'a str,
    task_id: &'a str,
    from: u64,
    rng: &'a mut StdRng,
) -> BoxFut<'a, Result<(Vec<StreamFrame>, u32), String>> {
    Box::pin(async move {
        let mut frames: Vec<StreamFrame> = Vec::new();
        let mut kills = 0;
        let mut cursor = from;
        loop {
            let limit = rng.gen_range(1..=4);
            let mut stream = Box::pin(client.events(session, cursor).await.map_err(|e| e.to_string())?);
            let mut taken = 0;
            while taken < limit {
                let next = tokio::time::timeout(Duration::from_secs(10), stream.next())
                    .await
                    .map_err(|_| format!("stream stalled at {cursor}"))?;
                let f = next.ok_or("stream closed")?.map_err(|e| e.to_string())?;
                if f.sequence != cursor {
                    return Err(format!("expected sequence {cursor}, got {}", f.sequence));
                }
                cursor += 1;
                taken += 1;
                let done = f.task_id == task_id && f.is_terminal();
                frames.push(f);
                if done {
                    return Ok((frames, kills));
                }
            }
            drop(stream);
            kills += 1;
        }
    })
}

async fn gateway_stream() -> Outcome {
    const SESSIONS: usize = 10;
    const TASKS_PER_SESSION: usize = 10;
    let fleet = LocalFleet::start(FleetConfig::standard(0, 120).with_jitter()).await.map_err(|e| e.to_string())?;
    let backend = Arc::new(ScriptedBackend::new(gateway_policy()).map_err(|e| e.to_string())?);
    let config = GatewayConfig {
        budget_ms: 400,
        ..GatewayConfig::default()
    };
    let gw = Gateway::with_bus(config, Agent::default(), backend, fleet.bus.clone());
    let server = gw.bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.map_err(|e| e.to_string())?;
    let client = GatewayClient::new(server.url());
    let png = fixture_image(CXR_1).unwrap().png.clone();

    let results = futures::future::join_all((0..SESSIONS).map(|s| {
        let client = client.clone();
        let png = png.clone();
        async move {
            let mut rng = StdRng::seed_from_u64(100 + s as u64);
            let session = client.create_session().await.map_err(|e| e.to_string())?;
            client.upload_image(&session, png, "cxr.png").await.map_err(|e| e.to_string())?;
            let mut seen: Vec<StreamFrame> = Vec::new();
            let mut kills = 0;
            let mut terminal_kinds = Vec::new();
            for t in 0..TASKS_PER_SESSION {
                let marker = ["#ask", "#respond", "#bad", "#classify", "#loop"][rng.gen_range(0..5)];
                let accepted = client
                    .post_message(&session, &format!("task {t} {marker}"))
                    .await
                    .map_err(|e| e.to_string())?;
                if accepted.first_sequence != seen.len() as u64 {
                    return Err(format!("task starts at {} after {} frames", accepted.first_sequence, seen.len()));
                }
                let (frames, k) = read_with_kills(&client, &session, &accepted.task_id, accepted.first_sequence, &mut rng).await?;
                kills += k;
                if frames.iter().any(|f| f.task_id != accepted.task_id) {
                    return Err("frames of another task interleaved".into());
                }
                let terminals = frames.iter().filter(|f| f.is_terminal()).count();
                if terminals != 1 {
                    return Err(format!("task {t} ({marker}) had {terminals} terminal frames"));
                }
                terminal_kinds.push(frames.last().unwrap().kind.clone());
                seen.extend(frames);
            }
            // a fresh consumer from 0 sees the identical log, and nothing after it
            let mut replay = Box::pin(client.events(&session, 0).await.map_err(|e| e.to_string())?);
            for expected in &seen {
                let f = replay.next().await.ok_or("replay closed")?.map_err(|e| e.to_string())?;
                if &f != expected {
                    return Err(format!("replay differs at sequence {}", expected.sequence));
                }
            }
            if tokio::time::timeout(Duration::from_millis(100), replay.next()).await.is_ok() {
                return Err("frame after the last terminal".into());
            }
            let view = client.session(&session).await.map_err(|e| e.to_string())?;
            if view.next_sequence != seen.len() as u64 {
                return Err("session frame count disagrees".into());
            }
            Ok::<_, String>((kills, terminal_kinds))
        }
    }))
    .await;

    let mut kills = 0;
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for r in results {
        let (k, t) = r?;
        kills += k;
        for kind in t {
            *kinds.entry(kind).or_default() += 1;
        }
    }
    Ok(format!(
        "{} tasks over {SESSIONS} sessions, {kills} consumer kills resumed gaplessly, one terminal each {kinds:?}",
        SESSIONS * TASKS_PER_SESSION
    ))
}

// 10 ----------------------------------------------------------------------

async fn conflict() -> Outcome {
    let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await.map_err(|e| e.to_string())?;
    let policy = ScriptedPolicy::new(Decision::call_tools(
        "gather independent evidence",
        vec![
            ToolCall::new("a", catalog::CLASSIFIER, json!({"image": "{{image:0}}"})),
            ToolCall::new("b", catalog::VQA, json!({"image": "{{image:0}}", "question": CONFLICT_QUESTION})),
        ],
    ))
    .rule(
        Trigger::contains("Observations from cycle 0"),
        Decision::respond("the tools disagree", "Indeterminate: classifier and VQA conflict."),
    );
    let backend = RecordingBackend::new(ScriptedBackend::new(policy).map_err(|e| e.to_string())?);
    let mut mem = MemoryBuffer::new("conflict");
    let task = AgentTask::new("conflict", CONFLICT_QUESTION, 10_000).with_images(vec![fleet.image(CXR_2).unwrap()]);
    let r = Agent::default()
        .run(task, &backend, &*fleet.bus, &mut mem)
        .await
        .map_err(|e| e.to_string())?;
    ensure(r.kind == ResponseKind::Answer, || format!("ended with {:?}", r.kind))?;
    validate_transcript(&r.transcript).map_err(|e| e.to_string())?;
    let contexts = backend.contexts();
    check_observations_reached(&r.transcript, &contexts, 8192).map_err(|e| e.to_string())?;
    let final_ctx = contexts.last().ok_or("no backend context")?;
    let high = final_ctx.mentions("\"pneumothorax\":0.91");
    let no = final_ctx.mentions("{\"answer\":\"no\"}");
    ensure(high && no, || format!("final context: classifier {high}, vqa {no}"))?;
    let final_pos = r.transcript.iter().position(|e| matches!(e.body, EventBody::FinalResponse { .. }));
    let obs_pos = r.transcript.iter().position(|e| matches!(e.body, EventBody::Observation { .. }));
    ensure(obs_pos < final_pos, || "observation after final response".into())?;
    Ok("classifier pneumothorax 0.91 and VQA \"no\" both in the backend context before the final response".into())
}

#[tokio::main]
async fn main() {
    let checks: Vec<(&str, Pin<Box<dyn Future<Output = Outcome>>>)> = vec![
        ("determinism", Box::pin(determinism())),
        ("termination", Box::pin(termination())),
        ("cache", Box::pin(cache())),
        ("parallel-batch", Box::pin(parallel_batch())),
        ("extractor", Box::pin(extractor())),
        ("accuracy-oracle", Box::pin(accuracy_oracle())),
        ("retry-policy", Box::pin(retry_policy())),
        ("dicom", Box::pin(dicom())),
        ("gateway-stream", Box::pin(gateway_stream())),
        ("conflict-scenario", Box::pin(conflict())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let t = Instant::now();
        let out = check.await;
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
