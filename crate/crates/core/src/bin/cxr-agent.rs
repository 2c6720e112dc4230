use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cxr_agent::agent::Agent;
use cxr_agent::backend::{ChatCompletionBackend, ChatCompletionConfig, ReasoningBackend, ScriptedBackend, ScriptedPolicy};
use cxr_agent::bench::{
    compose_generation_prompt, evaluate, load_cases, parse_benchmark, AgentTarget, BackendTarget, BenchReport,
    EvalConfig, ImageResolver, QuestionType, SystemUnderTest,
};
use cxr_agent::fleet::server::parse_fail_flag;
use cxr_agent::fleet::{FleetConfig, LocalFleet};
use cxr_agent::gateway::{Gateway, GatewayClient, GatewayConfig, GatewayTarget, TOKEN_ENV};
use cxr_agent::media::ArtifactStore;
use cxr_agent::toolkit::catalog::standard_specs;
use cxr_agent::toolkit::{Registry, ToolBus};

#[derive(Parser)]
#[command(name = "cxr-agent", about = "Chest X-ray tool agent: mock fleet, gateway and benchmark runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the seven mock tool servers until interrupted.
    Fleet(FleetArgs),
    /// Serve the HTTP gateway.
    Gateway(GatewayArgs),
    /// Benchmark tools: run, validate, generation prompts.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Args)]
struct FleetArgs {
    /// Tool i listens on port_base + i; 0 picks ephemeral ports.
    #[arg(long, default_value_t = 9100)]
    port_base: u16,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Inject a failure, e.g. `vqa:http_500`, `classifier:hang`, `grounding:bad_payload`.
    #[arg(long = "fail", value_parser = parse_fail_flag)]
    fail: Vec<(String, cxr_agent::fleet::FailureMode)>,
    /// Randomize each delay in 0..=delay_ms (derived from the call id).
    #[arg(long)]
    jitter: bool,
}

#[derive(Args)]
struct ToolsArgs {
    /// Use an already running `cxr-agent fleet` on this port base instead of
    /// starting one in-process.
    #[arg(long)]
    fleet_port_base: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    fleet_host: String,
}

#[derive(Args)]
struct BackendArgs {
    /// Scripted policy JSON. Without it, an OpenAI-compatible endpoint is
    /// configured from CXR_LLM_BASE_URL / CXR_LLM_API_KEY / CXR_LLM_MODEL.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args)]
struct GatewayArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 120_000)]
    budget_ms: u64,
    #[command(flatten)]
    tools: ToolsArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Evaluate a system on a question file and write a JSON report.
    Run(RunArgs),
    /// Check a question file and list invalid records.
    Validate {
        #[arg(long)]
        questions: PathBuf,
    },
    /// Print question-generation prompts for case reports.
    GenPrompts {
        #[arg(long)]
        cases: PathBuf,
        /// One question type id; all five when omitted.
        #[arg(long)]
        qtype: Option<QuestionType>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Agent,
    Backend,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_enum, default_value = "agent")]
    target: Target,
    /// Gateway URL for the agent target, chat-completions base URL for the
    /// backend target. Without it the agent runs in-process.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 120_000)]
    budget_ms: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write canonical agent transcripts here (in-process agent only).
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[command(flatten)]
    tools: ToolsArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

fn backend(args: &BackendArgs, store: Option<Arc<ArtifactStore>>, base_url: Option<&str>) -> Result<Arc<dyn ReasoningBackend>> {
    if let Some(p) = &args.policy {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let policy: ScriptedPolicy = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        return Ok(Arc::new(ScriptedBackend::new(policy)?));
    }
    let mut config = ChatCompletionConfig::from_env();
    if let Some(u) = base_url {
        config.base_url = u.to_string();
    }
    let mut b = ChatCompletionBackend::new(config);
    if let Some(s) = store {
        b = b.with_store(s);
    }
    Ok(Arc::new(b))
}

/// A tool bus plus whatever keeps its fleet alive.
async fn tool_bus(args: &ToolsArgs) -> Result<(Arc<ToolBus>, Option<LocalFleet>)> {
    match args.fleet_port_base {
        Some(base) => {
            let names = cxr_agent::toolkit::catalog::TOOL_NAMES;
            let specs = standard_specs(|name| {
                let i = names.iter().position(|n| *n == name).expect("catalog tool") as u16;
                format!("http://{}:{}", args.fleet_host, base + i)
            });
            let bus = ToolBus::new(Arc::new(Registry::from_specs(specs)?), Arc::new(ArtifactStore::new()));
            Ok((Arc::new(bus), None))
        }
        None => {
            let fleet = LocalFleet::start(FleetConfig::standard(0, 0)).await?;
            Ok((fleet.bus.clone(), Some(fleet)))
        }
    }
}

async fn run_fleet(args: FleetArgs) -> Result<()> {
    let mut config = FleetConfig::standard(args.port_base, args.delay_ms);
    for (tool, mode) in args.fail {
        if config.tool_mut(&tool).is_none() {
            bail!("unknown tool {tool}");
        }
        config = config.with_failure(&tool, mode);
    }
    if args.jitter {
        config = config.with_jitter();
    }
    let handle = cxr_agent::fleet::serve(config, cxr_agent::fleet::make_fixture_suite()).await?;
    for (tool, url) in handle.endpoints() {
        println!("{tool:<18} {url}");
    }
    tokio::signal::ctrl_c().await?;
    handle.shutdown().await;
    Ok(())
}

async fn run_gateway(args: GatewayArgs) -> Result<()> {
    let (bus, _fleet) = tool_bus(&args.tools).await?;
    let backend = backend(&args.backend, Some(bus.store().clone()), None)?;
    let config = GatewayConfig {
        budget_ms: args.budget_ms,
        ..GatewayConfig::from_env()
    };
    if config.token.is_none() {
        tracing::warn!("{TOKEN_ENV} unset; the gateway accepts unauthenticated requests");
    }
    let gw = Gateway::with_bus(config, Agent::default(), backend, bus);
    let handle = gw.bind(args.addr).await?;
    println!("gateway listening on {}", handle.url());
    tokio::select! {
        _ = handle.join() => bail!("gateway stopped"),
        r = tokio::signal::ctrl_c() => Ok(r?),
    }
}

fn print_summary(r: &BenchReport) {
    println!(
        "accuracy {:.1}% ({}/{}), invalid {}{}",
        r.accuracy,
        r.correct,
        r.total,
        r.invalid,
        if r.incomplete { ", INCOMPLETE" } else { "" }
    );
    for (c, b) in &r.by_competency {
        println!("  {:<16} {:>5.1}% ({}/{})", c.as_str(), b.accuracy, b.correct, b.total);
    }
    for (t, b) in &r.by_question_type {
        println!("  {:<32} {:>5.1}% ({}/{})", t.display_name(), b.accuracy, b.correct, b.total);
    }
}

async fn run_bench(args: RunArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.questions).with_context(|| format!("reading {}", args.questions.display()))?;
    let loaded = parse_benchmark(&text);
    for i in &loaded.issues {
        eprintln!("skipping line {}: {} {}", i.line, i.kind.as_str(), i.detail);
    }
    let root = args.questions.parent().unwrap_or(Path::new(".")).to_path_buf();
    let eval = EvalConfig {
        retries: args.retries,
        concurrency: args.concurrency,
    };

    let mut keep_alive = None;
    let mut agent_target = None;
    let target: Arc<dyn SystemUnderTest> = match (args.target, &args.endpoint) {
        (Target::Agent, Some(url)) => {
            let client = GatewayClient::new(url.clone()).with_token(std::env::var(TOKEN_ENV).ok());
            Arc::new(GatewayTarget::new(client, root))
        }
        (Target::Agent, None) => {
            let (bus, fleet) = tool_bus(&args.tools).await?;
            keep_alive = fleet;
            let backend = backend(&args.backend, Some(bus.store().clone()), None)?;
            let resolver = ImageResolver::new(bus.store().clone(), root);
            let t = Arc::new(AgentTarget::new(Agent::default(), backend, bus, resolver, args.budget_ms));
            agent_target = Some(t.clone());
            t
        }
        (Target::Backend, url) => {
            let store = Arc::new(ArtifactStore::new());
            let backend = backend(&args.backend, Some(store.clone()), url.as_deref())?;
            Arc::new(BackendTarget::new(backend).with_images(ImageResolver::new(store, root)))
        }
    };
    let report = evaluate(&loaded.questions, &*target, &eval).await;
    drop(keep_alive);

    print_summary(&report);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    if let (Some(p), Some(t)) = (&args.transcripts, &agent_target) {
        std::fs::write(p, t.transcript_dump())?;
    }
    if report.incomplete {
        bail!("run aborted on a fatal error; report marked incomplete");
    }
    Ok(())
}

fn validate(questions: &Path) -> Result<()> {
    let text = std::fs::read_to_string(questions).with_context(|| format!("reading {}", questions.display()))?;
    let r = parse_benchmark(&text);
    for i in &r.issues {
        println!("line {} [{}] {}: {}", i.line, i.id.as_deref().unwrap_or("-"), i.kind.as_str(), i.detail);
    }
    println!("{} valid, {} invalid", r.questions.len(), r.issues.len());
    if !r.issues.is_empty() {
        bail!("invalid records present");
    }
    Ok(())
}

fn gen_prompts(cases: &Path, qtype: Option<QuestionType>) -> Result<()> {
    let types: Vec<QuestionType> = qtype.map_or_else(|| QuestionType::ALL.to_vec(), |t| vec![t]);
    for case in load_cases(cases)? {
        for t in &types {
            println!("=== {} / {}", case.case_id, t.as_str());
            println!("{}\n", compose_generation_prompt(&case, *t));
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Fleet(a) => run_fleet(a).await,
        Cmd::Gateway(a) => run_gateway(a).await,
        Cmd::Bench(BenchCmd::Run(a)) => run_bench(a).await,
        Cmd::Bench(BenchCmd::Validate { questions }) => validate(&questions),
        Cmd::Bench(BenchCmd::GenPrompts { cases, qtype }) => gen_prompts(&cases, qtype),
    }
}
