//! Command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure (no tree, goal not reached),
//! 2 bad arguments or unreadable input, 3 provider failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use btforge_core::bt::parse_bt_lenient;
use btforge_core::expansion::RecursionState;
use btforge_core::sim::{feedback_message, run, SimOutcome, DEFAULT_TICK_BUDGET};
use btforge_core::world::parse_domain;
use btforge_core::{gear, Atom, Domain};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::eval::{evaluate_suite_parallel, report_csv, write_report, ReportFormat};
use crate::llm::{
    ChatProvider, CompletionParams, HttpConfig, HttpProvider, LlmError, MockProvider, ReplayEntry,
    ReplayFixture, ReplayProvider,
};
use crate::schemes::{
    apply_feedback, generate, start_hitl, GenContext, GenerationResult, PlannerKind, SchemeError,
    SchemeId, DEFAULT_MAX_ITERS,
};
use crate::service::{serve, AppState, ServiceConfig};
use crate::task::{load_suite, Task};

#[derive(Debug, Parser)]
#[command(
    name = "btforge",
    version,
    about = "Behavior-tree generation for sequential manipulation tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a behavior tree for one task.
    Generate(GenerateArgs),
    /// Tick a behavior tree against a world.
    Simulate(SimulateArgs),
    /// Evaluate a scheme over a task suite.
    Eval(EvalArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Mock,
    Replay,
    Http,
}

impl ProviderKind {
    fn name(self) -> &'static str {
        match self {
            ProviderKind::Mock => "mock",
            ProviderKind::Replay => "replay",
            ProviderKind::Http => "http",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub provider: ProviderKind,
    /// Replay fixture (digest to reply); repeatable, later files win.
    #[arg(long = "replay", value_name = "FILE")]
    pub replay: Vec<PathBuf>,
    /// Scripted mock replies: a JSON list of {text, prompt_tokens?, completion_tokens?}
    /// or a plain text file holding one reply.
    #[arg(long = "mock-reply", value_name = "FILE")]
    pub mock_reply: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f32,
    #[arg(long, default_value_t = 2048)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ContextArgs {
    /// Domain file; defaults to the bundled gear domain.
    #[arg(long, value_name = "FILE")]
    pub domain: Option<PathBuf>,
    /// Planner search depth.
    #[arg(long, default_value_t = btforge_core::planner::DEFAULT_DEPTH_BOUND)]
    pub plan_depth: usize,
    /// Deepest expansion level.
    #[arg(long, default_value_t = btforge_core::expansion::DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    /// Expand preconditions from the post-plan state instead of the branch entry state.
    #[arg(long)]
    pub literal_recursion: bool,
    /// Rounds of the iterative scheme.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: u32,
    /// Tick budget for simulations.
    #[arg(long, default_value_t = DEFAULT_TICK_BUDGET)]
    pub budget: u32,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeId,
    #[arg(long, value_name = "FILE")]
    pub world: PathBuf,
    /// Goal atom, e.g. `is_inserted_to(gear1, shaft1)`.
    #[arg(long)]
    pub goal: String,
    #[arg(long)]
    pub instruction: Option<String>,
    #[arg(long, value_enum, default_value = "oracle")]
    pub planner: PlannerKind,
    /// Tree document output; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub metrics_out: Option<PathBuf>,
    /// Provider exchanges as JSON.
    #[arg(long, value_name = "FILE")]
    pub transcript_out: Option<PathBuf>,
    /// Exchanges as a replay fixture.
    #[arg(long, value_name = "FILE")]
    pub record_out: Option<PathBuf>,
    /// Feedback rounds for the human-in-the-loop scheme, in order.
    #[arg(long)]
    pub feedback: Vec<String>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub context: ContextArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub bt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub world: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub domain: Option<PathBuf>,
    /// Goal atom overriding the world file's.
    #[arg(long)]
    pub goal: Option<String>,
    /// Trace as JSON lines (tick, node_id, status, action).
    #[arg(long, value_name = "FILE")]
    pub trace_out: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long, value_name = "FILE")]
    pub report_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TICK_BUDGET)]
    pub budget: u32,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeId,
    #[arg(long, value_name = "FILE")]
    pub suite: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub planner: PlannerKind,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
    /// Worker threads; not allowed with the order-dependent mock provider.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub context: ContextArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Suite whose tasks can be referenced by id.
    #[arg(long, value_name = "FILE")]
    pub suite: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub context: ContextArgs,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Input(_) => 2,
            CliError::Provider(_) => 3,
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::Llm(_) => CliError::Provider(e.to_string()),
            SchemeError::Prompt(_) => CliError::Input(e.to_string()),
            SchemeError::DepthExceeded(_) | SchemeError::SessionFinalized => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_domain(path: Option<&Path>) -> Result<Domain, CliError> {
    match path {
        None => Ok(gear::domain()),
        Some(p) => {
            parse_domain(&read(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_goal(text: &str) -> Result<Atom, CliError> {
    Atom::parse(text).map_err(|e| CliError::Input(format!("bad goal `{text}`: {e}")))
}

fn mock_entries(path: &Path) -> Result<Vec<ReplayEntry>, CliError> {
    let text = read(path)?;
    match serde_json::from_str::<Vec<ReplayEntry>>(&text) {
        Ok(entries) => Ok(entries),
        Err(_) => Ok(vec![ReplayEntry::text(text)]),
    }
}

fn replay_fixture(paths: &[PathBuf]) -> Result<ReplayFixture, CliError> {
    let mut fixture = ReplayFixture::default();
    for p in paths {
        let f =
            ReplayFixture::load(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        fixture.merge(f);
    }
    Ok(fixture)
}

fn build_provider(
    kind: ProviderKind,
    args: &ProviderArgs,
) -> Result<Arc<dyn ChatProvider>, CliError> {
    Ok(match kind {
        ProviderKind::Mock => {
            let mut entries = Vec::new();
            for p in &args.mock_reply {
                entries.extend(mock_entries(p)?);
            }
            Arc::new(MockProvider::new(entries))
        }
        ProviderKind::Replay => Arc::new(ReplayProvider::new(replay_fixture(&args.replay)?)),
        ProviderKind::Http => {
            let config =
                HttpConfig::from_env().map_err(|e: LlmError| CliError::Provider(e.to_string()))?;
            Arc::new(HttpProvider::new(config))
        }
    })
}

fn gen_context(
    domain: Arc<Domain>,
    provider: Arc<dyn ChatProvider>,
    p: &ProviderArgs,
    c: &ContextArgs,
) -> GenContext {
    let mut ctx = GenContext::new(domain, provider);
    ctx.params = CompletionParams {
        temperature: p.temperature,
        max_tokens: p.max_tokens,
        seed: Some(p.seed),
    };
    ctx.max_iters = c.max_iters;
    ctx.tick_budget = c.budget;
    ctx.expansion.depth_bound = c.plan_depth;
    ctx.expansion.max_depth = c.max_depth;
    if c.literal_recursion {
        ctx.expansion.recursion = RecursionState::PostPlan;
    }
    ctx
}

fn json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    text
}

fn summary(result: &GenerationResult) -> String {
    let outcome = result
        .outcome()
        .map_or_else(|| "none".to_owned(), |o| format!("{o:?}"));
    format!(
        "scheme={} outcome={} strict={} iterations={} tokens={} duration={:.3}s",
        result.scheme,
        outcome,
        result.strict_ok,
        result.iterations,
        result.tokens,
        result.duration_seconds
    )
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let domain = Arc::new(load_domain(args.context.domain.as_deref())?);
    let goal = parse_goal(&args.goal)?;
    let task = Task::from_world_file(
        "cli",
        &args.world,
        &domain,
        Some(goal),
        args.instruction.clone(),
    )
    .map_err(|e| CliError::Input(e.to_string()))?;
    let provider = build_provider(args.provider.provider, &args.provider)?;
    let ctx = gen_context(domain, provider, &args.provider, &args.context);
    let result = if args.scheme == SchemeId::Hitl {
        let mut session = start_hitl(&task, &ctx)?;
        for text in &args.feedback {
            apply_feedback(&mut session, text, &ctx)?;
        }
        apply_feedback(&mut session, "", &ctx)?;
        session.result
    } else {
        generate(args.scheme, args.planner, &task, &ctx)?
    };
    if let Some(p) = &args.metrics_out {
        write(p, &json_pretty(&result.metrics()))?;
    }
    if let Some(p) = &args.transcript_out {
        write(p, &json_pretty(&result.transcript))?;
    }
    if let Some(p) = &args.record_out {
        let mut fixture = ReplayFixture::default();
        for x in &result.transcript {
            let entry = ReplayEntry {
                text: x.reply.clone(),
                prompt_tokens: Some(x.prompt_tokens),
                completion_tokens: Some(x.completion_tokens),
            };
            fixture.insert(&x.request, entry);
        }
        write(p, &fixture.to_json())?;
    }
    eprintln!("{}", summary(&result));
    let Some(doc) = result.document() else {
        return Err(CliError::Runtime(format!(
            "no tree generated: {}",
            result.error.as_deref().unwrap_or("unknown reason")
        )));
    };
    match &args.out {
        Some(p) => write(p, &doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let domain = load_domain(args.domain.as_deref())?;
    let goal = args.goal.as_deref().map(parse_goal).transpose()?;
    let task = Task::from_world_file("cli", &args.world, &domain, goal, None)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let text = read(&args.bt)?;
    let (tree, warnings) = parse_bt_lenient(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.bt.display())))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let report = run(&tree, &task.initial, &domain, &task.goal, args.budget);
    if let Some(p) = &args.trace_out {
        let mut lines = String::new();
        for entry in &report.trace {
            lines.push_str(&serde_json::to_string(entry).expect("serializes"));
            lines.push('\n');
        }
        write(p, &lines)?;
    }
    if let Some(p) = &args.report_out {
        write(p, &json_pretty(&report))?;
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "outcome: {:?}", report.outcome);
    let _ = writeln!(out, "ticks: {}", report.ticks);
    for (i, a) in report.executed.iter().enumerate() {
        let _ = writeln!(out, "{}. {a}", i + 1);
    }
    let _ = writeln!(out, "{}", feedback_message(&report));
    if report.outcome == SimOutcome::GoalReached {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "goal not reached: {:?}",
            report.outcome
        )))
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let domain = Arc::new(load_domain(args.context.domain.as_deref())?);
    let tasks = load_suite(&args.suite, &domain).map_err(|e| CliError::Input(e.to_string()))?;
    let mock_replies =
        args.provider.provider == ProviderKind::Mock && !args.provider.mock_reply.is_empty();
    if args.jobs > 1 && mock_replies {
        return Err(CliError::Input(
            "--jobs > 1 needs an order-independent provider; mock replies are consumed in call order".into(),
        ));
    }
    let provider = build_provider(args.provider.provider, &args.provider)?;
    let ctx = gen_context(domain, provider, &args.provider, &args.context);
    let report = evaluate_suite_parallel(args.scheme, args.planner, &tasks, &ctx, args.jobs);
    if let Some(p) = &args.out {
        write_report(&report, p, args.format)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
    }
    print!("{}", report_csv(&report));
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let domain = Arc::new(load_domain(args.context.domain.as_deref())?);
    let mut tasks = BTreeMap::new();
    if let Some(p) = &args.suite {
        for t in load_suite(p, &domain).map_err(|e| CliError::Input(e.to_string()))? {
            tasks.insert(t.id.clone(), t);
        }
    }
    let mut providers: BTreeMap<String, Arc<dyn ChatProvider>> = BTreeMap::new();
    providers.insert(
        "mock".into(),
        build_provider(ProviderKind::Mock, &args.provider)?,
    );
    if !args.provider.replay.is_empty() {
        providers.insert(
            "replay".into(),
            build_provider(ProviderKind::Replay, &args.provider)?,
        );
    }
    match build_provider(ProviderKind::Http, &args.provider) {
        Ok(p) => {
            providers.insert("http".into(), p);
        }
        Err(e) if args.provider.provider == ProviderKind::Http => return Err(e),
        Err(_) => {}
    }
    let default_provider = args.provider.provider.name().to_owned();
    if !providers.contains_key(&default_provider) {
        return Err(CliError::Input(format!(
            "provider `{default_provider}` needs --replay"
        )));
    }
    let template = gen_context(
        domain.clone(),
        providers[&default_provider].clone(),
        &args.provider,
        &args.context,
    );
    let state = AppState::new(ServiceConfig {
        domain,
        tasks,
        providers,
        default_provider,
        template: Some(template),
    });
    let addr: std::net::SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Input(format!("bad address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime
        .block_on(serve(state, addr))
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
