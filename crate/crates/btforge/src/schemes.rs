//! The four generation schemes: one-step, iterative with simulation
//! feedback, human-in-the-loop, and recursive expansion.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use btforge_core::bt::serialize_bt;
use btforge_core::expansion::{
    expand_behavior_tree, expand_with_oracle, ExpansionConfig, ExpansionError, PlanBackend,
};
use btforge_core::planner::PlanOutcome;
use btforge_core::sim::{feedback_message, run, SimOutcome, SimReport, DEFAULT_TICK_BUDGET};
use btforge_core::{Atom, BehaviorTree, Domain, Plan, WorldState};
use serde::{Deserialize, Serialize};

use crate::llm::{
    parse_action_sequence, parse_bt_response, render_prompt, BtResponse, ChatMessage, ChatProvider,
    CompletionParams, LlmError, PromptContext, PromptError, ResponseError, TemplateId,
};
use crate::task::Task;

pub const DEFAULT_MAX_ITERS: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    OneStep,
    Iterative,
    Hitl,
    Recursive,
}

impl SchemeId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::OneStep => "one-step",
            SchemeId::Iterative => "iterative",
            SchemeId::Hitl => "hitl",
            SchemeId::Recursive => "recursive",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Plan source for the recursive scheme.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    #[default]
    Oracle,
    Llm,
}

/// Shared configuration of a generation run.
#[derive(Clone)]
pub struct GenContext {
    pub domain: Arc<Domain>,
    pub provider: Arc<dyn ChatProvider>,
    pub params: CompletionParams,
    /// Generation rounds of the iterative scheme.
    pub max_iters: u32,
    pub expansion: ExpansionConfig,
    pub tick_budget: u32,
    /// Few-shot examples added to every prompt.
    pub examples: Vec<String>,
}

impl GenContext {
    pub fn new(domain: Arc<Domain>, provider: Arc<dyn ChatProvider>) -> Self {
        GenContext {
            domain,
            provider,
            params: CompletionParams::default(),
            max_iters: DEFAULT_MAX_ITERS,
            expansion: ExpansionConfig::default(),
            tick_budget: DEFAULT_TICK_BUDGET,
            examples: Vec::new(),
        }
    }

    fn prompt_context(&self, state: &WorldState, goal: &Atom, instruction: &str) -> PromptContext {
        let mut pctx = PromptContext::new(&self.domain, state, goal, instruction);
        pctx.examples = self.examples.clone();
        pctx
    }

    fn simulate(&self, task: &Task, tree: &BehaviorTree) -> SimReport {
        run(
            tree,
            &task.initial,
            &self.domain,
            &task.goal,
            self.tick_budget,
        )
    }
}

/// One provider call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub template: TemplateId,
    pub request: Vec<ChatMessage>,
    pub reply: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub scheme: SchemeId,
    pub tree: Option<BehaviorTree>,
    /// The tree came out of a strict parse (always true for expanded trees).
    pub strict_ok: bool,
    pub warnings: Vec<String>,
    /// Wall-clock time spent generating, excluding the final simulation.
    pub duration_seconds: f64,
    /// Sum of provider usage over the transcript.
    pub tokens: u64,
    pub iterations: u32,
    pub plan_calls: usize,
    /// Append-only log of provider calls.
    pub transcript: Vec<Exchange>,
    /// Simulation of `tree` from the task's initial state.
    pub simulation: Option<SimReport>,
    /// The iterative scheme ran out of rounds without reaching the goal.
    pub exhausted: bool,
    /// Why no tree was produced.
    pub error: Option<String>,
    /// Action sequence the human-in-the-loop scheme conditioned on.
    pub sequence: Option<Plan>,
}

impl GenerationResult {
    fn new(scheme: SchemeId) -> Self {
        GenerationResult {
            scheme,
            tree: None,
            strict_ok: false,
            warnings: Vec::new(),
            duration_seconds: 0.0,
            tokens: 0,
            iterations: 0,
            plan_calls: 0,
            transcript: Vec::new(),
            simulation: None,
            exhausted: false,
            error: None,
            sequence: None,
        }
    }

    /// Canonical tree document.
    pub fn document(&self) -> Option<String> {
        self.tree.as_ref().map(serialize_bt)
    }

    pub fn outcome(&self) -> Option<SimOutcome> {
        self.simulation.as_ref().map(|r| r.outcome)
    }

    pub fn metrics(&self) -> GenerationMetrics {
        GenerationMetrics {
            scheme: self.scheme,
            strict_ok: self.strict_ok,
            duration_seconds: self.duration_seconds,
            tokens: self.tokens,
            iterations: self.iterations,
            plan_calls: self.plan_calls,
            outcome: self.outcome(),
            exhausted: self.exhausted,
            warnings: self.warnings.clone(),
            error: self.error.clone(),
        }
    }

    fn record(&mut self, exchange: Exchange) {
        self.tokens += exchange.prompt_tokens + exchange.completion_tokens;
        self.transcript.push(exchange);
    }

    fn absorb(&mut self, parsed: Result<BtResponse, ResponseError>) -> Option<BtResponse> {
        match parsed {
            Ok(resp) => {
                self.tree = Some(resp.tree.clone());
                self.strict_ok = resp.strict_ok;
                self.warnings = resp.warnings.iter().map(ToString::to_string).collect();
                self.error = None;
                Some(resp)
            }
            Err(e) => {
                if self.tree.is_none() {
                    self.error = Some(e.to_string());
                } else {
                    self.warnings.push(format!("reply ignored: {e}"));
                }
                None
            }
        }
    }
}

/// Serializable summary of a [`GenerationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub scheme: SchemeId,
    pub strict_ok: bool,
    pub duration_seconds: f64,
    pub tokens: u64,
    pub iterations: u32,
    pub plan_calls: usize,
    pub outcome: Option<SimOutcome>,
    pub exhausted: bool,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemeError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("expansion deeper than {0} levels")]
    DepthExceeded(usize),
    #[error("session is finalized")]
    SessionFinalized,
}

fn ask(
    ctx: &GenContext,
    result: &mut GenerationResult,
    template: TemplateId,
    pctx: &PromptContext,
) -> Result<String, SchemeError> {
    let request = render_prompt(template, pctx)?;
    let reply = ctx.provider.complete(&request, &ctx.params)?;
    let text = reply.text.clone();
    result.record(Exchange {
        template,
        request,
        reply: reply.text,
        prompt_tokens: reply.prompt_tokens,
        completion_tokens: reply.completion_tokens,
    });
    Ok(text)
}

/// A single bt_onestep call.
pub fn generate_one_step(task: &Task, ctx: &GenContext) -> Result<GenerationResult, SchemeError> {
    let start = Instant::now();
    let mut result = GenerationResult::new(SchemeId::OneStep);
    let pctx = ctx.prompt_context(&task.initial, &task.goal, &task.instruction);
    let reply = ask(ctx, &mut result, TemplateId::BtOnestep, &pctx)?;
    result.iterations = 1;
    result.absorb(parse_bt_response(&reply));
    result.duration_seconds = start.elapsed().as_secs_f64();
    result.simulation = result.tree.as_ref().map(|t| ctx.simulate(task, t));
    Ok(result)
}

/// Note sent back when a reply held no usable tree.
fn unusable_reply(error: &ResponseError) -> String {
    format!("Your reply could not be used: {error}. Answer with one behavior tree document in a ```json block.")
}

/// Generate, simulate, and regenerate with the simulation summary until the
/// goal is reached or `ctx.max_iters` rounds have run.
pub fn generate_iterative(task: &Task, ctx: &GenContext) -> Result<GenerationResult, SchemeError> {
    let start = Instant::now();
    let mut result = GenerationResult::new(SchemeId::Iterative);
    let mut pctx = ctx.prompt_context(&task.initial, &task.goal, &task.instruction);
    let mut reached = false;
    for round in 1..=ctx.max_iters.max(1) {
        let template = if round == 1 {
            TemplateId::BtOnestep
        } else {
            TemplateId::BtRefine
        };
        let reply = ask(ctx, &mut result, template, &pctx)?;
        result.iterations = round;
        let parsed = parse_bt_response(&reply);
        let note = parsed.as_ref().err().map(unusable_reply);
        match result.absorb(parsed) {
            Some(resp) => {
                let report = ctx.simulate(task, &resp.tree);
                reached = report.outcome == SimOutcome::GoalReached;
                if !reached {
                    pctx.feedback.push(feedback_message(&report));
                    pctx.previous_tree = Some(resp.document);
                }
                result.simulation = Some(report);
                if reached {
                    break;
                }
            }
            None => pctx.feedback.extend(note),
        }
    }
    result.exhausted = !reached;
    result.duration_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlState {
    AwaitingFeedback,
    Finalized,
}

/// A human-in-the-loop generation in progress.
#[derive(Debug, Clone)]
pub struct HitlSession {
    pub id: String,
    pub task: Task,
    pub result: GenerationResult,
    /// Human feedback in the order received.
    pub feedback: Vec<String>,
    pub state: HitlState,
    prompt: PromptContext,
}

/// Plans an action sequence, generates a tree conditioned on it, simulates
/// it and waits for feedback.
pub fn start_hitl(task: &Task, ctx: &GenContext) -> Result<HitlSession, SchemeError> {
    let start = Instant::now();
    let mut result = GenerationResult::new(SchemeId::Hitl);
    let mut pctx = ctx.prompt_context(&task.initial, &task.goal, &task.instruction);
    let reply = ask(ctx, &mut result, TemplateId::SequencePlanner, &pctx)?;
    match parse_action_sequence(&reply, &ctx.domain) {
        Ok(plan) => {
            pctx.action_sequence = Some(plan.to_string());
            result.sequence = Some(plan);
        }
        Err(e) => result.warnings.push(format!("no action sequence: {e}")),
    }
    let sequence_warnings = result.warnings.clone();
    let reply = ask(ctx, &mut result, TemplateId::BtOnestep, &pctx)?;
    result.iterations = 1;
    result.absorb(parse_bt_response(&reply));
    result.warnings.splice(0..0, sequence_warnings);
    result.duration_seconds = start.elapsed().as_secs_f64();
    result.simulation = result.tree.as_ref().map(|t| ctx.simulate(task, t));
    Ok(HitlSession {
        id: uuid::Uuid::new_v4().to_string(),
        task: task.clone(),
        result,
        feedback: Vec::new(),
        state: HitlState::AwaitingFeedback,
        prompt: pctx,
    })
}

/// Regenerates with `text` added to the prompt and re-simulates. Empty
/// (or blank) feedback finalizes the session and freezes the tree.
pub fn apply_feedback(
    session: &mut HitlSession,
    text: &str,
    ctx: &GenContext,
) -> Result<(), SchemeError> {
    if session.state == HitlState::Finalized {
        return Err(SchemeError::SessionFinalized);
    }
    if text.trim().is_empty() {
        session.state = HitlState::Finalized;
        return Ok(());
    }
    let start = Instant::now();
    let mut pctx = session.prompt.clone();
    pctx.feedback.push(text.to_owned());
    if let Some(doc) = session.result.document() {
        pctx.previous_tree = Some(doc);
    }
    let result = &mut session.result;
    let reply = ask(ctx, result, TemplateId::BtRefine, &pctx)?;
    session.feedback.push(text.to_owned());
    session.prompt = pctx;
    result.iterations += 1;
    let updated = result.absorb(parse_bt_response(&reply)).is_some();
    result.duration_seconds += start.elapsed().as_secs_f64();
    if updated {
        result.simulation = result.tree.as_ref().map(|t| ctx.simulate(&session.task, t));
    }
    Ok(())
}

/// `make_plan` answered by the makeplan prompt.
struct LlmPlanner<'a> {
    ctx: &'a GenContext,
    instruction: &'a str,
    result: &'a mut GenerationResult,
}

impl PlanBackend for LlmPlanner<'_> {
    type Error = SchemeError;

    fn make_plan(&mut self, state: &WorldState, goal: &Atom) -> Result<PlanOutcome, SchemeError> {
        if state.contains(goal) {
            return Ok(PlanOutcome::already_satisfied());
        }
        let pctx = self.ctx.prompt_context(state, goal, self.instruction);
        let reply = ask(self.ctx, self.result, TemplateId::Makeplan, &pctx)?;
        if reply.trim().eq_ignore_ascii_case("none") {
            return Ok(PlanOutcome::unreachable());
        }
        match parse_action_sequence(&reply, &self.ctx.domain) {
            Ok(plan) => Ok(PlanOutcome::found(plan)),
            Err(e) => {
                self.result
                    .warnings
                    .push(format!("no plan for {goal}: {e}"));
                Ok(PlanOutcome::unreachable())
            }
        }
    }
}

/// Depth overruns abort generation; `planner` decides for backend
/// failures; anything else becomes the result's error text.
fn classify<E>(
    e: ExpansionError<E>,
    planner: impl FnOnce(E) -> Result<String, SchemeError>,
) -> Result<String, SchemeError> {
    match e {
        ExpansionError::DepthExceeded(n) => Err(SchemeError::DepthExceeded(n)),
        ExpansionError::Planner(p) => planner(p),
        ExpansionError::Shape(s) => Ok(s.to_string()),
        ExpansionError::Estimate(p) => Ok(format!("proposed plan does not execute: {p}")),
    }
}

/// Expands the goal into a tree, planning with the symbolic planner or the
/// makeplan prompt.
pub fn generate_recursive(
    task: &Task,
    ctx: &GenContext,
    planner: PlannerKind,
) -> Result<GenerationResult, SchemeError> {
    let start = Instant::now();
    let mut result = GenerationResult::new(SchemeId::Recursive);
    let expansion = match planner {
        PlannerKind::Oracle => {
            expand_with_oracle(&task.goal, &task.initial, &ctx.domain, ctx.expansion)
                .map_err(|e| classify(e, |p| Ok(format!("planner failed: {p}"))))
        }
        PlannerKind::Llm => {
            let backend = LlmPlanner {
                ctx,
                instruction: &task.instruction,
                result: &mut result,
            };
            expand_behavior_tree(
                &task.goal,
                &task.initial,
                &ctx.domain,
                backend,
                ctx.expansion,
            )
            .map_err(|e| classify(e, Err))
        }
    };
    result.iterations = 1;
    match expansion {
        Ok(exp) => {
            if !exp.is_complete() {
                let open: Vec<String> = exp.unresolved.iter().map(ToString::to_string).collect();
                result
                    .warnings
                    .push(format!("unresolved conditions: {}", open.join(", ")));
            }
            result.plan_calls = exp.plan_calls;
            result.tree = Some(exp.tree);
            result.strict_ok = true;
        }
        Err(failure) => result.error = Some(failure?),
    }
    result.duration_seconds = start.elapsed().as_secs_f64();
    result.simulation = result.tree.as_ref().map(|t| ctx.simulate(task, t));
    Ok(result)
}

/// Runs a scheme to completion. The human-in-the-loop scheme stops after
/// its first candidate, as if the user finalized immediately.
pub fn generate(
    scheme: SchemeId,
    planner: PlannerKind,
    task: &Task,
    ctx: &GenContext,
) -> Result<GenerationResult, SchemeError> {
    match scheme {
        SchemeId::OneStep => generate_one_step(task, ctx),
        SchemeId::Iterative => generate_iterative(task, ctx),
        SchemeId::Hitl => start_hitl(task, ctx).map(|s| s.result),
        SchemeId::Recursive => generate_recursive(task, ctx, planner),
    }
}
