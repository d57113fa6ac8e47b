//! Shared test helpers and the builders for every generated fixture.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use btforge::llm::{
    estimate_prompt_tokens, render_prompt, ChatMessage, ChatProvider, CompletionParams,
    CompletionResult, LlmError, MockProvider, PromptContext, RecordingProvider, ReplayEntry,
    ReplayFixture, Role, TemplateId,
};
use btforge::schemes::{
    apply_feedback, generate_one_step, generate_recursive, start_hitl, GenContext, PlannerKind,
};
use btforge::task::{load_suite, Task};
use btforge_core::bt::serialize_bt;
use btforge_core::expansion::{expand_with_oracle, ExpansionConfig};
use btforge_core::planner::{PlanReason, Planner, DEFAULT_DEPTH_BOUND};
use btforge_core::{gear, Atom, BehaviorTree, BtNode, Domain, GroundedAction, Plan, WorldState};
use serde_json::Value;

pub const HITL_FEEDBACK: &str = "use clampgripper for gears";
/// Tasks answered with a strictly valid tree that does not reach the goal.
pub const INCOHERENT_A: [&str; 5] = ["gears-03", "gears-06", "gears-09", "gears-12", "gears-15"];
/// Tasks answered with a coherent tree that only parses leniently.
pub const LENIENT_B: [&str; 4] = ["gears-04", "gears-08", "gears-12", "gears-16"];

pub const GOLDEN_TREE: &str = "golden/gears-01-recursive.json";
pub const GOLDEN_PROMPT: &str = "prompts/bt_onestep-gears-01.json";
pub const REPLAY_A: &str = "replay/one-step-12-5.json";
pub const REPLAY_B: &str = "replay/one-step-13-4.json";
pub const REPLAY_RECURSIVE: &str = "replay/recursive-llm.json";
pub const REPLAY_HITL: &str = "replay/hitl-gears-01.json";
pub const MOCK_ITERATIVE: &str = "mock/iterative-two-reply.json";
pub const SUITE: &str = "suite/gears-17.json";

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn domain() -> Arc<Domain> {
    Arc::new(gear::domain())
}

pub fn suite() -> Vec<Task> {
    load_suite(&fixture(SUITE), &gear::domain()).expect("bundled suite loads")
}

pub fn task(id: &str) -> Task {
    suite()
        .into_iter()
        .find(|t| t.id == id)
        .expect("task in suite")
}

pub fn ctx(provider: Arc<dyn ChatProvider>) -> GenContext {
    GenContext::new(domain(), provider)
}

pub fn mock(texts: &[String]) -> Arc<MockProvider> {
    Arc::new(MockProvider::from_texts(texts.iter().cloned()))
}

pub fn a(pred: &str, args: &[&str]) -> Atom {
    Atom::new(pred, args.iter().copied())
}

pub fn g(name: &str, args: &[&str]) -> GroundedAction {
    GroundedAction::new(name, args.iter().copied())
}

pub fn oracle_tree(task: &Task) -> BehaviorTree {
    expand_with_oracle(
        &task.goal,
        &task.initial,
        &gear::domain(),
        ExpansionConfig::default(),
    )
    .expect("oracle expansion")
    .tree
}

pub fn oracle_plan(task: &Task) -> Plan {
    let d = gear::domain();
    let out = Planner::new(&d)
        .make_plan(&task.initial, &task.goal, DEFAULT_DEPTH_BOUND)
        .expect("plan");
    assert_eq!(out.reason, PlanReason::Found, "{} has a plan", task.id);
    out.plan
}

/// A model-style reply wrapping a document in prose and a fence.
pub fn fenced(doc: &str) -> String {
    format!("Here is the behavior tree.\n```json\n{doc}```\nEach action runs after its preconditions hold.\n")
}

/// Insertion tree for the reference task that never acquires the gear.
pub fn shallow_tree() -> BehaviorTree {
    let goal = a("is_inserted_to", &["gear1", "shaft1"]);
    BehaviorTree::new(
        goal.clone(),
        BtNode::selector(vec![
            BtNode::condition(goal),
            BtNode::sequence(vec![
                BtNode::selector(vec![
                    BtNode::condition(a("hold", &["left_hand", "clampgripper"])),
                    BtNode::sequence(vec![
                        BtNode::action(g("put_down", &["left_hand", "parallelgripper", "shaft3"])),
                        BtNode::action(g(
                            "change_tool",
                            &["left_hand", "parallelgripper", "clampgripper"],
                        )),
                    ]),
                ]),
                BtNode::action(g(
                    "insert",
                    &["left_hand", "clampgripper", "gear1", "shaft1"],
                )),
            ]),
        ]),
    )
}

/// Well-formed tree that only tries the plan's final action.
pub fn incoherent_tree(task: &Task) -> BehaviorTree {
    let last = oracle_plan(task).last().expect("non-empty plan").clone();
    BehaviorTree::new(
        task.goal.clone(),
        BtNode::selector(vec![
            BtNode::condition(task.goal.clone()),
            BtNode::sequence(vec![BtNode::action(last)]),
        ]),
    )
}

fn merge_conditions(node: &mut Value) -> bool {
    let Some(children) = node.get_mut("children").and_then(Value::as_array_mut) else {
        return false;
    };
    let is_cond = |v: &Value| v.get("kind").and_then(Value::as_str) == Some("condition");
    if let Some(i) = (0..children.len().saturating_sub(1))
        .find(|&i| is_cond(&children[i]) && is_cond(&children[i + 1]))
    {
        let second = children.remove(i + 1);
        children[i]["atoms"] =
            serde_json::json!([{ "pred": second["name"], "args": second["args"] }]);
        return true;
    }
    children.iter_mut().any(merge_conditions)
}

/// The tree's document with two sibling conditions folded into one
/// two-atom condition, which only the lenient parser accepts.
pub fn lenient_only_document(tree: &BehaviorTree) -> String {
    let mut doc: Value = serde_json::from_str(&serialize_bt(tree)).unwrap();
    assert!(
        merge_conditions(&mut doc["root"]),
        "tree has two sibling conditions"
    );
    let mut text = serde_json::to_string_pretty(&doc).unwrap();
    text.push('\n');
    text
}

/// Reads a rendered makeplan prompt back into (state, goal).
pub fn parse_plan_prompt(messages: &[ChatMessage]) -> (WorldState, Atom) {
    let user = messages
        .iter()
        .find(|m| m.role == Role::User)
        .expect("user turn");
    let mut state = WorldState::new();
    let mut goal = None;
    for line in user.content.lines() {
        if let Some(rest) = line.strip_prefix("Goal condition: ") {
            goal = Some(Atom::parse(rest).expect("goal atom"));
        } else if let Some(body) = line.strip_prefix('(').and_then(|l| l.strip_suffix(')')) {
            let parts: Vec<&str> = body.split(", ").collect();
            let (subject, pred, rest) = (parts[0], parts[1], &parts[2..]);
            let atom = if rest == ["true"] {
                Atom::new(pred, [subject])
            } else {
                Atom::new(pred, std::iter::once(subject).chain(rest.iter().copied()))
            };
            state.insert(atom);
        }
    }
    (state, goal.expect("prompt names a goal"))
}

/// Answers makeplan prompts with the breadth-first planner's plan.
pub struct EchoPlanner {
    domain: Domain,
}

impl EchoPlanner {
    pub fn new() -> Self {
        EchoPlanner {
            domain: gear::domain(),
        }
    }
}

impl ChatProvider for EchoPlanner {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _: &CompletionParams,
    ) -> Result<CompletionResult, LlmError> {
        let (state, goal) = parse_plan_prompt(messages);
        let out = Planner::new(&self.domain)
            .make_plan(&state, &goal, DEFAULT_DEPTH_BOUND)
            .map_err(|e| LlmError::ProviderUnavailable(e.to_string()))?;
        let text = match out.reason {
            PlanReason::Found => out.plan.to_string(),
            _ => "NONE".to_owned(),
        };
        Ok(CompletionResult {
            prompt_tokens: estimate_prompt_tokens(messages),
            completion_tokens: btforge::llm::estimate_tokens(&text),
            text,
        })
    }
}

fn record_one_step(tasks: &[Task], reply: impl Fn(&Task) -> String) -> ReplayFixture {
    let mut fixture = ReplayFixture::default();
    for t in tasks {
        let rec = Arc::new(RecordingProvider::new(MockProvider::from_texts([reply(t)])));
        generate_one_step(t, &ctx(rec.clone())).expect("mock answers");
        fixture.merge(rec.recorded());
    }
    fixture
}

/// One-step replies: coherent trees except [`INCOHERENT_A`].
pub fn replay_a() -> ReplayFixture {
    record_one_step(&suite(), |t| {
        let tree = if INCOHERENT_A.contains(&t.id.as_str()) {
            incoherent_tree(t)
        } else {
            oracle_tree(t)
        };
        fenced(&serialize_bt(&tree))
    })
}

/// One-step replies: coherent trees, lenient-only for [`LENIENT_B`].
pub fn replay_b() -> ReplayFixture {
    record_one_step(&suite(), |t| {
        let tree = oracle_tree(t);
        if LENIENT_B.contains(&t.id.as_str()) {
            fenced(&lenient_only_document(&tree))
        } else {
            fenced(&serialize_bt(&tree))
        }
    })
}

/// Makeplan replies echoing the planner, for every task of the suite.
pub fn replay_recursive() -> ReplayFixture {
    let rec = Arc::new(RecordingProvider::new(EchoPlanner::new()));
    let c = ctx(rec.clone());
    for t in suite() {
        generate_recursive(&t, &c, PlannerKind::Llm).expect("echo answers");
    }
    rec.recorded()
}

/// Reference task: plan, shallow candidate, then the full tree after [`HITL_FEEDBACK`].
pub fn replay_hitl() -> ReplayFixture {
    let t = task("gears-01");
    let replies = [
        format!("The robot should:\n{}", oracle_plan(&t)),
        fenced(&serialize_bt(&shallow_tree())),
        fenced(&serialize_bt(&oracle_tree(&t))),
    ];
    let rec = Arc::new(RecordingProvider::new(MockProvider::from_texts(replies)));
    let c = ctx(rec.clone());
    let mut session = start_hitl(&t, &c).expect("mock answers");
    apply_feedback(&mut session, HITL_FEEDBACK, &c).expect("mock answers");
    rec.recorded()
}

/// Scripted iterative run: incoherent, then coherent, with explicit usage.
pub fn mock_iterative() -> Vec<ReplayEntry> {
    let t = task("gears-01");
    vec![
        ReplayEntry {
            text: fenced(&serialize_bt(&shallow_tree())),
            prompt_tokens: Some(1432),
            completion_tokens: Some(187),
        },
        ReplayEntry {
            text: fenced(&serialize_bt(&oracle_tree(&t))),
            prompt_tokens: Some(2210),
            completion_tokens: Some(655),
        },
    ]
}

pub fn golden_prompt() -> String {
    let t = task("gears-01");
    let pctx = PromptContext::new(&gear::domain(), &t.initial, &t.goal, t.instruction.clone());
    let messages = render_prompt(TemplateId::BtOnestep, &pctx).unwrap();
    let value = serde_json::json!({
        "template": "bt_onestep",
        "task": t.id,
        "estimated_prompt_tokens": estimate_prompt_tokens(&messages),
        "messages": messages,
    });
    let mut text = serde_json::to_string_pretty(&value).unwrap();
    text.push('\n');
    text
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut text = serde_json::to_string_pretty(v).unwrap();
    text.push('\n');
    text
}

/// Every generated fixture as (path under fixtures/, content).
pub fn generated_fixtures() -> Vec<(&'static str, String)> {
    vec![
        (GOLDEN_TREE, serialize_bt(&oracle_tree(&task("gears-01")))),
        (GOLDEN_PROMPT, golden_prompt()),
        (REPLAY_A, replay_a().to_json()),
        (REPLAY_B, replay_b().to_json()),
        (REPLAY_RECURSIVE, replay_recursive().to_json()),
        (REPLAY_HITL, replay_hitl().to_json()),
        (MOCK_ITERATIVE, pretty(&mock_iterative())),
    ]
}

/// Short atom constructor for test assertions.
pub fn goal01() -> Atom {
    a("is_inserted_to", &["gear1", "shaft1"])
}
