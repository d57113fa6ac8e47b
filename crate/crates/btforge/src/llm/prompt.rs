use std::fmt::{self, Write as _};
use std::str::FromStr;

use btforge_core::{Atom, Domain, WorldState};

use super::ChatMessage;

const SEQUENCE_PLANNER: &str = include_str!("../../prompts/sequence_planner.txt");
const BT_ONESTEP: &str = include_str!("../../prompts/bt_onestep.txt");
const BT_REFINE: &str = include_str!("../../prompts/bt_refine.txt");
const MAKEPLAN: &str = include_str!("../../prompts/makeplan.txt");
const BT_FORMAT: &str = include_str!("../../prompts/bt_format.txt");
const ACTION_FORMAT: &str = include_str!("../../prompts/action_format.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    SequencePlanner,
    BtOnestep,
    BtRefine,
    Makeplan,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::SequencePlanner,
        TemplateId::BtOnestep,
        TemplateId::BtRefine,
        TemplateId::Makeplan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::SequencePlanner => "sequence_planner",
            TemplateId::BtOnestep => "bt_onestep",
            TemplateId::BtRefine => "bt_refine",
            TemplateId::Makeplan => "makeplan",
        }
    }

    fn preamble(self) -> &'static str {
        match self {
            TemplateId::SequencePlanner => SEQUENCE_PLANNER,
            TemplateId::BtOnestep => BT_ONESTEP,
            TemplateId::BtRefine => BT_REFINE,
            TemplateId::Makeplan => MAKEPLAN,
        }
    }

    fn answer_format(self) -> &'static str {
        match self {
            TemplateId::SequencePlanner | TemplateId::Makeplan => ACTION_FORMAT,
            TemplateId::BtOnestep | TemplateId::BtRefine => BT_FORMAT,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("instruction is empty")]
    EmptyInstruction,
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_owned()))
    }
}

/// Everything a prompt may draw on. Which fields appear depends on the template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContext {
    pub domain_knowledge: String,
    pub world_triples: String,
    pub instruction: String,
    pub goal: Atom,
    /// Few-shot examples, appended to the system message.
    pub examples: Vec<String>,
    /// Earlier feedback, one user turn each, oldest first.
    pub feedback: Vec<String>,
    /// Numbered action list the tree should realize.
    pub action_sequence: Option<String>,
    /// Tree document being refined.
    pub previous_tree: Option<String>,
}

impl PromptContext {
    pub fn new(
        domain: &Domain,
        state: &WorldState,
        goal: &Atom,
        instruction: impl Into<String>,
    ) -> Self {
        PromptContext {
            domain_knowledge: domain_knowledge(domain),
            world_triples: state.to_triples(),
            instruction: instruction.into(),
            goal: goal.clone(),
            examples: Vec::new(),
            feedback: Vec::new(),
            action_sequence: None,
            previous_tree: None,
        }
    }
}

fn pddl_atom(atom: &Atom) -> String {
    let mut out = format!("({}", atom.pred);
    for a in &atom.args {
        out.push(' ');
        out.push_str(a);
    }
    out.push(')');
    out
}

fn pddl_conj(pos: &[Atom], neg: &[Atom]) -> String {
    let mut parts: Vec<String> = pos.iter().map(pddl_atom).collect();
    parts.extend(neg.iter().map(|a| format!("(not {})", pddl_atom(a))));
    match parts.len() {
        0 => "()".to_owned(),
        1 => parts.remove(0),
        _ => format!("(and {})", parts.join(" ")),
    }
}

/// PDDL-like rendering of the domain with the natural-language notes.
pub fn domain_knowledge(domain: &Domain) -> String {
    let mut out = String::from("Assembly knowledge (PDDL-like, with explanations after `;`).\n\n");
    out.push_str("(:types");
    for ty in domain.types() {
        let _ = write!(out, " {ty}");
    }
    out.push_str(")\n(:objects\n");
    for ty in domain.types() {
        let names: Vec<&str> = domain
            .objects()
            .iter()
            .filter(|(_, t)| t.as_str() == ty)
            .map(|(o, _)| o.as_str())
            .collect();
        if !names.is_empty() {
            let _ = writeln!(out, "  {} - {ty}", names.join(" "));
        }
    }
    out.push_str(")\n(:predicates\n");
    for (pred, sig) in domain.predicates() {
        let params: Vec<String> = sig
            .iter()
            .enumerate()
            .map(|(i, t)| format!("?x{} - {t}", i + 1))
            .collect();
        let _ = write!(out, "  ({pred} {})", params.join(" "));
        if let Some(doc) = domain.doc(pred) {
            let _ = write!(out, "  ; {doc}");
        }
        out.push('\n');
    }
    out.push_str(")\n");
    for t in domain.templates() {
        let params: Vec<String> = t
            .params
            .iter()
            .map(|p| format!("{} - {}", p.var, p.ty))
            .collect();
        out.push('\n');
        if let Some(doc) = &t.doc {
            let _ = writeln!(out, "; {doc}");
        }
        let _ = writeln!(out, "(:action {}", t.name);
        let _ = writeln!(out, "  :parameters ({})", params.join(" "));
        let _ = writeln!(out, "  :precondition {}", pddl_conj(&t.pre, &[]));
        let _ = writeln!(out, "  :effect {})", pddl_conj(&t.add, &t.del));
    }
    out
}

fn state_block(ctx: &PromptContext) -> String {
    format!(
        "World state as (subject, predicate, object) triples; unary facts use `true` as object:\n{}",
        ctx.world_triples
    )
}

fn system_message(template: TemplateId, ctx: &PromptContext) -> String {
    let mut out = String::new();
    out.push_str(template.preamble());
    out.push('\n');
    out.push_str(&ctx.domain_knowledge);
    out.push('\n');
    out.push_str(template.answer_format());
    for (i, example) in ctx.examples.iter().enumerate() {
        let _ = write!(out, "\nExample {}:\n{}\n", i + 1, example.trim_end());
    }
    out
}

fn user_message(template: TemplateId, ctx: &PromptContext) -> String {
    let mut out = state_block(ctx);
    out.push('\n');
    match template {
        TemplateId::SequencePlanner => {
            let _ = write!(
                out,
                "Instruction: {}\nGoal: {}\nWrite the action sequence.",
                ctx.instruction, ctx.goal
            );
        }
        TemplateId::BtOnestep => {
            let _ = writeln!(out, "Instruction: {}\nGoal: {}", ctx.instruction, ctx.goal);
            if let Some(seq) = &ctx.action_sequence {
                let _ = writeln!(out, "Planned action sequence:\n{}", seq.trim_end());
            }
            out.push_str("Write the behavior tree.");
        }
        TemplateId::BtRefine => {
            let _ = writeln!(out, "Instruction: {}\nGoal: {}", ctx.instruction, ctx.goal);
            if let Some(seq) = &ctx.action_sequence {
                let _ = writeln!(out, "Planned action sequence:\n{}", seq.trim_end());
            }
            if let Some(tree) = &ctx.previous_tree {
                let _ = writeln!(
                    out,
                    "Previous behavior tree:\n```json\n{}\n```",
                    tree.trim_end()
                );
            }
            out.push_str("Write the corrected behavior tree.");
        }
        TemplateId::Makeplan => {
            let _ = write!(
                out,
                "Task context: {}\nGoal condition: {}\nWrite the shortest action sequence that makes the goal condition true. Answer NONE if it cannot be made true.",
                ctx.instruction, ctx.goal
            );
        }
    }
    out
}

/// System message, main user message, then one user turn per feedback entry.
/// A pure function of its inputs.
pub fn render_prompt(
    template: TemplateId,
    ctx: &PromptContext,
) -> Result<Vec<ChatMessage>, PromptError> {
    if ctx.instruction.trim().is_empty() {
        return Err(PromptError::EmptyInstruction);
    }
    let mut messages = vec![
        ChatMessage::system(system_message(template, ctx)),
        ChatMessage::user(user_message(template, ctx)),
    ];
    messages.extend(
        ctx.feedback
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| ChatMessage::user(f.clone())),
    );
    Ok(messages)
}
