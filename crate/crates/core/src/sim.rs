//! Symbolic tick executor.
//!
//! Conditions test set membership, actions apply their STRIPS effects and
//! finish within the tick that starts them, so a tick always ends in
//! SUCCESS or FAILURE. [`run`] keeps ticking while failed ticks still make
//! progress, which lets reactive trees recover from an early failure.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::bt::{BehaviorTree, BtNode, NodeId, NodeKind};
use crate::world::{Atom, Domain, GroundedAction, WorldError, WorldState};

pub const DEFAULT_TICK_BUDGET: u32 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TickStatus {
    Success,
    Failure,
}

/// One node evaluation, logged when the node returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tick: u32,
    pub node_id: NodeId,
    pub status: TickStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<GroundedAction>,
}

/// An action that was ticked while one of its preconditions was false.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionViolation {
    pub tick: u32,
    pub node_id: NodeId,
    pub action: GroundedAction,
    pub missing: Atom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimOutcome {
    GoalReached,
    Stalled,
    Failed,
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    UnknownSymbol(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickResult {
    pub status: TickStatus,
    pub executed: Vec<GroundedAction>,
    pub trace: Vec<TraceEntry>,
    pub violations: Vec<ActionViolation>,
    pub state: WorldState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    #[serde(rename = "final")]
    pub outcome: SimOutcome,
    pub goal: Atom,
    pub ticks: u32,
    pub executed: Vec<GroundedAction>,
    pub trace: Vec<TraceEntry>,
    pub violations: Vec<ActionViolation>,
    pub final_state: WorldState,
    /// Set when the tree referenced a symbol the domain does not declare.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

struct Ticker<'a> {
    domain: &'a Domain,
    tick: u32,
    state: WorldState,
    executed: Vec<GroundedAction>,
    trace: Vec<TraceEntry>,
    violations: Vec<ActionViolation>,
}

impl Ticker<'_> {
    fn node(&mut self, node: &BtNode) -> Result<TickStatus, SimError> {
        let mut action = None;
        let status = match &node.kind {
            NodeKind::Condition(atom) => {
                if self.domain.holds(&self.state, atom)? {
                    TickStatus::Success
                } else {
                    TickStatus::Failure
                }
            }
            NodeKind::Action(a) => {
                let missing = self.domain.missing_preconditions(&self.state, a)?;
                if missing.is_empty() {
                    self.state = self.domain.apply_effects(&self.state, a)?;
                    self.executed.push(a.clone());
                    action = Some(a.clone());
                    TickStatus::Success
                } else {
                    self.violations
                        .extend(missing.into_iter().map(|m| ActionViolation {
                            tick: self.tick,
                            node_id: node.id,
                            action: a.clone(),
                            missing: m,
                        }));
                    TickStatus::Failure
                }
            }
            NodeKind::Selector(children) => self.composite(children, TickStatus::Failure)?,
            NodeKind::Sequence(children) => self.composite(children, TickStatus::Success)?,
        };
        self.trace.push(TraceEntry {
            tick: self.tick,
            node_id: node.id,
            status,
            action,
        });
        Ok(status)
    }

    /// Ticks children until one returns something other than `pass`.
    fn composite(&mut self, children: &[BtNode], pass: TickStatus) -> Result<TickStatus, SimError> {
        for child in children {
            let status = self.node(child)?;
            if status != pass {
                return Ok(status);
            }
        }
        Ok(pass)
    }
}

fn tick_numbered(
    tree: &BehaviorTree,
    state: &WorldState,
    domain: &Domain,
    tick: u32,
) -> Result<TickResult, SimError> {
    let mut ticker = Ticker {
        domain,
        tick,
        state: state.clone(),
        executed: Vec::new(),
        trace: Vec::new(),
        violations: Vec::new(),
    };
    let status = ticker.node(tree.root())?;
    Ok(TickResult {
        status,
        executed: ticker.executed,
        trace: ticker.trace,
        violations: ticker.violations,
        state: ticker.state,
    })
}

/// One depth-first pass from the root.
pub fn tick_once(
    tree: &BehaviorTree,
    state: &WorldState,
    domain: &Domain,
) -> Result<TickResult, SimError> {
    tick_numbered(tree, state, domain, 1)
}

/// Ticks until the root succeeds, a failed tick makes no progress, or the
/// budget runs out.
pub fn run(
    tree: &BehaviorTree,
    state: &WorldState,
    domain: &Domain,
    goal: &Atom,
    tick_budget: u32,
) -> SimReport {
    let mut report = SimReport {
        outcome: SimOutcome::BudgetExceeded,
        goal: goal.clone(),
        ticks: 0,
        executed: Vec::new(),
        trace: Vec::new(),
        violations: Vec::new(),
        final_state: state.clone(),
        fault: None,
    };
    for tick in 1..=tick_budget {
        let result = match tick_numbered(tree, &report.final_state, domain, tick) {
            Ok(r) => r,
            Err(e) => {
                report.outcome = SimOutcome::Failed;
                report.fault = Some(e.to_string());
                return report;
            }
        };
        report.ticks = tick;
        let progressed = !result.executed.is_empty();
        let violated = !result.violations.is_empty();
        report.executed.extend(result.executed);
        report.trace.extend(result.trace);
        report.violations.extend(result.violations);
        report.final_state = result.state;
        match result.status {
            TickStatus::Success => {
                report.outcome = if report.final_state.contains(goal) {
                    SimOutcome::GoalReached
                } else {
                    SimOutcome::Failed
                };
                return report;
            }
            TickStatus::Failure if progressed => {}
            TickStatus::Failure => {
                report.outcome = if violated {
                    SimOutcome::Failed
                } else {
                    SimOutcome::Stalled
                };
                return report;
            }
        }
    }
    report
}

fn action_list(actions: &[GroundedAction]) -> String {
    if actions.is_empty() {
        return "none".to_string();
    }
    let mut out = String::new();
    for (i, a) in actions.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{a}");
    }
    out
}

/// Deterministic natural-language summary of a simulation, used as
/// regeneration feedback.
pub fn feedback_message(report: &SimReport) -> String {
    let mut msg = String::new();
    let executed = action_list(&report.executed);
    match report.outcome {
        SimOutcome::GoalReached => {
            let _ = write!(
                msg,
                "Simulation: execution succeeded. The goal {} holds. Executed actions: {executed}.",
                report.goal
            );
        }
        SimOutcome::Failed | SimOutcome::Stalled | SimOutcome::BudgetExceeded => {
            let label = match report.outcome {
                SimOutcome::Failed => "execution failed",
                SimOutcome::Stalled => "execution stalled",
                _ => "execution did not terminate",
            };
            let _ = write!(
                msg,
                "Simulation: {label} after {} tick(s). Executed actions: {executed}.",
                report.ticks
            );
            if let Some(fault) = &report.fault {
                let _ = write!(msg, " The tree could not be simulated: {fault}.");
            } else if let Some(v) = report.violations.first() {
                let _ = write!(
                    msg,
                    " Action {} could not run because its precondition {} does not hold.",
                    v.action, v.missing
                );
            } else if report.outcome == SimOutcome::BudgetExceeded {
                let _ = write!(msg, " The tree kept acting without succeeding.");
            } else if report.outcome == SimOutcome::Stalled {
                let _ = write!(msg, " No action was attempted and the root failed.");
            }
            let _ = write!(
                msg,
                " The goal {} was not reached. Revise the behavior tree so that every action's preconditions are achieved before it runs.",
                report.goal
            );
        }
    }
    msg
}
