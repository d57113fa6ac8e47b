//! Recursive behavior-tree expansion.
//!
//! Starting from a bare goal condition, every condition that does not hold
//! in the state threaded to it is replaced by
//! `Selector[Condition(g), Sequence[Condition(p)..., Action(a)]]`, where `a`
//! is the last step of a plan achieving `g` and the `p` are its
//! preconditions. The preconditions are then expanded the same way.
//!
//! State threading: siblings are planned one after another, each from the
//! state the previous sibling's plan leaves behind. A node's own
//! preconditions are expanded from the state the node itself was planned
//! from ([`RecursionState::BranchEntry`]). [`RecursionState::PostPlan`]
//! hands them the state after the node's plan instead; it is kept for
//! comparison and does not yield the nested tool-change subtrees.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::bt::{BehaviorTree, BtNode, NodeKind};
use crate::planner::{
    estimate_state, PlanError, PlanOutcome, PlanReason, Planner, DEFAULT_DEPTH_BOUND,
};
use crate::world::{Atom, Domain, GroundedAction, WorldError, WorldState};

pub const DEFAULT_MAX_DEPTH: usize = 12;

/// Source of plans for the expansion: the symbolic planner, or anything
/// else able to propose an action sequence for a goal.
pub trait PlanBackend {
    type Error;

    fn make_plan(&mut self, state: &WorldState, goal: &Atom) -> Result<PlanOutcome, Self::Error>;
}

impl<B: PlanBackend + ?Sized> PlanBackend for &mut B {
    type Error = B::Error;

    fn make_plan(&mut self, state: &WorldState, goal: &Atom) -> Result<PlanOutcome, Self::Error> {
        (**self).make_plan(state, goal)
    }
}

/// Breadth-first planner backend.
pub struct OracleBackend<'d> {
    planner: Planner<'d>,
    depth_bound: usize,
}

impl<'d> OracleBackend<'d> {
    pub fn new(domain: &'d Domain, depth_bound: usize) -> Self {
        OracleBackend {
            planner: Planner::new(domain),
            depth_bound,
        }
    }
}

impl PlanBackend for OracleBackend<'_> {
    type Error = PlanError;

    fn make_plan(&mut self, state: &WorldState, goal: &Atom) -> Result<PlanOutcome, PlanError> {
        self.planner.make_plan(state, goal, self.depth_bound)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RecursionState {
    /// Preconditions expand from the state their parent was planned from.
    #[default]
    BranchEntry,
    /// Preconditions expand from the state after the parent's plan.
    PostPlan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpansionConfig {
    /// Deepest nesting level at which a subtree may be created; the goal is level 1.
    pub max_depth: usize,
    /// Forwarded to the planner.
    pub depth_bound: usize,
    pub recursion: RecursionState,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            max_depth: DEFAULT_MAX_DEPTH,
            depth_bound: DEFAULT_DEPTH_BOUND,
            recursion: RecursionState::BranchEntry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("node is not a condition")]
    NotACondition,
    #[error("action `{0}` has no add effect")]
    NoAddEffect(String),
    #[error("action `{action}` does not add `{goal}`")]
    GoalNotAdded { action: String, goal: String },
    #[error("malformed subtree: {0}")]
    MalformedSubtree(&'static str),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpansionError<E> {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("expansion deeper than {0} levels")]
    DepthExceeded(usize),
    #[error("planner failed: {0}")]
    Planner(E),
    #[error("proposed plan does not execute: {0}")]
    Estimate(PlanError),
}

/// Result of an expansion run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub tree: BehaviorTree,
    /// Frontier conditions that neither held nor had a plan.
    pub unresolved: Vec<Atom>,
    /// Number of `make_plan` calls issued.
    pub plan_calls: usize,
}

impl Expansion {
    pub fn is_complete(&self) -> bool {
        self.unresolved.is_empty()
    }
}

pub fn get_goal(node: &BtNode) -> Result<&Atom, ShapeError> {
    node.as_condition().ok_or(ShapeError::NotACondition)
}

/// `Selector[Condition(goal), Sequence[Condition(pre)..., Action(action)]]`.
/// Without an explicit goal the first add effect is used.
pub fn make_tree(
    action: &GroundedAction,
    domain: &Domain,
    goal: Option<&Atom>,
) -> Result<BtNode, ShapeError> {
    domain.check_action(action)?;
    let inst = domain.instantiate(action)?;
    let goal = match goal {
        Some(g) if inst.add.contains(g) => g.clone(),
        Some(g) => {
            return Err(ShapeError::GoalNotAdded {
                action: action.to_string(),
                goal: g.to_string(),
            })
        }
        None => inst
            .add
            .first()
            .cloned()
            .ok_or_else(|| ShapeError::NoAddEffect(action.to_string()))?,
    };
    let mut seq: Vec<BtNode> = inst.pre.into_iter().map(BtNode::condition).collect();
    seq.push(BtNode::action(action.clone()));
    Ok(BtNode::selector(alloc::vec![
        BtNode::condition(goal),
        BtNode::sequence(seq)
    ]))
}

fn sequence_of(tree: &BtNode) -> Result<&Vec<BtNode>, ShapeError> {
    let NodeKind::Selector(children) = &tree.kind else {
        return Err(ShapeError::MalformedSubtree("root is not a selector"));
    };
    match children.as_slice() {
        [goal, seq] if goal.as_condition().is_some() => match &seq.kind {
            NodeKind::Sequence(steps) if steps.last().and_then(BtNode::as_action).is_some() => {
                Ok(steps)
            }
            _ => Err(ShapeError::MalformedSubtree(
                "second child is not a sequence ending in an action",
            )),
        },
        _ => Err(ShapeError::MalformedSubtree(
            "expected a goal condition and one sequence",
        )),
    }
}

/// The precondition nodes of a subtree built by [`make_tree`], in order.
/// A precondition that has already been expanded is represented by the
/// condition guarding its selector.
pub fn get_cond_children(tree: &BtNode) -> Result<Vec<&BtNode>, ShapeError> {
    let steps = sequence_of(tree)?;
    let (_, slots) = steps.split_last().expect("sequence_of checked the action");
    slots
        .iter()
        .map(|slot| match &slot.kind {
            NodeKind::Condition(_) => Ok(slot),
            NodeKind::Selector(c) if c.first().and_then(BtNode::as_condition).is_some() => {
                Ok(&c[0])
            }
            _ => Err(ShapeError::MalformedSubtree(
                "non-condition before the action",
            )),
        })
        .collect()
}

fn cond_children_mut(tree: &mut BtNode) -> &mut [BtNode] {
    let NodeKind::Selector(children) = &mut tree.kind else {
        unreachable!("built by make_tree")
    };
    let NodeKind::Sequence(steps) = &mut children[1].kind else {
        unreachable!("built by make_tree")
    };
    let n = steps.len() - 1;
    &mut steps[..n]
}

struct Expander<'a, B> {
    domain: &'a Domain,
    backend: B,
    config: ExpansionConfig,
    unresolved: Vec<Atom>,
    plan_calls: usize,
}

impl<B: PlanBackend> Expander<'_, B> {
    fn expand(
        &mut self,
        nodes: &mut [BtNode],
        incoming: &WorldState,
        level: usize,
    ) -> Result<(), ExpansionError<B::Error>> {
        let mut current = incoming.clone();
        for node in nodes.iter_mut() {
            let goal = get_goal(node)?.clone();
            self.plan_calls += 1;
            let outcome = self
                .backend
                .make_plan(&current, &goal)
                .map_err(ExpansionError::Planner)?;
            let Some(last) = outcome.plan.last() else {
                if outcome.reason == PlanReason::Unreachable && !current.contains(&goal) {
                    self.unresolved.push(goal);
                }
                continue;
            };
            if level > self.config.max_depth {
                return Err(ExpansionError::DepthExceeded(self.config.max_depth));
            }
            let after = estimate_state(&current, &outcome.plan, self.domain)
                .map_err(ExpansionError::Estimate)?;
            let mut subtree = make_tree(last, self.domain, Some(&goal))?;
            let child_state = match self.config.recursion {
                RecursionState::BranchEntry => &current,
                RecursionState::PostPlan => &after,
            };
            self.expand(cond_children_mut(&mut subtree), child_state, level + 1)?;
            *node = subtree;
            current = after;
        }
        Ok(())
    }
}

/// Expands `goal` from `s0` into a full tree using `backend` for planning.
pub fn expand_behavior_tree<B: PlanBackend>(
    goal: &Atom,
    s0: &WorldState,
    domain: &Domain,
    backend: B,
    config: ExpansionConfig,
) -> Result<Expansion, ExpansionError<B::Error>> {
    domain.check_atom(goal).map_err(ShapeError::from)?;
    let mut expander = Expander {
        domain,
        backend,
        config,
        unresolved: Vec::new(),
        plan_calls: 0,
    };
    let mut root = BtNode::condition(goal.clone());
    expander.expand(core::slice::from_mut(&mut root), s0, 1)?;
    if root.as_condition().is_some() {
        root = BtNode::selector(alloc::vec![root]);
    }
    Ok(Expansion {
        tree: BehaviorTree::new(goal.clone(), root),
        unresolved: expander.unresolved,
        plan_calls: expander.plan_calls,
    })
}

/// Expansion with the breadth-first planner as backend.
pub fn expand_with_oracle(
    goal: &Atom,
    s0: &WorldState,
    domain: &Domain,
    config: ExpansionConfig,
) -> Result<Expansion, ExpansionError<PlanError>> {
    let backend = OracleBackend::new(domain, config.depth_bound);
    expand_behavior_tree(goal, s0, domain, backend, config)
}
