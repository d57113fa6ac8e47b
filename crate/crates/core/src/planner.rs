//! Breadth-first forward search over grounded actions.
//!
//! Ground atoms are interned into a bitset so that states hash and compare
//! cheaply; duplicate states are pruned. Successors are generated in
//! [`Domain::ground_actions`] order and the goal is tested on generation,
//! so the returned plan is the shortest one, and among the shortest the
//! first in that order.
//!
//! Before searching, a delete-relaxed reachability pass drops actions that
//! can never fire from the start state and answers `Unreachable` outright
//! when even the relaxation cannot reach the goal.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use hashbrown::HashSet;
use serde::{Deserialize, Serialize};

use crate::world::{Atom, Domain, GroundedAction, WorldError, WorldState};

pub const DEFAULT_DEPTH_BOUND: usize = 8;

/// An ordered action sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Plan {
    pub steps: Vec<GroundedAction>,
}

impl Plan {
    pub fn new(steps: Vec<GroundedAction>) -> Self {
        Plan { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&GroundedAction> {
        self.steps.last()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GroundedAction> {
        self.steps.iter()
    }
}

impl fmt::Display for Plan {
    /// Numbered lines, `1. put_down(left_hand, parallelgripper, shaft3)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.steps.iter().enumerate() {
            writeln!(f, "{}. {step}", i + 1)?;
        }
        Ok(())
    }
}

impl FromIterator<GroundedAction> for Plan {
    fn from_iter<I: IntoIterator<Item = GroundedAction>>(iter: I) -> Self {
        Plan {
            steps: iter.into_iter().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlanReason {
    AlreadySatisfied,
    Found,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: Plan,
    pub reason: PlanReason,
}

impl PlanOutcome {
    pub fn already_satisfied() -> Self {
        PlanOutcome {
            plan: Plan::default(),
            reason: PlanReason::AlreadySatisfied,
        }
    }

    pub fn unreachable() -> Self {
        PlanOutcome {
            plan: Plan::default(),
            reason: PlanReason::Unreachable,
        }
    }

    pub fn found(plan: Plan) -> Self {
        PlanOutcome {
            plan,
            reason: PlanReason::Found,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("plan step {index} `{action}` is not applicable")]
    NotApplicable { index: usize, action: String },
}

type Bits = Vec<u64>;

struct Compiled {
    pre: Vec<usize>,
    add: Vec<usize>,
    del: Vec<usize>,
}

/// Word masks of a compiled action.
struct Masks {
    pre: Bits,
    add: Bits,
    del: Bits,
}

impl Masks {
    fn applicable(&self, bits: &[u64]) -> bool {
        self.pre.iter().zip(bits).all(|(m, b)| b & m == *m)
    }

    fn apply(&self, bits: &[u64]) -> Bits {
        bits.iter()
            .zip(&self.del)
            .zip(&self.add)
            .map(|((b, d), a)| (b & !d) | a)
            .collect()
    }
}

fn test(bits: &[u64], i: usize) -> bool {
    bits[i / 64] & (1 << (i % 64)) != 0
}

fn set(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

struct Relaxed {
    actions: Vec<usize>,
    reached: Vec<bool>,
}

/// Grounds a domain once and answers many planning queries against it.
pub struct Planner<'d> {
    domain: &'d Domain,
    actions: Vec<GroundedAction>,
    compiled: Vec<Compiled>,
    masks: Vec<Masks>,
    index: BTreeMap<Atom, usize>,
    words: usize,
}

impl<'d> Planner<'d> {
    pub fn new(domain: &'d Domain) -> Self {
        let actions = domain.ground_actions();
        let mut index: BTreeMap<Atom, usize> = BTreeMap::new();
        let mut intern = |atom: Atom| {
            let next = index.len();
            *index.entry(atom).or_insert(next)
        };
        let mut compiled = Vec::with_capacity(actions.len());
        for action in &actions {
            let inst = domain
                .instantiate(action)
                .expect("ground_actions yields well-formed bindings");
            compiled.push(Compiled {
                pre: inst.pre.into_iter().map(&mut intern).collect(),
                add: inst.add.into_iter().map(&mut intern).collect(),
                del: inst.del.into_iter().map(&mut intern).collect(),
            });
        }
        let words = index.len().div_ceil(64).max(1);
        let mask = |atoms: &[usize]| {
            let mut bits = alloc::vec![0u64; words];
            for &i in atoms {
                set(&mut bits, i);
            }
            bits
        };
        let masks = compiled
            .iter()
            .map(|c| Masks {
                pre: mask(&c.pre),
                add: mask(&c.add),
                del: mask(&c.del),
            })
            .collect();
        Planner {
            domain,
            actions,
            compiled,
            masks,
            index,
            words,
        }
    }

    pub fn domain(&self) -> &'d Domain {
        self.domain
    }

    fn encode(&self, state: &WorldState) -> Bits {
        let mut bits = alloc::vec![0u64; self.words];
        for atom in state {
            if let Some(&i) = self.index.get(atom) {
                set(&mut bits, i);
            }
        }
        bits
    }

    /// Shortest plan from `state` to `goal` of at most `depth_bound` steps.
    pub fn make_plan(
        &self,
        state: &WorldState,
        goal: &Atom,
        depth_bound: usize,
    ) -> Result<PlanOutcome, PlanError> {
        self.domain.check_atom(goal)?;
        if state.contains(goal) {
            return Ok(PlanOutcome::already_satisfied());
        }
        // an atom no action mentions can only hold initially
        let Some(&goal_bit) = self.index.get(goal) else {
            return Ok(PlanOutcome::unreachable());
        };
        let start = self.encode(state);
        let relaxed = self.relaxed_usable(&start);
        if !relaxed.reached[goal_bit] {
            return Ok(PlanOutcome::unreachable());
        }
        let usable = relaxed.actions;

        // (state, parent node, action that produced it)
        let mut nodes: Vec<(Bits, usize, usize)> =
            alloc::vec![(start.clone(), usize::MAX, usize::MAX)];
        let mut seen: HashSet<Bits> = HashSet::new();
        seen.insert(start);
        let mut level = 0..1;
        for _ in 0..depth_bound {
            let next_start = nodes.len();
            for n in level.clone() {
                for &a in &usable {
                    let m = &self.masks[a];
                    if !m.applicable(&nodes[n].0) {
                        continue;
                    }
                    let bits = m.apply(&nodes[n].0);
                    if seen.contains(&bits) {
                        continue;
                    }
                    let reached = test(&bits, goal_bit);
                    seen.insert(bits.clone());
                    nodes.push((bits, n, a));
                    if reached {
                        return Ok(PlanOutcome::found(self.extract(&nodes, nodes.len() - 1)));
                    }
                }
            }
            if nodes.len() == next_start {
                break;
            }
            level = next_start..nodes.len();
        }
        Ok(PlanOutcome::unreachable())
    }

    /// Delete-relaxed fixpoint from `start`: actions whose preconditions can
    /// ever become true, and the atoms they can reach. Anything outside it
    /// stays unreachable in the real search too.
    fn relaxed_usable(&self, start: &[u64]) -> Relaxed {
        let mut reached: Vec<bool> = (0..self.index.len()).map(|i| test(start, i)).collect();
        let mut fired = alloc::vec![false; self.compiled.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for (a, c) in self.compiled.iter().enumerate() {
                if fired[a] || !c.pre.iter().all(|&p| reached[p]) {
                    continue;
                }
                fired[a] = true;
                changed = true;
                for &i in &c.add {
                    reached[i] = true;
                }
            }
        }
        Relaxed {
            actions: (0..fired.len()).filter(|&a| fired[a]).collect(),
            reached,
        }
    }

    fn extract(&self, nodes: &[(Bits, usize, usize)], mut n: usize) -> Plan {
        let mut steps = Vec::new();
        while nodes[n].1 != usize::MAX {
            steps.push(self.actions[nodes[n].2].clone());
            n = nodes[n].1;
        }
        steps.reverse();
        Plan { steps }
    }
}

/// One-shot form of [`Planner::make_plan`].
pub fn make_plan(
    state: &WorldState,
    goal: &Atom,
    domain: &Domain,
    depth_bound: usize,
) -> Result<PlanOutcome, PlanError> {
    Planner::new(domain).make_plan(state, goal, depth_bound)
}

/// Left fold of [`Domain::apply_effects`] over the plan.
pub fn estimate_state(
    state: &WorldState,
    plan: &Plan,
    domain: &Domain,
) -> Result<WorldState, PlanError> {
    let mut current = state.clone();
    for (index, step) in plan.iter().enumerate() {
        if !domain.applicable(&current, step)? {
            return Err(PlanError::NotApplicable {
                index,
                action: alloc::string::ToString::to_string(step),
            });
        }
        current = domain.apply_effects(&current, step)?;
    }
    Ok(current)
}

/// True iff the plan is applicable step by step and ends in a goal state.
pub fn validate_plan(state: &WorldState, plan: &Plan, goal: &Atom, domain: &Domain) -> bool {
    estimate_state(state, plan, domain).is_ok_and(|end| end.contains(goal))
}
