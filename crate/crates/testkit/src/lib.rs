//! Test support shared by the workspace test suites.
//!
//! Everything here is written independently of the code under test: the
//! gear-world transition function is hand-coded from the action
//! definitions, the shortest-plan oracle is an iterative-deepening search
//! with no state deduplication, and the reference tree is assembled node by
//! node.

use std::collections::BTreeSet;

use btforge_core::{Atom, BehaviorTree, BtNode, Domain, GroundedAction, WorldState};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn atom(pred: &str, args: &[&str]) -> Atom {
    Atom::new(pred, args.iter().copied())
}

fn act(name: &str, args: &[&str]) -> GroundedAction {
    GroundedAction::new(name, args.iter().copied())
}

/// Objects of the gear world grouped by type, each list sorted.
#[derive(Debug, Clone)]
pub struct GearObjects {
    pub hands: Vec<String>,
    pub tools: Vec<String>,
    pub parts: Vec<String>,
    pub sites: Vec<String>,
}

impl GearObjects {
    pub fn of(domain: &Domain) -> Self {
        let pick = |ty: &str| -> Vec<String> {
            domain
                .objects()
                .iter()
                .filter(|(_, t)| t.as_str() == ty)
                .map(|(o, _)| o.clone())
                .collect()
        };
        GearObjects {
            hands: pick("hand"),
            tools: pick("tool"),
            parts: pick("part"),
            sites: pick("site"),
        }
    }

    /// Insertion targets: parts and sites, in lexicographic order.
    pub fn targets(&self) -> Vec<String> {
        let mut all: Vec<String> = self.parts.iter().chain(&self.sites).cloned().collect();
        all.sort();
        all
    }
}

/// Hand-coded gear-world action semantics over plain atom sets.
pub struct GearModel {
    pub objects: GearObjects,
}

type Effects = (Vec<Atom>, Vec<Atom>, Vec<Atom>);

impl GearModel {
    pub fn new(domain: &Domain) -> Self {
        GearModel {
            objects: GearObjects::of(domain),
        }
    }

    /// All ground actions: put_down, change_tool, pick_up, insert, each
    /// with arguments in lexicographic order.
    pub fn actions(&self) -> Vec<GroundedAction> {
        let o = &self.objects;
        let mut out = Vec::new();
        for h in &o.hands {
            for t in &o.tools {
                for p in &o.parts {
                    out.push(act("put_down", &[h, t, p]));
                }
            }
        }
        for h in &o.hands {
            for t1 in &o.tools {
                for t2 in &o.tools {
                    out.push(act("change_tool", &[h, t1, t2]));
                }
            }
        }
        for h in &o.hands {
            for t in &o.tools {
                for p in &o.parts {
                    out.push(act("pick_up", &[h, t, p]));
                }
            }
        }
        let targets = o.targets();
        for h in &o.hands {
            for t in &o.tools {
                for p in &o.parts {
                    for s in &targets {
                        out.push(act("insert", &[h, t, p, s]));
                    }
                }
            }
        }
        out
    }

    /// (pre, add, del) of a gear action.
    pub fn effects(&self, a: &GroundedAction) -> Effects {
        let g: Vec<&str> = a.args.iter().map(String::as_str).collect();
        match a.name.as_str() {
            "put_down" => (
                vec![atom("hold", &[g[0], g[1]]), atom("hold", &[g[1], g[2]])],
                vec![atom("is_empty", &[g[1]])],
                vec![atom("hold", &[g[1], g[2]])],
            ),
            "change_tool" => (
                vec![atom("hold", &[g[0], g[1]]), atom("is_empty", &[g[1]])],
                vec![atom("hold", &[g[0], g[2]])],
                vec![atom("hold", &[g[0], g[1]])],
            ),
            "pick_up" => (
                vec![
                    atom("hold", &[g[0], g[1]]),
                    atom("is_empty", &[g[1]]),
                    atom("can_grasp", &[g[1], g[2]]),
                ],
                vec![atom("hold", &[g[1], g[2]])],
                vec![atom("is_empty", &[g[1]])],
            ),
            "insert" => (
                vec![atom("hold", &[g[0], g[1]]), atom("hold", &[g[1], g[2]])],
                vec![
                    atom("is_inserted_to", &[g[2], g[3]]),
                    atom("is_empty", &[g[1]]),
                ],
                vec![atom("hold", &[g[1], g[2]])],
            ),
            other => panic!("not a gear action: {other}"),
        }
    }

    pub fn step(&self, state: &BTreeSet<Atom>, a: &GroundedAction) -> Option<BTreeSet<Atom>> {
        let (pre, add, del) = self.effects(a);
        if !pre.iter().all(|p| state.contains(p)) {
            return None;
        }
        let mut next = state.clone();
        for d in &del {
            next.remove(d);
        }
        next.extend(add);
        Some(next)
    }

    /// Replays a plan; `None` if some step is not applicable.
    pub fn replay(&self, state: &WorldState, plan: &[GroundedAction]) -> Option<BTreeSet<Atom>> {
        let mut s: BTreeSet<Atom> = state.iter().cloned().collect();
        for a in plan {
            s = self.step(&s, a)?;
        }
        Some(s)
    }

    /// Shortest plan by iterative deepening without duplicate pruning. The
    /// first plan found at the minimal depth is the lexicographically
    /// smallest one in [`GearModel::actions`] order.
    pub fn shortest_plan(
        &self,
        state: &WorldState,
        goal: &Atom,
        max_len: usize,
    ) -> Option<Vec<GroundedAction>> {
        let start: BTreeSet<Atom> = state.iter().cloned().collect();
        if start.contains(goal) {
            return Some(Vec::new());
        }
        let actions = self.actions();
        for depth in 1..=max_len {
            let mut path = Vec::new();
            let mut on_path = vec![start.clone()];
            if self.dfs(&start, goal, depth, &actions, &mut path, &mut on_path) {
                return Some(path);
            }
        }
        None
    }

    fn dfs(
        &self,
        s: &BTreeSet<Atom>,
        goal: &Atom,
        remaining: usize,
        actions: &[GroundedAction],
        path: &mut Vec<GroundedAction>,
        on_path: &mut Vec<BTreeSet<Atom>>,
    ) -> bool {
        if remaining == 0 {
            return s.contains(goal);
        }
        for a in actions {
            let Some(next) = self.step(s, a) else {
                continue;
            };
            // a shortest plan never revisits a state
            if on_path.contains(&next) {
                continue;
            }
            path.push(a.clone());
            on_path.push(next.clone());
            if self.dfs(&next, goal, remaining - 1, actions, path, on_path) {
                return true;
            }
            path.pop();
            on_path.pop();
        }
        false
    }
}

/// Expected tree for the reference task, built by hand.
pub fn reference_tree() -> BehaviorTree {
    let c = |p: &str, a: &[&str]| BtNode::condition(atom(p, a));
    let a = |n: &str, g: &[&str]| BtNode::action(act(n, g));
    let lh = "left_hand";
    let pg = "parallelgripper";
    let cg = "clampgripper";

    let free_pg = BtNode::selector(vec![
        c("is_empty", &[pg]),
        BtNode::sequence(vec![
            c("hold", &[lh, pg]),
            c("hold", &[pg, "shaft3"]),
            a("put_down", &[lh, pg, "shaft3"]),
        ]),
    ]);
    let hold_cg = BtNode::selector(vec![
        c("hold", &[lh, cg]),
        BtNode::sequence(vec![
            c("hold", &[lh, pg]),
            free_pg,
            a("change_tool", &[lh, pg, cg]),
        ]),
    ]);
    let grip_gear = BtNode::selector(vec![
        c("hold", &[cg, "gear1"]),
        BtNode::sequence(vec![
            c("hold", &[lh, cg]),
            c("is_empty", &[cg]),
            c("can_grasp", &[cg, "gear1"]),
            a("pick_up", &[lh, cg, "gear1"]),
        ]),
    ]);
    let root = BtNode::selector(vec![
        c("is_inserted_to", &["gear1", "shaft1"]),
        BtNode::sequence(vec![
            hold_cg,
            grip_gear,
            a("insert", &[lh, cg, "gear1", "shaft1"]),
        ]),
    ]);
    BehaviorTree::new(atom("is_inserted_to", &["gear1", "shaft1"]), root)
}

/// The action order a correct reference tree executes.
pub fn reference_execution() -> Vec<GroundedAction> {
    let lh = "left_hand";
    vec![
        act("put_down", &[lh, "parallelgripper", "shaft3"]),
        act("change_tool", &[lh, "parallelgripper", "clampgripper"]),
        act("pick_up", &[lh, "clampgripper", "gear1"]),
        act("insert", &[lh, "clampgripper", "gear1", "shaft1"]),
    ]
}

/// A random state satisfying the gear-world mutual exclusions: the hand
/// holds one tool, each tool holds at most one part or is empty, parts are
/// held, inserted or lying free. Domain facts are merged in.
pub fn random_state(domain: &Domain, rng: &mut TestRng) -> WorldState {
    let o = GearObjects::of(domain);
    let mut s = WorldState::new();
    for f in domain.facts() {
        s.insert(f.clone());
    }
    for h in &o.hands {
        let t = o.tools.choose(rng).expect("tools");
        s.insert(atom("hold", &[h, t]));
    }
    let mut free_tools: Vec<&String> = o.tools.iter().collect();
    let targets = o.targets();
    for p in &o.parts {
        match rng.random_range(0..4) {
            0 if !free_tools.is_empty() => {
                let i = rng.random_range(0..free_tools.len());
                let t = free_tools.swap_remove(i);
                s.insert(atom("hold", &[t, p]));
            }
            1 => {
                let target = targets.iter().filter(|t| *t != p).collect::<Vec<_>>();
                let t = target.choose(rng).expect("targets");
                s.insert(atom("is_inserted_to", &[p, t]));
            }
            _ => {}
        }
    }
    for t in free_tools {
        if rng.random_bool(0.9) {
            s.insert(atom("is_empty", &[t]));
        }
    }
    s
}

/// A random goal over the dynamic predicates.
pub fn random_goal(domain: &Domain, rng: &mut TestRng) -> Atom {
    let o = GearObjects::of(domain);
    let p = o.parts.choose(rng).expect("parts");
    let t = o.tools.choose(rng).expect("tools");
    match rng.random_range(0..4) {
        0 => {
            let targets: Vec<String> = o.targets().into_iter().filter(|x| x != p).collect();
            atom(
                "is_inserted_to",
                &[p, targets.choose(rng).expect("targets")],
            )
        }
        1 => atom("hold", &[o.hands.choose(rng).expect("hands"), t]),
        2 => atom("hold", &[t, p]),
        _ => atom("is_empty", &[t]),
    }
}

/// Every type-correct ground atom of the domain.
pub fn all_atoms(domain: &Domain) -> Vec<Atom> {
    let mut out = Vec::new();
    for (pred, sig) in domain.predicates() {
        let candidates: Vec<Vec<&String>> = sig
            .iter()
            .map(|ty| {
                domain
                    .objects()
                    .iter()
                    .filter(|(_, t)| ty.admits(t))
                    .map(|(o, _)| o)
                    .collect()
            })
            .collect();
        let mut partial: Vec<Vec<String>> = vec![vec![]];
        for c in &candidates {
            partial = partial
                .into_iter()
                .flat_map(|prefix| {
                    c.iter().map(move |o| {
                        let mut v = prefix.clone();
                        v.push((*o).clone());
                        v
                    })
                })
                .collect();
        }
        out.extend(
            partial
                .into_iter()
                .map(|args| Atom::new(pred.clone(), args)),
        );
    }
    out
}

/// Random domain-valid tree of bounded depth, mixing the given atoms and
/// actions as leaves.
pub fn random_tree(
    atoms: &[Atom],
    actions: &[GroundedAction],
    max_depth: usize,
    rng: &mut TestRng,
) -> BehaviorTree {
    let root = random_node(atoms, actions, max_depth, rng, true);
    let target = atoms.choose(rng).expect("atoms").clone();
    BehaviorTree::new(target, root)
}

fn random_node(
    atoms: &[Atom],
    actions: &[GroundedAction],
    depth: usize,
    rng: &mut TestRng,
    force_composite: bool,
) -> BtNode {
    if depth > 0 && (force_composite || rng.random_bool(0.4)) {
        let n = rng.random_range(1..=4);
        let children = (0..n)
            .map(|_| random_node(atoms, actions, depth - 1, rng, false))
            .collect();
        if rng.random_bool(0.5) {
            BtNode::selector(children)
        } else {
            BtNode::sequence(children)
        }
    } else if rng.random_bool(0.5) {
        BtNode::condition(atoms.choose(rng).expect("atoms").clone())
    } else {
        BtNode::action(actions.choose(rng).expect("actions").clone())
    }
}
