//! Behavior-tree node algebra.
//!
//! Only the four node kinds the generator emits exist here: selector,
//! sequence, condition and action. Leaves carry a ground atom or a grounded
//! action; composites carry their children. Node ids are preorder indices
//! and are reassigned whenever a [`BehaviorTree`] is built, so two trees
//! with the same shape always compare equal.

mod doc;
mod validate;

pub use doc::{parse_bt_lenient, parse_bt_strict, serialize_bt, Finding, FormatRule, ParseError};
pub use validate::{validate_structure, ValidationReport, ValidationRule, Violation};

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::world::{Atom, GroundedAction};

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Selector,
    Sequence,
    Condition,
    Action,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Selector => "selector",
            Kind::Sequence => "sequence",
            Kind::Condition => "condition",
            Kind::Action => "action",
        }
    }

    pub fn from_name(name: &str) -> Option<Kind> {
        match name {
            "selector" => Some(Kind::Selector),
            "sequence" => Some(Kind::Sequence),
            "condition" => Some(Kind::Condition),
            "action" => Some(Kind::Action),
            _ => None,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Selector(Vec<BtNode>),
    Sequence(Vec<BtNode>),
    Condition(Atom),
    Action(GroundedAction),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BtNode {
    pub id: NodeId,
    pub kind: NodeKind,
}

impl BtNode {
    pub fn selector(children: Vec<BtNode>) -> Self {
        BtNode {
            id: 0,
            kind: NodeKind::Selector(children),
        }
    }

    pub fn sequence(children: Vec<BtNode>) -> Self {
        BtNode {
            id: 0,
            kind: NodeKind::Sequence(children),
        }
    }

    pub fn condition(atom: Atom) -> Self {
        BtNode {
            id: 0,
            kind: NodeKind::Condition(atom),
        }
    }

    pub fn action(action: GroundedAction) -> Self {
        BtNode {
            id: 0,
            kind: NodeKind::Action(action),
        }
    }

    pub fn kind(&self) -> Kind {
        match self.kind {
            NodeKind::Selector(_) => Kind::Selector,
            NodeKind::Sequence(_) => Kind::Sequence,
            NodeKind::Condition(_) => Kind::Condition,
            NodeKind::Action(_) => Kind::Action,
        }
    }

    pub fn children(&self) -> &[BtNode] {
        match &self.kind {
            NodeKind::Selector(c) | NodeKind::Sequence(c) => c,
            NodeKind::Condition(_) | NodeKind::Action(_) => &[],
        }
    }

    pub fn children_mut(&mut self) -> Option<&mut Vec<BtNode>> {
        match &mut self.kind {
            NodeKind::Selector(c) | NodeKind::Sequence(c) => Some(c),
            NodeKind::Condition(_) | NodeKind::Action(_) => None,
        }
    }

    pub fn as_condition(&self) -> Option<&Atom> {
        match &self.kind {
            NodeKind::Condition(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_action(&self) -> Option<&GroundedAction> {
        match &self.kind {
            NodeKind::Action(a) => Some(a),
            _ => None,
        }
    }

    /// Leaf name (predicate or action); composites have none.
    pub fn name(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Condition(a) => Some(&a.pred),
            NodeKind::Action(a) => Some(&a.name),
            _ => None,
        }
    }

    pub fn args(&self) -> &[alloc::string::String] {
        match &self.kind {
            NodeKind::Condition(a) => &a.args,
            NodeKind::Action(a) => &a.args,
            _ => &[],
        }
    }

    fn renumber(&mut self, next: &mut NodeId) {
        self.id = *next;
        *next += 1;
        if let Some(children) = self.children_mut() {
            for child in children {
                child.renumber(next);
            }
        }
    }

    /// Depth-first, children left to right.
    pub fn preorder(&self) -> Vec<&BtNode> {
        let mut out = Vec::new();
        let mut stack = alloc::vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            stack.extend(node.children().iter().rev());
        }
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children()
            .iter()
            .map(BtNode::node_count)
            .sum::<usize>()
    }
}

impl fmt::Display for BtNode {
    /// Indented outline, one node per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(node: &BtNode, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            for _ in 0..depth {
                f.write_str("  ")?;
            }
            match &node.kind {
                NodeKind::Selector(_) => writeln!(f, "?")?,
                NodeKind::Sequence(_) => writeln!(f, "->")?,
                NodeKind::Condition(a) => writeln!(f, "({a})")?,
                NodeKind::Action(a) => writeln!(f, "[{a}]")?,
            }
            node.children()
                .iter()
                .try_for_each(|c| walk(c, depth + 1, f))
        }
        walk(self, 0, f)
    }
}

/// A tree together with the planning target it was generated for.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BehaviorTree {
    target: Atom,
    root: BtNode,
}

impl BehaviorTree {
    /// Builds a tree, reassigning node ids in preorder.
    pub fn new(target: Atom, mut root: BtNode) -> Self {
        let mut next = 0;
        root.renumber(&mut next);
        BehaviorTree { target, root }
    }

    pub fn target(&self) -> &Atom {
        &self.target
    }

    pub fn root(&self) -> &BtNode {
        &self.root
    }

    pub fn into_parts(self) -> (Atom, BtNode) {
        (self.target, self.root)
    }

    pub fn preorder(&self) -> Vec<&BtNode> {
        self.root.preorder()
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn node(&self, id: NodeId) -> Option<&BtNode> {
        self.preorder().into_iter().find(|n| n.id == id)
    }

    pub fn actions(&self) -> impl Iterator<Item = &GroundedAction> {
        self.preorder().into_iter().filter_map(BtNode::as_action)
    }

    /// True when the root is a selector whose first child tests the target,
    /// the shape every expanded tree has.
    pub fn has_target_root(&self) -> bool {
        match &self.root.kind {
            NodeKind::Selector(children) => children
                .first()
                .and_then(BtNode::as_condition)
                .is_some_and(|a| *a == self.target),
            _ => false,
        }
    }
}

impl fmt::Display for BehaviorTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "target: {}", self.target)?;
        write!(f, "{}", self.root)
    }
}
