use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::Serialize;

use super::{BehaviorTree, BtNode, NodeId, NodeKind};
use crate::world::{Domain, WorldError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationRule {
    EmptyComposite,
    UnknownPredicate,
    UnknownAction,
    ArityMismatch,
    UnknownObject,
    TypeMismatch,
    /// The root is not `Selector[Condition(target), ..]`. Advisory only.
    TargetRoot,
}

impl ValidationRule {
    /// Strict rules decide executability; the rest are advisory.
    pub fn is_strict(self) -> bool {
        !matches!(self, ValidationRule::TargetRoot)
    }

    pub fn code(self) -> &'static str {
        match self {
            ValidationRule::EmptyComposite => "empty-composite",
            ValidationRule::UnknownPredicate => "unknown-predicate",
            ValidationRule::UnknownAction => "unknown-action",
            ValidationRule::ArityMismatch => "arity-mismatch",
            ValidationRule::UnknownObject => "unknown-object",
            ValidationRule::TypeMismatch => "type-mismatch",
            ValidationRule::TargetRoot => "target-root",
        }
    }
}

impl fmt::Display for ValidationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// `None` refers to the tree's target atom.
    pub node_id: Option<NodeId>,
    pub rule: ValidationRule,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub executable: bool,
    pub violations: Vec<Violation>,
}

fn classify(err: &WorldError) -> ValidationRule {
    match err {
        WorldError::UnknownAction(_) => ValidationRule::UnknownAction,
        WorldError::ArityMismatch { .. } => ValidationRule::ArityMismatch,
        WorldError::TypeMismatch { .. } => ValidationRule::TypeMismatch,
        WorldError::UnknownSymbol(_) => ValidationRule::UnknownObject,
        _ => ValidationRule::UnknownObject,
    }
}

/// Structural rules plus symbol resolution against `domain`. Whether the
/// tree is semantically right (e.g. which tool it uses) is not checked.
pub fn validate_structure(tree: &BehaviorTree, domain: &Domain) -> ValidationReport {
    let mut violations = Vec::new();
    if !domain.predicates().contains_key(&tree.target().pred) {
        violations.push(Violation {
            node_id: None,
            rule: ValidationRule::UnknownPredicate,
            message: format!("target uses undeclared predicate `{}`", tree.target().pred),
        });
    } else if let Err(e) = domain.check_atom(tree.target()) {
        violations.push(Violation {
            node_id: None,
            rule: classify(&e),
            message: format!("target {}: {e}", tree.target()),
        });
    }
    for node in tree.preorder() {
        check_node(node, domain, &mut violations);
    }
    if !tree.has_target_root() {
        violations.push(Violation {
            node_id: Some(tree.root().id),
            rule: ValidationRule::TargetRoot,
            message: format!("root is not a selector testing {} first", tree.target()),
        });
    }
    let executable = violations.iter().all(|v| !v.rule.is_strict());
    ValidationReport {
        executable,
        violations,
    }
}

fn check_node(node: &BtNode, domain: &Domain, out: &mut Vec<Violation>) {
    let mut push = |rule, message| {
        out.push(Violation {
            node_id: Some(node.id),
            rule,
            message,
        })
    };
    match &node.kind {
        NodeKind::Selector(c) | NodeKind::Sequence(c) => {
            if c.is_empty() {
                push(
                    ValidationRule::EmptyComposite,
                    format!("{} node has no children", node.kind()),
                );
            }
        }
        NodeKind::Condition(atom) => {
            if !domain.predicates().contains_key(&atom.pred) {
                push(
                    ValidationRule::UnknownPredicate,
                    format!("undeclared predicate `{}`", atom.pred),
                );
            } else if let Err(e) = domain.check_atom(atom) {
                push(classify(&e), format!("{atom}: {e}"));
            }
        }
        NodeKind::Action(action) => {
            if let Err(e) = domain.check_action(action) {
                push(classify(&e), format!("{action}: {e}"));
            }
        }
    }
}
