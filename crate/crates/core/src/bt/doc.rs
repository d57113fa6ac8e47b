//! The tree document format.
//!
//! ```text
//! document = {"target": atom, "root": node}
//! node     = {"kind": "selector"|"sequence"|"condition"|"action",
//!             "name": string?, "args": [string]?, "children": [node]?}
//! atom     = {"pred": string, "args": [string]}
//! ```
//!
//! Strict mode enforces every [`FormatRule`]. Lenient mode applies a closed
//! set of repairs (splitting multi-atom conditions, dropping unknown keys,
//! lower-casing node kinds) and reports each one as a [`Finding`].

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{BehaviorTree, BtNode, Kind, NodeKind};
use crate::world::{Atom, GroundedAction};

/// Rules of the regulated format. Violating any of them makes a document
/// non-executable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FormatRule {
    /// Only the grammar's keys may appear.
    UnknownKey,
    /// `kind` is present and one of the four lower-case kinds.
    NodeKind,
    /// A condition node tests exactly one predicate.
    OnePredicate,
    /// Leaves carry `name` and `args`; the document carries `target` and `root`.
    RequiredField,
    /// Leaves have no `children`.
    LeafChildren,
    /// Composites carry a non-empty `children` list and no `name`/`args`.
    CompositeShape,
}

impl FormatRule {
    pub fn code(self) -> &'static str {
        match self {
            FormatRule::UnknownKey => "unknown-key",
            FormatRule::NodeKind => "node-kind",
            FormatRule::OnePredicate => "one-predicate",
            FormatRule::RequiredField => "required-field",
            FormatRule::LeafChildren => "leaf-children",
            FormatRule::CompositeShape => "composite-shape",
        }
    }
}

impl fmt::Display for FormatRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A rule breach located by JSON path; in lenient mode, a repair that was applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub path: String,
    pub rule: FormatRule,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.path, self.rule, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("format violation: {0}")]
    FormatViolation(Finding),
    #[error("unrecoverable document: {0}")]
    Unrecoverable(String),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Strict,
    Lenient,
}

struct Parser {
    mode: Mode,
    warnings: Vec<Finding>,
}

impl Parser {
    /// Records a breach: fatal in strict mode, a warning in lenient mode.
    fn breach(&mut self, path: &str, rule: FormatRule, message: String) -> Result<(), ParseError> {
        let finding = Finding {
            path: path.to_owned(),
            rule,
            message,
        };
        match self.mode {
            Mode::Strict => Err(ParseError::FormatViolation(finding)),
            Mode::Lenient => {
                self.warnings.push(finding);
                Ok(())
            }
        }
    }

    /// A defect no repair can fix.
    fn broken(&self, path: &str, rule: FormatRule, message: String) -> ParseError {
        match self.mode {
            Mode::Strict => ParseError::FormatViolation(Finding {
                path: path.to_owned(),
                rule,
                message,
            }),
            Mode::Lenient => ParseError::Unrecoverable(format!("{path}: {message}")),
        }
    }

    /// Wrong JSON type where the grammar fixes one.
    fn malformed(&self, path: &str, message: &str) -> ParseError {
        match self.mode {
            Mode::Strict => ParseError::Syntax(format!("{path}: {message}")),
            Mode::Lenient => ParseError::Unrecoverable(format!("{path}: {message}")),
        }
    }

    fn document(&mut self, value: &Value) -> Result<BehaviorTree, ParseError> {
        let obj = value
            .as_object()
            .ok_or_else(|| self.malformed("$", "document must be a JSON object"))?;
        self.unknown_keys(obj, "$", &["target", "root"])?;
        let target = obj.get("target").ok_or_else(|| {
            self.broken(
                "$",
                FormatRule::RequiredField,
                "missing `target`".to_owned(),
            )
        })?;
        let target = self.atom(target, "$.target")?;
        let root = obj.get("root").ok_or_else(|| {
            self.broken("$", FormatRule::RequiredField, "missing `root`".to_owned())
        })?;
        let mut nodes = self.node(root, "$.root")?;
        let root = if nodes.len() == 1 {
            nodes.pop().unwrap()
        } else {
            self.breach(
                "$.root",
                FormatRule::OnePredicate,
                "wrapped split root conditions in a sequence".to_owned(),
            )?;
            BtNode::sequence(nodes)
        };
        Ok(BehaviorTree::new(target, root))
    }

    fn unknown_keys(
        &mut self,
        obj: &Map<String, Value>,
        path: &str,
        allowed: &[&str],
    ) -> Result<(), ParseError> {
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.breach(
                    path,
                    FormatRule::UnknownKey,
                    format!("dropped unknown key `{key}`"),
                )?;
            }
        }
        Ok(())
    }

    fn strings(&self, value: &Value, path: &str) -> Result<Vec<String>, ParseError> {
        value
            .as_array()
            .ok_or_else(|| self.malformed(path, "expected an array of strings"))?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| self.malformed(path, "expected an array of strings"))
            })
            .collect()
    }

    fn atom(&mut self, value: &Value, path: &str) -> Result<Atom, ParseError> {
        let obj = value
            .as_object()
            .ok_or_else(|| self.malformed(path, "atom must be an object"))?;
        self.unknown_keys(obj, path, &["pred", "args"])?;
        let pred = match obj.get("pred") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::String(_)) | None => {
                return Err(self.broken(
                    path,
                    FormatRule::RequiredField,
                    "atom needs `pred`".to_owned(),
                ))
            }
            Some(_) => return Err(self.malformed(path, "`pred` must be a string")),
        };
        let args = match obj.get("args") {
            Some(v) => self.strings(v, &format!("{path}.args"))?,
            None => {
                return Err(self.broken(
                    path,
                    FormatRule::RequiredField,
                    "atom needs `args`".to_owned(),
                ))
            }
        };
        Ok(Atom { pred, args })
    }

    fn kind(&mut self, obj: &Map<String, Value>, path: &str) -> Result<Kind, ParseError> {
        let raw = match obj.get("kind") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(self.malformed(path, "`kind` must be a string")),
            None => {
                return Err(self.broken(
                    path,
                    FormatRule::NodeKind,
                    "node has no `kind`".to_owned(),
                ))
            }
        };
        if let Some(kind) = Kind::from_name(raw) {
            return Ok(kind);
        }
        match Kind::from_name(&raw.to_lowercase()) {
            Some(kind) => {
                self.breach(
                    path,
                    FormatRule::NodeKind,
                    format!("normalized kind `{raw}` to `{kind}`"),
                )?;
                Ok(kind)
            }
            None => Err(self.broken(
                path,
                FormatRule::NodeKind,
                format!("unknown node kind `{raw}`"),
            )),
        }
    }

    fn leaf_call(
        &mut self,
        obj: &Map<String, Value>,
        path: &str,
    ) -> Result<Option<(String, Vec<String>)>, ParseError> {
        let name = match obj.get("name") {
            Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
            Some(Value::String(_)) | None => None,
            Some(_) => return Err(self.malformed(path, "`name` must be a string")),
        };
        let args = match obj.get("args") {
            Some(v) => Some(self.strings(v, &format!("{path}.args"))?),
            None => None,
        };
        match (name, args) {
            (Some(name), Some(args)) => Ok(Some((name, args))),
            (None, None) => Ok(None),
            (Some(_), None) => Err(self.broken(
                path,
                FormatRule::RequiredField,
                "leaf has `name` but no `args`".to_owned(),
            )),
            (None, Some(_)) => Err(self.broken(
                path,
                FormatRule::RequiredField,
                "leaf has `args` but no `name`".to_owned(),
            )),
        }
    }

    fn node(&mut self, value: &Value, path: &str) -> Result<Vec<BtNode>, ParseError> {
        let obj = value
            .as_object()
            .ok_or_else(|| self.malformed(path, "node must be an object"))?;
        let kind = self.kind(obj, path)?;
        match kind {
            Kind::Selector | Kind::Sequence => {
                self.unknown_keys(obj, path, &["kind", "name", "args", "children"])?;
                if obj.contains_key("name") || obj.contains_key("args") {
                    self.breach(
                        path,
                        FormatRule::CompositeShape,
                        format!("dropped `name`/`args` on {kind} node"),
                    )?;
                }
                let children = match obj.get("children") {
                    Some(Value::Array(c)) => c,
                    Some(_) => return Err(self.malformed(path, "`children` must be an array")),
                    None => {
                        return Err(self.broken(
                            path,
                            FormatRule::CompositeShape,
                            format!("{kind} node has no children"),
                        ))
                    }
                };
                if children.is_empty() {
                    return Err(self.broken(
                        path,
                        FormatRule::CompositeShape,
                        format!("{kind} node has no children"),
                    ));
                }
                let mut nodes = Vec::with_capacity(children.len());
                for (i, child) in children.iter().enumerate() {
                    nodes.extend(self.node(child, &format!("{path}.children[{i}]"))?);
                }
                Ok(alloc::vec![if kind == Kind::Selector {
                    BtNode::selector(nodes)
                } else {
                    BtNode::sequence(nodes)
                }])
            }
            Kind::Condition => {
                self.unknown_keys(obj, path, &["kind", "name", "args", "atoms", "children"])?;
                self.no_children(obj, path, kind)?;
                let mut atoms = Vec::new();
                if let Some((pred, args)) = self.leaf_call(obj, path)? {
                    atoms.push(Atom { pred, args });
                }
                if let Some(extra) = obj.get("atoms") {
                    let list = extra
                        .as_array()
                        .ok_or_else(|| self.malformed(path, "`atoms` must be an array"))?;
                    for (i, a) in list.iter().enumerate() {
                        atoms.push(self.atom(a, &format!("{path}.atoms[{i}]"))?);
                    }
                    if atoms.len() == 1 {
                        self.breach(
                            path,
                            FormatRule::UnknownKey,
                            "read single-entry `atoms` as name/args".to_owned(),
                        )?;
                    }
                }
                match atoms.len() {
                    0 => Err(self.broken(
                        path,
                        FormatRule::RequiredField,
                        "condition has no predicate".to_owned(),
                    )),
                    1 => Ok(alloc::vec![BtNode::condition(atoms.pop().unwrap())]),
                    n => {
                        self.breach(
                            path,
                            FormatRule::OnePredicate,
                            format!("split condition with {n} predicates into {n} siblings"),
                        )?;
                        Ok(atoms.into_iter().map(BtNode::condition).collect())
                    }
                }
            }
            Kind::Action => {
                self.unknown_keys(obj, path, &["kind", "name", "args", "children"])?;
                self.no_children(obj, path, kind)?;
                match self.leaf_call(obj, path)? {
                    Some((name, args)) => {
                        Ok(alloc::vec![BtNode::action(GroundedAction { name, args })])
                    }
                    None => Err(self.broken(
                        path,
                        FormatRule::RequiredField,
                        "action has no `name`/`args`".to_owned(),
                    )),
                }
            }
        }
    }

    fn no_children(
        &mut self,
        obj: &Map<String, Value>,
        path: &str,
        kind: Kind,
    ) -> Result<(), ParseError> {
        match obj.get("children") {
            None => Ok(()),
            Some(Value::Array(c)) if c.is_empty() => self.breach(
                path,
                FormatRule::LeafChildren,
                format!("dropped empty `children` on {kind} node"),
            ),
            Some(_) => Err(self.broken(
                path,
                FormatRule::LeafChildren,
                format!("{kind} node has children"),
            )),
        }
    }
}

fn parse_json(text: &str) -> Result<Value, serde_json::Error> {
    serde_json::from_str(text)
}

/// Accepts a document only if it satisfies every [`FormatRule`].
pub fn parse_bt_strict(text: &str) -> Result<BehaviorTree, ParseError> {
    let value = parse_json(text).map_err(|e| ParseError::Syntax(e.to_string()))?;
    let mut parser = Parser {
        mode: Mode::Strict,
        warnings: Vec::new(),
    };
    parser.document(&value)
}

/// Best-effort parse. Every repair applied is returned as a warning; a
/// strictly valid document parses to the same tree with no warnings.
pub fn parse_bt_lenient(text: &str) -> Result<(BehaviorTree, Vec<Finding>), ParseError> {
    let value = parse_json(text).map_err(|e| ParseError::Unrecoverable(e.to_string()))?;
    let mut parser = Parser {
        mode: Mode::Lenient,
        warnings: Vec::new(),
    };
    let tree = parser.document(&value)?;
    Ok((tree, parser.warnings))
}

#[derive(Serialize)]
struct DocAtom<'a> {
    pred: &'a str,
    args: &'a [String],
}

#[derive(Serialize)]
struct DocNode<'a> {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    args: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    children: Option<Vec<DocNode<'a>>>,
}

#[derive(Serialize)]
struct Doc<'a> {
    target: DocAtom<'a>,
    root: DocNode<'a>,
}

fn doc_node(node: &BtNode) -> DocNode<'_> {
    let kind = node.kind().as_str();
    match &node.kind {
        NodeKind::Selector(c) | NodeKind::Sequence(c) => DocNode {
            kind,
            name: None,
            args: None,
            children: Some(c.iter().map(doc_node).collect()),
        },
        NodeKind::Condition(a) => DocNode {
            kind,
            name: Some(&a.pred),
            args: Some(&a.args),
            children: None,
        },
        NodeKind::Action(a) => DocNode {
            kind,
            name: Some(&a.name),
            args: Some(&a.args),
            children: None,
        },
    }
}

/// Canonical, pretty-printed document with a fixed key order.
pub fn serialize_bt(tree: &BehaviorTree) -> String {
    let doc = Doc {
        target: DocAtom {
            pred: &tree.target().pred,
            args: &tree.target().args,
        },
        root: doc_node(tree.root()),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("tree documents always serialize");
    text.push('\n');
    text
}
