//! Typed object inventory, grounded predicate state and STRIPS-style action
//! templates.
//!
//! A [`Domain`] is loaded from a JSON document and validated up front, so the
//! rest of the crate can assume every template atom references declared
//! predicates and parameters. [`WorldState`] is a plain set of ground atoms;
//! transitions return new states and never mutate in place.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Variables in template atoms carry this prefix, e.g. `?h`.
pub const VAR_PREFIX: char = '?';

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorldError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("duplicate declaration `{0}`")]
    Duplicate(String),
    #[error("arity mismatch for `{name}`: expected {expected}, found {found}")]
    ArityMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("type mismatch: `{object}` is a {found}, expected {expected}")]
    TypeMismatch {
        object: String,
        expected: String,
        found: String,
    },
    #[error("invalid action template `{name}`: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("inconsistent state: {0}")]
    InconsistentState(String),
    #[error("action `{0}` is not applicable")]
    NotApplicable(String),
}

/// A predicate applied to object identifiers, e.g. `hold(left_hand, clampgripper)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<String>,
}

impl Atom {
    pub fn new<P, I, S>(pred: P, args: I) -> Self
    where
        P: Into<String>,
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Atom {
            pred: pred.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    /// Parses the call notation `pred(a, b)`.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let (pred, args) = parse_call(text)?;
        Ok(Atom { pred, args })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_call(f, &self.pred, &self.args)
    }
}

/// An action template bound to concrete objects, e.g.
/// `pick_up(left_hand, clampgripper, gear1)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundedAction {
    pub name: String,
    pub args: Vec<String>,
}

impl GroundedAction {
    pub fn new<N, I, S>(name: N, args: I) -> Self
    where
        N: Into<String>,
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        GroundedAction {
            name: name.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let (name, args) = parse_call(text)?;
        Ok(GroundedAction { name, args })
    }
}

impl fmt::Display for GroundedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_call(f, &self.name, &self.args)
    }
}

fn write_call(f: &mut fmt::Formatter<'_>, name: &str, args: &[String]) -> fmt::Result {
    f.write_str(name)?;
    f.write_str("(")?;
    for (i, arg) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        f.write_str(arg)?;
    }
    f.write_str(")")
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Parses `name(arg, ...)`. Stray parentheses inside the argument list are
/// ignored, so `put_down(left_hand), parallelgripper, shaft3)` still reads as
/// a three-argument call.
pub fn parse_call(text: &str) -> Result<(String, Vec<String>), WorldError> {
    let text = text.trim();
    let open = text
        .find('(')
        .ok_or_else(|| WorldError::Syntax(format!("expected `name(args)`, found `{text}`")))?;
    let close = text
        .rfind(')')
        .filter(|&c| c > open)
        .ok_or_else(|| WorldError::Syntax(format!("unclosed argument list in `{text}`")))?;
    if !text[close + 1..].trim().is_empty() {
        return Err(WorldError::Syntax(format!("trailing text after `{text}`")));
    }
    let name = text[..open].trim();
    if !is_identifier(name) {
        return Err(WorldError::Syntax(format!("bad identifier `{name}`")));
    }
    let inner: String = text[open + 1..close]
        .chars()
        .filter(|c| *c != '(' && *c != ')')
        .collect();
    let mut args = Vec::new();
    if !inner.trim().is_empty() {
        for piece in inner.split(',') {
            let arg = piece.trim();
            if !is_identifier(arg) {
                return Err(WorldError::Syntax(format!(
                    "bad argument `{arg}` in `{text}`"
                )));
            }
            args.push(arg.to_owned());
        }
    }
    Ok((name.to_owned(), args))
}

/// A union of declared type names, written `hand|tool` in domain files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TypeExpr(Vec<String>);

impl TypeExpr {
    pub fn parse(text: &str) -> Self {
        let mut names: Vec<String> = text
            .split('|')
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
            .collect();
        names.sort();
        names.dedup();
        TypeExpr(names)
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn admits(&self, ty: &str) -> bool {
        self.0.iter().any(|t| t == ty)
    }

    pub fn is_subset_of(&self, other: &TypeExpr) -> bool {
        self.0.iter().all(|t| other.admits(t))
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub var: String,
    pub ty: TypeExpr,
}

/// PDDL-like action schema. Atom arguments are either parameter variables
/// (`?t`) or declared object constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTemplate {
    pub name: String,
    pub params: Vec<Param>,
    pub pre: Vec<Atom>,
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
    pub doc: Option<String>,
}

/// Preconditions and effects of one grounded action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instantiated {
    pub pre: Vec<Atom>,
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
}

impl ActionTemplate {
    fn bind(&self, atom: &Atom, args: &[String]) -> Atom {
        let args = atom
            .args
            .iter()
            .map(|a| match self.params.iter().position(|p| &p.var == a) {
                Some(i) => args[i].clone(),
                None => a.clone(),
            })
            .collect();
        Atom {
            pred: atom.pred.clone(),
            args,
        }
    }

    /// Substitutes `args` for the parameters. The caller guarantees the arity.
    pub fn instantiate(&self, args: &[String]) -> Instantiated {
        let bind_all = |atoms: &[Atom]| atoms.iter().map(|a| self.bind(a, args)).collect();
        Instantiated {
            pre: bind_all(&self.pre),
            add: bind_all(&self.add),
            del: bind_all(&self.del),
        }
    }
}

/// Serialized shape of a domain file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    pub types: Vec<String>,
    pub objects: BTreeMap<String, String>,
    pub predicates: BTreeMap<String, Vec<String>>,
    pub actions: Vec<ActionFile>,
    /// Rigid facts about the inventory (e.g. tool/part compatibility),
    /// merged into every world loaded against this domain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub facts: Vec<Atom>,
    /// Natural-language explanations keyed by predicate or action name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub docs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionFile {
    pub name: String,
    pub params: Vec<(String, String)>,
    #[serde(default)]
    pub pre: Vec<Atom>,
    #[serde(default)]
    pub add: Vec<Atom>,
    #[serde(default)]
    pub del: Vec<Atom>,
}

/// Serialized shape of a world file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub init: Vec<Atom>,
    pub goal: Atom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    types: BTreeSet<String>,
    objects: BTreeMap<String, String>,
    predicates: BTreeMap<String, Vec<TypeExpr>>,
    actions: Vec<ActionTemplate>,
    facts: Vec<Atom>,
    docs: BTreeMap<String, String>,
}

pub fn parse_domain(text: &str) -> Result<Domain, WorldError> {
    let file: DomainFile =
        serde_json::from_str(text).map_err(|e| WorldError::Syntax(e.to_string()))?;
    Domain::from_file(file)
}

/// Parses a world document against `domain`. The domain's rigid facts are
/// merged into the returned initial state.
pub fn parse_world(text: &str, domain: &Domain) -> Result<(WorldState, Atom), WorldError> {
    let file: WorldFile =
        serde_json::from_str(text).map_err(|e| WorldError::Syntax(e.to_string()))?;
    domain.load_world(&file)
}

impl Domain {
    pub fn from_file(file: DomainFile) -> Result<Self, WorldError> {
        let mut types = BTreeSet::new();
        for ty in &file.types {
            if !types.insert(ty.clone()) {
                return Err(WorldError::Duplicate(ty.clone()));
            }
        }
        for (obj, ty) in &file.objects {
            if !types.contains(ty) {
                return Err(WorldError::UnknownType(ty.clone()));
            }
            if obj.starts_with(VAR_PREFIX) || !is_identifier(obj) {
                return Err(WorldError::Syntax(format!("bad object identifier `{obj}`")));
            }
        }
        let mut predicates = BTreeMap::new();
        for (name, tys) in &file.predicates {
            let exprs = tys
                .iter()
                .map(|t| check_type_expr(&types, t))
                .collect::<Result<Vec<_>, _>>()?;
            predicates.insert(name.clone(), exprs);
        }
        let mut domain = Domain {
            types,
            objects: file.objects,
            predicates,
            actions: Vec::new(),
            facts: Vec::new(),
            docs: file.docs,
        };
        for action in file.actions {
            if domain.template(&action.name).is_some()
                || domain.predicates.contains_key(&action.name)
            {
                return Err(WorldError::Duplicate(action.name));
            }
            let template = domain.check_template(action)?;
            domain.actions.push(template);
        }
        for fact in &file.facts {
            domain.check_atom(fact)?;
        }
        domain.facts = file.facts;
        Ok(domain)
    }

    fn check_template(&self, action: ActionFile) -> Result<ActionTemplate, WorldError> {
        let invalid = |reason: String| WorldError::InvalidTemplate {
            name: action.name.clone(),
            reason,
        };
        let mut params: Vec<Param> = Vec::new();
        for (var, ty) in &action.params {
            if !var.starts_with(VAR_PREFIX) {
                return Err(invalid(format!("parameter `{var}` must start with `?`")));
            }
            if params.iter().any(|p| &p.var == var) {
                return Err(invalid(format!("parameter `{var}` declared twice")));
            }
            params.push(Param {
                var: var.clone(),
                ty: check_type_expr(&self.types, ty)?,
            });
        }
        for atom in action.pre.iter().chain(&action.add).chain(&action.del) {
            let sig = self
                .predicates
                .get(&atom.pred)
                .ok_or_else(|| WorldError::UnknownSymbol(atom.pred.clone()))?;
            if sig.len() != atom.args.len() {
                return Err(WorldError::ArityMismatch {
                    name: atom.pred.clone(),
                    expected: sig.len(),
                    found: atom.args.len(),
                });
            }
            for (arg, expected) in atom.args.iter().zip(sig) {
                let ty = if arg.starts_with(VAR_PREFIX) {
                    let param = params.iter().find(|p| &p.var == arg).ok_or_else(|| {
                        invalid(format!("variable `{arg}` in `{atom}` is not a parameter"))
                    })?;
                    param.ty.clone()
                } else {
                    let ty = self
                        .objects
                        .get(arg)
                        .ok_or_else(|| WorldError::UnknownSymbol(arg.clone()))?;
                    TypeExpr::parse(ty)
                };
                if !ty.is_subset_of(expected) {
                    return Err(WorldError::TypeMismatch {
                        object: arg.clone(),
                        expected: expected.to_string(),
                        found: ty.to_string(),
                    });
                }
            }
        }
        if let Some(both) = action.add.iter().find(|a| action.del.contains(a)) {
            return Err(invalid(format!("`{both}` is both added and deleted")));
        }
        let doc = self.docs.get(&action.name).cloned();
        Ok(ActionTemplate {
            name: action.name,
            params,
            pre: action.pre,
            add: action.add,
            del: action.del,
            doc,
        })
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(String::as_str)
    }

    pub fn objects(&self) -> &BTreeMap<String, String> {
        &self.objects
    }

    pub fn object_type(&self, object: &str) -> Option<&str> {
        self.objects.get(object).map(String::as_str)
    }

    pub fn predicates(&self) -> &BTreeMap<String, Vec<TypeExpr>> {
        &self.predicates
    }

    pub fn templates(&self) -> &[ActionTemplate] {
        &self.actions
    }

    pub fn template(&self, name: &str) -> Option<&ActionTemplate> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn facts(&self) -> &[Atom] {
        &self.facts
    }

    pub fn doc(&self, name: &str) -> Option<&str> {
        self.docs.get(name).map(String::as_str)
    }

    fn check_args(&self, name: &str, args: &[String], sig: &[TypeExpr]) -> Result<(), WorldError> {
        if sig.len() != args.len() {
            return Err(WorldError::ArityMismatch {
                name: name.to_owned(),
                expected: sig.len(),
                found: args.len(),
            });
        }
        for (arg, expected) in args.iter().zip(sig) {
            let ty = self
                .objects
                .get(arg)
                .ok_or_else(|| WorldError::UnknownSymbol(arg.clone()))?;
            if !expected.admits(ty) {
                return Err(WorldError::TypeMismatch {
                    object: arg.clone(),
                    expected: expected.to_string(),
                    found: ty.clone(),
                });
            }
        }
        Ok(())
    }

    /// Checks that `atom` names a declared predicate with declared,
    /// correctly typed objects.
    pub fn check_atom(&self, atom: &Atom) -> Result<(), WorldError> {
        let sig = self
            .predicates
            .get(&atom.pred)
            .ok_or_else(|| WorldError::UnknownSymbol(atom.pred.clone()))?;
        self.check_args(&atom.pred, &atom.args, sig)
    }

    /// Checks that `action` names a template and binds its parameters to
    /// declared objects of admissible types.
    pub fn check_action(&self, action: &GroundedAction) -> Result<&ActionTemplate, WorldError> {
        let template = self
            .template(&action.name)
            .ok_or_else(|| WorldError::UnknownAction(action.name.clone()))?;
        let sig: Vec<TypeExpr> = template.params.iter().map(|p| p.ty.clone()).collect();
        self.check_args(&action.name, &action.args, &sig)?;
        Ok(template)
    }

    /// Instantiates the template behind `action`. Only the arity is checked,
    /// so type-incorrect bindings still produce (unsatisfiable) atoms.
    pub fn instantiate(&self, action: &GroundedAction) -> Result<Instantiated, WorldError> {
        let template = self
            .template(&action.name)
            .ok_or_else(|| WorldError::UnknownAction(action.name.clone()))?;
        if template.params.len() != action.args.len() {
            return Err(WorldError::ArityMismatch {
                name: action.name.clone(),
                expected: template.params.len(),
                found: action.args.len(),
            });
        }
        Ok(template.instantiate(&action.args))
    }

    pub fn holds(&self, state: &WorldState, atom: &Atom) -> Result<bool, WorldError> {
        self.check_atom(atom)?;
        Ok(state.contains(atom))
    }

    pub fn applicable(
        &self,
        state: &WorldState,
        action: &GroundedAction,
    ) -> Result<bool, WorldError> {
        let inst = self.instantiate(action)?;
        Ok(inst.pre.iter().all(|p| state.contains(p)))
    }

    /// Preconditions of `action` that do not hold in `state`, in template order.
    pub fn missing_preconditions(
        &self,
        state: &WorldState,
        action: &GroundedAction,
    ) -> Result<Vec<Atom>, WorldError> {
        let inst = self.instantiate(action)?;
        Ok(inst
            .pre
            .into_iter()
            .filter(|p| !state.contains(p))
            .collect())
    }

    /// STRIPS transition: `(state \ del) ∪ add`.
    pub fn apply_effects(
        &self,
        state: &WorldState,
        action: &GroundedAction,
    ) -> Result<WorldState, WorldError> {
        let inst = self.instantiate(action)?;
        if !inst.pre.iter().all(|p| state.contains(p)) {
            return Err(WorldError::NotApplicable(action.to_string()));
        }
        let mut next = state.clone();
        for atom in &inst.del {
            next.remove(atom);
        }
        for atom in inst.add {
            next.insert(atom);
        }
        Ok(next)
    }

    /// Every type-correct binding of every template, in template declaration
    /// order and then lexicographic argument order.
    pub fn ground_actions(&self) -> Vec<GroundedAction> {
        let mut out = Vec::new();
        for template in &self.actions {
            let candidates: Vec<Vec<&String>> = template
                .params
                .iter()
                .map(|p| {
                    self.objects
                        .iter()
                        .filter(|(_, ty)| p.ty.admits(ty))
                        .map(|(obj, _)| obj)
                        .collect()
                })
                .collect();
            if candidates.iter().any(Vec::is_empty) {
                continue;
            }
            let mut cursor = alloc::vec![0usize; candidates.len()];
            'bindings: loop {
                out.push(GroundedAction {
                    name: template.name.clone(),
                    args: cursor
                        .iter()
                        .zip(&candidates)
                        .map(|(&i, c)| c[i].clone())
                        .collect(),
                });
                // odometer increment, rightmost position fastest
                let mut pos = candidates.len();
                loop {
                    if pos == 0 {
                        break 'bindings;
                    }
                    pos -= 1;
                    cursor[pos] += 1;
                    if cursor[pos] < candidates[pos].len() {
                        continue 'bindings;
                    }
                    cursor[pos] = 0;
                }
            }
        }
        out
    }

    fn objects_of(&self, ty: &str) -> impl Iterator<Item = &str> + '_ {
        let ty = ty.to_owned();
        self.objects
            .iter()
            .filter(move |(_, t)| **t == ty)
            .map(|(o, _)| o.as_str())
    }

    /// Mutual-exclusion checks over the `hold`/`is_empty` vocabulary: a tool
    /// is never both empty and holding something, a hand holds at most one
    /// tool, a tool holds at most one part and sits in at most one hand.
    pub fn check_consistency(&self, state: &WorldState) -> Result<(), WorldError> {
        for tool in self.objects_of("tool") {
            let held: Vec<&Atom> = state
                .iter()
                .filter(|a| a.pred == "hold" && a.args.len() == 2 && a.args[0] == tool)
                .collect();
            let empty = state.contains(&Atom::new("is_empty", [tool]));
            if empty && !held.is_empty() {
                return Err(WorldError::InconsistentState(format!(
                    "`{tool}` is empty but {} holds",
                    held[0]
                )));
            }
            if held.len() > 1 {
                return Err(WorldError::InconsistentState(format!(
                    "`{tool}` holds {} parts",
                    held.len()
                )));
            }
            let hands = state
                .iter()
                .filter(|a| a.pred == "hold" && a.args.len() == 2 && a.args[1] == tool)
                .count();
            if hands > 1 {
                return Err(WorldError::InconsistentState(format!(
                    "`{tool}` is held by {hands} hands"
                )));
            }
        }
        for hand in self.objects_of("hand") {
            let tools = state
                .iter()
                .filter(|a| a.pred == "hold" && a.args.len() == 2 && a.args[0] == hand)
                .count();
            if tools > 1 {
                return Err(WorldError::InconsistentState(format!(
                    "`{hand}` holds {tools} tools"
                )));
            }
        }
        Ok(())
    }

    pub fn load_world(&self, file: &WorldFile) -> Result<(WorldState, Atom), WorldError> {
        let mut state = WorldState::new();
        for atom in file.init.iter().chain(&self.facts) {
            if let Some(obj) = atom.args.iter().find(|a| !self.objects.contains_key(*a)) {
                return Err(WorldError::InconsistentState(format!(
                    "`{atom}` references undeclared object `{obj}`"
                )));
            }
            self.check_atom(atom)?;
            state.insert(atom.clone());
        }
        self.check_consistency(&state)?;
        self.check_atom(&file.goal)?;
        Ok((state, file.goal.clone()))
    }
}

fn check_type_expr(types: &BTreeSet<String>, text: &str) -> Result<TypeExpr, WorldError> {
    let expr = TypeExpr::parse(text);
    if expr.names().is_empty() {
        return Err(WorldError::UnknownType(text.to_owned()));
    }
    if let Some(bad) = expr.names().iter().find(|t| !types.contains(*t)) {
        return Err(WorldError::UnknownType(bad.clone()));
    }
    Ok(expr)
}

/// A finite set of ground atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorldState {
    atoms: BTreeSet<Atom>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.atoms.contains(atom)
    }

    pub fn insert(&mut self, atom: Atom) -> bool {
        self.atoms.insert(atom)
    }

    pub fn remove(&mut self, atom: &Atom) -> bool {
        self.atoms.remove(atom)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// RDF-like export: `(subject, predicate, object)` per binary atom,
    /// `(subject, predicate, true)` per unary atom, sorted, one per line.
    pub fn to_triples(&self) -> String {
        let mut lines: Vec<String> = self.atoms.iter().map(triple).collect();
        lines.sort();
        let mut out = String::new();
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

fn triple(atom: &Atom) -> String {
    match atom.args.as_slice() {
        [] => format!("(world, {}, true)", atom.pred),
        [subject] => format!("({subject}, {}, true)", atom.pred),
        [subject, rest @ ..] => format!("({subject}, {}, {})", atom.pred, rest.join(", ")),
    }
}

impl FromIterator<Atom> for WorldState {
    fn from_iter<I: IntoIterator<Item = Atom>>(iter: I) -> Self {
        WorldState {
            atoms: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a WorldState {
    type Item = &'a Atom;
    type IntoIter = alloc::collections::btree_set::Iter<'a, Atom>;

    fn into_iter(self) -> Self::IntoIter {
        self.atoms.iter()
    }
}
