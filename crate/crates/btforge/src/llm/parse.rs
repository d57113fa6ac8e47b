use btforge_core::bt::{parse_bt_lenient, parse_bt_strict, Finding, ParseError};
use btforge_core::world::WorldError;
use btforge_core::{BehaviorTree, Domain, GroundedAction, Plan};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResponseError {
    #[error("reply contains no behavior tree document")]
    NoTreeFound,
    #[error("reply contains a tree document that cannot be parsed: {0}")]
    Malformed(ParseError),
    #[error("reply contains no actions")]
    NoActionsFound,
    #[error("line {line}: unknown action `{name}`")]
    UnknownAction { line: usize, name: String },
    #[error("line {line}: {error}")]
    InvalidAction { line: usize, error: WorldError },
}

/// A tree recovered from a model reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BtResponse {
    pub tree: BehaviorTree,
    /// The document satisfied the regulated format as written.
    pub strict_ok: bool,
    /// Lenient repairs applied; empty when `strict_ok`.
    pub warnings: Vec<Finding>,
    /// The extracted document text.
    pub document: String,
}

/// Bodies of fenced code blocks, in order. An unterminated fence runs to the end.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

/// The first balanced `{...}` span, skipping braces inside JSON strings.
fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn candidates(text: &str) -> Vec<&str> {
    let mut out: Vec<&str> = fenced_blocks(text)
        .into_iter()
        .filter_map(|b| first_object(b))
        .collect();
    if out.is_empty() {
        out.extend(first_object(text));
    }
    out
}

/// Extracts the first tree document (fenced or bare) and parses it strictly,
/// falling back to the lenient parser.
pub fn parse_bt_response(text: &str) -> Result<BtResponse, ResponseError> {
    let mut first_error = None;
    for doc in candidates(text) {
        if let Ok(tree) = parse_bt_strict(doc) {
            return Ok(BtResponse {
                tree,
                strict_ok: true,
                warnings: Vec::new(),
                document: doc.to_owned(),
            });
        }
        match parse_bt_lenient(doc) {
            Ok((tree, warnings)) => {
                return Ok(BtResponse {
                    tree,
                    strict_ok: false,
                    warnings,
                    document: doc.to_owned(),
                })
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.map_or(ResponseError::NoTreeFound, ResponseError::Malformed))
}

/// Strips a list marker (`1.`, `2)`, `-`, `*`) and surrounding emphasis.
fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let line = if digits > 0 {
        line[digits..].trim_start_matches(['.', ')', ':'])
    } else {
        line.trim_start_matches(['-', '*'])
    };
    line.trim().trim_matches(['`', '*']).trim()
}

/// `name(...)` at the start of `line`, up to its closing parenthesis.
fn leading_call(line: &str) -> Option<(&str, &str)> {
    let open = line.find('(')?;
    let name = &line[..open];
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    let close = open + line[open..].find(')')?;
    Some((name, &line[..=close]))
}

/// Reads one action per line. Lines that do not start (after a list marker)
/// with `name(args)` are treated as prose and skipped.
pub fn parse_action_sequence(text: &str, domain: &Domain) -> Result<Plan, ResponseError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some((name, call)) = leading_call(strip_marker(raw)) else {
            continue;
        };
        if domain.template(name).is_none() {
            return Err(ResponseError::UnknownAction {
                line: line_no,
                name: name.to_owned(),
            });
        }
        let action = GroundedAction::parse(call).map_err(|error| ResponseError::InvalidAction {
            line: line_no,
            error,
        })?;
        domain
            .check_action(&action)
            .map_err(|error| ResponseError::InvalidAction {
                line: line_no,
                error,
            })?;
        steps.push(action);
    }
    if steps.is_empty() {
        return Err(ResponseError::NoActionsFound);
    }
    Ok(Plan::new(steps))
}
