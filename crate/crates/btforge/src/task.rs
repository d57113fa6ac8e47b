//! Tasks and task suites.

use std::path::{Path, PathBuf};

use btforge_core::world::{parse_world, WorldError};
use btforge_core::{Atom, Domain, WorldState};
use serde::{Deserialize, Serialize};

/// One generation problem: an initial state, a goal atom and the
/// instruction text shown to the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: String,
    pub instruction: String,
    pub initial: WorldState,
    pub goal: Atom,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        initial: WorldState,
        goal: Atom,
    ) -> Self {
        Task {
            id: id.into(),
            instruction: instruction.into(),
            initial,
            goal,
        }
    }

    /// Loads a world file; `goal` overrides the file's goal.
    pub fn from_world_file(
        id: impl Into<String>,
        path: &Path,
        domain: &Domain,
        goal: Option<Atom>,
        instruction: Option<String>,
    ) -> Result<Self, TaskLoadError> {
        let text = read(path)?;
        let (initial, file_goal) =
            parse_world(&text, domain).map_err(|error| TaskLoadError::World {
                path: path.to_owned(),
                error,
            })?;
        let goal = match goal {
            Some(g) => {
                domain
                    .check_atom(&g)
                    .map_err(|error| TaskLoadError::World {
                        path: path.to_owned(),
                        error,
                    })?;
                g
            }
            None => file_goal,
        };
        let instruction = instruction.unwrap_or_else(|| default_instruction(&goal));
        Ok(Task::new(id, instruction, initial, goal))
    }
}

/// Instruction used when none is given.
pub fn default_instruction(goal: &Atom) -> String {
    format!("Make {goal} true.")
}

#[derive(Debug, thiserror::Error)]
pub enum TaskLoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {error}")]
    World { path: PathBuf, error: WorldError },
    #[error("{path}: {message}")]
    Suite { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, TaskLoadError> {
    std::fs::read_to_string(path).map_err(|source| TaskLoadError::Io {
        path: path.to_owned(),
        source,
    })
}

/// One entry of a suite file. `world` is relative to the suite file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub id: String,
    pub world: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    pub instruction: String,
}

/// Loads every task of a suite file, in file order.
pub fn load_suite(path: &Path, domain: &Domain) -> Result<Vec<Task>, TaskLoadError> {
    let text = read(path)?;
    let entries: Vec<SuiteEntry> =
        serde_json::from_str(&text).map_err(|e| TaskLoadError::Suite {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = std::collections::BTreeSet::new();
    let mut tasks = Vec::with_capacity(entries.len());
    for entry in entries {
        if !seen.insert(entry.id.clone()) {
            return Err(TaskLoadError::Suite {
                path: path.to_owned(),
                message: format!("duplicate task id `{}`", entry.id),
            });
        }
        let goal = entry
            .goal
            .as_deref()
            .map(Atom::parse)
            .transpose()
            .map_err(|error| TaskLoadError::World {
                path: path.to_owned(),
                error,
            })?;
        tasks.push(Task::from_world_file(
            entry.id,
            &base.join(&entry.world),
            domain,
            goal,
            Some(entry.instruction),
        )?);
    }
    Ok(tasks)
}
