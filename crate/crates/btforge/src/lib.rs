//! Behavior-tree generation schemes on top of `btforge-core`: LLM
//! providers and prompts, the four generation schemes, the evaluation
//! harness, the session service and the command-line interface.

pub mod cli;
pub mod eval;
pub mod llm;
pub mod schemes;
pub mod service;
pub mod task;
