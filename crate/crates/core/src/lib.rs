//! Behavior-tree generation core for sequential manipulation planning.
//!
//! - [`world`]: typed objects, ground atoms, action templates, transitions.
//! - [`bt`]: the selector/sequence/condition/action node algebra and its
//!   document format.
//! - [`planner`]: breadth-first shortest-plan search.
//! - [`expansion`]: recursive expansion of a goal condition into a tree.
//! - [`sim`]: tick-based symbolic execution.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bt;
pub mod expansion;
pub mod gear;
pub mod planner;
pub mod sim;
pub mod world;

pub use bt::{BehaviorTree, BtNode, Kind, NodeId, NodeKind};
pub use planner::{Plan, PlanOutcome, PlanReason};
pub use world::{Atom, Domain, GroundedAction, WorldState};
