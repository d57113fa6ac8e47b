//! The bundled gear-assembly domain and its reference instance: the left
//! hand holds the parallel gripper, which holds shaft3, and the target is
//! `is_inserted_to(gear1, shaft1)`.

use crate::world::{parse_domain, parse_world, Atom, Domain, WorldState};

pub const DOMAIN_JSON: &str = include_str!("../data/gear_domain.json");
pub const REFERENCE_WORLD_JSON: &str = include_str!("../data/gears-01.json");

pub fn domain() -> Domain {
    parse_domain(DOMAIN_JSON).expect("bundled gear domain is valid")
}

/// Initial state (with the domain's rigid facts) and goal of the reference instance.
pub fn reference_world(domain: &Domain) -> (WorldState, Atom) {
    parse_world(REFERENCE_WORLD_JSON, domain).expect("bundled reference world is valid")
}
