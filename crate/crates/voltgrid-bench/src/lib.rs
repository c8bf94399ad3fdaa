//! Shared fixtures for the benchmark targets; see `benches/hot_paths.rs`.

use std::path::Path;
use voltgrid::{ControlConfig, Network, ScenarioProfile};

fn repo_file(rel: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

pub fn reference_network() -> Network {
    voltgrid::parse_case(&repo_file("cases/norway21.case")).expect("reference case parses")
}

pub fn reference_profile() -> ScenarioProfile {
    voltgrid::load_profiles(&repo_file("profiles/day.csv")).expect("day profile parses")
}

pub fn reference_config() -> ControlConfig {
    ControlConfig::from_toml(&repo_file("configs/default.toml")).expect("config parses")
}
