//! Quasi-steady-state simulation of a transmission grid operating under a
//! three-layer hierarchical voltage control scheme:
//!
//! * primary regulation: generator AVRs hold terminal voltage setpoints,
//!   modeled through the PV-bus constraint of the power flow;
//! * secondary regulation: a discrete PI scheme per control area drives a
//!   pilot-bus voltage to its reference and aligns generator reactive
//!   outputs with participation factors;
//! * tertiary regulation: a loss-minimizing reactive dispatch solved with a
//!   primal-dual interior-point method supplies pilot references and shunt
//!   setpoints.
//!
//! The crate exposes the network model, an AC power flow in polar form, the
//! secondary controller, the optimal dispatch, and a daily simulation engine
//! that compares controlled operation against a fixed-setpoint baseline.

pub mod network;
pub mod powerflow;
pub mod svr;
pub mod opf;
pub mod sim;
pub mod report;

mod ac;

pub use network::{
    build_admittance, case_hash, parse_case, serialize_case, validate, AdmittanceMatrix, Area,
    Branch, Bus, BusKind, CaseError, Generator, Load, Network, ShuntDevice, ShuntKind, WindPark,
};
pub use powerflow::{
    compute_losses, line_flows, solve_power_flow, BranchFlow, Dispatch, PowerFlowError,
    PowerFlowOptions, PowerFlowSolution, PowerFlowSolver, QLimitFlag,
};
pub use svr::{
    closed_loop_response, linearize_area_plant, sharing_errors, svr_step, LinearAreaPlant,
    SharingErrors, SvrAreaState, SvrError, SvrGains, SvrGenState, SvrMeasurement,
};
pub use opf::{
    audit_constraints, brute_force_oracle, build_opf, derivative_deviation, kkt_residuals,
    solve_opf, KktResiduals,
    OpfConfig, OpfError, OpfProblem, OpfSolution, OpfStatus, OracleResult,
};
pub use sim::{
    compare_scenarios, cost_savings, load_profiles, run_scenario, ControlConfig, ControlMode,
    CostSavings, Event, EventKind, LossComparison, OpfFailurePolicy, PilotRef, ProfileError,
    Sample, ScenarioProfile, SimError, SimulationTrace, TraceMeta,
};
pub use report::{
    fmt_sig9, render_compare_csv, render_opf_setpoints_csv, render_pf_branches_csv,
    render_pf_buses_csv, render_summary, render_trace_buses_csv, render_trace_gens_csv,
    render_trace_losses_csv,
};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
