//! Day-long quasi-steady-state scheduler: interpolates demand and wind
//! profiles, steps the secondary regulators every sample, triggers the
//! tertiary optimizer on its slower period, and re-solves the network after
//! every control action.
//!
//! Time-scale model: primary regulation is implicit in each power-flow
//! solve (machine buses track their references exactly), the secondary
//! layer is the only explicit discrete dynamics, and tertiary updates are
//! instantaneous setpoint injections at their trigger instants. Controllers
//! act on the previous sample's solved measurements, so there is no
//! algebraic loop between controller and network.

use crate::network::{case_hash, Network};
use crate::opf::{build_opf, solve_opf, OpfConfig, OpfStatus};
use crate::powerflow::{
    Dispatch, PowerFlowOptions, PowerFlowSolution, PowerFlowSolver, QLimitFlag,
};
use crate::svr::{svr_step, SvrAreaState, SvrError, SvrGains, SvrMeasurement};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("profile key {key}: time {time_h} h does not increase")]
    NonMonotonic { key: String, time_h: f64 },
    #[error("profile key {key}: negative multiplier at {time_h} h")]
    Negative { key: String, time_h: f64 },
    #[error("profile key {key} required by the case is missing")]
    MissingKey { key: String },
    #[error("profile key {key} covers [{first} h, {last} h] instead of the full day")]
    Coverage { key: String, first: f64, last: f64 },
    #[error("profile has no data rows")]
    Empty,
}

/// Piecewise-linear daily multiplier curves, one per key. Values are
/// dimensionless scale factors against case-file nominals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProfile {
    series: BTreeMap<String, Vec<(f64, f64)>>,
    hash: String,
}

impl ScenarioProfile {
    /// Content digest of the source text; traces embed it so runs from
    /// different profile files are never compared.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    /// Multiplier for `key` at `time_h` hours, linearly interpolated and
    /// clamped to the end values outside the covered span.
    pub fn value(&self, key: &str, time_h: f64) -> Option<f64> {
        let pts = self.series.get(key)?;
        let first = pts.first()?;
        if time_h <= first.0 {
            return Some(first.1);
        }
        let last = pts.last()?;
        if time_h >= last.0 {
            return Some(last.1);
        }
        let i = pts.partition_point(|&(t, _)| t <= time_h);
        let (t0, v0) = pts[i - 1];
        let (t1, v1) = pts[i];
        Some(v0 + (v1 - v0) * (time_h - t0) / (t1 - t0))
    }

    /// Checks that every profile key the case references resolves to a
    /// series: loads need `<key>_p` and `<key>_q`, wind parks `<key>_p`.
    pub fn validate_for(&self, net: &Network) -> Result<(), ProfileError> {
        let mut need: Vec<String> = Vec::new();
        for l in &net.loads {
            need.push(format!("{}_p", l.profile_key));
            need.push(format!("{}_q", l.profile_key));
        }
        for w in &net.wind_parks {
            need.push(format!("{}_p", w.profile_key));
        }
        for key in need {
            if !self.series.contains_key(&key) {
                return Err(ProfileError::MissingKey { key });
            }
        }
        Ok(())
    }
}

/// Parses the `time_h,key,value` CSV format. Rows for different keys may
/// interleave; each key's times must increase strictly and span the day.
pub fn load_profiles(text: &str) -> Result<ScenarioProfile, ProfileError> {
    let hash = {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    };
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        if !saw_header {
            let cols: Vec<&str> = row.split(',').map(str::trim).collect();
            if cols != ["time_h", "key", "value"] {
                return Err(ProfileError::Syntax {
                    line,
                    msg: format!("expected header 'time_h,key,value', got '{row}'"),
                });
            }
            saw_header = true;
            continue;
        }
        let cols: Vec<&str> = row.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(ProfileError::Syntax {
                line,
                msg: format!("expected 3 columns, got {}", cols.len()),
            });
        }
        let time_h: f64 = cols[0].parse().map_err(|e| ProfileError::Syntax {
            line,
            msg: format!("bad time '{}': {e}", cols[0]),
        })?;
        let value: f64 = cols[2].parse().map_err(|e| ProfileError::Syntax {
            line,
            msg: format!("bad value '{}': {e}", cols[2]),
        })?;
        if !time_h.is_finite() || !value.is_finite() {
            return Err(ProfileError::Syntax {
                line,
                msg: "non-finite number".into(),
            });
        }
        let key = cols[1];
        if key.is_empty() {
            return Err(ProfileError::Syntax {
                line,
                msg: "empty key".into(),
            });
        }
        if value < 0.0 {
            return Err(ProfileError::Negative {
                key: key.into(),
                time_h,
            });
        }
        let pts = series.entry(key.to_owned()).or_default();
        if let Some(&(prev, _)) = pts.last() {
            if time_h <= prev {
                return Err(ProfileError::NonMonotonic {
                    key: key.into(),
                    time_h,
                });
            }
        }
        pts.push((time_h, value));
    }
    if series.is_empty() {
        return Err(ProfileError::Empty);
    }
    for (key, pts) in &series {
        let first = pts.first().unwrap().0;
        let last = pts.last().unwrap().0;
        if first > 1e-9 || last < 24.0 - 1e-9 {
            return Err(ProfileError::Coverage {
                key: key.clone(),
                first,
                last,
            });
        }
    }
    Ok(ScenarioProfile { series, hash })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// No secondary or tertiary action; references stay at case values.
    Baseline,
    /// Secondary regulation only.
    SvrOnly,
    /// Secondary regulation plus periodic tertiary re-optimization.
    SvrTvr,
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlMode::Baseline => "baseline",
            ControlMode::SvrOnly => "svr_only",
            ControlMode::SvrTvr => "svr_tvr",
        })
    }
}

impl std::str::FromStr for ControlMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(ControlMode::Baseline),
            "svr_only" => Ok(ControlMode::SvrOnly),
            "svr_tvr" => Ok(ControlMode::SvrTvr),
            other => Err(format!(
                "unknown mode '{other}' (expected baseline, svr_only, or svr_tvr)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpfFailurePolicy {
    /// Keep the last good setpoints and log a warning event.
    Hold,
    /// Stop the run with an error.
    Abort,
}

/// Initial pilot-bus voltage reference override for one area; without it
/// the reference starts at the measured pilot voltage (zero initial error).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotRef {
    pub area: usize,
    pub v_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub mode: ControlMode,
    /// Secondary-control sampling interval, seconds.
    pub svr_dt_s: f64,
    /// Tertiary re-optimization period, seconds; must be an integer
    /// multiple of the sampling interval.
    pub tvr_period_s: f64,
    pub duration_s: f64,
    pub price_eur_per_mwh: f64,
    pub opf_failure_policy: OpfFailurePolicy,
    pub gains: SvrGains,
    pub opf: OpfConfig,
    pub initial_pilot_refs: Vec<PilotRef>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::SvrTvr,
            svr_dt_s: 10.0,
            tvr_period_s: 10_800.0,
            duration_s: 86_400.0,
            price_eur_per_mwh: 10.0,
            opf_failure_policy: OpfFailurePolicy::Hold,
            gains: SvrGains::default(),
            opf: OpfConfig::default(),
            initial_pilot_refs: Vec::new(),
        }
    }
}

impl ControlConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: ControlConfig =
            toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.svr_dt_s.is_finite() && self.svr_dt_s > 0.0) {
            return bad(format!("svr_dt_s = {} must be positive", self.svr_dt_s));
        }
        if !(self.tvr_period_s.is_finite() && self.tvr_period_s >= self.svr_dt_s) {
            return bad(format!(
                "tvr_period_s = {} must be at least one sampling interval",
                self.tvr_period_s
            ));
        }
        let ratio = self.tvr_period_s / self.svr_dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "tvr_period_s = {} is not a multiple of svr_dt_s = {}",
                self.tvr_period_s, self.svr_dt_s
            ));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s = {} must be positive", self.duration_s));
        }
        if !(self.price_eur_per_mwh.is_finite() && self.price_eur_per_mwh >= 0.0) {
            return bad(format!(
                "price_eur_per_mwh = {} must be nonnegative",
                self.price_eur_per_mwh
            ));
        }
        let g = &self.gains;
        for (name, v) in [
            ("kp_c", g.kp_c),
            ("ki_c", g.ki_c),
            ("kp_j", g.kp_j),
            ("ki_j", g.ki_j),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("gains.{name} = {v} must be finite and nonnegative"));
            }
        }
        // Both loops need integral action to remove steady-state error.
        if g.ki_c <= 0.0 {
            return bad(format!("gains.ki_c = {} must be positive", g.ki_c));
        }
        if g.ki_j <= 0.0 {
            return bad(format!("gains.ki_j = {} must be positive", g.ki_j));
        }
        if !(g.v_ref_min < g.v_ref_max) {
            return bad(format!(
                "reference band [{}, {}] is empty",
                g.v_ref_min, g.v_ref_max
            ));
        }
        if !(self.opf.tolerance > 0.0) {
            return bad(format!("opf.tolerance = {} must be positive", self.opf.tolerance));
        }
        if self.opf.max_iterations == 0 {
            return bad("opf.max_iterations must be at least 1".into());
        }
        if !(self.opf.phi_lead_pf > 0.0 && self.opf.phi_lead_pf < 1.0) {
            return bad(format!(
                "opf.phi_lead_pf = {} must lie in (0, 1)",
                self.opf.phi_lead_pf
            ));
        }
        let mut seen = Vec::new();
        for r in &self.initial_pilot_refs {
            if seen.contains(&r.area) {
                return bad(format!("duplicate initial pilot reference for area {}", r.area));
            }
            seen.push(r.area);
            if !(r.v_pu >= g.v_ref_min && r.v_pu <= g.v_ref_max) {
                return bad(format!(
                    "initial pilot reference {} pu for area {} is outside [{}, {}]",
                    r.v_pu, r.area, g.v_ref_min, g.v_ref_max
                ));
            }
        }
        Ok(())
    }

    fn steps_per_tvr(&self) -> usize {
        (self.tvr_period_s / self.svr_dt_s).round() as usize
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("power flow diverged at t = {time_s} s: {detail}")]
    PowerFlowDiverged { time_s: f64, detail: String },
    #[error("tertiary update aborted at t = {time_s} s: {reason}")]
    OpfAborted { time_s: f64, reason: String },
    #[error("secondary control failed at t = {time_s} s: {source}")]
    Control { time_s: f64, source: SvrError },
    #[error("traces are not comparable: {0}")]
    TraceMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// Tertiary setpoints applied.
    TvrUpdate {
        start_losses_mw: f64,
        planned_losses_mw: f64,
        pilot_refs: Vec<(usize, f64)>,
        delta_f_hz: f64,
    },
    /// Tertiary update failed; previous setpoints held.
    OpfHold { reason: String },
    /// A generator reached a reactive limit during the power flow.
    QLimitHit { gen: usize, at_max: bool },
    /// A secondary-control reference clamped at the band edge.
    ClampActive { area: usize, gen: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One solved network state on the sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time_s: f64,
    pub v_pu: Vec<f64>,
    pub theta_rad: Vec<f64>,
    pub gen_p_mw: Vec<f64>,
    pub gen_q_mvar: Vec<f64>,
    pub shunt_q_mvar: Vec<f64>,
    pub losses_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub case_hash: String,
    pub profile_hash: String,
    pub config: ControlConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub meta: TraceMeta,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
}

impl SimulationTrace {
    pub fn tvr_update_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::TvrUpdate { .. }))
            .count()
    }

    pub fn avg_losses_mw(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.losses_mw).sum::<f64>() / self.samples.len() as f64
    }
}

/// Runs one scenario over `[0, duration)` on the sampling grid. Per sample:
/// scale injections from the profile; on tertiary instants (svr_tvr mode)
/// re-optimize and re-base the secondary layer; advance the secondary
/// regulators on the previous sample's measurements; solve the network.
pub fn run_scenario(
    net: &Network,
    profile: &ScenarioProfile,
    cfg: &ControlConfig,
) -> Result<SimulationTrace, SimError> {
    cfg.validate()?;
    profile.validate_for(net)?;

    let solver = PowerFlowSolver::new(net);
    let opts = PowerFlowOptions::default();
    let mut dispatch = Dispatch::nominal(net);
    let dt = cfg.svr_dt_s;
    let n_steps = (cfg.duration_s / dt + 1e-9).floor() as usize;
    let steps_per_tvr = cfg.steps_per_tvr();

    let load_pk: Vec<String> = net.loads.iter().map(|l| format!("{}_p", l.profile_key)).collect();
    let load_qk: Vec<String> = net.loads.iter().map(|l| format!("{}_q", l.profile_key)).collect();
    let wind_k: Vec<String> = net
        .wind_parks
        .iter()
        .map(|w| format!("{}_p", w.profile_key))
        .collect();
    let scale_at = |d: &mut Dispatch, t_s: f64| {
        let h = t_s / 3600.0;
        for i in 0..load_pk.len() {
            d.load_p_scale[i] = profile.value(&load_pk[i], h).unwrap();
            d.load_q_scale[i] = profile.value(&load_qk[i], h).unwrap();
        }
        for i in 0..wind_k.len() {
            d.wind_scale[i] = profile.value(&wind_k[i], h).unwrap();
        }
    };

    let pf = |d: &Dispatch, warm: Option<&PowerFlowSolution>, t_s: f64| -> Result<PowerFlowSolution, SimError> {
        match solver.solve(d, &opts, warm) {
            Ok(sol) if sol.converged => Ok(sol),
            Ok(sol) => Err(SimError::PowerFlowDiverged {
                time_s: t_s,
                detail: format!(
                    "mismatch {:.3e} pu after {} iterations",
                    sol.max_mismatch_pu, sol.iterations
                ),
            }),
            Err(e) => Err(SimError::PowerFlowDiverged {
                time_s: t_s,
                detail: e.to_string(),
            }),
        }
    };

    // Bootstrap solve: the pre-loop steady state that seeds warm starts and
    // the first sample's measurements.
    scale_at(&mut dispatch, 0.0);
    let boot = pf(&dispatch, None, 0.0)?;

    let mut svr_states: Vec<SvrAreaState> = Vec::new();
    if cfg.mode != ControlMode::Baseline {
        for (area, gen_idxs) in net.svr_areas() {
            if gen_idxs.is_empty() {
                continue;
            }
            let v_ref = cfg
                .initial_pilot_refs
                .iter()
                .find(|r| r.area == area.id)
                .map(|r| r.v_pu)
                .unwrap_or(boot.v_pu[area.pilot_bus]);
            svr_states.push(SvrAreaState::init(area, net, &gen_idxs, v_ref));
        }
    }

    let mut samples = Vec::with_capacity(n_steps);
    let mut events: Vec<Event> = Vec::new();
    let mut prev = boot;

    for k in 0..n_steps {
        let t = k as f64 * dt;
        scale_at(&mut dispatch, t);
        let mut rebased_now = false;

        if cfg.mode == ControlMode::SvrTvr && k % steps_per_tvr == 0 {
            // Tertiary instant: optimize around the network as it stands
            // with the new profile scales.
            let op = pf(&dispatch, Some(&prev), t)?;
            let outcome = build_opf(net, &op, &dispatch, &cfg.opf)
                .and_then(|prob| solve_opf(&prob, &cfg.opf));
            match outcome {
                Ok(opt) if opt.status == OpfStatus::Optimal => {
                    dispatch.shunt_q_mvar.clone_from(&opt.shunt_q_mvar);
                    for (g, gen) in net.generators.iter().enumerate() {
                        dispatch.gen_v_ref_pu[g] = opt.v_setpoints[gen.bus];
                    }
                    for state in &mut svr_states {
                        let v_ref = opt
                            .pilot_refs
                            .iter()
                            .find(|&&(id, _)| id == state.area)
                            .map(|&(_, v)| v)
                            .expect("optimizer reports every area");
                        let bases: Vec<f64> = state
                            .gens
                            .iter()
                            .map(|gs| opt.v_setpoints[net.generators[gs.gen].bus])
                            .collect();
                        state.rebase(v_ref, &bases);
                        if cfg.opf.alpha_refresh {
                            refresh_alphas(state, &opt.gen_q_mvar);
                        }
                    }
                    events.push(Event {
                        time_s: t,
                        kind: EventKind::TvrUpdate {
                            start_losses_mw: opt.start_losses_mw,
                            planned_losses_mw: opt.objective_mw,
                            pilot_refs: opt.pilot_refs.clone(),
                            delta_f_hz: opt.delta_f_hz,
                        },
                    });
                    rebased_now = true;
                }
                Ok(opt) => {
                    let reason = format!(
                        "optimizer stopped with status {} (kkt {:.3e})",
                        opt.status,
                        opt.kkt.max()
                    );
                    match cfg.opf_failure_policy {
                        OpfFailurePolicy::Hold => events.push(Event {
                            time_s: t,
                            kind: EventKind::OpfHold { reason },
                        }),
                        OpfFailurePolicy::Abort => {
                            return Err(SimError::OpfAborted { time_s: t, reason })
                        }
                    }
                }
                Err(e) => {
                    let reason = e.to_string();
                    match cfg.opf_failure_policy {
                        OpfFailurePolicy::Hold => events.push(Event {
                            time_s: t,
                            kind: EventKind::OpfHold { reason },
                        }),
                        OpfFailurePolicy::Abort => {
                            return Err(SimError::OpfAborted { time_s: t, reason })
                        }
                    }
                }
            }
        }

        // Hold the secondary loop for the sample where a tertiary rebase
        // just landed: the stored measurements predate the new references,
        // and integrating that stale error would push the units past the
        // setpoints the optimizer certified. It resumes next sample on
        // post-update measurements.
        if cfg.mode != ControlMode::Baseline && !rebased_now {
            for state in &mut svr_states {
                let meas = SvrMeasurement::from_solution(state, &prev);
                let was_clamped: Vec<bool> = state.gens.iter().map(|g| g.windup).collect();
                svr_step(state, &meas, &cfg.gains, dt, net.s_base_mva)
                    .map_err(|source| SimError::Control { time_s: t, source })?;
                for (gs, was) in state.gens.iter().zip(was_clamped) {
                    dispatch.gen_v_ref_pu[gs.gen] = gs.v_ref;
                    if gs.windup && !was {
                        events.push(Event {
                            time_s: t,
                            kind: EventKind::ClampActive {
                                area: state.area,
                                gen: gs.gen,
                            },
                        });
                    }
                }
            }
        }

        let sol = pf(&dispatch, Some(&prev), t)?;
        for (g, (&now, &before)) in sol.gen_q_limit.iter().zip(&prev.gen_q_limit).enumerate() {
            if now != QLimitFlag::Free && before == QLimitFlag::Free {
                events.push(Event {
                    time_s: t,
                    kind: EventKind::QLimitHit {
                        gen: g,
                        at_max: now == QLimitFlag::AtMax,
                    },
                });
            }
        }
        samples.push(Sample {
            time_s: t,
            v_pu: sol.v_pu.clone(),
            theta_rad: sol.theta_rad.clone(),
            gen_p_mw: sol.gen_p_mw.clone(),
            gen_q_mvar: sol.gen_q_mvar.clone(),
            shunt_q_mvar: dispatch.shunt_q_mvar.clone(),
            losses_mw: sol.losses_mw,
        });
        prev = sol;
    }

    Ok(SimulationTrace {
        meta: TraceMeta {
            case_hash: case_hash(net),
            profile_hash: profile.content_hash().to_owned(),
            config: cfg.clone(),
        },
        samples,
        events,
    })
}

/// Re-derives participation factors from the optimal reactive split, with a
/// floor so no unit drops out of the sharing loop entirely.
fn refresh_alphas(state: &mut SvrAreaState, gen_q_mvar: &[f64]) {
    const ALPHA_FLOOR: f64 = 0.05;
    let total: f64 = state.gens.iter().map(|gs| gen_q_mvar[gs.gen].abs()).sum();
    if total < 1e-9 {
        return;
    }
    let mut alphas: Vec<f64> = state
        .gens
        .iter()
        .map(|gs| (gen_q_mvar[gs.gen].abs() / total).max(ALPHA_FLOOR))
        .collect();
    let sum: f64 = alphas.iter().sum();
    for a in &mut alphas {
        *a /= sum;
    }
    for (gs, a) in state.gens.iter_mut().zip(alphas) {
        gs.alpha = a;
    }
}

/// Per-sample and aggregate loss deltas between two runs of the same case
/// and profile. Deltas are `baseline - controlled`, positive when control
/// reduces losses; negative values are preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct LossComparison {
    pub time_s: Vec<f64>,
    pub baseline_mw: Vec<f64>,
    pub controlled_mw: Vec<f64>,
    pub delta_mw: Vec<f64>,
    /// Largest per-sample delta.
    pub peak_reduction_mw: f64,
    /// Peak delta relative to the baseline at the same timestamp, percent.
    pub peak_reduction_pct: f64,
    /// Mean delta over the day.
    pub avg_reduction_mw: f64,
    /// Mean delta relative to the baseline daily average, percent.
    pub avg_reduction_pct: f64,
}

pub fn compare_scenarios(
    baseline: &SimulationTrace,
    controlled: &SimulationTrace,
) -> Result<LossComparison, SimError> {
    if baseline.meta.case_hash != controlled.meta.case_hash {
        return Err(SimError::TraceMismatch("different case files".into()));
    }
    if baseline.meta.profile_hash != controlled.meta.profile_hash {
        return Err(SimError::TraceMismatch("different profiles".into()));
    }
    if baseline.samples.len() != controlled.samples.len() {
        return Err(SimError::TraceMismatch(format!(
            "sample counts differ: {} vs {}",
            baseline.samples.len(),
            controlled.samples.len()
        )));
    }
    if baseline.samples.is_empty() {
        return Err(SimError::TraceMismatch("empty traces".into()));
    }
    for (b, c) in baseline.samples.iter().zip(&controlled.samples) {
        if b.time_s != c.time_s {
            return Err(SimError::TraceMismatch(format!(
                "sampling grids differ at t = {} vs {}",
                b.time_s, c.time_s
            )));
        }
    }
    let n = baseline.samples.len();
    let time_s: Vec<f64> = baseline.samples.iter().map(|s| s.time_s).collect();
    let baseline_mw: Vec<f64> = baseline.samples.iter().map(|s| s.losses_mw).collect();
    let controlled_mw: Vec<f64> = controlled.samples.iter().map(|s| s.losses_mw).collect();
    let delta_mw: Vec<f64> = baseline_mw
        .iter()
        .zip(&controlled_mw)
        .map(|(b, c)| b - c)
        .collect();
    let peak_idx = delta_mw
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let peak_reduction_mw = delta_mw[peak_idx];
    let peak_reduction_pct = if baseline_mw[peak_idx] != 0.0 {
        100.0 * peak_reduction_mw / baseline_mw[peak_idx]
    } else {
        0.0
    };
    let avg_reduction_mw = delta_mw.iter().sum::<f64>() / n as f64;
    let avg_baseline = baseline_mw.iter().sum::<f64>() / n as f64;
    let avg_reduction_pct = if avg_baseline != 0.0 {
        100.0 * avg_reduction_mw / avg_baseline
    } else {
        0.0
    };
    Ok(LossComparison {
        time_s,
        baseline_mw,
        controlled_mw,
        delta_mw,
        peak_reduction_mw,
        peak_reduction_pct,
        avg_reduction_mw,
        avg_reduction_pct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSavings {
    pub eur_per_hour: f64,
    pub eur_per_day: f64,
    pub eur_per_year: f64,
}

/// Monetizes the average loss reduction at a flat energy price. Exact
/// arithmetic: hourly = avg MW x price, daily = x24, yearly = x8760.
pub fn cost_savings(cmp: &LossComparison, price_eur_per_mwh: f64) -> CostSavings {
    assert!(price_eur_per_mwh >= 0.0, "negative energy price");
    let eur_per_hour = cmp.avg_reduction_mw * price_eur_per_mwh;
    CostSavings {
        eur_per_hour,
        eur_per_day: eur_per_hour * 24.0,
        eur_per_year: eur_per_hour * 8760.0,
    }
}
