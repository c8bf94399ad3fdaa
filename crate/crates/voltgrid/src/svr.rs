//! Discrete secondary voltage regulation: one shared pilot-bus PI loop per
//! area plus a per-generator reactive-sharing PI loop, run at a fixed sample
//! interval with conditional-integration anti-windup.
//!
//! Update law per participating generator j:
//!
//! ```text
//! V_err   = V_ref_area - V_pilot
//! Q_err_j = alpha_j * Q_total - Q_j            (per unit, zero when Q_total
//!                                               is below the 0.1 MVar floor)
//! integ  += err * dt                           (frozen while the output
//!                                               clamp is active and the
//!                                               error pushes further out)
//! v_ref_j = base_j + kp_c*V_err + ki_c*integ_c + kp_j*Q_err_j + ki_j*integ_j
//! ```
//!
//! clamped to the reference band. Integration resumes as soon as the error
//! pulls back toward the band, so a saturated loop never deadlocks.

use crate::network::{Area, Network};
use crate::powerflow::{Dispatch, PowerFlowError, PowerFlowOptions, PowerFlowSolution,
    PowerFlowSolver};
use nalgebra::DMatrix;
use thiserror::Error;

/// Below this total the reactive-sharing objective is meaningless and the
/// sharing errors are defined as zero.
pub const Q_TOTAL_FLOOR_MVAR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrGains {
    pub kp_c: f64,
    /// Central integral gain in 1/s.
    pub ki_c: f64,
    pub kp_j: f64,
    /// Sharing integral gain in 1/s.
    pub ki_j: f64,
    pub v_ref_min: f64,
    pub v_ref_max: f64,
}

impl Default for SvrGains {
    fn default() -> Self {
        Self {
            kp_c: 0.0,
            ki_c: 0.02,
            kp_j: 0.0,
            ki_j: 0.0025,
            v_ref_min: 0.95,
            v_ref_max: 1.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrGenState {
    /// Generator index in the network.
    pub gen: usize,
    pub alpha: f64,
    /// Sharing-loop integrator state.
    pub integ: f64,
    /// Reference base held fixed between tertiary updates.
    pub v_ref_base: f64,
    /// Current commanded terminal-voltage reference.
    pub v_ref: f64,
    /// True while the reference clamp is active.
    pub windup: bool,
    /// Machine-bus voltage bounds; the effective clamp is the controller
    /// band intersected with these, so commands stay solvable setpoints.
    pub bus_v_min: f64,
    pub bus_v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrAreaState {
    pub area: usize,
    pub pilot_bus: usize,
    /// Pilot-bus voltage reference, set by the tertiary layer.
    pub v_ref_svr: f64,
    /// Central-loop integrator state.
    pub integ_c: f64,
    pub gens: Vec<SvrGenState>,
}

impl SvrAreaState {
    /// Initial state for an area: bases at the case-file references, all
    /// integrators discharged.
    pub fn init(area: &Area, net: &Network, gen_idxs: &[usize], v_ref_svr: f64) -> Self {
        Self {
            area: area.id,
            pilot_bus: area.pilot_bus,
            v_ref_svr,
            integ_c: 0.0,
            gens: gen_idxs
                .iter()
                .map(|&g| {
                    let bus = &net.buses[net.generators[g].bus];
                    SvrGenState {
                        gen: g,
                        alpha: net.generators[g].alpha,
                        integ: 0.0,
                        v_ref_base: net.generators[g].v_set_pu,
                        v_ref: net.generators[g].v_set_pu,
                        windup: false,
                        bus_v_min: bus.v_min_pu,
                        bus_v_max: bus.v_max_pu,
                    }
                })
                .collect(),
        }
    }

    /// Rebases the controller on fresh tertiary setpoints: new pilot
    /// reference, per-generator bases, discharged integrators.
    pub fn rebase(&mut self, v_ref_svr: f64, gen_bases: &[f64]) {
        assert_eq!(gen_bases.len(), self.gens.len());
        self.v_ref_svr = v_ref_svr;
        self.integ_c = 0.0;
        for (g, &base) in self.gens.iter_mut().zip(gen_bases) {
            g.integ = 0.0;
            g.v_ref_base = base;
            g.v_ref = base;
            g.windup = false;
        }
    }
}

/// Telemetry for one secondary-control step.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrMeasurement {
    pub v_pilot_pu: f64,
    /// Reactive output per participating generator, aligned with the area
    /// state's generator order.
    pub gen_q_mvar: Vec<f64>,
    pub q_total_mvar: f64,
}

impl SvrMeasurement {
    pub fn new(v_pilot_pu: f64, gen_q_mvar: Vec<f64>) -> Self {
        let q_total_mvar = gen_q_mvar.iter().sum();
        Self {
            v_pilot_pu,
            gen_q_mvar,
            q_total_mvar,
        }
    }

    pub fn from_solution(state: &SvrAreaState, sol: &PowerFlowSolution) -> Self {
        Self::new(
            sol.v_pu[state.pilot_bus],
            state.gens.iter().map(|g| sol.gen_q_mvar[g.gen]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharingErrors {
    /// `Q_j / Q_total - alpha_j` per generator; zeros when degenerate.
    pub per_gen: Vec<f64>,
    /// True when `|Q_total|` is below the floor.
    pub degenerate: bool,
}

#[derive(Debug, Error)]
pub enum SvrError {
    #[error("measurement has {got} generator entries, state has {want}")]
    MeasurementShape { got: usize, want: usize },
    #[error("invalid controller parameters: {0}")]
    InvalidParameters(String),
    #[error("closed loop diverges at step {at_step}: |error| exceeded 10x the initial error")]
    Unstable { at_step: usize },
    #[error("area {0} not found or has no participating generators")]
    UnknownArea(usize),
    #[error("power flow failed while linearizing: {0}")]
    Linearization(#[from] PowerFlowError),
}

fn check_gains(gains: &SvrGains, dt_s: f64) -> Result<(), SvrError> {
    if !(dt_s > 0.0) {
        return Err(SvrError::InvalidParameters(format!("dt {dt_s} must be positive")));
    }
    for (name, v) in [
        ("kp_c", gains.kp_c),
        ("ki_c", gains.ki_c),
        ("kp_j", gains.kp_j),
        ("ki_j", gains.ki_j),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(SvrError::InvalidParameters(format!("{name} = {v}")));
        }
    }
    if !(gains.v_ref_min < gains.v_ref_max) {
        return Err(SvrError::InvalidParameters(format!(
            "reference band [{}, {}] empty",
            gains.v_ref_min, gains.v_ref_max
        )));
    }
    Ok(())
}

/// Advances one secondary-control sample, updating integrators and the
/// per-generator voltage references in place.
pub fn svr_step(
    state: &mut SvrAreaState,
    meas: &SvrMeasurement,
    gains: &SvrGains,
    dt_s: f64,
    s_base_mva: f64,
) -> Result<(), SvrError> {
    check_gains(gains, dt_s)?;
    if meas.gen_q_mvar.len() != state.gens.len() {
        return Err(SvrError::MeasurementShape {
            got: meas.gen_q_mvar.len(),
            want: state.gens.len(),
        });
    }

    let v_err = state.v_ref_svr - meas.v_pilot_pu;
    let degenerate = meas.q_total_mvar.abs() < Q_TOTAL_FLOOR_MVAR;
    let integ_c_next = state.integ_c + v_err * dt_s;

    let mut all_high = !state.gens.is_empty();
    let mut all_low = all_high;
    for (j, gen) in state.gens.iter_mut().enumerate() {
        let q_err = if degenerate {
            0.0
        } else {
            (gen.alpha * meas.q_total_mvar - meas.gen_q_mvar[j]) / s_base_mva
        };
        let integ_j_next = gen.integ + q_err * dt_s;
        let u = gen.v_ref_base
            + gains.kp_c * v_err
            + gains.ki_c * integ_c_next
            + gains.kp_j * q_err
            + gains.ki_j * integ_j_next;
        let hi = gains.v_ref_max.min(gen.bus_v_max);
        let lo = gains.v_ref_min.max(gen.bus_v_min).min(hi);
        if u > hi {
            gen.v_ref = hi;
            gen.windup = true;
            all_low = false;
            // Conditional integration: only an inward-pulling error advances.
            if q_err < 0.0 {
                gen.integ = integ_j_next;
            }
        } else if u < lo {
            gen.v_ref = lo;
            gen.windup = true;
            all_high = false;
            if q_err > 0.0 {
                gen.integ = integ_j_next;
            }
        } else {
            gen.v_ref = u;
            gen.windup = false;
            gen.integ = integ_j_next;
            all_high = false;
            all_low = false;
        }
    }

    let central_frozen = (all_high && v_err > 0.0) || (all_low && v_err < 0.0);
    if !central_frozen {
        state.integ_c = integ_c_next;
    }
    Ok(())
}

/// Fractional sharing mismatch `Q_j / Q_total - alpha_j` per generator.
pub fn sharing_errors(state: &SvrAreaState, meas: &SvrMeasurement) -> SharingErrors {
    if meas.q_total_mvar.abs() < Q_TOTAL_FLOOR_MVAR {
        return SharingErrors {
            per_gen: vec![0.0; state.gens.len()],
            degenerate: true,
        };
    }
    SharingErrors {
        per_gen: state
            .gens
            .iter()
            .zip(&meas.gen_q_mvar)
            .map(|(g, &q)| q / meas.q_total_mvar - g.alpha)
            .collect(),
        degenerate: false,
    }
}

/// First-order response of the network around an operating point: pilot
/// voltage and participating-generator reactive outputs as affine functions
/// of the terminal-voltage references.
#[derive(Debug, Clone)]
pub struct LinearAreaPlant {
    pub s_base_mva: f64,
    pub v_pilot_0: f64,
    /// Reactive outputs at the linearization point, per unit.
    pub q_gen_0_pu: Vec<f64>,
    /// References at the linearization point.
    pub v_ref_0: Vec<f64>,
    /// dV_pilot / dv_ref_j.
    pub pilot_sens: Vec<f64>,
    /// dQ_j / dv_ref_k in per unit, row j column k.
    pub q_sens: DMatrix<f64>,
    pub alpha: Vec<f64>,
}

impl LinearAreaPlant {
    pub fn evaluate(&self, v_refs: &[f64]) -> (f64, Vec<f64>) {
        let mut pilot = self.v_pilot_0;
        let mut q = self.q_gen_0_pu.clone();
        for (k, &vr) in v_refs.iter().enumerate() {
            let d = vr - self.v_ref_0[k];
            pilot += self.pilot_sens[k] * d;
            for (j, qj) in q.iter_mut().enumerate() {
                *qj += self.q_sens[(j, k)] * d;
            }
        }
        (pilot, q)
    }
}

/// Measures the area's reference-to-response sensitivities by central finite
/// differences of the power flow around the given dispatch.
pub fn linearize_area_plant(
    net: &Network,
    dispatch: &Dispatch,
    opts: &PowerFlowOptions,
    area_id: usize,
) -> Result<LinearAreaPlant, SvrError> {
    let areas = net.svr_areas();
    let (area, gen_idxs) = areas
        .iter()
        .find(|(a, _)| a.id == area_id)
        .ok_or(SvrError::UnknownArea(area_id))?;
    if gen_idxs.is_empty() {
        return Err(SvrError::UnknownArea(area_id));
    }
    let s = net.s_base_mva;
    let solver = PowerFlowSolver::new(net);
    let base = solver.solve(dispatch, opts, None)?;
    if !base.converged {
        return Err(SvrError::Linearization(PowerFlowError::NotConverged));
    }
    let h = 1e-4;
    let m = gen_idxs.len();
    let mut pilot_sens = vec![0.0; m];
    let mut q_sens = DMatrix::zeros(m, m);
    for (k, &g) in gen_idxs.iter().enumerate() {
        let mut up = dispatch.clone();
        up.gen_v_ref_pu[g] += h;
        let mut dn = dispatch.clone();
        dn.gen_v_ref_pu[g] -= h;
        let sol_up = solver.solve(&up, opts, Some(&base))?;
        let sol_dn = solver.solve(&dn, opts, Some(&base))?;
        if !sol_up.converged || !sol_dn.converged {
            return Err(SvrError::Linearization(PowerFlowError::NotConverged));
        }
        pilot_sens[k] = (sol_up.v_pu[area.pilot_bus] - sol_dn.v_pu[area.pilot_bus]) / (2.0 * h);
        for (j, &gj) in gen_idxs.iter().enumerate() {
            q_sens[(j, k)] =
                (sol_up.gen_q_mvar[gj] - sol_dn.gen_q_mvar[gj]) / (2.0 * h) / s;
        }
    }
    Ok(LinearAreaPlant {
        s_base_mva: s,
        v_pilot_0: base.v_pu[area.pilot_bus],
        q_gen_0_pu: gen_idxs.iter().map(|&g| base.gen_q_mvar[g] / s).collect(),
        v_ref_0: gen_idxs.iter().map(|&g| dispatch.gen_v_ref_pu[g]).collect(),
        pilot_sens,
        q_sens,
        alpha: gen_idxs.iter().map(|&g| net.generators[g].alpha).collect(),
    })
}

/// Simulates the discrete controller against the linearized plant and
/// returns the pilot-voltage trajectory at each sample. The plant responds
/// within the sample, and measurements lag one sample exactly as in the full
/// simulation. Divergence beyond ten times the initial error is an error,
/// not a silent result.
pub fn closed_loop_response(
    plant: &LinearAreaPlant,
    gains: &SvrGains,
    v_ref_svr: f64,
    horizon_s: f64,
    dt_s: f64,
) -> Result<Vec<f64>, SvrError> {
    check_gains(gains, dt_s)?;
    let m = plant.v_ref_0.len();
    let area = Area {
        id: 0,
        pilot_bus: 0,
        member_buses: Vec::new(),
    };
    let mut state = SvrAreaState {
        area: area.id,
        pilot_bus: area.pilot_bus,
        v_ref_svr,
        integ_c: 0.0,
        gens: (0..m)
            .map(|j| SvrGenState {
                gen: j,
                alpha: plant.alpha[j],
                integ: 0.0,
                v_ref_base: plant.v_ref_0[j],
                v_ref: plant.v_ref_0[j],
                windup: false,
                // The linearized plant carries no bus data; only the
                // controller band clamps here.
                bus_v_min: f64::NEG_INFINITY,
                bus_v_max: f64::INFINITY,
            })
            .collect(),
    };
    let steps = (horizon_s / dt_s).round() as usize;
    let initial_err = (v_ref_svr - plant.v_pilot_0).abs();
    let bound = 10.0 * initial_err + 1e-9;
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let refs: Vec<f64> = state.gens.iter().map(|g| g.v_ref).collect();
        let (pilot, q_pu) = plant.evaluate(&refs);
        let meas = SvrMeasurement::new(
            pilot,
            q_pu.iter().map(|q| q * plant.s_base_mva).collect(),
        );
        svr_step(&mut state, &meas, gains, dt_s, plant.s_base_mva)?;
        let refs_new: Vec<f64> = state.gens.iter().map(|g| g.v_ref).collect();
        let (pilot_new, _) = plant.evaluate(&refs_new);
        if (v_ref_svr - pilot_new).abs() > bound {
            return Err(SvrError::Unstable { at_step: k });
        }
        out.push(pilot_new);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_gen_state(base: f64, target: f64) -> SvrAreaState {
        SvrAreaState {
            area: 1,
            pilot_bus: 0,
            v_ref_svr: target,
            integ_c: 0.0,
            gens: vec![SvrGenState {
                gen: 0,
                alpha: 1.0,
                integ: 0.0,
                v_ref_base: base,
                v_ref: base,
                windup: false,
                bus_v_min: 0.0,
                bus_v_max: 2.0,
            }],
        }
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // kp_c = 1, ki_c = 0.1, dt = 1, V_err = 0.01 gives a +0.011 move.
        let mut state = one_gen_state(1.0, 1.01);
        let gains = SvrGains {
            kp_c: 1.0,
            ki_c: 0.1,
            kp_j: 0.0,
            ki_j: 0.0,
            ..Default::default()
        };
        let meas = SvrMeasurement::new(1.0, vec![0.0]);
        svr_step(&mut state, &meas, &gains, 1.0, 100.0).unwrap();
        assert!((state.gens[0].v_ref - 1.011).abs() < 1e-12);
        assert!((state.integ_c - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sharing_error_splits_by_participation() {
        let mut state = one_gen_state(1.0, 1.0);
        state.gens[0].alpha = 0.7;
        state.gens.push(SvrGenState {
            gen: 1,
            alpha: 0.3,
            integ: 0.0,
            v_ref_base: 1.0,
            v_ref: 1.0,
            windup: false,
            bus_v_min: 0.0,
            bus_v_max: 2.0,
        });
        let meas = SvrMeasurement::new(1.0, vec![10.0, 10.0]);
        let err = sharing_errors(&state, &meas);
        assert!(!err.degenerate);
        assert!((err.per_gen[0] + 0.2).abs() < 1e-12);
        assert!((err.per_gen[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_total_gives_zero_errors() {
        let state = one_gen_state(1.0, 1.0);
        let meas = SvrMeasurement::new(1.0, vec![0.05]);
        let err = sharing_errors(&state, &meas);
        assert!(err.degenerate);
        assert_eq!(err.per_gen, vec![0.0]);
    }

    #[test]
    fn clamp_freezes_integrator_until_error_reverses() {
        let mut state = one_gen_state(1.09, 1.05);
        let gains = SvrGains {
            ki_c: 0.02,
            ..Default::default()
        };
        // Persistent positive error drives the output into the ceiling.
        let low = SvrMeasurement::new(0.95, vec![0.0]);
        for _ in 0..200 {
            svr_step(&mut state, &low, &gains, 10.0, 100.0).unwrap();
        }
        assert!(state.gens[0].windup);
        assert!((state.gens[0].v_ref - gains.v_ref_max).abs() < 1e-12);
        let frozen = state.integ_c;
        svr_step(&mut state, &low, &gains, 10.0, 100.0).unwrap();
        assert_eq!(state.integ_c, frozen, "integrator must hold while clamped");
        // Error reversal unwinds immediately; no accumulated windup to bleed.
        let high = SvrMeasurement::new(1.20, vec![0.0]);
        svr_step(&mut state, &high, &gains, 10.0, 100.0).unwrap();
        assert!(state.integ_c < frozen);
        svr_step(&mut state, &high, &gains, 10.0, 100.0).unwrap();
        assert!(!state.gens[0].windup);
        assert!(state.gens[0].v_ref < gains.v_ref_max);
    }

    #[test]
    fn reference_clamp_respects_machine_bus_bounds() {
        // The band allows 1.10 but the machine bus tops out at 1.07, so the
        // commanded reference must stop there.
        let mut state = one_gen_state(1.06, 1.10);
        state.gens[0].bus_v_max = 1.07;
        let gains = SvrGains::default();
        let low = SvrMeasurement::new(0.95, vec![0.0]);
        for _ in 0..100 {
            svr_step(&mut state, &low, &gains, 10.0, 100.0).unwrap();
        }
        assert!((state.gens[0].v_ref - 1.07).abs() < 1e-12);
        assert!(state.gens[0].windup);
    }

    #[test]
    fn equilibrium_is_a_fixed_point_and_errors_move_it() {
        let mut state = one_gen_state(1.02, 1.02);
        state.integ_c = 0.3;
        state.gens[0].integ = -0.1;
        let gains = SvrGains::default();
        state.gens[0].v_ref = state.gens[0].v_ref_base
            + gains.ki_c * state.integ_c
            + gains.ki_j * state.gens[0].integ;
        // alpha = 1: the single unit carries the whole total, so the
        // sharing error vanishes and the pilot error is zero.
        let meas = SvrMeasurement::new(1.02, vec![25.0]);
        let before = state.clone();
        svr_step(&mut state, &meas, &gains, 10.0, 100.0).unwrap();
        assert_eq!(state, before, "zero errors must be a fixed point");

        let meas_off = SvrMeasurement::new(1.019, vec![25.0]);
        svr_step(&mut state, &meas_off, &gains, 10.0, 100.0).unwrap();
        assert!(state.integ_c > before.integ_c);
        assert!(state.gens[0].v_ref > before.gens[0].v_ref);
    }

    #[test]
    fn integral_loop_on_unit_plant_converges_geometrically() {
        // ki_c * dt = 0.1 on a unit-gain plant contracts the error by 0.9
        // per sample.
        let plant = LinearAreaPlant {
            s_base_mva: 100.0,
            v_pilot_0: 1.0,
            q_gen_0_pu: vec![0.0],
            v_ref_0: vec![1.0],
            pilot_sens: vec![1.0],
            q_sens: DMatrix::zeros(1, 1),
            alpha: vec![1.0],
        };
        let gains = SvrGains {
            ki_c: 0.01,
            ki_j: 0.0,
            ..Default::default()
        };
        let target = 1.02;
        let traj = closed_loop_response(&plant, &gains, target, 600.0, 10.0).unwrap();
        let mut err_prev = (target - 1.0) * 0.9; // after the first step
        assert!((target - traj[0] - err_prev).abs() < 1e-12);
        for &p in &traj[1..10] {
            let err = target - p;
            assert!((err - 0.9 * err_prev).abs() < 1e-12);
            err_prev = err;
        }
    }

    #[test]
    fn unstable_gains_are_reported() {
        let plant = LinearAreaPlant {
            s_base_mva: 100.0,
            v_pilot_0: 1.0,
            q_gen_0_pu: vec![0.0],
            v_ref_0: vec![1.0],
            pilot_sens: vec![1.0],
            q_sens: DMatrix::zeros(1, 1),
            alpha: vec![1.0],
        };
        // ki_c * dt = 2.5 flips the sign each step and grows without bound.
        let gains = SvrGains {
            ki_c: 0.25,
            ki_j: 0.0,
            v_ref_min: 0.0,
            v_ref_max: 10.0,
            ..Default::default()
        };
        let err = closed_loop_response(&plant, &gains, 1.02, 600.0, 10.0).unwrap_err();
        assert!(matches!(err, SvrError::Unstable { .. }));
    }
}
