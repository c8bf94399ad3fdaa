//! Newton-Raphson AC power flow in polar form with analytic Jacobian,
//! generator reactive-limit enforcement (PV to PQ switching with back-off),
//! branch flows, and network losses.

use crate::ac::{self, JacobianLayout};
use crate::network::{branch_stamps, build_admittance, AdmittanceMatrix, Network};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct PowerFlowOptions {
    /// Convergence threshold on the infinity norm of the per-unit mismatch.
    pub tolerance_pu: f64,
    /// Cap on Newton updates, cumulative across reclassification rounds.
    pub max_iterations: usize,
    /// Enforce generator reactive limits by switching PV buses to PQ.
    pub enforce_gen_q_limits: bool,
    /// Ignore any warm start and begin from V = 1, theta = 0.
    pub flat_start: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance_pu: 1e-8,
            max_iterations: 25,
            enforce_gen_q_limits: true,
            flat_start: false,
        }
    }
}

/// Controllable inputs of one power-flow solve: voltage references, shunt
/// commands, and the profile multipliers applied to loads and wind.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub gen_v_ref_pu: Vec<f64>,
    pub shunt_q_mvar: Vec<f64>,
    pub load_p_scale: Vec<f64>,
    pub load_q_scale: Vec<f64>,
    pub wind_scale: Vec<f64>,
}

impl Dispatch {
    /// Case-file setpoints with unity profile multipliers.
    pub fn nominal(net: &Network) -> Self {
        Self {
            gen_v_ref_pu: net.generators.iter().map(|g| g.v_set_pu).collect(),
            shunt_q_mvar: net.shunts.iter().map(|s| s.q_set_mvar).collect(),
            load_p_scale: vec![1.0; net.loads.len()],
            load_q_scale: vec![1.0; net.loads.len()],
            wind_scale: vec![1.0; net.wind_parks.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QLimitFlag {
    Free,
    AtMin,
    AtMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
}

impl BranchFlow {
    /// Active power dissipated in the branch; nonnegative for passive lines.
    pub fn loss_mw(&self) -> f64 {
        self.p_from_mw + self.p_to_mw
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub v_pu: Vec<f64>,
    pub theta_rad: Vec<f64>,
    pub gen_p_mw: Vec<f64>,
    pub gen_q_mvar: Vec<f64>,
    pub gen_q_limit: Vec<QLimitFlag>,
    pub flows: Vec<BranchFlow>,
    pub losses_mw: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("singular Jacobian at iteration {iteration}: islanded or degenerate network")]
    SingularJacobian { iteration: usize },
    #[error("dispatch does not match network: {0}")]
    DispatchShape(String),
    #[error("invalid setpoint: {0}")]
    InvalidSetpoint(String),
    #[error("operation requires a converged solution")]
    NotConverged,
}

/// Reusable solver holding the admittance matrix and per-bus device maps.
pub struct PowerFlowSolver<'a> {
    net: &'a Network,
    y: AdmittanceMatrix,
    gens_by_bus: Vec<Vec<usize>>,
    slack: usize,
}

impl<'a> PowerFlowSolver<'a> {
    pub fn new(net: &'a Network) -> Self {
        Self {
            net,
            y: build_admittance(net),
            gens_by_bus: net.gens_by_bus(),
            slack: net.slack_bus(),
        }
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    fn check_dispatch(&self, d: &Dispatch) -> Result<(), PowerFlowError> {
        let net = self.net;
        if d.gen_v_ref_pu.len() != net.generators.len()
            || d.shunt_q_mvar.len() != net.shunts.len()
            || d.load_p_scale.len() != net.loads.len()
            || d.load_q_scale.len() != net.loads.len()
            || d.wind_scale.len() != net.wind_parks.len()
        {
            return Err(PowerFlowError::DispatchShape(
                "vector lengths do not match device counts".into(),
            ));
        }
        for (i, g) in net.generators.iter().enumerate() {
            let v = d.gen_v_ref_pu[i];
            let b = &net.buses[g.bus];
            if !v.is_finite() || v < b.v_min_pu - 1e-12 || v > b.v_max_pu + 1e-12 {
                return Err(PowerFlowError::InvalidSetpoint(format!(
                    "generator {i}: voltage reference {v} outside bus bounds [{}, {}]",
                    b.v_min_pu, b.v_max_pu
                )));
            }
        }
        for bus_gens in &self.gens_by_bus {
            if bus_gens.len() > 1 {
                let first = d.gen_v_ref_pu[bus_gens[0]];
                for &g in &bus_gens[1..] {
                    if (d.gen_v_ref_pu[g] - first).abs() > 1e-9 {
                        return Err(PowerFlowError::InvalidSetpoint(format!(
                            "generators at bus {} have conflicting voltage references",
                            self.net.generators[g].bus
                        )));
                    }
                }
            }
        }
        for (i, s) in d.load_p_scale.iter().chain(d.load_q_scale.iter()).enumerate() {
            if !s.is_finite() || *s < 0.0 {
                return Err(PowerFlowError::InvalidSetpoint(format!(
                    "load scale entry {i} is {s}"
                )));
            }
        }
        for (i, s) in d.wind_scale.iter().enumerate() {
            if !s.is_finite() || *s < 0.0 {
                return Err(PowerFlowError::InvalidSetpoint(format!(
                    "wind scale entry {i} is {s}"
                )));
            }
        }
        Ok(())
    }

    /// Fixed per-unit injections excluding generators: wind minus load for
    /// P, shunt commands minus load for Q.
    fn fixed_injections(&self, d: &Dispatch) -> (Vec<f64>, Vec<f64>) {
        let net = self.net;
        let s = net.s_base_mva;
        let n = net.n_buses();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for (i, l) in net.loads.iter().enumerate() {
            p[l.bus] -= l.p_mw * d.load_p_scale[i] / s;
            q[l.bus] -= l.q_mvar * d.load_q_scale[i] / s;
        }
        for (i, w) in net.wind_parks.iter().enumerate() {
            p[w.bus] += w.p_max_mw * d.wind_scale[i] / s;
        }
        for (i, sh) in net.shunts.iter().enumerate() {
            q[sh.bus] += d.shunt_q_mvar[i] / s;
        }
        (p, q)
    }

    pub fn solve(
        &self,
        d: &Dispatch,
        opts: &PowerFlowOptions,
        warm: Option<&PowerFlowSolution>,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        self.check_dispatch(d)?;
        let net = self.net;
        let n = net.n_buses();
        let s_base = net.s_base_mva;
        let slack = self.slack;

        let (p_fix, q_fix) = self.fixed_injections(d);
        let mut p_spec = p_fix.clone();
        for (g, gen) in net.generators.iter().enumerate() {
            if gen.bus != slack {
                let _ = g;
                p_spec[gen.bus] += gen.p0_mw / s_base;
            }
        }

        // Per-bus voltage reference and aggregate reactive limits.
        let mut v_ref = vec![f64::NAN; n];
        let mut q_min_bus = vec![0.0; n];
        let mut q_max_bus = vec![0.0; n];
        for (g, gen) in net.generators.iter().enumerate() {
            v_ref[gen.bus] = d.gen_v_ref_pu[g];
            q_min_bus[gen.bus] += gen.q_min_mvar / s_base;
            q_max_bus[gen.bus] += gen.q_max_mvar / s_base;
        }

        let mut vm = vec![1.0; n];
        let mut va = vec![0.0; n];
        if let (Some(w), false) = (warm, opts.flat_start) {
            vm.copy_from_slice(&w.v_pu);
            va.copy_from_slice(&w.theta_rad);
        }
        for b in 0..n {
            if !self.gens_by_bus[b].is_empty() {
                vm[b] = v_ref[b];
            }
        }
        va[slack] = 0.0;

        // None: regulating (PV); Some(flag): pinned at a reactive limit.
        let mut clamp: Vec<Option<QLimitFlag>> = vec![None; n];
        let mut iterations = 0usize;
        let mut max_mismatch = f64::INFINITY;
        let mut converged = false;
        // Threshold below the 1e-9 MVar contract so enforcement is airtight.
        let q_tol = 1e-12;

        let gen_buses: Vec<usize> = (0..n)
            .filter(|&b| b != slack && !self.gens_by_bus[b].is_empty())
            .collect();
        let max_rounds = 2 * gen_buses.len() + 3;

        let mut p_inj = vec![0.0; n];
        let mut q_inj = vec![0.0; n];

        'rounds: for _round in 0..max_rounds {
            let rows_p: Vec<usize> = (0..n).filter(|&b| b != slack).collect();
            let rows_q: Vec<usize> = (0..n)
                .filter(|&b| {
                    b != slack && (self.gens_by_bus[b].is_empty() || clamp[b].is_some())
                })
                .collect();
            let mut col_th = vec![None; n];
            let mut col_vm = vec![None; n];
            let n_th = rows_p.len();
            for (k, &b) in rows_p.iter().enumerate() {
                col_th[b] = Some(k);
            }
            for (k, &b) in rows_q.iter().enumerate() {
                col_vm[b] = Some(n_th + k);
            }
            let dim = n_th + rows_q.len();

            let q_spec = |b: usize| {
                q_fix[b]
                    + match clamp[b] {
                        Some(QLimitFlag::AtMax) => q_max_bus[b],
                        Some(QLimitFlag::AtMin) => q_min_bus[b],
                        _ => 0.0,
                    }
            };

            converged = false;
            loop {
                ac::injections(&self.y, &vm, &va, &mut p_inj, &mut q_inj);
                let mut mis = DVector::zeros(dim);
                for (k, &b) in rows_p.iter().enumerate() {
                    mis[k] = p_spec[b] - p_inj[b];
                }
                for (k, &b) in rows_q.iter().enumerate() {
                    mis[n_th + k] = q_spec(b) - q_inj[b];
                }
                max_mismatch = mis.amax();
                if max_mismatch <= opts.tolerance_pu {
                    converged = true;
                    break;
                }
                if iterations >= opts.max_iterations {
                    break 'rounds;
                }
                let mut jac = DMatrix::zeros(dim, dim);
                let layout = JacobianLayout {
                    rows_p: &rows_p,
                    rows_q: &rows_q,
                    col_th: &col_th,
                    col_vm: &col_vm,
                };
                ac::fill_jacobian(&self.y, &vm, &va, &p_inj, &q_inj, &layout, &mut jac);
                let lu = jac.lu();
                let dx = lu
                    .solve(&mis)
                    .ok_or(PowerFlowError::SingularJacobian { iteration: iterations })?;
                for (k, &b) in rows_p.iter().enumerate() {
                    va[b] += dx[k];
                }
                for (k, &b) in rows_q.iter().enumerate() {
                    vm[b] = (vm[b] + dx[n_th + k]).max(0.2);
                }
                iterations += 1;
            }

            if !opts.enforce_gen_q_limits {
                break;
            }
            let mut changed = false;
            for &b in &gen_buses {
                let q_bus = q_inj[b] - q_fix[b];
                match clamp[b] {
                    None => {
                        if q_bus > q_max_bus[b] + q_tol {
                            clamp[b] = Some(QLimitFlag::AtMax);
                            changed = true;
                        } else if q_bus < q_min_bus[b] - q_tol {
                            clamp[b] = Some(QLimitFlag::AtMin);
                            changed = true;
                        }
                    }
                    Some(QLimitFlag::AtMax) => {
                        // At the ceiling the bus undervolts; recovering above
                        // the reference means the unit can regulate again.
                        if vm[b] > v_ref[b] + 1e-9 {
                            clamp[b] = None;
                            vm[b] = v_ref[b];
                            changed = true;
                        }
                    }
                    Some(QLimitFlag::AtMin) => {
                        if vm[b] < v_ref[b] - 1e-9 {
                            clamp[b] = None;
                            vm[b] = v_ref[b];
                            changed = true;
                        }
                    }
                    Some(QLimitFlag::Free) => unreachable!("free flag never stored in clamp"),
                }
            }
            if !changed {
                break;
            }
        }

        ac::injections(&self.y, &vm, &va, &mut p_inj, &mut q_inj);
        let sol = self.finalize(
            d, &p_fix, &q_fix, &vm, &va, &p_inj, &q_inj, &clamp, converged, iterations,
            max_mismatch,
        );
        Ok(sol)
    }

    #[allow(clippy::too_many_arguments)]
    fn finalize(
        &self,
        _d: &Dispatch,
        p_fix: &[f64],
        q_fix: &[f64],
        vm: &[f64],
        va: &[f64],
        p_inj: &[f64],
        q_inj: &[f64],
        clamp: &[Option<QLimitFlag>],
        converged: bool,
        iterations: usize,
        max_mismatch: f64,
    ) -> PowerFlowSolution {
        let net = self.net;
        let s_base = net.s_base_mva;
        let ng = net.generators.len();
        let mut gen_p = vec![0.0; ng];
        let mut gen_q = vec![0.0; ng];
        let mut gen_flag = vec![QLimitFlag::Free; ng];

        for (b, gens) in self.gens_by_bus.iter().enumerate() {
            if gens.is_empty() {
                continue;
            }
            // Active power: dispatched values except at the slack bus, which
            // absorbs the network imbalance in proportion to unit size.
            if b == self.slack {
                let p_bus = (p_inj[b] - p_fix[b]) * s_base;
                let total: f64 = gens.iter().map(|&g| net.generators[g].p_max_mw).sum();
                for &g in gens {
                    let w = if total > 0.0 {
                        net.generators[g].p_max_mw / total
                    } else {
                        1.0 / gens.len() as f64
                    };
                    gen_p[g] = p_bus * w;
                }
            } else {
                for &g in gens {
                    gen_p[g] = net.generators[g].p0_mw;
                }
            }
            // Reactive power: pinned units sit at their own limits; otherwise
            // the bus total is shared proportionally to reactive range.
            match clamp[b] {
                Some(QLimitFlag::AtMax) => {
                    for &g in gens {
                        gen_q[g] = net.generators[g].q_max_mvar;
                        gen_flag[g] = QLimitFlag::AtMax;
                    }
                }
                Some(QLimitFlag::AtMin) => {
                    for &g in gens {
                        gen_q[g] = net.generators[g].q_min_mvar;
                        gen_flag[g] = QLimitFlag::AtMin;
                    }
                }
                _ => {
                    let q_bus = (q_inj[b] - q_fix[b]) * s_base;
                    let sum_min: f64 = gens.iter().map(|&g| net.generators[g].q_min_mvar).sum();
                    let sum_rng: f64 = gens
                        .iter()
                        .map(|&g| net.generators[g].q_max_mvar - net.generators[g].q_min_mvar)
                        .sum();
                    for &g in gens {
                        let gen = &net.generators[g];
                        gen_q[g] = if sum_rng > 0.0 {
                            gen.q_min_mvar
                                + (q_bus - sum_min) * (gen.q_max_mvar - gen.q_min_mvar) / sum_rng
                        } else {
                            q_bus / gens.len() as f64
                        };
                    }
                }
            }
        }

        let flows = flows_from_state(net, vm, va);
        let losses_mw = network_losses_mw(net, vm, va);

        PowerFlowSolution {
            v_pu: vm.to_vec(),
            theta_rad: va.to_vec(),
            gen_p_mw: gen_p,
            gen_q_mvar: gen_q,
            gen_q_limit: gen_flag,
            flows,
            losses_mw,
            converged,
            iterations,
            max_mismatch_pu: max_mismatch,
        }
    }
}

fn flows_from_state(net: &Network, vm: &[f64], va: &[f64]) -> Vec<BranchFlow> {
    let s_base = net.s_base_mva;
    branch_stamps(net)
        .iter()
        .map(|st| {
            let vf = Complex64::from_polar(vm[st.from], va[st.from]);
            let vt = Complex64::from_polar(vm[st.to], va[st.to]);
            let s_f = vf * (st.y_ff * vf + st.y_ft * vt).conj() * s_base;
            let s_t = vt * (st.y_tf * vf + st.y_tt * vt).conj() * s_base;
            BranchFlow {
                p_from_mw: s_f.re,
                q_from_mvar: s_f.im,
                p_to_mw: s_t.re,
                q_to_mvar: s_t.im,
            }
        })
        .collect()
}

/// Total ohmic losses implied by a voltage profile, in MW.
///
/// Per branch, series dissipation is `g_s |V_f/tap - V_t|^2`, which equals
/// the flow sum `P_ij + P_ji` algebraically but is exact where it matters:
/// a zero-resistance branch contributes exactly 0.0 instead of rounding
/// noise, so loss ties between equivalent states compare equal.
pub fn network_losses_mw(net: &Network, vm: &[f64], va: &[f64]) -> f64 {
    let mut total = 0.0;
    for br in &net.branches {
        let g_s = br.r_pu / (br.r_pu * br.r_pu + br.x_pu * br.x_pu);
        let vf = Complex64::from_polar(vm[br.from_bus] / br.tap, va[br.from_bus]);
        let vt = Complex64::from_polar(vm[br.to_bus], va[br.to_bus]);
        total += g_s * (vf - vt).norm_sqr();
    }
    total * net.s_base_mva
}

/// One-shot solve from a flat start.
pub fn solve_power_flow(
    net: &Network,
    dispatch: &Dispatch,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    PowerFlowSolver::new(net).solve(dispatch, opts, None)
}

/// Total network losses of a converged solution in MW.
pub fn compute_losses(sol: &PowerFlowSolution) -> Result<f64, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    Ok(sol.flows.iter().map(|f| f.loss_mw()).sum())
}

/// Recomputes branch flows from the solution voltages.
pub fn line_flows(sol: &PowerFlowSolution, net: &Network) -> Vec<BranchFlow> {
    flows_from_state(net, &sol.v_pu, &sol.theta_rad)
}
