//! Tertiary regulation: network-loss minimization over generator reactive
//! dispatch, shunt commands, and a system frequency deviation, solved with a
//! primal-dual interior-point method.
//!
//! Decision vector: `[theta (non-reference buses), V (all buses), dQ per
//! generator, Q per shunt, df]`. Every bus carries active and reactive
//! balance equalities; generator active power is tied to `df` through
//! governor droop, so the imbalance closes through a distributed slack
//! instead of a single machine. Inequalities cover generator P/Q boxes, the
//! MVA circle, the leading-power-factor half-plane, the field-limit circle,
//! voltage-scaled shunt boxes, bus voltage bounds, and wide angle boxes.

use crate::ac;
use crate::network::{build_admittance, AdmittanceMatrix, Network};
use crate::powerflow::{
    network_losses_mw, Dispatch, PowerFlowOptions, PowerFlowSolution, PowerFlowSolver,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Step fraction keeping slacks and multipliers strictly positive.
const FRACTION_TO_BOUNDARY: f64 = 0.995;
/// Barrier parameter shrink factor per outer stage.
const BARRIER_REDUCTION: f64 = 0.2;
/// Feasibility tolerance for grid-search candidates and audits.
const AUDIT_TOL: f64 = 1e-6;
/// Grid-search candidate cap.
const ORACLE_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpfConfig {
    /// Convergence threshold on stationarity, feasibility, and
    /// complementarity (per-unit quantities).
    pub tolerance: f64,
    /// Cap on Newton iterations.
    pub max_iterations: usize,
    /// Maximum leading power factor; the reactive floor is
    /// `-P tan(arccos phi_lead_pf)`.
    pub phi_lead_pf: f64,
    /// Consumed by the simulation layer: refresh participation factors from
    /// the optimal reactive split after each tertiary update.
    pub alpha_refresh: bool,
    /// Fallback direct-axis reactance for machines whose case entry omits
    /// it; `None` makes the omission a construction error.
    pub default_x_d_pu: Option<f64>,
    /// Fallback field-limit internal voltage, same rules.
    pub default_e_q_max_pu: Option<f64>,
}

impl Default for OpfConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
            phi_lead_pf: 0.86,
            alpha_refresh: false,
            default_x_d_pu: Some(1.8),
            default_e_q_max_pu: Some(2.0),
        }
    }
}

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("operating point has not converged")]
    OperatingPointNotConverged,
    #[error("operating point or dispatch dimensions do not match the network")]
    ShapeMismatch,
    #[error("generator {gen}: {field} is missing and no default is configured")]
    MissingMachineParameter { gen: usize, field: &'static str },
    #[error("no generator has nonzero droop; the frequency deviation is undetermined")]
    NoDroop,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{free} free setpoint dimensions exceed the grid-search limit of 4")]
    TooManyFreeSetpoints { free: usize },
    #[error("resolution {resolution} pu yields {candidates} candidates, above the {cap} cap")]
    ResolutionTooFine {
        resolution: f64,
        candidates: u128,
        cap: u64,
    },
    #[error("no feasible candidate")]
    NoFeasibleCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpfStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl std::fmt::Display for OpfStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OpfStatus::Optimal => "optimal",
            OpfStatus::MaxIterations => "max_iterations",
            OpfStatus::Infeasible => "infeasible",
        })
    }
}

/// First-order optimality measures, re-derived from problem data at a
/// candidate point rather than read out of the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// Infinity norm of the Lagrangian gradient.
    pub stationarity: f64,
    /// Worst equality residual or inequality violation.
    pub primal_feasibility: f64,
    /// Worst `|zeta_i * g_i|` product.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
struct GenModel {
    bus: usize,
    /// Active output at the operating point, per unit.
    p0: f64,
    /// Droop gain, per unit per hertz.
    kp: f64,
    p_min: f64,
    p_max: f64,
    /// Reactive output at the operating point, per unit.
    q0: f64,
    q_min: f64,
    q_max: f64,
    s_max: f64,
    x_d: f64,
    e_q: f64,
}

#[derive(Debug, Clone)]
struct ShuntModel {
    bus: usize,
    /// Command at the operating point, per unit.
    q0: f64,
    /// `q_min / v_min^2`: lower bound is `lo_coeff * V^2`.
    lo_coeff: f64,
    /// `q_max / v_max^2`: upper bound is `hi_coeff * V^2`.
    hi_coeff: f64,
}

/// One scalar inequality `c(x) <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cons {
    PMin(usize),
    PMax(usize),
    QMin(usize),
    QMax(usize),
    Mva(usize),
    LeadPf(usize),
    Field(usize),
    ShuntLo(usize),
    ShuntHi(usize),
    VMin(usize),
    VMax(usize),
    AngleLo(usize),
    AngleHi(usize),
}

impl Cons {
    fn label(&self) -> String {
        match *self {
            Cons::PMin(g) => format!("gen{g}.p_min"),
            Cons::PMax(g) => format!("gen{g}.p_max"),
            Cons::QMin(g) => format!("gen{g}.q_min"),
            Cons::QMax(g) => format!("gen{g}.q_max"),
            Cons::Mva(g) => format!("gen{g}.mva"),
            Cons::LeadPf(g) => format!("gen{g}.lead_pf"),
            Cons::Field(g) => format!("gen{g}.field"),
            Cons::ShuntLo(s) => format!("shunt{s}.lower"),
            Cons::ShuntHi(s) => format!("shunt{s}.upper"),
            Cons::VMin(b) => format!("bus{b}.v_min"),
            Cons::VMax(b) => format!("bus{b}.v_max"),
            Cons::AngleLo(b) => format!("bus{b}.angle_lo"),
            Cons::AngleHi(b) => format!("bus{b}.angle_hi"),
        }
    }
}

/// Loss-minimization problem instantiated on a network around a converged
/// operating point. Variable and constraint counts are deterministic
/// functions of the network.
#[derive(Debug)]
pub struct OpfProblem<'a> {
    pub net: &'a Network,
    y: AdmittanceMatrix,
    tan_phi: f64,
    gens: Vec<GenModel>,
    shunts: Vec<ShuntModel>,
    /// Load and wind injections (no shunts), per unit per bus.
    p_fix: Vec<f64>,
    q_fix: Vec<f64>,
    ref_bus: usize,
    n: usize,
    col_th: Vec<Option<usize>>,
    col_vm: Vec<Option<usize>>,
    off_v: usize,
    off_dq: usize,
    off_qs: usize,
    idx_df: usize,
    cons: Vec<Cons>,
    x0: DVector<f64>,
    /// Losses at the operating point, MW.
    pub start_losses_mw: f64,
}

#[derive(Debug, Clone)]
pub struct OpfSolution {
    /// Network losses at the returned point, MW.
    pub objective_mw: f64,
    /// Losses at the operating point the problem was built around, MW.
    pub start_losses_mw: f64,
    /// Per-bus voltage magnitudes.
    pub v_setpoints: Vec<f64>,
    /// Per-bus angles, reference at zero.
    pub theta_rad: Vec<f64>,
    /// `(area id, optimal pilot-bus voltage)` sorted by area id.
    pub pilot_refs: Vec<(usize, f64)>,
    pub gen_p_mw: Vec<f64>,
    pub gen_q_mvar: Vec<f64>,
    pub shunt_q_mvar: Vec<f64>,
    pub delta_f_hz: f64,
    pub status: OpfStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// Equality multipliers (P rows then Q rows).
    pub lambda: Vec<f64>,
    /// Inequality multipliers, aligned with the problem's constraint order.
    pub zeta: Vec<f64>,
    /// Inequality slacks, same order.
    pub slack: Vec<f64>,
}

pub fn build_opf<'a>(
    net: &'a Network,
    op_point: &PowerFlowSolution,
    dispatch: &Dispatch,
    config: &OpfConfig,
) -> Result<OpfProblem<'a>, OpfError> {
    if !op_point.converged {
        return Err(OpfError::OperatingPointNotConverged);
    }
    let n = net.n_buses();
    let ng = net.generators.len();
    let ns = net.shunts.len();
    if op_point.v_pu.len() != n
        || op_point.theta_rad.len() != n
        || op_point.gen_p_mw.len() != ng
        || op_point.gen_q_mvar.len() != ng
        || dispatch.shunt_q_mvar.len() != ns
        || dispatch.load_p_scale.len() != net.loads.len()
        || dispatch.load_q_scale.len() != net.loads.len()
        || dispatch.wind_scale.len() != net.wind_parks.len()
    {
        return Err(OpfError::ShapeMismatch);
    }
    if !(config.phi_lead_pf > 0.0 && config.phi_lead_pf < 1.0) {
        return Err(OpfError::InvalidConfig(format!(
            "phi_lead_pf {} must lie in (0, 1)",
            config.phi_lead_pf
        )));
    }
    for (name, v) in [
        ("default_x_d_pu", config.default_x_d_pu),
        ("default_e_q_max_pu", config.default_e_q_max_pu),
    ] {
        if let Some(v) = v {
            if !(v > 0.0) {
                return Err(OpfError::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
    }
    let s = net.s_base_mva;
    let tan_phi = (1.0 - config.phi_lead_pf * config.phi_lead_pf).sqrt() / config.phi_lead_pf;

    let mut gens = Vec::with_capacity(ng);
    for (g, gen) in net.generators.iter().enumerate() {
        let x_d = gen
            .x_d_pu
            .or(config.default_x_d_pu)
            .ok_or(OpfError::MissingMachineParameter {
                gen: g,
                field: "x_d_pu",
            })?;
        let e_q = gen
            .e_q_max_pu
            .or(config.default_e_q_max_pu)
            .ok_or(OpfError::MissingMachineParameter {
                gen: g,
                field: "e_q_max_pu",
            })?;
        gens.push(GenModel {
            bus: gen.bus,
            p0: op_point.gen_p_mw[g] / s,
            kp: gen.k_p_mw_per_hz / s,
            p_min: gen.p_min_mw / s,
            p_max: gen.p_max_mw / s,
            q0: op_point.gen_q_mvar[g] / s,
            q_min: gen.q_min_mvar / s,
            q_max: gen.q_max_mvar / s,
            s_max: gen.s_max_mva / s,
            x_d,
            e_q,
        });
    }
    if gens.iter().all(|g| g.kp == 0.0) {
        return Err(OpfError::NoDroop);
    }

    let mut p_fix = vec![0.0; n];
    let mut q_fix = vec![0.0; n];
    for (i, l) in net.loads.iter().enumerate() {
        p_fix[l.bus] -= l.p_mw * dispatch.load_p_scale[i] / s;
        q_fix[l.bus] -= l.q_mvar * dispatch.load_q_scale[i] / s;
    }
    for (i, w) in net.wind_parks.iter().enumerate() {
        p_fix[w.bus] += w.p_max_mw * dispatch.wind_scale[i] / s;
    }

    let shunts: Vec<ShuntModel> = net
        .shunts
        .iter()
        .enumerate()
        .map(|(i, sh)| {
            let b = &net.buses[sh.bus];
            ShuntModel {
                bus: sh.bus,
                q0: dispatch.shunt_q_mvar[i] / s,
                lo_coeff: sh.q_min_mvar / s / (b.v_min_pu * b.v_min_pu),
                hi_coeff: sh.q_max_mvar / s / (b.v_max_pu * b.v_max_pu),
            }
        })
        .collect();

    let ref_bus = net.slack_bus();
    let mut col_th = vec![None; n];
    let mut c = 0;
    for b in 0..n {
        if b != ref_bus {
            col_th[b] = Some(c);
            c += 1;
        }
    }
    let off_v = c;
    let col_vm: Vec<Option<usize>> = (0..n).map(|b| Some(off_v + b)).collect();
    let off_dq = off_v + n;
    let off_qs = off_dq + ng;
    let idx_df = off_qs + ns;
    let nx = idx_df + 1;

    let mut cons = Vec::new();
    for g in 0..ng {
        if gens[g].kp != 0.0 {
            cons.push(Cons::PMin(g));
            cons.push(Cons::PMax(g));
        }
        cons.push(Cons::QMin(g));
        cons.push(Cons::QMax(g));
        cons.push(Cons::Mva(g));
        cons.push(Cons::LeadPf(g));
        cons.push(Cons::Field(g));
    }
    for sidx in 0..ns {
        cons.push(Cons::ShuntLo(sidx));
        cons.push(Cons::ShuntHi(sidx));
    }
    for b in 0..n {
        cons.push(Cons::VMin(b));
        cons.push(Cons::VMax(b));
    }
    for b in 0..n {
        if b != ref_bus {
            cons.push(Cons::AngleLo(b));
            cons.push(Cons::AngleHi(b));
        }
    }

    let mut x0 = DVector::zeros(nx);
    for b in 0..n {
        if let Some(c) = col_th[b] {
            x0[c] = op_point.theta_rad[b] - op_point.theta_rad[ref_bus];
        }
        x0[off_v + b] = op_point.v_pu[b];
    }
    for (i, sh) in shunts.iter().enumerate() {
        x0[off_qs + i] = sh.q0;
    }

    Ok(OpfProblem {
        net,
        y: build_admittance(net),
        tan_phi,
        gens,
        shunts,
        p_fix,
        q_fix,
        ref_bus,
        n,
        col_th,
        col_vm,
        off_v,
        off_dq,
        off_qs,
        idx_df,
        cons,
        x0,
        start_losses_mw: op_point.losses_mw,
    })
}

/// Injections and trigonometric state shared by one evaluation pass.
struct EvalState {
    vm: Vec<f64>,
    va: Vec<f64>,
    p_inj: Vec<f64>,
    q_inj: Vec<f64>,
}

impl<'a> OpfProblem<'a> {
    pub fn num_variables(&self) -> usize {
        self.idx_df + 1
    }

    pub fn num_equalities(&self) -> usize {
        2 * self.n
    }

    pub fn num_inequalities(&self) -> usize {
        self.cons.len()
    }

    pub fn initial_point(&self) -> DVector<f64> {
        self.x0.clone()
    }

    pub fn constraint_labels(&self) -> Vec<String> {
        self.cons.iter().map(|c| c.label()).collect()
    }

    fn theta_of(&self, x: &DVector<f64>, bus: usize) -> f64 {
        self.col_th[bus].map_or(0.0, |c| x[c])
    }

    fn gen_p(&self, x: &DVector<f64>, g: usize) -> f64 {
        self.gens[g].p0 + self.gens[g].kp * x[self.idx_df]
    }

    fn gen_q(&self, x: &DVector<f64>, g: usize) -> f64 {
        self.gens[g].q0 + x[self.off_dq + g]
    }

    fn eval_state(&self, x: &DVector<f64>) -> EvalState {
        let n = self.n;
        let vm: Vec<f64> = (0..n).map(|b| x[self.off_v + b]).collect();
        let va: Vec<f64> = (0..n).map(|b| self.theta_of(x, b)).collect();
        let mut p_inj = vec![0.0; n];
        let mut q_inj = vec![0.0; n];
        ac::injections(&self.y, &vm, &va, &mut p_inj, &mut q_inj);
        EvalState {
            vm,
            va,
            p_inj,
            q_inj,
        }
    }

    /// Total series losses in per unit; the objective. Production code
    /// derives the gradient directly, so only tests evaluate the scalar.
    #[cfg_attr(not(test), allow(dead_code))]
    fn objective(&self, st: &EvalState) -> f64 {
        st.p_inj.iter().sum()
    }

    /// Power-balance residuals: P rows then Q rows, per unit.
    fn equalities(&self, x: &DVector<f64>, st: &EvalState) -> DVector<f64> {
        let n = self.n;
        let mut h = DVector::zeros(2 * n);
        for b in 0..n {
            h[b] = st.p_inj[b] - self.p_fix[b];
            h[n + b] = st.q_inj[b] - self.q_fix[b];
        }
        for (g, gen) in self.gens.iter().enumerate() {
            h[gen.bus] -= self.gen_p(x, g);
            h[self.n + gen.bus] -= self.gen_q(x, g);
        }
        for (i, sh) in self.shunts.iter().enumerate() {
            h[n + sh.bus] -= x[self.off_qs + i];
        }
        h
    }

    /// Jacobian of the equalities over the full variable vector.
    fn eq_jacobian(&self, st: &EvalState) -> DMatrix<f64> {
        let n = self.n;
        let nx = self.num_variables();
        let rows: Vec<usize> = (0..n).collect();
        let layout = ac::JacobianLayout {
            rows_p: &rows,
            rows_q: &rows,
            col_th: &self.col_th,
            col_vm: &self.col_vm,
        };
        let mut jac = DMatrix::zeros(2 * n, nx);
        ac::fill_jacobian(&self.y, &st.vm, &st.va, &st.p_inj, &st.q_inj, &layout, &mut jac);
        for (g, gen) in self.gens.iter().enumerate() {
            jac[(gen.bus, self.idx_df)] -= gen.kp;
            jac[(n + gen.bus, self.off_dq + g)] = -1.0;
        }
        for (i, sh) in self.shunts.iter().enumerate() {
            jac[(n + sh.bus, self.off_qs + i)] = -1.0;
        }
        jac
    }

    /// Objective gradient: column sums of the injection Jacobian's P rows.
    fn objective_gradient(&self, eq_jac: &DMatrix<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(self.num_variables());
        for c in 0..self.off_dq {
            let mut acc = 0.0;
            for r in 0..self.n {
                acc += eq_jac[(r, c)];
            }
            grad[c] = acc;
        }
        grad
    }

    fn cons_value(&self, x: &DVector<f64>, c: Cons) -> f64 {
        match c {
            Cons::PMin(g) => self.gens[g].p_min - self.gen_p(x, g),
            Cons::PMax(g) => self.gen_p(x, g) - self.gens[g].p_max,
            Cons::QMin(g) => self.gens[g].q_min - self.gen_q(x, g),
            Cons::QMax(g) => self.gen_q(x, g) - self.gens[g].q_max,
            Cons::Mva(g) => {
                let p = self.gen_p(x, g);
                let q = self.gen_q(x, g);
                p * p + q * q - self.gens[g].s_max * self.gens[g].s_max
            }
            Cons::LeadPf(g) => -self.gen_p(x, g) * self.tan_phi - self.gen_q(x, g),
            Cons::Field(g) => {
                let gen = &self.gens[g];
                let v = x[self.off_v + gen.bus];
                let p = self.gen_p(x, g);
                let r = self.gen_q(x, g) + v * v / gen.x_d;
                let lim = v * gen.e_q / gen.x_d;
                p * p + r * r - lim * lim
            }
            Cons::ShuntLo(i) => {
                let sh = &self.shunts[i];
                let v = x[self.off_v + sh.bus];
                sh.lo_coeff * v * v - x[self.off_qs + i]
            }
            Cons::ShuntHi(i) => {
                let sh = &self.shunts[i];
                let v = x[self.off_v + sh.bus];
                x[self.off_qs + i] - sh.hi_coeff * v * v
            }
            Cons::VMin(b) => self.net.buses[b].v_min_pu - x[self.off_v + b],
            Cons::VMax(b) => x[self.off_v + b] - self.net.buses[b].v_max_pu,
            Cons::AngleLo(b) => -FRAC_PI_2 - self.theta_of(x, b),
            Cons::AngleHi(b) => self.theta_of(x, b) - FRAC_PI_2,
        }
    }

    fn inequalities(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.cons.len(),
            self.cons.iter().map(|&c| self.cons_value(x, c)),
        )
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.cons.len(), self.num_variables());
        for (r, &c) in self.cons.iter().enumerate() {
            match c {
                Cons::PMin(g) => jac[(r, self.idx_df)] = -self.gens[g].kp,
                Cons::PMax(g) => jac[(r, self.idx_df)] = self.gens[g].kp,
                Cons::QMin(g) => jac[(r, self.off_dq + g)] = -1.0,
                Cons::QMax(g) => jac[(r, self.off_dq + g)] = 1.0,
                Cons::Mva(g) => {
                    jac[(r, self.idx_df)] = 2.0 * self.gen_p(x, g) * self.gens[g].kp;
                    jac[(r, self.off_dq + g)] = 2.0 * self.gen_q(x, g);
                }
                Cons::LeadPf(g) => {
                    jac[(r, self.idx_df)] = -self.gens[g].kp * self.tan_phi;
                    jac[(r, self.off_dq + g)] = -1.0;
                }
                Cons::Field(g) => {
                    let gen = &self.gens[g];
                    let v = x[self.off_v + gen.bus];
                    let rr = self.gen_q(x, g) + v * v / gen.x_d;
                    jac[(r, self.idx_df)] = 2.0 * self.gen_p(x, g) * gen.kp;
                    jac[(r, self.off_dq + g)] = 2.0 * rr;
                    jac[(r, self.off_v + gen.bus)] =
                        4.0 * rr * v / gen.x_d - 2.0 * v * (gen.e_q / gen.x_d).powi(2);
                }
                Cons::ShuntLo(i) => {
                    let sh = &self.shunts[i];
                    jac[(r, self.off_v + sh.bus)] = 2.0 * sh.lo_coeff * x[self.off_v + sh.bus];
                    jac[(r, self.off_qs + i)] = -1.0;
                }
                Cons::ShuntHi(i) => {
                    let sh = &self.shunts[i];
                    jac[(r, self.off_v + sh.bus)] = -2.0 * sh.hi_coeff * x[self.off_v + sh.bus];
                    jac[(r, self.off_qs + i)] = 1.0;
                }
                Cons::VMin(b) => jac[(r, self.off_v + b)] = -1.0,
                Cons::VMax(b) => jac[(r, self.off_v + b)] = 1.0,
                Cons::AngleLo(b) => {
                    if let Some(ct) = self.col_th[b] {
                        jac[(r, ct)] = -1.0;
                    }
                }
                Cons::AngleHi(b) => {
                    if let Some(ct) = self.col_th[b] {
                        jac[(r, ct)] = 1.0;
                    }
                }
            }
        }
        jac
    }

    /// Exact Hessian of `f + lambda . h + zeta . g` over the variables.
    fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        st: &EvalState,
        lambda: &DVector<f64>,
        zeta: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n = self.n;
        let nx = self.num_variables();
        let mut h = DMatrix::zeros(nx, nx);
        // Objective weight 1 on every P injection plus the balance
        // multipliers; the droop and control terms of the equalities are
        // linear and add no curvature.
        let wp: Vec<f64> = (0..n).map(|b| 1.0 + lambda[b]).collect();
        let wq: Vec<f64> = (0..n).map(|b| lambda[n + b]).collect();
        ac::add_weighted_injection_hessian(
            &self.y,
            &st.vm,
            &st.va,
            &wp,
            &wq,
            &self.col_th,
            &self.col_vm,
            &mut h,
        );
        let add = |h: &mut DMatrix<f64>, r: usize, c: usize, v: f64| {
            h[(r, c)] += v;
            if r != c {
                h[(c, r)] += v;
            }
        };
        for (r, &cns) in self.cons.iter().enumerate() {
            let z = zeta[r];
            if z == 0.0 {
                continue;
            }
            match cns {
                Cons::Mva(g) => {
                    let kp = self.gens[g].kp;
                    add(&mut h, self.idx_df, self.idx_df, z * 2.0 * kp * kp);
                    add(&mut h, self.off_dq + g, self.off_dq + g, z * 2.0);
                }
                Cons::Field(g) => {
                    let gen = &self.gens[g];
                    let vcol = self.off_v + gen.bus;
                    let v = x[vcol];
                    let rr = self.gen_q(x, g) + v * v / gen.x_d;
                    add(&mut h, self.idx_df, self.idx_df, z * 2.0 * gen.kp * gen.kp);
                    add(&mut h, self.off_dq + g, self.off_dq + g, z * 2.0);
                    add(&mut h, self.off_dq + g, vcol, z * 4.0 * v / gen.x_d);
                    let d2v = 8.0 * v * v / (gen.x_d * gen.x_d) + 4.0 * rr / gen.x_d
                        - 2.0 * (gen.e_q / gen.x_d).powi(2);
                    add(&mut h, vcol, vcol, z * d2v);
                }
                Cons::ShuntLo(i) => {
                    let sh = &self.shunts[i];
                    add(&mut h, self.off_v + sh.bus, self.off_v + sh.bus, z * 2.0 * sh.lo_coeff);
                }
                Cons::ShuntHi(i) => {
                    let sh = &self.shunts[i];
                    add(
                        &mut h,
                        self.off_v + sh.bus,
                        self.off_v + sh.bus,
                        z * (-2.0) * sh.hi_coeff,
                    );
                }
                _ => {}
            }
        }
        h
    }

    /// Rebuilds the variable vector from a candidate solution's fields.
    fn pack_candidate(&self, cand: &OpfSolution) -> DVector<f64> {
        assert_eq!(cand.v_setpoints.len(), self.n, "candidate bus count");
        assert_eq!(cand.theta_rad.len(), self.n, "candidate angle count");
        assert_eq!(cand.gen_q_mvar.len(), self.gens.len(), "candidate generator count");
        assert_eq!(cand.shunt_q_mvar.len(), self.shunts.len(), "candidate shunt count");
        let s = self.net.s_base_mva;
        let mut x = DVector::zeros(self.num_variables());
        for b in 0..self.n {
            if let Some(c) = self.col_th[b] {
                x[c] = cand.theta_rad[b] - cand.theta_rad[self.ref_bus];
            }
            x[self.off_v + b] = cand.v_setpoints[b];
        }
        for g in 0..self.gens.len() {
            x[self.off_dq + g] = cand.gen_q_mvar[g] / s - self.gens[g].q0;
        }
        for i in 0..self.shunts.len() {
            x[self.off_qs + i] = cand.shunt_q_mvar[i] / s;
        }
        x[self.idx_df] = cand.delta_f_hz;
        x
    }
}

/// Re-derives stationarity, primal feasibility, and complementarity norms
/// from the problem data at a candidate point. Multiplier vectors may be
/// empty (treated as zero, as for hand-built candidates).
pub fn kkt_residuals(prob: &OpfProblem, cand: &OpfSolution) -> KktResiduals {
    let x = prob.pack_candidate(cand);
    let st = prob.eval_state(&x);
    let me = prob.num_equalities();
    let mi = prob.num_inequalities();
    let lambda = if cand.lambda.is_empty() {
        DVector::zeros(me)
    } else {
        assert_eq!(cand.lambda.len(), me, "equality multiplier count");
        DVector::from_column_slice(&cand.lambda)
    };
    let zeta = if cand.zeta.is_empty() {
        DVector::zeros(mi)
    } else {
        assert_eq!(cand.zeta.len(), mi, "inequality multiplier count");
        DVector::from_column_slice(&cand.zeta)
    };
    let eq_jac = prob.eq_jacobian(&st);
    let grad = prob.objective_gradient(&eq_jac)
        + eq_jac.transpose() * &lambda
        + prob.ineq_jacobian(&x).transpose() * &zeta;
    let h = prob.equalities(&x, &st);
    let g = prob.inequalities(&x);
    let mut primal = h.amax();
    let mut comp = 0.0f64;
    for i in 0..mi {
        primal = primal.max(g[i].max(0.0));
        comp = comp.max((zeta[i] * g[i]).abs());
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal_feasibility: primal,
        complementarity: comp,
    }
}

/// Re-evaluates every constraint (and the power balances) from raw data at
/// a candidate, returning `(label, violation)` pairs in a deterministic
/// order. Violations are per-unit amounts, zero when satisfied.
pub fn audit_constraints(prob: &OpfProblem, cand: &OpfSolution) -> Vec<(String, f64)> {
    let x = prob.pack_candidate(cand);
    let st = prob.eval_state(&x);
    let h = prob.equalities(&x, &st);
    let mut out: Vec<(String, f64)> = prob
        .cons
        .iter()
        .map(|&c| (c.label(), prob.cons_value(&x, c).max(0.0)))
        .collect();
    for b in 0..prob.n {
        out.push((format!("bus{b}.p_balance"), h[b].abs()));
        out.push((format!("bus{b}.q_balance"), h[prob.n + b].abs()));
    }
    out
}

/// Worst relative deviation between the analytic first derivatives and
/// central finite differences at `x_full`, taken over the objective
/// gradient and both constraint Jacobians. `x_full` must hold
/// `num_variables` entries (the layout of [`OpfProblem::initial_point`]);
/// `step` is the half-width of the central difference. Denominators are
/// floored at 1.0 so near-zero derivatives compare absolutely.
pub fn derivative_deviation(prob: &OpfProblem, x_full: &[f64], step: f64) -> f64 {
    assert_eq!(x_full.len(), prob.num_variables(), "variable count");
    assert!(step > 0.0, "step must be positive");
    let x = DVector::from_column_slice(x_full);
    let st = prob.eval_state(&x);
    let eq_jac = prob.eq_jacobian(&st);
    let grad = prob.objective_gradient(&eq_jac);
    let ineq_jac = prob.ineq_jacobian(&x);
    let me = prob.num_equalities();
    let mi = prob.num_inequalities();
    let mut worst = 0.0f64;
    for var in 0..x.len() {
        let mut xp = x.clone();
        xp[var] += step;
        let mut xm = x.clone();
        xm[var] -= step;
        let stp = prob.eval_state(&xp);
        let stm = prob.eval_state(&xm);
        let fd_obj = (prob.objective(&stp) - prob.objective(&stm)) / (2.0 * step);
        worst = worst.max((grad[var] - fd_obj).abs() / fd_obj.abs().max(1.0));
        let hp = prob.equalities(&xp, &stp);
        let hm = prob.equalities(&xm, &stm);
        for r in 0..me {
            let fd = (hp[r] - hm[r]) / (2.0 * step);
            worst = worst.max((eq_jac[(r, var)] - fd).abs() / fd.abs().max(1.0));
        }
        let gp = prob.inequalities(&xp);
        let gm = prob.inequalities(&xm);
        for r in 0..mi {
            let fd = (gp[r] - gm[r]) / (2.0 * step);
            worst = worst.max((ineq_jac[(r, var)] - fd).abs() / fd.abs().max(1.0));
        }
    }
    worst
}

fn fraction_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-FRACTION_TO_BOUNDARY * v[i] / dv[i]);
        }
    }
    alpha
}

struct Residuals {
    r_d: DVector<f64>,
    r_e: DVector<f64>,
    r_i: DVector<f64>,
    r_c: DVector<f64>,
}

impl Residuals {
    fn merit(&self) -> f64 {
        self.r_d.norm_squared()
            + self.r_e.norm_squared()
            + self.r_i.norm_squared()
            + self.r_c.norm_squared()
    }
}

/// Minimizes losses from the problem's operating point. Returns the final
/// iterate with a status: `Optimal` means all KKT residuals are below
/// `config.tolerance`; hitting the iteration cap or detecting infeasibility
/// returns the best iterate with the corresponding status instead of an
/// error.
pub fn solve_opf(prob: &OpfProblem, config: &OpfConfig) -> Result<OpfSolution, OpfError> {
    if !(config.tolerance > 0.0) {
        return Err(OpfError::InvalidConfig(format!(
            "tolerance {} must be positive",
            config.tolerance
        )));
    }
    if config.max_iterations == 0 {
        return Err(OpfError::InvalidConfig("max_iterations must be at least 1".into()));
    }
    let tol = config.tolerance;
    let nx = prob.num_variables();
    let me = prob.num_equalities();
    let mi = prob.num_inequalities();

    let mut x = prob.x0.clone();
    let mut lambda = DVector::zeros(me);
    let mut mu = 1e-2;
    let mu_min = tol * 1e-2;
    let g0 = prob.inequalities(&x);
    let mut s = DVector::from_iterator(mi, (0..mi).map(|i| (-g0[i]).max(1e-4)));
    let mut z = DVector::from_iterator(mi, (0..mi).map(|i| mu / s[i]));
    let mut delta_w = 1e-8;
    let mut iterations = 0usize;
    let mut status = OpfStatus::MaxIterations;

    let evaluate = |x: &DVector<f64>,
                    s: &DVector<f64>,
                    lambda: &DVector<f64>,
                    z: &DVector<f64>,
                    mu: f64|
     -> (EvalState, DMatrix<f64>, DMatrix<f64>, DVector<f64>, Residuals) {
        let st = prob.eval_state(x);
        let eq_jac = prob.eq_jacobian(&st);
        let ineq_jac = prob.ineq_jacobian(x);
        let grad_f = prob.objective_gradient(&eq_jac);
        let r_d = &grad_f + eq_jac.transpose() * lambda + ineq_jac.transpose() * z;
        let r_e = prob.equalities(x, &st);
        let r_i = prob.inequalities(x) + s;
        let r_c = DVector::from_iterator(mi, (0..mi).map(|i| s[i] * z[i] - mu));
        (
            st,
            eq_jac,
            ineq_jac,
            grad_f,
            Residuals { r_d, r_e, r_i, r_c },
        )
    };

    loop {
        let (st, eq_jac, ineq_jac, _grad_f, res) = evaluate(&x, &s, &lambda, &z, mu);

        // Unperturbed optimality measures; `g` is implicit in r_i - s.
        let stat = res.r_d.amax();
        let pe = res.r_e.amax();
        let mut pviol = 0.0f64;
        let mut comp = 0.0f64;
        for i in 0..mi {
            pviol = pviol.max(res.r_i[i] - s[i]);
            comp = comp.max((s[i] * z[i]).abs());
        }
        if stat <= tol && pe <= tol && pviol <= tol && comp <= tol {
            status = OpfStatus::Optimal;
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
        if !res.merit().is_finite() || (s.min() < 1e-10 && z.amax() > 1e8) {
            status = OpfStatus::Infeasible;
            break;
        }

        // Shrink the barrier once the perturbed system is solved to within
        // an order of magnitude of mu. Requiring the residual to drop all
        // the way below mu deadlocks: stationarity bottoms out at a small
        // multiple of mu, since the multipliers themselves scale with it.
        let res_mu = stat.max(pe).max(pviol).max(res.r_c.amax());
        if res_mu <= 10.0 * mu && mu > mu_min {
            mu = (mu * BARRIER_REDUCTION).max(mu_min);
        }
        let r_c = DVector::from_iterator(mi, (0..mi).map(|i| s[i] * z[i] - mu));

        // Reduced symmetric system in (dx, dlambda).
        let mut step = None;
        let mut dw = delta_w;
        for _attempt in 0..6 {
            let mut m = prob.lagrangian_hessian(&x, &st, &lambda, &z);
            for i in 0..nx {
                m[(i, i)] += dw;
            }
            for r in 0..mi {
                let w = z[r] / s[r];
                for a in 0..nx {
                    let ja = ineq_jac[(r, a)];
                    if ja == 0.0 {
                        continue;
                    }
                    for b in a..nx {
                        let v = w * ja * ineq_jac[(r, b)];
                        if v != 0.0 {
                            m[(a, b)] += v;
                            if a != b {
                                m[(b, a)] += v;
                            }
                        }
                    }
                }
            }
            let dim = nx + me;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (nx, nx)).copy_from(&m);
            kkt.view_mut((0, nx), (nx, me)).copy_from(&eq_jac.transpose());
            kkt.view_mut((nx, 0), (me, nx)).copy_from(&eq_jac);
            for i in 0..me {
                kkt[(nx + i, nx + i)] = -1e-8;
            }
            let mut rhs = DVector::zeros(dim);
            let correction = DVector::from_iterator(
                mi,
                (0..mi).map(|i| (z[i] * res.r_i[i] - r_c[i]) / s[i]),
            );
            let rhs_top = -&res.r_d - ineq_jac.transpose() * correction;
            rhs.rows_mut(0, nx).copy_from(&rhs_top);
            rhs.rows_mut(nx, me).copy_from(&(-&res.r_e));
            match kkt.lu().solve(&rhs) {
                Some(sol) if sol.iter().all(|v| v.is_finite()) => {
                    step = Some(sol);
                    break;
                }
                _ => dw = (dw * 100.0).max(1e-6),
            }
        }
        let Some(sol) = step else {
            status = OpfStatus::Infeasible;
            break;
        };
        let dx = sol.rows(0, nx).into_owned();
        let dlambda = sol.rows(nx, me).into_owned();
        let ds = DVector::from_iterator(mi, (0..mi).map(|i| -(res.r_i[i] + ineq_jac.row(i).transpose().dot(&dx))));
        let dz = DVector::from_iterator(mi, (0..mi).map(|i| -(r_c[i] + z[i] * ds[i]) / s[i]));

        // One common step length for every block: scaling primal and dual
        // pieces differently would bend the Newton direction and lose the
        // descent property of the squared-residual merit.
        let alpha = fraction_to_boundary(&s, &ds).min(fraction_to_boundary(&z, &dz));
        // Reference merit at the barrier value the candidates are judged
        // with, so a mu shrink this iteration cannot poison the comparison.
        let merit0 = Residuals {
            r_d: res.r_d.clone(),
            r_e: res.r_e.clone(),
            r_i: res.r_i.clone(),
            r_c: r_c.clone(),
        }
        .merit();
        let mut beta = 1.0;
        let mut accepted = false;
        while beta >= 1e-6 {
            let xt = &x + &dx * (beta * alpha);
            let st_ = &s + &ds * (beta * alpha);
            let lt = &lambda + &dlambda * (beta * alpha);
            let zt = &z + &dz * (beta * alpha);
            let (_, _, _, _, rt) = evaluate(&xt, &st_, &lt, &zt, mu);
            let mt = rt.merit();
            if mt.is_finite() && mt <= merit0 * (1.0 - 1e-4 * beta * alpha) {
                x = xt;
                s = st_;
                lambda = lt;
                z = zt;
                accepted = true;
                break;
            }
            beta *= 0.5;
        }
        if accepted && beta == 1.0 {
            delta_w = (delta_w * 0.1).max(1e-8);
        } else {
            delta_w = (delta_w * 10.0).min(1e-2);
            if !accepted {
                // Take the smallest damped step to avoid stalling in place.
                let b = 1e-6 * alpha;
                x += &dx * b;
                s += &ds * b;
                lambda += &dlambda * b;
                z += &dz * b;
            }
        }
        iterations += 1;
    }

    let s_base = prob.net.s_base_mva;
    let st = prob.eval_state(&x);
    let mut pilot_refs: Vec<(usize, f64)> = prob
        .net
        .areas
        .iter()
        .map(|a| (a.id, st.vm[a.pilot_bus]))
        .collect();
    pilot_refs.sort_by_key(|&(id, _)| id);
    let mut solution = OpfSolution {
        objective_mw: network_losses_mw(prob.net, &st.vm, &st.va),
        start_losses_mw: prob.start_losses_mw,
        v_setpoints: st.vm.clone(),
        theta_rad: st.va.clone(),
        pilot_refs,
        gen_p_mw: (0..prob.gens.len()).map(|g| prob.gen_p(&x, g) * s_base).collect(),
        gen_q_mvar: (0..prob.gens.len()).map(|g| prob.gen_q(&x, g) * s_base).collect(),
        shunt_q_mvar: (0..prob.shunts.len()).map(|i| x[prob.off_qs + i] * s_base).collect(),
        delta_f_hz: x[prob.idx_df],
        status,
        kkt: KktResiduals {
            stationarity: f64::NAN,
            primal_feasibility: f64::NAN,
            complementarity: f64::NAN,
        },
        iterations,
        lambda: lambda.iter().copied().collect(),
        zeta: z.iter().copied().collect(),
        slack: s.iter().copied().collect(),
    };
    solution.kkt = kkt_residuals(prob, &solution);
    Ok(solution)
}

/// Exhaustive grid-search reference optimum for small cases.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Winning voltage setpoint per enumerated generator bus, in the order
    /// of first appearance in the generator list.
    pub gen_v_set_pu: Vec<f64>,
    pub shunt_q_mvar: Vec<f64>,
    pub losses_mw: f64,
    pub delta_f_hz: f64,
    pub candidates: u64,
    pub feasible: u64,
    /// Largest loss difference between the winner and its feasible grid
    /// neighbors; the discretization-induced uncertainty of the optimum.
    pub cell_variation_mw: f64,
}

enum OracleDim {
    /// One voltage setpoint shared by all generators on a bus.
    GenV { gens: Vec<usize>, lo: f64, hi: f64 },
    ShuntQ { shunt: usize, lo: f64, hi: f64 },
}

impl OracleDim {
    fn steps(&self, res_pu: f64, s_base: f64) -> usize {
        let (lo, hi, step) = match *self {
            OracleDim::GenV { lo, hi, .. } => (lo, hi, res_pu),
            OracleDim::ShuntQ { lo, hi, .. } => (lo, hi, res_pu * s_base),
        };
        ((hi - lo) / step + 1e-9).floor() as usize + 1
    }

    fn value(&self, k: usize, res_pu: f64, s_base: f64) -> f64 {
        match *self {
            OracleDim::GenV { lo, .. } => lo + k as f64 * res_pu,
            OracleDim::ShuntQ { lo, .. } => lo + k as f64 * res_pu * s_base,
        }
    }

    fn apply(&self, d: &mut Dispatch, k: usize, res_pu: f64, s_base: f64) {
        let v = self.value(k, res_pu, s_base);
        match self {
            OracleDim::GenV { gens, .. } => {
                for &g in gens {
                    d.gen_v_ref_pu[g] = v;
                }
            }
            OracleDim::ShuntQ { shunt, .. } => d.shunt_q_mvar[*shunt] = v,
        }
    }
}

/// Feasibility audit of a solved candidate against the generator and shunt
/// constraint set, using the same machine-parameter defaults as problem
/// construction. `delta_f` is recovered from the slack units' droop.
fn oracle_feasible(
    net: &Network,
    sol: &PowerFlowSolution,
    shunt_cmd_mvar: &[f64],
    tan_phi: f64,
    x_d_default: f64,
    e_q_default: f64,
) -> Option<f64> {
    let s = net.s_base_mva;
    let tol = AUDIT_TOL;
    for b in &net.buses {
        if sol.v_pu[b.id] < b.v_min_pu - tol || sol.v_pu[b.id] > b.v_max_pu + tol {
            return None;
        }
    }
    let slack = net.slack_bus();
    let mut kp_slack = 0.0;
    let mut dp_slack = 0.0;
    for (g, gen) in net.generators.iter().enumerate() {
        if gen.bus == slack {
            kp_slack += gen.k_p_mw_per_hz;
            dp_slack += sol.gen_p_mw[g] - gen.p0_mw;
        }
    }
    let delta_f = if kp_slack != 0.0 {
        dp_slack / kp_slack
    } else if dp_slack.abs() <= tol * s {
        0.0
    } else {
        return None;
    };
    for (g, gen) in net.generators.iter().enumerate() {
        let p = sol.gen_p_mw[g] / s;
        let q = sol.gen_q_mvar[g] / s;
        // Droop consistency: the realized output must equal the droop law.
        let droop_p = (gen.p0_mw + gen.k_p_mw_per_hz * delta_f) / s;
        if (p - droop_p).abs() > tol {
            return None;
        }
        if p < gen.p_min_mw / s - tol || p > gen.p_max_mw / s + tol {
            return None;
        }
        if q < gen.q_min_mvar / s - tol || q > gen.q_max_mvar / s + tol {
            return None;
        }
        let s_max = gen.s_max_mva / s;
        if p * p + q * q > s_max * s_max + tol {
            return None;
        }
        if -p * tan_phi - q > tol {
            return None;
        }
        let v = sol.v_pu[gen.bus];
        let x_d = gen.x_d_pu.unwrap_or(x_d_default);
        let e_q = gen.e_q_max_pu.unwrap_or(e_q_default);
        let r = q + v * v / x_d;
        let lim = v * e_q / x_d;
        if p * p + r * r > lim * lim + tol {
            return None;
        }
    }
    for (i, sh) in net.shunts.iter().enumerate() {
        let b = &net.buses[sh.bus];
        let v = sol.v_pu[sh.bus];
        let q = shunt_cmd_mvar[i] / s;
        let lo = sh.q_min_mvar / s / (b.v_min_pu * b.v_min_pu) * v * v;
        let hi = sh.q_max_mvar / s / (b.v_max_pu * b.v_max_pu) * v * v;
        if q < lo - tol || q > hi + tol {
            return None;
        }
    }
    Some(delta_f)
}

struct OracleBest {
    idx: Vec<usize>,
    losses_mw: f64,
    delta_f_hz: f64,
}

/// Enumerates every combination of generator-bus voltage setpoints (over
/// the bus voltage bounds) and shunt commands (over the device ranges) at
/// the given resolution, solves a power flow per candidate, discards
/// infeasible ones, and returns the loss-minimal candidate. Exact loss ties
/// break toward the lexicographically lowest setpoint vector.
pub fn brute_force_oracle(net: &Network, grid_resolution: f64) -> Result<OracleResult, OpfError> {
    if !(grid_resolution > 0.0) {
        return Err(OpfError::InvalidConfig(format!(
            "grid resolution {grid_resolution} must be positive"
        )));
    }
    let s_base = net.s_base_mva;
    let defaults = OpfConfig::default();
    let x_d_default = defaults.default_x_d_pu.unwrap();
    let e_q_default = defaults.default_e_q_max_pu.unwrap();
    let phi = defaults.phi_lead_pf;
    let tan_phi = (1.0 - phi * phi).sqrt() / phi;

    let mut dims: Vec<OracleDim> = Vec::new();
    let mut seen_bus: Vec<usize> = Vec::new();
    for (g, gen) in net.generators.iter().enumerate() {
        if let Some(pos) = seen_bus.iter().position(|&b| b == gen.bus) {
            if let OracleDim::GenV { gens, .. } = &mut dims[pos] {
                gens.push(g);
            }
        } else {
            seen_bus.push(gen.bus);
            dims.push(OracleDim::GenV {
                gens: vec![g],
                lo: net.buses[gen.bus].v_min_pu,
                hi: net.buses[gen.bus].v_max_pu,
            });
        }
    }
    for (i, sh) in net.shunts.iter().enumerate() {
        dims.push(OracleDim::ShuntQ {
            shunt: i,
            lo: sh.q_min_mvar,
            hi: sh.q_max_mvar,
        });
    }
    if dims.len() > 4 {
        return Err(OpfError::TooManyFreeSetpoints { free: dims.len() });
    }
    let sizes: Vec<usize> = dims.iter().map(|d| d.steps(grid_resolution, s_base)).collect();
    let total: u128 = sizes.iter().map(|&s| s as u128).product();
    if total > ORACLE_CAP as u128 {
        return Err(OpfError::ResolutionTooFine {
            resolution: grid_resolution,
            candidates: total,
            cap: ORACLE_CAP,
        });
    }

    let base = Dispatch::nominal(net);
    let opts = PowerFlowOptions::default();
    let solver = PowerFlowSolver::new(net);

    // Candidate evaluation: power flow plus feasibility audit.
    let eval = |idx: &[usize], warm: Option<&PowerFlowSolution>| -> (Option<(f64, f64)>, Option<PowerFlowSolution>) {
        let mut d = base.clone();
        for (dim, &k) in dims.iter().zip(idx) {
            dim.apply(&mut d, k, grid_resolution, s_base);
        }
        match solver.solve(&d, &opts, warm) {
            Ok(sol) if sol.converged => {
                let verdict = oracle_feasible(net, &sol, &d.shunt_q_mvar, tan_phi, x_d_default, e_q_default)
                    .map(|df| (sol.losses_mw, df));
                (verdict, Some(sol))
            }
            _ => (None, None),
        }
    };

    // Serial sweep of all dimensions past the first; the warm-start chain
    // stays inside one first-dimension slice, so results are independent of
    // how rayon schedules the slices.
    let sweep = |i0: usize| -> (Option<OracleBest>, u64) {
        let mut idx = vec![0usize; dims.len()];
        idx[0] = i0;
        let mut warm: Option<PowerFlowSolution> = None;
        let mut feasible = 0u64;
        let mut best: Option<OracleBest> = None;
        loop {
            let (verdict, sol) = eval(&idx, warm.as_ref());
            if let Some(s) = sol {
                warm = Some(s);
            }
            if let Some((losses, df)) = verdict {
                feasible += 1;
                let better = match &best {
                    None => true,
                    Some(b) => losses < b.losses_mw || (losses == b.losses_mw && idx < b.idx),
                };
                if better {
                    best = Some(OracleBest {
                        idx: idx.clone(),
                        losses_mw: losses,
                        delta_f_hz: df,
                    });
                }
            }
            // Odometer over dims 1.. in lexicographic order.
            let mut pos = dims.len();
            loop {
                if pos == 1 {
                    return (best, feasible);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < sizes[pos] {
                    break;
                }
                idx[pos] = 0;
            }
        }
    };

    let (best, feasible) = (0..sizes[0])
        .into_par_iter()
        .map(sweep)
        .reduce(
            || (None, 0u64),
            |a, b| {
                let best = match (a.0, b.0) {
                    (None, x) | (x, None) => x,
                    (Some(x), Some(y)) => {
                        if y.losses_mw < x.losses_mw
                            || (y.losses_mw == x.losses_mw && y.idx < x.idx)
                        {
                            Some(y)
                        } else {
                            Some(x)
                        }
                    }
                };
                (best, a.1 + b.1)
            },
        );
    let best = best.ok_or(OpfError::NoFeasibleCandidate)?;

    // Measure the loss variation across one grid cell at the winner.
    let (_, best_sol) = eval(&best.idx, None);
    let mut cell_variation: f64 = 0.0;
    for d in 0..dims.len() {
        for delta in [-1isize, 1] {
            let k = best.idx[d] as isize + delta;
            if k < 0 || k as usize >= sizes[d] {
                continue;
            }
            let mut idx = best.idx.clone();
            idx[d] = k as usize;
            if let (Some((losses, _)), _) = eval(&idx, best_sol.as_ref()) {
                cell_variation = cell_variation.max((losses - best.losses_mw).abs());
            }
        }
    }

    Ok(OracleResult {
        gen_v_set_pu: dims
            .iter()
            .zip(&best.idx)
            .filter(|(d, _)| matches!(d, OracleDim::GenV { .. }))
            .map(|(d, &k)| d.value(k, grid_resolution, s_base))
            .collect(),
        shunt_q_mvar: dims
            .iter()
            .zip(&best.idx)
            .filter(|(d, _)| matches!(d, OracleDim::ShuntQ { .. }))
            .map(|(d, &k)| d.value(k, grid_resolution, s_base))
            .collect(),
        losses_mw: best.losses_mw,
        delta_f_hz: best.delta_f_hz,
        candidates: total as u64,
        feasible,
        cell_variation_mw: cell_variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_case;
    use crate::powerflow::solve_power_flow;

    /// Slack + PV machine + loaded bus with one compensator, meshed.
    fn fixture_json(with_xd_on_g1: bool) -> String {
        let xd = if with_xd_on_g1 {
            r#""x_d_pu":1.6,"e_q_max_pu":2.2,"#
        } else {
            ""
        };
        format!(
            r#"{{
            "s_base_mva": 100.0, "f_base_hz": 50.0,
            "buses": [
                {{"id":0,"name":"M1","base_kv":132.0,"kind":"slack","v_min_pu":0.97,"v_max_pu":1.07,"area":1}},
                {{"id":1,"name":"M2","base_kv":132.0,"kind":"pv","v_min_pu":0.97,"v_max_pu":1.07,"area":1}},
                {{"id":2,"name":"L1","base_kv":132.0,"kind":"pq","v_min_pu":0.90,"v_max_pu":1.10,"area":1}}
            ],
            "branches": [
                {{"from_bus":0,"to_bus":1,"r_pu":0.02,"x_pu":0.08,"b_shunt_pu":0.02,"rating_mva":120.0}},
                {{"from_bus":1,"to_bus":2,"r_pu":0.05,"x_pu":0.15,"b_shunt_pu":0.025,"rating_mva":100.0}},
                {{"from_bus":0,"to_bus":2,"r_pu":0.06,"x_pu":0.18,"b_shunt_pu":0.03,"rating_mva":100.0}}
            ],
            "generators": [
                {{"bus":0,"p0_mw":30.0,"p_min_mw":0.0,"p_max_mw":120.0,"q_min_mvar":-30.0,
                 "q_max_mvar":40.0,"s_max_mva":110.0,"k_p_mw_per_hz":-40.0,"x_d_pu":1.2,
                 "e_q_max_pu":2.3,"alpha":0.0,"in_svr":false,"v_set_pu":1.02}},
                {{"bus":1,"p0_mw":32.0,"p_min_mw":0.0,"p_max_mw":55.0,"q_min_mvar":-14.0,
                 "q_max_mvar":30.0,"s_max_mva":62.0,"k_p_mw_per_hz":0.0,{xd}"alpha":0.0,
                 "in_svr":false,"v_set_pu":1.02}}
            ],
            "loads": [{{"bus":2,"p_mw":60.0,"q_mvar":20.0,"profile_key":"load"}}],
            "wind_parks": [],
            "shunts": [{{"bus":2,"kind":"svc","q_min_mvar":-10.0,"q_max_mvar":10.0,"q_set_mvar":0.0}}],
            "areas": []
        }}"#
        )
    }

    fn fixture() -> (crate::network::Network, PowerFlowSolution, Dispatch) {
        let net = parse_case(&fixture_json(true)).unwrap();
        let d = Dispatch::nominal(&net);
        let sol = solve_power_flow(&net, &d, &PowerFlowOptions::default()).unwrap();
        assert!(sol.converged);
        (net, sol, d)
    }

    #[test]
    fn leading_pf_bound_matches_hand_arithmetic() {
        let (net, sol, d) = fixture();
        let prob = build_opf(&net, &sol, &d, &OpfConfig::default()).unwrap();
        // Hand oracle: sqrt(1 - 0.86^2)/0.86 = sqrt(0.2604)/0.86, so a
        // 10 MW machine may absorb at most 5.9336515 MVar.
        let mut x = prob.x0.clone();
        // Pick the frequency deviation that puts the droop unit at exactly
        // 10 MW (its start point is the solved slack absorption).
        x[prob.idx_df] = (0.10 - prob.gens[0].p0) / prob.gens[0].kp;
        assert!((prob.gen_p(&x, 0) - 0.10).abs() < 1e-12);
        let boundary_mvar = -5.933_651_5;
        x[prob.off_dq] = boundary_mvar / 100.0 - prob.gens[0].q0;
        let row = prob
            .cons
            .iter()
            .position(|&c| c == Cons::LeadPf(0))
            .unwrap();
        let c = prob.cons_value(&x, prob.cons[row]);
        assert!(c.abs() < 1e-8, "boundary residual {c}");
        x[prob.off_dq] = -5.95 / 100.0 - prob.gens[0].q0;
        assert!(prob.cons_value(&x, prob.cons[row]) > 0.0, "beyond the floor must violate");
        x[prob.off_dq] = -5.90 / 100.0 - prob.gens[0].q0;
        assert!(prob.cons_value(&x, prob.cons[row]) < 0.0, "inside the floor must hold");
    }

    #[test]
    fn shunt_bounds_scale_with_voltage_squared() {
        let (net, sol, d) = fixture();
        let prob = build_opf(&net, &sol, &d, &OpfConfig::default()).unwrap();
        let hi = prob
            .cons
            .iter()
            .position(|&c| c == Cons::ShuntHi(0))
            .unwrap();
        let mut x = prob.x0.clone();
        // At the voltage ceiling the rated 10 MVar is available exactly.
        x[prob.off_v + 2] = 1.1;
        x[prob.off_qs] = 10.0 / 100.0;
        assert!(prob.cons_value(&x, prob.cons[hi]).abs() < 1e-9);
        // Hand oracle at 0.95 pu: 10/1.21 * 0.9025 = 7.4586777 MVar.
        x[prob.off_v + 2] = 0.95;
        x[prob.off_qs] = 7.458_677_7 / 100.0;
        assert!(prob.cons_value(&x, prob.cons[hi]).abs() < 1e-8);
        x[prob.off_qs] = 7.47 / 100.0;
        assert!(prob.cons_value(&x, prob.cons[hi]) > 0.0);
    }

    #[test]
    fn operating_point_satisfies_the_equalities() {
        let (net, sol, d) = fixture();
        let prob = build_opf(&net, &sol, &d, &OpfConfig::default()).unwrap();
        let st = prob.eval_state(&prob.x0);
        let h = prob.equalities(&prob.x0, &st);
        assert!(h.amax() < 1e-7, "start residual {}", h.amax());
    }

    #[test]
    fn missing_machine_parameters_name_the_generator() {
        let net = parse_case(&fixture_json(false)).unwrap();
        let d = Dispatch::nominal(&net);
        let sol = solve_power_flow(&net, &d, &PowerFlowOptions::default()).unwrap();
        let cfg = OpfConfig {
            default_x_d_pu: None,
            ..Default::default()
        };
        let err = build_opf(&net, &sol, &d, &cfg).unwrap_err();
        match err {
            OpfError::MissingMachineParameter { gen, field } => {
                assert_eq!(gen, 1);
                assert_eq!(field, "x_d_pu");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(build_opf(&net, &sol, &d, &OpfConfig::default()).is_ok());
    }

    /// Central-difference check of every analytic first derivative, plus
    /// the Lagrangian Hessian against differences of its gradient.
    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let (net, sol, d) = fixture();
        let prob = build_opf(&net, &sol, &d, &OpfConfig::default()).unwrap();
        let nx = prob.num_variables();
        let me = prob.num_equalities();
        let mi = prob.num_inequalities();
        let mut x = prob.x0.clone();
        for i in 0..nx {
            x[i] += 0.013 * ((i + 1) as f64).sin() * 1e-2;
        }
        let lambda = DVector::from_iterator(me, (0..me).map(|i| 0.3 * ((i + 2) as f64).sin()));
        let zeta = DVector::from_iterator(mi, (0..mi).map(|i| 0.1 + 0.05 * ((i + 1) as f64).cos()));

        let st = prob.eval_state(&x);
        let eq_jac = prob.eq_jacobian(&st);
        let grad_f = prob.objective_gradient(&eq_jac);
        let ineq_jac = prob.ineq_jacobian(&x);
        let hess = prob.lagrangian_hessian(&x, &st, &lambda, &zeta);

        let h = 1e-6;
        let eval_all = |x: &DVector<f64>| {
            let st = prob.eval_state(x);
            let f = prob.objective(&st);
            let eq = prob.equalities(x, &st);
            let g = prob.inequalities(x);
            (f, eq, g)
        };
        let lag_grad = |x: &DVector<f64>| -> DVector<f64> {
            let st = prob.eval_state(x);
            let ej = prob.eq_jacobian(&st);
            prob.objective_gradient(&ej) + ej.transpose() * &lambda
                + prob.ineq_jacobian(x).transpose() * &zeta
        };
        for var in 0..nx {
            let mut xp = x.clone();
            xp[var] += h;
            let mut xm = x.clone();
            xm[var] -= h;
            let (fp, eqp, gp) = eval_all(&xp);
            let (fm, eqm, gm) = eval_all(&xm);
            let dfd = (fp - fm) / (2.0 * h);
            assert!(
                (grad_f[var] - dfd).abs() <= 1e-5 * dfd.abs().max(1.0),
                "objective gradient var {var}: {} vs {dfd}",
                grad_f[var]
            );
            for r in 0..me {
                let fd = (eqp[r] - eqm[r]) / (2.0 * h);
                assert!(
                    (eq_jac[(r, var)] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "equality jac ({r},{var})"
                );
            }
            for r in 0..mi {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                assert!(
                    (ineq_jac[(r, var)] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "inequality jac ({r},{var})"
                );
            }
            let glp = lag_grad(&xp);
            let glm = lag_grad(&xm);
            for r in 0..nx {
                let fd = (glp[r] - glm[r]) / (2.0 * h);
                assert!(
                    (hess[(r, var)] - fd).abs() <= 5e-5 * fd.abs().max(1.0),
                    "hessian ({r},{var}): {} vs {fd}",
                    hess[(r, var)]
                );
            }
        }
    }

    #[test]
    fn solver_reaches_a_kkt_point_without_worsening_losses() {
        let (net, sol, d) = fixture();
        let cfg = OpfConfig::default();
        let prob = build_opf(&net, &sol, &d, &cfg).unwrap();
        let opt = solve_opf(&prob, &cfg).unwrap();
        assert_eq!(opt.status, OpfStatus::Optimal, "kkt {:?}", opt.kkt);
        assert!(opt.objective_mw <= opt.start_losses_mw + 1e-6);
        assert!(opt.kkt.max() <= 1e-6, "{:?}", opt.kkt);
        let worst = audit_constraints(&prob, &opt)
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(worst.1 <= 1e-6, "worst violation {worst:?}");
        // Droop bookkeeping: the power shift equals the shared droop
        // response summed over machines.
        let kp_sum: f64 = net.generators.iter().map(|g| g.k_p_mw_per_hz).sum();
        let dp_sum: f64 = (0..net.generators.len())
            .map(|g| opt.gen_p_mw[g] - sol.gen_p_mw[g])
            .sum();
        assert!((dp_sum - kp_sum * opt.delta_f_hz).abs() < 1e-9);
        // A perturbed voltage profile is no longer stationary.
        let mut nudged = opt.clone();
        nudged.v_setpoints[2] += 0.01;
        let kkt2 = kkt_residuals(&prob, &nudged);
        assert!(kkt2.stationarity > opt.kkt.stationarity * 10.0);
    }

    #[test]
    fn reoptimizing_the_optimum_is_a_no_op() {
        let (net, sol, d) = fixture();
        let cfg = OpfConfig::default();
        let prob = build_opf(&net, &sol, &d, &cfg).unwrap();
        let first = solve_opf(&prob, &cfg).unwrap();
        assert_eq!(first.status, OpfStatus::Optimal);

        // Re-dispatch the network at the optimum and optimize again.
        let mut d2 = d.clone();
        for (g, gen) in net.generators.iter().enumerate() {
            let _ = g;
            d2.gen_v_ref_pu[g] = first.v_setpoints[gen.bus];
        }
        d2.shunt_q_mvar.clone_from_slice(&first.shunt_q_mvar);
        let sol2 = solve_power_flow(&net, &d2, &PowerFlowOptions::default()).unwrap();
        assert!(sol2.converged);
        let prob2 = build_opf(&net, &sol2, &d2, &cfg).unwrap();
        let second = solve_opf(&prob2, &cfg).unwrap();
        assert_eq!(second.status, OpfStatus::Optimal);
        assert!((second.objective_mw - sol2.losses_mw).abs() <= 1e-6);
        for g in 0..net.generators.len() {
            assert!(
                (second.gen_q_mvar[g] - sol2.gen_q_mvar[g]).abs() < 0.1,
                "gen {g} moved {} MVar",
                (second.gen_q_mvar[g] - sol2.gen_q_mvar[g]).abs()
            );
        }
    }

    #[test]
    fn optimizer_agrees_with_a_coarse_grid_oracle() {
        let (net, sol, d) = fixture();
        let cfg = OpfConfig::default();
        let prob = build_opf(&net, &sol, &d, &cfg).unwrap();
        let opt = solve_opf(&prob, &cfg).unwrap();
        assert_eq!(opt.status, OpfStatus::Optimal);
        let oracle = brute_force_oracle(&net, 0.005).unwrap();
        assert!(oracle.feasible > 0);
        assert!(
            (opt.objective_mw - oracle.losses_mw).abs() <= oracle.cell_variation_mw,
            "opf {} vs oracle {} (cell {})",
            opt.objective_mw,
            oracle.losses_mw,
            oracle.cell_variation_mw
        );
        // The oracle cannot beat the continuous optimum by more than its
        // own discretization error.
        assert!(opt.objective_mw <= oracle.losses_mw + oracle.cell_variation_mw);
    }

    fn lossless_two_bus(load_mw: f64) -> crate::network::Network {
        parse_case(&format!(
            r#"{{
            "s_base_mva": 100.0, "f_base_hz": 50.0,
            "buses": [
                {{"id":0,"name":"S","base_kv":132.0,"kind":"slack","v_min_pu":1.0,"v_max_pu":1.02,"area":1}},
                {{"id":1,"name":"L","base_kv":132.0,"kind":"pq","v_min_pu":0.8,"v_max_pu":1.2,"area":1}}
            ],
            "branches": [
                {{"from_bus":0,"to_bus":1,"r_pu":0.0,"x_pu":0.1,"rating_mva":200.0}}
            ],
            "generators": [
                {{"bus":0,"p0_mw":{load_mw},"p_min_mw":0.0,"p_max_mw":1000.0,"q_min_mvar":-80.0,
                 "q_max_mvar":80.0,"s_max_mva":1200.0,"k_p_mw_per_hz":-40.0,"x_d_pu":1.0,
                 "e_q_max_pu":3.0,"alpha":0.0,"in_svr":false,"v_set_pu":1.0}}
            ],
            "loads": [{{"bus":1,"p_mw":{load_mw},"q_mvar":0.0,"profile_key":"load"}}],
            "wind_parks": [], "shunts": [], "areas": []
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn oracle_breaks_exact_loss_ties_toward_the_lowest_setpoint() {
        let net = lossless_two_bus(50.0);
        let r = brute_force_oracle(&net, 0.01).unwrap();
        assert_eq!(r.candidates, 3);
        assert_eq!(r.feasible, 3);
        assert_eq!(r.losses_mw, 0.0, "series resistance zero, losses exact zero");
        assert!((r.gen_v_set_pu[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.cell_variation_mw, 0.0);
    }

    #[test]
    fn oracle_rejects_excessive_candidate_counts() {
        let net = lossless_two_bus(50.0);
        let err = brute_force_oracle(&net, 1e-9).unwrap_err();
        assert!(matches!(err, OpfError::ResolutionTooFine { .. }));
    }

    #[test]
    fn oracle_reports_infeasible_search_spaces() {
        // A 9 pu load through a 0.1 pu reactance has no solvable voltage.
        let net = lossless_two_bus(900.0);
        let err = brute_force_oracle(&net, 0.01).unwrap_err();
        assert!(matches!(err, OpfError::NoFeasibleCandidate));
    }

    #[test]
    fn oracle_refuses_more_than_four_dimensions() {
        let mut net = parse_case(&fixture_json(true)).unwrap();
        for _ in 0..4 {
            net.shunts.push(net.shunts[0].clone());
        }
        let err = brute_force_oracle(&net, 0.01).unwrap_err();
        // Two machine buses plus five shunts.
        assert!(matches!(err, OpfError::TooManyFreeSetpoints { free: 7 }));
    }
}
