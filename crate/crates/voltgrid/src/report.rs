//! Output surfaces: CSV renderers with a pinned column order and the daily
//! comparison summary. All floating-point values serialize with 9
//! significant digits so that re-parsing stays within test tolerances and
//! identical runs produce byte-identical files.

use crate::network::Network;
use crate::opf::OpfSolution;
use crate::powerflow::PowerFlowSolution;
use crate::sim::{CostSavings, LossComparison, SimulationTrace};
use std::fmt::Write as _;

/// Formats with 9 significant digits: fixed-point notation inside
/// `[1e-4, 1e9)`, scientific outside, `0` for zero.
pub fn fmt_sig9(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 {
        return "0".to_owned();
    }
    if (1e-4..1e9).contains(&a) {
        let digits_before = a.log10().floor() as i32 + 1;
        let prec = (9 - digits_before).max(0) as usize;
        format!("{x:.prec$}")
    } else {
        format!("{x:.8e}")
    }
}

/// `time_s,bus,v_pu,theta_rad` over every sample of a trace.
pub fn render_trace_buses_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from("time_s,bus,v_pu,theta_rad\n");
    for s in &trace.samples {
        for (b, (&v, &th)) in s.v_pu.iter().zip(&s.theta_rad).enumerate() {
            let _ = writeln!(out, "{},{b},{},{}", fmt_sig9(s.time_s), fmt_sig9(v), fmt_sig9(th));
        }
    }
    out
}

/// `time_s,gen,p_mw,q_mvar` over every sample of a trace.
pub fn render_trace_gens_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from("time_s,gen,p_mw,q_mvar\n");
    for s in &trace.samples {
        for (g, (&p, &q)) in s.gen_p_mw.iter().zip(&s.gen_q_mvar).enumerate() {
            let _ = writeln!(out, "{},{g},{},{}", fmt_sig9(s.time_s), fmt_sig9(p), fmt_sig9(q));
        }
    }
    out
}

/// `time_s,losses_mw` over every sample of a trace.
pub fn render_trace_losses_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from("time_s,losses_mw\n");
    for s in &trace.samples {
        let _ = writeln!(out, "{},{}", fmt_sig9(s.time_s), fmt_sig9(s.losses_mw));
    }
    out
}

/// `time_s,baseline_mw,controlled_mw,delta_mw` per comparison sample.
pub fn render_compare_csv(cmp: &LossComparison) -> String {
    let mut out = String::from("time_s,baseline_mw,controlled_mw,delta_mw\n");
    for i in 0..cmp.time_s.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_sig9(cmp.time_s[i]),
            fmt_sig9(cmp.baseline_mw[i]),
            fmt_sig9(cmp.controlled_mw[i]),
            fmt_sig9(cmp.delta_mw[i])
        );
    }
    out
}

/// Single-solve bus table, same schema as the trace variant with one
/// timestamp.
pub fn render_pf_buses_csv(sol: &PowerFlowSolution) -> String {
    let mut out = String::from("time_s,bus,v_pu,theta_rad\n");
    for (b, (&v, &th)) in sol.v_pu.iter().zip(&sol.theta_rad).enumerate() {
        let _ = writeln!(out, "0,{b},{},{}", fmt_sig9(v), fmt_sig9(th));
    }
    out
}

/// Per-branch power flows and losses of a single solve.
pub fn render_pf_branches_csv(net: &Network, sol: &PowerFlowSolution) -> String {
    let mut out = String::from("branch,from_bus,to_bus,p_from_mw,q_from_mvar,p_to_mw,q_to_mvar,loss_mw\n");
    for (i, (br, fl)) in net.branches.iter().zip(&sol.flows).enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            br.from_bus,
            br.to_bus,
            fmt_sig9(fl.p_from_mw),
            fmt_sig9(fl.q_from_mvar),
            fmt_sig9(fl.p_to_mw),
            fmt_sig9(fl.q_to_mvar),
            fmt_sig9(fl.loss_mw())
        );
    }
    out
}

/// Optimal dispatch as `item,value` rows: objective, residual norms,
/// frequency deviation, then per-generator and per-shunt setpoints.
pub fn render_opf_setpoints_csv(net: &Network, opt: &OpfSolution) -> String {
    let mut out = String::from("item,value\n");
    let mut row = |item: &str, v: f64| {
        let _ = writeln!(out, "{item},{}", fmt_sig9(v));
    };
    row("objective_mw", opt.objective_mw);
    row("start_losses_mw", opt.start_losses_mw);
    row("kkt_stationarity", opt.kkt.stationarity);
    row("kkt_primal_feasibility", opt.kkt.primal_feasibility);
    row("kkt_complementarity", opt.kkt.complementarity);
    row("delta_f_hz", opt.delta_f_hz);
    for &(area, v) in &opt.pilot_refs {
        row(&format!("area{area}_pilot_v_pu"), v);
    }
    for (g, gen) in net.generators.iter().enumerate() {
        row(&format!("gen{g}_v_set_pu"), opt.v_setpoints[gen.bus]);
        row(&format!("gen{g}_p_mw"), opt.gen_p_mw[g]);
        row(&format!("gen{g}_q_mvar"), opt.gen_q_mvar[g]);
    }
    for (i, q) in opt.shunt_q_mvar.iter().enumerate() {
        row(&format!("shunt{i}_q_mvar"), *q);
    }
    out
}

fn round_to(x: f64, unit: f64) -> f64 {
    (x / unit).round() * unit
}

/// Human-readable comparison block: loss reductions, update count, and the
/// monetized savings with round-figure annotations.
pub fn render_summary(
    cmp: &LossComparison,
    savings: &CostSavings,
    price_eur_per_mwh: f64,
    tvr_updates: usize,
) -> String {
    let n = cmp.time_s.len();
    let avg_baseline = cmp.baseline_mw.iter().sum::<f64>() / n.max(1) as f64;
    let avg_controlled = cmp.controlled_mw.iter().sum::<f64>() / n.max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(out, "daily loss comparison ({n} samples)");
    let _ = writeln!(out, "  baseline avg losses:   {} MW", fmt_sig9(avg_baseline));
    let _ = writeln!(out, "  controlled avg losses: {} MW", fmt_sig9(avg_controlled));
    let _ = writeln!(
        out,
        "  peak reduction:        {:.3} MW ({:.1} %)",
        cmp.peak_reduction_mw, cmp.peak_reduction_pct
    );
    let _ = writeln!(
        out,
        "  avg reduction:         {:.3} MW ({:.1} %)",
        cmp.avg_reduction_mw, cmp.avg_reduction_pct
    );
    let _ = writeln!(out, "tertiary updates: {tvr_updates}");
    let _ = writeln!(out, "cost savings at {price_eur_per_mwh} EUR/MWh");
    let _ = writeln!(out, "  per hour: {:.2} EUR/h", savings.eur_per_hour);
    let _ = writeln!(
        out,
        "  per day:  {:.1} EUR/day (~ {:.0} EUR/day)",
        savings.eur_per_day,
        round_to(savings.eur_per_day, 100.0)
    );
    let _ = writeln!(
        out,
        "  per year: {:.0} EUR/year (~ {:.0} EUR/year)",
        savings.eur_per_year,
        round_to(savings.eur_per_year, 1000.0)
    );
    out
}
