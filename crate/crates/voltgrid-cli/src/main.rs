//! Command-line front end: single power flows, single optimal dispatches,
//! and full baseline-vs-controlled day comparisons, all emitted as CSV plus
//! a run manifest.
//!
//! Exit codes are a total function of the outcome class:
//! 0 success, 1 input error, 2 power-flow failure, 3 optimizer failure.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use voltgrid::{
    build_opf, case_hash, compare_scenarios, cost_savings, load_profiles, parse_case,
    render_compare_csv, render_opf_setpoints_csv, render_pf_branches_csv, render_pf_buses_csv,
    render_summary, render_trace_buses_csv, render_trace_gens_csv, render_trace_losses_csv,
    run_scenario, solve_opf, ControlConfig, ControlMode, Dispatch, Network, OpfStatus,
    PowerFlowOptions, PowerFlowSolver, ScenarioProfile, SimError,
};

const EXIT_INPUT: u8 = 1;
const EXIT_POWER_FLOW: u8 = 2;
const EXIT_OPF: u8 = 3;

#[derive(Parser)]
#[command(
    name = "voltgrid",
    version,
    about = "Quasi-steady-state grid simulator with hierarchical voltage control"
)]
struct Cli {
    /// Accepted for interface stability; every computation is deterministic,
    /// so the value is ignored.
    #[arg(long, global = true, value_name = "SEED")]
    seed_ignored: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one power flow and write per-bus and per-branch tables.
    Pf(PfArgs),
    /// Optimize voltage and shunt setpoints at one operating point.
    Opf(OpfArgs),
    /// Run baseline and controlled day scenarios and compare losses.
    Compare(CompareArgs),
}

#[derive(Args)]
struct PfArgs {
    /// Network description (JSON case file).
    #[arg(long)]
    case: PathBuf,
    /// Optional profile table; scales loads and wind to `--hour`.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Hour of day the profile is evaluated at.
    #[arg(long, default_value_t = 0.0)]
    hour: f64,
    /// Start the iteration from a flat voltage profile instead of the
    /// generator setpoints.
    #[arg(long)]
    flat_start: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OpfArgs {
    #[arg(long)]
    case: PathBuf,
    /// Scenario configuration (TOML); the optimizer block is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    hour: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured control mode for the controlled run
    /// (baseline, svr_only, svr_tvr).
    #[arg(long)]
    mode: Option<ControlMode>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Failure with its outcome-class exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pf(args) => cmd_pf(args),
        Command::Opf(args) => cmd_opf(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Serialized alongside every command's outputs; lists every file written.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    case: String,
    profile: Option<String>,
    config: Option<String>,
    mode: Option<String>,
    out_dir: String,
    wall_s: f64,
    versions: BTreeMap<String, String>,
    case_hash: String,
    outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, net: &Network, out_dir: &Path) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("voltgrid".into(), voltgrid::VERSION.into());
        versions.insert("voltgrid-cli".into(), env!("CARGO_PKG_VERSION").into());
        Self {
            command: command.into(),
            case: String::new(),
            profile: None,
            config: None,
            mode: None,
            out_dir: out_dir.display().to_string(),
            wall_s: 0.0,
            versions,
            case_hash: case_hash(net),
            outputs: Vec::new(),
        }
    }

    /// Writes `rel` under the output directory and records it.
    fn write(&mut self, out_dir: &Path, rel: &str, content: &str) -> Result<(), CliError> {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::input(format!("creating {}: {e}", parent.display())))?;
        }
        std::fs::write(&path, content)
            .map_err(|e| CliError::input(format!("writing {}: {e}", path.display())))?;
        self.outputs.push(rel.into());
        Ok(())
    }

    /// Records the wall-clock time and writes `manifest.json` (listing
    /// itself last).
    fn finish(mut self, out_dir: &Path, started: Instant) -> Result<(), CliError> {
        self.wall_s = started.elapsed().as_secs_f64();
        self.outputs.push("manifest.json".into());
        let body = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::input(format!("encoding manifest: {e}")))?;
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, body)
            .map_err(|e| CliError::input(format!("writing {}: {e}", path.display())))?;
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("reading {}: {e}", path.display())))
}

fn load_case(path: &Path) -> Result<Network, CliError> {
    parse_case(&read_file(path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_profile(path: &Path) -> Result<ScenarioProfile, CliError> {
    load_profiles(&read_file(path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&PathBuf>) -> Result<ControlConfig, CliError> {
    match path {
        Some(p) => ControlConfig::from_toml(&read_file(p)?)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
        None => Ok(ControlConfig::default()),
    }
}

/// Nominal dispatch, scaled to `profile` at `hour` when one is given.
fn dispatch_for(
    net: &Network,
    profile: Option<&ScenarioProfile>,
    hour: f64,
) -> Result<Dispatch, CliError> {
    let mut d = Dispatch::nominal(net);
    let Some(profile) = profile else {
        return Ok(d);
    };
    let value = |key: String| {
        profile
            .value(&key, hour)
            .ok_or_else(|| CliError::input(format!("profile has no series for key '{key}'")))
    };
    for (i, l) in net.loads.iter().enumerate() {
        d.load_p_scale[i] = value(format!("{}_p", l.profile_key))?;
        d.load_q_scale[i] = value(format!("{}_q", l.profile_key))?;
    }
    for (i, w) in net.wind_parks.iter().enumerate() {
        d.wind_scale[i] = value(format!("{}_p", w.profile_key))?;
    }
    Ok(d)
}

fn cmd_pf(args: PfArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let net = load_case(&args.case)?;
    let profile = args.profile.as_deref().map(load_profile).transpose()?;
    let dispatch = dispatch_for(&net, profile.as_ref(), args.hour)?;
    let opts = PowerFlowOptions {
        flat_start: args.flat_start,
        ..PowerFlowOptions::default()
    };
    let sol = PowerFlowSolver::new(&net)
        .solve(&dispatch, &opts, None)
        .map_err(|e| CliError {
            code: EXIT_POWER_FLOW,
            message: e.to_string(),
        })?;
    if !sol.converged {
        return Err(CliError {
            code: EXIT_POWER_FLOW,
            message: format!(
                "power flow did not converge in {} iterations (mismatch {:.3e} pu)",
                sol.iterations, sol.max_mismatch_pu
            ),
        });
    }

    let mut manifest = RunManifest::new("pf", &net, &args.out);
    manifest.case = args.case.display().to_string();
    manifest.profile = args.profile.as_ref().map(|p| p.display().to_string());
    manifest.write(&args.out, "buses.csv", &render_pf_buses_csv(&sol))?;
    manifest.write(&args.out, "branches.csv", &render_pf_branches_csv(&net, &sol))?;
    println!(
        "converged in {} iterations: losses {:.4} MW, mismatch {:.2e} pu",
        sol.iterations, sol.losses_mw, sol.max_mismatch_pu
    );
    println!("wrote {}", args.out.join("buses.csv").display());
    println!("wrote {}", args.out.join("branches.csv").display());
    manifest.finish(&args.out, started)
}

fn cmd_opf(args: OpfArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let net = load_case(&args.case)?;
    let cfg = load_config(args.config.as_ref())?;
    let profile = args.profile.as_deref().map(load_profile).transpose()?;
    let dispatch = dispatch_for(&net, profile.as_ref(), args.hour)?;
    let op = PowerFlowSolver::new(&net)
        .solve(&dispatch, &PowerFlowOptions::default(), None)
        .map_err(|e| CliError {
            code: EXIT_POWER_FLOW,
            message: e.to_string(),
        })?;
    if !op.converged {
        return Err(CliError {
            code: EXIT_POWER_FLOW,
            message: "operating-point power flow did not converge".into(),
        });
    }

    // Problem assembly failures are bad inputs (missing machine data, shape
    // mismatches); only the solve itself classifies as an optimizer failure.
    let prob = build_opf(&net, &op, &dispatch, &cfg.opf)
        .map_err(|e| CliError::input(e.to_string()))?;
    let opt = solve_opf(&prob, &cfg.opf).map_err(|e| CliError {
        code: EXIT_OPF,
        message: e.to_string(),
    })?;

    let mut manifest = RunManifest::new("opf", &net, &args.out);
    manifest.case = args.case.display().to_string();
    manifest.config = args.config.as_ref().map(|p| p.display().to_string());
    manifest.profile = args.profile.as_ref().map(|p| p.display().to_string());
    manifest.write(&args.out, "setpoints.csv", &render_opf_setpoints_csv(&net, &opt))?;
    println!(
        "status {}: losses {:.4} -> {:.4} MW in {} iterations",
        opt.status, opt.start_losses_mw, opt.objective_mw, opt.iterations
    );
    println!(
        "kkt: stationarity {:.2e}, primal {:.2e}, complementarity {:.2e}",
        opt.kkt.stationarity, opt.kkt.primal_feasibility, opt.kkt.complementarity
    );
    println!("wrote {}", args.out.join("setpoints.csv").display());
    manifest.finish(&args.out, started)?;
    if opt.status != OpfStatus::Optimal {
        // The best iterate is already on disk; classify the run as failed.
        return Err(CliError {
            code: EXIT_OPF,
            message: format!("optimizer stopped with status {}", opt.status),
        });
    }
    Ok(())
}

fn sim_error(e: SimError) -> CliError {
    let code = match &e {
        SimError::InvalidConfig(_) | SimError::Profile(_) | SimError::TraceMismatch(_) => {
            EXIT_INPUT
        }
        SimError::PowerFlowDiverged { .. } | SimError::Control { .. } => EXIT_POWER_FLOW,
        SimError::OpfAborted { .. } => EXIT_OPF,
    };
    CliError {
        code,
        message: e.to_string(),
    }
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let net = load_case(&args.case)?;
    let profile = load_profile(&args.profile)?;
    let mut cfg = load_config(args.config.as_ref())?;
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    let base_cfg = ControlConfig {
        mode: ControlMode::Baseline,
        ..cfg.clone()
    };

    // The two runs are independent; solve them side by side.
    let (baseline, controlled) = std::thread::scope(|s| {
        let base = s.spawn(|| run_scenario(&net, &profile, &base_cfg));
        let ctrl = s.spawn(|| run_scenario(&net, &profile, &cfg));
        (base.join().expect("baseline run"), ctrl.join().expect("controlled run"))
    });
    let baseline = baseline.map_err(sim_error)?;
    let controlled = controlled.map_err(sim_error)?;
    let cmp = compare_scenarios(&baseline, &controlled).map_err(sim_error)?;
    let savings = cost_savings(&cmp, cfg.price_eur_per_mwh);
    let summary = render_summary(
        &cmp,
        &savings,
        cfg.price_eur_per_mwh,
        controlled.tvr_update_count(),
    );

    let mut manifest = RunManifest::new("compare", &net, &args.out);
    manifest.case = args.case.display().to_string();
    manifest.profile = Some(args.profile.display().to_string());
    manifest.config = args.config.as_ref().map(|p| p.display().to_string());
    manifest.mode = Some(cfg.mode.to_string());
    for (dir, trace) in [("baseline", &baseline), ("controlled", &controlled)] {
        manifest.write(&args.out, &format!("{dir}/buses.csv"), &render_trace_buses_csv(trace))?;
        manifest.write(&args.out, &format!("{dir}/gens.csv"), &render_trace_gens_csv(trace))?;
        manifest.write(
            &args.out,
            &format!("{dir}/losses.csv"),
            &render_trace_losses_csv(trace),
        )?;
    }
    manifest.write(&args.out, "compare.csv", &render_compare_csv(&cmp))?;
    manifest.write(&args.out, "summary.txt", &summary)?;
    print!("{summary}");
    println!("wrote {}", args.out.display());
    manifest.finish(&args.out, started)
}
