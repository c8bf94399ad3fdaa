//! End-to-end checks of the command-line interface: exit-code classes,
//! output schemas, and manifest completeness.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voltgrid"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Every file under `dir`, relative, sorted.
fn files_under(dir: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push(
                    path.strip_prefix(root)
                        .unwrap()
                        .to_string_lossy()
                        .replace('\\', "/"),
                );
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Parses the manifest and checks it lists exactly the files on disk.
fn check_manifest(dir: &Path) -> serde_json::Value {
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir.join("manifest.json")))
        .expect("manifest parses as JSON");
    let mut listed: Vec<String> = manifest["outputs"]
        .as_array()
        .expect("outputs array")
        .iter()
        .map(|f| f.as_str().unwrap().to_string())
        .collect();
    listed.sort();
    assert_eq!(listed, files_under(dir), "manifest must list every output");
    manifest
}

#[test]
fn pf_writes_tables_and_a_complete_manifest() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["pf", "--case"])
        .arg(repo("cases/norway21.case"))
        .arg("--out")
        .arg(out.path())
        .arg("--seed-ignored")
        .arg("7")
        .status()
        .unwrap();
    assert!(status.success());

    let buses = read(&out.path().join("buses.csv"));
    assert_eq!(buses.lines().next().unwrap(), "time_s,bus,v_pu,theta_rad");
    assert_eq!(buses.lines().count(), 22, "header plus one row per bus");
    let branches = read(&out.path().join("branches.csv"));
    assert_eq!(
        branches.lines().next().unwrap(),
        "branch,from_bus,to_bus,p_from_mw,q_from_mvar,p_to_mw,q_to_mvar,loss_mw"
    );

    let manifest = check_manifest(out.path());
    let net = voltgrid::parse_case(&read(&repo("cases/norway21.case"))).unwrap();
    assert_eq!(
        manifest["case_hash"].as_str().unwrap(),
        voltgrid::case_hash(&net),
        "manifest hash must match the parsed case"
    );
}

#[test]
fn malformed_case_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("broken.case");
    std::fs::write(&case, "this is not a case file").unwrap();
    let output = bin()
        .args(["pf", "--case"])
        .arg(&case)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(!output.stderr.is_empty(), "diagnostic expected on stderr");
}

#[test]
fn case_error_names_the_offending_generator() {
    // A generator pointing at a bus that does not exist is rejected at
    // parse time with the generator identified in the diagnostic.
    let net = voltgrid::parse_case(&read(&repo("cases/three_bus.case"))).unwrap();
    let mut broken = net;
    broken.generators[1].bus = 99;
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("dangling.case");
    std::fs::write(&case, voltgrid::serialize_case(&broken)).unwrap();
    let output = bin()
        .args(["opf", "--case"])
        .arg(&case)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("generator"),
        "diagnostic should name the generator: {stderr}"
    );
}

#[test]
fn infeasible_operating_point_is_a_power_flow_error() {
    // Quadruple every load far past the transfer capability of the grid.
    let net = voltgrid::parse_case(&read(&repo("cases/norway21.case"))).unwrap();
    let mut heavy = net;
    for l in &mut heavy.loads {
        l.p_mw *= 40.0;
        l.q_mvar *= 40.0;
    }
    for g in &mut heavy.generators {
        g.p_max_mw *= 40.0;
        g.q_min_mvar *= 40.0;
        g.q_max_mvar *= 40.0;
        g.s_max_mva *= 40.0;
    }
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("heavy.case");
    std::fs::write(&case, voltgrid::serialize_case(&heavy)).unwrap();
    let output = bin()
        .args(["pf", "--case"])
        .arg(&case)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "expected the power-flow failure class");
}

#[test]
fn opf_output_matches_a_direct_library_solve() {
    let out = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["opf", "--case"])
        .arg(repo("cases/three_bus.case"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("status optimal"), "stdout: {stdout}");
    assert!(stdout.contains("kkt:"), "stdout: {stdout}");

    // Same inputs through the library must reproduce the file bit for bit.
    let net = voltgrid::parse_case(&read(&repo("cases/three_bus.case"))).unwrap();
    let d = voltgrid::Dispatch::nominal(&net);
    let op = voltgrid::PowerFlowSolver::new(&net)
        .solve(&d, &voltgrid::PowerFlowOptions::default(), None)
        .unwrap();
    let cfg = voltgrid::OpfConfig::default();
    let prob = voltgrid::build_opf(&net, &op, &d, &cfg).unwrap();
    let opt = voltgrid::solve_opf(&prob, &cfg).unwrap();
    let expected = voltgrid::render_opf_setpoints_csv(&net, &opt);
    assert_eq!(read(&out.path().join("setpoints.csv")), expected);
    check_manifest(out.path());
}

#[test]
fn reoptimizing_an_already_optimal_case_changes_nothing() {
    // Bake the optimizer's answer into the case, then optimize again: the
    // objective must sit within round-off of the input operating point.
    let net = voltgrid::parse_case(&read(&repo("cases/three_bus.case"))).unwrap();
    let d = voltgrid::Dispatch::nominal(&net);
    let op = voltgrid::PowerFlowSolver::new(&net)
        .solve(&d, &voltgrid::PowerFlowOptions::default(), None)
        .unwrap();
    let cfg = voltgrid::OpfConfig::default();
    let prob = voltgrid::build_opf(&net, &op, &d, &cfg).unwrap();
    let opt = voltgrid::solve_opf(&prob, &cfg).unwrap();

    let mut tuned = net.clone();
    for g in &mut tuned.generators {
        g.v_set_pu = opt.v_setpoints[g.bus];
    }
    for (i, s) in tuned.shunts.iter_mut().enumerate() {
        s.q_set_mvar = opt.shunt_q_mvar[i];
    }
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("tuned.case");
    std::fs::write(&case, voltgrid::serialize_case(&tuned)).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["opf", "--case"])
        .arg(&case)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let setpoints = read(&out.join("setpoints.csv"));
    let field = |name: &str| -> f64 {
        setpoints
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{name},")))
            .unwrap_or_else(|| panic!("{name} row missing"))
            .parse()
            .unwrap()
    };
    let delta = (field("objective_mw") - field("start_losses_mw")).abs();
    assert!(delta < 1e-6, "re-optimization moved the objective by {delta:.3e} MW");
}

#[test]
fn compare_in_svr_only_mode_reports_no_tertiary_updates() {
    // One hour is plenty to exercise the pipeline; override the mode on the
    // command line to check the flag wins over the config file.
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("hour.toml");
    let text = read(&repo("configs/default.toml")).replace("duration_s = 86400.0", "duration_s = 3600.0");
    std::fs::write(&config, text).unwrap();
    let out = dir.path().join("out");
    let output = bin()
        .args(["compare", "--case"])
        .arg(repo("cases/norway21.case"))
        .arg("--profile")
        .arg(repo("profiles/day.csv"))
        .arg("--config")
        .arg(&config)
        .args(["--mode", "svr_only"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let summary = read(&out.join("summary.txt"));
    assert!(summary.contains("tertiary updates: 0"), "summary:\n{summary}");
    assert!(
        String::from_utf8_lossy(&output.stdout).contains("tertiary updates: 0"),
        "summary must also be printed"
    );

    // Pinned column orders for every table the comparison emits.
    for (rel, header) in [
        ("compare.csv", "time_s,baseline_mw,controlled_mw,delta_mw"),
        ("baseline/buses.csv", "time_s,bus,v_pu,theta_rad"),
        ("baseline/gens.csv", "time_s,gen,p_mw,q_mvar"),
        ("baseline/losses.csv", "time_s,losses_mw"),
        ("controlled/buses.csv", "time_s,bus,v_pu,theta_rad"),
        ("controlled/gens.csv", "time_s,gen,p_mw,q_mvar"),
        ("controlled/losses.csv", "time_s,losses_mw"),
    ] {
        let body = read(&out.join(rel));
        assert_eq!(body.lines().next().unwrap(), header, "schema drift in {rel}");
    }
    // 3600 s at a 10 s sample interval on a half-open time grid.
    let compare = read(&out.join("compare.csv"));
    assert_eq!(compare.lines().count(), 361);
    let manifest = check_manifest(&out);
    assert_eq!(manifest["mode"].as_str().unwrap(), "svr_only");
}
