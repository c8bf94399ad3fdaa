//! Network data model: buses, branches, generators, loads, wind parks,
//! shunt compensators, and control areas, plus the nodal admittance matrix.
//!
//! Case files are strict JSON: unknown keys are rejected so that typos in
//! hand-edited data fail loudly instead of silently defaulting.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub name: String,
    pub base_kv: f64,
    pub kind: BusKind,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    /// Control area the bus belongs to; informational, the authoritative
    /// membership lives in [`Area::member_buses`].
    pub area: usize,
    #[serde(default)]
    pub is_pilot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    /// Total line-charging susceptance; half is placed at each end.
    #[serde(default)]
    pub b_shunt_pu: f64,
    /// Off-nominal turns ratio on the from side; 1.0 for plain lines.
    #[serde(default = "default_tap")]
    pub tap: f64,
    pub rating_mva: f64,
}

fn default_tap() -> f64 {
    1.0
}

impl Branch {
    pub fn is_transformer(&self) -> bool {
        self.tap != 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    pub p0_mw: f64,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
    pub s_max_mva: f64,
    /// Governor droop gain, signed: output shifts by `k_p * delta_f`.
    pub k_p_mw_per_hz: f64,
    /// Direct-axis synchronous reactance on the system base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_d_pu: Option<f64>,
    /// Field-limit internal voltage ceiling on the system base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_q_max_pu: Option<f64>,
    /// Reactive participation factor within the generator's area.
    pub alpha: f64,
    /// Whether the unit takes part in secondary voltage regulation.
    #[serde(default = "default_true")]
    pub in_svr: bool,
    pub v_set_pu: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
    /// Names the daily multiplier series; the profile file carries
    /// `<key>_p` and `<key>_q` columns for this load.
    pub profile_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindPark {
    pub bus: usize,
    pub p_max_mw: f64,
    /// Names the daily capability series `<key>_p`; injection at unity pf.
    pub profile_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuntKind {
    Svc,
    Statcom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntDevice {
    pub bus: usize,
    pub kind: ShuntKind,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
    pub q_set_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub id: usize,
    pub pilot_bus: usize,
    pub member_buses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub s_base_mva: f64,
    pub f_base_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub wind_parks: Vec<WindPark>,
    pub shunts: Vec<ShuntDevice>,
    pub areas: Vec<Area>,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("case validation failed:\n{}", .violations.join("\n"))]
    Invalid { violations: Vec<String> },
}

/// Parses and validates a case document. Unknown keys, malformed JSON, and
/// any violated structural invariant are all hard errors.
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    let net: Network = serde_json::from_str(text).map_err(|e| CaseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let violations = validate(&net);
    if violations.is_empty() {
        Ok(net)
    } else {
        Err(CaseError::Invalid { violations })
    }
}

/// Canonical serialization; `parse_case(serialize_case(net))` round-trips.
pub fn serialize_case(net: &Network) -> String {
    serde_json::to_string_pretty(net).expect("network serialization cannot fail")
}

/// Hex SHA-256 of the canonical serialization; identifies a case in run
/// manifests and simulation traces.
pub fn case_hash(net: &Network) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(serialize_case(net).as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    /// Generator indices grouped by bus id.
    pub fn gens_by_bus(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.buses.len()];
        for (g, gen) in self.generators.iter().enumerate() {
            out[gen.bus].push(g);
        }
        out
    }

    /// Areas sorted by id together with their participating generator
    /// indices (units with `in_svr` whose bus is a member).
    pub fn svr_areas(&self) -> Vec<(&Area, Vec<usize>)> {
        let mut areas: Vec<&Area> = self.areas.iter().collect();
        areas.sort_by_key(|a| a.id);
        areas
            .into_iter()
            .map(|a| {
                let gens = self
                    .generators
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.in_svr && a.member_buses.contains(&g.bus))
                    .map(|(i, _)| i)
                    .collect();
                (a, gens)
            })
            .collect()
    }
}

/// Checks every structural invariant and returns the violations in a
/// deterministic order; empty means the network is usable.
pub fn validate(net: &Network) -> Vec<String> {
    let mut v = Vec::new();
    let n = net.buses.len();

    if !(net.s_base_mva > 0.0) {
        v.push(format!("s_base_mva {} must be positive", net.s_base_mva));
    }
    if !(net.f_base_hz > 0.0) {
        v.push(format!("f_base_hz {} must be positive", net.f_base_hz));
    }
    if n == 0 {
        v.push("network has no buses".to_string());
        return v;
    }

    for (i, b) in net.buses.iter().enumerate() {
        if b.id != i {
            v.push(format!(
                "bus {} at position {}: ids must be contiguous from 0 in order",
                b.id, i
            ));
        }
        if !(b.v_min_pu > 0.0 && b.v_min_pu < b.v_max_pu) {
            v.push(format!(
                "bus {}: voltage bounds [{}, {}] invalid",
                b.id, b.v_min_pu, b.v_max_pu
            ));
        }
        if !(b.base_kv > 0.0) {
            v.push(format!("bus {}: base_kv {} must be positive", b.id, b.base_kv));
        }
    }
    {
        let mut names: Vec<&str> = net.buses.iter().map(|b| b.name.as_str()).collect();
        names.sort_unstable();
        for w in names.windows(2) {
            if w[0] == w[1] {
                v.push(format!("duplicate bus name {}", w[0]));
            }
        }
    }

    let slack_count = net.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slack_count != 1 {
        v.push(format!("network has {slack_count} slack buses, expected exactly 1"));
    }

    let bus_ok = |id: usize| id < n;
    for (i, br) in net.branches.iter().enumerate() {
        if !bus_ok(br.from_bus) || !bus_ok(br.to_bus) {
            v.push(format!("branch {i}: endpoint out of range"));
            continue;
        }
        if br.from_bus == br.to_bus {
            v.push(format!("branch {i}: from_bus equals to_bus ({})", br.from_bus));
        }
        if br.x_pu == 0.0 {
            v.push(format!("branch {i}: zero series reactance"));
        }
        if !(br.rating_mva > 0.0) {
            v.push(format!("branch {i}: rating {} <= 0", br.rating_mva));
        }
        if !(br.tap > 0.0) {
            v.push(format!("branch {i}: tap {} must be positive", br.tap));
        }
    }

    let mut has_gen = vec![false; n];
    for (i, g) in net.generators.iter().enumerate() {
        if !bus_ok(g.bus) {
            v.push(format!("generator {i}: bus {} out of range", g.bus));
            continue;
        }
        has_gen[g.bus] = true;
        if net.buses[g.bus].kind == BusKind::Pq {
            v.push(format!("generator {i}: attached to pq bus {}", g.bus));
        }
        if !(g.p_min_mw <= g.p0_mw && g.p0_mw <= g.p_max_mw) {
            v.push(format!(
                "generator {i}: p0 {} outside [{}, {}]",
                g.p0_mw, g.p_min_mw, g.p_max_mw
            ));
        }
        if !(g.q_min_mvar < g.q_max_mvar) {
            v.push(format!(
                "generator {i}: reactive limits [{}, {}] invalid",
                g.q_min_mvar, g.q_max_mvar
            ));
        }
        if !(g.s_max_mva > 0.0) {
            v.push(format!("generator {i}: s_max {} <= 0", g.s_max_mva));
        }
        if let Some(xd) = g.x_d_pu {
            if !(xd > 0.0) {
                v.push(format!("generator {i}: x_d {xd} must be positive"));
            }
        }
        if let Some(eq) = g.e_q_max_pu {
            if !(eq > 0.0) {
                v.push(format!("generator {i}: e_q_max {eq} must be positive"));
            }
        }
        if g.alpha < 0.0 {
            v.push(format!("generator {i}: alpha {} negative", g.alpha));
        }
        let b = &net.buses[g.bus];
        if b.id == g.bus && !(g.v_set_pu >= b.v_min_pu && g.v_set_pu <= b.v_max_pu) {
            v.push(format!(
                "generator {i}: v_set {} outside bus bounds [{}, {}]",
                g.v_set_pu, b.v_min_pu, b.v_max_pu
            ));
        }
    }
    for b in &net.buses {
        if matches!(b.kind, BusKind::Slack | BusKind::Pv) && !has_gen[b.id] {
            v.push(format!("bus {}: kind {:?} but no generator attached", b.id, b.kind));
        }
    }

    for (i, l) in net.loads.iter().enumerate() {
        if !bus_ok(l.bus) {
            v.push(format!("load {i}: bus {} out of range", l.bus));
        }
        if l.p_mw < 0.0 {
            v.push(format!("load {i}: negative active demand {}", l.p_mw));
        }
        if l.profile_key.is_empty() {
            v.push(format!("load {i}: empty profile_key"));
        }
    }
    for (i, w) in net.wind_parks.iter().enumerate() {
        if !bus_ok(w.bus) {
            v.push(format!("wind park {i}: bus {} out of range", w.bus));
        }
        if w.p_max_mw < 0.0 {
            v.push(format!("wind park {i}: negative capacity {}", w.p_max_mw));
        }
        if w.profile_key.is_empty() {
            v.push(format!("wind park {i}: empty profile_key"));
        }
    }
    for (i, s) in net.shunts.iter().enumerate() {
        if !bus_ok(s.bus) {
            v.push(format!("shunt {i}: bus {} out of range", s.bus));
            continue;
        }
        if !(s.q_min_mvar < s.q_max_mvar) {
            v.push(format!(
                "shunt {i}: limits [{}, {}] invalid",
                s.q_min_mvar, s.q_max_mvar
            ));
        }
        if s.q_set_mvar < s.q_min_mvar || s.q_set_mvar > s.q_max_mvar {
            v.push(format!(
                "shunt {i}: setpoint {} outside [{}, {}]",
                s.q_set_mvar, s.q_min_mvar, s.q_max_mvar
            ));
        }
    }

    // Areas: unique ids, disjoint membership, pilot flags consistent.
    {
        let mut ids: Vec<usize> = net.areas.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                v.push(format!("duplicate area id {}", w[0]));
            }
        }
        let mut owner: Vec<Option<usize>> = vec![None; n];
        for a in &net.areas {
            if !bus_ok(a.pilot_bus) {
                v.push(format!("area {}: pilot bus {} out of range", a.id, a.pilot_bus));
                continue;
            }
            if !a.member_buses.contains(&a.pilot_bus) {
                v.push(format!(
                    "area {}: pilot bus {} is not a member",
                    a.id, a.pilot_bus
                ));
            }
            for &m in &a.member_buses {
                if !bus_ok(m) {
                    v.push(format!("area {}: member bus {m} out of range", a.id));
                    continue;
                }
                match owner[m] {
                    Some(other) if other != a.id => v.push(format!(
                        "bus {m} belongs to both area {other} and area {}",
                        a.id
                    )),
                    _ => owner[m] = Some(a.id),
                }
            }
            let pilots: Vec<usize> = a
                .member_buses
                .iter()
                .copied()
                .filter(|&m| bus_ok(m) && net.buses[m].is_pilot)
                .collect();
            if pilots.len() > 1 {
                v.push(format!("area {}: multiple pilot buses {:?}", a.id, pilots));
            } else if pilots.as_slice() != [a.pilot_bus] {
                v.push(format!(
                    "area {}: pilot flag mismatch, declared {} flagged {:?}",
                    a.id, a.pilot_bus, pilots
                ));
            }
        }
    }

    // Participation factors must sum to 1 per area over participating units.
    {
        let mut areas: Vec<&Area> = net.areas.iter().collect();
        areas.sort_by_key(|a| a.id);
        for a in areas {
            let sum: f64 = net
                .generators
                .iter()
                .filter(|g| g.in_svr && g.bus < n && a.member_buses.contains(&g.bus))
                .map(|g| g.alpha)
                .sum();
            if sum != 0.0 && (sum - 1.0).abs() > 1e-9 {
                v.push(format!("area {}: alpha sum {sum} != 1", a.id));
            }
        }
        for (i, g) in net.generators.iter().enumerate() {
            if g.in_svr && g.bus < n && !net.areas.iter().any(|a| a.member_buses.contains(&g.bus)) {
                v.push(format!(
                    "generator {i}: participates in svr but bus {} is in no area",
                    g.bus
                ));
            }
        }
    }

    // Connectivity from the slack bus over the branch graph.
    if slack_count == 1 && net.branches.iter().all(|b| bus_ok(b.from_bus) && bus_ok(b.to_bus)) {
        let slack = net.slack_bus();
        let mut adj = vec![Vec::new(); n];
        for b in &net.branches {
            adj[b.from_bus].push(b.to_bus);
            adj[b.to_bus].push(b.from_bus);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![slack];
        seen[slack] = true;
        while let Some(u) = stack.pop() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        for (i, s) in seen.iter().enumerate() {
            if !s {
                v.push(format!("bus {i} unreachable from slack"));
            }
        }
    }

    v
}

/// Per-branch two-port admittance stamp. The ideal transformer sits on the
/// from side: `y_ff = (y_s + j b/2) / tap^2`, `y_ft = y_tf = -y_s / tap`,
/// `y_tt = y_s + j b/2`.
#[derive(Debug, Clone, Copy)]
pub struct BranchStamp {
    pub from: usize,
    pub to: usize,
    pub y_ff: Complex64,
    pub y_ft: Complex64,
    pub y_tf: Complex64,
    pub y_tt: Complex64,
}

pub fn branch_stamps(net: &Network) -> Vec<BranchStamp> {
    net.branches
        .iter()
        .map(|b| {
            let y_s = Complex64::new(1.0, 0.0) / Complex64::new(b.r_pu, b.x_pu);
            let b_c = Complex64::new(0.0, b.b_shunt_pu / 2.0);
            let t = b.tap;
            BranchStamp {
                from: b.from_bus,
                to: b.to_bus,
                y_ff: (y_s + b_c) / (t * t),
                y_ft: -y_s / t,
                y_tf: -y_s / t,
                y_tt: y_s + b_c,
            }
        })
        .collect()
}

/// Sparse complex nodal admittance matrix in row-major adjacency form.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub n: usize,
    /// Row entries `(column, value)` sorted by column, duplicates merged.
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(k) => self.rows[i][k].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn row_sum(&self, i: usize) -> Complex64 {
        self.rows[i].iter().map(|e| e.1).sum()
    }

    /// Largest |Y[i][j] - Y[j][i]|; zero for unity-tap networks.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for &(j, y) in &self.rows[i] {
                worst = worst.max((y - self.get(j, i)).norm());
            }
        }
        worst
    }
}

/// Assembles the nodal admittance matrix from branch stamps. The network is
/// assumed valid; shunt devices are dispatched injections, not admittances,
/// so they do not appear here.
pub fn build_admittance(net: &Network) -> AdmittanceMatrix {
    let n = net.buses.len();
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    let add = |rows: &mut Vec<Vec<(usize, Complex64)>>, i: usize, j: usize, y: Complex64| {
        let row = &mut rows[i];
        match row.binary_search_by_key(&j, |e| e.0) {
            Ok(k) => row[k].1 += y,
            Err(k) => row.insert(k, (j, y)),
        }
    };
    for s in branch_stamps(net) {
        add(&mut rows, s.from, s.from, s.y_ff);
        add(&mut rows, s.from, s.to, s.y_ft);
        add(&mut rows, s.to, s.from, s.y_tf);
        add(&mut rows, s.to, s.to, s.y_tt);
    }
    // Isolated buses still need a diagonal entry for well-formed iteration.
    for (i, row) in rows.iter_mut().enumerate() {
        if row.binary_search_by_key(&i, |e| e.0).is_err() {
            let k = row.binary_search_by_key(&i, |e| e.0).unwrap_err();
            row.insert(k, (i, Complex64::new(0.0, 0.0)));
        }
    }
    AdmittanceMatrix { n, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus_text() -> String {
        r#"{
            "s_base_mva": 100.0,
            "f_base_hz": 50.0,
            "buses": [
                {"id": 0, "name": "A", "base_kv": 132.0, "kind": "slack",
                 "v_min_pu": 0.9, "v_max_pu": 1.1, "area": 1},
                {"id": 1, "name": "B", "base_kv": 132.0, "kind": "pq",
                 "v_min_pu": 0.9, "v_max_pu": 1.1, "area": 1}
            ],
            "branches": [
                {"from_bus": 0, "to_bus": 1, "r_pu": 0.01, "x_pu": 0.1,
                 "b_shunt_pu": 0.0, "rating_mva": 100.0}
            ],
            "generators": [
                {"bus": 0, "p0_mw": 50.0, "p_min_mw": 0.0, "p_max_mw": 100.0,
                 "q_min_mvar": -50.0, "q_max_mvar": 50.0, "s_max_mva": 120.0,
                 "k_p_mw_per_hz": -40.0, "alpha": 0.0, "in_svr": false,
                 "v_set_pu": 1.0}
            ],
            "loads": [
                {"bus": 1, "p_mw": 50.0, "q_mvar": 0.0, "profile_key": "load"}
            ],
            "wind_parks": [],
            "shunts": [],
            "areas": []
        }"#
        .to_string()
    }

    #[test]
    fn parses_minimal_two_bus_case() {
        let net = parse_case(&two_bus_text()).unwrap();
        assert_eq!(net.buses.len(), 2);
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.slack_bus(), 0);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let text = two_bus_text().replace("\"rating_mva\"", "\"rating_mvax\"");
        match parse_case(&text) {
            Err(CaseError::Syntax { line, message, .. }) => {
                assert!(line > 0);
                assert!(message.contains("rating_mvax"), "{message}");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn serialization_round_trips() {
        let net = parse_case(&two_bus_text()).unwrap();
        let again = parse_case(&serialize_case(&net)).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn series_admittance_off_diagonal_matches_complex_reciprocal() {
        let net = parse_case(&two_bus_text()).unwrap();
        let y = build_admittance(&net);
        // Independent arithmetic: 1/(r + jx) done by hand.
        let (r, x) = (0.01, 0.1);
        let d = r * r + x * x;
        let expect = -Complex64::new(r / d, -x / d);
        let got = y.get(0, 1);
        assert!((got - expect).norm() < 1e-12, "got {got}");
        assert!((got.re - (-0.9901)).abs() < 5e-5);
        assert!((got.im - 9.901).abs() < 5e-4);
    }

    #[test]
    fn row_sums_equal_shunt_for_unity_tap() {
        let mut net = parse_case(&two_bus_text()).unwrap();
        net.branches[0].b_shunt_pu = 0.04;
        let y = build_admittance(&net);
        for i in 0..2 {
            let s = y.row_sum(i);
            assert!((s - Complex64::new(0.0, 0.02)).norm() < 1e-12);
        }
        assert!(y.max_asymmetry() < 1e-15);
    }

    #[test]
    fn transformer_tap_scales_stamps() {
        let mut net = parse_case(&two_bus_text()).unwrap();
        net.branches[0].tap = 1.05;
        let y = build_admittance(&net);
        let y_s = Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.1);
        assert!((y.get(0, 1) - (-y_s / 1.05)).norm() < 1e-12);
        assert!((y.get(0, 0) - y_s / (1.05 * 1.05)).norm() < 1e-12);
        assert!((y.get(1, 1) - y_s).norm() < 1e-12);
        // Real tap keeps the matrix symmetric even off-nominal.
        assert!(y.max_asymmetry() < 1e-15);
    }

    #[test]
    fn validation_names_the_offender() {
        let mut net = parse_case(&two_bus_text()).unwrap();
        net.branches[0].rating_mva = -5.0;
        let v = validate(&net);
        assert!(v.iter().any(|m| m.contains("branch 0") && m.contains("rating")), "{v:?}");

        let mut net2 = parse_case(&two_bus_text()).unwrap();
        net2.branches.clear();
        let v2 = validate(&net2);
        assert!(v2.iter().any(|m| m == "bus 1 unreachable from slack"), "{v2:?}");
    }

    #[test]
    fn alpha_sum_checked_per_area() {
        let mut net = parse_case(&two_bus_text()).unwrap();
        net.areas.push(Area {
            id: 1,
            pilot_bus: 1,
            member_buses: vec![0, 1],
        });
        net.buses[1].is_pilot = true;
        net.generators[0].in_svr = true;
        net.generators[0].alpha = 0.9;
        let v = validate(&net);
        assert!(v.iter().any(|m| m.contains("area 1") && m.contains("alpha sum 0.9")), "{v:?}");
    }
}
