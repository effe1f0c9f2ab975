use germcanop::canop::{CanopOptions, Grid, Partition, WaveFunction};
use germcanop::pdo::{
    commutation_residual, solve_transport, transport_operator, ApplyMethod, ApplyOptions, HamiltonianSymbol, TransportOptions,
};
use germcanop::quantization::circle_family;
use germcanop::Complex;
use germcanop_cli::config::{schema_json, GermSpec, GridSpec, Scenario, ScenarioConfig, Tolerances};
use germcanop_cli::{exit_code, run_scenario};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::Command;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn sample(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(configs_dir().join(format!("{name}.json"))).unwrap();
    ScenarioConfig::from_json(&text).unwrap()
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_germcanop"))
}

fn run_binary(config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = binary().arg("--config").arg(config).arg("--out").arg(out).args(extra).env_remove("GERMCANOP_THREADS").output().unwrap();
    status.status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

// ---------- config ----------

#[test]
fn sample_configs_round_trip() {
    for name in ["quantize", "gaussian-packet", "transition-check", "residual-scan", "transform-check"] {
        let cfg = sample(name);
        let again = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again, "{name}");
        assert_eq!(cfg.scenario.name(), name);
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let base = r#"{"scenario": "quantize", "germ": {"kind": "circle", "energy": 0.5}, "h": 0.1, "energy_range": [0.1, 1.0]"#;
    assert!(ScenarioConfig::from_json(&format!("{base}}}")).is_ok());
    for extra in [
        r#", "bogus": 1"#,
        r#", "tolerances": {"energyy": 1e-8}"#,
        r#", "outputs": {"tabel": "x.csv"}"#,
        r#", "grid": {"lower": 0, "upper": 1, "nodes": 3, "n": 1}"#,
    ] {
        assert!(ScenarioConfig::from_json(&format!("{base}{extra}}}")).is_err(), "{extra}");
    }
    let nested =
        r#"{"scenario": "quantize", "germ": {"kind": "circle", "energy": 0.5, "radius": 1}, "h": 0.1, "energy_range": [0.1, 1.0]}"#;
    assert!(ScenarioConfig::from_json(nested).is_err());
}

#[test]
fn scenario_requirements_are_validated() {
    let cases = [
        // both h and h_list
        r#"{"scenario": "quantize", "germ": {"kind": "circle", "energy": 0.5}, "h": 0.1, "h_list": [0.1], "energy_range": [0.1, 1.0]}"#,
        // quantize without a range
        r#"{"scenario": "quantize", "germ": {"kind": "circle", "energy": 0.5}, "h": 0.1}"#,
        // packet on a circle
        r#"{"scenario": "gaussian-packet", "germ": {"kind": "circle", "energy": 0.5}, "h": 0.1}"#,
        // negative h
        r#"{"scenario": "transition-check", "germ": {"kind": "point", "curvature": 1.0}, "h": -0.1}"#,
        // oversized grid
        r#"{"scenario": "transition-check", "germ": {"kind": "point", "curvature": 1.0}, "h": 0.1, "grid": {"lower": 0, "upper": 1, "nodes": 100000000}}"#,
        // residual scan on a point germ
        r#"{"scenario": "residual-scan", "germ": {"kind": "point", "curvature": 1.0}, "h_list": [0.1, 0.05]}"#,
        // slope check with one h
        r#"{"scenario": "residual-scan", "germ": {"kind": "circle", "energy": 0.5}, "h": 0.1, "tolerances": {"min_slope": 1.0}}"#,
    ];
    for text in cases {
        assert!(ScenarioConfig::from_json(text).is_err(), "{text}");
    }
}

#[test]
fn published_schema_is_current() {
    let committed = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenario.schema.json")).unwrap();
    assert_eq!(committed.trim_end(), schema_json().trim_end());
}

// ---------- scenarios ----------

#[test]
fn quantize_table_matches_the_oscillator_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample("quantize");
    let summary = run_scenario(&cfg, dir.path(), 0).unwrap();
    assert!(summary.passed);
    let (header, rows) = read_table(&dir.path().join("quantize.csv"));
    assert_eq!(header, ["h", "n", "energy", "lattice_energy", "deviation", "cycle_residual"]);
    assert_eq!(rows.len(), 10);
    for (k, row) in rows.iter().enumerate() {
        let e: f64 = row[2].parse().unwrap();
        assert!((e - 0.01 * (k as f64 + 0.5)).abs() < 1e-8, "{row:?}");
    }
}

#[test]
fn residual_scan_equals_direct_module_calls() {
    let dir = tempfile::tempdir().unwrap();
    let hs = [0.125, 0.0625];
    let cfg = ScenarioConfig {
        h: None,
        h_list: Some(hs.to_vec()),
        tolerances: Tolerances { min_slope: Some(1.0), ..Default::default() },
        ..sample("residual-scan")
    };
    run_scenario(&cfg, dir.path(), 0).unwrap();
    let (header, rows) = read_table(&dir.path().join("residual-scan.csv"));
    assert_eq!(header, ["h", "energy", "residual_norm", "canop_norm", "relative_residual", "slope"]);
    let mut rels = Vec::new();
    for (row, h) in rows.iter().zip(hs) {
        let e = h * ((0.5 / h - 0.5f64).round() + 0.5);
        let r = (2.0 * e).sqrt();
        let (germ, form) = circle_family(e).unwrap();
        let sym = HamiltonianSymbol::harmonic(1, e).unwrap();
        let coeffs = transport_operator(&sym, &germ, &form).unwrap();
        let phi = solve_transport(&sym, &germ, &coeffs, &[0.0, r], Complex::new(1.0, 0.0), &TransportOptions::for_h(h, TAU))
            .unwrap()
            .amplitude(1024);
        let l = r + 8.0 * h.sqrt();
        let nodes = (((2.0 * l) * r * 12.0 / (TAU * h)).ceil() as usize + 1).max(401);
        let grid = Grid::uniform(&[-l], &[l], &[nodes]).unwrap();
        let apply = ApplyOptions { method: ApplyMethod::Spectral, ..Default::default() };
        let part = Partition::angular(&germ, 1.2, 0.0).unwrap();
        let res = commutation_residual(&sym, &germ, &form, &phi, &part, h, &grid, &CanopOptions::default(), &apply).unwrap();
        assert_eq!(row[2].parse::<f64>().unwrap(), res.raw);
        assert_eq!(row[3].parse::<f64>().unwrap(), res.canop_norm);
        rels.push(res.raw / res.canop_norm);
    }
    assert_eq!(rows[0][5], "");
    let slope: f64 = rows[1][5].parse().unwrap();
    assert!((slope - (rels[0] / rels[1]).log2()).abs() < 1e-12);
}

#[test]
fn gaussian_packet_dumps_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample("gaussian-packet");
    let summary = run_scenario(&cfg, dir.path(), 0).unwrap();
    assert!(summary.passed);
    assert_eq!(summary.wavefunctions, ["packet_0.csv", "packet_1.csv", "packet_2.csv"]);
    let GridSpec { lower, upper, nodes } = cfg.grid.clone().unwrap();
    let grid = Grid::uniform(&[lower], &[upper], &[nodes]).unwrap();
    let h = cfg.h_list.as_ref().unwrap()[2];
    let psi = WaveFunction::read_csv(std::fs::File::open(dir.path().join("packet_2.csv")).unwrap(), grid.clone(), h).unwrap();
    // (1 + 1)^{1/2} e^{−q²/2h} at the centre node
    let mid = nodes / 2;
    assert!((psi.samples[mid] - Complex::new(2f64.sqrt(), 0.0)).norm() < 1e-12);
    let q = grid.point(mid + 20)[0];
    assert!((psi.samples[mid + 20].re - 2f64.sqrt() * (-q * q / (2.0 * h)).exp()).abs() < 1e-12);
}

#[test]
fn cubic_transition_has_third_order_contact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        germ: GermSpec::Polynomial { coefficients: vec![[0.0, 0.0], [0.3, 0.0], [0.0, 0.5], [0.1, 0.05]], domain: [-1.0, 1.0] },
        ..sample("transition-check")
    };
    let summary = run_scenario(&cfg, dir.path(), 0).unwrap();
    assert!(summary.passed, "{:?}", summary.checks);
    let order = summary.checks.iter().find(|c| c.name.starts_with("order")).unwrap();
    assert!((order.value - 3.0).abs() < 0.1, "{}", order.value);
}

#[test]
fn transform_check_uses_the_seed() {
    let cfg = sample("transform-check");
    let a = tempfile::tempdir().unwrap();
    let s = run_scenario(&cfg, a.path(), 7).unwrap();
    assert!(s.passed);
    assert_eq!(s.seed, 7);
    // point germ: no cycles, the Gaussian is fixed by the quarter turn
    let point = ScenarioConfig { germ: GermSpec::Point { curvature: 1.0 }, ..cfg };
    let s = run_scenario(&point, a.path(), 3).unwrap();
    assert!(s.passed, "{:?}", s.checks);
}

#[test]
fn failed_checks_give_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { tolerances: Tolerances { energy: 1e-300, ..Default::default() }, ..sample("quantize") };
    let result = run_scenario(&cfg, dir.path(), 0);
    assert!(!result.as_ref().unwrap().passed);
    assert_eq!(exit_code(&result), 1);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], false);
    assert_eq!(summary["checks"][1]["passed"], false);
}

// ---------- binary ----------

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_binary(&configs_dir().join("transition-check.json"), &out, &[]), 0);
    let bad = write_config(dir.path(), r#"{"scenario": "quantize", "germ": {"kind": "circle", "energy": 0.5}, "h": 0.1, "extra": true}"#);
    assert_eq!(run_binary(&bad, &out, &[]), 2);
    assert_eq!(run_binary(&dir.path().join("missing.json"), &out, &[]), 2);
    let negative = write_config(
        dir.path(),
        r#"{"scenario": "gaussian-packet", "germ": {"kind": "polynomial", "coefficients": [[0, 0], [0, 0], [0, -0.5]], "domain": [-1, 1]}, "h": 0.1}"#,
    );
    assert_eq!(run_binary(&negative, &out, &[]), 3);
    let strict = write_config(
        dir.path(),
        r#"{"scenario": "quantize", "germ": {"kind": "circle", "energy": 0.5}, "h": 0.01, "energy_range": [0.001, 0.05], "tolerances": {"energy": 1e-300}}"#,
    );
    assert_eq!(run_binary(&strict, &out, &[]), 1);
}

#[test]
fn thread_flags_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("transition-check.json");
    assert_eq!(run_binary(&cfg, dir.path(), &["--threads", "0"]), 2);
    let code =
        binary().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).env("GERMCANOP_THREADS", "zero").output().unwrap().status.code();
    assert_eq!(code, Some(2));
    let code =
        binary().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).env("GERMCANOP_THREADS", "2").output().unwrap().status.code();
    assert_eq!(code, Some(0));
}

#[test]
fn reruns_are_bit_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("gaussian-packet.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_binary(&cfg, &a, &["--threads", "1", "--seed", "5"]), 0);
    assert_eq!(run_binary(&cfg, &b, &["--threads", "3", "--seed", "5"]), 0);
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for name in names {
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn schema_flag_prints_the_schema() {
    let out = binary().arg("--print-schema").output().unwrap();
    assert!(out.status.success());
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["title"], "ScenarioConfig");
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn scenario() -> impl Strategy<Value = Scenario> {
        prop_oneof![Just(Scenario::TransitionCheck), Just(Scenario::GaussianPacket), Just(Scenario::TransformCheck)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn valid_configs_round_trip(
            sc in scenario(),
            curvature in 0.01f64..10.0,
            hs in prop::collection::vec(1e-4f64..1.0, 1..5),
            nodes in 2usize..5000,
            lower in -5.0f64..0.0,
            width in 0.01f64..5.0,
            seed in prop::option::of(any::<u64>()),
        ) {
            let cfg = ScenarioConfig {
                scenario: sc,
                germ: GermSpec::Point { curvature },
                h: None,
                h_list: Some(hs),
                grid: Some(GridSpec { lower, upper: lower + width, nodes }),
                seed,
                ..sample("transition-check")
            };
            prop_assert!(cfg.validate().is_ok());
            let again = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
            prop_assert_eq!(cfg, again);
        }
    }
}
