use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gridform_core::scenario::parse_state;
use gridform_core::{bundled, StateLayout};

const TABLE2: &str = include_str!("../../core/scenarios/table2_2inv.toml");

fn gridform(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridform"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_toml(path: &Path) -> toml::Table {
    fs::read_to_string(path).unwrap().parse().unwrap()
}

fn certificates(t: &toml::Table) -> &Vec<toml::Value> {
    t["certificates"].as_array().unwrap()
}

fn margin(c: &toml::Value) -> f64 {
    c["margin"].as_float().unwrap()
}

#[test]
fn simulate_then_share_passes_on_the_terminal_window() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridform(&["simulate", "--scenario", "table1_5bus"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("summary.toml").exists());

    let o = gridform(&["share", "--scenario", "table1_5bus"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_toml(&dir.path().join("share.toml"));
    assert_eq!(report["pass"].as_bool(), Some(true));
    let cert = &certificates(&report)[0];
    let dev = cert["values"]["max_relative_deviation"][0].as_float().unwrap();
    assert!(dev < 0.02, "deviation {dev}");
}

#[test]
fn simulate_output_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = gridform(&["simulate", "--scenario", "table2_2inv"], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in ["trajectory.csv", "summary.toml"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn trajectory_header_lists_time_then_channels() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridform(&["simulate", "--scenario", "table2_2inv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "time");
    for name in ["f_1", "vdc_2", "iod_1", "vod_2", "vb_1", "vb_2"] {
        assert!(header.contains(&name), "missing {name}");
    }
}

#[test]
fn passivity_certifies_every_inverter_of_the_five_bus_system() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridform(&["passivity", "--scenario", "table1_5bus"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_toml(&dir.path().join("passivity.toml"));
    let certs = certificates(&report);
    assert_eq!(certs.len(), 5);
    assert!(certs.iter().all(|c| margin(c) > 0.0));

    let sweep = fs::read_to_string(dir.path().join("passivity.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1001);
}

#[test]
fn sweep_flags_set_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridform(
        &["passivity", "--scenario", "table2_2inv", "--sweep-points", "50", "--omega-min", "1", "--omega-max", "1e3"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sweep = fs::read_to_string(dir.path().join("passivity.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 50);
    let first: f64 = rows[0].split(',').next().unwrap().parse().unwrap();
    let last: f64 = rows[49].split(',').next().unwrap().parse().unwrap();
    assert!((first - 1.0).abs() < 1e-12 && (last - 1e3).abs() < 1e-9);
}

#[test]
fn certify_passes_with_positive_margin() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridform(&["certify", "--scenario", "table1_5bus"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_toml(&dir.path().join("certify.toml"));
    let cert = &certificates(&report)[0];
    assert_eq!(cert["kind"].as_str(), Some("theorem3"));
    assert!(margin(cert) > 0.0);
}

#[test]
fn certify_fails_with_code_3_when_tau_is_not_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let text = TABLE2.replace("chi = 0.144", "chi = 0.144\nk_i = 20.0");
    let path = dir.path().join("mixed.toml");
    fs::write(&path, text).unwrap();
    let o = gridform(&["certify", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let report = read_toml(&dir.path().join("certify.toml"));
    assert_eq!(report["pass"].as_bool(), Some(false));
}

#[test]
fn equilibrium_file_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridform(&["equilibrium", "--scenario", "table2_2inv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("equilibrium.toml")).unwrap();
    let spec = bundled("table2_2inv").unwrap().scenario.spec;
    let layout = StateLayout {
        inverters: 2,
        buses: spec.network.bus_count(),
        edges: spec.network.graph.edge_count(),
    };
    let state = parse_state(&text, layout).unwrap();
    assert!((state.x[layout.v_dc(0)] - 1000.0).abs() < 1.0);
}

#[test]
fn schema_error_exits_1_and_names_the_inverter() {
    let dir = tempfile::tempdir().unwrap();
    let text = TABLE2.replace("chi = 0.144", "chi = 0.144\n[inverters.params]\nrf = -0.1");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let o = gridform(&["equilibrium", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("DG2"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_and_names_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("extra.toml");
    fs::write(&path, TABLE2.replace("nominal_voltage = 311.0", "nominal_voltage = 311.0\nvoltage = 1.0")).unwrap();
    let o = gridform(&["equilibrium", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    let o = gridform(&["simulate", "--scenario", "no_such_scenario"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn infeasible_load_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = TABLE2.replace("inductance = 0.02451", "inductance = 0.02451\npower = 1e6");
    let path = dir.path().join("heavy.toml");
    fs::write(&path, text).unwrap();
    let o = gridform(&["equilibrium", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!dir.path().join("equilibrium.toml").exists());
}

#[test]
fn seeded_scenarios_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = gridform(&["equilibrium", "--seed", "11"], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let x = fs::read(a.path().join("equilibrium.toml")).unwrap();
    let y = fs::read(b.path().join("equilibrium.toml")).unwrap();
    assert_eq!(x, y);
}
