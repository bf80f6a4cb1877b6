use std::fs;
use std::path::{Path, PathBuf};

use mfqnet::cli::{main_with, EXIT_IO, EXIT_NO_CONVERGENCE, EXIT_NUMERICAL, EXIT_OK, EXIT_PARSE, EXIT_VALIDATION};
use mfqnet::output::Provenance;
use mfqnet::spec_file::load_network;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("mfqnet").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn e1() -> String {
    data("e1.toml").display().to_string()
}

fn read_csv(path: &Path) -> (Provenance, Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let prov = Provenance::parse(lines.next().unwrap()).expect("provenance line");
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (prov, header, rows)
}

#[test]
fn validate_reports_derived_constants() {
    let r = run(&["validate", "--spec", &e1()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("h = (1.5, 1)"), "{}", r.stdout);
    assert!(r.stdout.contains("w* = (0, 0.025)"), "{}", r.stdout);
    assert!(r.stdout.contains("kappa = 0.1 "), "{}", r.stdout);
    assert!(r.stdout.contains("spectral radius rho(P) = 0"), "{}", r.stdout);
}

#[test]
fn parse_failures_exit_2() {
    assert_eq!(run(&["validate", "--spec", &data("malformed.toml").display().to_string()]).code, EXIT_PARSE);
    assert_eq!(run(&["validate", "--spec", "/nonexistent/net.toml"]).code, EXIT_PARSE);
    assert_eq!(run(&["validate"]).code, EXIT_PARSE);
    assert_eq!(run(&["frobnicate", "--spec", &e1()]).code, EXIT_PARSE);
    assert_eq!(run(&["nlmp", "--spec", &e1(), "--dt", "-1"]).code, EXIT_PARSE);
    assert_eq!(run(&["nlmp", "--spec", &e1(), "--init", "word:3"]).code, EXIT_PARSE);
}

#[test]
fn supercritical_network_exits_3() {
    let r = run(&["validate", "--spec", &data("supercritical.toml").display().to_string()]);
    assert_eq!(r.code, EXIT_VALIDATION);
    assert!(r.stderr.starts_with("error:"), "{}", r.stderr);
}

#[test]
fn stationary_with_short_horizon_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert_eq!(run(&["stationary", "--spec", &e1(), "--out-dir", &out, "--t-end", "1"]).code, EXIT_NO_CONVERGENCE);
}

#[test]
fn oversized_step_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert_eq!(run(&["nlmp", "--spec", &e1(), "--out-dir", &out, "--dt", "2"]).code, EXIT_NUMERICAL);
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let r = run(&["nlmp", "--spec", &e1(), "--out-dir", &blocker.display().to_string(), "--t-end", "1"]);
    assert_eq!(r.code, EXIT_IO);
}

#[test]
fn nlmp_writes_trajectory_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let r = run(&["nlmp", "--spec", &e1(), "--out-dir", &out, "--t-end", "5", "--every", "100", "--dump-every", "1"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);

    let hash = load_network(&data("e1.toml")).unwrap().hash().to_string();
    let (prov, header, rows) = read_csv(&dir.path().join("trajectory.csv"));
    assert_eq!(prov, Provenance::new(None, hash.clone()));
    assert_eq!(header, ["t", "mass", "leaked", "alpha", "L", "S", "drift", "u_1", "u_2", "w_1", "w_2", "v_1", "v_2"]);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[5][0], "5");

    let (prov, header, rows) = read_csv(&dir.path().join("measures.csv"));
    assert_eq!(prov.spec_hash, hash);
    assert_eq!(&header[..4], ["t", "-", "1", "2"]);
    assert_eq!(header.last().unwrap(), "leaked");
    assert_eq!(rows[0][1], "1");
}

#[test]
fn simulation_log_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub).display().to_string();
        let r = run(&[
            "simulate", "--spec", &e1(), "--out-dir", &out, "--M", "200", "--t-end", "20", "--seed", "5", "--log-copy", "3",
        ]);
        assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
        logs.push(fs::read(dir.path().join(sub).join("events.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);

    let (prov, header, rows) = read_csv(&dir.path().join("a").join("events.csv"));
    assert_eq!(prov.seed, Some(5));
    assert_eq!(header, ["time", "kind", "copy", "target", "class_before", "class_after"]);
    for row in &rows {
        assert!(row[2] == "3" || row[3] == "3", "event does not touch copy 3: {row:?}");
    }

    let (_, header, rows) = read_csv(&dir.path().join("a").join("simulation.csv"));
    assert_eq!(header[0], "t");
    assert!(header.contains(&"occupancy".to_string()));
    assert_eq!(rows.len(), 21);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-config");
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!("spec = {:?}\nout-dir = {:?}\nseed = 9\nt-end = 3.0\nM = 50\n", e1(), out.display().to_string()),
    )
    .unwrap();
    let cfg = cfg.display().to_string();

    assert_eq!(run(&["simulate", "--config", &cfg]).code, EXIT_OK);
    let (prov, _, rows) = read_csv(&out.join("simulation.csv"));
    assert_eq!(prov.seed, Some(9));
    assert_eq!(rows.last().unwrap()[0], "3");

    assert_eq!(run(&["simulate", "--config", &cfg, "--seed", "10"]).code, EXIT_OK);
    let (prov, _, _) = read_csv(&out.join("simulation.csv"));
    assert_eq!(prov.seed, Some(10));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "colour = 3\n").unwrap();
    assert_eq!(run(&["validate", "--spec", &e1(), "--config", &bad.display().to_string()]).code, EXIT_PARSE);
}

#[test]
fn ergodicity_of_identical_states_crosses_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let r = run(&[
        "ergodicity", "--spec", &e1(), "--out-dir", &out, "--trunc-K", "3", "--t-end", "2", "--first", "word:1", "--second", "word:1",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("first at t = 0"), "{}", r.stdout);
    let (_, header, rows) = read_csv(&dir.path().join("ergodicity.csv"));
    assert_eq!(header, ["t", "tv", "r_mass", "tv_coupled"]);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() < 1e-12));
}

#[test]
fn couple_writes_coupling_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let r = run(&["couple", "--spec", &e1(), "--out-dir", &out, "--trunc-K", "3", "--t-end", "10"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let (_, header, rows) = read_csv(&dir.path().join("coupling.csv"));
    assert_eq!(&header[..7], ["t", "w_mass", "r_mass", "leaked", "tv_bound", "tv_actual", "red_L"]);
    assert_eq!(rows[0][2], "1");
    for row in &rows {
        let r: f64 = row[2].parse().unwrap();
        let tv: f64 = row[5].parse().unwrap();
        assert!(tv <= r + 1e-12);
    }
}

#[test]
fn compare_and_stationary_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let r = run(&["compare", "--spec", &e1(), "--out-dir", &out, "--M", "500", "--t-end", "2000", "--sample-every", "100"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let (_, header, rows) = read_csv(&dir.path().join("ks.csv"));
    assert_eq!(header, ["class", "rate", "n", "statistic", "p_value"]);
    assert_eq!(rows.len(), 2);
    let (_, _, rows) = read_csv(&dir.path().join("compare.csv"));
    assert_eq!(rows.len(), 21);

    let r = run(&["stationary", "--spec", &e1(), "--out-dir", &out]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let (_, header, rows) = read_csv(&dir.path().join("stationary.csv"));
    assert_eq!(header[1], "-");
    let empty: f64 = rows[0][1].parse().unwrap();
    assert!((empty - 0.875).abs() < 1e-6, "{empty}");
}

#[test]
fn help_exits_0() {
    let r = run(&["--help"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stdout.contains("stationary"));
}
