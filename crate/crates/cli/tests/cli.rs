use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn etdac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etdac")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_bundled(name: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scenario", name, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    etdac(&args)
}

fn two_agents(a: f64, b: f64) -> String {
    format!(
        r#"[agents]
count = 2

[topology]
edges = [[1, 2]]

[[signals]]
kind = "constant"
value = {a:?}

[[signals]]
kind = "constant"
value = {b:?}

[algorithm]
gamma = 1.0
mu1 = 1.0
mu2 = 0.01

[trigger]
f_bar = 0.1
delta = 1.0
alpha = 0.01
beta = 100.0

[gains]
sigma = 5.0
nu = 5.0
c0 = 2.0
c_hat0 = 1.0

[sim]
dt = 1e-3
horizon = 0.1
seed = 1
z0 = 0.0
"#
    )
}

#[test]
fn run_stats_verify_export() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("q");
    let o = run_bundled("quiescent", &trace, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["header.json", "agents.csv", "gains.csv", "events.csv", "topology.csv"] {
        assert!(trace.join(f).is_file(), "{f}");
    }

    let o = etdac(&["stats", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    // initial broadcast plus one reset after f_bar / delta = 10 s
    let totals: Vec<&str> = text
        .lines()
        .filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit()))
        .map(|l| l.split_whitespace().nth(3).unwrap())
        .collect();
    assert_eq!(totals, vec!["2"; 4], "{text}");

    let o = etdac(&["verify", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("checks passed"));

    let plots = dir.path().join("plots");
    let o = etdac(&["export-plots", trace.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["fig3_references.csv", "fig4_estimates.csv", "fig5_errors.csv", "fig6_gains.csv", "fig7_trigger.csv"] {
        assert!(plots.join(f).is_file(), "{f}");
    }
    let refs = fs::read_to_string(plots.join("fig3_references.csv")).unwrap();
    assert_eq!(refs.lines().next().unwrap(), "time,r_1,r_2,r_3,r_4,rbar_1");
}

#[test]
fn overrides_land_in_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t");
    let o = run_bundled("two_agent_oracle", &trace, &["--seed", "42", "--record-every", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let header = fs::read_to_string(trace.join("header.json")).unwrap();
    assert!(header.contains("\"seed\": 42"), "{header}");
    assert!(header.contains("\"record_every\": 5"), "{header}");
}

#[test]
fn single_agent_resets_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("s");
    assert_eq!(run_bundled("single_agent", &trace, &[]).status.code(), Some(0));
    let o = etdac(&["stats", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    // no neighbours: eta = 0, so low and min both equal f_bar / delta = 10 s
    let text = stdout(&o);
    let row = text.lines().find(|l| l.trim_start().starts_with('1')).unwrap();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cells[1..4], &["100000.0", "100000.0", "2"], "{text}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(etdac(&[]).status.code(), Some(1));
    assert_eq!(etdac(&["run", "--out", "x"]).status.code(), Some(1));
    assert_eq!(etdac(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(etdac(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let o = run_bundled("no_such_scenario", &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let o = etdac(&["stats", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_scenario_is_located() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = two_agents(1.0, 2.0).replace("gamma = 1.0", "gamma = \"fast\"");
    fs::write(&path, text).unwrap();
    let o = run_bundled(path.to_str().unwrap(), &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bad.toml"), "{err}");
    assert!(err.contains("line 16"), "{err}");
}

#[test]
fn overflow_aborts_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("huge.toml");
    fs::write(&path, two_agents(1.7e308, -1.7e308)).unwrap();
    let o = run_bundled(path.to_str().unwrap(), &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("aborted"));
}

#[test]
fn corrupted_gains_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("q");
    assert_eq!(run_bundled("quiescent", &trace, &[]).status.code(), Some(0));
    // push one c_hat above its c late in the run
    let gains = fs::read_to_string(trace.join("gains.csv")).unwrap();
    let mut lines: Vec<String> = gains.lines().map(str::to_string).collect();
    let k = lines.len() - 2;
    let mut cells: Vec<String> = lines[k].split(',').map(str::to_string).collect();
    cells[1] = "1000".into();
    lines[k] = cells.join(",");
    fs::write(trace.join("gains.csv"), lines.join("\n") + "\n").unwrap();

    let o = etdac(&["verify", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"), "{}", stdout(&o));
}
