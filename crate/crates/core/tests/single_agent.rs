//! An isolated agent has no coupling, so its internal state decays
//! geometrically under the Euler step and x tracks the reference.

use etdac::scenario_file::{bundled, load_scenario};
use etdac::sim::run;

#[test]
fn internal_state_matches_geometric_decay() {
    let sc = load_scenario(bundled("single_agent").unwrap()).unwrap();
    let trace = run(&sc).unwrap();
    let (gamma, dt): (f64, f64) = (sc.params.gamma(), sc.dt);
    let z0 = 3.0;
    for row in &trace.rows {
        let expect = z0 * (1.0 - gamma * dt).powi(row.step as i32);
        assert!((row.z[0] - expect).abs() < 1e-12 * z0, "step {}", row.step);
        assert!((row.x_tilde[0] - expect).abs() < 1e-12 * z0);
        assert!((row.x[0] - 5.0 - expect).abs() < 1e-12);
    }
    let last = trace.rows.last().unwrap();
    assert!((last.time - 10.0).abs() < 1e-9);
    assert!(last.x_tilde[0].abs() < 1e-3);
}

#[test]
fn isolated_agent_broadcasts_only_on_schedule() {
    let sc = load_scenario(bundled("single_agent").unwrap()).unwrap();
    let trace = run(&sc).unwrap();
    // eta is zero without neighbours, so f falls at rate delta from f_bar
    // and resets exactly every f_bar / delta = 10 s.
    let steps: Vec<u64> = trace.events.iter().map(|e| e.step).collect();
    assert_eq!(steps, vec![0, 10_000]);
}
