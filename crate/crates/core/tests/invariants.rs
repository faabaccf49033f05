//! Properties that hold for any connected scenario with c0 >= c_hat0 >= 1 and a
//! step small enough that the Euler gain update does not overshoot.

use etdac::scenario_file::load_scenario;
use etdac::sim::{run, Scenario};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Shape {
    n: usize,
    extra: Vec<(usize, usize)>,
    signals: Vec<(f64, f64, bool)>,
    c0: f64,
    c_hat0: f64,
    f_bar: f64,
    seed: u64,
}

fn shape() -> impl Strategy<Value = Shape> {
    (2usize..6).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..4),
            prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0, any::<bool>()), n),
            1.0f64..20.0,
            0.0f64..1.0,
            0.01f64..0.5,
            any::<u64>(),
        )
            .prop_map(|(n, extra, signals, c0, frac, f_bar, seed)| Shape {
                n,
                extra,
                signals,
                c0,
                c_hat0: 1.0 + (c0 - 1.0) * frac,
                f_bar,
                seed,
            })
    })
}

/// A path through all agents keeps the graph connected; extra chords vary it.
fn toml_of(s: &Shape) -> String {
    let mut edges: Vec<(usize, usize)> = (1..s.n).map(|i| (i, i + 1)).collect();
    for &(a, b) in &s.extra {
        let (a, b) = (a.min(b) + 1, a.max(b) + 1);
        if a != b && !edges.contains(&(a, b)) {
            edges.push((a, b));
        }
    }
    let edges: Vec<String> = edges.iter().map(|(a, b)| format!("[{a}, {b}]")).collect();
    let mut t = format!("[agents]\ncount = {}\n\n[topology]\nedges = [{}]\n\n", s.n, edges.join(", "));
    for &(amp, freq, sin) in &s.signals {
        let phase = if sin { "sin" } else { "cos" };
        t += &format!(
            "[[signals]]\nkind = \"sinusoid\"\namplitude = {amp:?}\nfrequency = {freq:?}\nphase = \"{phase}\"\n\n"
        );
    }
    t += "[algorithm]\ngamma = 1.0\nmu1 = 1.0\nmu2 = 0.01\n\n";
    t += &format!("[trigger]\nf_bar = {:?}\ndelta = 1.0\nalpha = 0.01\nbeta = 100.0\n\n", s.f_bar);
    t += &format!("[gains]\nsigma = 5.0\nnu = 5.0\nc0 = {:?}\nc_hat0 = {:?}\n\n", s.c0, s.c_hat0);
    t += &format!(
        "[sim]\ndt = 1e-3\nhorizon = 0.5\nseed = {}\nrecord_every = 1\nz0 = {{ uniform = [-2.0, 2.0] }}\n",
        s.seed
    );
    t
}

fn scenario(s: &Shape) -> Scenario {
    load_scenario(&toml_of(s)).expect("generated scenario parses")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gains_stay_ordered_and_c_hat_never_falls(s in shape()) {
        let trace = run(&scenario(&s)).unwrap();
        for w in trace.rows.windows(2) {
            for k in 0..trace.edges.len() {
                prop_assert!(w[1].c[k] >= w[1].c_hat[k] - 1e-12);
                prop_assert!(w[1].c_hat[k] >= w[0].c_hat[k] - 1e-12);
            }
        }
    }

    #[test]
    fn trigger_stays_in_range(s in shape()) {
        let trace = run(&scenario(&s)).unwrap();
        for r in &trace.rows {
            for &f in &r.f {
                prop_assert!(f > 0.0 && f <= s.f_bar, "f = {f}");
            }
        }
    }

    #[test]
    fn broadcast_is_held_between_events(s in shape()) {
        let trace = run(&scenario(&s)).unwrap();
        for i in 0..s.n {
            let events: Vec<_> = trace.events_of(i).collect();
            for r in &trace.rows {
                let last = events.iter().rev().find(|e| e.step <= r.step).expect("initial event");
                prop_assert_eq!(r.x_hat[i], last.x_hat);
                prop_assert!((r.e[i] - (r.x_hat[i] - r.x[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coupling_conserves_the_internal_sum(s in shape()) {
        let sc = scenario(&s);
        let trace = run(&sc).unwrap();
        let z0: f64 = trace.meta.initial.z0.iter().sum();
        for r in &trace.rows {
            let expect = z0 * (1.0 - sc.params.gamma() * sc.dt).powi(r.step as i32);
            let sum: f64 = r.z.iter().sum();
            prop_assert!((sum - expect).abs() < 1e-9, "step {}: {sum} vs {expect}", r.step);
        }
    }

    #[test]
    fn runs_are_reproducible(s in shape()) {
        let sc = scenario(&s);
        prop_assert_eq!(run(&sc).unwrap(), run(&sc).unwrap());
    }
}
