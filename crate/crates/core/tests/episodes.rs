use selfreg::harness::{
    compute_metrics, mean_of, run_episode, run_episode_for, sweep, validate_scenario, Trace,
};
use selfreg::world::Scenario;

const DEFAULT: &str = include_str!("../scenarios/default.json");
const SYMMETRIC: &str = include_str!("../scenarios/symmetric.json");

fn default_scenario() -> Scenario {
    validate_scenario(DEFAULT).expect("default scenario validates")
}

#[test]
fn shipped_scenarios_validate() {
    for (name, text) in [
        ("default", DEFAULT),
        ("symmetric", SYMMETRIC),
        ("misspecified", include_str!("../scenarios/misspecified.json")),
        ("dominant", include_str!("../scenarios/dominant.json")),
        ("equifinality", include_str!("../scenarios/equifinality.json")),
    ] {
        assert!(validate_scenario(text).is_ok(), "{name}");
    }
}

#[test]
fn trace_length_matches_horizon() {
    let mut sc = validate_scenario(SYMMETRIC).unwrap();
    sc.horizon = 100;
    let t = run_episode(&sc, 0).unwrap();
    assert_eq!(t.len(), 100);
    assert!(t.events().iter().enumerate().all(|(i, e)| e.tick == i as u64));
}

#[test]
fn same_seed_same_bytes() {
    let sc = default_scenario();
    let a = run_episode(&sc, 11).unwrap().to_jsonl();
    let b = run_episode(&sc, 11).unwrap().to_jsonl();
    assert_eq!(a, b);
}

#[test]
fn different_seeds_differ() {
    let sc = default_scenario();
    assert_ne!(run_episode(&sc, 1).unwrap(), run_episode(&sc, 2).unwrap());
}

#[test]
fn metrics_survive_trace_round_trip() {
    let t = run_episode(&default_scenario(), 3).unwrap();
    let reloaded = Trace::read_jsonl(t.to_jsonl().as_bytes()).unwrap();
    assert_eq!(compute_metrics(&t).unwrap(), compute_metrics(&reloaded).unwrap());
}

#[test]
fn attribution_is_total() {
    let t = run_episode(&default_scenario(), 4).unwrap();
    for e in t.events() {
        assert_eq!(
            e.selected_means.is_some(),
            e.pursued_root_need.is_some(),
            "tick {}",
            e.tick
        );
    }
    let m = compute_metrics(&t).unwrap();
    let attributed: u64 = m.attribution.values().sum();
    assert_eq!(attributed as f64, (1.0 - m.idle_fraction) * m.ticks as f64);
    assert!(m.monomania_index >= 1.0 / m.attribution.len() as f64 && m.monomania_index <= 1.0);
    assert!((0.0..=1.0).contains(&m.allocation_entropy));
}

#[test]
fn scripted_events_show_up() {
    let t = run_episode(&default_scenario(), 5).unwrap();
    let ev = t.events();
    assert!(ev[200..260]
        .iter()
        .all(|e| e.selected_means.as_deref() != Some("drill")));
    assert!(ev[400].override_active);
    assert!(ev[601].resource > ev[599].resource);
}

#[test]
fn steps_override_horizon() {
    let t = run_episode_for(&default_scenario(), 0, 37).unwrap();
    assert_eq!(t.len(), 37);
}

#[test]
fn sweep_rows() {
    let sc = default_scenario();
    let rows = sweep(&sc, &(0..10).collect::<Vec<_>>(), 200).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().enumerate().all(|(i, r)| r.seed == i as u64));

    let twice = sweep(&sc, &[6, 6], 200).unwrap();
    assert_eq!(twice[0], twice[1]);

    let mean = mean_of(&rows, |m| m.monomania_index);
    let direct = rows.iter().map(|r| r.metrics.monomania_index).sum::<f64>() / 10.0;
    assert!((mean - direct).abs() < 1e-12);
}

#[test]
fn validation_reports_violations() {
    let mut sc = default_scenario();
    sc.events[0].tick = sc.horizon + 1;
    sc.means[0].p_true.values_mut().for_each(|p| *p = 1.3);
    let v = validate_scenario(&sc.to_json()).unwrap_err();
    assert!(v.len() >= 2, "{v:?}");
    assert!(validate_scenario("{not json").is_err());
}
