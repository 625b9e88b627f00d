use std::sync::Arc;

use squareice::connect::{Adjacency, EventSpec, LevelPredicate};
use squareice::estimate::{diameter_decay, estimate_event, rsw_spot_check, variance_scan, RunSettings};
use squareice::lattice::{build_even_box, build_split_square, BoundaryCondition};

fn mc(seed: u64, sweeps: u64, thin: u64) -> RunSettings {
    RunSettings { seed, chains: 4, sweeps: Some(sweeps), thin: Some(thin), use_oracle: false, ..RunSettings::default() }
}

#[test]
fn split_square_bound_holds_exactly_and_by_sampling() {
    let (q, bc) = build_split_square(3).unwrap();
    let spec = EventSpec::crossing(&q.rotated(), LevelPredicate::at_least(2), Adjacency::Cross);
    let exact = estimate_event(&q.domain, &bc, &spec, &RunSettings::default()).unwrap();
    let f = exact.exact.clone().unwrap();
    assert!(2 * f.num.parse::<u128>().unwrap() >= f.den.parse::<u128>().unwrap());
    let s = estimate_event(&q.domain, &bc, &spec, &mc(3, 40_000, 2)).unwrap();
    assert!((s.p_hat - exact.p_hat).abs() <= 3.0 * s.sigma());
}

#[test]
fn sampled_crossing_reproduces_oracle() {
    let d = Arc::new(build_even_box(2).unwrap());
    let bc = BoundaryCondition::zero(&d).unwrap();
    for adj in [Adjacency::NN, Adjacency::Cross] {
        let spec = EventSpec::rect_crossing(-2, 2, -1, 1, false, LevelPredicate::at_least(0), adj);
        let exact = estimate_event(&d, &bc, &spec, &RunSettings::default()).unwrap();
        assert!(exact.exact.is_some());
        let s = estimate_event(&d, &bc, &spec, &mc(8, 20_000, 1)).unwrap();
        assert!((s.p_hat - exact.p_hat).abs() <= 3.0 * s.sigma(), "{adj:?}: {} vs {}", s.p_hat, exact.p_hat);
    }
}

#[test]
fn estimators_are_deterministic_in_the_seed() {
    let run = mc(21, 500, 5);
    let a = variance_scan(&[4, 8], &run).unwrap();
    let b = variance_scan(&[4, 8], &run).unwrap();
    assert_eq!(a, b);
    let c = variance_scan(&[4, 8], &mc(22, 500, 5)).unwrap();
    assert_ne!(a, c);
    let threaded = variance_scan(&[4, 8], &RunSettings { threads: 3, ..run }).unwrap();
    assert_eq!(a, threaded);
}

#[test]
fn rsw_spot_check_at_small_size() {
    let r = rsw_spot_check(8, 2, &mc(5, 200_000, 40)).unwrap();
    for s in [&r.vertical, &r.horizontal_narrow, &r.horizontal] {
        assert!(s.p_hat - 3.0 * s.sigma() > 0.0, "{}: {}", s.label, s.p_hat);
        assert!(s.p_hat + 3.0 * s.sigma() < 1.0, "{}: {}", s.label, s.p_hat);
    }
    assert!(r.horizontal.p_hat >= r.horizontal_narrow.p_hat - 3.0 * r.horizontal.sigma().max(r.horizontal_narrow.sigma()));
    assert!(r.implication_holds);
}

#[test]
fn large_clusters_become_rare_at_high_levels() {
    let r = diameter_decay(4, 2, &[1, 2, 3, 4], &mc(9, 40_000, 4)).unwrap();
    let slope = r.slope.expect("at least two levels with positive frequency");
    assert!(slope < 0.0, "{slope}");
    for w in r.rows.windows(2) {
        assert!(w[1].stats.p_hat <= w[0].stats.p_hat + 3.0 * w[0].stats.sigma().max(w[1].stats.sigma()));
    }
}
