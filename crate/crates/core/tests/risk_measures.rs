//! Heat-wave detection and Monte Carlo risk measures.

mod common;

use common::{PARIS, THETA0};
use ouheat::risk::{
    detect_heatwave, heatwave_probability, prediction_intervals, severity_area, simulate_heatwaves, HeatwaveDefinition,
    HeatwaveSpec, RiskSimConfig, SimMode,
};
use rand::{Rng, SeedableRng};

fn two(a_max: f64, a_min: f64) -> HeatwaveSpec {
    HeatwaveSpec::new(HeatwaveDefinition::TwoThreshold { a_max, a_min }, 3, 61).unwrap()
}

fn brute_force(sup: &[f64], inf: &[f64], spec: &HeatwaveSpec) -> Option<(usize, usize)> {
    let ok = |i: usize| match spec.definition {
        HeatwaveDefinition::TwoThreshold { a_max, a_min } => sup[i] >= a_max && inf[i] >= a_min,
        HeatwaveDefinition::SingleThreshold { a } => inf[i] >= a,
    };
    let n = sup.len();
    let start = (0..=n - spec.delta).find(|&i| (i..i + spec.delta).all(ok))?;
    let mut end = start + spec.delta;
    while end < n && ok(end) {
        end += 1;
    }
    Some((start, end))
}

#[test]
fn detection_matches_window_scan() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let n = rng.random_range(1..40);
        let delta = rng.random_range(1..=n.min(5));
        let spec = if case % 2 == 0 {
            HeatwaveSpec::new(HeatwaveDefinition::TwoThreshold { a_max: 31.0, a_min: 21.0 }, delta, n).unwrap()
        } else {
            HeatwaveSpec::new(HeatwaveDefinition::SingleThreshold { a: 21.0 }, delta, n).unwrap()
        };
        let sup: Vec<f64> = (0..n).map(|_| rng.random_range(29.0..34.0)).collect();
        let inf: Vec<f64> = (0..n).map(|_| rng.random_range(19.0..24.0)).collect();
        let got = detect_heatwave(&sup, &inf, &spec).unwrap().map(|h| (h.tau_in, h.tau_out));
        assert_eq!(got, brute_force(&sup, &inf, &spec), "case {case}: {sup:?} {inf:?} delta {delta}");
    }
}

#[test]
fn two_thresholds_are_rarer_than_one() {
    let cfg = RiskSimConfig { mode: SimMode::Full, ..RiskSimConfig::new(20_000, 3, 1e-2) };
    let both = simulate_heatwaves(&PARIS, &two(31.0, 21.0), &cfg).unwrap();
    let single = HeatwaveSpec::new(HeatwaveDefinition::SingleThreshold { a: 21.0 }, 3, 61).unwrap();
    let one = simulate_heatwaves(&PARIS, &single, &cfg).unwrap();
    assert!(both.probability.value <= one.probability.value);
    assert!(one.probability.value > 0.0);
}

#[test]
fn raising_thresholds_never_increases_probability() {
    let cfg = RiskSimConfig { mode: SimMode::Full, ..RiskSimConfig::new(20_000, 4, 1e-2) };
    let mut prev = 1.0;
    for a_max in [27.0, 29.0, 31.0, 33.0] {
        let p = heatwave_probability(&PARIS, &two(a_max, 19.0), &cfg).unwrap().value;
        assert!(p <= prev, "a_max {a_max}: {p} > {prev}");
        prev = p;
    }
    let mut prev = 1.0;
    for a_min in [17.0, 19.0, 21.0, 23.0] {
        let p = heatwave_probability(&PARIS, &two(29.0, a_min), &cfg).unwrap().value;
        assert!(p <= prev, "a_min {a_min}: {p} > {prev}");
        prev = p;
    }
}

#[test]
fn far_thresholds_and_saturated_duration() {
    let sd = PARIS.stationary_sd();
    let low = two(PARIS.mu - 10.0 * sd, PARIS.mu - 12.0 * sd);
    let s = simulate_heatwaves(&PARIS, &low, &RiskSimConfig::new(500, 5, 1e-2)).unwrap();
    assert_eq!(s.probability.value, 1.0);
    assert_eq!(s.mean_duration.estimate.unwrap().value, 61.0);

    let high = two(PARIS.mu + 12.0 * sd, PARIS.mu + 10.0 * sd);
    let s = simulate_heatwaves(&PARIS, &high, &RiskSimConfig::new(500, 5, 1e-2)).unwrap();
    assert_eq!(s.probability.value, 0.0);
    assert!(s.mean_duration.estimate.is_none());
}

#[test]
fn severity_grows_as_threshold_drops() {
    let cfg = RiskSimConfig::new(1_000_000, 6, 1e-2);
    let hi = severity_area(&THETA0, 26.67, 3, &cfg).unwrap().estimate.unwrap();
    let lo = severity_area(&THETA0, 25.0, 3, &cfg).unwrap().estimate.unwrap();
    assert!(hi.value >= 0.0);
    assert!(lo.value > hi.value, "{lo:?} vs {hi:?}");
}

#[test]
fn more_seasons_agree_with_fewer() {
    let spec = two(31.0, 21.0);
    let a = heatwave_probability(&PARIS, &spec, &RiskSimConfig::new(100_000, 7, 1e-2)).unwrap();
    let b = heatwave_probability(&PARIS, &spec, &RiskSimConfig::new(200_000, 8, 1e-2)).unwrap();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.value - b.value).abs() < 3.0 * se, "{a:?} vs {b:?}");
}

#[test]
fn prediction_widths_and_degenerate_process() {
    let cfg = RiskSimConfig::new(4000, 9, 1e-3);
    let days = prediction_intervals(&PARIS, 17.0, 10, 0.95, &cfg).unwrap();
    assert_eq!(days.len(), 10);
    for w in days.windows(2) {
        let (w0, w1) = (w[0].upper - w[0].lower, w[1].upper - w[1].lower);
        // allow the Monte Carlo wobble of a 4000-path quantile once saturated
        assert!(w1 >= w0 - 0.3, "day {}: {w1} < {w0}", w[1].day);
        assert!(w[0].lower <= w[0].median && w[0].median <= w[0].upper);
    }
    assert!(days[9].upper - days[9].lower > days[0].upper - days[0].lower);

    let frozen = ouheat::ou_process::OUParams { beta: 0.0, ..PARIS };
    for d in prediction_intervals(&frozen, PARIS.mu, 5, 0.95, &cfg).unwrap() {
        assert_eq!((d.lower, d.upper), (PARIS.mu, PARIS.mu));
    }
}

#[test]
fn monte_carlo_is_seed_deterministic() {
    let spec = two(31.0, 21.0);
    let cfg = RiskSimConfig::new(5000, 10, 1e-2);
    assert_eq!(simulate_heatwaves(&PARIS, &spec, &cfg).unwrap(), simulate_heatwaves(&PARIS, &spec, &cfg).unwrap());
    assert_eq!(severity_area(&THETA0, 26.0, 3, &cfg).unwrap(), severity_area(&THETA0, 26.0, 3, &cfg).unwrap());
    assert_eq!(
        prediction_intervals(&PARIS, 20.0, 5, 0.9, &cfg).unwrap(),
        prediction_intervals(&PARIS, 20.0, 5, 0.9, &cfg).unwrap()
    );
    let other = RiskSimConfig::new(5000, 11, 1e-2);
    assert_ne!(simulate_heatwaves(&PARIS, &spec, &cfg).unwrap(), simulate_heatwaves(&PARIS, &spec, &other).unwrap());
}
