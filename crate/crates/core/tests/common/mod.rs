#![allow(dead_code)]

use chrono::NaiveDate;
use ouheat::cli_io::{Quality, StationDataset};
use ouheat::ou_process::{simulate_daily_extrema, InitialState, OUParams, SimConfig};

pub const THETA0: OUParams = OUParams { beta: 47.5, mu: 22.0, l: 0.02 };
pub const PARIS: OUParams = OUParams { beta: 34.35, mu: 19.04, l: 0.02633 };

/// Stationary OU record over whole calendar years, rounded to 0.1 °C like
/// station data.
pub fn synthetic_station(params: &OUParams, first: i32, last: i32, seed: u64) -> StationDataset {
    let start = NaiveDate::from_ymd_opt(first, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(last, 12, 31).unwrap();
    let dates: Vec<NaiveDate> = start.iter_days().take_while(|d| *d <= end).collect();
    let cfg = SimConfig::new(1e-3, dates.len(), seed, InitialState::Stationary).unwrap();
    let d = simulate_daily_extrema(params, &cfg).unwrap();
    let round = |v: f64| (v * 10.0).round() / 10.0;
    StationDataset {
        station_id: "900".into(),
        tmax: d.sup.iter().map(|&v| Some(round(v))).collect(),
        tmin: d.inf.unwrap().iter().map(|&v| Some(round(v))).collect(),
        quality: vec![Quality::Valid; dates.len()],
        dates,
    }
}

/// Maximum and minimum over `[0, t]` of an Euler path from `x0`.
pub fn euler_extrema(params: &OUParams, x0: f64, t: f64, dt: f64, rng: &mut impl rand::Rng) -> (f64, f64) {
    let steps = (t / dt).round() as usize;
    let rate = params.l * params.beta;
    let scale = (params.beta * dt).sqrt();
    let (mut x, mut hi, mut lo) = (x0, x0, x0);
    for _ in 0..steps {
        x += rate * (params.mu - x) * dt + scale * ouheat::rng::standard_normal(rng);
        hi = hi.max(x);
        lo = lo.min(x);
    }
    (hi, lo)
}
