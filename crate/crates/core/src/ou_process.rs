//! Stationary Ornstein-Uhlenbeck temperature model.
//!
//! `dX_t = l·β·(μ - X_t) dt + √β dB_t`, stationary law `N(μ, 1/(2l))`.
//! Paths are produced by Euler-Maruyama; daily suprema and infima are the
//! max and min of the grid samples falling in each `[i, i+1)` window.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{domain, standard_normal, StreamKey};

/// Parameter triple `θ = (β, μ, l)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OUParams {
    /// Volatility-squared scale, °C²/day.
    pub beta: f64,
    /// Stationary mean, °C.
    pub mu: f64,
    /// Inverse of twice the stationary variance, 1/°C².
    pub l: f64,
}

impl OUParams {
    pub fn new(beta: f64, mu: f64, l: f64) -> Result<Self> {
        let p = Self { beta, mu, l };
        p.validate()?;
        Ok(p)
    }

    /// `β > 0` and `l > 0`, all finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        self.validate_allow_zero_beta()
    }

    /// As [`validate`](Self::validate) but admits the deterministic limit `β = 0`.
    pub fn validate_allow_zero_beta(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu must be finite"));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::invalid(format!("l must be positive, got {}", self.l)));
        }
        Ok(())
    }

    pub fn stationary_variance(&self) -> f64 {
        1.0 / (2.0 * self.l)
    }

    pub fn stationary_sd(&self) -> f64 {
        self.stationary_variance().sqrt()
    }

    /// Mean-reversion rate `l·β` (1/day).
    pub fn relaxation(&self) -> f64 {
        self.l * self.beta
    }

    /// Exact transition from `x` over `tau` days: returns (mean, sd).
    pub fn transition(&self, x: f64, tau: f64) -> (f64, f64) {
        let decay = (-self.relaxation() * tau).exp();
        let var = self.stationary_variance() * (1.0 - decay * decay);
        (self.mu + (x - self.mu) * decay, var.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    /// `X₀ ~ N(μ, 1/(2l))`, drawn before any driving noise.
    Stationary,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Euler step in days.
    pub dt: f64,
    pub horizon_days: usize,
    pub seed: u64,
    pub initial: InitialState,
}

impl SimConfig {
    pub fn new(dt: f64, horizon_days: usize, seed: u64, initial: InitialState) -> Result<Self> {
        let cfg = Self { dt, horizon_days, seed, initial };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::invalid(format!("dt must lie in (0, 1], got {}", self.dt)));
        }
        if self.horizon_days < 1 {
            return Err(Error::invalid("horizon must be at least one day"));
        }
        if let InitialState::Fixed(x) = self.initial {
            if !x.is_finite() {
                return Err(Error::invalid("initial value must be finite"));
            }
        }
        Ok(())
    }

    /// Euler steps per day. `1/dt` is rounded; non-integer ratios are rejected.
    pub fn steps_per_day(&self) -> Result<usize> {
        steps_per_day(self.dt)
    }

    fn rng(&self) -> ChaCha8Rng {
        StreamKey::new(self.seed, domain::OU_PATH).stream(0)
    }
}

pub(crate) fn steps_per_day(dt: f64) -> Result<usize> {
    let n = (1.0 / dt).round();
    if n < 1.0 || ((n * dt) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("1/dt must be an integer, got dt = {dt}")));
    }
    Ok(n as usize)
}

/// Per-day suprema (and optionally infima) over windows of length `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyExtrema {
    pub sup: Vec<f64>,
    pub inf: Option<Vec<f64>>,
    /// Window length in days.
    pub h: f64,
    /// Indices `i > 0` where day `i` does not follow day `i - 1` (pooled
    /// samples from several seasons). Empty for one contiguous record.
    pub breaks: Vec<usize>,
}

impl DailyExtrema {
    pub fn new(sup: Vec<f64>, inf: Option<Vec<f64>>) -> Result<Self> {
        let d = Self { sup, inf, h: 1.0, breaks: Vec::new() };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::invalid("window length h must be positive"));
        }
        if self.sup.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("suprema must be finite"));
        }
        if let Some(inf) = &self.inf {
            if inf.len() != self.sup.len() {
                return Err(Error::invalid(format!(
                    "sup and inf lengths differ ({} vs {})",
                    self.sup.len(),
                    inf.len()
                )));
            }
            if let Some(i) = inf.iter().zip(&self.sup).position(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::invalid(format!("inf[{i}] exceeds sup[{i}]")));
            }
        }
        if self.breaks.iter().any(|&b| b == 0 || b >= self.sup.len().max(1)) {
            return Err(Error::invalid("segment breaks must lie inside the series"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sup.is_empty()
    }

    /// True when day `i` directly follows day `i - 1`.
    pub fn is_contiguous(&self, i: usize) -> bool {
        i > 0 && !self.breaks.contains(&i)
    }

    /// Add `c` °C to every observation.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            sup: self.sup.iter().map(|v| v + c).collect(),
            inf: self.inf.as_ref().map(|v| v.iter().map(|x| x + c).collect()),
            h: self.h,
            breaks: self.breaks.clone(),
        }
    }

    /// First `n` days.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            sup: self.sup[..n].to_vec(),
            inf: self.inf.as_ref().map(|v| v[..n].to_vec()),
            h: self.h,
            breaks: self.breaks.iter().copied().filter(|&b| b < n).collect(),
        }
    }
}

fn initial_value<R: Rng + ?Sized>(params: &OUParams, initial: InitialState, rng: &mut R) -> f64 {
    match initial {
        InitialState::Stationary => params.mu + params.stationary_sd() * standard_normal(rng),
        InitialState::Fixed(x) => x,
    }
}

/// Euler-Maruyama iterate.
#[inline]
pub(crate) fn euler_step(x: f64, drift_rate: f64, mu: f64, dt: f64, noise_scale: f64, z: f64) -> f64 {
    x + drift_rate * (mu - x) * dt + noise_scale * z
}

/// Full Euler path sampled every `dt`, `horizon_days / dt + 1` points.
pub fn simulate_path(params: &OUParams, cfg: &SimConfig) -> Result<Vec<f64>> {
    params.validate_allow_zero_beta()?;
    cfg.validate()?;
    let dt = cfg.dt;
    let n = cfg.horizon_days * steps_per_day(dt)?;
    let rate = params.relaxation();
    let scale = (params.beta * dt).sqrt();
    let mut rng = cfg.rng();
    let mut path = Vec::with_capacity(n + 1);
    let mut x = initial_value(params, cfg.initial, &mut rng);
    path.push(x);
    for _ in 0..n {
        x = euler_step(x, rate, params.mu, dt, scale, standard_normal(&mut rng));
        path.push(x);
    }
    Ok(path)
}

/// Daily extrema of a grid path: day `i` covers samples `k` with `k·dt ∈ [i, i+1)`.
/// The trailing partial day (including the final endpoint sample) is dropped.
pub fn extract_daily_extrema(path: &[f64], dt: f64) -> Result<DailyExtrema> {
    let spd = steps_per_day(dt)?;
    let days = path.len() / spd;
    if days == 0 {
        return Err(Error::invalid(format!(
            "path of {} samples is shorter than one day ({} samples)",
            path.len(),
            spd
        )));
    }
    let mut sup = Vec::with_capacity(days);
    let mut inf = Vec::with_capacity(days);
    for chunk in path.chunks_exact(spd).take(days) {
        let (lo, hi) = chunk.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        sup.push(hi);
        inf.push(lo);
    }
    Ok(DailyExtrema { sup, inf: Some(inf), h: 1.0, breaks: Vec::new() })
}

/// Streaming equivalent of `extract_daily_extrema(simulate_path(..))` that
/// never materialises the path. Bit-identical to the two-step route.
pub fn simulate_daily_extrema(params: &OUParams, cfg: &SimConfig) -> Result<DailyExtrema> {
    params.validate_allow_zero_beta()?;
    cfg.validate()?;
    let mut rng = cfg.rng();
    let x0 = initial_value(params, cfg.initial, &mut rng);
    let (sup, inf, _) = daily_extrema_from(params, x0, cfg.dt, cfg.horizon_days, &mut rng)?;
    Ok(DailyExtrema { sup, inf: Some(inf), h: 1.0, breaks: Vec::new() })
}

/// Run `days` whole days from `x0`; returns (sup, inf, final state).
pub(crate) fn daily_extrema_from<R: Rng + ?Sized>(
    params: &OUParams,
    x0: f64,
    dt: f64,
    days: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let spd = steps_per_day(dt)?;
    let rate = params.relaxation();
    let scale = (params.beta * dt).sqrt();
    let mut sup = Vec::with_capacity(days);
    let mut inf = Vec::with_capacity(days);
    let mut x = x0;
    for _ in 0..days {
        let (mut lo, mut hi) = (x, x);
        for _ in 1..spd {
            x = euler_step(x, rate, params.mu, dt, scale, standard_normal(rng));
            lo = lo.min(x);
            hi = hi.max(x);
        }
        sup.push(hi);
        inf.push(lo);
        // step onto the first sample of the next day
        x = euler_step(x, rate, params.mu, dt, scale, standard_normal(rng));
    }
    Ok((sup, inf, x))
}

/// Fraction of daily suprema `<= a`.
pub fn empirical_sup_cdf(data: &DailyExtrema, a: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empirical CDF of an empty sample"));
    }
    let below = data.sup.iter().filter(|&&s| s <= a).count();
    Ok(below as f64 / data.len() as f64)
}

/// Sorted-sample empirical CDF with O(log n) evaluation.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empirical CDF of an empty sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("sample contains NaN"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn eval(&self, a: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= a) as f64 / self.sorted.len() as f64
    }

    /// Linear-interpolation quantile (Hyndman-Fan type 7).
    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p)
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

/// Type-7 quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Kolmogorov-Smirnov distance between two samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}
