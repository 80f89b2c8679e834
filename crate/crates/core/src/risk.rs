//! Heat-wave risk measures by Monte Carlo over simulated summers.
//!
//! A heat wave is a run of at least `Δ` consecutive days whose maxima and
//! minima stay above thresholds. Seasons are independent stationary draws.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou_process::{daily_extrema_from, euler_step, quantile_sorted, steps_per_day, OUParams};
use crate::rng::{domain, standard_normal, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeatwaveDefinition {
    /// Daily maxima `>= a_max` and daily minima `>= a_min`.
    TwoThreshold { a_max: f64, a_min: f64 },
    /// Daily minima `>= a`.
    SingleThreshold { a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatwaveSpec {
    pub definition: HeatwaveDefinition,
    /// Minimum run length in days.
    pub delta: usize,
    pub season_days: usize,
}

impl HeatwaveSpec {
    pub fn new(definition: HeatwaveDefinition, delta: usize, season_days: usize) -> Result<Self> {
        let s = Self { definition, delta, season_days };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta < 1 {
            return Err(Error::invalid("heat-wave length delta must be at least 1"));
        }
        if self.season_days < self.delta {
            return Err(Error::invalid("season shorter than the heat-wave length"));
        }
        match self.definition {
            HeatwaveDefinition::TwoThreshold { a_max, a_min } => {
                if !(a_min < a_max) || !a_min.is_finite() || !a_max.is_finite() {
                    return Err(Error::invalid("two-threshold heat wave needs finite a_min < a_max"));
                }
            }
            HeatwaveDefinition::SingleThreshold { a } => {
                if !a.is_finite() {
                    return Err(Error::invalid("threshold must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Floor the daily minimum must stay above.
    fn min_floor(&self) -> f64 {
        match self.definition {
            HeatwaveDefinition::TwoThreshold { a_min, .. } => a_min,
            HeatwaveDefinition::SingleThreshold { a } => a,
        }
    }

    fn day_qualifies(&self, sup: f64, inf: f64) -> bool {
        match self.definition {
            HeatwaveDefinition::TwoThreshold { a_max, a_min } => sup >= a_max && inf >= a_min,
            HeatwaveDefinition::SingleThreshold { a } => inf >= a,
        }
    }
}

/// First heat wave of a season: days `[tau_in, tau_out)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatwave {
    pub tau_in: usize,
    pub tau_out: usize,
}

impl Heatwave {
    pub fn duration(&self) -> usize {
        self.tau_out - self.tau_in
    }
}

/// Tracks runs of qualifying days and reports the first run of length `>= Δ`.
#[derive(Debug, Clone, Copy)]
struct RunTracker {
    delta: usize,
    run: usize,
}

impl RunTracker {
    /// Feed day `day`; returns the heat wave once its run has ended.
    fn push(&mut self, day: usize, qualifies: bool) -> Option<Heatwave> {
        if qualifies {
            self.run += 1;
            return None;
        }
        let done = (self.run >= self.delta).then(|| Heatwave { tau_in: day - self.run, tau_out: day });
        self.run = 0;
        done
    }

    fn finish(&self, days: usize) -> Option<Heatwave> {
        (self.run >= self.delta).then(|| Heatwave { tau_in: days - self.run, tau_out: days })
    }
}

/// First window of `Δ` qualifying days and the longest qualifying run
/// starting there.
pub fn detect_heatwave(sup: &[f64], inf: &[f64], spec: &HeatwaveSpec) -> Result<Option<Heatwave>> {
    spec.validate()?;
    if sup.len() != inf.len() {
        return Err(Error::invalid(format!("sup and inf lengths differ ({} vs {})", sup.len(), inf.len())));
    }
    let mut tracker = RunTracker { delta: spec.delta, run: 0 };
    for (day, (&s, &i)) in sup.iter().zip(inf).enumerate() {
        if let Some(hw) = tracker.push(day, spec.day_qualifies(s, i)) {
            return Ok(Some(hw));
        }
    }
    Ok(tracker.finish(sup.len()))
}

/// How seasons are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Plain Euler on every step. Random-number use does not depend on the
    /// thresholds, so runs with different thresholds share paths.
    Full,
    /// Once a day can no longer qualify (the path fell below the minimum
    /// floor), jump to the next day with the exact OU transition, and stop a
    /// season once its outcome is settled. Same law, far fewer steps.
    #[default]
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSimConfig {
    pub n_sims: usize,
    pub seed: u64,
    pub dt: f64,
    pub mode: SimMode,
}

impl RiskSimConfig {
    pub fn new(n_sims: usize, seed: u64, dt: f64) -> Self {
        Self { n_sims, seed, dt, mode: SimMode::Skip }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sims < 1 {
            return Err(Error::invalid("need at least one simulation"));
        }
        steps_per_day(self.dt)?;
        Ok(())
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Conditional mean over the samples where the conditioning event held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEstimate {
    /// `None` when no sample satisfied the condition.
    pub estimate: Option<Estimate>,
    pub events: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatwaveStats {
    pub probability: Estimate,
    /// Mean of `τ_out - τ_in` over seasons with a heat wave, in days.
    pub mean_duration: ConditionalEstimate,
    pub n_sims: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(mut self, x: f64) -> Self {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
        self
    }

    fn merge(self, o: Self) -> Self {
        Self { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    fn estimate(&self) -> Option<Estimate> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        Some(Estimate { value: mean, std_error: (var / n).sqrt() })
    }
}

/// Stationary start for one season or block.
fn stationary_draw<R: Rng + ?Sized>(params: &OUParams, rng: &mut R) -> f64 {
    params.mu + params.stationary_sd() * standard_normal(rng)
}

/// Exact OU move over `tau` days.
fn exact_move<R: Rng + ?Sized>(params: &OUParams, x: f64, tau: f64, rng: &mut R) -> f64 {
    let (m, s) = params.transition(x, tau);
    m + s * standard_normal(rng)
}

fn season_full<R: Rng + ?Sized>(
    params: &OUParams,
    spec: &HeatwaveSpec,
    dt: f64,
    rng: &mut R,
) -> Result<Option<Heatwave>> {
    let x0 = stationary_draw(params, rng);
    let (sup, inf, _) = daily_extrema_from(params, x0, dt, spec.season_days, rng)?;
    detect_heatwave(&sup, &inf, spec)
}

fn season_skip<R: Rng + ?Sized>(
    params: &OUParams,
    spec: &HeatwaveSpec,
    spd: usize,
    dt: f64,
    rng: &mut R,
) -> Option<Heatwave> {
    let floor = spec.min_floor();
    let rate = params.relaxation();
    let scale = (params.beta * dt).sqrt();
    let mut tracker = RunTracker { delta: spec.delta, run: 0 };
    let mut x = stationary_draw(params, rng);
    for day in 0..spec.season_days {
        // even a full run from here on could not reach Δ days
        if tracker.run + (spec.season_days - day) < spec.delta {
            return None;
        }
        let mut hi = x;
        let mut k = 0;
        let mut failed = x < floor;
        while !failed && k + 1 < spd {
            x = euler_step(x, rate, params.mu, dt, scale, standard_normal(rng));
            hi = hi.max(x);
            k += 1;
            failed = x < floor;
        }
        let qualifies = if failed {
            x = exact_move(params, x, (spd - k) as f64 * dt, rng);
            false
        } else {
            // x >= floor held on every sample, so the daily minimum qualifies
            let q = spec.day_qualifies(hi, floor);
            x = euler_step(x, rate, params.mu, dt, scale, standard_normal(rng));
            q
        };
        if let Some(hw) = tracker.push(day, qualifies) {
            return Some(hw);
        }
    }
    tracker.finish(spec.season_days)
}

/// Occurrence probability and mean duration of heat waves over `n_sims`
/// independent seasons. Season `j` uses stream `j`, so results do not depend
/// on the thread count.
pub fn simulate_heatwaves(params: &OUParams, spec: &HeatwaveSpec, cfg: &RiskSimConfig) -> Result<HeatwaveStats> {
    params.validate()?;
    spec.validate()?;
    cfg.validate()?;
    let spd = steps_per_day(cfg.dt)?;
    let key = StreamKey::new(cfg.seed, domain::HEATWAVE);
    let durations: Moments = (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = key.stream(j);
            match cfg.mode {
                SimMode::Full => season_full(params, spec, cfg.dt, &mut rng),
                SimMode::Skip => Ok(season_skip(params, spec, spd, cfg.dt, &mut rng)),
            }
        })
        .try_fold(Moments::default, |m, hw| {
            Ok::<_, Error>(match hw? {
                Some(hw) => m.push(hw.duration() as f64),
                None => m,
            })
        })
        .try_reduce(Moments::default, |a, b| Ok(a.merge(b)))?;
    let n = cfg.n_sims as f64;
    let p = durations.n as f64 / n;
    Ok(HeatwaveStats {
        probability: Estimate { value: p, std_error: (p * (1.0 - p) / n).sqrt() },
        mean_duration: ConditionalEstimate {
            estimate: durations.estimate(),
            events: durations.n,
            samples: cfg.n_sims as u64,
        },
        n_sims: cfg.n_sims as u64,
        seed: cfg.seed,
    })
}

/// `P(a heat wave occurs in the season)`.
pub fn heatwave_probability(params: &OUParams, spec: &HeatwaveSpec, cfg: &RiskSimConfig) -> Result<Estimate> {
    Ok(simulate_heatwaves(params, spec, cfg)?.probability)
}

/// `E[τ_out - τ_in | a heat wave occurs]`.
pub fn mean_duration(params: &OUParams, spec: &HeatwaveSpec, cfg: &RiskSimConfig) -> Result<ConditionalEstimate> {
    Ok(simulate_heatwaves(params, spec, cfg)?.mean_duration)
}

/// Area of `X - a` over a `Δ`-day block, or `None` if the path dips below `a`.
fn severity_block<R: Rng + ?Sized>(params: &OUParams, a: f64, steps: usize, dt: f64, rng: &mut R) -> Option<f64> {
    let rate = params.relaxation();
    let scale = (params.beta * dt).sqrt();
    let mut x = stationary_draw(params, rng);
    let mut area = 0.0;
    for k in 0..steps {
        if x < a {
            return None;
        }
        area += (x - a) * dt;
        if k + 1 < steps {
            x = euler_step(x, rate, params.mu, dt, scale, standard_normal(rng));
        }
    }
    Some(area)
}

/// `E[∫ (X_s - a) ds over Δ days | daily minima >= a over those days]`,
/// in °C·days. Stationarity lets every block start afresh from the
/// stationary law; blocks are rejected as soon as the path drops below `a`.
pub fn severity_area(params: &OUParams, a: f64, delta: usize, cfg: &RiskSimConfig) -> Result<ConditionalEstimate> {
    params.validate()?;
    cfg.validate()?;
    if delta < 1 {
        return Err(Error::invalid("delta must be at least 1"));
    }
    if !a.is_finite() {
        return Err(Error::invalid("threshold must be finite"));
    }
    let steps = delta * steps_per_day(cfg.dt)?;
    let key = StreamKey::new(cfg.seed, domain::SEVERITY);
    let m = (0..cfg.n_sims as u64)
        .into_par_iter()
        .fold(Moments::default, |m, j| match severity_block(params, a, steps, cfg.dt, &mut key.stream(j)) {
            Some(area) => m.push(area),
            None => m,
        })
        .reduce(Moments::default, Moments::merge);
    Ok(ConditionalEstimate { estimate: m.estimate(), events: m.n, samples: cfg.n_sims as u64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayInterval {
    /// Day index, `0` is the day starting at the initial condition.
    pub day: usize,
    pub lower: f64,
    pub upper: f64,
    pub median: f64,
}

/// Pointwise Monte Carlo intervals for the daily maxima of the next
/// `horizon_days` days, starting from `X₀ = x0`.
pub fn prediction_intervals(
    params: &OUParams,
    x0: f64,
    horizon_days: usize,
    level: f64,
    cfg: &RiskSimConfig,
) -> Result<Vec<DayInterval>> {
    params.validate_allow_zero_beta()?;
    cfg.validate()?;
    if horizon_days < 1 {
        return Err(Error::invalid("horizon must be at least one day"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    if !x0.is_finite() {
        return Err(Error::invalid("initial value must be finite"));
    }
    let key = StreamKey::new(cfg.seed, domain::PREDICTION);
    let paths: Vec<Vec<f64>> = (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|j| daily_extrema_from(params, x0, cfg.dt, horizon_days, &mut key.stream(j)).map(|(sup, _, _)| sup))
        .collect::<Result<_>>()?;
    let tail = (1.0 - level) / 2.0;
    Ok((0..horizon_days)
        .map(|day| {
            let mut col: Vec<f64> = paths.iter().map(|p| p[day]).collect();
            col.sort_by(f64::total_cmp);
            DayInterval {
                day,
                lower: quantile_sorted(&col, tail),
                upper: quantile_sorted(&col, 1.0 - tail),
                median: quantile_sorted(&col, 0.5),
            }
        })
        .collect())
}

/// Heat-wave and severity results for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub probability: Estimate,
    /// Days.
    pub mean_duration: ConditionalEstimate,
    /// °C·days, single threshold `a_min` (or `a`) over the first `Δ` days.
    pub severity_area: ConditionalEstimate,
    pub n_sims: u64,
    pub severity_sims: u64,
    pub seed: u64,
}

pub fn risk_report(
    params: &OUParams,
    spec: &HeatwaveSpec,
    cfg: &RiskSimConfig,
    severity_sims: usize,
) -> Result<RiskReport> {
    let hw = simulate_heatwaves(params, spec, cfg)?;
    let sev_cfg = RiskSimConfig { n_sims: severity_sims, ..*cfg };
    let severity = severity_area(params, spec.min_floor(), spec.delta, &sev_cfg)?;
    Ok(RiskReport {
        probability: hw.probability,
        mean_duration: hw.mean_duration,
        severity_area: severity,
        n_sims: hw.n_sims,
        severity_sims: severity_sims as u64,
        seed: cfg.seed,
    })
}
