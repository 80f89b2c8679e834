//! Quantile least-squares estimation of `θ = (β, μ, l)` from daily suprema.
//!
//! `Q_n(θ) = Σ_j [F*(s_j; θ, h) - F_n*(s_j)]²` over a fixed set of empirical
//! quantiles `s_j`, minimised by Nelder-Mead over a box derived from the
//! data.

pub mod nelder_mead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou_process::{
    quantile_sorted, simulate_daily_extrema, DailyExtrema, EmpiricalCdf, InitialState, OUParams, SimConfig,
};
use crate::rng::{domain, StreamKey};
use crate::sup_cdf::{CdfGrid, SupCdf};
use nelder_mead::{minimize, NelderMeadConfig};

pub const DEFAULT_LEVELS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const LI_SHAO_PROBES: [f64; 4] = [0.7, 0.8, 0.9, 0.95];

/// Probability levels and the empirical quantiles of the suprema at those
/// levels. Built once per sample and never recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileAnchors {
    pub levels: Vec<f64>,
    pub s_values: Vec<f64>,
}

impl QuantileAnchors {
    pub fn from_data(data: &DailyExtrema, levels: &[f64]) -> Result<Self> {
        check_levels(levels)?;
        let cdf = EmpiricalCdf::new(&data.sup)?;
        let s_values = levels.iter().map(|&p| cdf.quantile(p)).collect();
        Ok(Self { levels: levels.to_vec(), s_values })
    }

    pub fn validate(&self) -> Result<()> {
        check_levels(&self.levels)?;
        if self.s_values.len() != self.levels.len() {
            return Err(Error::invalid("anchor levels and values differ in length"));
        }
        if self.s_values.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("anchor values must be nondecreasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.len() < 3 {
        return Err(Error::invalid("need at least 3 quantile levels to identify 3 parameters"));
    }
    if levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) || levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("quantile levels must be strictly increasing in (0, 1)"));
    }
    Ok(())
}

/// Search box `[0, β_max] × [μ_min, μ_max] × [l_min, l_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub beta_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub l_min: f64,
    pub l_max: f64,
}

impl ParamBox {
    pub fn contains(&self, p: &OUParams) -> bool {
        p.beta > 0.0
            && p.beta <= self.beta_max
            && (self.mu_min..=self.mu_max).contains(&p.mu)
            && (self.l_min..=self.l_max).contains(&p.l)
    }

    fn bounds(&self) -> [(f64, f64); 3] {
        [(0.0, self.beta_max), (self.mu_min, self.mu_max), (self.l_min, self.l_max)]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Bounds on each parameter from simple statistics of the sample.
pub fn compute_param_box(data: &DailyExtrema) -> Result<ParamBox> {
    data.validate()?;
    let inf = data.inf.as_deref().ok_or_else(|| Error::Data("the parameter box needs daily infima".into()))?;
    let sup = &data.sup;
    let n = sup.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 days, got {n}")));
    }

    let m_max = mean(sup);
    let m_min = mean(inf);
    let rec_max = sup.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rec_min = inf.iter().copied().fold(f64::INFINITY, f64::min);

    let d = (rec_min - m_max).abs().max((rec_max - m_min).abs());
    if !(d > 0.0) {
        return Err(Error::Degenerate("all observations are equal".into()));
    }
    let l_min = 1.0 / (2.0 * d * d);

    // Gaussian-type tail bound on the centred suprema
    let mut centred: Vec<f64> = sup.iter().map(|s| s - m_max).collect();
    centred.sort_by(f64::total_cmp);
    let floor = 1.0 / (2.0 * n as f64);
    let mut l_max = f64::INFINITY;
    for p in LI_SHAO_PROBES {
        let x = quantile_sorted(&centred, p);
        if x <= 0.0 {
            continue;
        }
        let exceed = centred.len() - centred.partition_point(|&c| c < x);
        let p_hat = (exceed as f64 / n as f64).max(floor);
        l_max = l_max.min(-p_hat.ln() / (x * x));
    }
    if !l_max.is_finite() {
        return Err(Error::Degenerate("no positive centred supremum to probe the upper l bound".into()));
    }

    let mut qv = 0.0;
    for i in 1..n {
        if !data.is_contiguous(i) {
            continue;
        }
        qv += (sup[i] - inf[i - 1]).powi(2).max((inf[i] - sup[i - 1]).powi(2));
    }
    let beta_max = qv / (n as f64 * data.h);
    if !(beta_max > 0.0) {
        return Err(Error::Degenerate("no contiguous day pairs to bound beta".into()));
    }

    let b = ParamBox { beta_max, mu_min: m_min, mu_max: m_max, l_min, l_max };
    if l_max < l_min {
        return Err(Error::Degenerate(format!("upper l bound {l_max:.4e} lies below the variance bound {l_min:.4e}")));
    }
    Ok(b)
}

/// `Q_n` evaluator with frozen anchors and empirical targets.
#[derive(Debug, Clone)]
pub struct Objective {
    cdf: SupCdf,
    anchors: QuantileAnchors,
    targets: Vec<f64>,
    h: f64,
}

impl Objective {
    pub fn new(data: &DailyExtrema, anchors: QuantileAnchors, grid: &CdfGrid) -> Result<Self> {
        anchors.validate()?;
        let emp = EmpiricalCdf::new(&data.sup)?;
        let targets = anchors.s_values.iter().map(|&s| emp.eval(s)).collect();
        Ok(Self { cdf: SupCdf::new(*grid)?, anchors, targets, h: data.h })
    }

    pub fn anchors(&self) -> &QuantileAnchors {
        &self.anchors
    }

    /// `F*(s_j; θ) - F_n*(s_j)` for every anchor.
    pub fn residuals(&self, theta: &OUParams) -> Result<Vec<f64>> {
        theta.validate()?;
        self.anchors
            .s_values
            .par_iter()
            .zip(&self.targets)
            .map(|(&s, &target)| Ok(self.cdf.stationary_sup(s, theta, self.h)?.p - target))
            .collect()
    }

    pub fn value(&self, theta: &OUParams) -> Result<f64> {
        Ok(self.residuals(theta)?.iter().map(|r| r * r).sum())
    }
}

pub fn objective_qn(theta: &OUParams, anchors: &QuantileAnchors, data: &DailyExtrema, grid: &CdfGrid) -> Result<f64> {
    Objective::new(data, anchors.clone(), grid)?.value(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Simplex diameter threshold, in logistic coordinates.
    pub tol: f64,
    pub initial_step: f64,
    /// Start points as fractions of the box, one triple `(β, μ, l)` each.
    pub starts: Vec<[f64; 3]>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-3,
            initial_step: 0.5,
            starts: vec![[0.5, 0.5, 0.5], [0.25, 0.25, 0.75], [0.75, 0.75, 0.25], [0.25, 0.75, 0.25]],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.tol > 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::Config("optimizer needs max_iter > 0, tol > 0, initial_step > 0".into()));
        }
        if self.starts.is_empty() {
            return Err(Error::Config("optimizer needs at least one start point".into()));
        }
        if self.starts.iter().flatten().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::Config("start fractions must lie strictly inside (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: OUParams,
    pub objective: f64,
    #[serde(rename = "box")]
    pub bounds: ParamBox,
    pub anchors: QuantileAnchors,
    /// Nelder-Mead iterations of the winning start.
    pub iterations: usize,
    /// Number of starts run.
    pub restarts_used: usize,
    pub per_anchor_residuals: Vec<f64>,
    /// `Q_n` at each start point, in start order.
    pub start_objectives: Vec<f64>,
    pub converged: bool,
}

fn logistic(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained coordinates onto the free box coordinates.
struct BoxMap {
    bounds: Vec<(f64, f64)>,
}

impl BoxMap {
    fn to_box(&self, y: &[f64]) -> Vec<f64> {
        self.bounds.iter().zip(y).map(|(&(lo, hi), &y)| lo + (hi - lo) * logistic(y)).collect()
    }
}

fn run(
    objective: &Objective,
    bounds: ParamBox,
    fixed_beta: Option<f64>,
    opt: &OptimizerConfig,
) -> Result<EstimationResult> {
    opt.validate()?;
    let all = bounds.bounds();
    let free: Vec<usize> = if fixed_beta.is_some() { vec![1, 2] } else { vec![0, 1, 2] };
    let map = BoxMap { bounds: free.iter().map(|&i| all[i]).collect() };
    let assemble = |x: &[f64]| -> OUParams {
        match fixed_beta {
            Some(beta) => OUParams { beta, mu: x[0], l: x[1] },
            None => OUParams { beta: x[0], mu: x[1], l: x[2] },
        }
    };
    let eval = |y: &[f64]| -> f64 {
        let theta = assemble(&map.to_box(y));
        match objective.value(&theta) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("objective failed at {theta:?}: {e}");
                f64::INFINITY
            }
        }
    };

    let nm = NelderMeadConfig { max_iter: opt.max_iter, tol: opt.tol, initial_step: opt.initial_step };
    let runs: Vec<(f64, nelder_mead::Minimum)> = opt
        .starts
        .par_iter()
        .map(|frac| {
            let y0: Vec<f64> = free.iter().map(|&i| logit(frac[i])).collect();
            (eval(&y0), minimize(eval, &y0, &nm))
        })
        .collect();

    let start_objectives: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1.f.is_finite())
        .min_by(|a, b| a.1 .1.f.total_cmp(&b.1 .1.f))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::Estimation(format!("no start produced a finite objective (start values {start_objectives:?})"))
        })?;
    let m = &runs[best].1;
    let theta_hat = assemble(&map.to_box(&m.x));
    let per_anchor_residuals = objective.residuals(&theta_hat)?;
    Ok(EstimationResult {
        theta_hat,
        objective: per_anchor_residuals.iter().map(|r| r * r).sum(),
        bounds,
        anchors: objective.anchors.clone(),
        iterations: m.iterations,
        restarts_used: runs.len(),
        per_anchor_residuals,
        start_objectives,
        converged: m.converged,
    })
}

fn prepare(data: &DailyExtrema, anchors: Option<QuantileAnchors>, grid: &CdfGrid) -> Result<(Objective, ParamBox)> {
    let bounds = compute_param_box(data)?;
    let anchors = match anchors {
        Some(a) => a,
        None => QuantileAnchors::from_data(data, &DEFAULT_LEVELS)?,
    };
    Ok((Objective::new(data, anchors, grid)?, bounds))
}

/// Minimise `Q_n` over the data-driven box.
pub fn estimate(
    data: &DailyExtrema,
    anchors: Option<QuantileAnchors>,
    grid: &CdfGrid,
    opt: &OptimizerConfig,
) -> Result<EstimationResult> {
    let (objective, bounds) = prepare(data, anchors, grid)?;
    run(&objective, bounds, None, opt)
}

/// As [`estimate`] with `β` held at `beta_fixed`.
pub fn estimate_2d(
    data: &DailyExtrema,
    beta_fixed: f64,
    anchors: Option<QuantileAnchors>,
    grid: &CdfGrid,
    opt: &OptimizerConfig,
) -> Result<EstimationResult> {
    if !(beta_fixed > 0.0 && beta_fixed.is_finite()) {
        return Err(Error::invalid("fixed beta must be positive"));
    }
    let (objective, bounds) = prepare(data, anchors, grid)?;
    run(&objective, bounds, Some(beta_fixed), opt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingLag {
    pub lag: usize,
    pub corr_identity: f64,
    pub corr_indicator: f64,
    pub bound: f64,
    pub pass: bool,
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Lag-`r` correlations of simulated daily suprema against the exponential
/// mixing bound `e^{-lβr}` plus a `3/√n` sampling slack.
///
/// The bound is applied to the gap between windows, `r - 1` days for
/// windows `r` days apart, since adjacent windows share an endpoint.
pub fn mixing_decay_check(
    params: &OUParams,
    lags: &[usize],
    n_days: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<MixingLag>> {
    params.validate()?;
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if n_days <= max_lag + 2 {
        return Err(Error::invalid("n_days must exceed the largest lag"));
    }
    let cfg = SimConfig::new(dt, n_days, StreamKey::new(seed, domain::MIXING).child(0).seed, InitialState::Stationary)?;
    let sup = simulate_daily_extrema(params, &cfg)?.sup;
    let mut sorted = sup.clone();
    sorted.sort_by(f64::total_cmp);
    let q80 = quantile_sorted(&sorted, 0.8);
    let ind: Vec<f64> = sup.iter().map(|&s| if s > q80 { 1.0 } else { 0.0 }).collect();
    let slack = 3.0 / (n_days as f64).sqrt();
    Ok(lags
        .iter()
        .map(|&lag| {
            let (ci, cd) = if lag == 0 {
                (1.0, 1.0)
            } else {
                let m = sup.len() - lag;
                (correlation(&sup[..m], &sup[lag..]), correlation(&ind[..m], &ind[lag..]))
            };
            let gap = lag.saturating_sub(1) as f64;
            let bound = if lag == 0 { 1.0 } else { (-params.relaxation() * gap).exp() + slack };
            MixingLag {
                lag,
                corr_identity: ci,
                corr_indicator: cd,
                bound,
                pass: ci.abs() <= bound && cd.abs() <= bound,
            }
        })
        .collect())
}

/// Smallest distance between anchor vectors `(F*(s_j; θ))_j` over pairs of
/// distinct parameter points. A positive value on a grid is numerical
/// evidence that `θ ↦ F*(s·; θ)` is injective there.
pub fn anchor_separation(points: &[OUParams], anchors: &QuantileAnchors, h: f64, grid: &CdfGrid) -> Result<f64> {
    let cdf = SupCdf::new(*grid)?;
    let vectors: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| anchors.s_values.iter().map(|&s| Ok(cdf.stationary_sup(s, p, h)?.p)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut min = f64::INFINITY;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let d = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            min = min.min(d);
        }
    }
    Ok(min)
}
