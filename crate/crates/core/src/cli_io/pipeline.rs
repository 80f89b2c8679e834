//! Stage orchestration and output files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::dataset::{ingest, StationDataset};
use crate::error::{Error, Result};
use crate::estimator::{compute_param_box, estimate, estimate_2d, EstimationResult, ParamBox, QuantileAnchors};
use crate::ou_process::{quantile_sorted, simulate_daily_extrema, DailyExtrema, InitialState, OUParams, SimConfig};
use crate::risk::{prediction_intervals, risk_report, RiskReport, RiskSimConfig};
use crate::rng::{domain, standard_normal, StreamKey};
use crate::sup_cdf::SupCdf;

pub const SCHEMA_VERSION: u32 = 1;
/// Invalid-day share above which a season is reported.
const SEASON_DROP_WARNING: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Sample,
    Bounds,
    Estimate,
    Risk,
    Validation,
    Predict,
    Study,
    Trajectories,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// Process exit code: 2 configuration, 3 data, 4 estimation.
    pub fn exit_code(&self) -> i32 {
        match (&self.source, self.stage) {
            (Error::Config(_), _) | (_, Stage::Config) => 2,
            (Error::InvalidInput(_), _) => 2,
            (Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Degenerate(_), _) => 3,
            (Error::Estimation(_) | Error::Numerical(_), _) => 4,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// A value with its unit and, for Monte Carlo quantities, a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

impl Quantity {
    fn exact(value: f64, unit: &'static str) -> Self {
        Self { value, unit, std_error: None }
    }
    fn mc(value: f64, std_error: f64, unit: &'static str) -> Self {
        Self { value, unit, std_error: Some(std_error) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeasonDrops {
    pub year: i32,
    pub expected: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropReport {
    pub seasons: Vec<SeasonDrops>,
    pub total_days: usize,
    pub dropped_days: usize,
    /// Years whose invalid share exceeds 10%.
    pub warnings: Vec<i32>,
}

/// Pool the season windows of the train years into one sample. Invalid or
/// absent days are dropped; a dropped day and every year start break the
/// day-to-day chain.
pub fn build_train_sample(ds: &StationDataset, cfg: &RunConfig) -> Result<(DailyExtrema, DropReport)> {
    let years = cfg.train_years.ok_or_else(|| Error::Config("no train years configured".into()))?;
    if years.is_empty() {
        return Err(Error::Config("train year range is empty".into()));
    }
    let (mut sup, mut inf, mut breaks) = (Vec::new(), Vec::new(), Vec::new());
    let mut report = DropReport { seasons: vec![], total_days: 0, dropped_days: 0, warnings: vec![] };
    for year in years.years() {
        let dates = cfg.season.dates(year)?;
        let mut dropped = 0;
        let mut chain_broken = true;
        for date in &dates {
            match ds.index_of(*date).filter(|&i| ds.is_valid(i)) {
                Some(i) => {
                    if chain_broken && !sup.is_empty() {
                        breaks.push(sup.len());
                    }
                    sup.push(ds.tmax[i].unwrap_or_default());
                    inf.push(ds.tmin[i].unwrap_or_default());
                    chain_broken = false;
                }
                None => {
                    dropped += 1;
                    chain_broken = true;
                }
            }
        }
        if dropped as f64 > SEASON_DROP_WARNING * dates.len() as f64 {
            log::warn!("season {year}: {dropped} of {} days invalid or missing", dates.len());
            report.warnings.push(year);
        }
        report.total_days += dates.len();
        report.dropped_days += dropped;
        report.seasons.push(SeasonDrops { year, expected: dates.len(), dropped });
    }
    if sup.is_empty() {
        return Err(Error::Data("no valid days in the train years".into()));
    }
    let data = DailyExtrema { sup, inf: Some(inf), h: 1.0, breaks };
    data.validate()?;
    Ok((data, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QqPoint {
    pub level: f64,
    /// °C.
    pub theoretical: f64,
    /// °C.
    pub empirical: f64,
}

/// Model versus sample quantiles of the daily maxima at 0.05, 0.10, …, 0.95.
pub fn qq_points(data: &DailyExtrema, params: &OUParams, grid: &crate::sup_cdf::CdfGrid) -> Result<Vec<QqPoint>> {
    let cdf = SupCdf::new(*grid)?;
    let mut sorted = data.sup.clone();
    sorted.sort_by(f64::total_cmp);
    (1..=19)
        .map(|k| {
            let level = k as f64 * 0.05;
            Ok(QqPoint {
                level,
                theoretical: cdf.sup_inverse(level, params, data.h)?,
                empirical: quantile_sorted(&sorted, level),
            })
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsReport {
    pub beta: Quantity,
    pub mu: Quantity,
    pub l: Quantity,
}

impl From<&OUParams> for ParamsReport {
    fn from(p: &OUParams) -> Self {
        Self {
            beta: Quantity::exact(p.beta, "degC^2/day"),
            mu: Quantity::exact(p.mu, "degC"),
            l: Quantity::exact(p.l, "1/degC^2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxReport {
    pub beta_max: Quantity,
    pub mu_min: Quantity,
    pub mu_max: Quantity,
    pub l_min: Quantity,
    pub l_max: Quantity,
}

impl From<&ParamBox> for BoxReport {
    fn from(b: &ParamBox) -> Self {
        Self {
            beta_max: Quantity::exact(b.beta_max, "degC^2/day"),
            mu_min: Quantity::exact(b.mu_min, "degC"),
            mu_max: Quantity::exact(b.mu_max, "degC"),
            l_min: Quantity::exact(b.l_min, "1/degC^2"),
            l_max: Quantity::exact(b.l_max, "1/degC^2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationReport {
    pub theta_hat: ParamsReport,
    #[serde(rename = "box")]
    pub bounds: BoxReport,
    pub objective: Quantity,
    pub anchors: QuantileAnchors,
    pub per_anchor_residuals: Vec<f64>,
    pub iterations: usize,
    pub restarts_used: usize,
    pub start_objectives: Vec<f64>,
    pub converged: bool,
    pub fixed_beta: bool,
}

impl EstimationReport {
    fn new(r: &EstimationResult, fixed_beta: bool) -> Self {
        Self {
            theta_hat: (&r.theta_hat).into(),
            bounds: (&r.bounds).into(),
            objective: Quantity::exact(r.objective, "probability^2"),
            anchors: r.anchors.clone(),
            per_anchor_residuals: r.per_anchor_residuals.clone(),
            iterations: r.iterations,
            restarts_used: r.restarts_used,
            start_objectives: r.start_objectives.clone(),
            converged: r.converged,
            fixed_beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataReport {
    pub station_id: String,
    pub train_days: usize,
    pub drops: DropReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QqReport {
    pub spearman: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskBlock {
    pub params: ParamsReport,
    pub probability: Quantity,
    pub mean_duration: Option<Quantity>,
    pub heatwave_seasons: u64,
    pub severity_area: Option<Quantity>,
    pub severity_blocks_accepted: u64,
    pub n_sims: u64,
    pub severity_sims: u64,
    pub dt: Quantity,
}

impl RiskBlock {
    fn new(p: &OUParams, r: &RiskReport, dt: f64) -> Self {
        Self {
            params: p.into(),
            probability: Quantity::mc(r.probability.value, r.probability.std_error, "probability per season"),
            mean_duration: r.mean_duration.estimate.map(|e| Quantity::mc(e.value, e.std_error, "days")),
            heatwave_seasons: r.mean_duration.events,
            severity_area: r.severity_area.estimate.map(|e| Quantity::mc(e.value, e.std_error, "degC*days")),
            severity_blocks_accepted: r.severity_area.events,
            n_sims: r.n_sims,
            severity_sims: r.severity_sims,
            dt: Quantity::exact(dt, "days"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub start: NaiveDate,
    pub initial_value: Quantity,
    pub level: f64,
    pub observed_days: usize,
    pub inside: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub n_days: usize,
    pub fixed_beta: bool,
    pub replications: usize,
    pub failures: usize,
    pub relative_rmse_beta: f64,
    pub relative_rmse_mu: f64,
    pub relative_rmse_l: f64,
}

/// Everything `report.json` may contain. Absent blocks are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq: Option<QqReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<Vec<StudySummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
}

impl Report {
    fn new(command: Command, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.name().into(),
            seed,
            data: None,
            estimation: None,
            qq: None,
            risk: None,
            prediction: None,
            study: None,
            trajectories: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Fit on the train sample, write the QQ table.
    Estimate,
    /// Heat-wave measures at configured or fitted parameters.
    Risk,
    /// Prediction intervals at the test-sample start.
    Predict,
    /// Replication study on simulated data.
    Study,
    /// Sample paths for a parameter sweep.
    Trajectories,
    /// Estimate, risk and predict in one pass.
    Run,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Risk => "risk",
            Command::Predict => "predict",
            Command::Study => "study",
            Command::Trajectories => "trajectories",
            Command::Run => "run",
        }
    }
}

/// Files produced by a command, written only once every stage succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::Data(format!("{name}: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("{name}: {e}")))?;
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Write every file under `dir`; on failure remove what was written.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                let _ = fs::remove_file(&path);
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct PredictionRow {
    day: usize,
    date: NaiveDate,
    lower: f64,
    median: f64,
    upper: f64,
    observed: Option<f64>,
    inside: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct ReplicationRow {
    replicate: usize,
    n_days: usize,
    fixed_beta: bool,
    beta: Option<f64>,
    mu: Option<f64>,
    l: Option<f64>,
    objective: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrajectoryRow {
    series: String,
    beta: f64,
    mu: f64,
    l: f64,
    t: f64,
    x: f64,
}

struct Fit {
    sample: DailyExtrema,
    result: EstimationResult,
}

struct Context<'a> {
    cfg: &'a RunConfig,
    report: Report,
    outputs: Outputs,
    dataset: Option<StationDataset>,
    fit: Option<Fit>,
}

impl<'a> Context<'a> {
    fn dataset(&mut self) -> std::result::Result<&StationDataset, StageError> {
        if self.dataset.is_none() {
            let source = self.cfg.data.as_ref().ok_or_else(|| StageError {
                stage: Stage::Config,
                source: Error::Config("no data source configured".into()),
            })?;
            self.dataset = Some(ingest(source).at(Stage::Ingest)?);
        }
        Ok(self.dataset.as_ref().unwrap())
    }

    fn fit(&mut self) -> std::result::Result<&Fit, StageError> {
        if self.fit.is_none() {
            let cfg = self.cfg;
            let ds = self.dataset()?;
            let (sample, drops) = build_train_sample(ds, cfg).at(Stage::Sample)?;
            let data_report = DataReport { station_id: ds.station_id.clone(), train_days: sample.len(), drops };
            compute_param_box(&sample).at(Stage::Bounds)?;
            let anchors = QuantileAnchors::from_data(&sample, &cfg.estimation.levels).at(Stage::Config)?;
            let result = match cfg.estimation.fixed_beta {
                Some(beta) => estimate_2d(&sample, beta, Some(anchors), &cfg.grid, &cfg.optimizer),
                None => estimate(&sample, Some(anchors), &cfg.grid, &cfg.optimizer),
            }
            .at(Stage::Estimate)?;
            self.report.data = Some(data_report);
            self.report.estimation = Some(EstimationReport::new(&result, cfg.estimation.fixed_beta.is_some()));
            self.fit = Some(Fit { sample, result });
        }
        Ok(self.fit.as_ref().unwrap())
    }

    fn params_or_fit(&mut self, given: Option<OUParams>) -> std::result::Result<OUParams, StageError> {
        match given {
            Some(p) => {
                p.validate().at(Stage::Config)?;
                Ok(p)
            }
            None => Ok(self.fit()?.result.theta_hat),
        }
    }

    fn estimate(&mut self) -> std::result::Result<(), StageError> {
        let grid = self.cfg.grid;
        let fit = self.fit()?;
        let qq = qq_points(&fit.sample, &fit.result.theta_hat, &grid).at(Stage::Validation)?;
        let th: Vec<f64> = qq.iter().map(|q| q.theoretical).collect();
        let em: Vec<f64> = qq.iter().map(|q| q.empirical).collect();
        self.report.qq = Some(QqReport { spearman: spearman(&th, &em), points: qq.len() });
        self.outputs.add_csv("qq.csv", &qq).at(Stage::Output)
    }

    fn risk(&mut self) -> std::result::Result<(), StageError> {
        let cfg = self.cfg;
        let params = self.params_or_fit(cfg.risk.params)?;
        let spec = cfg.heatwave_spec().at(Stage::Config)?;
        let sim = RiskSimConfig { n_sims: cfg.risk.n_sims, seed: cfg.seed, dt: cfg.risk.dt, mode: cfg.risk.mode };
        let r = risk_report(&params, &spec, &sim, cfg.risk.severity_sims).at(Stage::Risk)?;
        self.report.risk = Some(RiskBlock::new(&params, &r, cfg.risk.dt));
        Ok(())
    }

    fn predict(&mut self) -> std::result::Result<(), StageError> {
        let cfg = self.cfg;
        let params = self.params_or_fit(cfg.prediction.params)?;
        let start = cfg.prediction_start().at(Stage::Config)?;
        let ds = self.dataset()?;
        let day_before = start
            .pred_opt()
            .ok_or_else(|| StageError { stage: Stage::Predict, source: Error::invalid("no day before start") })?;
        let i0 = ds.index_of(day_before).filter(|&i| ds.is_valid(i)).ok_or_else(|| StageError {
            stage: Stage::Predict,
            source: Error::Data(format!("no valid record on {day_before} for the initial condition")),
        })?;
        let x0 = 0.5 * (ds.tmax[i0].unwrap_or_default() + ds.tmin[i0].unwrap_or_default());
        let p = &cfg.prediction;
        let sim = RiskSimConfig { n_sims: p.n_sims, seed: cfg.seed, dt: p.dt, mode: Default::default() };
        let iv = prediction_intervals(&params, x0, p.horizon_days, p.level, &sim).at(Stage::Predict)?;
        let rows: Vec<PredictionRow> = iv
            .iter()
            .map(|d| {
                let date = start + chrono::Days::new(d.day as u64);
                let observed = ds.index_of(date).filter(|&i| ds.is_valid(i)).and_then(|i| ds.tmax[i]);
                PredictionRow {
                    day: d.day,
                    date,
                    lower: d.lower,
                    median: d.median,
                    upper: d.upper,
                    observed,
                    inside: observed.map(|o| o >= d.lower && o <= d.upper),
                }
            })
            .collect();
        self.report.prediction = Some(PredictionReport {
            start,
            initial_value: Quantity::exact(x0, "degC"),
            level: p.level,
            observed_days: rows.iter().filter(|r| r.observed.is_some()).count(),
            inside: rows.iter().filter(|r| r.inside == Some(true)).count(),
        });
        self.outputs.add_csv("prediction.csv", &rows).at(Stage::Output)
    }

    fn study(&mut self) -> std::result::Result<(), StageError> {
        let cfg = self.cfg;
        let (rows, summary) = replication_study(cfg).at(Stage::Study)?;
        self.report.study = Some(summary);
        self.outputs.add_csv("replications.csv", &rows).at(Stage::Output)
    }

    fn trajectories(&mut self) -> std::result::Result<(), StageError> {
        let rows = trajectories(self.cfg).at(Stage::Trajectories)?;
        let series = rows.iter().map(|r| r.series.as_str()).collect::<std::collections::BTreeSet<_>>().len();
        self.report.trajectories = Some(series);
        self.outputs.add_csv("trajectories.csv", &rows).at(Stage::Output)
    }
}

fn replication_study(cfg: &RunConfig) -> Result<(Vec<ReplicationRow>, Vec<StudySummary>)> {
    let st = &cfg.study;
    st.params.validate()?;
    let max_n = *st.sizes.iter().max().unwrap_or(&0);
    let key = StreamKey::new(cfg.seed, domain::STUDY);
    let samples: Vec<DailyExtrema> = (0..st.replications)
        .into_par_iter()
        .map(|r| {
            simulate_daily_extrema(
                &st.params,
                &SimConfig::new(st.dt, max_n, key.child(r as u64).seed, InitialState::Stationary)?,
            )
        })
        .collect::<Result<_>>()?;
    let modes: Vec<bool> = if st.with_fixed_beta { vec![false, true] } else { vec![false] };
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &n in &st.sizes {
        for &fixed in &modes {
            let mut sq = [0.0; 3];
            let mut ok = 0;
            for (r, full) in samples.iter().enumerate() {
                let data = full.truncated(n);
                let res = if fixed {
                    estimate_2d(&data, st.params.beta, None, &cfg.grid, &cfg.optimizer)
                } else {
                    estimate(&data, None, &cfg.grid, &cfg.optimizer)
                };
                let row = match res {
                    Ok(e) => {
                        let t = e.theta_hat;
                        sq[0] += ((t.beta - st.params.beta) / st.params.beta).powi(2);
                        sq[1] += ((t.mu - st.params.mu) / st.params.mu).powi(2);
                        sq[2] += ((t.l - st.params.l) / st.params.l).powi(2);
                        ok += 1;
                        ReplicationRow {
                            replicate: r,
                            n_days: n,
                            fixed_beta: fixed,
                            beta: Some(t.beta),
                            mu: Some(t.mu),
                            l: Some(t.l),
                            objective: Some(e.objective),
                            iterations: Some(e.iterations),
                            converged: Some(e.converged),
                        }
                    }
                    Err(e) => {
                        log::warn!("replicate {r}, n = {n}: {e}");
                        ReplicationRow {
                            replicate: r,
                            n_days: n,
                            fixed_beta: fixed,
                            beta: None,
                            mu: None,
                            l: None,
                            objective: None,
                            iterations: None,
                            converged: None,
                        }
                    }
                };
                rows.push(row);
            }
            let k = ok.max(1) as f64;
            summaries.push(StudySummary {
                n_days: n,
                fixed_beta: fixed,
                replications: st.replications,
                failures: st.replications - ok,
                relative_rmse_beta: (sq[0] / k).sqrt(),
                relative_rmse_mu: (sq[1] / k).sqrt(),
                relative_rmse_l: (sq[2] / k).sqrt(),
            });
        }
    }
    Ok((rows, summaries))
}

fn trajectories(cfg: &RunConfig) -> Result<Vec<TrajectoryRow>> {
    let t = &cfg.trajectories;
    let mut sets: Vec<(String, OUParams)> = Vec::new();
    for &beta in &t.beta_values {
        sets.push((format!("beta={beta}"), OUParams { beta, ..t.base }));
    }
    for &mu in &t.mu_values {
        sets.push((format!("mu={mu}"), OUParams { mu, ..t.base }));
    }
    for &l in &t.l_values {
        sets.push((format!("l={l}"), OUParams { l, ..t.base }));
    }
    let steps = (t.days as f64 / t.dt).round() as usize;
    let key = StreamKey::new(cfg.seed, domain::TRAJECTORY);
    let mut rows = Vec::new();
    for (j, (name, p)) in sets.iter().enumerate() {
        p.validate()?;
        let mut rng = key.stream(j as u64);
        let (rate, scale) = (p.relaxation(), (p.beta * t.dt).sqrt());
        let mut x = p.mu;
        for k in 0..=steps {
            if k % t.thin == 0 {
                rows.push(TrajectoryRow {
                    series: name.clone(),
                    beta: p.beta,
                    mu: p.mu,
                    l: p.l,
                    t: k as f64 * t.dt,
                    x,
                });
            }
            x += rate * (p.mu - x) * t.dt + scale * standard_normal(&mut rng);
        }
    }
    Ok(rows)
}

/// Result of a command: the report and the files it wants written.
#[derive(Debug)]
pub struct RunOutput {
    pub report: Report,
    pub outputs: Outputs,
    pub elapsed_secs: f64,
}

/// Execute `command` without touching the filesystem beyond reading inputs.
pub fn execute(command: Command, cfg: &RunConfig) -> std::result::Result<RunOutput, StageError> {
    cfg.validate().at(Stage::Config)?;
    let started = Instant::now();
    let mut ctx =
        Context { cfg, report: Report::new(command, cfg.seed), outputs: Outputs::default(), dataset: None, fit: None };
    match command {
        Command::Estimate => ctx.estimate()?,
        Command::Risk => ctx.risk()?,
        Command::Predict => ctx.predict()?,
        Command::Study => ctx.study()?,
        Command::Trajectories => ctx.trajectories()?,
        Command::Run => {
            ctx.estimate()?;
            ctx.risk()?;
            ctx.predict()?;
        }
    }
    let json = serde_json::to_vec_pretty(&ctx.report).map_err(|e| Error::Data(e.to_string())).at(Stage::Output)?;
    let mut outputs = std::mem::take(&mut ctx.outputs);
    outputs.files.insert(0, ("report.json".into(), json));
    Ok(RunOutput { report: ctx.report, outputs, elapsed_secs: started.elapsed().as_secs_f64() })
}

/// Execute and write `report.json` plus plot-data files into `cfg.out_dir`.
/// Wall-clock time goes to `timing.json` so that the report itself is
/// reproducible byte for byte.
pub fn run_pipeline(command: Command, cfg: &RunConfig) -> std::result::Result<RunOutput, StageError> {
    let mut out = execute(command, cfg)?;
    let timing =
        serde_json::json!({ "command": command.name(), "runtime": { "value": out.elapsed_secs, "unit": "s" } });
    out.outputs.add("timing.json", serde_json::to_vec_pretty(&timing).unwrap_or_default());
    out.outputs.commit(&cfg.out_dir).at(Stage::Output)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli_io::config::YearRange;
    use crate::cli_io::dataset::Quality;
    use chrono::Datelike;

    fn synthetic(years: std::ops::RangeInclusive<i32>) -> StationDataset {
        let mut ds =
            StationDataset { station_id: "1".into(), dates: vec![], tmax: vec![], tmin: vec![], quality: vec![] };
        for y in years {
            let mut d = NaiveDate::from_ymd_opt(y, 1, 1).unwrap();
            while d.year() == y {
                ds.dates.push(d);
                ds.tmax.push(Some(25.0));
                ds.tmin.push(Some(15.0));
                ds.quality.push(Quality::Valid);
                d = d.succ_opt().unwrap();
            }
        }
        ds
    }

    fn cfg(first: i32, last: i32) -> RunConfig {
        RunConfig { train_years: Some(YearRange { first, last }), ..RunConfig::default() }
    }

    #[test]
    fn thirty_five_summers_pool_to_2135_days() {
        let ds = synthetic(1950..=1984);
        let (s, rep) = build_train_sample(&ds, &cfg(1950, 1984)).unwrap();
        assert_eq!(s.len(), 2135);
        assert_eq!(rep.dropped_days, 0);
        assert_eq!(s.breaks.len(), 34);
        assert!(!s.is_contiguous(61));
    }

    #[test]
    fn flagged_day_is_dropped_and_reported() {
        let mut ds = synthetic(1950..=1984);
        let i = ds.index_of(NaiveDate::from_ymd_opt(1960, 7, 1).unwrap()).unwrap();
        ds.quality[i] = Quality::Suspect;
        let (s, rep) = build_train_sample(&ds, &cfg(1950, 1984)).unwrap();
        assert_eq!(s.len(), 2134);
        assert_eq!(rep.dropped_days, 1);
        assert_eq!(rep.seasons.iter().find(|x| x.year == 1960).unwrap().dropped, 1);
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn empty_train_years_rejected() {
        let ds = synthetic(1950..=1951);
        assert!(build_train_sample(&ds, &cfg(1960, 1950)).is_err());
        assert!(build_train_sample(&ds, &RunConfig::default()).is_err());
        assert!(matches!(build_train_sample(&ds, &cfg(1990, 1991)), Err(Error::Data(_))));
    }

    #[test]
    fn mostly_missing_season_warns() {
        let mut ds = synthetic(1950..=1950);
        for q in ds.quality.iter_mut().skip(170).take(20) {
            *q = Quality::Missing;
        }
        let (_, rep) = build_train_sample(&ds, &cfg(1950, 1950)).unwrap();
        assert_eq!(rep.warnings, vec![1950]);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn exit_codes() {
        let e = StageError { stage: Stage::Ingest, source: Error::Data("x".into()) };
        assert_eq!(e.exit_code(), 3);
        let e = StageError { stage: Stage::Estimate, source: Error::Estimation("x".into()) };
        assert_eq!(e.exit_code(), 4);
        let e = StageError { stage: Stage::Config, source: Error::Config("x".into()) };
        assert_eq!(e.exit_code(), 2);
        assert_eq!(e.to_string(), "config stage failed: config error: x");
    }
}
