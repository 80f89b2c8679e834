//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::dataset::DataSource;
use crate::error::{Error, Result};
use crate::estimator::{OptimizerConfig, DEFAULT_LEVELS};
use crate::ou_process::OUParams;
use crate::risk::{HeatwaveDefinition, HeatwaveSpec, SimMode};
use crate::sup_cdf::CdfGrid;

/// Month and day, written `"MM-DD"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MonthDay {
    pub month: u32,
    pub day: u32,
}

impl MonthDay {
    pub fn in_year(self, year: i32) -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(year, self.month, self.day)
    }
}

impl std::str::FromStr for MonthDay {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected MM-DD, got {s:?}"));
        let (m, d) = s.split_once('-').ok_or_else(bad)?;
        let md = MonthDay { month: m.parse().map_err(|_| bad())?, day: d.parse().map_err(|_| bad())? };
        // 2000 is a leap year, so Feb 29 is accepted here
        md.in_year(2000).ok_or_else(bad)?;
        Ok(md)
    }
}

impl std::fmt::Display for MonthDay {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:02}-{:02}", self.month, self.day)
    }
}

impl Serialize for MonthDay {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthDay {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive window within each year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub start: MonthDay,
    pub end: MonthDay,
}

impl Default for SeasonWindow {
    fn default() -> Self {
        Self { start: MonthDay { month: 6, day: 15 }, end: MonthDay { month: 8, day: 14 } }
    }
}

impl SeasonWindow {
    /// Dates of the window in `year`.
    pub fn dates(&self, year: i32) -> Result<Vec<NaiveDate>> {
        let (Some(a), Some(b)) = (self.start.in_year(year), self.end.in_year(year)) else {
            return Err(Error::Config(format!("season window {}..{} does not exist in {year}", self.start, self.end)));
        };
        Ok(a.iter_days().take_while(|d| *d <= b).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.start > self.end {
            return Err(Error::Config("season window must not wrap the year end".into()));
        }
        Ok(())
    }

    /// Length in a non-leap year.
    pub fn len_days(&self) -> usize {
        self.dates(2001).map(|d| d.len()).unwrap_or(0)
    }
}

/// Inclusive range of years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }

    pub fn is_empty(&self) -> bool {
        self.first > self.last
    }

    fn overlaps(&self, o: &YearRange) -> bool {
        !self.is_empty() && !o.is_empty() && self.first <= o.last && o.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub levels: Vec<f64>,
    /// Hold `β` at this value and fit `(μ, l)` only.
    pub fixed_beta: Option<f64>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { levels: DEFAULT_LEVELS.to_vec(), fixed_beta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub definition: HeatwaveDefinition,
    pub delta: usize,
    /// Defaults to the season window length.
    pub season_days: Option<usize>,
    pub n_sims: usize,
    pub severity_sims: usize,
    pub dt: f64,
    pub mode: SimMode,
    /// Use these parameters instead of fitting them.
    pub params: Option<OUParams>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            definition: HeatwaveDefinition::TwoThreshold { a_max: 31.0, a_min: 21.0 },
            delta: 3,
            season_days: None,
            n_sims: 1_000_000,
            severity_sims: 10_000_000,
            dt: 1e-2,
            mode: SimMode::Skip,
            params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    /// First predicted day; the initial condition is the mean temperature
    /// of the day before. Defaults to the season start of the first test year.
    pub start: Option<NaiveDate>,
    pub horizon_days: usize,
    pub n_sims: usize,
    pub level: f64,
    pub dt: f64,
    pub params: Option<OUParams>,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self { start: None, horizon_days: 10, n_sims: 1000, level: 0.95, dt: 1e-3, params: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub params: OUParams,
    pub replications: usize,
    /// Sample sizes; each replication is simulated once at the largest and
    /// truncated for the smaller ones.
    pub sizes: Vec<usize>,
    pub dt: f64,
    /// Also run the fit with `β` held at its true value.
    pub with_fixed_beta: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            params: OUParams { beta: 47.5, mu: 22.0, l: 0.02 },
            replications: 50,
            sizes: vec![100, 1000],
            dt: 1e-3,
            with_fixed_beta: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub base: OUParams,
    pub beta_values: Vec<f64>,
    pub mu_values: Vec<f64>,
    pub l_values: Vec<f64>,
    pub days: usize,
    pub dt: f64,
    /// Keep every `thin`-th grid point in the output.
    pub thin: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            base: OUParams { beta: 47.5, mu: 22.0, l: 0.02 },
            beta_values: vec![4.75, 47.5, 475.0],
            mu_values: vec![12.0, 22.0, 32.0],
            l_values: vec![0.002, 0.02, 0.2],
            days: 10,
            dt: 1e-4,
            thin: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSource>,
    #[serde(default)]
    pub season: SeasonWindow,
    pub train_years: Option<YearRange>,
    pub test_years: Option<YearRange>,
    #[serde(default)]
    pub grid: CdfGrid,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub trajectories: TrajectoryConfig,
    #[serde(default)]
    pub seed: u64,
    /// Thread count, 0 for all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            season: SeasonWindow::default(),
            train_years: None,
            test_years: None,
            grid: CdfGrid::default(),
            optimizer: OptimizerConfig::default(),
            estimation: EstimationConfig::default(),
            risk: RiskConfig::default(),
            prediction: PredictionConfig::default(),
            study: StudyConfig::default(),
            trajectories: TrajectoryConfig::default(),
            seed: 0,
            workers: 0,
            out_dir: default_out_dir(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; relative data paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(data), Some(base)) = (&cfg.data, path.parent()) {
            cfg.data = Some(data.rebased(base));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.season.validate()?;
        if self.season.len_days() == 0 {
            return Err(Error::Config("season window is empty".into()));
        }
        if let (Some(a), Some(b)) = (&self.train_years, &self.test_years) {
            if a.overlaps(b) {
                return Err(Error::Config("train and test years overlap".into()));
            }
        }
        if let Some(t) = &self.train_years {
            if t.is_empty() {
                return Err(Error::Config("train year range is empty".into()));
            }
        }
        self.grid.validate().map_err(cfg_err)?;
        self.optimizer.validate()?;
        self.heatwave_spec().map_err(cfg_err)?;
        if self.risk.n_sims == 0 || self.prediction.n_sims == 0 {
            return Err(Error::Config("simulation counts must be positive".into()));
        }
        if !(self.prediction.level > 0.0 && self.prediction.level < 1.0) {
            return Err(Error::Config("prediction level must lie in (0, 1)".into()));
        }
        if self.study.replications == 0 || self.study.sizes.is_empty() || self.study.sizes.contains(&0) {
            return Err(Error::Config("study needs replications and positive sample sizes".into()));
        }
        if self.trajectories.thin == 0 {
            return Err(Error::Config("trajectory thinning must be positive".into()));
        }
        Ok(())
    }

    pub fn heatwave_spec(&self) -> Result<HeatwaveSpec> {
        let days = self.risk.season_days.unwrap_or_else(|| self.season.len_days());
        HeatwaveSpec::new(self.risk.definition, self.risk.delta, days)
    }

    /// First predicted day.
    pub fn prediction_start(&self) -> Result<NaiveDate> {
        if let Some(d) = self.prediction.start {
            return Ok(d);
        }
        let year =
            self.test_years.ok_or_else(|| Error::Config("prediction needs a start date or test years".into()))?.first;
        self.season
            .start
            .in_year(year)
            .ok_or_else(|| Error::Config("season start does not exist in the first test year".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_season_is_61_days() {
        assert_eq!(SeasonWindow::default().len_days(), 61);
        assert_eq!(SeasonWindow::default().dates(1984).unwrap().len(), 61);
    }

    #[test]
    fn parses_minimal_toml() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            train_years = { first = 1950, last = 1984 }
            test_years = { first = 1985, last = 2011 }

            [data]
            format = "eca_blend"
            tx = "TX.txt"
            tn = "TN.txt"

            [risk]
            definition = { kind = "two_threshold", a_max = 31.0, a_min = 21.0 }
            n_sims = 1000
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.heatwave_spec().unwrap().season_days, 61);
        assert_eq!(cfg.prediction_start().unwrap(), NaiveDate::from_ymd_opt(1985, 6, 15).unwrap());
        assert_eq!(cfg.grid, CdfGrid::default());
    }

    #[test]
    fn rejects_overlapping_years_and_bad_windows() {
        let e = RunConfig::from_toml(
            "train_years = { first = 1950, last = 1990 }\ntest_years = { first = 1985, last = 2011 }",
        );
        assert!(matches!(e, Err(Error::Config(_))));
        let e = RunConfig::from_toml("[season]\nstart = \"09-01\"\nend = \"06-01\"");
        assert!(matches!(e, Err(Error::Config(_))));
        assert!("13-01".parse::<MonthDay>().is_err());
        let e = RunConfig::from_toml("bogus = 1");
        assert!(matches!(e, Err(Error::Config(_))));
    }
}
