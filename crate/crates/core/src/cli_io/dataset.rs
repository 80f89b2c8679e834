//! Daily station records: ECA&D blended files and a plain CSV layout.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ECA&D missing-value code.
pub const ECA_MISSING: i64 = -9999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Valid,
    Suspect,
    Missing,
}

impl Quality {
    pub fn from_eca(code: i64) -> Option<Self> {
        match code {
            0 => Some(Quality::Valid),
            1 => Some(Quality::Suspect),
            9 => Some(Quality::Missing),
            _ => None,
        }
    }

    pub fn eca_code(self) -> i64 {
        match self {
            Quality::Valid => 0,
            Quality::Suspect => 1,
            Quality::Missing => 9,
        }
    }
}

/// Daily maxima and minima of one station, aligned by date.
#[derive(Debug, Clone, PartialEq)]
pub struct StationDataset {
    pub station_id: String,
    pub dates: Vec<NaiveDate>,
    /// °C, `None` when missing.
    pub tmax: Vec<Option<f64>>,
    pub tmin: Vec<Option<f64>>,
    /// Worst flag over the two series for each day.
    pub quality: Vec<Quality>,
}

impl StationDataset {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Both values present, flagged valid and ordered.
    pub fn is_valid(&self, i: usize) -> bool {
        match (self.quality[i], self.tmax[i], self.tmin[i]) {
            (Quality::Valid, Some(hi), Some(lo)) => lo <= hi,
            _ => false,
        }
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        if self.tmax.len() != n || self.tmin.len() != n || self.quality.len() != n {
            return Err(Error::Data("dataset columns are not aligned".into()));
        }
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum DataSource {
    /// A pair of ECA&D blended series files, daily maxima and minima.
    EcaBlend { tx: PathBuf, tn: PathBuf },
    /// `date,tmax,tmin[,quality]` with ISO dates and °C.
    CsvSimple { path: PathBuf },
}

impl DataSource {
    /// Resolve relative paths against `base`.
    pub fn rebased(&self, base: &Path) -> Self {
        match self {
            DataSource::EcaBlend { tx, tn } => DataSource::EcaBlend { tx: base.join(tx), tn: base.join(tn) },
            DataSource::CsvSimple { path } => DataSource::CsvSimple { path: base.join(path) },
        }
    }
}

pub fn ingest(source: &DataSource) -> Result<StationDataset> {
    let ds = match source {
        DataSource::EcaBlend { tx, tn } => {
            let hi = read_eca_series(tx)?;
            let lo = read_eca_series(tn)?;
            merge_eca(hi, lo)?
        }
        DataSource::CsvSimple { path } => read_csv_simple(path)?,
    };
    if ds.is_empty() {
        return Err(Error::Data("dataset has no records".into()));
    }
    ds.validate()?;
    Ok(ds)
}

/// One element (TX, TN, ...) of an ECA&D blended file.
#[derive(Debug, Clone, PartialEq)]
pub struct EcaSeries {
    pub station_id: String,
    pub element: String,
    pub records: Vec<EcaRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcaRecord {
    pub date: NaiveDate,
    /// °C.
    pub value: Option<f64>,
    pub quality: Quality,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

pub fn read_eca_series(path: &Path) -> Result<EcaSeries> {
    let text = fs::read_to_string(path)?;
    parse_eca_series(&text, path)
}

/// Parse the ECA&D blended layout: free-text header, then a
/// `STAID, SOUID, DATE, XX, Q_XX` column line, then one record per line
/// with values in tenths of °C.
pub fn parse_eca_series(text: &str, path: &Path) -> Result<EcaSeries> {
    let mut lines = text.lines().enumerate();
    let element = loop {
        let Some((_, line)) = lines.next() else {
            return Err(parse_err(path, 0, "no STAID column header found"));
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.first() == Some(&"STAID") {
            if cols.len() != 5 || cols[2] != "DATE" || cols[4] != format!("Q_{}", cols[3]) {
                return Err(parse_err(path, 0, format!("unexpected column header {line:?}")));
            }
            break cols[3].to_string();
        }
    };

    let mut station_id = None;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 5 fields, found {}", cols.len())));
        }
        let staid = cols[0].to_string();
        match &station_id {
            None => station_id = Some(staid),
            Some(s) if *s != staid => {
                return Err(parse_err(path, lineno, format!("station id changed from {s} to {staid}")));
            }
            _ => {}
        }
        let date = NaiveDate::parse_from_str(cols[2], "%Y%m%d")
            .map_err(|e| parse_err(path, lineno, format!("bad date {:?}: {e}", cols[2])))?;
        let raw: i64 = cols[3].parse().map_err(|_| parse_err(path, lineno, format!("bad value {:?}", cols[3])))?;
        let code: i64 =
            cols[4].parse().map_err(|_| parse_err(path, lineno, format!("bad quality code {:?}", cols[4])))?;
        let mut quality =
            Quality::from_eca(code).ok_or_else(|| parse_err(path, lineno, format!("unknown quality code {code}")))?;
        let value = if raw == ECA_MISSING {
            quality = Quality::Missing;
            None
        } else {
            Some(raw as f64 / 10.0)
        };
        if quality == Quality::Missing && value.is_some() {
            log::debug!("{}:{lineno}: value present on a day flagged missing; ignored", path.display());
        }
        let value = if quality == Quality::Missing { None } else { value };
        records.push(EcaRecord { date, value, quality });
    }
    if records.windows(2).any(|w| w[0].date >= w[1].date) {
        return Err(parse_err(path, 0, "dates are not strictly increasing"));
    }
    Ok(EcaSeries { station_id: station_id.unwrap_or_default(), element, records })
}

/// Align a TX and a TN series by date. A day present in only one of them is
/// kept with the other side missing.
pub fn merge_eca(tx: EcaSeries, tn: EcaSeries) -> Result<StationDataset> {
    if tx.element != "TX" || tn.element != "TN" {
        return Err(Error::Data(format!("expected TX and TN series, got {} and {}", tx.element, tn.element)));
    }
    if tx.station_id != tn.station_id {
        return Err(Error::Data(format!("station ids differ: {} vs {}", tx.station_id, tn.station_id)));
    }
    let missing = EcaRecord { date: NaiveDate::MIN, value: None, quality: Quality::Missing };
    let mut days: BTreeMap<NaiveDate, (EcaRecord, EcaRecord)> = BTreeMap::new();
    for r in tx.records {
        days.entry(r.date).or_insert((missing, missing)).0 = r;
    }
    for r in tn.records {
        days.entry(r.date).or_insert((missing, missing)).1 = r;
    }
    let mut ds = StationDataset {
        station_id: tx.station_id,
        dates: Vec::with_capacity(days.len()),
        tmax: Vec::with_capacity(days.len()),
        tmin: Vec::with_capacity(days.len()),
        quality: Vec::with_capacity(days.len()),
    };
    for (date, (hi, lo)) in days {
        ds.dates.push(date);
        ds.tmax.push(hi.value);
        ds.tmin.push(lo.value);
        ds.quality.push(hi.quality.max(lo.quality));
    }
    Ok(ds)
}

/// Write one element of `ds` in the ECA&D blended layout.
pub fn write_eca_series(ds: &StationDataset, element: &str, path: &Path) -> Result<()> {
    let values = match element {
        "TX" => &ds.tmax,
        "TN" => &ds.tmin,
        other => return Err(Error::invalid(format!("unsupported element {other}"))),
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "EUROPEAN CLIMATE ASSESSMENT & DATASET (ECA&D) LAYOUT")?;
    writeln!(out)?;
    writeln!(out, "FILE FORMAT (MISSING VALUE CODE IS -9999):")?;
    writeln!(out, "01-06 STAID: Station identifier")?;
    writeln!(out, "08-13 SOUID: Source identifier")?;
    writeln!(out, "15-22 DATE : Date YYYYMMDD")?;
    writeln!(out, "24-28 {element:<4} : value in 0.1 degrees C")?;
    writeln!(out, "30-34 Q_{element:<2} : Quality code (0='valid'; 1='suspect'; 9='missing')")?;
    writeln!(out)?;
    writeln!(out, "STAID, SOUID,    DATE, {element:>4}, Q_{element}")?;
    for (i, date) in ds.dates.iter().enumerate() {
        let (raw, q) = match values[i] {
            Some(v) => ((v * 10.0).round() as i64, ds.quality[i]),
            None => (ECA_MISSING, Quality::Missing),
        };
        writeln!(out, "{:>6},{:>6},{},{:>5},{:>5}", ds.station_id, 1, date.format("%Y%m%d"), raw, q.eca_code())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    date: NaiveDate,
    tmax: Option<f64>,
    tmin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality: Option<Quality>,
}

pub fn read_csv_simple(path: &Path) -> Result<StationDataset> {
    let mut rdr =
        csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_path(path).map_err(|e| csv_err(path, e))?;
    let station_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut ds = StationDataset { station_id, dates: vec![], tmax: vec![], tmin: vec![], quality: vec![] };
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let q = match (row.tmax, row.tmin) {
            (Some(_), Some(_)) => row.quality.unwrap_or(Quality::Valid),
            _ => Quality::Missing,
        };
        ds.dates.push(row.date);
        ds.tmax.push(row.tmax);
        ds.tmin.push(row.tmin);
        ds.quality.push(q);
    }
    if ds.dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(parse_err(path, 0, "dates are not strictly increasing"));
    }
    Ok(ds)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

/// Write `date,tmax,tmin`, plus a `quality` column when some flag cannot be
/// inferred from the values (missing values are written as empty fields).
pub fn write_csv_simple(ds: &StationDataset, path: &Path) -> Result<()> {
    let with_quality = (0..ds.len()).any(|i| {
        let inferred = if ds.tmax[i].is_some() && ds.tmin[i].is_some() { Quality::Valid } else { Quality::Missing };
        ds.quality[i] != inferred
    });
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if with_quality {
        w.write_record(["date", "tmax", "tmin", "quality"]).map_err(|e| csv_err(path, e))?;
    } else {
        w.write_record(["date", "tmax", "tmin"]).map_err(|e| csv_err(path, e))?;
    }
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for i in 0..ds.len() {
        let mut rec = vec![ds.dates[i].to_string(), fmt(ds.tmax[i]), fmt(ds.tmin[i])];
        if with_quality {
            rec.push(
                match ds.quality[i] {
                    Quality::Valid => "valid",
                    Quality::Suspect => "suspect",
                    Quality::Missing => "missing",
                }
                .to_string(),
            );
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}
