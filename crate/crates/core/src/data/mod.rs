//! Multi-location daily series: loading, normalization and windowing.
//!
//! Each location is one CSV with header `date,<var1>,...,<varm>`. Every file
//! must declare the same variables and cover the same gap-free day axis. The
//! manifest fixes location order; that order is the column order of the
//! concatenated model input and the slicing order of the st_stacked model.

mod synthetic;

pub use synthetic::{gen_synthetic, write_synthetic, SyntheticConfig, SyntheticData};

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::numerics::Vector;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
        .map_err(|e| Error::Manifest(format!("bad date `{s}`: {e}")))
}

/// What to do with an empty or `NA` cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    #[default]
    Error,
    /// Copy the previous day's value; a missing first row is still an error.
    Ffill,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(MissingPolicy::Error),
            "ffill" => Ok(MissingPolicy::Ffill),
            other => Err(Error::InvalidConfig(format!(
                "unknown missing-value policy `{other}` (expected error or ffill)"
            ))),
        }
    }
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPolicy::Error => "error",
            MissingPolicy::Ffill => "ffill",
        })
    }
}

/// Inclusive day span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Manifest(format!("range end {end} precedes start {start}")));
        }
        Ok(DateRange { start, end })
    }

    /// Parses `start,end` or `start:end`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .or_else(|| s.split_once(':'))
            .ok_or_else(|| Error::Manifest(format!("expected `start,end`, got `{s}`")))?;
        DateRange::new(parse_date(a)?, parse_date(b)?)
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.start.format(DATE_FORMAT), self.end.format(DATE_FORMAT))
    }
}

/// Ordered locations, prediction target and optional test/date ranges.
///
/// Text form, one entry per line (`#` starts a comment):
///
/// ```text
/// brussels,data/brussels.csv
/// antwerp,data/antwerp.csv
/// target=brussels:temperature
/// test_start=2013-11-15,test_end=2013-12-15
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub locations: Vec<(String, PathBuf)>,
    pub target_location: String,
    pub target_variable: String,
    pub test_range: Option<DateRange>,
    /// Restricts loading to these days when set (`range=start,end`).
    pub date_range: Option<DateRange>,
}

impl Manifest {
    /// Parses manifest text; relative CSV paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut locations = Vec::new();
        let mut target = None;
        let mut test_start = None;
        let mut test_end = None;
        let mut date_range = None;

        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("target=") {
                let (loc, var) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::Manifest(format!("target must be `location:variable`, got `{rest}`")))?;
                target = Some((loc.trim().to_string(), var.trim().to_string()));
            } else if line.starts_with("test_start=") || line.starts_with("test_end=") {
                for part in line.split(',') {
                    let (k, v) = part
                        .split_once('=')
                        .ok_or_else(|| Error::Manifest(format!("bad test range entry `{part}`")))?;
                    match k.trim() {
                        "test_start" => test_start = Some(parse_date(v)?),
                        "test_end" => test_end = Some(parse_date(v)?),
                        other => return Err(Error::Manifest(format!("unknown key `{other}`"))),
                    }
                }
            } else if let Some(rest) = line.strip_prefix("range=") {
                date_range = Some(DateRange::parse(rest)?);
            } else if let Some((name, path)) = line.split_once(',') {
                let path = PathBuf::from(path.trim());
                let path = if path.is_absolute() { path } else { base.join(path) };
                locations.push((name.trim().to_string(), path));
            } else {
                return Err(Error::Manifest(format!("unrecognized line `{line}`")));
            }
        }

        if locations.is_empty() {
            return Err(Error::Manifest("no locations listed".into()));
        }
        for (i, (name, _)) in locations.iter().enumerate() {
            if locations[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::Manifest(format!("location `{name}` listed twice")));
            }
        }
        let (target_location, target_variable) =
            target.ok_or_else(|| Error::Manifest("missing `target=<location>:<variable>` line".into()))?;
        if !locations.iter().any(|(n, _)| *n == target_location) {
            return Err(Error::UnknownLocation(target_location));
        }
        let test_range = match (test_start, test_end) {
            (Some(s), Some(e)) => Some(DateRange::new(s, e)?),
            (None, None) => None,
            _ => return Err(Error::Manifest("test_start and test_end must be given together".into())),
        };
        Ok(Manifest {
            locations,
            target_location,
            target_variable,
            test_range,
            date_range,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Manifest::parse(&text, base)
    }

    /// Serializes with CSV paths written relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let mut out = String::new();
        for (name, path) in &self.locations {
            let shown = path.strip_prefix(base).unwrap_or(path);
            out.push_str(&format!("{name},{}\n", shown.display()));
        }
        out.push_str(&format!("target={}:{}\n", self.target_location, self.target_variable));
        if let Some(r) = &self.test_range {
            out.push_str(&format!(
                "test_start={},test_end={}\n",
                r.start.format(DATE_FORMAT),
                r.end.format(DATE_FORMAT)
            ));
        }
        if let Some(r) = &self.date_range {
            out.push_str(&format!("range={r}\n"));
        }
        out
    }
}

/// Per-column z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean/std of each column over `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; cols];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        NormStats { mean, std }
    }

    /// Zero-variance columns map to 0.
    pub fn normalize(&self, row: &[f64]) -> Vector {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn denormalize(&self, row: &[f64]) -> Vector {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    /// Inverse transform for one column.
    pub fn denormalize_value(&self, col: usize, z: f64) -> f64 {
        z * self.std[col] + self.mean[col]
    }
}

/// Aligned multi-location series.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dates: Vec<NaiveDate>,
    pub location_names: Vec<String>,
    pub variables: Vec<String>,
    /// One row per day: location-major `[loc0 vars.., loc1 vars.., ...]`.
    pub values: Vec<Vec<f64>>,
    /// Column of `values` holding the prediction target.
    pub target_col: usize,
    pub target_name: String,
    pub test_range: Option<DateRange>,
    pub stats: NormStats,
}

impl Dataset {
    /// Builds a dataset from raw rows and fits normalization on days strictly
    /// before the test range (all days when there is none).
    pub fn new(
        dates: Vec<NaiveDate>,
        location_names: Vec<String>,
        variables: Vec<String>,
        values: Vec<Vec<f64>>,
        target: (&str, &str),
        test_range: Option<DateRange>,
    ) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::shape("Dataset::new", format!("{} dates", dates.len()), format!("{} rows", values.len())));
        }
        for w in dates.windows(2) {
            if w[1] != w[0].succ_opt().unwrap_or(w[0]) {
                return Err(Error::DateAlignment(format!(
                    "day axis not gap-free and increasing between {} and {}",
                    w[0], w[1]
                )));
            }
        }
        let width = location_names.len() * variables.len();
        if let Some(bad) = values.iter().position(|r| r.len() != width) {
            return Err(Error::shape("Dataset::new", format!("row width {width}"), format!("row {bad} len {}", values[bad].len())));
        }
        let loc = location_names
            .iter()
            .position(|n| n == target.0)
            .ok_or_else(|| Error::UnknownLocation(target.0.to_string()))?;
        let var = variables
            .iter()
            .position(|v| v == target.1)
            .ok_or_else(|| Error::UnknownVariable(target.1.to_string()))?;
        let train_end = match &test_range {
            Some(r) => dates.partition_point(|d| *d < r.start),
            None => dates.len(),
        };
        let stats = NormStats::fit(&values[..train_end]);
        Ok(Dataset {
            dates,
            target_col: loc * variables.len() + var,
            target_name: format!("{}:{}", target.0, target.1),
            location_names,
            variables,
            values,
            test_range,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn locations(&self) -> usize {
        self.location_names.len()
    }

    pub fn vars(&self) -> usize {
        self.variables.len()
    }

    /// Day indices covered by `range`, clipped to the data.
    pub fn index_range(&self, range: &DateRange) -> Range<usize> {
        let lo = self.dates.partition_point(|d| *d < range.start);
        let hi = self.dates.partition_point(|d| *d <= range.end);
        lo..hi.max(lo)
    }

    /// Days strictly before the test range.
    pub fn train_range(&self) -> Range<usize> {
        match &self.test_range {
            Some(r) => 0..self.dates.partition_point(|d| *d < r.start),
            None => 0..self.len(),
        }
    }

    pub fn test_indices(&self) -> Option<Range<usize>> {
        self.test_range.as_ref().map(|r| self.index_range(r))
    }

    /// All rows z-scored with the training statistics.
    pub fn normalized(&self) -> Vec<Vector> {
        self.values.iter().map(|r| self.stats.normalize(r)).collect()
    }
}

pub fn load_dataset(manifest: &Manifest, policy: MissingPolicy) -> Result<Dataset> {
    let mut variables: Option<Vec<String>> = None;
    let mut dates: Option<Vec<NaiveDate>> = None;
    let mut per_location = Vec::with_capacity(manifest.locations.len());

    for (name, path) in &manifest.locations {
        let (vars, days, rows) = read_location_csv(path, policy)?;
        match &variables {
            None => variables = Some(vars),
            Some(v) if *v == vars => {}
            Some(v) => {
                let unknown = vars.iter().find(|x| !v.contains(x)).or_else(|| v.iter().find(|x| !vars.contains(x)));
                return Err(match unknown {
                    Some(u) => Error::UnknownVariable(format!("{u} (location `{name}`)")),
                    None => Error::Manifest(format!("location `{name}` lists variables in a different order")),
                });
            }
        }
        match &dates {
            None => dates = Some(days),
            Some(d) if *d == days => {}
            Some(d) => return Err(Error::DateAlignment(describe_misalignment(d, &days, name))),
        }
        per_location.push(rows);
    }

    let variables = variables.unwrap_or_default();
    let mut dates = dates.unwrap_or_default();
    let mut values: Vec<Vec<f64>> = (0..dates.len())
        .map(|t| per_location.iter().flat_map(|rows| rows[t].iter().copied()).collect())
        .collect();

    if let Some(r) = &manifest.date_range {
        let lo = dates.partition_point(|d| *d < r.start);
        let hi = dates.partition_point(|d| *d <= r.end).max(lo);
        dates = dates[lo..hi].to_vec();
        values = values[lo..hi].to_vec();
    }

    Dataset::new(
        dates,
        manifest.locations.iter().map(|(n, _)| n.clone()).collect(),
        variables,
        values,
        (&manifest.target_location, &manifest.target_variable),
        manifest.test_range,
    )
}

fn describe_misalignment(reference: &[NaiveDate], other: &[NaiveDate], name: &str) -> String {
    let first_diff = reference.iter().zip(other).position(|(a, b)| a != b);
    match first_diff {
        Some(i) => format!(
            "location `{name}` has {} where the first location has {}",
            other[i], reference[i]
        ),
        None => format!(
            "location `{name}` covers {} days ({}..{}) but the first location covers {} ({}..{})",
            other.len(),
            other.first().map_or("-".into(), |d| d.to_string()),
            other.last().map_or("-".into(), |d| d.to_string()),
            reference.len(),
            reference.first().map_or("-".into(), |d| d.to_string()),
            reference.last().map_or("-".into(), |d| d.to_string()),
        ),
    }
}

type LocationTable = (Vec<String>, Vec<NaiveDate>, Vec<Vec<f64>>);

fn read_location_csv(path: &Path, policy: MissingPolicy) -> Result<LocationTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("date") {
        return Err(Error::Manifest(format!(
            "{}: first column must be `date`",
            path.display()
        )));
    }
    let vars: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if vars.is_empty() {
        return Err(Error::Manifest(format!("{}: no variable columns", path.display())));
    }

    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row_no = i + 2;
        let raw_date = rec.get(0).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT).map_err(|_| Error::BadCell {
            path: path.to_path_buf(),
            row: row_no,
            column: "date".into(),
            value: raw_date.into(),
        })?;
        let mut row = Vec::with_capacity(vars.len());
        for (j, var) in vars.iter().enumerate() {
            let cell = rec.get(j + 1).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                let prev = rows.last().map(|r| r[j]);
                match (policy, prev) {
                    (MissingPolicy::Ffill, Some(v)) => row.push(v),
                    _ => {
                        return Err(Error::MissingValue {
                            path: path.to_path_buf(),
                            row: row_no,
                            column: var.clone(),
                        })
                    }
                }
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::BadCell {
                path: path.to_path_buf(),
                row: row_no,
                column: var.clone(),
                value: cell.into(),
            })?;
            if !v.is_finite() {
                return Err(Error::BadCell {
                    path: path.to_path_buf(),
                    row: row_no,
                    column: var.clone(),
                    value: cell.into(),
                });
            }
            row.push(v);
        }
        dates.push(date);
        rows.push(row);
    }
    Ok((vars, dates, rows))
}

/// One `(input sequence, target)` sample.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// Normalized inputs for days `start..start+T`, each of length `c·m`.
    pub inputs: Vec<Vector>,
    /// Raw-scale target at day `start + T - 1 + q`.
    pub target: f64,
    /// Day index of the window's first input.
    pub window_id: usize,
    pub target_date: NaiveDate,
}

/// Every window whose inputs and target both fall inside `range` (day
/// indices). A range shorter than `T + q` yields no windows.
pub fn make_windows(ds: &Dataset, seq_len: usize, horizon: usize, range: Range<usize>) -> Result<Vec<WindowBatch>> {
    if seq_len == 0 || horizon == 0 {
        return Err(Error::InvalidSpec("seq_len and horizon must be >= 1".into()));
    }
    if range.end > ds.len() || range.start > range.end {
        return Err(Error::shape(
            "make_windows",
            format!("dataset of {} days", ds.len()),
            format!("range {}..{}", range.start, range.end),
        ));
    }
    let span = seq_len + horizon;
    if range.len() < span {
        return Ok(Vec::new());
    }
    let normalized = ds.normalized();
    let count = range.len() - span + 1;
    Ok((0..count)
        .map(|i| {
            let start = range.start + i;
            let target_day = start + seq_len - 1 + horizon;
            WindowBatch {
                inputs: normalized[start..start + seq_len].to_vec(),
                target: ds.values[target_day][ds.target_col],
                window_id: start,
                target_date: ds.dates[target_day],
            }
        })
        .collect())
}

/// Like [`make_windows`], but an empty result is an error.
pub fn require_windows(ds: &Dataset, seq_len: usize, horizon: usize, range: Range<usize>) -> Result<Vec<WindowBatch>> {
    let len = range.len();
    let w = make_windows(ds, seq_len, horizon, range)?;
    if w.is_empty() {
        return Err(Error::RangeTooShort {
            len,
            needed: seq_len + horizon,
        });
    }
    Ok(w)
}

#[cfg(test)]
mod tests;
