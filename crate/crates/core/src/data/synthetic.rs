//! Coupled autoregressive multi-location generator.
//!
//! Latent state per location:
//!
//! ```text
//! s_k(t+1) = a·[(1-κ)·s_k(t) + κ·mean_{j≠k} s_j(t - δ_jk)] + ε,   ε ~ N(0, σ²)
//! ```
//!
//! with per-pair lags `δ_jk ∈ {1, 2}` drawn once from the seed. The convex
//! mix keeps the process stationary for every κ in `[0, 1]`. Observed
//! variables are fixed random linear readouts of `s_k` plus a shared annual
//! term `sin(2πt/365)` and observation noise. Variable 0 is `temperature`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DateRange, Manifest, DATE_FORMAT};
use crate::error::{Error, Result};

pub const MIN_DAYS: usize = 50;
const BURN_IN: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub locations: usize,
    pub vars: usize,
    pub days: usize,
    pub coupling: f64,
    pub seed: u64,
    /// Autoregressive coefficient `a`.
    pub ar: f64,
    /// Innovation standard deviation.
    pub noise: f64,
    /// Observation noise standard deviation.
    pub obs_noise: f64,
    pub start_date: NaiveDate,
}

impl SyntheticConfig {
    pub fn new(locations: usize, vars: usize, days: usize, coupling: f64, seed: u64) -> Self {
        SyntheticConfig {
            locations,
            vars,
            days,
            coupling,
            seed,
            ar: 0.7,
            noise: 0.3,
            obs_noise: 0.1,
            start_date: NaiveDate::from_ymd_opt(2007, 1, 1).expect("valid date"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations == 0 || self.vars == 0 {
            return Err(Error::InvalidConfig("locations and vars must be >= 1".into()));
        }
        if self.days < MIN_DAYS {
            return Err(Error::InvalidConfig(format!(
                "days must be >= {MIN_DAYS}, got {}",
                self.days
            )));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidConfig(format!(
                "coupling must lie in [0, 1], got {}",
                self.coupling
            )));
        }
        if !(self.ar.abs() < 1.0) || !(self.noise >= 0.0) || !(self.obs_noise >= 0.0) {
            return Err(Error::InvalidConfig("need |ar| < 1 and non-negative noise".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    pub dates: Vec<NaiveDate>,
    pub location_names: Vec<String>,
    pub variables: Vec<String>,
    /// `latents[k][t]`.
    pub latents: Vec<Vec<f64>>,
    /// `observations[k][t][v]`.
    pub observations: Vec<Vec<Vec<f64>>>,
    /// `lags[j][k]` = δ_jk (0 on the diagonal).
    pub lags: Vec<Vec<usize>>,
}

impl SyntheticData {
    /// The last eighth of the days, used as the default test range.
    pub fn default_test_range(&self) -> DateRange {
        let n = self.dates.len();
        let test_days = (n / 8).max(1);
        DateRange {
            start: self.dates[n - test_days],
            end: self.dates[n - 1],
        }
    }
}

pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let c = config.locations;
    let m = config.vars;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let lags: Vec<Vec<usize>> = (0..c)
        .map(|j| (0..c).map(|k| if j == k { 0 } else { rng.gen_range(1..=2) }).collect())
        .collect();

    // readout[k][v] = (offset, loading, seasonal amplitude)
    let readout: Vec<Vec<(f64, f64, f64)>> = (0..c)
        .map(|_| {
            (0..m)
                .map(|v| {
                    if v == 0 {
                        (10.0 + rng.gen_range(-1.0..1.0), 3.0, 8.0)
                    } else {
                        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        (
                            rng.gen_range(-5.0..5.0),
                            sign * rng.gen_range(0.5..1.5),
                            rng.gen_range(-2.0..2.0),
                        )
                    }
                })
                .collect()
        })
        .collect();

    let innovation = Normal::new(0.0, config.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let obs = Normal::new(0.0, config.obs_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let total = config.days + BURN_IN;
    let mut s = vec![vec![0.0; total]; c];
    for t in 0..total - 1 {
        for k in 0..c {
            let cross = if c > 1 {
                (0..c)
                    .filter(|&j| j != k)
                    .map(|j| t.checked_sub(lags[j][k]).map_or(0.0, |tl| s[j][tl]))
                    .sum::<f64>()
                    / (c - 1) as f64
            } else {
                0.0
            };
            let own = if c > 1 { 1.0 - config.coupling } else { 1.0 };
            let kappa = if c > 1 { config.coupling } else { 0.0 };
            s[k][t + 1] = config.ar * (own * s[k][t] + kappa * cross) + innovation.sample(&mut rng);
        }
    }
    let latents: Vec<Vec<f64>> = s.into_iter().map(|row| row[BURN_IN..].to_vec()).collect();

    let observations = (0..c)
        .map(|k| {
            (0..config.days)
                .map(|t| {
                    let season = (2.0 * PI * t as f64 / 365.0).sin();
                    readout[k]
                        .iter()
                        .map(|&(offset, load, amp)| {
                            offset + load * latents[k][t] + amp * season + obs.sample(&mut rng)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let dates = (0..config.days)
        .map(|t| config.start_date + chrono::Duration::days(t as i64))
        .collect();
    let variables = (0..m)
        .map(|v| if v == 0 { "temperature".to_string() } else { format!("var{}", v + 1) })
        .collect();

    Ok(SyntheticData {
        config: config.clone(),
        dates,
        location_names: (0..c).map(|k| format!("loc{k}")).collect(),
        variables,
        latents,
        observations,
        lags,
    })
}

/// Writes one CSV per location and `manifest.txt` into `dir`; returns the
/// manifest path. Target is `loc0:temperature`, test range the last eighth.
pub fn write_synthetic(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut locations = Vec::new();
    for (k, name) in data.location_names.iter().enumerate() {
        let mut text = String::from("date");
        for v in &data.variables {
            text.push(',');
            text.push_str(v);
        }
        text.push('\n');
        for (t, date) in data.dates.iter().enumerate() {
            let _ = write!(text, "{}", date.format(DATE_FORMAT));
            for v in &data.observations[k][t] {
                let _ = write!(text, ",{v:.6}");
            }
            text.push('\n');
        }
        let path = dir.join(format!("{name}.csv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        locations.push((name.clone(), path));
    }
    let manifest = Manifest {
        locations,
        target_location: data.location_names[0].clone(),
        target_variable: data.variables[0].clone(),
        test_range: Some(data.default_test_range()),
        date_range: None,
    };
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.to_text(dir)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
