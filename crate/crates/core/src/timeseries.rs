//! Exogenous time series: residential load, PV generation and prices.
//!
//! A [`Scenario`] is an immutable, gap-free sequence of [`ExogenousRecord`]s
//! sampled at a fixed step. Scenarios are read from / written to CSV with the
//! header
//!
//! ```text
//! index,p_home_kw,p_pvgen_kw,price_buy_per_kwh,price_sell_per_kwh
//! ```
//!
//! or produced by the seeded synthetic generator [`synth_scenario`]. Index 0
//! of every scenario is taken to be midnight.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 5] = [
    "index",
    "p_home_kw",
    "p_pvgen_kw",
    "price_buy_per_kwh",
    "price_sell_per_kwh",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}, column {column}: {reason}")]
    Invalid {
        row: usize,
        column: &'static str,
        reason: String,
    },
    #[error("empty scenario")]
    Empty,
    #[error("dt_hours must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("invalid generator parameter: {0}")]
    BadParameter(String),
}

/// One time step of exogenous data for the lumped community of homes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousRecord {
    pub index: usize,
    /// Total residential load, kW.
    pub p_home: f64,
    /// Total PV generation, kW.
    pub p_pvgen: f64,
    /// Retail purchase price, $/kWh.
    pub price_buy: f64,
    /// Export price, $/kWh.
    pub price_sell: f64,
}

impl ExogenousRecord {
    /// Checks the record invariants, reporting the first offending column.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        let fields = [
            ("p_home_kw", self.p_home),
            ("p_pvgen_kw", self.p_pvgen),
            ("price_buy_per_kwh", self.price_buy),
            ("price_sell_per_kwh", self.price_sell),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err((name, format!("value {v} is not finite")));
            }
        }
        if self.p_home < 0.0 {
            return Err(("p_home_kw", format!("negative load {}", self.p_home)));
        }
        if self.p_pvgen < 0.0 {
            return Err(("p_pvgen_kw", format!("negative PV {}", self.p_pvgen)));
        }
        if self.price_sell < 0.0 {
            return Err((
                "price_sell_per_kwh",
                format!("negative export price {}", self.price_sell),
            ));
        }
        Ok(())
    }
}

/// Home load minus PV generation; negative means PV surplus.
pub fn net_load(record: &ExogenousRecord) -> f64 {
    record.p_home - record.p_pvgen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    records: Vec<ExogenousRecord>,
    dt_hours: f64,
    label: String,
}

impl Scenario {
    /// Builds a scenario, validating every record and the index sequence.
    pub fn new(
        records: Vec<ExogenousRecord>,
        dt_hours: f64,
        label: impl Into<String>,
    ) -> Result<Self, ScenarioError> {
        if !(dt_hours.is_finite() && dt_hours > 0.0) {
            return Err(ScenarioError::BadStep(dt_hours));
        }
        if records.is_empty() {
            return Err(ScenarioError::Empty);
        }
        for (i, r) in records.iter().enumerate() {
            if r.index != i {
                return Err(ScenarioError::Invalid {
                    row: i + 1,
                    column: "index",
                    reason: format!("expected index {i}, found {}", r.index),
                });
            }
            r.check().map_err(|(column, reason)| ScenarioError::Invalid {
                row: i + 1,
                column,
                reason,
            })?;
        }
        Ok(Self {
            records,
            dt_hours,
            label: label.into(),
        })
    }

    pub fn records(&self) -> &[ExogenousRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &ExogenousRecord {
        &self.records[i]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dt_hours(&self) -> f64 {
        self.dt_hours
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Steps per 24 h, when the step length divides a day evenly.
    pub fn steps_per_day(&self) -> Option<usize> {
        steps_per_day(self.dt_hours)
    }

    /// Number of whole days covered.
    pub fn days(&self) -> usize {
        self.steps_per_day().map_or(0, |s| self.len() / s)
    }

    /// Hour of day at the start of step `i`, assuming index 0 is midnight.
    pub fn hour_of_day(&self, i: usize) -> f64 {
        (i as f64 * self.dt_hours).rem_euclid(24.0)
    }

    /// Copies `len` records starting at `start` into a new, re-indexed scenario.
    pub fn window(&self, start: usize, len: usize) -> Result<Scenario, ScenarioError> {
        let end = (start + len).min(self.len());
        if start >= end {
            return Err(ScenarioError::Empty);
        }
        let records = self.records[start..end]
            .iter()
            .enumerate()
            .map(|(i, r)| ExogenousRecord { index: i, ..*r })
            .collect();
        Scenario::new(
            records,
            self.dt_hours,
            format!("{}[{start}..{end}]", self.label),
        )
    }

    pub fn max_abs_net_load(&self) -> f64 {
        self.records
            .iter()
            .map(|r| net_load(r).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn steps_per_day(dt_hours: f64) -> Option<usize> {
    let s = 24.0 / dt_hours;
    let r = s.round();
    ((s - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

/// Reads a scenario CSV. The whole file is rejected on the first bad cell.
pub fn load_scenario(path: impl AsRef<Path>, dt_hours: f64) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_scenario(file, dt_hours, label)
}

pub fn read_scenario(
    reader: impl Read,
    dt_hours: f64,
    label: impl Into<String>,
) -> Result<Scenario, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(ScenarioError::Header {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 1;
        if row.len() != CSV_HEADER.len() {
            return Err(ScenarioError::ColumnCount {
                row: line,
                expected: CSV_HEADER.len(),
                found: row.len(),
            });
        }
        let index: usize = row[0].parse().map_err(|_| ScenarioError::Parse {
            row: line,
            column: CSV_HEADER[0],
            value: row[0].to_string(),
        })?;
        let mut vals = [0.0f64; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            let cell = &row[k + 1];
            *v = cell.parse().map_err(|_| ScenarioError::Parse {
                row: line,
                column: CSV_HEADER[k + 1],
                value: cell.to_string(),
            })?;
        }
        let rec = ExogenousRecord {
            index,
            p_home: vals[0],
            p_pvgen: vals[1],
            price_buy: vals[2],
            price_sell: vals[3],
        };
        rec.check().map_err(|(column, reason)| ScenarioError::Invalid {
            row: line,
            column,
            reason,
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(ScenarioError::Empty);
    }
    Scenario::new(records, dt_hours, label)
}

/// Writes the scenario as CSV. Floats use the shortest representation that
/// parses back to the same value, so load/write round-trips exactly.
pub fn write_scenario(scenario: &Scenario, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for r in scenario.records() {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.index, r.p_home, r.p_pvgen, r.price_buy, r.price_sell
        )?;
    }
    Ok(())
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_scenario(scenario, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Parameters of the synthetic community generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub days: usize,
    pub n_homes: usize,
    pub pv_kwp_per_home: f64,
    pub dt_hours: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 1,
            days: 1,
            n_homes: 60,
            pv_kwp_per_home: 2.0,
            dt_hours: 1.0,
        }
    }
}

// Retail TOU tiers, $/kWh.
const TOU_OFF_PEAK: f64 = 0.15;
const TOU_SHOULDER: f64 = 0.25;
const TOU_PEAK: f64 = 0.45;

// PV is nonzero strictly between these hours.
const SUNRISE_H: f64 = 6.0;
const SUNSET_H: f64 = 19.0;
// Peak AC output as a fraction of nameplate; with the noise ceiling below the
// product stays under 1 so the fleet never exceeds its kWp rating.
const PV_DERATE: f64 = 0.85;
const PV_NOISE_MAX: f64 = 1.15;

/// Three-tier time-of-use retail tariff.
pub fn tou_price(hour: f64) -> f64 {
    match hour {
        h if (14.0..20.0).contains(&h) => TOU_PEAK,
        h if (7.0..14.0).contains(&h) || (20.0..22.0).contains(&h) => TOU_SHOULDER,
        _ => TOU_OFF_PEAK,
    }
}

/// Clear-sky PV shape in [0, 1]; exactly zero outside daylight.
fn pv_shape(hour: f64) -> f64 {
    if hour <= SUNRISE_H || hour >= SUNSET_H {
        return 0.0;
    }
    (PI * (hour - SUNRISE_H) / (SUNSET_H - SUNRISE_H)).sin()
}

/// Per-home residential demand shape with morning and evening peaks, kW.
fn load_shape(hour: f64) -> f64 {
    let bump = |centre: f64, width: f64| {
        // wrap so the evening bump leaks smoothly past midnight
        let d = (hour - centre + 12.0).rem_euclid(24.0) - 12.0;
        (-(d / width).powi(2)).exp()
    };
    0.32 + 0.55 * bump(7.5, 1.5) + 0.12 * bump(13.0, 3.0) + 1.05 * bump(19.0, 2.2)
}

/// Seeded synthetic community: lumped load and PV for `n_homes`, a TOU
/// purchase tariff and a wholesale-like export price with occasional spikes.
pub fn synth_scenario(params: &SynthParams) -> Result<Scenario, ScenarioError> {
    if params.days == 0 {
        return Err(ScenarioError::BadParameter("days must be >= 1".into()));
    }
    if params.n_homes == 0 {
        return Err(ScenarioError::BadParameter("n_homes must be >= 1".into()));
    }
    if !(params.pv_kwp_per_home.is_finite() && params.pv_kwp_per_home >= 0.0) {
        return Err(ScenarioError::BadParameter(
            "pv_kwp_per_home must be >= 0".into(),
        ));
    }
    let steps = steps_per_day(params.dt_hours).ok_or_else(|| {
        ScenarioError::BadParameter(format!(
            "dt_hours={} does not divide a day",
            params.dt_hours
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let homes = params.n_homes as f64;
    let pv_cap = homes * params.pv_kwp_per_home;

    let mut records = Vec::with_capacity(params.days * steps);
    let mut wholesale_ar = 0.0f64;
    for _day in 0..params.days {
        // cloudiness in [0.35, 1], skewed towards clear days
        let clear = 1.0 - 0.65 * rng.gen::<f64>().powi(2);
        let demand_scale = rng.gen_range(0.85..1.2);
        for k in 0..steps {
            let hour = k as f64 * params.dt_hours;

            let pv_noise = (1.0 + 0.08 * unit.sample(&mut rng)).clamp(0.7, PV_NOISE_MAX);
            let shape = pv_shape(hour);
            let p_pvgen = if shape > 0.0 {
                (pv_cap * PV_DERATE * shape * clear * pv_noise).min(pv_cap)
            } else {
                0.0
            };

            let load_noise = (1.0 + 0.07 * unit.sample(&mut rng)).max(0.5);
            let p_home = homes * load_shape(hour) * demand_scale * load_noise;

            wholesale_ar = 0.7 * wholesale_ar + 0.012 * unit.sample(&mut rng);
            let base = 0.065 + 0.045 * (-((hour - 18.5) / 2.5).powi(2)).exp()
                - 0.035 * pv_shape(hour)
                + wholesale_ar;
            let mut price_sell = base.max(0.0);
            if rng.gen::<f64>() < 0.015 {
                price_sell += rng.gen_range(0.15..0.45);
            }

            records.push(ExogenousRecord {
                index: records.len(),
                p_home,
                p_pvgen,
                price_buy: tou_price(hour),
                price_sell,
            });
        }
    }
    Scenario::new(
        records,
        params.dt_hours,
        format!(
            "synth(seed={},days={},homes={},kwp={})",
            params.seed, params.days, params.n_homes, params.pv_kwp_per_home
        ),
    )
}
