//! Survey panels: CSV ingestion, first-release targets, unit conversion,
//! `(C, v)` calibration and a seeded synthetic generator.
//!
//! File schemas (UTF-8, header row required, `.` decimal separator, periods
//! written `YYYYQn`):
//!
//! * forecasts: `survey,variable,horizon,forecaster_id,value`
//! * realizations: `target,variable,value,vintage`
//! * vintages: `asof,variable,period,level`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::aggregation::{ForecasterId, StreamCalibration};
use crate::aq::{sample_estimate, Environment, JudgeParams};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub const FORECAST_HEADER: [&str; 5] = ["survey", "variable", "horizon", "forecaster_id", "value"];
pub const REALIZATION_HEADER: [&str; 4] = ["target", "variable", "value", "vintage"];
pub const VINTAGE_HEADER: [&str; 4] = ["asof", "variable", "period", "level"];

pub const MAX_HORIZON: u8 = 5;

/// A calendar quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    year: i32,
    quarter: u8,
}

impl Period {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if (1..=4).contains(&quarter) {
            Ok(Self { year, quarter })
        } else {
            Err(Error::invalid(format!(
                "quarter must be 1..=4, got {quarter}"
            )))
        }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn quarter(&self) -> u8 {
        self.quarter
    }

    fn index(&self) -> i64 {
        i64::from(self.year) * 4 + i64::from(self.quarter - 1)
    }

    fn from_index(idx: i64) -> Self {
        Self {
            year: idx.div_euclid(4) as i32,
            quarter: (idx.rem_euclid(4) + 1) as u8,
        }
    }

    /// The period `quarters` later (earlier when negative).
    pub fn offset(&self, quarters: i64) -> Self {
        Self::from_index(self.index() + quarters)
    }

    /// Quarters from `self` to `later`.
    pub fn quarters_until(&self, later: &Period) -> i64 {
        later.index() - self.index()
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("period {s:?} is not of the form YYYYQn"));
        let (year, quarter) = s.split_once('Q').ok_or_else(bad)?;
        if year.len() != 4 || quarter.len() != 1 {
            return Err(bad());
        }
        let year: i32 = year.parse().map_err(|_| bad())?;
        let quarter: u8 = quarter.parse().map_err(|_| bad())?;
        Period::new(year, quarter).map_err(|_| bad())
    }
}

/// How a variable's raw levels map to analysis units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesUnits {
    /// Levels, analysed as yearly percentage changes.
    Levels,
    /// Already a percentage; used as is.
    Percent,
}

impl SeriesUnits {
    /// Unemployment is published as a rate; everything else as levels.
    pub fn for_variable(variable: &str) -> Self {
        if variable == "UNEMP" {
            SeriesUnits::Percent
        } else {
            SeriesUnits::Levels
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub survey: Period,
    pub variable: String,
    pub horizon: u8,
    pub forecaster: ForecasterId,
    pub value: f64,
}

impl ForecastRecord {
    /// Horizon 1 targets the survey quarter itself.
    pub fn target(&self) -> Period {
        self.survey.offset(i64::from(self.horizon) - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationRecord {
    pub target: Period,
    pub variable: String,
    pub value: f64,
    pub vintage: Period,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VintageRecord {
    pub asof: Period,
    pub variable: String,
    pub period: Period,
    pub level: f64,
}

/// A first-release realized value and the vintage it was released in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Realized {
    pub value: f64,
    pub vintage: Period,
}

/// Forecasts of several variables over several horizons, with their targets.
#[derive(Debug, Clone, Default)]
pub struct Panel {
    variables: BTreeSet<String>,
    surveys: Vec<Period>,
    forecasts: Vec<ForecastRecord>,
    realizations: Vec<RealizationRecord>,
    vintages: Vec<VintageRecord>,
    units: BTreeMap<String, SeriesUnits>,
    targets: BTreeMap<(String, Period), Realized>,
}

impl Panel {
    /// Builds a panel. Units default to [`SeriesUnits::for_variable`] unless
    /// overridden in `units`.
    pub fn new(
        forecasts: Vec<ForecastRecord>,
        realizations: Vec<RealizationRecord>,
        vintages: Vec<VintageRecord>,
        units: BTreeMap<String, SeriesUnits>,
    ) -> Result<Self> {
        for f in &forecasts {
            if !(1..=MAX_HORIZON).contains(&f.horizon) {
                return Err(Error::invalid(format!(
                    "horizon {} outside 1..=5",
                    f.horizon
                )));
            }
            if !f.value.is_finite() {
                return Err(Error::invalid("forecast values must be finite"));
            }
        }
        let variables: BTreeSet<String> = forecasts
            .iter()
            .map(|f| f.variable.clone())
            .chain(realizations.iter().map(|r| r.variable.clone()))
            .chain(vintages.iter().map(|v| v.variable.clone()))
            .collect();
        let surveys: Vec<Period> = forecasts
            .iter()
            .map(|f| f.survey)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut all_units = BTreeMap::new();
        for v in &variables {
            let u = units
                .get(v)
                .copied()
                .unwrap_or_else(|| SeriesUnits::for_variable(v));
            all_units.insert(v.clone(), u);
        }
        let mut panel = Self {
            variables,
            surveys,
            forecasts,
            realizations,
            vintages,
            units: all_units,
            targets: BTreeMap::new(),
        };
        panel.targets = panel.resolve_targets();
        Ok(panel)
    }

    pub fn is_empty(&self) -> bool {
        self.forecasts.is_empty()
    }

    pub fn variables(&self) -> &BTreeSet<String> {
        &self.variables
    }

    pub fn surveys(&self) -> &[Period] {
        &self.surveys
    }

    pub fn forecasts(&self) -> &[ForecastRecord] {
        &self.forecasts
    }

    pub fn realizations(&self) -> &[RealizationRecord] {
        &self.realizations
    }

    pub fn vintages(&self) -> &[VintageRecord] {
        &self.vintages
    }

    pub fn units(&self, variable: &str) -> SeriesUnits {
        self.units
            .get(variable)
            .copied()
            .unwrap_or_else(|| SeriesUnits::for_variable(variable))
    }

    /// Horizons present in the forecasts.
    pub fn horizons(&self) -> BTreeSet<u8> {
        self.forecasts.iter().map(|f| f.horizon).collect()
    }

    /// First-release realized value of `variable` at `target`.
    pub fn realized(&self, variable: &str, target: Period) -> Option<Realized> {
        self.targets.get(&(variable.to_string(), target)).copied()
    }

    /// Explicit realization records win, earliest vintage first. Targets
    /// without one are taken from the first vintage published after them.
    fn resolve_targets(&self) -> BTreeMap<(String, Period), Realized> {
        let mut out: BTreeMap<(String, Period), Realized> = BTreeMap::new();
        for r in &self.realizations {
            let entry = Realized {
                value: r.value,
                vintage: r.vintage,
            };
            out.entry((r.variable.clone(), r.target))
                .and_modify(|cur| {
                    if r.vintage < cur.vintage {
                        *cur = entry;
                    }
                })
                .or_insert(entry);
        }
        let by_vintage = self.vintage_levels();
        let needed: BTreeSet<(String, Period)> = self
            .forecasts
            .iter()
            .map(|f| (f.variable.clone(), f.target()))
            .filter(|key| !out.contains_key(key))
            .collect();
        for (variable, target) in needed {
            let Some(vintages) = by_vintage.get(&variable) else {
                continue;
            };
            let first = vintages.range(target.offset(1)..).next();
            if let Some((asof, levels)) = first {
                let units = self.units(&variable);
                if let Ok(value) = to_yearly_pct_change(&variable, levels, target, units) {
                    out.insert(
                        (variable, target),
                        Realized {
                            value,
                            vintage: *asof,
                        },
                    );
                }
            }
        }
        out
    }

    /// `variable → asof → period → level`.
    fn vintage_levels(&self) -> BTreeMap<String, BTreeMap<Period, BTreeMap<Period, f64>>> {
        let mut out: BTreeMap<String, BTreeMap<Period, BTreeMap<Period, f64>>> = BTreeMap::new();
        for v in &self.vintages {
            out.entry(v.variable.clone())
                .or_default()
                .entry(v.asof)
                .or_default()
                .insert(v.period, v.level);
        }
        out
    }

    /// The latest vintage of `variable` in analysis units, in period order.
    /// Falls back to the first-release targets when there are no vintages.
    pub fn analysis_series(&self, variable: &str) -> Vec<f64> {
        let units = self.units(variable);
        if let Some(latest) = self
            .vintage_levels()
            .get(variable)
            .and_then(|v| v.values().next_back().cloned())
        {
            return latest
                .keys()
                .filter_map(|&p| to_yearly_pct_change(variable, &latest, p, units).ok())
                .collect();
        }
        self.targets
            .iter()
            .filter(|((v, _), _)| v == variable)
            .map(|(_, r)| r.value)
            .collect()
    }

    /// Calibrates `(C, v)` for every variable from its analysis series.
    pub fn calibrate(&self) -> Result<Calibration> {
        let series: BTreeMap<String, Vec<f64>> = self
            .variables
            .iter()
            .map(|v| (v.clone(), self.analysis_series(v)))
            .collect();
        calibrate_v(&series)
    }

    /// Median number of `(survey, horizon)` forecasts per forecaster.
    pub fn median_tenure(&self, variable: &str) -> Option<f64> {
        let mut counts: BTreeMap<&ForecasterId, usize> = BTreeMap::new();
        for f in self.forecasts.iter().filter(|f| f.variable == variable) {
            *counts.entry(&f.forecaster).or_default() += 1;
        }
        let xs: Vec<f64> = counts.values().map(|&c| c as f64).collect();
        crate::stats::median(&xs)
    }

    /// Distinct forecasters in the panel.
    pub fn forecasters(&self) -> BTreeSet<ForecasterId> {
        self.forecasts
            .iter()
            .map(|f| f.forecaster.clone())
            .collect()
    }
}

/// Converts a level series to a yearly percentage change at `target`.
/// Percent-valued series are returned unchanged.
pub fn to_yearly_pct_change(
    variable: &str,
    levels: &BTreeMap<Period, f64>,
    target: Period,
    units: SeriesUnits,
) -> Result<f64> {
    let current = *levels.get(&target).ok_or_else(|| Error::MissingLag {
        variable: variable.to_string(),
        period: target.to_string(),
    })?;
    if units == SeriesUnits::Percent {
        return Ok(current);
    }
    let lag = target.offset(-4);
    let base = *levels.get(&lag).ok_or_else(|| Error::MissingLag {
        variable: variable.to_string(),
        period: lag.to_string(),
    })?;
    if base == 0.0 {
        return Err(Error::ZeroBase {
            variable: variable.to_string(),
            period: lag.to_string(),
        });
    }
    Ok(100.0 * (current / base - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableCalibration {
    pub norm: f64,
    pub evidence: f64,
}

/// Per-variable `(C, v)`; `C` is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub elements: u32,
    pub variables: BTreeMap<String, VariableCalibration>,
}

impl Calibration {
    pub fn stream(&self, variable: &str) -> Result<StreamCalibration> {
        let var = self
            .variables
            .get(variable)
            .ok_or_else(|| Error::invalid(format!("no calibration for variable {variable:?}")))?;
        Ok(StreamCalibration {
            elements: self.elements,
            evidence: var.evidence,
        })
    }
}

/// Norm is the arithmetic mean; `v` the largest absolute deviation from it.
/// Sums run sequentially in input order.
pub fn calibrate_series(variable: &str, series: &[f64]) -> Result<VariableCalibration> {
    if series.is_empty() {
        return Err(Error::invalid(format!(
            "empty calibration series for {variable}"
        )));
    }
    let mut sum = 0.0;
    for &x in series {
        sum += x;
    }
    let norm = sum / series.len() as f64;
    let evidence = series.iter().fold(0.0f64, |m, &x| m.max((x - norm).abs()));
    if !(evidence > 0.0) {
        return Err(Error::DegenerateCalibration(variable.to_string()));
    }
    Ok(VariableCalibration { norm, evidence })
}

/// Calibrates every series with `C = 1`.
pub fn calibrate_v(series: &BTreeMap<String, Vec<f64>>) -> Result<Calibration> {
    let variables = series
        .iter()
        .map(|(name, xs)| Ok((name.clone(), calibrate_series(name, xs)?)))
        .collect::<Result<_>>()?;
    Ok(Calibration {
        elements: 1,
        variables,
    })
}

/// A rejected row.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub line: u64,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: Panel,
    pub diagnostics: Vec<Diagnostic>,
}

struct Rows {
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Rows> {
    let mut raw = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.trim().is_empty() {
        log::warn!("{}: empty file", path.display());
        return Ok(Rows { rows: Vec::new() });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(raw.as_bytes());
    let found = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected columns {:?}, found {:?}",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Schema {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    if rows.is_empty() {
        log::warn!("{}: no data rows", path.display());
    }
    Ok(Rows { rows })
}

fn field(rec: &csv::StringRecord, i: usize) -> &str {
    rec.get(i).unwrap_or("")
}

fn parse_finite(s: &str, what: &str) -> std::result::Result<f64, String> {
    let x: f64 = s
        .parse()
        .map_err(|_| format!("{what} {s:?} is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{what} {s:?} is not finite"))
    }
}

fn parse_period(s: &str, what: &str) -> std::result::Result<Period, String> {
    s.parse::<Period>()
        .map_err(|_| format!("{what} {s:?} is not a YYYYQn period"))
}

fn parse_variable(s: &str) -> std::result::Result<String, String> {
    if s.is_empty() {
        Err("empty variable code".into())
    } else {
        Ok(s.to_string())
    }
}

/// Tracks first-seen lines for duplicate detection.
struct Seen<K> {
    path: PathBuf,
    lines: HashMap<K, u64>,
}

impl<K: std::hash::Hash + Eq + fmt::Debug> Seen<K> {
    fn new(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            lines: HashMap::new(),
        }
    }

    fn check(&mut self, key: K, line: u64) -> Result<()> {
        if let Some(&first) = self.lines.get(&key) {
            return Err(Error::Duplicate {
                path: self.path.clone(),
                key: format!("{key:?}"),
                first_line: first,
                second_line: line,
            });
        }
        self.lines.insert(key, line);
        Ok(())
    }
}

fn load_forecasts(path: &Path, diags: &mut Vec<Diagnostic>) -> Result<Vec<ForecastRecord>> {
    let rows = read_rows(path, &FORECAST_HEADER)?;
    let mut seen = Seen::new(path);
    let mut out = Vec::with_capacity(rows.rows.len());
    for (line, rec) in rows.rows {
        let parsed = (|| {
            let survey = parse_period(field(&rec, 0), "survey")?;
            let variable = parse_variable(field(&rec, 1))?;
            let horizon: u8 = field(&rec, 2)
                .parse()
                .map_err(|_| format!("horizon {:?} is not an integer", field(&rec, 2)))?;
            if !(1..=MAX_HORIZON).contains(&horizon) {
                return Err(format!("horizon {horizon} outside 1..=5"));
            }
            let id = field(&rec, 3);
            if id.is_empty() {
                return Err("empty forecaster_id".to_string());
            }
            let value = parse_finite(field(&rec, 4), "value")?;
            Ok(ForecastRecord {
                survey,
                variable,
                horizon,
                forecaster: ForecasterId::from(id),
                value,
            })
        })();
        match parsed {
            Ok(r) => {
                seen.check(
                    (
                        r.survey,
                        r.variable.clone(),
                        r.horizon,
                        r.forecaster.clone(),
                    ),
                    line,
                )?;
                out.push(r);
            }
            Err(message) => diags.push(Diagnostic {
                path: path.to_path_buf(),
                line,
                message,
            }),
        }
    }
    Ok(out)
}

fn load_realizations(path: &Path, diags: &mut Vec<Diagnostic>) -> Result<Vec<RealizationRecord>> {
    let rows = read_rows(path, &REALIZATION_HEADER)?;
    let mut seen = Seen::new(path);
    let mut out = Vec::with_capacity(rows.rows.len());
    for (line, rec) in rows.rows {
        let parsed = (|| {
            Ok::<_, String>(RealizationRecord {
                target: parse_period(field(&rec, 0), "target")?,
                variable: parse_variable(field(&rec, 1))?,
                value: parse_finite(field(&rec, 2), "value")?,
                vintage: parse_period(field(&rec, 3), "vintage")?,
            })
        })();
        match parsed {
            Ok(r) => {
                seen.check((r.target, r.variable.clone(), r.vintage), line)?;
                out.push(r);
            }
            Err(message) => diags.push(Diagnostic {
                path: path.to_path_buf(),
                line,
                message,
            }),
        }
    }
    Ok(out)
}

fn load_vintages(path: &Path, diags: &mut Vec<Diagnostic>) -> Result<Vec<VintageRecord>> {
    let rows = read_rows(path, &VINTAGE_HEADER)?;
    let mut seen = Seen::new(path);
    let mut out = Vec::with_capacity(rows.rows.len());
    for (line, rec) in rows.rows {
        let parsed = (|| {
            Ok::<_, String>(VintageRecord {
                asof: parse_period(field(&rec, 0), "asof")?,
                variable: parse_variable(field(&rec, 1))?,
                period: parse_period(field(&rec, 2), "period")?,
                level: parse_finite(field(&rec, 3), "level")?,
            })
        })();
        match parsed {
            Ok(r) => {
                seen.check((r.asof, r.variable.clone(), r.period), line)?;
                out.push(r);
            }
            Err(message) => diags.push(Diagnostic {
                path: path.to_path_buf(),
                line,
                message,
            }),
        }
    }
    Ok(out)
}

/// Loads and validates the three panel files.
///
/// Unparseable rows are skipped and reported in `diagnostics`; a wrong
/// header, a ragged row or a duplicate key fails the whole load.
pub fn load_panel(
    forecast_path: impl AsRef<Path>,
    realization_path: impl AsRef<Path>,
    vintage_path: impl AsRef<Path>,
) -> Result<LoadedPanel> {
    let mut diagnostics = Vec::new();
    let forecasts = load_forecasts(forecast_path.as_ref(), &mut diagnostics)?;
    let realizations = load_realizations(realization_path.as_ref(), &mut diagnostics)?;
    let vintages = load_vintages(vintage_path.as_ref(), &mut diagnostics)?;
    for d in &diagnostics {
        log::warn!("rejected row: {d}");
    }
    let panel = Panel::new(forecasts, realizations, vintages, BTreeMap::new())?;
    Ok(LoadedPanel { panel, diagnostics })
}

fn write_csv<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(|e| Error::csv(path, e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Writes the panel back in record order. Numbers use the shortest
/// representation that round-trips.
pub fn write_panel(
    panel: &Panel,
    forecast_path: impl AsRef<Path>,
    realization_path: impl AsRef<Path>,
    vintage_path: impl AsRef<Path>,
) -> Result<()> {
    write_csv(
        forecast_path.as_ref(),
        FORECAST_HEADER,
        panel.forecasts.iter().map(|f| {
            [
                f.survey.to_string(),
                f.variable.clone(),
                f.horizon.to_string(),
                f.forecaster.to_string(),
                f.value.to_string(),
            ]
        }),
    )?;
    write_csv(
        realization_path.as_ref(),
        REALIZATION_HEADER,
        panel.realizations.iter().map(|r| {
            [
                r.target.to_string(),
                r.variable.clone(),
                r.value.to_string(),
                r.vintage.to_string(),
            ]
        }),
    )?;
    write_csv(
        vintage_path.as_ref(),
        VINTAGE_HEADER,
        panel.vintages.iter().map(|v| {
            [
                v.asof.to_string(),
                v.variable.clone(),
                v.period.to_string(),
                v.level.to_string(),
            ]
        }),
    )
}

/// Distribution of latent reliabilities in a synthetic crowd.
#[derive(Debug, Clone, PartialEq)]
pub enum PDistribution {
    Fixed(f64),
    Uniform(f64, f64),
    /// Uniform choice among the listed values.
    Choice(Vec<f64>),
}

impl PDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PDistribution::Fixed(p) => *p,
            PDistribution::Uniform(lo, hi) => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..*hi)
                }
            }
            PDistribution::Choice(ps) => ps[rng.random_range(0..ps.len())],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PDistribution::Fixed(p) => vec![*p],
            PDistribution::Uniform(a, b) => vec![*a, *b],
            PDistribution::Choice(ps) => ps.clone(),
        }
    }
}

impl FromStr for PDistribution {
    type Err = Error;

    /// `fixed:0.8`, `uniform:0.6,0.95` or `choice:0.95,0.7`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad p distribution {s:?}"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let dist = match (kind.trim(), nums.as_slice()) {
            ("fixed", [p]) => PDistribution::Fixed(*p),
            ("uniform", [a, b]) if a <= b => PDistribution::Uniform(*a, *b),
            ("choice", ps) if !ps.is_empty() => PDistribution::Choice(ps.to_vec()),
            _ => return Err(bad()),
        };
        if dist.values().iter().any(|p| !(0.5..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "p values in {s:?} must lie in [0.5, 1]"
            )));
        }
        Ok(dist)
    }
}

/// Parameters of the synthetic panel generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Roster size at any time.
    pub forecasters: usize,
    pub surveys: usize,
    pub variables: usize,
    pub horizons: u8,
    pub p: PDistribution,
    /// Drop in latent p per extra quarter of horizon (floored at 0.5).
    pub p_horizon_decay: f64,
    pub elements: u32,
    pub evidence: f64,
    pub norm: f64,
    /// Per-survey probability that a roster member is replaced.
    pub turnover: f64,
    /// Per-survey probability that a roster member responds.
    pub participation: f64,
    pub start: Period,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            forecasters: 20,
            surveys: 60,
            variables: 1,
            horizons: 1,
            p: PDistribution::Fixed(0.8),
            p_horizon_decay: 0.0,
            elements: 20,
            evidence: 0.25,
            norm: 2.0,
            turnover: 0.0,
            participation: 1.0,
            start: Period {
                year: 1990,
                quarter: 1,
            },
        }
    }
}

impl SynthConfig {
    /// Parses flat `key = value` lines; `#` starts a comment. Keys not given
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |what: &str| -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: {what} must be a number", n + 1)))
            };
            let int = |what: &str| -> Result<u64> {
                value.parse::<u64>().map_err(|_| {
                    Error::Config(format!(
                        "line {}: {what} must be a non-negative integer",
                        n + 1
                    ))
                })
            };
            match key {
                "seed" => cfg.seed = int(key)?,
                "forecasters" => cfg.forecasters = int(key)? as usize,
                "surveys" => cfg.surveys = int(key)? as usize,
                "variables" => cfg.variables = int(key)? as usize,
                "horizons" => cfg.horizons = int(key)? as u8,
                "p" => cfg.p = value.parse()?,
                "p_horizon_decay" => cfg.p_horizon_decay = num(key)?,
                "elements" => cfg.elements = int(key)? as u32,
                "evidence" => cfg.evidence = num(key)?,
                "norm" => cfg.norm = num(key)?,
                "turnover" => cfg.turnover = num(key)?,
                "participation" => cfg.participation = num(key)?,
                "start" => cfg.start = value.parse()?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        n + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.forecasters == 0 || self.surveys == 0 || self.variables == 0 {
            return fail("forecasters, surveys and variables must be positive");
        }
        if !(1..=MAX_HORIZON).contains(&self.horizons) {
            return fail("horizons must be in 1..=5");
        }
        if self.elements == 0 || !(self.evidence > 0.0) {
            return fail("elements and evidence must be positive");
        }
        if !(0.0..=1.0).contains(&self.turnover) || !(0.0..=1.0).contains(&self.participation) {
            return fail("turnover and participation must lie in [0, 1]");
        }
        if !(self.p_horizon_decay >= 0.0) {
            return fail("p_horizon_decay must be >= 0");
        }
        Ok(())
    }

    pub fn variable_name(i: usize) -> String {
        format!("SYN{}", i + 1)
    }
}

/// Generates a panel whose forecasts are quincunx judgments.
///
/// Each target period of each variable gets a latent deviation `t` (a sum of
/// `C` fair signs); forecasts for it are drawn by [`sample_estimate`] and
/// the realized value is `norm + t·v`, released one quarter after the
/// target. Roster slots are refilled with new forecasters at the turnover
/// rate.
pub fn synth_panel(config: &SynthConfig) -> Result<Panel> {
    config.validate()?;
    let mut roster_rng = RandomStream::derive(config.seed, 0);
    let mut truth_rng = RandomStream::derive(config.seed, 1);
    let mut forecast_rng = RandomStream::derive(config.seed, 2);

    let mut next_id = 0usize;
    let mut new_member = |rng: &mut RandomStream| {
        next_id += 1;
        (
            ForecasterId::from(format!("F{next_id:04}")),
            config.p.sample(rng),
        )
    };
    let mut roster: Vec<(ForecasterId, f64)> = (0..config.forecasters)
        .map(|_| new_member(&mut roster_rng))
        .collect();

    let names: Vec<String> = (0..config.variables)
        .map(SynthConfig::variable_name)
        .collect();
    let mut truths: BTreeMap<(usize, Period), i64> = BTreeMap::new();
    let c = config.elements;
    let draw_t = |rng: &mut RandomStream| -> i64 {
        (0..c)
            .map(|_| if rng.random_bool(0.5) { 1i64 } else { -1 })
            .sum()
    };

    let mut forecasts = Vec::new();
    for s in 0..config.surveys {
        let survey = config.start.offset(s as i64);
        if s > 0 && config.turnover > 0.0 {
            for slot in roster.iter_mut() {
                if roster_rng.random_bool(config.turnover) {
                    *slot = new_member(&mut roster_rng);
                }
            }
        }
        let responding: Vec<bool> = roster
            .iter()
            .map(|_| config.participation >= 1.0 || roster_rng.random_bool(config.participation))
            .collect();
        for (vi, name) in names.iter().enumerate() {
            for h in 1..=config.horizons {
                let target = survey.offset(i64::from(h) - 1);
                let t = *truths
                    .entry((vi, target))
                    .or_insert_with(|| draw_t(&mut truth_rng));
                let env = Environment::new(config.norm, c, config.evidence, t)?;
                for ((id, base_p), _) in roster.iter().zip(&responding).filter(|(_, r)| **r) {
                    let p = (base_p - config.p_horizon_decay * f64::from(h - 1)).clamp(0.5, 1.0);
                    let value = sample_estimate(JudgeParams::new(p)?, &env, &mut forecast_rng);
                    forecasts.push(ForecastRecord {
                        survey,
                        variable: name.clone(),
                        horizon: h,
                        forecaster: id.clone(),
                        value,
                    });
                }
            }
        }
    }

    let last_target = truths.keys().map(|(_, p)| *p).max().unwrap_or(config.start);
    let asof = last_target.offset(1);
    let mut realizations = Vec::with_capacity(truths.len());
    let mut vintages = Vec::with_capacity(truths.len());
    for (&(vi, target), &t) in &truths {
        let value = config.norm + t as f64 * config.evidence;
        realizations.push(RealizationRecord {
            target,
            variable: names[vi].clone(),
            value,
            vintage: target.offset(1),
        });
        vintages.push(VintageRecord {
            asof,
            variable: names[vi].clone(),
            period: target,
            level: value,
        });
    }
    let units = names
        .iter()
        .map(|n| (n.clone(), SeriesUnits::Percent))
        .collect();
    Panel::new(forecasts, realizations, vintages, units)
}
