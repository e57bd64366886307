//! Rolling backtests, Diebold–Mariano comparisons and subset sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::aggregation::{
    aggregate, contribution_update, top_n_subset, ForecasterId, ForecasterState, ResolvedSlice,
    Rule, StateTable, SurveySlice,
};
use crate::data::{Calibration, Panel, Period};
use crate::error::{Error, Result};
use crate::stats::{median, standard_normal_cdf};

/// Shortest loss-differential series the DM test accepts.
pub const DM_MIN_LENGTH: usize = 8;

/// When a survey's errors become part of the track records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateTiming {
    /// Once the target's first release has been published, i.e. at the
    /// first survey on or after the realization vintage.
    #[default]
    OnRelease,
    /// Straight after the survey is scored.
    Immediate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub rules: Vec<Rule>,
    /// Harvey–Leybourne–Newbold small-sample correction.
    pub hln: bool,
    /// Aggregate only the `n` most reliable eligible forecasters.
    pub top_n: Option<usize>,
    /// Rolling MSE window; whole history when unset.
    pub window: Option<usize>,
    pub timing: UpdateTiming,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            rules: Rule::ALL.to_vec(),
            hln: false,
            top_n: None,
            window: None,
            timing: UpdateTiming::OnRelease,
        }
    }
}

impl BacktestConfig {
    pub fn with_rules(rules: &[Rule]) -> Self {
        Self {
            rules: rules.to_vec(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseCell {
    pub variable: String,
    pub horizon: u8,
    pub rule: Rule,
    /// `None` when no survey could be scored.
    pub rmse: Option<f64>,
    pub n_surveys: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmRecord {
    pub variable: String,
    pub horizon: u8,
    pub rule: Rule,
    pub stat: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDiagnostics {
    pub variable: String,
    pub horizon: u8,
    pub surveys: usize,
    pub without_realization: usize,
    pub without_eligible: usize,
    pub cwm_fallback: usize,
    pub median_p_hat: Option<f64>,
    /// Rules whose DM comparison was skipped for lack of data.
    pub dm_skipped: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub variable: String,
    pub horizon: u8,
    pub survey: Period,
    pub rule: Rule,
    pub estimate: f64,
    pub realized: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktestReport {
    pub cells: Vec<RmseCell>,
    pub dm: Vec<DmRecord>,
    pub diagnostics: Vec<CellDiagnostics>,
    pub estimates: Vec<EstimateRecord>,
}

impl BacktestReport {
    pub fn rmse(&self, variable: &str, horizon: u8, rule: Rule) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.variable == variable && c.horizon == horizon && c.rule == rule)
            .and_then(|c| c.rmse)
    }
}

/// Forecasts grouped by stream and survey.
type CellIndex = BTreeMap<(String, u8), BTreeMap<Period, BTreeMap<ForecasterId, f64>>>;

fn index_panel(panel: &Panel) -> CellIndex {
    let mut out: CellIndex = BTreeMap::new();
    for f in panel.forecasts() {
        out.entry((f.variable.clone(), f.horizon))
            .or_default()
            .entry(f.survey)
            .or_default()
            .insert(f.forecaster.clone(), f.value);
    }
    out
}

struct Pending {
    release: Period,
    resolved: ResolvedSlice,
}

struct CellRun {
    errors: BTreeMap<Rule, BTreeMap<Period, f64>>,
    diagnostics: CellDiagnostics,
    estimates: Vec<EstimateRecord>,
}

fn apply_pending(
    pending: Pending,
    states: &mut StateTable,
    calib: crate::aggregation::StreamCalibration,
    window: Option<usize>,
) -> Result<()> {
    let resolved = pending.resolved;
    contribution_update(std::slice::from_ref(&resolved), states);
    for (id, x) in &resolved.slice.forecasts {
        let e = x - resolved.realized;
        states
            .entry(id.clone())
            .or_insert_with(|| ForecasterState::new(id.clone()).with_window(window))
            .record_error(e * e, calib)?;
    }
    Ok(())
}

fn run_cell(
    panel: &Panel,
    variable: &str,
    horizon: u8,
    surveys: &BTreeMap<Period, BTreeMap<ForecasterId, f64>>,
    calibration: &Calibration,
    config: &BacktestConfig,
) -> Result<CellRun> {
    let calib = calibration.stream(variable)?;
    let mut states = StateTable::new();
    let mut queue: Vec<Pending> = Vec::new();
    let mut errors: BTreeMap<Rule, BTreeMap<Period, f64>> =
        config.rules.iter().map(|r| (*r, BTreeMap::new())).collect();
    let mut diag = CellDiagnostics {
        variable: variable.to_string(),
        horizon,
        surveys: surveys.len(),
        without_realization: 0,
        without_eligible: 0,
        cwm_fallback: 0,
        median_p_hat: None,
        dm_skipped: Vec::new(),
    };
    let mut p_hats = Vec::new();
    let mut estimates = Vec::new();

    for (&survey, forecasts) in surveys {
        if config.timing == UpdateTiming::OnRelease {
            let (ready, waiting): (Vec<_>, Vec<_>) =
                queue.drain(..).partition(|p| p.release <= survey);
            queue = waiting;
            for p in ready {
                apply_pending(p, &mut states, calib, config.window)?;
            }
        }
        let target = survey.offset(i64::from(horizon) - 1);
        let Some(realized) = panel.realized(variable, target) else {
            diag.without_realization += 1;
            continue;
        };
        let full = SurveySlice::from_states(survey, forecasts.clone(), &states);
        let slice = match config.top_n {
            Some(n) if !full.eligible.is_empty() => {
                full.restrict(&top_n_subset(&states, &full, n)?.ids)
            }
            _ => full.clone(),
        };
        if slice.eligible.is_empty() {
            diag.without_eligible += 1;
        } else {
            for id in &slice.eligible {
                if let Some(p) = states[id].p_hat {
                    p_hats.push(p.p());
                }
            }
            for &rule in &config.rules {
                let r = aggregate(rule, &slice, &states)?;
                if rule == Rule::Cwm && r.fallback {
                    diag.cwm_fallback += 1;
                }
                let e = r.estimate - realized.value;
                errors
                    .get_mut(&rule)
                    .expect("rule registered")
                    .insert(survey, e);
                estimates.push(EstimateRecord {
                    variable: variable.to_string(),
                    horizon,
                    survey,
                    rule,
                    estimate: r.estimate,
                    realized: realized.value,
                    fallback: r.fallback,
                });
            }
        }
        let pending = Pending {
            release: realized.vintage,
            resolved: ResolvedSlice {
                slice: full,
                realized: realized.value,
            },
        };
        match config.timing {
            UpdateTiming::Immediate => apply_pending(pending, &mut states, calib, config.window)?,
            UpdateTiming::OnRelease => queue.push(pending),
        }
    }
    diag.median_p_hat = median(&p_hats);
    Ok(CellRun {
        errors,
        diagnostics: diag,
        estimates,
    })
}

fn rmse_of(errors: &BTreeMap<Period, f64>) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for e in errors.values() {
        sum += e * e;
    }
    Some((sum / errors.len() as f64).sqrt())
}

/// Runs every rule over every `(variable, horizon)` stream of the panel.
///
/// Streams run in parallel; surveys within a stream run in order. Each
/// survey is aggregated from track records built only on realizations that
/// were published by then.
pub fn run_backtest(
    panel: &Panel,
    calibration: &Calibration,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    if config.rules.is_empty() {
        return Err(Error::invalid("at least one rule is required"));
    }
    let index = index_panel(panel);
    let cells: Vec<_> = index.iter().collect();
    let runs: Vec<((String, u8), CellRun)> = cells
        .par_iter()
        .map(|((variable, horizon), surveys)| {
            let run = run_cell(panel, variable, *horizon, surveys, calibration, config)?;
            Ok(((variable.clone(), *horizon), run))
        })
        .collect::<Result<_>>()?;

    let mut report = BacktestReport::default();
    let rules: BTreeSet<Rule> = config.rules.iter().copied().collect();
    for ((variable, horizon), mut run) in runs {
        for &rule in &rules {
            let errs = &run.errors[&rule];
            report.cells.push(RmseCell {
                variable: variable.clone(),
                horizon,
                rule,
                rmse: rmse_of(errs),
                n_surveys: errs.len(),
            });
        }
        if let Some(base) = run.errors.get(&Rule::Cwm) {
            for &rule in rules.iter().filter(|r| **r != Rule::Cwm) {
                let other = &run.errors[&rule];
                let (a, b): (Vec<f64>, Vec<f64>) = other
                    .iter()
                    .filter_map(|(s, e)| base.get(s).map(|c| (*e, *c)))
                    .unzip();
                match dm_test(&a, &b, horizon, config.hln) {
                    Ok(out) => report.dm.push(DmRecord {
                        variable: variable.clone(),
                        horizon,
                        rule,
                        stat: out.stat,
                        p_value: out.p_value,
                        n: a.len(),
                    }),
                    Err(_) => run.diagnostics.dm_skipped.push(rule),
                }
            }
        }
        report.diagnostics.push(run.diagnostics);
        report.estimates.extend(run.estimates);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmOutcome {
    pub stat: f64,
    /// Lower tail: small values favour the first series.
    pub p_value: f64,
    /// The loss differential had zero variance.
    pub degenerate: bool,
}

/// Diebold–Mariano test of equal squared-error loss.
///
/// `d = a² - b²`; the long-run variance uses rectangular weights up to lag
/// `h - 1` and falls back to the lag-0 variance if that comes out
/// non-positive. With `hln` the statistic is rescaled and referred to a
/// Student t with `T - 1` degrees of freedom.
pub fn dm_test(errors_a: &[f64], errors_b: &[f64], horizon: u8, hln: bool) -> Result<DmOutcome> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::invalid("DM test needs aligned error series"));
    }
    let t = errors_a.len();
    if t < DM_MIN_LENGTH {
        return Err(Error::invalid(format!(
            "DM test needs at least {DM_MIN_LENGTH} observations, got {t}"
        )));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let d: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| a * a - b * b)
        .collect();
    let tf = t as f64;
    let mean = d.iter().sum::<f64>() / tf;
    let autocov = |k: usize| -> f64 {
        let mut s = 0.0;
        for i in k..t {
            s += (d[i] - mean) * (d[i - k] - mean);
        }
        s / tf
    };
    let gamma0 = autocov(0);
    if gamma0 <= 0.0 {
        return Ok(DmOutcome {
            stat: 0.0,
            p_value: 0.5,
            degenerate: true,
        });
    }
    let h = usize::from(horizon);
    let mut lrv = gamma0;
    for k in 1..h.min(t) {
        lrv += 2.0 * autocov(k);
    }
    if lrv <= 0.0 {
        lrv = gamma0;
    }
    let stat = mean / (lrv / tf).sqrt();
    if !hln {
        return Ok(DmOutcome {
            stat,
            p_value: standard_normal_cdf(stat),
            degenerate: false,
        });
    }
    let hf = h as f64;
    let factor = (tf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / tf) / tf;
    if factor <= 0.0 {
        return Err(Error::invalid("series too short for the HLN correction"));
    }
    let stat = stat * factor.sqrt();
    let dist = StudentsT::new(0.0, 1.0, tf - 1.0)
        .map_err(|e| Error::invalid(format!("Student t: {e}")))?;
    Ok(DmOutcome {
        stat,
        p_value: dist.cdf(stat),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pooling {
    /// Mean of the per-variable RMSEs.
    MeanOfVariables,
    /// One RMSE over all variables' errors together.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub horizon: u8,
    pub rule: Rule,
    pub n_included: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub mean_of_variables: Vec<SweepPoint>,
    pub pooled: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn points(&self, pooling: Pooling) -> &[SweepPoint] {
        match pooling {
            Pooling::MeanOfVariables => &self.mean_of_variables,
            Pooling::Pooled => &self.pooled,
        }
    }

    pub fn curve(&self, pooling: Pooling, horizon: u8, rule: Rule) -> Vec<(usize, f64)> {
        self.points(pooling)
            .iter()
            .filter(|p| p.horizon == horizon && p.rule == rule)
            .map(|p| (p.n_included, p.rmse))
            .collect()
    }
}

/// Reruns the backtest with the aggregation restricted to the top `n`
/// forecasters for every `n` in `n_min..=n_max`.
///
/// Track records still come from the full eligible crowd.
pub fn subset_sweep(
    panel: &Panel,
    calibration: &Calibration,
    config: &BacktestConfig,
    horizons: &[u8],
    n_min: usize,
    n_max: usize,
) -> Result<SweepReport> {
    if n_min == 0 || n_min > n_max {
        return Err(Error::invalid(format!(
            "bad subset range {n_min}..={n_max}"
        )));
    }
    let wanted: BTreeSet<u8> = if horizons.is_empty() {
        panel.horizons()
    } else {
        horizons.iter().copied().collect()
    };
    let mut out = SweepReport::default();
    let mut rows: Vec<(Pooling, SweepPoint)> = Vec::new();
    for n in n_min..=n_max {
        let cfg = BacktestConfig {
            top_n: Some(n),
            ..config.clone()
        };
        let report = run_backtest(panel, calibration, &cfg)?;
        for &h in &wanted {
            for &rule in &cfg.rules {
                let cells: Vec<&RmseCell> = report
                    .cells
                    .iter()
                    .filter(|c| c.horizon == h && c.rule == rule && c.rmse.is_some())
                    .collect();
                if cells.is_empty() {
                    continue;
                }
                let mean = cells.iter().filter_map(|c| c.rmse).sum::<f64>() / cells.len() as f64;
                let (sse, count) = cells.iter().fold((0.0, 0usize), |(s, k), c| {
                    let r = c.rmse.unwrap_or(0.0);
                    (s + r * r * c.n_surveys as f64, k + c.n_surveys)
                });
                let pooled = (sse / count as f64).sqrt();
                for (pooling, rmse) in [(Pooling::MeanOfVariables, mean), (Pooling::Pooled, pooled)]
                {
                    rows.push((
                        pooling,
                        SweepPoint {
                            horizon: h,
                            rule,
                            n_included: n,
                            rmse,
                        },
                    ));
                }
            }
        }
    }
    rows.sort_by(|(pa, a), (pb, b)| {
        pa.cmp(pb)
            .then(a.horizon.cmp(&b.horizon))
            .then(a.rule.cmp(&b.rule))
            .then(a.n_included.cmp(&b.n_included))
    });
    for (pooling, point) in rows {
        match pooling {
            Pooling::MeanOfVariables => out.mean_of_variables.push(point),
            Pooling::Pooled => out.pooled.push(point),
        }
    }
    Ok(out)
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
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

pub fn write_rmse_csv(report: &BacktestReport, path: &Path) -> Result<()> {
    let rows = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.variable.clone(),
                c.horizon.to_string(),
                c.rule.name().to_string(),
                c.rmse.map(fixed).unwrap_or_default(),
                c.n_surveys.to_string(),
            ]
        })
        .collect();
    write_rows(
        path,
        &["variable", "horizon", "rule", "rmse", "n_surveys"],
        rows,
    )
}

pub fn write_dm_csv(report: &BacktestReport, path: &Path) -> Result<()> {
    let rows = report
        .dm
        .iter()
        .map(|d| {
            vec![
                d.variable.clone(),
                d.horizon.to_string(),
                d.rule.name().to_string(),
                fixed(d.stat),
                fixed(d.p_value),
            ]
        })
        .collect();
    write_rows(
        path,
        &["variable", "horizon", "rule", "stat", "p_value"],
        rows,
    )
}

pub fn write_diagnostics_csv(report: &BacktestReport, path: &Path) -> Result<()> {
    let rows = report
        .diagnostics
        .iter()
        .map(|d| {
            vec![
                d.variable.clone(),
                d.horizon.to_string(),
                d.surveys.to_string(),
                d.without_realization.to_string(),
                d.without_eligible.to_string(),
                d.cwm_fallback.to_string(),
                d.median_p_hat.map(fixed).unwrap_or_default(),
                d.dm_skipped
                    .iter()
                    .map(|r| r.name())
                    .collect::<Vec<_>>()
                    .join(";"),
            ]
        })
        .collect();
    write_rows(
        path,
        &[
            "variable",
            "horizon",
            "surveys",
            "without_realization",
            "without_eligible",
            "cwm_fallback",
            "median_p_hat",
            "dm_skipped",
        ],
        rows,
    )
}

pub fn write_sweep_csv(report: &SweepReport, pooling: Pooling, path: &Path) -> Result<()> {
    let rows = report
        .points(pooling)
        .iter()
        .map(|p| {
            vec![
                p.horizon.to_string(),
                p.rule.name().to_string(),
                p.n_included.to_string(),
                fixed(p.rmse),
            ]
        })
        .collect();
    write_rows(path, &["horizon", "rule", "n_included", "rmse"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_panel, ForecastRecord, PDistribution, RealizationRecord, SynthConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn dm_identical_series_is_degenerate() {
        let a = [0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.4];
        let out = dm_test(&a, &a, 1, false).unwrap();
        assert!(out.degenerate);
        assert_eq!((out.stat, out.p_value), (0.0, 0.5));
    }

    #[test]
    fn dm_rejects_short_or_ragged_input() {
        let a = [0.1; 7];
        assert!(dm_test(&a, &a, 1, false).is_err());
        assert!(dm_test(&[0.1; 9], &[0.1; 8], 1, false).is_err());
    }

    #[test]
    fn dm_hand_computed() {
        // d = a² - b² = [-1, -3, 1, -1, -1, -1, -1, -1], mean -1, γ0 = 1.
        let a = [0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = [1.0, 2.0, 3f64.sqrt(), 1.0, 1.0, 1.0, 1.0, 1.0];
        let out = dm_test(&a, &b, 1, false).unwrap();
        assert_abs_diff_eq!(out.stat, -8f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            out.p_value,
            standard_normal_cdf(-8f64.sqrt()),
            epsilon = 1e-15
        );
        let hln = dm_test(&a, &b, 1, true).unwrap();
        assert_abs_diff_eq!(hln.stat, out.stat * (7.0f64 / 8.0).sqrt(), epsilon = 1e-12);
        assert!(hln.p_value > out.p_value);
    }

    #[test]
    fn dm_detects_halved_errors() {
        let mut rng = crate::RandomStream::from_seed(4);
        let b: Vec<f64> = (0..100)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
            .collect();
        let a: Vec<f64> = b.iter().map(|x| 0.5 * x).collect();
        let out = dm_test(&a, &b, 1, false).unwrap();
        assert!(out.stat < 0.0);
        assert!(out.p_value < 0.01, "{}", out.p_value);
    }

    #[test]
    fn median_p_hat_declines_with_horizon() {
        let panel = synth_panel(&SynthConfig {
            seed: 8,
            forecasters: 15,
            surveys: 80,
            horizons: 5,
            p: PDistribution::Fixed(0.95),
            p_horizon_decay: 0.06,
            ..SynthConfig::default()
        })
        .unwrap();
        let cal = panel.calibrate().unwrap();
        let report = run_backtest(&panel, &cal, &BacktestConfig::with_rules(&[Rule::Ewm])).unwrap();
        let medians: Vec<f64> = report
            .diagnostics
            .iter()
            .map(|d| d.median_p_hat.unwrap())
            .collect();
        assert_eq!(medians.len(), 5);
        assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
    }

    #[test]
    fn empty_report_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rmse.csv");
        write_rmse_csv(&BacktestReport::default(), &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "variable,horizon,rule,rmse,n_surveys\n"
        );
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&SweepReport::default(), Pooling::Pooled, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "horizon,rule,n_included,rmse\n"
        );
    }

    fn perfect_panel() -> Panel {
        synth_panel(&SynthConfig {
            p: PDistribution::Fixed(1.0),
            forecasters: 5,
            surveys: 20,
            horizons: 2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn perfect_crowd_has_zero_rmse() {
        let panel = perfect_panel();
        let cal = panel.calibrate().unwrap();
        let report = run_backtest(&panel, &cal, &BacktestConfig::default()).unwrap();
        assert_eq!(report.cells.len(), 2 * 4);
        for c in &report.cells {
            assert_eq!(c.rmse, Some(0.0), "{c:?}");
        }
    }

    #[test]
    fn empty_panel_is_an_error() {
        let panel = Panel::default();
        let cal = Calibration {
            elements: 1,
            variables: BTreeMap::new(),
        };
        assert!(matches!(
            run_backtest(&panel, &cal, &BacktestConfig::default()),
            Err(Error::EmptyPanel)
        ));
    }

    #[test]
    fn surveys_without_realization_are_skipped() {
        let q = |s: &str| s.parse::<Period>().unwrap();
        let mut forecasts = Vec::new();
        let mut realizations = Vec::new();
        for (i, s) in ["2000Q1", "2000Q2", "2000Q3", "2000Q4", "2001Q1"]
            .iter()
            .enumerate()
        {
            for (j, id) in ["a", "b", "c"].iter().enumerate() {
                forecasts.push(ForecastRecord {
                    survey: q(s),
                    variable: "UNEMP".into(),
                    horizon: 1,
                    forecaster: (*id).into(),
                    value: 5.0 + j as f64 * 0.1 + i as f64 * 0.01,
                });
            }
            if i != 3 {
                realizations.push(RealizationRecord {
                    target: q(s),
                    variable: "UNEMP".into(),
                    value: 5.1 + (i % 2) as f64 * 0.2,
                    vintage: q(s).offset(1),
                });
            }
        }
        let panel = Panel::new(forecasts, realizations, vec![], BTreeMap::new()).unwrap();
        let cal = panel.calibrate().unwrap();
        let report = run_backtest(&panel, &cal, &BacktestConfig::default()).unwrap();
        let d = &report.diagnostics[0];
        assert_eq!(d.without_realization, 1);
        // The first two surveys have no eligible forecaster yet.
        assert_eq!(d.without_eligible, 2);
        assert_eq!(report.cells[0].n_surveys, 2);
    }

    #[test]
    fn backtest_is_deterministic_and_thread_independent() {
        let panel = synth_panel(&SynthConfig {
            seed: 5,
            horizons: 3,
            variables: 2,
            turnover: 0.1,
            p: PDistribution::Uniform(0.6, 0.95),
            ..SynthConfig::default()
        })
        .unwrap();
        let cal = panel.calibrate().unwrap();
        let cfg = BacktestConfig::default();
        let a = run_backtest(&panel, &cal, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| run_backtest(&panel, &cal, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn immediate_and_on_release_agree_at_horizon_one() {
        let panel = synth_panel(&SynthConfig {
            seed: 9,
            p: PDistribution::Uniform(0.6, 0.95),
            ..SynthConfig::default()
        })
        .unwrap();
        let cal = panel.calibrate().unwrap();
        let a = run_backtest(&panel, &cal, &BacktestConfig::default()).unwrap();
        let b = run_backtest(
            &panel,
            &cal,
            &BacktestConfig {
                timing: UpdateTiming::Immediate,
                ..BacktestConfig::default()
            },
        )
        .unwrap();
        assert_eq!(a.cells, b.cells);
    }

    #[test]
    fn full_subset_matches_unrestricted() {
        let cfgs = SynthConfig {
            seed: 11,
            forecasters: 6,
            horizons: 2,
            p: PDistribution::Uniform(0.6, 0.95),
            ..SynthConfig::default()
        };
        let panel = synth_panel(&cfgs).unwrap();
        let cal = panel.calibrate().unwrap();
        let cfg = BacktestConfig::default();
        let full = run_backtest(&panel, &cal, &cfg).unwrap();
        let sweep = subset_sweep(&panel, &cal, &cfg, &[], 1, 6).unwrap();
        for rule in Rule::ALL {
            for h in [1u8, 2] {
                let curve = sweep.curve(Pooling::MeanOfVariables, h, rule);
                assert_eq!(curve.len(), 6);
                let last = curve.last().unwrap().1;
                assert_abs_diff_eq!(last, full.rmse("SYN1", h, rule).unwrap(), epsilon = 1e-12);
            }
        }
        assert!(subset_sweep(&panel, &cal, &cfg, &[], 0, 3).is_err());
    }

    #[test]
    fn csv_outputs_have_headers() {
        let panel = perfect_panel();
        let cal = panel.calibrate().unwrap();
        let report = run_backtest(&panel, &cal, &BacktestConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rmse.csv");
        write_rmse_csv(&report, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("variable,horizon,rule,rmse,n_surveys\nSYN1,1,EWM,0.000000,"));
        let p = dir.path().join("dm.csv");
        write_dm_csv(&report, &p).unwrap();
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .starts_with("variable,horizon,rule,stat,p_value\n"));
    }
}
