//! Crowd aggregation rules: equal weights (EWM), Kalman fusion of estimated
//! reliabilities (KF), contribution weights (CWM) and Kalman fusion of the
//! positive contributors (KF+).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::aq::{p_from_mse, JudgeParams};
use crate::data::Period;
use crate::error::{Error, Result};
use crate::fusion::{fuse_sequence, Judgment};

/// Forecasters need this many scored forecasts before they count as eligible.
pub const MIN_OBSERVATIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ForecasterId(String);

impl ForecasterId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ForecasterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ForecasterId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for ForecasterId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// `(C, v)` of one variable stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamCalibration {
    pub elements: u32,
    pub evidence: f64,
}

/// Track record of one forecaster within one `(variable, horizon)` stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterState {
    pub id: ForecasterId,
    pub squared_errors: Vec<f64>,
    pub mse: f64,
    pub p_hat: Option<JudgeParams<f64>>,
    pub contribution_sum: f64,
    pub contribution_count: usize,
    /// Only the most recent `window` errors enter the MSE when set.
    pub window: Option<usize>,
}

impl ForecasterState {
    pub fn new(id: ForecasterId) -> Self {
        Self {
            id,
            squared_errors: Vec::new(),
            mse: 0.0,
            p_hat: None,
            contribution_sum: 0.0,
            contribution_count: 0,
            window: None,
        }
    }

    pub fn with_window(mut self, window: Option<usize>) -> Self {
        self.window = window;
        self
    }

    pub fn observations(&self) -> usize {
        self.squared_errors.len()
    }

    pub fn is_eligible(&self) -> bool {
        self.observations() >= MIN_OBSERVATIONS
    }

    /// Mean leave-one-out error reduction, if ever scored.
    pub fn contribution(&self) -> Option<f64> {
        (self.contribution_count > 0)
            .then(|| self.contribution_sum / self.contribution_count as f64)
    }

    /// Appends an error, recomputes the MSE and re-inverts it to `p̂`.
    pub fn record_error(&mut self, squared_error: f64, calib: StreamCalibration) -> Result<()> {
        if !(squared_error >= 0.0) || !squared_error.is_finite() {
            return Err(Error::invalid(format!(
                "squared error must be finite and >= 0, got {squared_error}"
            )));
        }
        self.squared_errors.push(squared_error);
        let n = self.squared_errors.len();
        let from = self.window.map_or(0, |w| n.saturating_sub(w.max(1)));
        let recent = &self.squared_errors[from..];
        let mut sum = 0.0;
        for &e in recent {
            sum += e;
        }
        self.mse = sum / recent.len() as f64;
        self.p_hat = Some(p_from_mse(self.mse, calib.elements, calib.evidence)?);
        Ok(())
    }
}

/// Functional form of [`ForecasterState::record_error`].
pub fn update_state(
    mut state: ForecasterState,
    squared_error: f64,
    calib: StreamCalibration,
) -> Result<ForecasterState> {
    state.record_error(squared_error, calib)?;
    Ok(state)
}

pub type StateTable = BTreeMap<ForecasterId, ForecasterState>;

/// The forecasts of one survey for one stream, plus the eligible subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySlice {
    pub survey: Period,
    pub forecasts: BTreeMap<ForecasterId, f64>,
    pub eligible: BTreeSet<ForecasterId>,
}

impl SurveySlice {
    pub fn new(
        survey: Period,
        forecasts: BTreeMap<ForecasterId, f64>,
        eligible: BTreeSet<ForecasterId>,
    ) -> Result<Self> {
        if let Some(id) = eligible.iter().find(|id| !forecasts.contains_key(*id)) {
            return Err(Error::invalid(format!(
                "eligible forecaster {id} has no forecast"
            )));
        }
        Ok(Self {
            survey,
            forecasts,
            eligible,
        })
    }

    /// Eligible = answered this survey and has enough scored history.
    pub fn from_states(
        survey: Period,
        forecasts: BTreeMap<ForecasterId, f64>,
        states: &StateTable,
    ) -> Self {
        let eligible = forecasts
            .keys()
            .filter(|id| states.get(*id).is_some_and(ForecasterState::is_eligible))
            .cloned()
            .collect();
        Self {
            survey,
            forecasts,
            eligible,
        }
    }

    /// Same slice with the eligible set intersected with `keep`.
    pub fn restrict(&self, keep: &BTreeSet<ForecasterId>) -> Self {
        Self {
            survey: self.survey,
            forecasts: self.forecasts.clone(),
            eligible: self.eligible.intersection(keep).cloned().collect(),
        }
    }

    fn no_eligible(&self) -> Error {
        Error::NoEligible(self.survey.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    Ewm,
    Kf,
    Cwm,
    KfPlus,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Ewm, Rule::Kf, Rule::Cwm, Rule::KfPlus];

    /// Name used in output files.
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Ewm => "EWM",
            Rule::Kf => "KF",
            Rule::Cwm => "CWM",
            Rule::KfPlus => "KF+",
        }
    }

    /// Command-line token.
    pub fn token(&self) -> &'static str {
        match self {
            Rule::Ewm => "ewm",
            Rule::Kf => "kf",
            Rule::Cwm => "cwm",
            Rule::KfPlus => "kfplus",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    /// Accepts either the token or the display name, any case.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Rule::ALL
            .into_iter()
            .find(|r| r.token() == lower || r.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown rule {s:?} (ewm, kf, cwm, kfplus)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub rule: Rule,
    pub estimate: f64,
    pub contributors: BTreeSet<ForecasterId>,
    /// Normalised weights over `contributors`.
    pub weights: BTreeMap<ForecasterId, f64>,
    /// Set when the rule fell back to equal weights.
    pub fallback: bool,
}

fn equal_weights(
    rule: Rule,
    slice: &SurveySlice,
    ids: &BTreeSet<ForecasterId>,
    fallback: bool,
) -> Result<AggregateResult> {
    if ids.is_empty() {
        return Err(slice.no_eligible());
    }
    let w = 1.0 / ids.len() as f64;
    let mut sum = 0.0;
    for id in ids {
        sum += slice.forecasts[id];
    }
    Ok(AggregateResult {
        rule,
        estimate: sum / ids.len() as f64,
        contributors: ids.clone(),
        weights: ids.iter().map(|id| (id.clone(), w)).collect(),
        fallback,
    })
}

/// Plain mean over the eligible forecasters.
pub fn ewm(slice: &SurveySlice) -> Result<AggregateResult> {
    equal_weights(Rule::Ewm, slice, &slice.eligible, false)
}

fn p_hat_of(states: &StateTable, id: &ForecasterId) -> Result<JudgeParams<f64>> {
    states
        .get(id)
        .and_then(|s| s.p_hat)
        .ok_or_else(|| Error::invalid(format!("forecaster {id} has no reliability estimate")))
}

fn kalman_over(
    rule: Rule,
    slice: &SurveySlice,
    ids: &BTreeSet<ForecasterId>,
    states: &StateTable,
    fallback: bool,
) -> Result<AggregateResult> {
    if ids.is_empty() {
        return Err(slice.no_eligible());
    }
    let judges: Vec<(ForecasterId, JudgeParams<f64>)> = ids
        .iter()
        .map(|id| Ok((id.clone(), p_hat_of(states, id)?)))
        .collect::<Result<_>>()?;
    let perfect: BTreeSet<ForecasterId> = judges
        .iter()
        .filter(|(_, j)| j.is_perfect())
        .map(|(id, _)| id.clone())
        .collect();
    if !perfect.is_empty() {
        // Perfect track records take all the weight, shared equally.
        let mut out = equal_weights(rule, slice, &perfect, fallback)?;
        out.contributors = ids.clone();
        for id in ids {
            out.weights.entry(id.clone()).or_insert(0.0);
        }
        return Ok(out);
    }
    let items: Vec<Judgment<f64>> = judges
        .iter()
        .map(|(id, j)| Judgment::new(slice.forecasts[id], *j))
        .collect();
    let fused = fuse_sequence(&items)?;
    let inv: Vec<f64> = judges.iter().map(|(_, j)| 1.0 / j.uncertainty()).collect();
    let total: f64 = inv.iter().sum();
    Ok(AggregateResult {
        rule,
        estimate: fused.estimate,
        contributors: ids.clone(),
        weights: judges
            .iter()
            .zip(&inv)
            .map(|((id, _), w)| (id.clone(), w / total))
            .collect(),
        fallback,
    })
}

/// Sequential Kalman fusion of the eligible forecasts, ordered by id.
pub fn kf_crowd(slice: &SurveySlice, states: &StateTable) -> Result<AggregateResult> {
    kalman_over(Rule::Kf, slice, &slice.eligible, states, false)
}

/// A survey's forecasts together with the value they turned out to target.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSlice {
    pub slice: SurveySlice,
    pub realized: f64,
}

/// Adds each eligible forecaster's leave-one-out error reduction
/// `(EW⁻ʲ - y)² - (EW - y)²` to their running contribution.
///
/// Surveys with fewer than two eligible forecasters are skipped.
pub fn contribution_update(history: &[ResolvedSlice], states: &mut StateTable) {
    for resolved in history {
        let slice = &resolved.slice;
        let k = slice.eligible.len();
        if k < 2 {
            continue;
        }
        let y = resolved.realized;
        let mut sum = 0.0;
        for id in &slice.eligible {
            sum += slice.forecasts[id];
        }
        let full = sum / k as f64 - y;
        for id in &slice.eligible {
            let loo = (sum - slice.forecasts[id]) / (k - 1) as f64 - y;
            let term = loo * loo - full * full;
            let state = states
                .entry(id.clone())
                .or_insert_with(|| ForecasterState::new(id.clone()));
            state.contribution_sum += term;
            state.contribution_count += 1;
        }
    }
}

/// Eligible forecasters with a strictly positive contribution.
pub fn positive_contributors(slice: &SurveySlice, states: &StateTable) -> BTreeSet<ForecasterId> {
    slice
        .eligible
        .iter()
        .filter(|id| {
            states
                .get(*id)
                .and_then(ForecasterState::contribution)
                .is_some_and(|c| c > 0.0)
        })
        .cloned()
        .collect()
}

/// Contribution-weighted mean over the positive contributors; equal weights
/// over the eligible set when nobody contributes positively.
pub fn cwm(slice: &SurveySlice, states: &StateTable) -> Result<AggregateResult> {
    if slice.eligible.is_empty() {
        return Err(slice.no_eligible());
    }
    let positive = positive_contributors(slice, states);
    if positive.is_empty() {
        return equal_weights(Rule::Cwm, slice, &slice.eligible, true);
    }
    let raw: Vec<(ForecasterId, f64)> = positive
        .iter()
        .map(|id| (id.clone(), states[id].contribution().unwrap_or(0.0)))
        .collect();
    let total: f64 = raw.iter().map(|(_, c)| c).sum();
    let mut estimate = 0.0;
    for (id, c) in &raw {
        estimate += c / total * slice.forecasts[id];
    }
    Ok(AggregateResult {
        rule: Rule::Cwm,
        estimate,
        contributors: positive,
        weights: raw.into_iter().map(|(id, c)| (id, c / total)).collect(),
        fallback: false,
    })
}

/// Kalman fusion restricted to the positive contributors; the whole eligible
/// set when nobody contributes positively.
pub fn kf_plus(slice: &SurveySlice, states: &StateTable) -> Result<AggregateResult> {
    if slice.eligible.is_empty() {
        return Err(slice.no_eligible());
    }
    let positive = positive_contributors(slice, states);
    if positive.is_empty() {
        return kalman_over(Rule::KfPlus, slice, &slice.eligible, states, true);
    }
    kalman_over(Rule::KfPlus, slice, &positive, states, false)
}

pub fn aggregate(rule: Rule, slice: &SurveySlice, states: &StateTable) -> Result<AggregateResult> {
    match rule {
        Rule::Ewm => ewm(slice),
        Rule::Kf => kf_crowd(slice, states),
        Rule::Cwm => cwm(slice, states),
        Rule::KfPlus => kf_plus(slice, states),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopN {
    pub ids: BTreeSet<ForecasterId>,
    /// True when fewer than `n` eligible forecasters were available.
    pub short: bool,
}

/// The `n` eligible forecasters with the highest `p̂`. Ties go to the lower
/// MSE, then the smaller id.
pub fn top_n_subset(states: &StateTable, slice: &SurveySlice, n: usize) -> Result<TopN> {
    if n == 0 {
        return Err(Error::invalid("subset size must be at least 1"));
    }
    let mut ranked: Vec<(&ForecasterId, f64, f64)> = slice
        .eligible
        .iter()
        .map(|id| {
            let p = p_hat_of(states, id)?.p();
            Ok((id, p, states[id].mse))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.2.total_cmp(&b.2))
            .then_with(|| a.0.cmp(b.0))
    });
    let short = ranked.len() < n;
    if short {
        log::debug!(
            "survey {}: only {} eligible forecasters for a subset of {n}",
            slice.survey,
            ranked.len()
        );
    }
    Ok(TopN {
        ids: ranked
            .into_iter()
            .take(n)
            .map(|(id, _, _)| id.clone())
            .collect(),
        short,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const CAL: StreamCalibration = StreamCalibration {
        elements: 1,
        evidence: 1.0,
    };

    fn period() -> Period {
        "2000Q1".parse().unwrap()
    }

    fn ids(names: &[&str]) -> BTreeSet<ForecasterId> {
        names.iter().map(|n| ForecasterId::from(*n)).collect()
    }

    fn slice(values: &[(&str, f64)]) -> SurveySlice {
        let forecasts: BTreeMap<_, _> = values
            .iter()
            .map(|(n, x)| (ForecasterId::from(*n), *x))
            .collect();
        let eligible = forecasts.keys().cloned().collect();
        SurveySlice::new(period(), forecasts, eligible).unwrap()
    }

    fn state_with_mse(name: &str, mse: f64) -> ForecasterState {
        let mut s = ForecasterState::new(name.into());
        s.record_error(mse, CAL).unwrap();
        s.record_error(mse, CAL).unwrap();
        s
    }

    #[test]
    fn state_update_examples() {
        let s = update_state(ForecasterState::new("a".into()), 0.0, CAL).unwrap();
        assert_eq!(s.p_hat.unwrap().p(), 1.0);
        let s = update_state(s, 1.0, CAL).unwrap();
        assert_abs_diff_eq!(s.mse, 0.5);
        assert_abs_diff_eq!(
            s.p_hat.unwrap().p(),
            0.5 + 0.5f64.sqrt() / 2.0,
            epsilon = 1e-15
        );
        // MSE above C·v² clamps to chance.
        let s = update_state(ForecasterState::new("b".into()), 9.0, CAL).unwrap();
        assert_eq!(s.p_hat.unwrap().p(), 0.5);
        assert!(update_state(ForecasterState::new("c".into()), -1.0, CAL).is_err());
    }

    #[test]
    fn window_limits_history() {
        let mut s = ForecasterState::new("a".into()).with_window(Some(2));
        for e in [9.0, 0.0, 0.0] {
            s.record_error(e, CAL).unwrap();
        }
        assert_eq!(s.mse, 0.0);
        assert_eq!(s.observations(), 3);
    }

    #[test]
    fn eligibility_needs_two_errors() {
        let mut states = StateTable::new();
        let mut a = ForecasterState::new("a".into());
        a.record_error(0.1, CAL).unwrap();
        states.insert("a".into(), a.clone());
        a.record_error(0.1, CAL).unwrap();
        states.insert(
            "b".into(),
            ForecasterState {
                id: "b".into(),
                ..a
            },
        );
        let forecasts = [("a", 1.0), ("b", 2.0), ("c", 3.0)]
            .iter()
            .map(|(n, x)| (ForecasterId::from(*n), *x))
            .collect();
        let s = SurveySlice::from_states(period(), forecasts, &states);
        assert_eq!(s.eligible, ids(&["b"]));
    }

    #[test]
    fn ewm_examples() {
        let r = ewm(&slice(&[("a", 1.0), ("b", 2.0), ("c", 6.0)])).unwrap();
        assert_eq!(r.estimate, 3.0);
        assert!(matches!(
            ewm(&slice(&[("a", 1.0)]).restrict(&BTreeSet::new())),
            Err(Error::NoEligible(_))
        ));
    }

    #[test]
    fn kf_weights_follow_inverse_uncertainty() {
        let s = slice(&[("a", 1.0), ("b", 3.0)]);
        let mut states = StateTable::new();
        states.insert("a".into(), state_with_mse("a", 0.36));
        states.insert("b".into(), state_with_mse("b", 0.64));
        let r = kf_crowd(&s, &states).unwrap();
        let qa = states[&ForecasterId::from("a")]
            .p_hat
            .unwrap()
            .uncertainty();
        let qb = states[&ForecasterId::from("b")]
            .p_hat
            .unwrap()
            .uncertainty();
        let wa = qb / (qa + qb);
        assert_abs_diff_eq!(r.estimate, wa * 1.0 + (1.0 - wa) * 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.weights[&ForecasterId::from("a")], wa, epsilon = 1e-12);
    }

    #[test]
    fn kf_perfect_judges_share_weight() {
        let s = slice(&[("a", 1.0), ("b", 3.0), ("c", 5.0)]);
        let mut states = StateTable::new();
        states.insert("a".into(), state_with_mse("a", 0.0));
        states.insert("b".into(), state_with_mse("b", 0.0));
        states.insert("c".into(), state_with_mse("c", 0.2));
        let r = kf_crowd(&s, &states).unwrap();
        assert_eq!(r.estimate, 2.0);
        assert_eq!(r.weights[&ForecasterId::from("c")], 0.0);
    }

    #[test]
    fn contribution_example_and_cwm() {
        let s = slice(&[("a", 1.0), ("b", 2.0), ("c", 6.0)]);
        let mut states = StateTable::new();
        for n in ["a", "b", "c"] {
            states.insert(n.into(), state_with_mse(n, 0.5));
        }
        contribution_update(
            &[ResolvedSlice {
                slice: s.clone(),
                realized: 2.0,
            }],
            &mut states,
        );
        // EW = 3, error 1. Without c the mean is 1.5: c hurts.
        let c = |n: &str| states[&ForecasterId::from(n)].contribution().unwrap();
        assert_abs_diff_eq!(c("a"), 4.0 - 1.0);
        assert_abs_diff_eq!(c("b"), 1.5f64.powi(2) - 1.0);
        assert_abs_diff_eq!(c("c"), 0.25 - 1.0);
        let r = cwm(&s, &states).unwrap();
        assert_eq!(r.contributors, ids(&["a", "b"]));
        let (wa, wb) = (3.0 / 4.25, 1.25 / 4.25);
        assert_abs_diff_eq!(r.estimate, wa * 1.0 + wb * 2.0, epsilon = 1e-12);
        let kp = kf_plus(&s, &states).unwrap();
        assert_eq!(kp.contributors, ids(&["a", "b"]));
        assert!(!kp.fallback);
    }

    #[test]
    fn cwm_fallback_to_equal_weights() {
        let s = slice(&[("a", 1.0), ("b", 2.0)]);
        let mut states = StateTable::new();
        for n in ["a", "b"] {
            states.insert(n.into(), state_with_mse(n, 0.5));
        }
        let r = cwm(&s, &states).unwrap();
        assert!(r.fallback);
        assert_eq!(r.estimate, 1.5);
        let k = kf_plus(&s, &states).unwrap();
        assert!(k.fallback);
        assert_eq!(k.estimate, kf_crowd(&s, &states).unwrap().estimate);
    }

    #[test]
    fn contribution_skips_small_crowds() {
        let s = slice(&[("a", 1.0)]);
        let mut states = StateTable::new();
        contribution_update(
            &[ResolvedSlice {
                slice: s,
                realized: 0.0,
            }],
            &mut states,
        );
        assert!(states.is_empty());
    }

    #[test]
    fn rule_names_round_trip() {
        for r in Rule::ALL {
            assert_eq!(r.token().parse::<Rule>().unwrap(), r);
            assert_eq!(r.name().parse::<Rule>().unwrap(), r);
        }
        assert!("median".parse::<Rule>().is_err());
    }

    #[test]
    fn top_n_ordering_and_ties() {
        let s = slice(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        let mut states = StateTable::new();
        states.insert("a".into(), state_with_mse("a", 0.3));
        states.insert("b".into(), state_with_mse("b", 0.1));
        states.insert("c".into(), state_with_mse("c", 0.1));
        states.insert("d".into(), state_with_mse("d", 0.9));
        let t = top_n_subset(&states, &s, 2).unwrap();
        assert_eq!(t.ids, ids(&["b", "c"]));
        assert!(!t.short);
        let t = top_n_subset(&states, &s, 3).unwrap();
        assert_eq!(t.ids, ids(&["a", "b", "c"]));
        let t = top_n_subset(&states, &s, 9).unwrap();
        assert_eq!(t.ids.len(), 4);
        assert!(t.short);
        assert!(top_n_subset(&states, &s, 0).is_err());
    }

    #[test]
    fn worked_examples() {
        let mut s = ForecasterState::new("a".into());
        for e in [0.2, 0.4, 0.6] {
            s.record_error(e, CAL).unwrap();
        }
        assert_abs_diff_eq!(s.mse, 0.4, epsilon = 1e-15);
        let s = update_state(ForecasterState::new("b".into()), 0.36, CAL).unwrap();
        assert_abs_diff_eq!(s.p_hat.unwrap().p(), 0.9, epsilon = 1e-12);

        // p̂ 0.9 and 0.6 come from MSEs 4·q at C = v = 1.
        let two = slice(&[("a", 1.0), ("b", 0.0)]);
        let mut states = StateTable::new();
        states.insert("a".into(), state_with_mse("a", 0.36));
        states.insert("b".into(), state_with_mse("b", 0.96));
        let kf = kf_crowd(&two, &states).unwrap();
        assert_abs_diff_eq!(kf.estimate, 8.0 / 11.0, epsilon = 1e-12);
        for (id, cw) in [("a", 0.2), ("b", 0.2)] {
            let st = states.get_mut(&ForecasterId::from(id)).unwrap();
            st.contribution_sum = cw;
            st.contribution_count = 1;
        }
        let equal = slice(&[("a", 1.0), ("b", 3.0)]);
        assert_abs_diff_eq!(cwm(&equal, &states).unwrap().estimate, 2.0, epsilon = 1e-12);

        let three = slice(&[("a", 1.0), ("b", 5.0), ("c", 100.0)]);
        let mut states = StateTable::new();
        for (id, cw) in [("a", 0.3), ("b", 0.1), ("c", -0.5)] {
            let mut st = state_with_mse(id, 0.5);
            st.contribution_sum = cw;
            st.contribution_count = 1;
            states.insert(id.into(), st);
        }
        let r = cwm(&three, &states).unwrap();
        assert_abs_diff_eq!(r.estimate, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.weights[&ForecasterId::from("a")], 0.75, epsilon = 1e-12);
        assert!(!r.weights.contains_key(&ForecasterId::from("c")));
    }

    #[test]
    fn contribution_signs() {
        let mut states = StateTable::new();
        // b always equals the mean of the others, so removing it changes nothing.
        let history: Vec<ResolvedSlice> = [(0.0, 2.0, 1.0, 0.7), (3.0, 1.0, 2.0, 2.9)]
            .iter()
            .map(|&(a, c, b, y)| ResolvedSlice {
                slice: slice(&[("a", a), ("b", b), ("c", c)]),
                realized: y,
            })
            .collect();
        contribution_update(&history, &mut states);
        assert_abs_diff_eq!(
            states[&ForecasterId::from("b")].contribution().unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // a is the closest to the truth in both surveys.
        let mut states = StateTable::new();
        let history: Vec<ResolvedSlice> = [(0.9, 3.0, -1.0, 1.0), (2.1, 0.0, 5.0, 2.0)]
            .iter()
            .map(|&(a, b, c, y)| ResolvedSlice {
                slice: slice(&[("a", a), ("b", b), ("c", c)]),
                realized: y,
            })
            .collect();
        contribution_update(&history, &mut states);
        assert!(states[&ForecasterId::from("a")].contribution().unwrap() > 0.0);
        assert_eq!(states[&ForecasterId::from("a")].contribution_count, 2);
    }

    fn crowd() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-5.0f64..5.0, 0.01f64..0.99), 1..12)
    }

    fn build(crowd: &[(f64, f64)]) -> (SurveySlice, StateTable) {
        let mut states = StateTable::new();
        let mut forecasts = BTreeMap::new();
        for (i, (x, mse)) in crowd.iter().enumerate() {
            let id = ForecasterId::from(format!("f{i:02}"));
            let mut st = state_with_mse(id.as_str(), *mse);
            st.id = id.clone();
            states.insert(id.clone(), st);
            forecasts.insert(id, *x);
        }
        (
            SurveySlice::from_states(period(), forecasts, &states),
            states,
        )
    }

    proptest! {
        #[test]
        fn estimates_lie_in_hull(c in crowd(), y in -5.0f64..5.0) {
            let (s, mut states) = build(&c);
            contribution_update(&[ResolvedSlice { slice: s.clone(), realized: y }], &mut states);
            let lo = c.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
            let hi = c.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
            for rule in Rule::ALL {
                let r = aggregate(rule, &s, &states).unwrap();
                prop_assert!(r.estimate >= lo - 1e-9 && r.estimate <= hi + 1e-9);
                let total: f64 = r.weights.values().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(r.weights.values().all(|w| *w >= 0.0));
            }
        }

        #[test]
        fn kf_matches_weight_form(c in crowd()) {
            let (s, states) = build(&c);
            let r = kf_crowd(&s, &states).unwrap();
            let direct: f64 = r.weights.iter().map(|(id, w)| w * s.forecasts[id]).sum();
            prop_assert!((r.estimate - direct).abs() < 1e-9);
        }

        #[test]
        fn equal_p_gives_equal_weights(xs in prop::collection::vec(-5.0f64..5.0, 1..10)) {
            let c: Vec<(f64, f64)> = xs.iter().map(|x| (*x, 0.3)).collect();
            let (s, states) = build(&c);
            let kf = kf_crowd(&s, &states).unwrap().estimate;
            let ew = ewm(&s).unwrap().estimate;
            prop_assert!((kf - ew).abs() < 1e-9);
        }
    }
}
