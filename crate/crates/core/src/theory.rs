//! Expected-MSE comparisons between fusion rules when the weights are
//! learned from a handful of observations.
//!
//! The uncertain filter (`KFu`) sets its gains from sample variances `S1²`,
//! `S2²`; the certain filter (`KFc`) uses the true `σ1²`, `σ2²`. Sample
//! variances of `n` Gaussian observations follow `Γ((n-1)/2, 2σ²/n)`.
//! Closed forms for the expected gaps are available at `n = 2`; everything
//! else is checked by Monte Carlo.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;

use crate::aq::{Environment, JudgeParams, Sampler};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::stats::{ks_statistic, standard_normal_cdf};

/// Which pair of rules is compared. Values are `MSE(first) - MSE(second)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GapKind {
    /// Uncertain minus certain Kalman filter.
    KfuVsKfc,
    /// Equal weights minus uncertain Kalman filter.
    EwVsKfu,
    /// Subset rule (keep estimate 1 alone) minus uncertain Kalman filter.
    SrVsKfu,
}

impl GapKind {
    pub const ALL: [GapKind; 3] = [GapKind::KfuVsKfc, GapKind::EwVsKfu, GapKind::SrVsKfu];

    pub fn as_str(&self) -> &'static str {
        match self {
            GapKind::KfuVsKfc => "kfu-kfc",
            GapKind::EwVsKfu => "ew-kfu",
            GapKind::SrVsKfu => "sr-kfu",
        }
    }

    /// Whether the closed form has a removable singularity at `σ1² = σ2²`.
    pub fn singular_on_diagonal(&self) -> bool {
        !matches!(self, GapKind::SrVsKfu)
    }
}

impl fmt::Display for GapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kfu-kfc" => Ok(GapKind::KfuVsKfc),
            "ew-kfu" => Ok(GapKind::EwVsKfu),
            "sr-kfu" => Ok(GapKind::SrVsKfu),
            other => Err(Error::invalid(format!(
                "unknown gap kind {other:?} (expected kfu-kfc, ew-kfu or sr-kfu)"
            ))),
        }
    }
}

/// A sample variance computed from `n` observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleVariance<T> {
    pub s2: T,
    pub n: u32,
}

/// Analytic and simulated expected gap at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate<T> {
    /// `None` when the closed form is singular or `n != 2`.
    pub analytic: Option<T>,
    pub monte_carlo_mean: T,
    pub monte_carlo_stderr: T,
    pub trials: u64,
}

impl<T: Scalar> GapEstimate<T> {
    /// `|analytic - mean| / stderr`, when an analytic value exists.
    pub fn z_score(&self) -> Option<T> {
        self.analytic
            .map(|a| (a - self.monte_carlo_mean).abs() / self.monte_carlo_stderr)
    }
}

/// Draws `S² ~ σ²·χ²_{n-1} / n`.
pub fn draw_sample_variance<T: Scalar, R: Rng + ?Sized>(
    sigma2: T,
    n: u32,
    rng: &mut R,
) -> Result<SampleVariance<T>> {
    let chi = chi_squared(n)?;
    if !(sigma2 > T::zero()) {
        return Err(Error::invalid(format!("sigma^2 must be > 0, got {sigma2}")));
    }
    Ok(draw_with(&chi, sigma2, n, rng))
}

fn chi_squared(n: u32) -> Result<ChiSquared<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "sample size n must be >= 2, got {n}"
        )));
    }
    ChiSquared::new(f64::from(n - 1)).map_err(|e| Error::invalid(e.to_string()))
}

fn draw_with<T: Scalar, R: Rng + ?Sized>(
    chi: &ChiSquared<f64>,
    sigma2: T,
    n: u32,
    rng: &mut R,
) -> SampleVariance<T> {
    let draw = chi.sample(rng);
    SampleVariance {
        s2: sigma2 * T::lit(draw / f64::from(n)),
        n,
    }
}

/// MSE of weights `(w, 1 - w)` on independent unbiased estimates.
fn weighted_mse<T: Scalar>(sigma1_2: T, sigma2_2: T, w: T) -> T {
    let rest = T::one() - w;
    sigma1_2 * w * w + sigma2_2 * rest * rest
}

/// One realisation of the MSE gap for a draw of sample variances.
///
/// If both sample variances are zero the estimated gain falls back to the
/// certain one.
pub fn realized_gap<T: Scalar>(
    kind: GapKind,
    sigma1_2: T,
    sigma2_2: T,
    s1: SampleVariance<T>,
    s2: SampleVariance<T>,
) -> Result<T> {
    if !(sigma1_2 > T::zero() && sigma2_2 > T::zero()) {
        return Err(Error::invalid("true variances must be > 0"));
    }
    Ok(gap_unchecked(kind, sigma1_2, sigma2_2, s1.s2, s2.s2))
}

#[inline]
fn gap_unchecked<T: Scalar>(kind: GapKind, a: T, b: T, s1: T, s2: T) -> T {
    let certain = b / (a + b);
    let denom = s1 + s2;
    let estimated = if denom > T::zero() {
        s2 / denom
    } else {
        certain
    };
    let kfu = weighted_mse(a, b, estimated);
    match kind {
        GapKind::KfuVsKfc => kfu - weighted_mse(a, b, certain),
        GapKind::EwVsKfu => (a + b) / T::four() - kfu,
        GapKind::SrVsKfu => a - kfu,
    }
}

/// Closed-form expected gap for `n = 2`, transcribed term by term.
///
/// `KfuVsKfc` and `EwVsKfu` are singular when `|σ1² - σ2²| < 1e-9`.
pub fn expected_gap_analytic<T: Scalar>(kind: GapKind, sigma1_2: T, sigma2_2: T) -> Result<T> {
    if !(sigma1_2 > T::zero() && sigma2_2 > T::zero()) {
        return Err(Error::invalid("true variances must be > 0"));
    }
    let (a, b) = (sigma1_2, sigma2_2);
    let diff = a - b;
    if kind.singular_on_diagonal() && diff.abs().as_f64() < 1e-9 {
        return Err(Error::SingularInput(diff.abs().as_f64()));
    }
    let (two, four, five) = (T::two(), T::four(), T::lit(5.0));
    let sqrt_ab = (a * b).sqrt();
    let value = match kind {
        GapKind::KfuVsKfc => {
            // b^{5/2} a^{3/2}, sqrt(b^9 / a), sqrt(a^5 b^3), sqrt(a b^7)
            let t1 = b * b * b.sqrt() * a * a.sqrt();
            let t2 = b.powi(4) * (b / a).sqrt();
            let t3 = a * a * b * sqrt_ab;
            let t4 = b.powi(3) * sqrt_ab;
            let num = -five * t1 + T::lit(8.0) * a * b.powi(3) + t2 + t3 - five * t4;
            a * num / (two * b * diff * diff * (a + b))
        }
        GapKind::EwVsKfu => {
            let t1 = b * b * b.sqrt() * a * a.sqrt();
            let t2 = b * b.sqrt() * a * a * a.sqrt();
            let t3 = b.powi(3) * sqrt_ab;
            let num = T::lit(12.0) * t1 - two * t2 + b.powi(4)
                - five * a * b.powi(3)
                - five * a * a * b * b
                + a.powi(3) * b
                - two * t3;
            num / (four * b * diff * diff)
        }
        GapKind::SrVsKfu => {
            let num = -b * b + T::lit(3.0) * a * b + two * a * sqrt_ab - two * b * sqrt_ab;
            num / (two * (b / a).sqrt() * (a + b + two * sqrt_ab))
        }
    };
    Ok(value)
}

const MC_CHUNK: u64 = 1 << 16;

/// Monte Carlo estimate of the expected gap with `n` observations per
/// sample variance.
///
/// Trials are split into fixed chunks, each with its own stream derived from
/// a seed forked off `rng`, so the result does not depend on the thread
/// count.
pub fn monte_carlo_gap<T: Scalar>(
    kind: GapKind,
    sigma1_2: T,
    sigma2_2: T,
    n: u32,
    trials: u64,
    rng: &mut RandomStream,
) -> Result<GapEstimate<T>> {
    if trials < 10_000 {
        return Err(Error::invalid(format!(
            "trials must be >= 1e4, got {trials}"
        )));
    }
    if !(sigma1_2 > T::zero() && sigma2_2 > T::zero()) {
        return Err(Error::invalid("true variances must be > 0"));
    }
    let chi = chi_squared(n)?;
    let master = rng.fork_seed();
    let (a, b) = (sigma1_2.as_f64(), sigma2_2.as_f64());
    let chunks = trials.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut stream = RandomStream::derive(master, k);
            let len = MC_CHUNK.min(trials - k * MC_CHUNK);
            let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
            for _ in 0..len {
                let s1 = draw_with(&chi, a, n, &mut stream).s2;
                let s2 = draw_with(&chi, b, n, &mut stream).s2;
                let g = gap_unchecked(kind, a, b, s1, s2);
                sum += g;
                sum_sq += g * g;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let count = trials as f64;
    let mean = sum / count;
    let var = ((sum_sq - count * mean * mean) / (count - 1.0)).max(0.0);
    let analytic = if n == 2 {
        expected_gap_analytic(kind, sigma1_2, sigma2_2).ok()
    } else {
        None
    };
    Ok(GapEstimate {
        analytic,
        monte_carlo_mean: T::lit(mean),
        monte_carlo_stderr: T::lit((var / count).sqrt()),
        trials,
    })
}

/// Unit-scale variance `4(1 - p)p` of a judge at `C·v² = 1`.
pub fn unit_variance<T: Scalar>(p: T) -> T {
    T::four() * (T::one() - p) * p
}

/// Grid bounds for `p`; the end points are degenerate.
pub const GRID_P_MIN: f64 = 0.51;
pub const GRID_P_MAX: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub kind: GapKind,
    pub resolution: usize,
    /// Axes are reliabilities mapped through `4(1-p)p`. When false the axes
    /// are the variances themselves over the same range.
    pub substitute_p: bool,
    /// Monte Carlo trials for cells without a closed form (and for every
    /// cell when `monte_carlo_everywhere`).
    pub trials: u64,
    pub monte_carlo_everywhere: bool,
    pub seed: u64,
}

impl GridConfig {
    pub fn new(kind: GapKind, resolution: usize) -> Self {
        Self {
            kind,
            resolution,
            substitute_p: true,
            trials: 1_000_000,
            monte_carlo_everywhere: false,
            seed: 0,
        }
    }
}

/// One cell of a figure grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell<T> {
    /// Axis coordinates: reliabilities, or variances when not substituting.
    pub p1: T,
    pub p2: T,
    pub sigma1_2: T,
    pub sigma2_2: T,
    pub analytic: Option<T>,
    pub monte_carlo: Option<GapEstimate<T>>,
}

impl<T: Scalar> GridCell<T> {
    /// The closed form where available, else the Monte Carlo mean.
    pub fn value(&self) -> T {
        self.analytic
            .or(self.monte_carlo.map(|m| m.monte_carlo_mean))
            .expect("grid cell has a value")
    }
}

/// Evaluates the expected gap over a `resolution × resolution` grid.
pub fn figure_grid<T: Scalar>(config: &GridConfig) -> Result<Vec<GridCell<T>>> {
    if config.resolution < 10 {
        return Err(Error::invalid(format!(
            "resolution must be >= 10, got {}",
            config.resolution
        )));
    }
    let res = config.resolution;
    let axis: Vec<T> = (0..res)
        .map(|i| {
            let p = GRID_P_MIN + (GRID_P_MAX - GRID_P_MIN) * i as f64 / (res - 1) as f64;
            T::lit(p)
        })
        .collect();
    let (lo, hi) = (
        unit_variance(T::lit(GRID_P_MAX)),
        unit_variance(T::lit(GRID_P_MIN)),
    );
    let to_var = |x: T| -> T {
        if config.substitute_p {
            unit_variance(x)
        } else {
            // same index position maps onto [lo, hi] linearly
            let frac = (x - T::lit(GRID_P_MIN)) / T::lit(GRID_P_MAX - GRID_P_MIN);
            lo + (hi - lo) * frac
        }
    };
    let mut cells = Vec::with_capacity(res * res);
    for (i, &x1) in axis.iter().enumerate() {
        for (j, &x2) in axis.iter().enumerate() {
            let (s1, s2) = (to_var(x1), to_var(x2));
            let analytic = expected_gap_analytic(config.kind, s1, s2).ok();
            let monte_carlo = if analytic.is_none() || config.monte_carlo_everywhere {
                let mut stream = RandomStream::derive(config.seed, (i * res + j) as u64);
                Some(monte_carlo_gap(
                    config.kind,
                    s1,
                    s2,
                    2,
                    config.trials,
                    &mut stream,
                )?)
            } else {
                None
            };
            let (p1, p2) = if config.substitute_p {
                (x1, x2)
            } else {
                (s1, s2)
            };
            cells.push(GridCell {
                p1,
                p2,
                sigma1_2: s1,
                sigma2_2: s2,
                analytic,
                monte_carlo,
            });
        }
    }
    Ok(cells)
}

/// KS distance of the standardised judged deviation from a standard
/// Gaussian at one element count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitPoint {
    pub elements: u32,
    /// Distance after spreading each sample uniformly over its lattice cell.
    pub ks_distance: f64,
    /// Distance of the raw lattice samples.
    pub raw_ks_distance: f64,
}

/// Checks the Gaussian limit with `C·v² = 1` (`v = 1/√C`) and a typical
/// environment.
///
/// The judged deviation lives on a lattice of spacing `2v`, so the raw KS
/// distance is bounded below by half the largest lattice jump. Each sample
/// is therefore also spread uniformly over its cell before comparison.
/// A perfect judge has a degenerate distribution and yields no points.
pub fn gaussian_limit_check<T: Scalar>(
    judge: JudgeParams<T>,
    element_counts: &[u32],
    samples: usize,
    rng: &mut RandomStream,
) -> Result<Vec<LimitPoint>> {
    if judge.is_perfect() {
        log::warn!("gaussian limit check skipped: p = 1 gives a point mass");
        return Ok(Vec::new());
    }
    let p = judge.p().as_f64();
    let judge = JudgeParams::new(p)?;
    let sigma = unit_variance(p).sqrt();
    element_counts
        .iter()
        .map(|&c| {
            let v = 1.0 / f64::from(c).sqrt();
            let env = Environment::typical(0.0, c, v)?;
            let mean = (2.0 * p - 1.0) * env.deviation() as f64 * v;
            let sampler = Sampler::new(judge, env);
            let mut raw = Vec::with_capacity(samples);
            let mut spread = Vec::with_capacity(samples);
            for _ in 0..samples {
                let e = sampler.sample_deviation(rng);
                let jitter: f64 = rng.random_range(-1.0..1.0) * v;
                raw.push((e - mean) / sigma);
                spread.push((e + jitter - mean) / sigma);
            }
            Ok(LimitPoint {
                elements: c,
                ks_distance: ks_statistic(&mut spread, standard_normal_cdf),
                raw_ks_distance: ks_statistic(&mut raw, standard_normal_cdf),
            })
        })
        .collect()
}
