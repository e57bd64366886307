//! The Augmented Quincunx judgment model.
//!
//! An environment holds `C` elements, each deviating from its category mean
//! by `+v` or `-v`; their signed sum is the deviation `t·v` of the true
//! magnitude from the category norm. A judge attends the elements in turn and
//! reads each sign correctly with probability `p`, so the judged deviation is
//! a sum of `C` independent `±v` steps.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The objective property being judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment<T> {
    norm: T,
    elements: u32,
    evidence: T,
    deviation: i64,
}

impl<T: Scalar> Environment<T> {
    /// `norm` is the category mean, `elements` the element count `C`,
    /// `evidence` the per-element signal `v` and `deviation` the net signed
    /// element count `t`. Requires `|t| <= C`, `t ≡ C (mod 2)` and `v > 0`.
    pub fn new(norm: T, elements: u32, evidence: T, deviation: i64) -> Result<Self> {
        if elements == 0 {
            return Err(Error::invalid("element count C must be positive"));
        }
        if !(evidence > T::zero()) || !evidence.is_finite() {
            return Err(Error::invalid(format!(
                "evidence v must be > 0, got {evidence}"
            )));
        }
        if !norm.is_finite() {
            return Err(Error::invalid("category norm must be finite"));
        }
        let c = i64::from(elements);
        if deviation.abs() > c {
            return Err(Error::invalid(format!(
                "|t| = {} exceeds C = {c}",
                deviation.abs()
            )));
        }
        if (deviation - c).rem_euclid(2) != 0 {
            return Err(Error::invalid(format!(
                "t = {deviation} and C = {c} must have equal parity"
            )));
        }
        Ok(Self {
            norm,
            elements,
            evidence,
            deviation,
        })
    }

    /// A typical environment (`t` as close to zero as parity allows).
    pub fn typical(norm: T, elements: u32, evidence: T) -> Result<Self> {
        Self::new(norm, elements, evidence, i64::from(elements % 2))
    }

    pub fn norm(&self) -> T {
        self.norm
    }

    pub fn elements(&self) -> u32 {
        self.elements
    }

    pub fn evidence(&self) -> T {
        self.evidence
    }

    pub fn deviation(&self) -> i64 {
        self.deviation
    }

    /// The true magnitude `D = norm + t·v`.
    pub fn magnitude(&self) -> T {
        self.norm + T::lit(self.deviation as f64) * self.evidence
    }

    /// Number of elements carrying a `+v` signal, `(C + t) / 2`.
    pub fn positive_elements(&self) -> u32 {
        ((i64::from(self.elements) + self.deviation) / 2) as u32
    }

    /// `C·v²`, the largest variance any judge can have.
    pub fn max_variance(&self) -> T {
        max_variance(self.elements, self.evidence)
    }
}

/// Per-element detection reliability `p ∈ [0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct JudgeParams<T> {
    p: T,
}

impl<T: Scalar> JudgeParams<T> {
    pub fn new(p: T) -> Result<Self> {
        if p >= T::half() && p <= T::one() {
            Ok(Self { p })
        } else {
            Err(Error::invalid(format!("p must lie in [0.5, 1], got {p}")))
        }
    }

    pub fn perfect() -> Self {
        Self { p: T::one() }
    }

    pub fn chance() -> Self {
        Self { p: T::half() }
    }

    pub fn p(&self) -> T {
        self.p
    }

    /// `(1 - p)·p`, the unit-free part of the estimate variance.
    pub fn uncertainty(&self) -> T {
        (T::one() - self.p) * self.p
    }

    pub fn is_perfect(&self) -> bool {
        self.p == T::one()
    }

    pub fn variance(&self, elements: u32, evidence: T) -> T {
        variance_from_p(*self, elements, evidence)
    }
}

/// Mean, variance, skewness and kurtosis of the judged deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<T> {
    mean: T,
    variance: T,
    skewness: T,
    kurtosis: Option<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn std_dev(&self) -> T {
        self.variance.sqrt()
    }

    /// Zero for a degenerate (zero-variance) judge.
    pub fn skewness(&self) -> T {
        self.skewness
    }

    /// Undefined for a degenerate judge.
    pub fn kurtosis(&self) -> Result<T> {
        self.kurtosis.ok_or(Error::DegenerateVariance("kurtosis"))
    }
}

fn max_variance<T: Scalar>(elements: u32, evidence: T) -> T {
    T::count(u64::from(elements)) * evidence * evidence
}

/// Exact moments of the judged deviation `e_d` (the estimate minus the norm).
pub fn moments<T: Scalar>(judge: JudgeParams<T>, env: &Environment<T>) -> Moments<T> {
    let p = judge.p();
    let c = T::count(u64::from(env.elements()));
    let v = env.evidence();
    let t = T::lit(env.deviation() as f64);
    let mean = (T::two() * p - T::one()) * t * v;
    let variance = variance_from_p(judge, env.elements(), v);
    if variance > T::zero() {
        let sigma = variance.sqrt();
        Moments {
            mean,
            variance,
            skewness: -T::two() * mean / (c * sigma),
            kurtosis: Some(T::lit(3.0) + T::four() * v * v / variance - T::lit(6.0) / c),
        }
    } else {
        Moments {
            mean,
            variance,
            skewness: T::zero(),
            kurtosis: None,
        }
    }
}

/// `4·C·(1 - p)·p·v²`.
pub fn variance_from_p<T: Scalar>(judge: JudgeParams<T>, elements: u32, evidence: T) -> T {
    T::four() * judge.uncertainty() * max_variance(elements, evidence)
}

/// Inverts [`variance_from_p`] for an observed mean squared error.
///
/// An MSE above `C·v²` has no real root and is clamped to `C·v²` (p = 0.5).
pub fn p_from_mse<T: Scalar>(mse: T, elements: u32, evidence: T) -> Result<JudgeParams<T>> {
    if mse < T::zero() || mse.is_nan() {
        return Err(Error::invalid(format!("mse must be >= 0, got {mse}")));
    }
    if elements == 0 || !(evidence > T::zero()) {
        return Err(Error::invalid("C and v must be positive"));
    }
    let cv2 = max_variance(elements, evidence);
    let mse = mse.min(cv2);
    let p = T::half() + (cv2 * (cv2 - mse)).sqrt() / (T::two() * cv2);
    Ok(JudgeParams { p: p.min(T::one()) })
}

/// The single-judge reliability equivalent to fusing two judges optimally.
///
/// Two perfect judges fuse to a perfect judge.
pub fn fuse_p<T: Scalar>(first: JudgeParams<T>, second: JudgeParams<T>) -> JudgeParams<T> {
    let (q1, q2) = (first.uncertainty(), second.uncertainty());
    let denom = q1 + q2;
    if denom == T::zero() {
        return JudgeParams::perfect();
    }
    let q = q1 * q2 / denom;
    let root = (T::one() - T::four() * q).max(T::zero()).sqrt();
    JudgeParams {
        p: (T::half() + T::half() * root).min(T::one()),
    }
}

/// Draws judged deviations for one judge in one environment.
///
/// The first `(C + t) / 2` elements carry `+v`, the rest `-v`.
#[derive(Debug, Clone)]
pub struct Sampler<T> {
    env: Environment<T>,
    detection: Bernoulli,
    positive: u32,
}

impl<T: Scalar> Sampler<T> {
    pub fn new(judge: JudgeParams<T>, env: Environment<T>) -> Self {
        let detection = Bernoulli::new(judge.p().as_f64()).expect("p validated in [0.5, 1]");
        Self {
            positive: env.positive_elements(),
            env,
            detection,
        }
    }

    /// Net signed evidence count `Σ s_j·f_j` (in units of `v`).
    pub fn sample_steps<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let mut sum = 0i64;
        for j in 0..self.env.elements() {
            let sign = if j < self.positive { 1 } else { -1 };
            let correct = self.detection.sample(rng);
            sum += if correct { sign } else { -sign };
        }
        sum
    }

    /// Judged deviation `e_d`.
    pub fn sample_deviation<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        T::lit(self.sample_steps(rng) as f64) * self.env.evidence()
    }

    /// Estimate `norm + e_d`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        self.env.norm() + self.sample_deviation(rng)
    }
}

/// One judged estimate of the environment's magnitude.
pub fn sample_estimate<T: Scalar, R: Rng + ?Sized>(
    judge: JudgeParams<T>,
    env: &Environment<T>,
    rng: &mut R,
) -> T {
    Sampler::new(judge, *env).sample(rng)
}
