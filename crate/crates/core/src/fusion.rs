//! Optimal linear fusion of estimates.
//!
//! Two independent estimates are combined with weights summing to one. With
//! known variances and no bias the optimal weights are the Kalman gains;
//! under the quincunx model the gains depend only on the two reliabilities,
//! and the fused estimate is again equivalent to a single judge (closure), so
//! a crowd can be folded one member at a time.

use crate::aq::{fuse_p, JudgeParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An estimate together with the variance and bias of the process behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Belief<T> {
    pub estimate: T,
    pub variance: T,
    /// `μ - X`, the bias of the estimate's distribution. Zero when unbiased.
    pub mean_offset: T,
}

impl<T: Scalar> Belief<T> {
    pub fn new(estimate: T, variance: T, mean_offset: T) -> Result<Self> {
        if variance < T::zero() || variance.is_nan() {
            return Err(Error::invalid(format!(
                "variance must be >= 0, got {variance}"
            )));
        }
        Ok(Self {
            estimate,
            variance,
            mean_offset,
        })
    }

    pub fn unbiased(estimate: T, variance: T) -> Result<Self> {
        Self::new(estimate, variance, T::zero())
    }

    /// Mean of the estimate's distribution given the truth.
    pub fn mean(&self, truth: Truth<T>) -> T {
        truth.value + self.mean_offset
    }
}

/// Fusion weights on two estimates; `w2 = 1 - w1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightPair<T> {
    pub w1: T,
    pub w2: T,
}

impl<T: Scalar> WeightPair<T> {
    pub fn from_first(w1: T) -> Self {
        Self {
            w1,
            w2: T::one() - w1,
        }
    }

    pub fn equal() -> Self {
        Self::from_first(T::half())
    }

    pub fn apply(&self, x1: T, x2: T) -> T {
        self.w1 * x1 + self.w2 * x2
    }
}

/// The actual magnitude being estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth<T> {
    pub value: T,
}

impl<T: Scalar> Truth<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_finite() {
            Ok(Self { value })
        } else {
            Err(Error::invalid("truth must be finite"))
        }
    }
}

/// `σ² + (X - μ)²`.
pub fn mse_single<T: Scalar>(belief: &Belief<T>, truth: Truth<T>) -> T {
    let bias = truth.value - belief.mean(truth);
    belief.variance + bias * bias
}

/// MSE of `w1·x1 + (1 - w1)·x2` for independent estimates.
pub fn combined_mse<T: Scalar>(
    weights: WeightPair<T>,
    first: &Belief<T>,
    second: &Belief<T>,
    truth: Truth<T>,
) -> T {
    let w1 = weights.w1;
    let w2 = T::one() - w1;
    let spread = first.variance * w1 * w1 + second.variance * w2 * w2;
    let bias = w1 * first.mean(truth) + w2 * second.mean(truth) - truth.value;
    spread + bias * bias
}

/// Weights minimising [`combined_mse`] when the estimates may be biased.
pub fn optimal_weights_biased<T: Scalar>(
    first: &Belief<T>,
    second: &Belief<T>,
    truth: Truth<T>,
) -> Result<WeightPair<T>> {
    let (mu1, mu2) = (first.mean(truth), second.mean(truth));
    let gap = mu1 - mu2;
    let denom = gap * gap + first.variance + second.variance;
    if denom == T::zero() {
        return Err(Error::ZeroDenominator);
    }
    let w1 = (second.variance + gap * (truth.value - mu2)) / denom;
    Ok(WeightPair::from_first(w1))
}

/// Kalman gains for two unbiased estimates with known variances.
///
/// A zero-variance estimate takes all the weight; two of them are an error.
pub fn kalman_gain<T: Scalar>(var1: T, var2: T) -> Result<WeightPair<T>> {
    if var1 < T::zero() || var2 < T::zero() || var1.is_nan() || var2.is_nan() {
        return Err(Error::invalid("variances must be >= 0"));
    }
    let total = var1 + var2;
    if total == T::zero() {
        return Err(Error::BothZeroVariance);
    }
    Ok(WeightPair::from_first(var2 / total))
}

/// Kalman gains expressed through detection reliabilities. `C` and `v`
/// cancel, so none are needed.
pub fn kalman_gain_p<T: Scalar>(
    first: JudgeParams<T>,
    second: JudgeParams<T>,
) -> Result<WeightPair<T>> {
    let (q1, q2) = (first.uncertainty(), second.uncertainty());
    let total = q1 + q2;
    if total == T::zero() {
        return Err(Error::BothZeroVariance);
    }
    Ok(WeightPair::from_first(q2 / total))
}

/// Fuses two unbiased beliefs; the fused variance is `σ1²σ2² / (σ1² + σ2²)`.
pub fn fuse_pair<T: Scalar>(first: &Belief<T>, second: &Belief<T>) -> Result<Belief<T>> {
    if first.mean_offset != T::zero() || second.mean_offset != T::zero() {
        return Err(Error::invalid("fuse_pair requires unbiased beliefs"));
    }
    let gain = kalman_gain(first.variance, second.variance)?;
    let variance = if first.variance == T::zero() || second.variance == T::zero() {
        T::zero()
    } else {
        first.variance * second.variance / (first.variance + second.variance)
    };
    Ok(Belief {
        estimate: gain.apply(first.estimate, second.estimate),
        variance,
        mean_offset: T::zero(),
    })
}

/// An estimate paired with the reliability of the judge who produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgment<T> {
    pub estimate: T,
    pub judge: JudgeParams<T>,
}

impl<T: Scalar> Judgment<T> {
    pub fn new(estimate: T, judge: JudgeParams<T>) -> Self {
        Self { estimate, judge }
    }
}

/// Fuses two judgments into the equivalent single judgment.
///
/// Two perfect judgments must agree exactly.
pub fn fuse_judgments<T: Scalar>(first: Judgment<T>, second: Judgment<T>) -> Result<Judgment<T>> {
    if first.judge.is_perfect() && second.judge.is_perfect() {
        if first.estimate != second.estimate {
            return Err(Error::DegenerateFusion(
                first.estimate.as_f64(),
                second.estimate.as_f64(),
            ));
        }
        return Ok(first);
    }
    let gain = kalman_gain_p(first.judge, second.judge)?;
    Ok(Judgment {
        estimate: gain.apply(first.estimate, second.estimate),
        judge: fuse_p(first.judge, second.judge),
    })
}

/// Folds a crowd of judgments left to right through [`fuse_judgments`].
pub fn fuse_sequence<T: Scalar>(items: &[Judgment<T>]) -> Result<Judgment<T>> {
    let (head, rest) = items.split_first().ok_or(Error::EmptyInput(
        "fuse_sequence needs at least one judgment",
    ))?;
    rest.iter()
        .try_fold(*head, |acc, j| fuse_judgments(acc, *j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aq::{variance_from_p, Environment};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn judge(p: f64) -> JudgeParams<f64> {
        JudgeParams::new(p).unwrap()
    }

    fn truth(x: f64) -> Truth<f64> {
        Truth::new(x).unwrap()
    }

    /// Grid minimisation of the combined MSE over w1 ∈ [-1, 2].
    fn grid_min_mse(b1: &Belief<f64>, b2: &Belief<f64>, x: Truth<f64>) -> (f64, f64) {
        (0..=30_000)
            .map(|k| {
                let w = -1.0 + k as f64 * 1e-4;
                (w, combined_mse(WeightPair::from_first(w), b1, b2, x))
            })
            .fold((0.0, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            })
    }

    #[test]
    fn mse_single_examples() {
        let x = truth(4.0);
        assert_eq!(mse_single(&Belief::new(4.0, 0.0, 0.0).unwrap(), x), 0.0);
        assert_eq!(mse_single(&Belief::new(4.0, 0.7, 0.0).unwrap(), x), 0.7);
        assert_eq!(mse_single(&Belief::new(6.0, 1.0, 2.0).unwrap(), x), 5.0);
        assert!(Belief::new(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn combined_mse_examples() {
        let x = truth(0.0);
        let b1 = Belief::new(0.0, 2.0, 1.5).unwrap();
        let b2 = Belief::new(0.0, 1.0, -0.5).unwrap();
        assert_eq!(
            combined_mse(WeightPair::from_first(1.0), &b1, &b2, x),
            mse_single(&b1, x)
        );
        let u = Belief::unbiased(0.0, 1.0).unwrap();
        assert_eq!(combined_mse(WeightPair::equal(), &u, &u, x), 0.5);
    }

    #[test]
    fn optimal_weights_examples() {
        let x = truth(3.0);
        let eq = Belief::unbiased(0.0, 2.0).unwrap();
        assert_eq!(optimal_weights_biased(&eq, &eq, x).unwrap().w1, 0.5);

        let b1 = Belief::unbiased(0.0, 1.0).unwrap();
        let b2 = Belief::unbiased(0.0, 3.0).unwrap();
        let w = optimal_weights_biased(&b1, &b2, x).unwrap();
        assert_abs_diff_eq!(w.w1, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w.w1, kalman_gain(1.0, 3.0).unwrap().w1, epsilon = 1e-15);
        let (grid_w, _) = grid_min_mse(&b1, &b2, x);
        assert_abs_diff_eq!(grid_w, 0.75, epsilon = 1e-4);

        let b1 = Belief::new(0.0, 1.0, 1.0).unwrap();
        let b2 = Belief::new(0.0, 1.0, -1.0).unwrap();
        let w = optimal_weights_biased(&b1, &b2, x).unwrap();
        assert_abs_diff_eq!(w.w1, 0.5, epsilon = 1e-15);
        let (grid_w, _) = grid_min_mse(&b1, &b2, x);
        assert_abs_diff_eq!(grid_w, 0.5, epsilon = 1e-4);

        let point = Belief::unbiased(1.0, 0.0).unwrap();
        assert!(matches!(
            optimal_weights_biased(&point, &point, x),
            Err(Error::ZeroDenominator)
        ));
    }

    #[test]
    fn optimal_weights_beat_grid_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x = truth(rng.random_range(-5.0..5.0));
            let b1 =
                Belief::new(0.0, rng.random_range(0.0..4.0), rng.random_range(-2.0..2.0)).unwrap();
            let b2 =
                Belief::new(0.0, rng.random_range(0.0..4.0), rng.random_range(-2.0..2.0)).unwrap();
            let w = optimal_weights_biased(&b1, &b2, x).unwrap();
            let best = combined_mse(w, &b1, &b2, x);
            let (_, grid) = grid_min_mse(&b1, &b2, x);
            assert!(best <= grid + 1e-12, "{best} > {grid}");
        }
    }

    /// The quincunx-substituted biased weights reduce to the general formula
    /// with μ_i = (2p_i - 1)·t·v measured from the norm and X = t·v.
    #[test]
    fn quincunx_biased_weights_match_general_formula() {
        for &(p1, p2, c, t, v) in &[
            (0.9, 0.6, 10u32, 4i64, 0.5),
            (0.7, 0.95, 5, -3, 2.0),
            (0.55, 0.8, 20, 0, 1.0),
        ] {
            let env = Environment::new(0.0, c, v, t).unwrap();
            let (j1, j2) = (judge(p1), judge(p2));
            let x = env.magnitude();
            let mu1 = (2.0 * p1 - 1.0) * t as f64 * v;
            let mu2 = (2.0 * p2 - 1.0) * t as f64 * v;
            let b1 = Belief::new(0.0, variance_from_p(j1, c, v), mu1 - x).unwrap();
            let b2 = Belief::new(0.0, variance_from_p(j2, c, v), mu2 - x).unwrap();
            let general = optimal_weights_biased(&b1, &b2, truth(x)).unwrap().w1;

            let (cf, tf) = (c as f64, t as f64);
            let num = 4.0 * cf * (1.0 - p2) * p2 * v * v
                + (tf * v - (2.0 * p2 - 1.0) * tf * v)
                    * ((2.0 * p1 - 1.0) * tf * v - (2.0 * p2 - 1.0) * tf * v);
            let den = 4.0 * cf * (1.0 - p1) * p1 * v * v
                + 4.0 * cf * (1.0 - p2) * p2 * v * v
                + ((2.0 * p1 - 1.0) * tf * v - (2.0 * p2 - 1.0) * tf * v).powi(2);
            assert_abs_diff_eq!(general, num / den, epsilon = 1e-12);
            if t == 0 {
                assert_abs_diff_eq!(general, kalman_gain_p(j1, j2).unwrap().w1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn kalman_gain_examples() {
        assert_eq!(kalman_gain(2.0, 2.0).unwrap().w1, 0.5);
        assert_eq!(kalman_gain(1.0, 3.0).unwrap().w1, 0.75);
        assert_eq!(kalman_gain(0.0, 1.0).unwrap().w1, 1.0);
        assert!(matches!(
            kalman_gain(0.0, 0.0),
            Err(Error::BothZeroVariance)
        ));
        assert!(kalman_gain(-1.0, 1.0).is_err());
    }

    #[test]
    fn kalman_gain_p_examples() {
        assert_eq!(kalman_gain_p(judge(0.7), judge(0.7)).unwrap().w1, 0.5);
        let w = kalman_gain_p(judge(0.9), judge(0.6)).unwrap();
        assert_abs_diff_eq!(w.w1, 8.0 / 11.0, epsilon = 1e-15);
        let via_var = kalman_gain(
            variance_from_p(judge(0.9), 1, 1.0),
            variance_from_p(judge(0.6), 1, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(w.w1, via_var.w1, epsilon = 1e-15);
        assert_eq!(
            kalman_gain_p(JudgeParams::perfect(), judge(0.7))
                .unwrap()
                .w1,
            1.0
        );
        assert!(matches!(
            kalman_gain_p(JudgeParams::<f64>::perfect(), JudgeParams::perfect()),
            Err(Error::BothZeroVariance)
        ));
    }

    #[test]
    fn fuse_pair_examples() {
        let a = Belief::unbiased(10.0, 1.0).unwrap();
        let f = fuse_pair(&a, &a).unwrap();
        assert_eq!((f.estimate, f.variance), (10.0, 0.5));
        let f = fuse_pair(
            &Belief::unbiased(0.0, 1.0).unwrap(),
            &Belief::unbiased(4.0, 3.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(f.estimate, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.variance, 0.75, epsilon = 1e-15);
        let biased = Belief::new(0.0, 1.0, 0.2).unwrap();
        assert!(fuse_pair(&biased, &a).is_err());
    }

    #[test]
    fn fuse_sequence_examples() {
        let one = [Judgment::new(3.5, judge(0.6))];
        assert_eq!(fuse_sequence(&one).unwrap(), one[0]);
        let three: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&x| Judgment::new(x, judge(0.8)))
            .collect();
        let fused = fuse_sequence(&three).unwrap();
        assert_abs_diff_eq!(fused.estimate, 2.0, epsilon = 1e-15);
        let expected = fuse_p(fuse_p(judge(0.8), judge(0.8)), judge(0.8));
        assert_eq!(fused.judge, expected);
        assert!(matches!(
            fuse_sequence::<f64>(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn fuse_sequence_perfect_judgments() {
        let items = [
            Judgment::new(1.0, judge(0.7)),
            Judgment::new(5.0, JudgeParams::perfect()),
            Judgment::new(3.0, judge(0.9)),
        ];
        let f = fuse_sequence(&items).unwrap();
        assert_eq!(f.estimate, 5.0);
        assert!(f.judge.is_perfect());
        let agree = [
            Judgment::new(2.0, JudgeParams::perfect()),
            Judgment::new(2.0, JudgeParams::perfect()),
        ];
        assert_eq!(fuse_sequence(&agree).unwrap().estimate, 2.0);
        let clash = [
            Judgment::new(2.0, JudgeParams::perfect()),
            Judgment::new(2.5, JudgeParams::perfect()),
        ];
        assert!(matches!(
            fuse_sequence(&clash),
            Err(Error::DegenerateFusion(..))
        ));
    }

    /// One-shot inverse-variance weighting, independent of the p-space fold.
    fn one_shot(items: &[Judgment<f64>]) -> (f64, f64) {
        let inv: Vec<f64> = items.iter().map(|j| 1.0 / j.judge.uncertainty()).collect();
        let total: f64 = inv.iter().sum();
        let est = items
            .iter()
            .zip(&inv)
            .map(|(j, w)| j.estimate * w)
            .sum::<f64>()
            / total;
        (est, 1.0 / total)
    }

    proptest! {
        #[test]
        fn fold_equals_one_shot(
            raw in prop::collection::vec((-10.0f64..10.0, 0.5f64..0.999), 1..12)
        ) {
            let items: Vec<_> = raw.iter().map(|&(x, p)| Judgment::new(x, judge(p))).collect();
            let folded = fuse_sequence(&items).unwrap();
            let (est, q) = one_shot(&items);
            prop_assert!((folded.estimate - est).abs() <= 1e-10 * est.abs().max(1.0));
            prop_assert!((folded.judge.uncertainty() - q).abs() <= 1e-12);
        }

        #[test]
        fn gain_p_cancels_c_and_v(
            p1 in 0.5f64..0.9999, p2 in 0.5f64..0.9999, c in 1u32..=100, v in 1e-3f64..10.0
        ) {
            let (a, b) = (judge(p1), judge(p2));
            let wp = kalman_gain_p(a, b).unwrap().w1;
            let wv = kalman_gain(variance_from_p(a, c, v), variance_from_p(b, c, v)).unwrap().w1;
            prop_assert!((wp - wv).abs() < 1e-12);
        }

        #[test]
        fn fused_p_dominates(p1 in 0.5f64..1.0, p2 in 0.5f64..1.0) {
            let f = fuse_p(judge(p1), judge(p2)).p();
            prop_assert!(f >= p1.max(p2));
            if p1.max(p2) < 0.999 {
                prop_assert!(f > p1.max(p2));
            }
        }

        #[test]
        fn fused_variance_below_both(
            v1 in 0.0f64..10.0, v2 in 1e-6f64..10.0, x1 in -5.0f64..5.0, x2 in -5.0f64..5.0
        ) {
            let f = fuse_pair(&Belief::unbiased(x1, v1).unwrap(), &Belief::unbiased(x2, v2).unwrap())
                .unwrap();
            prop_assert!(f.variance <= v1.min(v2) + 1e-15);
        }
    }
}
