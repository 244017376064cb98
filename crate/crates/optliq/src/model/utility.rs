//! Utility functions with Arrow–Pratt coefficient bounded in `[A1, A2]`.
//!
//! Every non-exponential utility is normalized once at construction (affine
//! shift and scale) so that it sits between the two exponential envelopes
//!
//! ```text
//! u1(x) = 1/A1 - exp(-A1 x)   >=   u(x)   >=   -exp(-A2 x) = u2(x).
//! ```
//!
//! The anchor slope is `s = clamp(1, A1, A2)` and the anchor level is
//! `u(0) = -s/A2`; for a pure exponential utility this reduces to the
//! identity normalization `u(x) = -exp(-A x)`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{log_add_exp, log_sum_exp_weighted};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum UtilityError {
    #[error("risk aversion must be positive, got {0}")]
    NonPositiveRiskAversion(f64),
    #[error("mixture weights must be positive")]
    NonPositiveWeight,
    #[error("mixture needs matching, nonempty weights and rates")]
    MixtureShape,
    #[error("marginal utility must be strictly positive on the sampled range (u'({0}) = {1})")]
    NonIncreasing(f64, f64),
    #[error("utility must be strictly concave on the sampled range (u''({0}) = {1})")]
    NonConcave(f64, f64),
    #[error("absolute risk aversion not bounded away from zero on the sampled range (min {0:.3e})")]
    RiskAversionVanishes(f64),
    #[error("absolute risk aversion unbounded above on the sampled range (max {0:.3e})")]
    RiskAversionExplodes(f64),
    #[error(
        "bounds A1 = {0}, A2 = {1} admit no affine normalization compatible with the \
         exponential envelopes"
    )]
    NormalizationInfeasible(f64, f64),
}

#[derive(Clone)]
enum Kind {
    Cara {
        a: f64,
    },
    ExpMixture {
        weights: Vec<f64>,
        rates: Vec<f64>,
    },
    Tabulated {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        df: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        d2f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

/// Increasing, strictly concave utility with cached ARA bounds and the
/// affine normalization baked in.
#[derive(Clone)]
pub struct Utility {
    kind: Kind,
    scale: f64,
    shift: f64,
    a1: f64,
    a2: f64,
    /// Upper bound for `sup u` (exact for exponentials and mixtures).
    sup: f64,
}

impl fmt::Debug for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.kind {
            Kind::Cara { a } => format!("Cara({a})"),
            Kind::ExpMixture { weights, rates } => {
                format!("ExpMixture({weights:?}, {rates:?})")
            }
            Kind::Tabulated { .. } => "Tabulated".to_string(),
        };
        f.debug_struct("Utility")
            .field("kind", &name)
            .field("scale", &self.scale)
            .field("shift", &self.shift)
            .field("a1", &self.a1)
            .field("a2", &self.a2)
            .finish()
    }
}

impl Utility {
    /// Exponential utility `u(x) = -exp(-a x)`; kept unnormalized since it
    /// coincides with its own lower envelope.
    pub fn cara(a: f64) -> Result<Self, UtilityError> {
        if !(a > 0.0) {
            return Err(UtilityError::NonPositiveRiskAversion(a));
        }
        Ok(Self {
            kind: Kind::Cara { a },
            scale: 1.0,
            shift: 0.0,
            a1: a,
            a2: a,
            sup: 0.0,
        })
    }

    /// Re-normalizes against a wider declared ARA bracket so that the
    /// envelope pair built from `(a1, a2)` sandwiches the utility. The
    /// declared bracket must contain the intrinsic one.
    pub fn rebracket(&self, a1: f64, a2: f64) -> Result<Self, UtilityError> {
        if !(0.0 < a1 && a1 <= self.a1 && self.a2 <= a2) {
            return Err(UtilityError::NormalizationInfeasible(a1, a2));
        }
        // Undo the current affine map before re-anchoring.
        let raw_u0 = (self.value(0.0) - self.shift) / self.scale;
        let raw_du0 = self.derivative(0.0) / self.scale;
        let (scale, shift) = normalization(a1, a2, raw_u0, raw_du0)?;
        let raw_sup = (self.sup - self.shift) / self.scale;
        Ok(Self {
            kind: self.kind.clone(),
            scale,
            shift,
            a1,
            a2,
            sup: shift + scale * raw_sup,
        })
    }

    /// Convex combination of exponential utilities,
    /// `u_raw(x) = -sum_i w_i exp(-a_i x)`, normalized per the module docs.
    ///
    /// Weights are rescaled to sum to one; the exact ARA bounds are the
    /// extreme rates.
    pub fn exp_mixture(weights: &[f64], rates: &[f64]) -> Result<Self, UtilityError> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(UtilityError::MixtureShape);
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(UtilityError::NonPositiveWeight);
        }
        if rates.iter().any(|&a| !(a > 0.0)) {
            return Err(UtilityError::NonPositiveRiskAversion(
                rates.iter().copied().fold(f64::INFINITY, f64::min),
            ));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let a1 = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let a2 = rates.iter().copied().fold(0.0f64, f64::max);
        let raw_u0: f64 = -weights.iter().sum::<f64>(); // -1
        let raw_du0: f64 = weights.iter().zip(rates).map(|(w, a)| w * a).sum();
        let (scale, shift) = normalization(a1, a2, raw_u0, raw_du0)?;
        let sup = shift; // raw sup is 0
        Ok(Self {
            kind: Kind::ExpMixture {
                weights,
                rates: rates.to_vec(),
            },
            scale,
            shift,
            a1,
            a2,
            sup,
        })
    }

    /// Utility given by callables for `u`, `u'`, `u''`. The ARA bounds are
    /// measured on `range` with `samples` points and must be bounded away
    /// from zero and infinity.
    pub fn tabulated(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        range: (f64, f64),
        samples: usize,
    ) -> Result<Self, UtilityError> {
        let (a1, a2) = measure_ara(&f, &df, &d2f, range, samples)?;
        let raw_u0 = f(0.0);
        let raw_du0 = df(0.0);
        let (scale, shift) = normalization(a1, a2, raw_u0, raw_du0)?;
        // Concave with ARA >= a1 implies u' (x) <= u'(b) exp(-a1 (x - b)),
        // so sup u <= u(b) + u'(b)/a1.
        let sup = shift + scale * (f(range.1) + df(range.1) / a1);
        Ok(Self {
            kind: Kind::Tabulated {
                f: Arc::new(f),
                df: Arc::new(df),
                d2f: Arc::new(d2f),
            },
            scale,
            shift,
            a1,
            a2,
            sup,
        })
    }

    pub fn value(&self, x: f64) -> f64 {
        self.shift + self.scale * self.raw(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.scale * self.raw_d(x)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.scale * self.raw_d2(x)
    }

    /// Cached ARA bounds `(A1, A2)`.
    pub fn ara(&self) -> (f64, f64) {
        (self.a1, self.a2)
    }

    /// Upper bound for `sup_x u(x)`.
    pub fn sup_bound(&self) -> f64 {
        self.sup
    }

    /// `ln(offset - u(x))`, overflow-safe for exponentials and mixtures even
    /// where `exp(-a x)` itself would not fit in an f64. Requires
    /// `offset > sup u`.
    pub fn log_gap(&self, x: f64, offset: f64) -> f64 {
        match &self.kind {
            Kind::Cara { a } => {
                // offset - shift + scale * exp(-a x)
                log_add_exp((offset - self.shift).ln(), self.scale.ln() - a * x)
            }
            Kind::ExpMixture { weights, rates } => {
                let base = offset - self.shift; // >= 1 by construction of the offset
                let terms = log_sum_exp_weighted(
                    &rates.iter().map(|a| -a * x).collect::<Vec<_>>(),
                    &weights.iter().map(|w| w * self.scale).collect::<Vec<_>>(),
                );
                log_add_exp(base.ln(), terms)
            }
            Kind::Tabulated { .. } => {
                let gap = offset - self.value(x);
                gap.ln()
            }
        }
    }

    /// True when the marginal utility is convex and decreasing (holds for
    /// exponentials and their mixtures), enabling the second-order
    /// revenue-derivative identity.
    pub fn has_convex_decreasing_marginal(&self) -> bool {
        !matches!(self.kind, Kind::Tabulated { .. })
    }

    /// Canonical description used for content hashing.
    pub fn describe(&self) -> String {
        match &self.kind {
            Kind::Cara { a } => format!("cara(a={a:?})"),
            Kind::ExpMixture { weights, rates } => format!(
                "exp_mixture(weights={weights:?},rates={rates:?},scale={:?},shift={:?})",
                self.scale, self.shift
            ),
            Kind::Tabulated { .. } => format!(
                "tabulated(scale={:?},shift={:?},a1={:?},a2={:?})",
                self.scale, self.shift, self.a1, self.a2
            ),
        }
    }

    fn raw(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Cara { a } => -(-a * x).exp(),
            Kind::ExpMixture { weights, rates } => {
                -weights.iter().zip(rates).map(|(w, a)| w * (-a * x).exp()).sum::<f64>()
            }
            Kind::Tabulated { f, .. } => f(x),
        }
    }

    fn raw_d(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Cara { a } => a * (-a * x).exp(),
            Kind::ExpMixture { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, a)| w * a * (-a * x).exp())
                .sum(),
            Kind::Tabulated { df, .. } => df(x),
        }
    }

    fn raw_d2(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Cara { a } => -a * a * (-a * x).exp(),
            Kind::ExpMixture { weights, rates } => {
                -weights.iter().zip(rates).map(|(w, a)| w * a * a * (-a * x).exp()).sum::<f64>()
            }
            Kind::Tabulated { d2f, .. } => d2f(x),
        }
    }
}

/// Affine normalization `(scale, shift)` anchoring `u'(0) = s` and
/// `u(0) = -s/A2` with `s = clamp(1, A1, A2)`.
fn normalization(a1: f64, a2: f64, raw_u0: f64, raw_du0: f64) -> Result<(f64, f64), UtilityError> {
    let s = 1.0f64.clamp(a1, a2);
    let target0 = -s / a2;
    // Feasibility of the anchor against both envelopes.
    let upper = (1.0 / a1 - 1.0).min((1.0 - s) / a1);
    if target0 > upper + 1e-12 {
        return Err(UtilityError::NormalizationInfeasible(a1, a2));
    }
    if !(raw_du0 > 0.0) {
        return Err(UtilityError::NonIncreasing(0.0, raw_du0));
    }
    let scale = s / raw_du0;
    let shift = target0 - scale * raw_u0;
    Ok((scale, shift))
}

fn measure_ara(
    f: &impl Fn(f64) -> f64,
    df: &impl Fn(f64) -> f64,
    d2f: &impl Fn(f64) -> f64,
    range: (f64, f64),
    samples: usize,
) -> Result<(f64, f64), UtilityError> {
    assert!(samples >= 2 && range.1 > range.0);
    let _ = f;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..samples {
        let x = range.0 + (range.1 - range.0) * i as f64 / (samples - 1) as f64;
        let d1 = df(x);
        if !(d1 > 0.0) {
            return Err(UtilityError::NonIncreasing(x, d1));
        }
        let d2 = d2f(x);
        if !(d2 < 0.0) {
            return Err(UtilityError::NonConcave(x, d2));
        }
        let ara = -d2 / d1;
        lo = lo.min(ara);
        hi = hi.max(ara);
    }
    if lo <= 1e-8 {
        return Err(UtilityError::RiskAversionVanishes(lo));
    }
    if hi >= 1e8 {
        return Err(UtilityError::RiskAversionExplodes(hi));
    }
    Ok((lo, hi))
}

/// Min/max of `-u''/u'` over a uniform sample grid on `range`.
///
/// Exponential utilities report their exact constant coefficient.
pub fn ara_bounds(
    u: &Utility,
    range: (f64, f64),
    samples: usize,
) -> Result<(f64, f64), UtilityError> {
    if let Kind::Cara { a } = u.kind {
        return Ok((a, a));
    }
    measure_ara(
        &|x| u.value(x),
        &|x| u.derivative(x),
        &|x| u.second_derivative(x),
        range,
        samples,
    )
}

/// The exponential envelope pair for given ARA bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichPair {
    pub a1: f64,
    pub a2: f64,
}

impl SandwichPair {
    pub fn u1(&self, x: f64) -> f64 {
        1.0 / self.a1 - (-self.a1 * x).exp()
    }

    pub fn u2(&self, x: f64) -> f64 {
        -(-self.a2 * x).exp()
    }
}

/// Upper and lower exponential envelopes `u1 >= u2` for `0 < A1 <= A2`.
pub fn sandwich_utilities(a1: f64, a2: f64) -> SandwichPair {
    assert!(0.0 < a1 && a1 <= a2, "need 0 < A1 <= A2");
    SandwichPair { a1, a2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cara_ara_is_exact() {
        let u = Utility::cara(0.7).unwrap();
        let (a1, a2) = ara_bounds(&u, (-5.0, 5.0), 100).unwrap();
        assert_eq!((a1, a2), (0.7, 0.7));
    }

    #[test]
    fn mixture_ara_lies_strictly_inside() {
        let u = Utility::exp_mixture(&[0.5, 0.5], &[0.5, 2.0]).unwrap();
        // Dense-sampling oracle on [-5, 5].
        let (lo, hi) = ara_bounds(&u, (-5.0, 5.0), 100_000).unwrap();
        assert!(lo > 0.5 && hi < 2.0, "got ({lo}, {hi})");
        // Endpoints approached far out in the tails.
        let (lo_wide, hi_wide) = ara_bounds(&u, (-30.0, 30.0), 100_000).unwrap();
        assert!(lo_wide < 0.5 + 1e-4 && hi_wide > 2.0 - 1e-4);
        // Cached bounds are the exact extreme rates.
        assert_eq!(u.ara(), (0.5, 2.0));
    }

    #[test]
    fn log_like_tail_is_rejected() {
        // u(x) = -ln(1 + exp(-x)) is increasing and concave but its ARA
        // decays to zero in the left tail.
        let r = Utility::tabulated(
            |x: f64| -(-x).exp().ln_1p(),
            |x: f64| 1.0 / (1.0 + x.exp()),
            |x: f64| {
                let s = 1.0 / (1.0 + x.exp());
                -s * (1.0 - s)
            },
            (-25.0, 10.0),
            2000,
        );
        assert!(matches!(r, Err(UtilityError::RiskAversionVanishes(_))));
    }

    #[test]
    fn non_utility_is_rejected() {
        let r = Utility::tabulated(|x| x * x, |x| 2.0 * x, |_| 2.0, (-5.0, 5.0), 100);
        assert!(matches!(
            r,
            Err(UtilityError::NonIncreasing(..)) | Err(UtilityError::NonConcave(..))
        ));
    }

    #[test]
    fn sandwich_pair_pointwise() {
        let s = sandwich_utilities(0.5, 2.0);
        assert_relative_eq!(s.u1(0.0), 1.0 / 0.5 - 1.0);
        assert_relative_eq!(s.u2(0.0), -1.0);
        // Horizontal asymptotes for A1 = A2 = A.
        let sa = sandwich_utilities(1.3, 1.3);
        assert_relative_eq!(sa.u1(60.0), 1.0 / 1.3, epsilon = 1e-12);
        assert!(sa.u2(60.0).abs() < 1e-12);
        for i in 0..10_000 {
            let x = -20.0 + 40.0 * i as f64 / 9999.0;
            assert!(s.u1(x) >= s.u2(x));
        }
    }

    #[test]
    fn normalized_mixture_sits_between_envelopes() {
        let u = Utility::exp_mixture(&[0.5, 0.5], &[0.5, 2.0]).unwrap();
        let s = sandwich_utilities(0.5, 2.0);
        // Anchors: u'(0) = 1 and u(0) = -1/A2.
        assert_relative_eq!(u.derivative(0.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(u.value(0.0), -0.5, epsilon = 1e-14);
        for i in 0..10_000 {
            let x = -20.0 + 40.0 * i as f64 / 9999.0;
            let v = u.value(x);
            assert!(v <= s.u1(x) + 1e-10, "upper envelope fails at {x}");
            assert!(v >= s.u2(x) - 1e-10, "lower envelope fails at {x}");
        }
    }

    #[test]
    fn normalized_cara_sits_between_wider_envelopes() {
        // A Cara(A) bracketed by A1 <= A <= A2, renormalized against the
        // wider pair, sits inside its envelopes.
        let u = Utility::cara(1.0).unwrap().rebracket(0.5, 2.0).unwrap();
        let s = sandwich_utilities(0.5, 2.0);
        assert_relative_eq!(u.derivative(0.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(u.value(0.0), -0.5, epsilon = 1e-14);
        for i in 0..10_000 {
            let x = -20.0 + 40.0 * i as f64 / 9999.0;
            let v = u.value(x);
            assert!(v <= s.u1(x) + 1e-10, "upper fails at {x}: {v}");
            assert!(v >= s.u2(x) - 1e-10, "lower fails at {x}: {v}");
        }
        // Overflow-safe gap evaluation respects the new affine map.
        let offset = 1.0 + u.sup_bound().max(0.0);
        for &x in &[-700.0, -5.0, 0.0, 30.0] {
            let direct = offset - u.value(x);
            if direct.is_finite() {
                assert_relative_eq!(u.log_gap(x, offset), direct.ln(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn infeasible_bounds_are_reported() {
        // Wide all-above-one bounds admit no affine normalization.
        let r = Utility::exp_mixture(&[0.5, 0.5], &[2.0, 10.0]);
        assert!(matches!(r, Err(UtilityError::NormalizationInfeasible(..))));
    }

    #[test]
    fn log_gap_is_overflow_safe() {
        let u = Utility::exp_mixture(&[0.5, 0.5], &[0.5, 2.0]).unwrap();
        let offset = 1.0 + u.sup_bound().max(0.0);
        // Far below any representable exp(-a x).
        let w = u.log_gap(-1000.0, offset);
        // Dominated by the steep component: ln(scale * w2) + 2000.
        let expect = (0.5 * 0.8f64).ln() + 2000.0;
        assert_relative_eq!(w, expect, epsilon = 1e-9);
        // Moderate arguments agree with the direct formula.
        for &x in &[-5.0, 0.0, 3.0, 20.0] {
            assert_relative_eq!(
                u.log_gap(x, offset),
                (offset - u.value(x)).ln(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn derivatives_are_consistent() {
        let u = Utility::exp_mixture(&[0.3, 0.7], &[0.6, 1.8]).unwrap();
        let h = 1e-6;
        for &x in &[-3.0, 0.0, 2.5] {
            let fd = (u.value(x + h) - u.value(x - h)) / (2.0 * h);
            assert_relative_eq!(fd, u.derivative(x), max_relative = 1e-8);
            let fd2 = (u.derivative(x + h) - u.derivative(x - h)) / (2.0 * h);
            assert_relative_eq!(fd2, u.second_derivative(x), max_relative = 1e-6);
        }
    }
}
