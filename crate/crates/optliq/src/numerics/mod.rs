//! Small numerical building blocks shared by the solvers.

pub mod normal;
pub mod quad;
pub mod tridiag;

/// Stable `ln(sum_i c_i * exp(v_i))` for nonnegative coefficients.
///
/// Returns `f64::INFINITY` when any `v_i` with positive coefficient is
/// infinite, and `f64::NEG_INFINITY` for an empty or all-zero sum.
pub fn log_sum_exp_weighted(values: &[f64], coeffs: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), coeffs.len());
    let mut m = f64::NEG_INFINITY;
    for (&v, &c) in values.iter().zip(coeffs) {
        if c > 0.0 && v > m {
            m = v;
        }
    }
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    let mut s = 0.0;
    for (&v, &c) in values.iter().zip(coeffs) {
        if c > 0.0 {
            s += c * (v - m).exp();
        }
    }
    m + s.ln()
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_matches_direct() {
        let v = [0.3f64, -1.2, 2.0];
        let c = [0.25f64, 0.5, 0.25];
        let direct: f64 = v
            .iter()
            .zip(&c)
            .map(|(&vi, &ci)| ci * vi.exp())
            .sum::<f64>()
            .ln();
        assert_relative_eq!(log_sum_exp_weighted(&v, &c), direct, epsilon = 1e-14);
    }

    #[test]
    fn log_sum_exp_extreme_scale() {
        // Values far beyond exp() range must not overflow.
        let v = [5000.0, 5001.0];
        let c = [0.5, 0.5];
        let got = log_sum_exp_weighted(&v, &c);
        let expect = 5001.0 + (0.5 + 0.5 * (-1.0f64).exp()).ln();
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn log_add_exp_basic() {
        assert_relative_eq!(
            log_add_exp(0.0, 0.0),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
        assert_eq!(log_add_exp(f64::INFINITY, 3.0), f64::INFINITY);
    }
}
