//! Market model: drift, volatility and the no-arbitrage range condition.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error("volatility matrix must be {expected_rows}x{expected_cols} to match d={expected_rows}, got {rows}x{cols}")]
    SigmaShape {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("drift vector has length {got}, expected d={expected}")]
    DriftLength { expected: usize, got: usize },
    #[error("need d >= 1 and m >= 1, got d={d}, m={m}")]
    EmptyDimensions { d: usize, m: usize },
    #[error("horizon bound must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("noise increments: expected {expected} steps of dimension {dim}, got {got}")]
    NoiseShape {
        expected: usize,
        dim: usize,
        got: usize,
    },
}

/// Arithmetic price dynamics for `d` assets driven by `m` Brownian factors.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub d: usize,
    pub m: usize,
    /// Drift per share per unit time.
    pub b: DVector<f64>,
    /// Volatility, revenue per share per sqrt(time).
    pub sigma: DMatrix<f64>,
    /// Cached covariance `sigma sigma^T`.
    pub covariance: DMatrix<f64>,
    pub t_max: f64,
}

/// One invariant's verdict with its measured residual.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub residual: f64,
    pub detail: String,
}

/// Outcome of [`MarketModel::validate`]: pass/fail per invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub checks: Vec<InvariantCheck>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

impl MarketModel {
    pub fn new(b: DVector<f64>, sigma: DMatrix<f64>, t_max: f64) -> Result<Self, ModelError> {
        let d = sigma.nrows();
        let m = sigma.ncols();
        if d == 0 || m == 0 {
            return Err(ModelError::EmptyDimensions { d, m });
        }
        if b.len() != d {
            return Err(ModelError::DriftLength {
                expected: d,
                got: b.len(),
            });
        }
        if !(t_max > 0.0) {
            return Err(ModelError::NonPositiveHorizon(t_max));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("drift"));
        }
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("volatility"));
        }
        let covariance = &sigma * sigma.transpose();
        Ok(Self {
            d,
            m,
            b,
            sigma,
            covariance,
            t_max,
        })
    }

    /// Convenience single-asset constructor.
    pub fn scalar(b: f64, sigma: f64, t_max: f64) -> Result<Self, ModelError> {
        Self::new(
            DVector::from_element(1, b),
            DMatrix::from_element(1, 1, sigma),
            t_max,
        )
    }

    /// `x^T Sigma x`, the instantaneous revenue variance for inventory `x`.
    pub fn variance_rate(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.covariance * x)[(0, 0)]
    }

    /// Non-mutating invariant check: covariance positive semidefinite and
    /// drift inside its range (no arbitrage for a small investor).
    pub fn validate(&self) -> DiagnosticsReport {
        let mut checks = Vec::new();

        let eig = self.covariance.clone().symmetric_eigenvalues();
        let max_abs = eig.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let min_eig = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let psd_tol = 1e-12 * max_abs.max(1e-300);
        checks.push(InvariantCheck {
            name: "covariance_psd",
            passed: min_eig >= -psd_tol,
            residual: min_eig.min(0.0).abs(),
            detail: format!("min eigenvalue {min_eig:.3e} against tolerance -{psd_tol:.3e}"),
        });

        let b_norm = self.b.norm();
        let (passed, residual) = if b_norm == 0.0 {
            (true, 0.0)
        } else {
            // Least-squares minimizer of |Sigma w - b| via pseudo-inverse.
            let svd = self.covariance.clone().svd(true, true);
            let w = svd
                .solve(&self.b, 1e-14 * max_abs.max(1e-300))
                .unwrap_or_else(|_| DVector::zeros(self.d));
            let residual = (&self.covariance * w - &self.b).norm() / b_norm;
            (residual <= 1e-10, residual)
        };
        checks.push(InvariantCheck {
            name: "drift_in_covariance_range",
            passed,
            residual,
            detail: format!("relative least-squares residual {residual:.3e}"),
        });

        checks.push(InvariantCheck {
            name: "dimensions",
            passed: self.d >= 1 && self.m >= 1 && self.t_max > 0.0,
            residual: 0.0,
            detail: format!("d={}, m={}, t_max={}", self.d, self.m, self.t_max),
        });

        DiagnosticsReport { checks }
    }

    /// Canonical description used for content hashing.
    pub fn describe(&self) -> String {
        format!(
            "market(d={},m={},b={:?},sigma={:?},t_max={:?})",
            self.d,
            self.m,
            self.b.as_slice(),
            self.sigma.as_slice(),
            self.t_max
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_scalar_passes() {
        let m = MarketModel::scalar(0.1, 0.3, 1.0).unwrap();
        let rep = m.validate();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn drift_component_in_kernel_fails() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let m = MarketModel::new(DVector::from_vec(vec![0.0, 1.0]), sigma, 1.0).unwrap();
        let rep = m.validate();
        assert!(!rep.passed());
        assert_eq!(rep.first_failure().unwrap().name, "drift_in_covariance_range");
    }

    #[test]
    fn drift_in_range_passes_with_zero_residual() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let m = MarketModel::new(DVector::from_vec(vec![0.5, 0.0]), sigma, 1.0).unwrap();
        let rep = m.validate();
        assert!(rep.passed(), "{rep:?}");
        let range_check = &rep.checks[1];
        assert!(range_check.residual <= 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let sigma = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let err = MarketModel::new(DVector::from_vec(vec![0.1]), sigma, 1.0).unwrap_err();
        assert!(matches!(err, ModelError::DriftLength { .. }));
    }
}
