//! Temporary impact cost `f` and its Fenchel–Legendre conjugate.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ImpactError {
    #[error("impact scale lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("impact exponent p must exceed 1 for superlinear growth, got {0}")]
    ExponentNotSuperlinear(f64),
}

/// Instantaneous execution cost per unit time as a function of the trading
/// rate: `f(x) = lambda * |x|^p` with `p > 1`.
///
/// Strict convexity, superlinearity and polynomial growth of degree `p`
/// all hold by construction for this family.
#[derive(Debug, Clone, PartialEq)]
pub enum ImpactFunction {
    PowerLaw { lambda: f64, p: f64 },
    Quadratic { lambda: f64 },
}

impl ImpactFunction {
    pub fn power_law(lambda: f64, p: f64) -> Result<Self, ImpactError> {
        if !(lambda > 0.0) {
            return Err(ImpactError::NonPositiveLambda(lambda));
        }
        if !(p > 1.0) {
            return Err(ImpactError::ExponentNotSuperlinear(p));
        }
        Ok(Self::PowerLaw { lambda, p })
    }

    pub fn quadratic(lambda: f64) -> Result<Self, ImpactError> {
        if !(lambda > 0.0) {
            return Err(ImpactError::NonPositiveLambda(lambda));
        }
        Ok(Self::Quadratic { lambda })
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Self::PowerLaw { lambda, .. } | Self::Quadratic { lambda } => lambda,
        }
    }

    pub fn exponent(&self) -> f64 {
        match *self {
            Self::PowerLaw { p, .. } => p,
            Self::Quadratic { .. } => 2.0,
        }
    }

    /// `f(x) = lambda * |x|^p` for a scalar rate.
    pub fn cost_scalar(&self, x: f64) -> f64 {
        let (lambda, p) = (self.lambda(), self.exponent());
        if p == 2.0 {
            lambda * x * x
        } else {
            lambda * x.abs().powf(p)
        }
    }

    /// `f(x) = lambda * |x|^p` with the Euclidean norm.
    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        self.cost_norm(x.norm())
    }

    pub fn cost_norm(&self, r: f64) -> f64 {
        let (lambda, p) = (self.lambda(), self.exponent());
        if p == 2.0 {
            lambda * r * r
        } else {
            lambda * r.powf(p)
        }
    }

    /// Fenchel–Legendre conjugate `f*(y) = sup_x (x . y - f(x))`.
    ///
    /// Finite for every `y` by superlinearity, with `f*(0) = 0`.
    pub fn conjugate(&self, y: &DVector<f64>) -> f64 {
        self.conjugate_norm(y.norm())
    }

    pub fn conjugate_scalar(&self, y: f64) -> f64 {
        self.conjugate_norm(y.abs())
    }

    pub fn conjugate_norm(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let (lambda, p) = (self.lambda(), self.exponent());
        if p == 2.0 {
            return s * s / (4.0 * lambda);
        }
        let q = p / (p - 1.0);
        (p - 1.0) * (s / p).powf(q) * lambda.powf(-1.0 / (p - 1.0))
    }

    /// Gradient of `f` at `x`.
    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let (lambda, p) = (self.lambda(), self.exponent());
        if p == 2.0 {
            return x * (2.0 * lambda);
        }
        let r = x.norm();
        if r == 0.0 {
            return DVector::zeros(x.len());
        }
        x * (lambda * p * r.powf(p - 2.0))
    }

    pub fn grad_scalar(&self, x: f64) -> f64 {
        let (lambda, p) = (self.lambda(), self.exponent());
        if p == 2.0 {
            2.0 * lambda * x
        } else {
            lambda * p * x.abs().powf(p - 1.0) * x.signum()
        }
    }

    /// Hessian of `f` at `x`. For `p < 2` the curvature blows up at the
    /// origin; the radius is floored at `r_floor` to keep Newton steps finite.
    pub fn hessian(&self, x: &DVector<f64>, r_floor: f64) -> DMatrix<f64> {
        let d = x.len();
        let (lambda, p) = (self.lambda(), self.exponent());
        if p == 2.0 {
            return DMatrix::identity(d, d) * (2.0 * lambda);
        }
        let r = x.norm().max(r_floor);
        let unit = if x.norm() > 0.0 {
            x / x.norm()
        } else {
            DVector::zeros(d)
        };
        let base = lambda * p * r.powf(p - 2.0);
        let mut h = DMatrix::identity(d, d) * base;
        if x.norm() > 0.0 {
            h += (&unit * unit.transpose()) * (base * (p - 2.0));
        }
        h
    }

    /// Polynomial-growth certificate: `f(x) <= lambda * (1 + |x|^p)`.
    pub fn growth_constant(&self) -> f64 {
        self.lambda()
    }

    /// Smallest `c` such that `|y| / f(y) <= gamma` for every `|y| > c`.
    ///
    /// For the power law this solves `|y|^(1-p) / lambda = gamma` exactly.
    pub fn superlinearity_threshold(&self, gamma: f64) -> f64 {
        assert!(gamma > 0.0);
        let (lambda, p) = (self.lambda(), self.exponent());
        (1.0 / (gamma * lambda)).powf(1.0 / (p - 1.0))
    }
}
