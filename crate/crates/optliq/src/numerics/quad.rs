//! Gauss–Hermite quadrature for expectations against a standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

/// Quadrature rule for `E[g(Z)] ~ sum_k weights[k] * g(nodes[k])`, `Z ~ N(0,1)`.
///
/// Nodes are symmetric about zero and sorted ascending; weights are
/// normalized to sum to one in floating point.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Build an `n`-point rule via Golub–Welsch on the Hermite Jacobi matrix.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be at least 1");
        if n == 1 {
            return Self {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        // Jacobi matrix for physicists' Hermite polynomials: off-diagonal sqrt(k/2).
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64 / 2.0).sqrt();
            jac[(k - 1, k)] = off;
            jac[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let x = eig.eigenvalues[i];
                let v0 = eig.eigenvectors[(0, i)];
                // Normalized weight: squared first eigenvector component.
                (x, v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        // Change of variables to the probabilists' convention z = sqrt(2) x,
        // then symmetrize node/weight pairs so the rule is exactly even.
        let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0 * std::f64::consts::SQRT_2).collect();
        let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let z = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -z;
            nodes[j] = z;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Expectation of `g` under N(mean, sd^2).
    pub fn expect(&self, mean: f64, sd: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * g(mean + sd * z))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn seven_point_rule_is_characterized_by_moments() {
        // Exactness on Gaussian moments through degree 13 determines the
        // symmetric 7-point rule uniquely, so this is a complete oracle.
        let gh = GaussHermite::new(7);
        let moments = [
            (0u32, 1.0),
            (2, 1.0),
            (4, 3.0),
            (6, 15.0),
            (8, 105.0),
            (10, 945.0),
            (12, 10395.0),
        ];
        for &(k, expect) in &moments {
            let got = gh.expect(0.0, 1.0, |z| z.powi(k as i32));
            assert_relative_eq!(got, expect, max_relative = 1e-11);
        }
        for &k in &[1u32, 3, 5, 7, 9, 11, 13] {
            let got = gh.expect(0.0, 1.0, |z| z.powi(k as i32));
            assert!(got.abs() < 1e-10, "odd moment {k} = {got}");
        }
        // Symmetry, positivity, normalization, and the exact rational
        // central weight 16/35 of the 7-point rule.
        for i in 0..7 {
            assert_eq!(gh.nodes[i], -gh.nodes[6 - i]);
            assert!(gh.weights[i] > 0.0);
        }
        assert_relative_eq!(gh.weights[3], 16.0 / 35.0, max_relative = 1e-12);
        let sum: f64 = gh.weights.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normal_moments_are_exact() {
        let gh = GaussHermite::new(7);
        assert_relative_eq!(gh.expect(0.0, 1.0, |z| z * z), 1.0, epsilon = 1e-13);
        assert_relative_eq!(gh.expect(1.5, 0.5, |z| z), 1.5, epsilon = 1e-13);
    }

    #[test]
    fn gaussian_mgf_is_accurate() {
        // E[exp(a Z)] = exp(a^2 / 2); the backbone of the CARA reductions.
        // The 7-point truncation error for a <= 1 sits below 1e-7 relative;
        // a 15-point rule reaches full precision.
        let gh7 = GaussHermite::new(7);
        let gh15 = GaussHermite::new(15);
        for &a in &[0.1f64, 0.5, 1.0] {
            let expect = (a * a / 2.0).exp();
            let got7 = gh7.expect(0.0, 1.0, |z| (a * z).exp());
            assert_relative_eq!(got7, expect, max_relative = 1e-6);
            let got15 = gh15.expect(0.0, 1.0, |z| (a * z).exp());
            assert_relative_eq!(got15, expect, max_relative = 1e-12);
        }
    }
}
