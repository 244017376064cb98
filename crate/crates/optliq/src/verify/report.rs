//! Pass/fail record of one property check.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The statistical error alone is too large to decide.
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

/// Outcome of one check: the worst raw inequality slack observed over all
/// tested points, and the tolerance budget it is allowed to consume,
/// decomposed into a scheme part and a statistical part.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    /// Human-readable statement of the verified property.
    pub property: String,
    pub tested_points: usize,
    /// Signed slack of the rawest form of the inequality; negative means
    /// the inequality itself was violated at some point.
    pub worst_margin: f64,
    pub tol_scheme: f64,
    pub tol_statistical: f64,
    pub verdict: Verdict,
}

impl CheckReport {
    /// Builds the report enforcing `verdict = pass iff worst_margin >=
    /// -(tol_scheme + tol_statistical)`.
    pub fn conclude(
        name: &str,
        property: &str,
        tested_points: usize,
        worst_margin: f64,
        tol_scheme: f64,
        tol_statistical: f64,
    ) -> Self {
        let verdict = if worst_margin >= -(tol_scheme + tol_statistical) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            name: name.to_string(),
            property: property.to_string(),
            tested_points,
            worst_margin,
            tol_scheme,
            tol_statistical,
            verdict,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>12} points {:>7}  margin {:+.3e}  budget {:.3e}+{:.3e}",
            self.name,
            self.verdict,
            self.tested_points,
            self.worst_margin,
            self.tol_scheme,
            self.tol_statistical
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_follows_the_budget() {
        let r = CheckReport::conclude("x", "p", 1, -0.01, 0.05, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
        let r = CheckReport::conclude("x", "p", 1, -0.06, 0.05, 0.0);
        assert_eq!(r.verdict, Verdict::Fail);
        let r = CheckReport::conclude("x", "p", 1, -0.06, 0.05, 0.02);
        assert_eq!(r.verdict, Verdict::Pass);
    }
}
