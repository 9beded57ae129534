//! Cressie–Read power divergences.
//!
//! The family is indexed by a real `gamma`:
//!
//! ```text
//! φ_γ(x) = (x^γ − γx + γ − 1) / (γ(γ − 1))     γ ∉ {0, 1}
//! φ_0(x) = −log x + x − 1                         (modified Kullback–Leibler)
//! φ_1(x) = x log x − x + 1                        (Kullback–Leibler)
//! ```
//!
//! Every member is strictly convex on `(0, ∞)` with `φ(1) = φ′(1) = 0` and
//! `φ″(1) = 1`. Evaluation goes through `u = log x` so that the same code is
//! accurate across many decades of `x`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the window around γ = 0 and γ = 1 where the closed-form limits are used.
pub const GAMMA_LIMIT_TOL: f64 = 1e-6;

/// `|log x|` below which the Taylor series in `log x` replaces the closed form.
const SERIES_RADIUS: f64 = 0.1;

/// A member of the power-divergence family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    ModifiedKl,
    Kl,
    Power,
}

impl DivergenceSpec {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::Domain(format!("gamma must be finite, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub const fn kl_m() -> Self {
        Self { gamma: 0.0 }
    }

    pub const fn kl() -> Self {
        Self { gamma: 1.0 }
    }

    pub const fn hellinger() -> Self {
        Self { gamma: 0.5 }
    }

    pub const fn chi_squared() -> Self {
        Self { gamma: 2.0 }
    }

    /// The four named members used throughout the test suites.
    pub fn presets() -> [Self; 4] {
        [Self::kl_m(), Self::hellinger(), Self::kl(), Self::chi_squared()]
    }

    fn branch(&self) -> Branch {
        if self.gamma.abs() < GAMMA_LIMIT_TOL {
            Branch::ModifiedKl
        } else if (self.gamma - 1.0).abs() < GAMMA_LIMIT_TOL {
            Branch::Kl
        } else {
            Branch::Power
        }
    }

    /// True when this divergence is handled by the γ = 0 limit branch.
    pub fn is_modified_kl(&self) -> bool {
        self.branch() == Branch::ModifiedKl
    }

    /// True when this divergence is handled by the γ = 1 limit branch.
    pub fn is_kl(&self) -> bool {
        self.branch() == Branch::Kl
    }

    /// φ_γ(x).
    pub fn phi(&self, x: f64) -> Result<f64> {
        let u = log_positive(x)?;
        self.phi_log(u)
    }

    /// φ_γ(e^u); the log-space entry point used by the dual criterion.
    pub fn phi_log(&self, u: f64) -> Result<f64> {
        if u.abs() < SERIES_RADIUS {
            return Ok(self.phi_series(u));
        }
        let g = self.gamma;
        let value = match self.branch() {
            Branch::ModifiedKl => -u + u.exp_m1(),
            Branch::Kl => {
                let x = u.exp();
                x * u - x + 1.0
            }
            Branch::Power => (g * u).exp_m1() - g * u.exp_m1(),
        };
        let value = match self.branch() {
            Branch::Power => value / (g * (g - 1.0)),
            _ => value,
        };
        finite_or_overflow(value, "phi")
    }

    // φ_γ(e^u) = Σ_{k≥2} (1 + γ + … + γ^{k−2}) u^k / k!, valid for every γ.
    fn phi_series(&self, u: f64) -> f64 {
        let g = self.gamma;
        let mut sum = 0.0;
        let mut coeff = 1.0; // 1 + γ + … + γ^{k−2}
        let mut gpow = 1.0; // γ^{k−2}
        let mut term = u * u / 2.0; // u^k / k!
        for k in 2..60 {
            let add = coeff * term;
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() && k > 3 {
                break;
            }
            gpow *= g;
            coeff += gpow;
            term *= u / (k as f64 + 1.0);
        }
        sum
    }

    /// φ_γ′(x) = (x^{γ−1} − 1)/(γ − 1), or log x at γ = 1.
    pub fn phi_prime(&self, x: f64) -> Result<f64> {
        let u = log_positive(x)?;
        self.phi_prime_log(u)
    }

    pub fn phi_prime_log(&self, u: f64) -> Result<f64> {
        let value = match self.branch() {
            Branch::Kl => u,
            _ => {
                let a = self.gamma - 1.0;
                (a * u).exp_m1() / a
            }
        };
        finite_or_overflow(value, "phi_prime")
    }

    /// φ_γ″(x) = x^{γ−2}.
    pub fn phi_second(&self, x: f64) -> Result<f64> {
        let u = log_positive(x)?;
        finite_or_overflow(((self.gamma - 2.0) * u).exp(), "phi_second")
    }

    /// The bracket `g(r) = r φ′(r) − φ(r)` evaluated at `r = e^u`.
    ///
    /// Algebraically `g(r) = (r^γ − 1)/γ`, with limits `log r` (γ = 0) and `r − 1` (γ = 1).
    pub fn bracket_log(&self, u: f64) -> Result<f64> {
        let value = match self.branch() {
            Branch::ModifiedKl => u,
            Branch::Kl => u.exp_m1(),
            Branch::Power => (self.gamma * u).exp_m1() / self.gamma,
        };
        finite_or_overflow(value, "bracket")
    }

    /// Searches for constants with `φ(cx) ≤ c₁φ(x) + c₂|x| + c₃` on `grid`
    /// for every `c` scanned over `[1 − eta, 1 + eta]`.
    ///
    /// This is a numerical desk check on a finite grid, not a proof.
    pub fn check_growth_condition(&self, eta: f64, grid: &[f64]) -> Result<GrowthCheck> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::Domain(format!("eta must lie in [0, 1), got {eta}")));
        }
        if grid.is_empty() {
            return Err(Error::Precondition("empty grid".into()));
        }
        let scales: Vec<f64> = if eta == 0.0 {
            vec![1.0]
        } else {
            let k = 40;
            (0..=k)
                .map(|i| 1.0 - eta + 2.0 * eta * i as f64 / k as f64)
                .collect()
        };

        // φ(cx), φ(x) tabulated once for all candidates.
        let mut rows = Vec::with_capacity(scales.len() * grid.len());
        for &c in &scales {
            for &x in grid {
                rows.push((c, x, self.phi(c * x)?, self.phi(x)?));
            }
        }

        const C1: [f64; 8] = [1.0, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0];
        const C23: [f64; 8] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let holds = |c1: f64, c2: f64, c3: f64, lhs: f64, phi_x: f64, x: f64| {
            let rhs = c1 * phi_x + c2 * x.abs() + c3;
            lhs <= rhs + 1e-12 * (1.0 + rhs.abs())
        };

        let mut worst: Option<(f64, f64, f64)> = None;
        for &c1 in &C1 {
            for &c2 in &C23 {
                for &c3 in &C23 {
                    let violation = rows
                        .iter()
                        .find(|&&(_, x, lhs, phi_x)| !holds(c1, c2, c3, lhs, phi_x, x));
                    match violation {
                        None => return Ok(GrowthCheck::Witness { c1, c2, c3 }),
                        Some(&(c, x, lhs, phi_x)) => {
                            let excess = lhs - (c1 * phi_x + c2 * x.abs() + c3);
                            if worst.map_or(true, |w| excess < w.2) {
                                worst = Some((c, x, excess));
                            }
                        }
                    }
                }
            }
        }
        let (c, x, _) = worst.expect("at least one candidate was tried");
        Ok(GrowthCheck::Failure { c, x })
    }
}

/// Outcome of [`DivergenceSpec::check_growth_condition`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthCheck {
    Witness { c1: f64, c2: f64, c3: f64 },
    /// The `(c, x)` pair violating the smallest-excess candidate.
    Failure { c: f64, x: f64 },
}

impl GrowthCheck {
    pub fn is_witness(&self) -> bool {
        matches!(self, GrowthCheck::Witness { .. })
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.gamma {
            g if g == 0.0 => write!(f, "KLm"),
            g if g == 1.0 => write!(f, "KL"),
            g if g == 0.5 => write!(f, "Hellinger"),
            g if g == 2.0 => write!(f, "ChiSquared"),
            g => write!(f, "gamma={g}"),
        }
    }
}

impl FromStr for DivergenceSpec {
    type Err = Error;

    /// Accepts a plain decimal or one of `KLm`, `KL`, `Hellinger`, `ChiSquared`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "KLm" => Ok(Self::kl_m()),
            "KL" => Ok(Self::kl()),
            "Hellinger" => Ok(Self::hellinger()),
            "ChiSquared" => Ok(Self::chi_squared()),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("unknown divergence `{other}`")))
                .and_then(Self::new),
        }
    }
}

fn log_positive(x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x.ln())
    } else if x == f64::INFINITY {
        Err(Error::Overflow(format!("argument {x}")))
    } else {
        Err(Error::Domain(format!("argument must be positive, got {x}")))
    }
}

fn finite_or_overflow(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Overflow(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(g: f64) -> DivergenceSpec {
        DivergenceSpec::new(g).unwrap()
    }

    // Direct evaluation of the textbook formulas, used as an independent oracle.
    fn phi_naive(g: f64, x: f64) -> f64 {
        if g == 0.0 {
            -x.ln() + x - 1.0
        } else if g == 1.0 {
            x * x.ln() - x + 1.0
        } else {
            (x.powf(g) - g * x + g - 1.0) / (g * (g - 1.0))
        }
    }

    #[test]
    fn phi_examples() {
        assert_eq!(spec(0.5).phi(1.0).unwrap(), 0.0);
        assert_relative_eq!(spec(0.0).phi(2.0).unwrap(), 1.0 - 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(spec(2.0).phi(3.0).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn phi_is_zero_at_one_for_all_gamma() {
        for g in [-2.0, -0.3, 0.0, 1e-9, 0.5, 1.0, 1.5, 2.0, 3.0] {
            assert_eq!(spec(g).phi(1.0).unwrap(), 0.0);
            assert_eq!(spec(g).phi_prime(1.0).unwrap(), 0.0);
            assert_eq!(spec(g).phi_second(1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn derivative_examples() {
        assert_relative_eq!(spec(0.0).phi_prime(2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(spec(2.0).phi_second(7.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(spec(1.0).phi_prime(3.0).unwrap(), 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(spec(0.5).phi(0.0), Err(Error::Domain(_))));
        assert!(matches!(spec(0.5).phi(-1.0), Err(Error::Domain(_))));
        assert!(matches!(spec(0.5).phi_prime(0.0), Err(Error::Domain(_))));
        assert!(matches!(spec(0.5).phi_second(-3.0), Err(Error::Domain(_))));
        assert!(matches!(spec(3.0).phi(1e300), Err(Error::Overflow(_))));
    }

    #[test]
    fn matches_naive_formula_away_from_one() {
        for g in [-2.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0] {
            for x in [1e-3, 0.2, 0.7, 1.5, 4.0, 50.0, 900.0] {
                assert_relative_eq!(
                    spec(g).phi(x).unwrap(),
                    phi_naive(g, x),
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn continuity_in_gamma_at_the_limits() {
        for x in [0.01, 0.5, 1.3, 7.0, 300.0] {
            let kl_m = spec(0.0).phi(x).unwrap();
            let kl = spec(1.0).phi(x).unwrap();
            for eps in [1e-8, -1e-8] {
                assert!((spec(eps).phi(x).unwrap() - kl_m).abs() < 1e-6);
                assert!((spec(1.0 + eps).phi(x).unwrap() - kl).abs() < 1e-6);
            }
            // just outside the limit window the general branch is still O(γ)-close
            for eps in [2e-6, -2e-6] {
                let slope = x.ln().powi(2) * (1.0 + x);
                assert!((spec(eps).phi(x).unwrap() - kl_m).abs() < 4e-6 * slope + 1e-9);
                assert!((spec(1.0 + eps).phi(x).unwrap() - kl).abs() < 4e-6 * slope + 1e-9);
            }
        }
    }

    #[test]
    fn bracket_matches_definition() {
        for g in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let d = spec(g);
            for r in [0.05, 0.6, 1.0, 2.5, 40.0] {
                let direct = r * d.phi_prime(r).unwrap() - d.phi(r).unwrap();
                assert_relative_eq!(
                    d.bracket_log(r.ln()).unwrap(),
                    direct,
                    epsilon = 1e-12,
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn growth_condition_examples() {
        let grid: Vec<f64> = (0..=60).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64)).collect();
        assert!(spec(0.0).check_growth_condition(0.1, &grid).unwrap().is_witness());
        assert!(spec(1.0).check_growth_condition(0.1, &grid).unwrap().is_witness());
        assert!(spec(0.5).check_growth_condition(0.1, &grid).unwrap().is_witness());
        assert_eq!(
            spec(2.0).check_growth_condition(0.0, &grid).unwrap(),
            GrowthCheck::Witness { c1: 1.0, c2: 0.0, c3: 0.0 }
        );
        assert!(spec(0.0).check_growth_condition(1.0, &grid).is_err());
    }

    #[test]
    fn parses_presets_and_decimals() {
        assert_eq!("KLm".parse::<DivergenceSpec>().unwrap().gamma, 0.0);
        assert_eq!("KL".parse::<DivergenceSpec>().unwrap().gamma, 1.0);
        assert_eq!("Hellinger".parse::<DivergenceSpec>().unwrap().gamma, 0.5);
        assert_eq!("ChiSquared".parse::<DivergenceSpec>().unwrap().gamma, 2.0);
        assert_eq!("-0.25".parse::<DivergenceSpec>().unwrap().gamma, -0.25);
        assert!("chi".parse::<DivergenceSpec>().is_err());
    }

    #[test]
    fn nonnegative_on_a_million_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1_000_000 {
            let g = rng.random_range(-2.0..3.0);
            let x: f64 = rng.random_range(1e-9..1e3);
            let v = spec(g).phi(x).unwrap();
            assert!(v >= 0.0, "phi_{g}({x}) = {v}");
            if (x - 1.0).abs() > 1e-6 {
                assert!(v > 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn convexity(g in -2.0f64..3.0, a in 1e-3f64..1e3, b in 1e-3f64..1e3, lam in 0.0f64..1.0) {
            let d = spec(g);
            let mid = d.phi(lam * a + (1.0 - lam) * b).unwrap();
            let chord = lam * d.phi(a).unwrap() + (1.0 - lam) * d.phi(b).unwrap();
            prop_assert!(mid <= chord + 1e-12 * (1.0 + chord.abs()));
        }

        #[test]
        fn derivatives_match_finite_differences(g in -2.0f64..3.0, x in 0.05f64..50.0) {
            let d = spec(g);
            let h = 1e-5 * x;
            let fd1 = (d.phi(x + h).unwrap() - d.phi(x - h).unwrap()) / (2.0 * h);
            let fd2 = (d.phi_prime(x + h).unwrap() - d.phi_prime(x - h).unwrap()) / (2.0 * h);
            let p1 = d.phi_prime(x).unwrap();
            let p2 = d.phi_second(x).unwrap();
            prop_assert!((fd1 - p1).abs() <= 1e-6 * p1.abs().max(1e-3 * x.max(1.0)));
            prop_assert!((fd2 - p2).abs() <= 1e-6 * p2.abs());
        }
    }
}
