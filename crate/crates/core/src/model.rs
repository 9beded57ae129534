//! Parametric density families.
//!
//! Every shipped family is dominated by Lebesgue measure on its support, is
//! smooth in the parameter, and has finite Fisher information on the interior
//! of its parameter box, so the usual regularity conditions for the dual
//! criterion hold:
//!
//! * `NormalLocation`: `N(μ, σ²)` with σ known. The log density ratio is linear
//!   in `x`, so every power moment of a density ratio is a Gaussian integral.
//! * `NormalLocationScale`: `N(μ, σ²)`, θ = (μ, σ). Power moments are finite
//!   exactly when the combined quadratic exponent stays negative definite.
//! * `Exponential`: rate λ on `[0, ∞)`. Power moments are finite while the
//!   combined rate stays positive.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// The parametric families available to the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// Gaussian with unknown mean and known standard deviation `sigma`.
    NormalLocation { sigma: f64 },
    /// Gaussian with θ = (mean, standard deviation).
    NormalLocationScale,
    /// Exponential with θ = rate.
    Exponential,
}

/// Support of the observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    RealLine,
    /// `[0, ∞)`.
    PositiveHalfLine,
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match self {
            Support::RealLine => x.is_finite(),
            Support::PositiveHalfLine => x.is_finite() && x >= 0.0,
        }
    }
}

/// Closed box Θ ⊂ ℝ^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("parameter box bounds have mismatched lengths".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Config(format!("invalid parameter box {lower:?}..{upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    pub fn center(&self) -> ParamVector {
        ParamVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect(),
        )
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (t, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.clamp(*l, *u);
        }
    }
}

/// A parameter value (plays the role of θ, α or θ₀ depending on context).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn scalar(v: f64) -> Self {
        Self(vec![v])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<f64> for ParamVector {
    fn from(v: f64) -> Self {
        Self(vec![v])
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        write!(f, ")")
    }
}

/// An i.i.d. sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<f64>,
}

impl Dataset {
    pub fn new(observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Precondition("dataset must contain at least one observation".into()));
        }
        if let Some(x) = observations.iter().find(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite observation {x}")));
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.observations.iter().sum::<f64>() / self.len() as f64
    }

    pub fn median(&self) -> f64 {
        crate::stats::quantile(&self.observations, 0.5)
    }

    /// Splits into the first `k` observations and the rest.
    pub fn split_at(&self, k: usize) -> Result<(Dataset, Dataset)> {
        let (a, b) = self.observations.split_at(k.min(self.len()));
        Ok((Dataset::new(a.to_vec())?, Dataset::new(b.to_vec())?))
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut observations = self.observations.clone();
        observations.extend_from_slice(&other.observations);
        Dataset { observations }
    }

    /// Single-column CSV with header `x`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "x" {
            return Err(Error::Io(format!("expected single column `x`, found {headers:?}")));
        }
        let mut observations = Vec::new();
        for record in reader.records() {
            let record = record?;
            let value: f64 = record[0]
                .trim()
                .parse()
                .map_err(|_| Error::Io(format!("bad value `{}`", &record[0])))?;
            observations.push(value);
        }
        Dataset::new(observations)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["x"])?;
        for x in &self.observations {
            writer.write_record([format!("{x:e}")])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// A parametric family together with its parameter box Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub param_space: ParamBox,
}

impl ModelSpec {
    /// Family with the default parameter box.
    pub fn new(family: Family) -> Result<Self> {
        if let Family::NormalLocation { sigma } = family {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!("known sigma must be positive, got {sigma}")));
            }
        }
        let param_space = match family {
            Family::NormalLocation { .. } => ParamBox::new(vec![-10.0], vec![10.0])?,
            Family::NormalLocationScale => ParamBox::new(vec![-10.0, 0.05], vec![10.0, 20.0])?,
            Family::Exponential => ParamBox::new(vec![0.01], vec![100.0])?,
        };
        Ok(Self { family, param_space })
    }

    pub fn normal_location(sigma: f64) -> Result<Self> {
        Self::new(Family::NormalLocation { sigma })
    }

    pub fn normal_location_scale() -> Self {
        Self::new(Family::NormalLocationScale).expect("default box is valid")
    }

    pub fn exponential() -> Self {
        Self::new(Family::Exponential).expect("default box is valid")
    }

    pub fn with_param_space(mut self, param_space: ParamBox) -> Result<Self> {
        if param_space.dim() != self.dim() {
            return Err(Error::Config("parameter box dimension does not match the family".into()));
        }
        if self.family == Family::NormalLocationScale && param_space.lower[1] <= 0.0 {
            return Err(Error::Config("scale lower bound must be positive".into()));
        }
        if self.family == Family::Exponential && param_space.lower[0] <= 0.0 {
            return Err(Error::Config("rate lower bound must be positive".into()));
        }
        self.param_space = param_space;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        match self.family {
            Family::NormalLocation { .. } | Family::Exponential => 1,
            Family::NormalLocationScale => 2,
        }
    }

    pub fn support(&self) -> Support {
        match self.family {
            Family::Exponential => Support::PositiveHalfLine,
            _ => Support::RealLine,
        }
    }

    /// Names used in configuration files and reports.
    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::NormalLocation { .. } => "NormalLocation",
            Family::NormalLocationScale => "NormalLocationScale",
            Family::Exponential => "Exponential",
        }
    }

    /// Whether `theta` is a valid parameter in Θ.
    pub fn contains(&self, theta: &[f64]) -> bool {
        self.param_space.contains(theta)
    }

    pub fn check_param(&self, theta: &ParamVector) -> Result<()> {
        if self.contains(&theta.0) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "parameter {theta} outside Θ = {:?}..{:?}",
                self.param_space.lower, self.param_space.upper
            )))
        }
    }

    /// ln p_θ(x) without validation; callers guarantee x in the support and θ admissible.
    #[inline]
    pub fn ln_pdf(&self, theta: &[f64], x: f64) -> f64 {
        match self.family {
            Family::NormalLocation { sigma } => {
                let z = (x - theta[0]) / sigma;
                -0.5 * z * z - sigma.ln() - HALF_LN_2PI
            }
            Family::NormalLocationScale => {
                let z = (x - theta[0]) / theta[1];
                -0.5 * z * z - theta[1].ln() - HALF_LN_2PI
            }
            Family::Exponential => theta[0].ln() - theta[0] * x,
        }
    }

    /// ln p_θ(x).
    pub fn log_density(&self, theta: &ParamVector, x: f64) -> Result<f64> {
        self.check_support(x)?;
        self.check_shape(theta)?;
        Ok(self.ln_pdf(&theta.0, x))
    }

    /// ln p_θ(x) − ln p_α(x), computed in log space.
    pub fn log_density_ratio(&self, theta: &ParamVector, alpha: &ParamVector, x: f64) -> Result<f64> {
        self.check_support(x)?;
        self.check_shape(theta)?;
        self.check_shape(alpha)?;
        Ok(self.ln_ratio(&theta.0, &alpha.0, x))
    }

    #[inline]
    pub(crate) fn ln_ratio(&self, theta: &[f64], alpha: &[f64], x: f64) -> f64 {
        match self.family {
            Family::NormalLocation { sigma } => {
                // −((x−θ)² − (x−α)²)/2σ² = (θ−α)(x − (θ+α)/2)/σ²
                (theta[0] - alpha[0]) * (x - 0.5 * (theta[0] + alpha[0])) / (sigma * sigma)
            }
            _ => self.ln_pdf(theta, x) - self.ln_pdf(alpha, x),
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, theta: &ParamVector, x: f64) -> f64 {
        match self.family {
            Family::NormalLocation { sigma } => crate::stats::normal_cdf((x - theta[0]) / sigma),
            Family::NormalLocationScale => crate::stats::normal_cdf((x - theta[0]) / theta[1]),
            Family::Exponential => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-theta[0] * x).exp_m1()
                }
            }
        }
    }

    /// n i.i.d. draws from P_θ, deterministic in `seed`.
    pub fn sample(&self, theta: &ParamVector, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = seed::rng(seed);
        self.sample_with(theta, n, &mut rng)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        n: usize,
        rng: &mut R,
    ) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Precondition("sample size must be at least 1".into()));
        }
        self.check_shape(theta)?;
        let draws = (0..n).map(|_| self.draw(&theta.0, rng)).collect();
        Dataset::new(draws)
    }

    pub(crate) fn draw<R: rand::Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> f64 {
        match self.family {
            Family::NormalLocation { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                theta[0] + sigma * z
            }
            Family::NormalLocationScale => {
                let z: f64 = StandardNormal.sample(rng);
                theta[0] + theta[1] * z
            }
            Family::Exponential => Exp::new(theta[0]).expect("positive rate").sample(rng),
        }
    }

    /// Fisher information I_θ in closed form.
    pub fn fisher_information(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        self.check_shape(theta)?;
        Ok(match self.family {
            Family::NormalLocation { sigma } => DMatrix::from_element(1, 1, 1.0 / (sigma * sigma)),
            Family::NormalLocationScale => {
                let s2 = theta[1] * theta[1];
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 / s2, 2.0 / s2]))
            }
            Family::Exponential => DMatrix::from_element(1, 1, 1.0 / (theta[0] * theta[0])),
        })
    }

    /// A typical spread of the observations under θ, used to size quadrature
    /// frames and proposal steps.
    pub fn observation_scale(&self, theta: &[f64]) -> f64 {
        match self.family {
            Family::NormalLocation { sigma } => sigma,
            Family::NormalLocationScale => theta[1],
            Family::Exponential => 1.0 / theta[0],
        }
    }

    /// Rough sampling-scale of a single observation's information about each
    /// coordinate: `1/sqrt(I_θ)_{jj}`.
    pub fn unit_information_scale(&self, theta: &ParamVector) -> Vec<f64> {
        match self.fisher_information(theta) {
            Ok(info) => (0..self.dim()).map(|j| 1.0 / info[(j, j)].sqrt()).collect(),
            Err(_) => vec![1.0; self.dim()],
        }
    }

    /// Moment-style estimate of θ from data, used as a cheap starting value.
    pub fn moment_estimate(&self, data: &Dataset) -> ParamVector {
        let mean = data.mean();
        let mut theta = match self.family {
            Family::NormalLocation { .. } => vec![mean],
            Family::NormalLocationScale => {
                let n = data.len() as f64;
                let var = data.observations().iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                    / n.max(1.0);
                vec![mean, var.sqrt().max(1e-3)]
            }
            Family::Exponential => vec![1.0 / mean.max(1e-12)],
        };
        self.param_space.clamp(&mut theta);
        ParamVector(theta)
    }

    /// Robust (median-based) estimate of θ.
    pub fn median_estimate(&self, data: &Dataset) -> ParamVector {
        let med = data.median();
        let mut theta = match self.family {
            Family::NormalLocation { .. } => vec![med],
            Family::NormalLocationScale => {
                let dev: Vec<f64> = data.observations().iter().map(|x| (x - med).abs()).collect();
                let mad = crate::stats::quantile(&dev, 0.5) * 1.482_602_218_505_602;
                vec![med, mad.max(1e-3)]
            }
            // median of Exp(λ) is ln 2 / λ
            Family::Exponential => vec![LN_2 / med.max(1e-12)],
        };
        self.param_space.clamp(&mut theta);
        ParamVector(theta)
    }

    pub(crate) fn check_support(&self, x: f64) -> Result<()> {
        if self.support().contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!("observation {x} outside the {} support", self.family_name())))
        }
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        data.observations().iter().try_for_each(|&x| self.check_support(x))
    }

    fn check_shape(&self, theta: &ParamVector) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::Domain(format!(
                "parameter has dimension {}, model needs {}",
                theta.dim(),
                self.dim()
            )));
        }
        let ok = match self.family {
            Family::NormalLocation { .. } => theta[0].is_finite(),
            Family::NormalLocationScale => theta[0].is_finite() && theta[1] > 0.0 && theta[1].is_finite(),
            Family::Exponential => theta[0] > 0.0 && theta[0].is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid {} parameter {theta}", self.family_name())))
        }
    }
}

/// Standard normal density, exposed for tests and diagnostics.
pub fn standard_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}
