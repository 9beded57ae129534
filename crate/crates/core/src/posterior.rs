//! The φ-posterior `p(α | X) ∝ exp{n P_n h(θ, α)} π(α)`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dual::DualCriterion;
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec, ParamVector};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Proper prior on Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    /// Independent normals per coordinate.
    Normal { mean: Vec<f64>, sd: Vec<f64> },
    /// Uniform on a box.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
}

impl PriorSpec {
    pub fn normal(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        let p = PriorSpec::Normal { mean, sd };
        p.validate_shape()?;
        Ok(p)
    }

    pub fn uniform_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let p = PriorSpec::UniformBox { lower, upper };
        p.validate_shape()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Normal { mean, .. } => mean.len(),
            PriorSpec::UniformBox { lower, .. } => lower.len(),
        }
    }

    fn validate_shape(&self) -> Result<()> {
        match self {
            PriorSpec::Normal { mean, sd } => {
                if mean.len() != sd.len() || mean.is_empty() {
                    return Err(Error::Config("prior mean and sd lengths differ".into()));
                }
                if sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Config("prior sd must be positive and finite".into()));
                }
            }
            PriorSpec::UniformBox { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(Error::Config("prior bounds lengths differ".into()));
                }
                // Unbounded boxes would be improper.
                if lower.iter().zip(upper).any(|(l, u)| !(l < u && l.is_finite() && u.is_finite())) {
                    return Err(Error::Config("uniform prior needs finite bounds with lower < upper".into()));
                }
            }
        }
        Ok(())
    }

    /// Checks dimension against the model and positivity at θ₀.
    pub fn validate(&self, model: &ModelSpec, theta0: Option<&ParamVector>) -> Result<()> {
        self.validate_shape()?;
        if self.dim() != model.dim() {
            return Err(Error::Config(format!(
                "prior has dimension {}, model needs {}",
                self.dim(),
                model.dim()
            )));
        }
        if let Some(t0) = theta0 {
            if !self.log_density(&t0.0).is_finite() {
                return Err(Error::Config(format!("prior density is zero at θ₀ = {t0}")));
            }
        }
        Ok(())
    }

    pub fn log_density(&self, alpha: &[f64]) -> f64 {
        match self {
            PriorSpec::Normal { mean, sd } => alpha
                .iter()
                .zip(mean.iter().zip(sd))
                .map(|(a, (m, s))| {
                    let z = (a - m) / s;
                    -0.5 * z * z - s.ln() - HALF_LN_2PI
                })
                .sum(),
            PriorSpec::UniformBox { lower, upper } => {
                let inside = alpha.iter().zip(lower.iter().zip(upper)).all(|(a, (l, u))| l <= a && a <= u);
                if inside {
                    -lower.iter().zip(upper).map(|(l, u)| (u - l).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> ParamVector {
        match self {
            PriorSpec::Normal { mean, .. } => ParamVector(mean.clone()),
            PriorSpec::UniformBox { lower, upper } => {
                ParamVector(lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect())
            }
        }
    }

    pub fn sd(&self) -> Vec<f64> {
        match self {
            PriorSpec::Normal { sd, .. } => sd.clone(),
            PriorSpec::UniformBox { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| (u - l) / 12f64.sqrt()).collect()
            }
        }
    }
}

/// How the escort parameter is chosen for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EscortMode {
    Fixed(ParamVector),
    /// Median-based robust estimate.
    PluginMedian,
    /// Modified-KL dual estimator (the maximum-likelihood estimate).
    PluginMle,
}

impl EscortMode {
    pub fn name(&self) -> &'static str {
        match self {
            EscortMode::Fixed(_) => "fixed",
            EscortMode::PluginMedian => "plugin-median",
            EscortMode::PluginMle => "plugin-mle",
        }
    }

    /// Default: median plug-in for the location family, MLE plug-in otherwise.
    pub fn default_for(model: &ModelSpec) -> Self {
        match model.family {
            crate::model::Family::NormalLocation { .. } => EscortMode::PluginMedian,
            _ => EscortMode::PluginMle,
        }
    }

    pub fn resolve(&self, model: &ModelSpec, data: &Dataset) -> Result<ParamVector> {
        match self {
            EscortMode::Fixed(v) => {
                model.check_param(v)?;
                Ok(v.clone())
            }
            EscortMode::PluginMedian => Ok(model.median_estimate(data)),
            EscortMode::PluginMle => {
                let start = model.moment_estimate(data);
                let crit = DualCriterion::new(model.clone(), crate::divergence::DivergenceSpec::kl_m(), start)?;
                let mut cfg = crate::optimize::OptimizerConfig::default();
                cfg.random_starts = 0;
                crate::estimators::dual_mle(&crit, data, &cfg).map(|m| m.point)
            }
        }
    }
}

/// Unnormalised φ-posterior for a fixed escort and dataset.
#[derive(Debug, Clone)]
pub struct PhiPosterior {
    criterion: DualCriterion,
    data: Dataset,
    prior: PriorSpec,
    temper: f64,
    infinite_evaluations: Arc<AtomicU64>,
}

impl PhiPosterior {
    pub fn new(criterion: DualCriterion, data: Dataset, prior: PriorSpec) -> Result<Self> {
        criterion.model().check_dataset(&data)?;
        prior.validate(criterion.model(), None)?;
        Ok(Self { criterion, data, prior, temper: 1.0, infinite_evaluations: Arc::new(AtomicU64::new(0)) })
    }

    /// Multiplies the criterion term by `temper` (1 reproduces the untempered posterior).
    pub fn with_temper(mut self, temper: f64) -> Result<Self> {
        if !(temper > 0.0 && temper.is_finite()) {
            return Err(Error::Config(format!("temper must be positive, got {temper}")));
        }
        self.temper = temper;
        Ok(self)
    }

    pub fn criterion(&self) -> &DualCriterion {
        &self.criterion
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn escort(&self) -> &ParamVector {
        self.criterion.escort()
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// Number of evaluations where the divergence was infinite (returned as −∞).
    pub fn infinite_evaluations(&self) -> u64 {
        self.infinite_evaluations.load(Ordering::Relaxed)
    }

    /// n P_n h(θ, α) + ln π(α); −∞ outside Θ or the prior support.
    pub fn log_unnormalized(&self, alpha: &[f64]) -> f64 {
        let model = self.criterion.model();
        if !model.contains(alpha) {
            return f64::NEG_INFINITY;
        }
        let lp = self.prior.log_density(alpha);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        match self.criterion.sum_h(&self.criterion.escort().0, &self.data, alpha) {
            Ok(v) => self.temper * v + lp,
            Err(_) => {
                self.infinite_evaluations.fetch_add(1, Ordering::Relaxed);
                f64::NEG_INFINITY
            }
        }
    }

    /// n P_n h(θ, α) alone.
    pub fn log_criterion(&self, alpha: &[f64]) -> Result<f64> {
        self.criterion.sum_h(&self.criterion.escort().0, &self.data, alpha)
    }

    /// Posterior for the combined data: the criterion sum is additive over
    /// observations, so using this posterior as a prior for `new_obs` is exact.
    pub fn sequential_update(&self, new_obs: &[f64]) -> Result<PhiPosterior> {
        if new_obs.is_empty() {
            return Ok(self.clone());
        }
        let extra = Dataset::new(new_obs.to_vec())?;
        self.criterion.model().check_dataset(&extra)?;
        Ok(Self {
            data: self.data.concat(&extra),
            infinite_evaluations: Arc::new(AtomicU64::new(0)),
            ..self.clone()
        })
    }

    /// m P_m h(θ, α) for new observations: the likelihood-like factor in the
    /// sequential update.
    pub fn update_increment(&self, new_obs: &Dataset, alpha: &[f64]) -> Result<f64> {
        self.criterion.sum_h(&self.criterion.escort().0, new_obs, alpha)
    }

    /// Grid normalisation of a one-dimensional posterior (diagnostics only).
    pub fn normalize_1d(&self, grid: &GridConfig) -> Result<NormalizedPosterior> {
        if self.criterion.model().dim() != 1 {
            return Err(Error::Precondition("normalize_1d requires a one-dimensional parameter".into()));
        }
        let bounds = &self.criterion.model().param_space;
        let (mut lo, mut hi) = grid.range.unwrap_or((bounds.lower[0], bounds.upper[0]));
        lo = lo.max(bounds.lower[0]);
        hi = hi.min(bounds.upper[0]);
        let points = grid.points.max(3);
        let eval = |lo: f64, hi: f64| -> (Vec<f64>, Vec<f64>) {
            let xs: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
            let ls = xs.iter().map(|&a| self.log_unnormalized(&[a])).collect();
            (xs, ls)
        };
        let (mut xs, mut ls) = eval(lo, hi);
        if grid.range.is_none() {
            // Zoom onto the region carrying the mass.
            let max = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max.is_finite() {
                let keep: Vec<usize> = (0..points).filter(|&i| ls[i] > max - 60.0).collect();
                let first = keep[0].saturating_sub(1);
                let last = (keep[keep.len() - 1] + 1).min(points - 1);
                (xs, ls) = eval(xs[first], xs[last]);
            }
        }
        let max = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Underflow(max));
        }
        let rel: Vec<f64> = ls.iter().map(|l| (l - max).exp()).collect();
        let h = xs[1] - xs[0];
        let z = h * (rel.iter().sum::<f64>() - 0.5 * (rel[0] + rel[points - 1]));
        let density = rel.iter().map(|r| r / z).collect();
        Ok(NormalizedPosterior { grid: xs, density, log_normalizer: max + z.ln() })
    }
}

/// Grid for [`PhiPosterior::normalize_1d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub points: usize,
    /// Fixed range; `None` scans Θ and zooms onto the mass.
    pub range: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: 4001, range: None }
    }
}

/// Normalised posterior density on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPosterior {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub log_normalizer: f64,
}

impl NormalizedPosterior {
    fn trapezoid(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let n = self.grid.len();
        let h = self.grid[1] - self.grid[0];
        let vals: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, p)| f(*x, *p)).collect();
        h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n - 1]))
    }

    pub fn total_mass(&self) -> f64 {
        self.trapezoid(|_, p| p)
    }

    pub fn mean(&self) -> f64 {
        self.trapezoid(|x, p| x * p)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.trapezoid(|x, p| (x - m).powi(2) * p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceSpec;
    use approx::assert_relative_eq;

    fn nl() -> ModelSpec {
        ModelSpec::normal_location(1.0).unwrap()
    }

    fn posterior(g: f64, escort: f64, data: &Dataset, prior: PriorSpec) -> PhiPosterior {
        let c = DualCriterion::new(nl(), DivergenceSpec::new(g).unwrap(), escort.into()).unwrap();
        PhiPosterior::new(c, data.clone(), prior).unwrap()
    }

    fn wide_normal() -> PriorSpec {
        PriorSpec::normal(vec![0.0], vec![10.0]).unwrap()
    }

    // Normal(m0, s0²) prior, N(μ, 1) likelihood.
    fn conjugate(data: &Dataset, m0: f64, s0: f64) -> (f64, f64) {
        let n = data.len() as f64;
        let prec = 1.0 / (s0 * s0) + n;
        ((m0 / (s0 * s0) + n * data.mean()) / prec, 1.0 / prec)
    }

    #[test]
    fn escort_point_gives_log_prior() {
        let data = nl().sample(&0.4.into(), 30, 1).unwrap();
        for g in [0.0, 0.5, 2.0] {
            let post = posterior(g, 0.7, &data, wide_normal());
            assert_eq!(post.log_unnormalized(&[0.7]), wide_normal().log_density(&[0.7]));
        }
    }

    #[test]
    fn outside_uniform_box_is_neg_inf() {
        let data = nl().sample(&0.0.into(), 10, 1).unwrap();
        let post = posterior(0.5, 0.0, &data, PriorSpec::uniform_box(vec![-1.0], vec![1.0]).unwrap());
        assert_eq!(post.log_unnormalized(&[1.5]), f64::NEG_INFINITY);
        assert!(post.log_unnormalized(&[0.5]).is_finite());
        // outside Θ even with a wide prior
        let post = posterior(0.5, 0.0, &data, wide_normal());
        assert_eq!(post.log_unnormalized(&[10.5]), f64::NEG_INFINITY);
    }

    #[test]
    fn modified_kl_matches_classical_posterior_ratios() {
        let data = nl().sample(&0.3.into(), 40, 5).unwrap();
        let post = posterior(0.0, -1.0, &data, wide_normal());
        let m = nl();
        let classical = |a: f64| {
            data.observations().iter().map(|&x| m.log_density(&a.into(), x).unwrap()).sum::<f64>()
                + wide_normal().log_density(&[a])
        };
        use rand::Rng;
        let mut rng = crate::seed::rng(3);
        for _ in 0..50 {
            let (a1, a2): (f64, f64) = (rng.random_range(-0.5..1.0), rng.random_range(-0.5..1.0));
            let ours = (post.log_unnormalized(&[a1]) - post.log_unnormalized(&[a2])).exp();
            let theirs = (classical(a1) - classical(a2)).exp();
            assert_relative_eq!(ours, theirs, max_relative = 1e-10);
        }
    }

    #[test]
    fn modified_kl_shape_does_not_depend_on_escort() {
        let data = nl().sample(&0.3.into(), 25, 8).unwrap();
        let a = posterior(0.0, -2.0, &data, wide_normal());
        let b = posterior(0.0, 1.5, &data, wide_normal());
        let diffs: Vec<f64> = (0..20)
            .map(|i| -0.5 + 0.07 * i as f64)
            .map(|x| a.log_unnormalized(&[x]) - b.log_unnormalized(&[x]))
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_matches_conjugate_posterior() {
        let data = nl().sample(&0.5.into(), 50, 21).unwrap();
        let post = posterior(0.0, 0.0, &data, wide_normal());
        let norm = post.normalize_1d(&GridConfig::default()).unwrap();
        assert!((norm.total_mass() - 1.0).abs() < 1e-6);
        let (mean, var) = conjugate(&data, 0.0, 10.0);
        for (x, p) in norm.grid.iter().zip(&norm.density) {
            let z = (x - mean) / var.sqrt();
            let want = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            if z.abs() < 6.0 {
                assert_relative_eq!(*p, want, max_relative = 1e-6);
            }
        }
        assert_relative_eq!(norm.mean(), mean, epsilon = 1e-9);
    }

    #[test]
    fn sequential_update_is_additive() {
        let data = nl().sample(&0.2.into(), 100, 4).unwrap();
        let (first, second) = data.split_at(60).unwrap();
        for g in [0.0, 0.5, 2.0] {
            let full = posterior(g, 0.1, &data, wide_normal());
            let early = posterior(g, 0.1, &first, wide_normal());
            let seq = early.sequential_update(second.observations()).unwrap();
            let mut diffs = Vec::new();
            for i in 0..100 {
                let a = -0.4 + 0.009 * i as f64;
                let combined = full.log_unnormalized(&[a]);
                diffs.push(combined - seq.log_unnormalized(&[a]));
                let via_increment = early.log_unnormalized(&[a]) + early.update_increment(&second, &[a]).unwrap();
                assert!((combined - via_increment).abs() < 1e-10 * combined.abs().max(1.0));
            }
            assert!(diffs.iter().all(|d| (d - diffs[0]).abs() < 1e-10));
            let same = early.sequential_update(&[]).unwrap();
            assert_eq!(same.log_unnormalized(&[0.3]), early.log_unnormalized(&[0.3]));
        }
    }

    #[test]
    fn sequential_conjugate_mean() {
        let data = nl().sample(&(-0.3).into(), 80, 12).unwrap();
        let (first, second) = data.split_at(48).unwrap();
        let seq = posterior(0.0, 0.0, &first, wide_normal()).sequential_update(second.observations()).unwrap();
        let norm = seq.normalize_1d(&GridConfig::default()).unwrap();
        assert_relative_eq!(norm.mean(), conjugate(&data, 0.0, 10.0).0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_improper_or_mismatched_priors() {
        assert!(PriorSpec::uniform_box(vec![f64::NEG_INFINITY], vec![1.0]).is_err());
        assert!(PriorSpec::normal(vec![0.0], vec![0.0]).is_err());
        let p = PriorSpec::uniform_box(vec![1.0], vec![2.0]).unwrap();
        assert!(p.validate(&nl(), Some(&0.0.into())).is_err());
        assert!(p.validate(&ModelSpec::normal_location_scale(), None).is_err());
    }

    #[test]
    fn normalize_rejects_two_dimensional_models() {
        let m = ModelSpec::normal_location_scale();
        let data = m.sample(&vec![0.0, 1.0].into(), 10, 1).unwrap();
        let c = DualCriterion::new(m, DivergenceSpec::kl_m(), vec![0.0, 1.0].into()).unwrap();
        let prior = PriorSpec::normal(vec![0.0, 1.0], vec![5.0, 5.0]).unwrap();
        let post = PhiPosterior::new(c, data, prior).unwrap();
        assert!(matches!(post.normalize_1d(&GridConfig::default()), Err(Error::Precondition(_))));
    }
}
