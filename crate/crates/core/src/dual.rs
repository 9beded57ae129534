//! The dual divergence criterion.
//!
//! For an escort θ and a candidate α,
//!
//! ```text
//! h(θ, α, x) = ∫ φ′(p_θ/p_α) p_θ dλ − g(p_θ(x)/p_α(x)),    g(r) = rφ′(r) − φ(r)
//! ```
//!
//! and `α ↦ ∫ h(θ, α) dP_θ₀` is maximised at α = θ₀ with maximum
//! `D_φ(P_θ, P_θ₀)`. The empirical version `P_n h(θ, α)` replaces P_θ₀ with the
//! sample.
//!
//! For power divergences `g(r) = (r^γ − 1)/γ` and the inner integral is
//! `(∫ p_θ^γ p_α^{1−γ} − 1)/(γ − 1)`, so everything reduces to moments of
//! density ratios, evaluated in log space.

use serde::Serialize;

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::model::{Dataset, Family, ModelSpec, ParamVector};
use crate::optimize::{self, finite_or_neg_inf, OptimizerConfig};
use crate::quadrature::{Quadrature, QuadratureConfig};

/// Dual criterion for a model, a divergence and an escort parameter.
#[derive(Debug, Clone)]
pub struct DualCriterion {
    model: ModelSpec,
    divergence: DivergenceSpec,
    escort: ParamVector,
    quadrature: Quadrature,
}

/// Outcome of [`DualCriterion::dual_sup_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSupCheck {
    pub sup_value: f64,
    pub argmax: ParamVector,
    /// |sup − D_φ(P_θ, P_θ₀)| with the divergence computed directly.
    pub gap: f64,
    pub divergence: f64,
}

impl DualCriterion {
    pub fn new(model: ModelSpec, divergence: DivergenceSpec, escort: ParamVector) -> Result<Self> {
        let quadrature = QuadratureConfig::default_for(model.support());
        Self::with_quadrature(model, divergence, escort, quadrature)
    }

    pub fn with_quadrature(
        model: ModelSpec,
        divergence: DivergenceSpec,
        escort: ParamVector,
        quadrature: QuadratureConfig,
    ) -> Result<Self> {
        model.check_param(&escort)?;
        Ok(Self { model, divergence, escort, quadrature: Quadrature::new(quadrature)? })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn divergence(&self) -> &DivergenceSpec {
        &self.divergence
    }

    pub fn escort(&self) -> &ParamVector {
        &self.escort
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quadrature
    }

    /// Same criterion with another escort.
    pub fn with_escort(&self, escort: ParamVector) -> Result<Self> {
        self.model.check_param(&escort)?;
        Ok(Self { escort, ..self.clone() })
    }

    pub(crate) fn hint(&self, theta: &[f64]) -> (f64, f64) {
        match self.model.family {
            Family::Exponential => (1.0 / theta[0], 1.0),
            _ => (theta[0], self.model.observation_scale(theta)),
        }
    }

    /// `∫ φ′(p_θ/p_α) p_θ dλ`, using the closed forms where they exist.
    pub fn inner_integral(&self, theta: &ParamVector, alpha: &ParamVector) -> Result<f64> {
        self.inner_integral_raw(&theta.0, &alpha.0, true)
    }

    /// The inner integral by quadrature only (no closed-form shortcuts).
    pub fn inner_integral_quadrature(&self, theta: &ParamVector, alpha: &ParamVector) -> Result<f64> {
        self.inner_integral_raw(&theta.0, &alpha.0, false)
    }

    pub(crate) fn inner_integral_raw(&self, theta: &[f64], alpha: &[f64], closed_forms: bool) -> Result<f64> {
        if theta == alpha {
            return Ok(0.0);
        }
        let support = self.model.support();
        let model = &self.model;
        if self.divergence.is_modified_kl() {
            // ∫(1 − p_α/p_θ) p_θ = 0
            if closed_forms {
                return Ok(0.0);
            }
            let m = self.quadrature.integrate_exp(support, &|x| model.ln_pdf(alpha, x), self.hint(alpha))?;
            return Ok(1.0 - m);
        }
        if self.divergence.is_kl() {
            if closed_forms {
                if let Some(kl) = gaussian_kl(model, theta, alpha) {
                    return Ok(kl);
                }
            }
            return self.quadrature.expect(
                support,
                &|x| model.ln_pdf(theta, x),
                &|x| model.ln_ratio(theta, alpha, x),
                self.hint(theta),
            );
        }
        let g = self.divergence.gamma;
        let moment = self.quadrature.integrate_exp(
            support,
            &|x| g * model.ln_pdf(theta, x) + (1.0 - g) * model.ln_pdf(alpha, x),
            self.hint(theta),
        )?;
        Ok((moment - 1.0) / (g - 1.0))
    }

    /// h(θ, α, x).
    pub fn h(&self, theta: &ParamVector, alpha: &ParamVector, x: f64) -> Result<f64> {
        self.model.check_support(x)?;
        self.model.check_param(theta)?;
        self.model.check_param(alpha)?;
        let inner = self.inner_integral(theta, alpha)?;
        Ok(inner - self.divergence.bracket_log(self.model.ln_ratio(&theta.0, &alpha.0, x))?)
    }

    /// P_n h(θ, α) at the stored escort.
    pub fn empirical_criterion(&self, data: &Dataset, alpha: &ParamVector) -> Result<f64> {
        self.model.check_param(alpha)?;
        Ok(self.sum_h(&self.escort.0, data, &alpha.0)? / data.len() as f64)
    }

    /// P_n h(θ, α) for an explicit θ.
    pub fn empirical_criterion_at(&self, theta: &ParamVector, data: &Dataset, alpha: &ParamVector) -> Result<f64> {
        self.model.check_param(theta)?;
        self.model.check_param(alpha)?;
        Ok(self.sum_h(&theta.0, data, &alpha.0)? / data.len() as f64)
    }

    /// Σᵢ h(θ, α, Xᵢ); the inner integral is evaluated once.
    pub(crate) fn sum_h(&self, theta: &[f64], data: &Dataset, alpha: &[f64]) -> Result<f64> {
        if theta == alpha {
            return Ok(0.0);
        }
        let inner = self.inner_integral_raw(theta, alpha, true)?;
        let n = data.len() as f64;
        let model = &self.model;
        let obs = data.observations();
        let g = self.divergence.gamma;
        let bracket_sum: f64 = if self.divergence.is_modified_kl() {
            obs.iter().map(|&x| model.ln_ratio(theta, alpha, x)).sum()
        } else if self.divergence.is_kl() {
            obs.iter().map(|&x| model.ln_ratio(theta, alpha, x).exp_m1()).sum()
        } else {
            obs.iter().map(|&x| (g * model.ln_ratio(theta, alpha, x)).exp_m1()).sum::<f64>() / g
        };
        let total = n * inner - bracket_sum;
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::Overflow("empirical criterion".into()))
        }
    }

    /// `∫ h(θ, α, x) p_θ₀(x) dx`.
    pub fn population_criterion(&self, theta: &ParamVector, alpha: &ParamVector, theta0: &ParamVector) -> Result<f64> {
        self.population_criterion_raw(&theta.0, &alpha.0, &theta0.0)
    }

    pub(crate) fn population_criterion_raw(&self, theta: &[f64], alpha: &[f64], theta0: &[f64]) -> Result<f64> {
        if theta == alpha {
            return Ok(0.0);
        }
        let inner = self.inner_integral_raw(theta, alpha, true)?;
        let model = &self.model;
        let support = model.support();
        let bracket = if self.divergence.is_modified_kl() {
            self.quadrature.expect(
                support,
                &|x| model.ln_pdf(theta0, x),
                &|x| model.ln_ratio(theta, alpha, x),
                self.hint(theta0),
            )?
        } else {
            let g = if self.divergence.is_kl() { 1.0 } else { self.divergence.gamma };
            let m = self.quadrature.integrate_exp(
                support,
                &|x| g * model.ln_ratio(theta, alpha, x) + model.ln_pdf(theta0, x),
                self.hint(theta0),
            )?;
            (m - 1.0) / g
        };
        Ok(inner - bracket)
    }

    /// D_φ(P_θ, P_α₀) = ∫ φ(p_θ/p_α₀) p_α₀ by direct quadrature.
    pub fn divergence_direct(&self, theta: &ParamVector, alpha0: &ParamVector) -> Result<f64> {
        self.model.check_param(theta)?;
        self.model.check_param(alpha0)?;
        if theta == alpha0 {
            return Ok(0.0);
        }
        let model = &self.model;
        let support = model.support();
        let g = self.divergence.gamma;
        // The power moment decides membership in 𝒰.
        if !self.divergence.is_modified_kl() && !self.divergence.is_kl() {
            self.quadrature.integrate_exp(
                support,
                &|x| g * model.ln_pdf(&theta.0, x) + (1.0 - g) * model.ln_pdf(&alpha0.0, x),
                self.hint(&alpha0.0),
            )?;
        }
        let div = self.divergence;
        let value = self.quadrature.expect(
            support,
            &|x| model.ln_pdf(&alpha0.0, x),
            &|x| div.phi_log(model.ln_ratio(&theta.0, &alpha0.0, x)).unwrap_or(f64::INFINITY),
            self.hint(&alpha0.0),
        )?;
        Ok(value.max(0.0))
    }

    /// Maximises `α ↦ ∫ h(θ, α) dP_α₀` over Θ and compares the supremum with
    /// the directly computed divergence.
    pub fn dual_sup_check(
        &self,
        theta: &ParamVector,
        alpha0: &ParamVector,
        cfg: &OptimizerConfig,
    ) -> Result<DualSupCheck> {
        self.model.check_param(theta)?;
        self.model.check_param(alpha0)?;
        let bounds = &self.model.param_space;
        let objective = |a: &[f64]| {
            if !bounds.contains(a) {
                return f64::NEG_INFINITY;
            }
            finite_or_neg_inf(self.population_criterion_raw(&theta.0, a, &alpha0.0))
        };

        // Coarse grid, tie-broken towards the grid centre.
        let d = self.model.dim();
        let k = cfg.grid_points.max(3);
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let (l, u) = (bounds.lower[j], bounds.upper[j]);
                (0..k).map(|i| l + (u - l) * i as f64 / (k - 1) as f64).collect()
            })
            .collect();
        let center = bounds.center();
        let mut best: Option<(Vec<usize>, f64, f64)> = None;
        let mut idx = vec![0usize; d];
        let mut trace = Vec::new();
        loop {
            let point: Vec<f64> = idx.iter().enumerate().map(|(j, &i)| axes[j][i]).collect();
            let v = objective(&point);
            let dist = point.iter().zip(&center.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let replace = match &best {
                None => v.is_finite(),
                Some((_, bv, bd)) => v > *bv || (v == *bv && dist < *bd),
            };
            if replace {
                best = Some((idx.clone(), v, dist));
                trace.push(v);
            }
            // odometer increment
            let mut j = 0;
            while j < d {
                idx[j] += 1;
                if idx[j] < k {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == d {
                break;
            }
        }
        let Some((best_idx, _, _)) = best else {
            return Err(Error::NonConvergence {
                message: "dual criterion is -inf on the whole grid".into(),
                trace,
            });
        };

        // Local refinement inside the neighbouring grid cells.
        let lo: Vec<f64> = best_idx.iter().enumerate().map(|(j, &i)| axes[j][i.saturating_sub(1)]).collect();
        let hi: Vec<f64> = best_idx.iter().enumerate().map(|(j, &i)| axes[j][(i + 1).min(k - 1)]).collect();
        let optimum = if d == 1 {
            let opt = optimize::golden_section_max(&|a| objective(&[a]), lo[0], hi[0], cfg.x_tol);
            optimize::newton_polish(&objective, &opt, bounds, 8)
        } else {
            let start: Vec<f64> = best_idx.iter().enumerate().map(|(j, &i)| axes[j][i]).collect();
            let step: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.25 * (h - l)).collect();
            let opt = optimize::nelder_mead_max(&objective, &start, &step, bounds, cfg)?;
            optimize::newton_polish(&objective, &opt, bounds, 8)
        };
        if !optimum.value.is_finite() {
            trace.push(optimum.value);
            return Err(Error::NonConvergence { message: "refinement lost the optimum".into(), trace });
        }
        let divergence = self.divergence_direct(theta, alpha0)?;
        Ok(DualSupCheck {
            sup_value: optimum.value,
            argmax: ParamVector(optimum.x),
            gap: (optimum.value - divergence).abs(),
            divergence,
        })
    }
}

fn gaussian_kl(model: &ModelSpec, theta: &[f64], alpha: &[f64]) -> Option<f64> {
    match model.family {
        Family::NormalLocation { sigma } => Some((theta[0] - alpha[0]).powi(2) / (2.0 * sigma * sigma)),
        Family::NormalLocationScale => {
            let (st, sa) = (theta[1], alpha[1]);
            Some((sa / st).ln() + (st * st + (theta[0] - alpha[0]).powi(2)) / (2.0 * sa * sa) - 0.5)
        }
        Family::Exponential => None,
    }
}
