//! Point and interval estimators: chain summaries under a loss, posterior
//! modes, the dual φ-divergence estimator, and credible intervals.

use serde::{Deserialize, Serialize};

use crate::dual::DualCriterion;
use crate::error::{Error, Result};
use crate::mcmc::{effective_sample_size, ChainDraws, MIN_DRAWS};
use crate::model::{Dataset, ModelSpec, ParamVector};
use crate::optimize::{fd_gradient_richardson, finite_or_neg_inf, multi_start_max, OptimizerConfig};
use crate::posterior::PhiPosterior;
use crate::stats;

/// Minimum chain length for credible intervals.
pub const MIN_INTERVAL_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    SquaredError,
    AbsoluteError,
    /// Check loss at level τ ∈ (0, 1).
    Quantile(f64),
}

impl LossSpec {
    pub fn quantile(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(LossSpec::Quantile(tau))
        } else {
            Err(Error::Config(format!("quantile level must lie in (0, 1), got {tau}")))
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossSpec::SquaredError => "squared".into(),
            LossSpec::AbsoluteError => "absolute".into(),
            LossSpec::Quantile(t) => format!("quantile({t})"),
        }
    }
}

/// Summary of a chain under a loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub point: ParamVector,
    pub loss: LossSpec,
    /// Equal-tailed 95% intervals per coordinate (absent for chains shorter than 1000).
    pub ci: Option<Vec<(f64, f64)>>,
    pub mc_se: Vec<f64>,
    pub ess: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
    pub acceptance_rate: f64,
}

/// Bayes-type estimate minimising the posterior expected loss, coordinate-wise.
pub fn estimate(chain: &ChainDraws, loss: LossSpec) -> Result<EstimateReport> {
    if chain.len() < MIN_DRAWS {
        return Err(Error::TooShort { len: chain.len(), min: MIN_DRAWS });
    }
    if let LossSpec::Quantile(t) = loss {
        LossSpec::quantile(t)?;
    }
    let d = chain.dim();
    let mut point = Vec::with_capacity(d);
    let mut mc_se = Vec::with_capacity(d);
    let mut ess = Vec::with_capacity(d);
    for j in 0..d {
        let col = chain.column(j);
        let (e, _) = effective_sample_size(&col);
        ess.push(e);
        match loss {
            LossSpec::SquaredError => {
                // Shifting by the first draw keeps constant chains exact.
                let x0 = col[0];
                point.push(x0 + col.iter().map(|x| x - x0).sum::<f64>() / col.len() as f64);
                mc_se.push(stats::std_dev(&col) / e.sqrt());
            }
            LossSpec::AbsoluteError => {
                point.push(stats::quantile(&col, 0.5));
                mc_se.push(batch_quantile_se(&col, 0.5));
            }
            LossSpec::Quantile(t) => {
                point.push(stats::quantile(&col, t));
                mc_se.push(batch_quantile_se(&col, t));
            }
        }
    }
    let ci = if chain.len() >= MIN_INTERVAL_DRAWS {
        Some((0..d).map(|j| credible_interval(chain, &|a: &[f64]| a[j], 0.05)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(EstimateReport {
        point: ParamVector(point),
        loss,
        ci,
        mc_se,
        ess,
        draws: chain.len(),
        seed: chain.seed,
        acceptance_rate: chain.acceptance_rate,
    })
}

/// Standard error of a sample quantile by non-overlapping batch means.
fn batch_quantile_se(xs: &[f64], p: f64) -> f64 {
    let batches = (xs.len() as f64).sqrt().floor() as usize;
    let size = xs.len() / batches;
    let qs: Vec<f64> = xs.chunks_exact(size).take(batches).map(|b| stats::quantile(b, p)).collect();
    stats::std_dev(&qs) / (batches as f64).sqrt()
}

/// `[Q_{ε/2}, Q_{1−ε/2}]` of `f` over the chain, with linearly interpolated
/// order statistics: for sorted values `y₀ ≤ … ≤ y_{B−1}`, `Q_p = y_⌊h⌋ + (h − ⌊h⌋)(y_{⌊h⌋+1} − y_⌊h⌋)`
/// where `h = (B − 1)p`.
pub fn credible_interval(chain: &ChainDraws, f: &dyn Fn(&[f64]) -> f64, epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Precondition(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if chain.len() < MIN_INTERVAL_DRAWS {
        return Err(Error::TooShort { len: chain.len(), min: MIN_INTERVAL_DRAWS });
    }
    let mut ys: Vec<f64> = chain.rows().map(f).collect();
    ys.sort_by(f64::total_cmp);
    Ok((stats::quantile_sorted(&ys, epsilon / 2.0), stats::quantile_sorted(&ys, 1.0 - epsilon / 2.0)))
}

/// A maximiser together with its objective value and a finite-difference
/// gradient norm at the returned point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub point: ParamVector,
    pub objective: f64,
    pub grad_norm: f64,
}

fn initial_step(model: &ModelSpec, at: &ParamVector, n: usize) -> Vec<f64> {
    let width: Vec<f64> =
        model.param_space.lower.iter().zip(&model.param_space.upper).map(|(l, u)| u - l).collect();
    model
        .unit_information_scale(at)
        .iter()
        .zip(width)
        .map(|(s, w)| (4.0 * s / (n as f64).sqrt()).clamp(1e-4, 0.25 * w))
        .collect()
}

fn maximise(
    objective: &dyn Fn(&[f64]) -> f64,
    model: &ModelSpec,
    starts: Vec<Vec<f64>>,
    anchor: &ParamVector,
    n: usize,
    cfg: &OptimizerConfig,
) -> Result<ModeEstimate> {
    let step = initial_step(model, anchor, n);
    let opt = multi_start_max(objective, &starts, &step, &model.param_space, &anchor.0, cfg)?;
    let h: Vec<f64> = opt.x.iter().map(|x| 1e-4 * (1.0 + x.abs())).collect();
    let grad = fd_gradient_richardson(objective, &opt.x, &h);
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(ModeEstimate { point: ParamVector(opt.x), objective: opt.value, grad_norm })
}

/// Maximiser of `P_n h(θ, α) + ln π(α)` with the prior term unscaled.
pub fn posterior_mode(post: &PhiPosterior, cfg: &OptimizerConfig) -> Result<ModeEstimate> {
    let n = post.n() as f64;
    let objective = |a: &[f64]| {
        let lp = post.prior().log_density(a);
        if lp == f64::NEG_INFINITY || !post.criterion().model().contains(a) {
            return f64::NEG_INFINITY;
        }
        finite_or_neg_inf(post.log_criterion(a)) / n + lp
    };
    mode_search(post, &objective, cfg)
}

/// Maximiser of `n P_n h(θ, α) + ln π(α)`, the mode of the φ-posterior density.
pub fn posterior_mode_of_phi_posterior(post: &PhiPosterior, cfg: &OptimizerConfig) -> Result<ModeEstimate> {
    mode_search(post, &|a: &[f64]| post.log_unnormalized(a), cfg)
}

fn mode_search(post: &PhiPosterior, objective: &dyn Fn(&[f64]) -> f64, cfg: &OptimizerConfig) -> Result<ModeEstimate> {
    let model = post.criterion().model();
    let escort = post.escort();
    let mut prior_mean = post.prior().mean().0;
    model.param_space.clamp(&mut prior_mean);
    let starts = vec![escort.0.clone(), prior_mean];
    maximise(objective, model, starts, escort, post.n(), cfg)
}

/// Dual φ-divergence estimator: maximiser of `P_n h(θ, α)` at the criterion's escort.
pub fn dual_mle(criterion: &DualCriterion, data: &Dataset, cfg: &OptimizerConfig) -> Result<ModeEstimate> {
    let model = criterion.model();
    model.check_dataset(data)?;
    let n = data.len() as f64;
    let theta = &criterion.escort().0;
    let objective = |a: &[f64]| {
        if !model.contains(a) {
            return f64::NEG_INFINITY;
        }
        finite_or_neg_inf(criterion.sum_h(theta, data, a)) / n
    };
    let starts = vec![theta.clone(), model.moment_estimate(data).0, model.median_estimate(data).0];
    maximise(&objective, model, starts, criterion.escort(), data.len(), cfg)
}
