//! Random-walk Metropolis sampling with burn-in adaptation, and chain diagnostics.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Minimum retained draws for diagnostics and estimators.
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Per-coordinate proposal standard deviations before adaptation.
    pub proposal_scale: Vec<f64>,
    pub adapt: bool,
    pub target_acceptance: f64,
}

impl SamplerConfig {
    /// Defaults with the proposal set to `2.38/√d` times `crude_scale`.
    pub fn with_crude_scale(crude_scale: &[f64]) -> Self {
        let d = crude_scale.len().max(1) as f64;
        Self {
            steps: 60_000,
            burn_in: 10_000,
            thin: 1,
            proposal_scale: crude_scale.iter().map(|s| 2.38 / d.sqrt() * s).collect(),
            adapt: true,
            target_acceptance: 0.3,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.steps <= self.burn_in {
            return Err(Error::Config(format!("steps ({}) must exceed burn_in ({})", self.steps, self.burn_in)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.proposal_scale.len() != dim {
            return Err(Error::Config(format!(
                "proposal_scale has {} entries, parameter has {dim}",
                self.proposal_scale.len()
            )));
        }
        if self.proposal_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("proposal_scale entries must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        (self.steps - self.burn_in) / self.thin
    }
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    dim: usize,
    /// Row-major, one row per retained draw.
    draws: Vec<f64>,
    pub burn_in: usize,
    pub thin: usize,
    /// Accepted proposals over all post-burn-in steps divided by their number.
    pub acceptance_rate: f64,
    pub accepted_steps: usize,
    pub post_burn_in_steps: usize,
    pub seed: u64,
    pub log_post_trace: Vec<f64>,
    /// Whether the step producing each retained draw was an acceptance.
    pub accepted: Vec<bool>,
    /// Proposal scale multiplier in force at each retained draw.
    pub scale_trace: Vec<f64>,
    /// Final per-coordinate proposal standard deviations.
    pub proposal_scale: Vec<f64>,
    pub stuck: bool,
}

impl ChainDraws {
    /// Wraps externally produced draws (e.g. i.i.d. samples) as a chain.
    pub fn from_rows(rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Precondition("rows must be nonempty with equal length".into()));
        }
        Ok(Self {
            dim,
            draws: rows.concat(),
            burn_in: 0,
            thin: 1,
            acceptance_rate: 1.0,
            accepted_steps: rows.len(),
            post_burn_in_steps: rows.len(),
            seed,
            log_post_trace: vec![0.0; rows.len()],
            accepted: vec![true; rows.len()],
            scale_trace: vec![1.0; rows.len()],
            proposal_scale: vec![1.0; dim],
            stuck: false,
        })
    }

    /// Concatenates several chains of equal dimension.
    pub fn pool(chains: &[ChainDraws]) -> Result<Self> {
        let first = chains.first().ok_or_else(|| Error::Precondition("no chains to pool".into()))?;
        if chains.iter().any(|c| c.dim != first.dim) {
            return Err(Error::Precondition("chains differ in dimension".into()));
        }
        let mut out = first.clone();
        for c in &chains[1..] {
            out.draws.extend_from_slice(&c.draws);
            out.log_post_trace.extend_from_slice(&c.log_post_trace);
            out.accepted.extend_from_slice(&c.accepted);
            out.scale_trace.extend_from_slice(&c.scale_trace);
            out.accepted_steps += c.accepted_steps;
            out.post_burn_in_steps += c.post_burn_in_steps;
            out.stuck |= c.stuck;
        }
        out.acceptance_rate = out.accepted_steps as f64 / out.post_burn_in_steps as f64;
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.draws.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Writes `iter, alpha_1..alpha_d, log_post, accepted`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iter".to_string()];
        header.extend((1..=self.dim).map(|j| format!("alpha_{j}")));
        header.extend(["log_post".to_string(), "accepted".to_string()]);
        w.write_record(&header)?;
        for (i, row) in self.rows().enumerate() {
            let iter = self.burn_in + (i + 1) * self.thin;
            let mut rec = vec![iter.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.17e}")));
            rec.push(format!("{:.17e}", self.log_post_trace[i]));
            rec.push(u8::from(self.accepted[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON sidecar with the chain metadata.
    pub fn write_sidecar(&self, path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
        let meta = serde_json::json!({
            "seed": self.seed,
            "config_hash": config_hash,
            "acceptance_rate": self.acceptance_rate,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "draws": self.len(),
            "proposal_scale": self.proposal_scale,
            "stuck": self.stuck,
        });
        let mut f = std::fs::File::create(path)?;
        f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
        Ok(())
    }
}

/// One Metropolis transition for a symmetric proposal. Returns the new state,
/// its log target, and whether the proposal was accepted.
pub fn metropolis_step<S, R: Rng + ?Sized>(
    current: S,
    current_lp: f64,
    proposal: S,
    target: impl FnOnce(&S) -> f64,
    rng: &mut R,
) -> (S, f64, bool) {
    let lp = target(&proposal);
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return (current, current_lp, false);
    }
    let u: f64 = rng.random();
    if accept_move(lp - current_lp, u) {
        (proposal, lp, true)
    } else {
        (current, current_lp, false)
    }
}

#[inline]
fn accept_move(log_ratio: f64, u: f64) -> bool {
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Gaussian random-walk Metropolis. During burn-in a global scale multiplier
/// is adapted towards the target acceptance; it is frozen afterwards.
pub fn run_chain(
    target: &(dyn Fn(&[f64]) -> f64 + Sync),
    init: &ParamVector,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<ChainDraws> {
    let d = init.dim();
    cfg.validate(d)?;
    let mut lp = target(&init.0);
    if !lp.is_finite() {
        return Err(Error::InitInvalid);
    }
    let mut rng = crate::seed::rng(seed);
    let mut x = init.0.clone();
    let mut log_lambda = 0.0f64;
    let retained = cfg.retained();
    let mut draws = Vec::with_capacity(retained * d);
    let mut log_post_trace = Vec::with_capacity(retained);
    let mut accepted = Vec::with_capacity(retained);
    let mut scale_trace = Vec::with_capacity(retained);
    let mut accepted_steps = 0usize;
    let mut proposal = vec![0.0; d];

    for step in 0..cfg.steps {
        let lambda = log_lambda.exp();
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            proposal[j] = x[j] + lambda * cfg.proposal_scale[j] * z;
        }
        let prop_lp = target(&proposal);
        let u: f64 = rng.random();
        let log_ratio = prop_lp - lp;
        let accept = prop_lp.is_finite() && accept_move(log_ratio, u);
        if accept {
            x.copy_from_slice(&proposal);
            lp = prop_lp;
        }
        if step < cfg.burn_in {
            if cfg.adapt {
                let a = if prop_lp.is_finite() { log_ratio.min(0.0).exp() } else { 0.0 };
                let rate = 1.0 / ((step + 1) as f64).powf(0.6);
                log_lambda = (log_lambda + rate * (a - cfg.target_acceptance)).clamp(-20.0, 20.0);
            }
            continue;
        }
        accepted_steps += usize::from(accept);
        if (step + 1 - cfg.burn_in) % cfg.thin == 0 {
            draws.extend_from_slice(&x);
            log_post_trace.push(lp);
            accepted.push(accept);
            scale_trace.push(lambda);
        }
    }

    let post = cfg.steps - cfg.burn_in;
    let acceptance_rate = accepted_steps as f64 / post as f64;
    let stuck = acceptance_rate < 0.01;
    if stuck {
        log::warn!("chain with seed {seed} is stuck: acceptance rate {acceptance_rate:.4}");
    }
    let lambda = log_lambda.exp();
    Ok(ChainDraws {
        dim: d,
        draws,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        acceptance_rate,
        accepted_steps,
        post_burn_in_steps: post,
        seed,
        log_post_trace,
        accepted,
        scale_trace,
        proposal_scale: cfg.proposal_scale.iter().map(|s| s * lambda).collect(),
        stuck,
    })
}

/// Runs `inits.len()` chains in parallel; chain `k` uses `split(master_seed, k)`.
pub fn run_chains(
    target: &(dyn Fn(&[f64]) -> f64 + Sync),
    inits: &[ParamVector],
    cfg: &SamplerConfig,
    master_seed: u64,
) -> Result<Vec<ChainDraws>> {
    inits
        .par_iter()
        .enumerate()
        .map(|(k, init)| run_chain(target, init, cfg, crate::seed::split(master_seed, k as u64)))
        .collect()
}

/// Chain diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Effective sample size per coordinate, summed over chains.
    pub ess: Vec<f64>,
    /// Split-R̂ per coordinate; present with two or more chains.
    pub split_rhat: Option<Vec<f64>>,
    pub acceptance: f64,
    /// Some coordinate has zero variance.
    pub degenerate: bool,
}

pub fn diagnostics(chain: &ChainDraws) -> Result<Diagnostics> {
    diagnostics_multi(std::slice::from_ref(chain))
}

pub fn diagnostics_multi(chains: &[ChainDraws]) -> Result<Diagnostics> {
    let first = chains.first().ok_or_else(|| Error::Precondition("no chains".into()))?;
    for c in chains {
        if c.len() < MIN_DRAWS {
            return Err(Error::TooShort { len: c.len(), min: MIN_DRAWS });
        }
    }
    let d = first.dim();
    let mut ess = vec![0.0; d];
    let mut degenerate = false;
    for c in chains {
        for (j, e) in ess.iter_mut().enumerate() {
            let (v, deg) = effective_sample_size(&c.column(j));
            *e += v;
            degenerate |= deg;
        }
    }
    let split_rhat = (chains.len() >= 2).then(|| {
        (0..d)
            .map(|j| {
                let halves: Vec<Vec<f64>> = chains
                    .iter()
                    .flat_map(|c| {
                        let col = c.column(j);
                        let m = col.len() / 2;
                        [col[..m].to_vec(), col[col.len() - m..].to_vec()]
                    })
                    .collect();
                rhat(&halves)
            })
            .collect()
    });
    let steps: usize = chains.iter().map(|c| c.post_burn_in_steps).sum();
    let acc: usize = chains.iter().map(|c| c.accepted_steps).sum();
    Ok(Diagnostics { ess, split_rhat, acceptance: acc as f64 / steps as f64, degenerate })
}

/// ESS by Geyer's initial positive sequence. Returns `(ess, degenerate)`;
/// a zero-variance series has ESS 1.
pub fn effective_sample_size(xs: &[f64]) -> (f64, bool) {
    let n = xs.len();
    let m = crate::stats::mean(xs);
    let c0 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 || !c0.is_finite() {
        return (1.0, true);
    }
    let acf = |lag: usize| -> f64 {
        xs[..n - lag].iter().zip(&xs[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = acf(2 * k) + acf(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        // Enforce a monotone sequence.
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    ((n as f64 / tau).min(n as f64 * (n as f64).log10()), false)
}

fn rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let grand = crate::stats::mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains.iter().map(|c| crate::stats::variance(c)).sum::<f64>() / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}
