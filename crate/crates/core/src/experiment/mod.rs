//! Batch driver: data simulation, single fits, replication studies and report files.

mod config;
mod output;

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{Contaminant, EstimatorSettings, ExperimentConfig, McmcSettings, StudyKind};
pub use output::{write_gnuplot_stub, Table};

use crate::asymptotics::{asymptotic_report, posterior_normality_check, AsymptoticReport, NormalityCheck};
use crate::divergence::DivergenceSpec;
use crate::dual::{DualCriterion, DualSupCheck};
use crate::error::{Error, Result};
use crate::estimators::{
    credible_interval, dual_mle, estimate, posterior_mode, posterior_mode_of_phi_posterior, EstimateReport,
    ModeEstimate,
};
use crate::mcmc::{diagnostics_multi, run_chains, ChainDraws, Diagnostics};
use crate::model::{Dataset, ModelSpec, ParamVector};
use crate::optimize::OptimizerConfig;
use crate::posterior::{PhiPosterior, PriorSpec};
use crate::seed::split;
use crate::stats;

/// Draws `n` observations, each from the contaminant with probability `eps_c`
/// and from `P_θ₀` otherwise. With `eps_c = 0` this is exactly `model.sample`.
pub fn simulate_contaminated(
    model: &ModelSpec,
    theta0: &ParamVector,
    n: usize,
    eps_c: f64,
    contaminant: Option<&Contaminant>,
    seed: u64,
) -> Result<Dataset> {
    config::check_fraction(eps_c)?;
    model.check_param(theta0)?;
    if eps_c == 0.0 {
        return model.sample(theta0, n, seed);
    }
    let c = contaminant.ok_or_else(|| Error::Config("a positive contamination fraction needs a contaminant".into()))?;
    config::check_contaminant(model, c)?;
    let mut rng = crate::seed::rng(seed);
    let xs = (0..n)
        .map(|_| {
            if rng.random::<f64>() < eps_c {
                c.model.draw(&c.theta.0, &mut rng)
            } else {
                model.draw(&theta0.0, &mut rng)
            }
        })
        .collect();
    let data = Dataset::new(xs)?;
    model.check_dataset(&data)?;
    Ok(data)
}

/// Everything computed for one dataset and one divergence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutcome {
    pub gamma: f64,
    pub escort: ParamVector,
    pub estimate: EstimateReport,
    /// Equal-tailed interval per coordinate at the configured ε.
    pub ci: Vec<(f64, f64)>,
    /// Whether each interval contains the corresponding θ₀ coordinate.
    pub covered: Vec<bool>,
    pub diagnostics: Diagnostics,
    pub asymptotic: AsymptoticReport,
    pub normality: Option<NormalityCheck>,
    pub posterior_mode: Option<ModeEstimate>,
    pub phi_posterior_mode: Option<ModeEstimate>,
    pub dual_mle: Option<ModeEstimate>,
    pub infinite_evaluations: u64,
    #[serde(skip)]
    pub chains: Vec<ChainDraws>,
}

/// Builds the φ-posterior for `data` under `divergence`.
pub fn build_posterior(cfg: &ExperimentConfig, divergence: DivergenceSpec, data: &Dataset) -> Result<PhiPosterior> {
    let escort = cfg.escort.resolve(&cfg.model, data)?;
    let criterion = DualCriterion::with_quadrature(cfg.model.clone(), divergence, escort, cfg.quadrature)?;
    PhiPosterior::new(criterion, data.clone(), cfg.prior.clone())
}

/// Runs the configured chains on a posterior, starting at the escort (or the
/// prior mean if the escort has zero prior density).
pub fn sample_posterior(cfg: &ExperimentConfig, post: &PhiPosterior, seed: u64) -> Result<Vec<ChainDraws>> {
    let model = post.criterion().model();
    let n = post.n() as f64;
    let crude: Vec<f64> = model.unit_information_scale(post.escort()).iter().map(|s| s / n.sqrt()).collect();
    let sampler = cfg.mcmc.sampler(&crude);
    let mut init = post.escort().clone();
    if !post.log_unnormalized(&init.0).is_finite() {
        init = post.prior().mean();
        model.param_space.clamp(&mut init.0);
    }
    let inits = vec![init; cfg.mcmc.chains];
    run_chains(&|a: &[f64]| post.log_unnormalized(a), &inits, &sampler, seed)
}

/// Fits one dataset: sampling, estimates, intervals and asymptotic summaries.
/// `full` adds the mode-type estimators and the normality surrogate.
pub fn fit_dataset(
    cfg: &ExperimentConfig,
    divergence: DivergenceSpec,
    data: &Dataset,
    seed: u64,
    full: bool,
) -> Result<FitOutcome> {
    let post = build_posterior(cfg, divergence, data)?;
    let chains = sample_posterior(cfg, &post, seed)?;
    let pooled = ChainDraws::pool(&chains)?;
    let est = estimate(&pooled, cfg.estimator.loss)?;
    let diag = diagnostics_multi(&chains)?;
    let d = cfg.model.dim();
    let ci = (0..d)
        .map(|j| credible_interval(&pooled, &|a: &[f64]| a[j], cfg.estimator.ci_epsilon))
        .collect::<Result<Vec<_>>>()?;
    let covered = ci.iter().zip(&cfg.theta0.0).map(|((lo, hi), t)| lo <= t && t <= hi).collect();
    let asymptotic = asymptotic_report(post.criterion(), data, &cfg.theta0, &est.point)?;
    let (normality, pm, ppm, mle) = if full || cfg.estimator.modes {
        let s: nalgebra::DMatrix<f64> = (&asymptotic.s).into();
        let normality = posterior_normality_check(&pooled, data.len(), &s, &asymptotic.delta_n).ok();
        let opt = OptimizerConfig { seed: split(seed, 0xfeed), ..OptimizerConfig::default() };
        (
            normality,
            Some(posterior_mode(&post, &opt)?),
            Some(posterior_mode_of_phi_posterior(&post, &opt)?),
            Some(dual_mle(post.criterion(), data, &opt)?),
        )
    } else {
        (None, None, None, None)
    };
    Ok(FitOutcome {
        gamma: divergence.gamma,
        escort: post.escort().clone(),
        estimate: est,
        ci,
        covered,
        diagnostics: diag,
        asymptotic,
        normality,
        posterior_mode: pm,
        phi_posterior_mode: ppm,
        dual_mle: mle,
        infinite_evaluations: post.infinite_evaluations(),
        chains,
    })
}

/// Seed of replication `r`'s data.
pub fn data_seed(master: u64, replication: usize) -> u64 {
    split(master, replication as u64)
}

/// Seed of the chains for replication `r`, divergence `g`, contamination level `e`.
pub fn chain_seed(master: u64, replication: usize, g: usize, e: usize) -> u64 {
    split(split(split(data_seed(master, replication), 1 + g as u64), 1 + e as u64), 0xc4a1)
}

/// One replication of a Monte Carlo study; errors are kept in the row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub gamma: f64,
    pub contamination: f64,
    pub error: Option<String>,
    pub fit: Option<FitOutcome>,
}

/// Runs replication `r` for divergence index `g` and contamination index `e`.
pub fn run_replication(cfg: &ExperimentConfig, r: usize, g: usize, e: usize) -> ReplicationRow {
    let gamma = cfg.divergences[g];
    let eps = cfg.contamination_fractions[e];
    let seed = data_seed(cfg.master_seed, r);
    let result = simulate_contaminated(&cfg.model, &cfg.theta0, cfg.n, eps, cfg.contaminant.as_ref(), seed)
        .and_then(|data| fit_dataset(cfg, gamma, &data, chain_seed(cfg.master_seed, r, g, e), false));
    let (error, fit) = match result {
        Ok(f) => (None, Some(f)),
        Err(err) => {
            log::warn!("replication {r} (γ={}, ε={eps}) failed: {err}", gamma.gamma);
            (Some(err.to_string()), None)
        }
    };
    ReplicationRow { replication: r, seed, gamma: gamma.gamma, contamination: eps, error, fit }
}

/// Aggregates over the replications of one (γ, ε) cell, per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub gamma: f64,
    pub contamination: f64,
    pub replications: usize,
    pub failures: usize,
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    pub rmse: Vec<f64>,
    pub coverage: Vec<f64>,
    pub standardized_mean: Vec<f64>,
    pub standardized_var: Vec<f64>,
    pub standardized_ks: Vec<f64>,
    pub standardized_ks_pvalue: Vec<f64>,
    pub mean_acceptance: f64,
    pub mean_ess: Vec<f64>,
}

pub fn summarize(rows: &[ReplicationRow], theta0: &ParamVector) -> GroupSummary {
    let d = theta0.dim();
    let fits: Vec<&FitOutcome> = rows.iter().filter_map(|r| r.fit.as_ref()).collect();
    let per = |f: &dyn Fn(&FitOutcome) -> f64| -> Vec<f64> { fits.iter().map(|x| f(x)).collect() };
    let mut out = GroupSummary {
        gamma: rows.first().map_or(f64::NAN, |r| r.gamma),
        contamination: rows.first().map_or(f64::NAN, |r| r.contamination),
        replications: rows.len(),
        failures: rows.len() - fits.len(),
        bias: vec![],
        sd: vec![],
        rmse: vec![],
        coverage: vec![],
        standardized_mean: vec![],
        standardized_var: vec![],
        standardized_ks: vec![],
        standardized_ks_pvalue: vec![],
        mean_acceptance: stats::mean(&per(&|f| f.estimate.acceptance_rate)),
        mean_ess: vec![],
    };
    for j in 0..d {
        let est = per(&|f| f.estimate.point[j]);
        let err: Vec<f64> = est.iter().map(|x| x - theta0.0[j]).collect();
        out.bias.push(stats::mean(&err));
        out.sd.push(if est.len() > 1 { stats::std_dev(&est) } else { f64::NAN });
        out.rmse.push(stats::mean(&err.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt());
        out.coverage.push(stats::mean(&per(&|f| f64::from(u8::from(f.covered[j])))));
        let z = per(&|f| f.asymptotic.standardized[j]);
        out.standardized_mean.push(stats::mean(&z));
        out.standardized_var.push(if z.len() > 1 { stats::variance(&z) } else { f64::NAN });
        let ks = stats::ks_statistic(&z, stats::normal_cdf);
        out.standardized_ks.push(ks);
        out.standardized_ks_pvalue.push(stats::ks_pvalue(ks, z.len() as f64));
        out.mean_ess.push(stats::mean(&per(&|f| f.estimate.ess[j])));
    }
    out
}

/// Options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for replications; `None` uses rayon's default.
    pub jobs: Option<usize>,
    pub gnuplot: bool,
}

/// Where a run wrote its files and how many replications failed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub rows: usize,
    pub failures: usize,
    pub summary: serde_json::Value,
}

fn with_pool<T: Send>(opts: &RunOptions, f: impl FnOnce() -> T + Send) -> Result<T> {
    match opts.jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the configured study (a single fit for [`StudyKind::SingleFit`]).
pub fn run_study(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.study {
        StudyKind::SingleFit => run_single_fit(cfg, opts),
        StudyKind::MonteCarloNormality | StudyKind::RobustnessSweep => run_replications(cfg, opts),
        StudyKind::DualitySanity => run_duality(cfg, opts),
        StudyKind::SequentialUpdate => run_sequential(cfg, opts),
    }
}

fn load_or_simulate(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data_path {
        Some(p) => {
            let data = Dataset::read_csv(p)?;
            cfg.model.check_dataset(&data)?;
            Ok(data)
        }
        None => simulate_contaminated(
            &cfg.model,
            &cfg.theta0,
            cfg.n,
            cfg.contamination_fractions[0],
            cfg.contaminant.as_ref(),
            data_seed(cfg.master_seed, 0),
        ),
    }
}

/// One dataset, every configured divergence; chains are always written.
pub fn run_single_fit(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = load_or_simulate(cfg)?;
    let fits: Vec<FitOutcome> = with_pool(opts, || {
        cfg.divergences
            .iter()
            .enumerate()
            .map(|(g, div)| fit_dataset(cfg, *div, &data, chain_seed(cfg.master_seed, 0, g, 0), true))
            .collect::<Result<Vec<_>>>()
    })??;
    let run = output::RunDir::create(cfg, StudyKind::SingleFit)?;
    let rows: Vec<ReplicationRow> = fits
        .iter()
        .map(|f| ReplicationRow {
            replication: 0,
            seed: data_seed(cfg.master_seed, 0),
            gamma: f.gamma,
            contamination: cfg.contamination_fractions[0],
            error: None,
            fit: Some(f.clone()),
        })
        .collect();
    run.write_table("rows.csv", &output::replication_table(&rows, cfg.model.dim()))?;
    for f in &fits {
        run.write_chains(f, "fit", cfg)?;
    }
    data.write_csv(run.dir.join("data.csv"))?;
    let summary = serde_json::json!({
        "study": StudyKind::SingleFit.name(),
        "config_hash": cfg.config_hash(),
        "config": cfg,
        "n": data.len(),
        "fits": fits,
    });
    run.write_json("summary.json", &summary)?;
    if opts.gnuplot {
        write_gnuplot_stub(&run.dir, StudyKind::SingleFit)?;
    }
    Ok(RunOutcome { dir: run.dir, rows: rows.len(), failures: 0, summary })
}

fn run_replications(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let cells: Vec<(usize, usize, usize)> = (0..cfg.divergences.len())
        .flat_map(|g| {
            (0..cfg.contamination_fractions.len()).flat_map(move |e| (0..cfg.replications).map(move |r| (g, e, r)))
        })
        .collect();
    let rows: Vec<ReplicationRow> = with_pool(opts, || {
        use rayon::prelude::*;
        cells.par_iter().map(|&(g, e, r)| run_replication(cfg, r, g, e)).collect()
    })?;
    let groups: Vec<GroupSummary> =
        rows.chunks(cfg.replications).map(|chunk| summarize(chunk, &cfg.theta0)).collect();
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    let run = output::RunDir::create(cfg, cfg.study)?;
    run.write_table("rows.csv", &output::replication_table(&rows, cfg.model.dim()))?;
    if cfg.mcmc.save_chains {
        for row in &rows {
            if let Some(f) = &row.fit {
                run.write_chains(f, &format!("rep{:04}_eps{}", row.replication, row.contamination), cfg)?;
            }
        }
    }
    let summary = serde_json::json!({
        "study": cfg.study.name(),
        "config_hash": cfg.config_hash(),
        "config": cfg,
        "failures": failures,
        "groups": groups,
    });
    run.write_json("summary.json", &summary)?;
    if opts.gnuplot {
        write_gnuplot_stub(&run.dir, cfg.study)?;
    }
    Ok(RunOutcome { dir: run.dir, rows: rows.len(), failures, summary })
}

/// One `dual_sup_check` per (γ, θ) pair at α₀ = θ₀.
pub fn duality_checks(cfg: &ExperimentConfig) -> Vec<(f64, ParamVector, Result<DualSupCheck>)> {
    use rayon::prelude::*;
    let pairs: Vec<(DivergenceSpec, ParamVector)> = cfg
        .divergences
        .iter()
        .flat_map(|g| cfg.duality_thetas.iter().map(move |t| (*g, t.clone())))
        .collect();
    pairs
        .into_par_iter()
        .map(|(g, theta)| {
            let res = DualCriterion::with_quadrature(cfg.model.clone(), g, theta.clone(), cfg.quadrature)
                .and_then(|c| c.dual_sup_check(&theta, &cfg.theta0, &OptimizerConfig::default()));
            (g.gamma, theta, res)
        })
        .collect()
}

fn run_duality(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let checks = with_pool(opts, || duality_checks(cfg))?;
    let d = cfg.model.dim();
    let mut header = vec!["gamma".to_string()];
    header.extend((1..=d).map(|j| format!("theta_{j}")));
    header.extend(["sup_value".into(), "divergence".into(), "gap".into()]);
    header.extend((1..=d).map(|j| format!("argmax_{j}")));
    header.push("error".into());
    let mut table = Table::new(header);
    let mut failures = 0;
    let mut records = Vec::new();
    for (g, theta, res) in &checks {
        let mut rec = vec![output::num(*g)];
        rec.extend(theta.0.iter().map(|v| output::num(*v)));
        match res {
            Ok(c) => {
                rec.extend([output::num(c.sup_value), output::num(c.divergence), output::num(c.gap)]);
                rec.extend(c.argmax.0.iter().map(|v| output::num(*v)));
                rec.push(String::new());
                records.push(serde_json::json!({"gamma": g, "theta": theta, "check": c}));
            }
            Err(e) => {
                failures += 1;
                rec.extend(std::iter::repeat_n(String::new(), 3 + d));
                rec.push(e.to_string());
                records.push(serde_json::json!({"gamma": g, "theta": theta, "error": e.to_string()}));
            }
        }
        table.push(rec);
    }
    let run = output::RunDir::create(cfg, StudyKind::DualitySanity)?;
    run.write_table("rows.csv", &table)?;
    let summary = serde_json::json!({
        "study": StudyKind::DualitySanity.name(),
        "config_hash": cfg.config_hash(),
        "config": cfg,
        "failures": failures,
        "checks": records,
    });
    run.write_json("summary.json", &summary)?;
    Ok(RunOutcome { dir: run.dir, rows: checks.len(), failures, summary })
}

/// Comparison of a full-data posterior with one built sequentially.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialCheck {
    pub gamma: f64,
    pub n_first: usize,
    pub n_second: usize,
    /// Largest deviation of the pairwise log-density differences from their mean.
    pub max_offset_spread: f64,
    pub full_mean: Vec<f64>,
    pub sequential_mean: Vec<f64>,
    pub combined_mc_se: Vec<f64>,
    pub means_agree: bool,
}

/// Checks that a sequentially built posterior matches the full-data one.
pub fn sequential_check(
    cfg: &ExperimentConfig,
    divergence: DivergenceSpec,
    data: &Dataset,
    seed: u64,
) -> Result<SequentialCheck> {
    let k = ((data.len() as f64) * cfg.sequential_split).round() as usize;
    let k = k.clamp(1, data.len() - 1);
    let (first, second) = data.split_at(k)?;
    // The escort is resolved once from the full data and shared by both builds.
    let escort = cfg.escort.resolve(&cfg.model, data)?;
    let criterion = DualCriterion::with_quadrature(cfg.model.clone(), divergence, escort, cfg.quadrature)?;
    let full = PhiPosterior::new(criterion.clone(), data.clone(), cfg.prior.clone())?;
    let seq = PhiPosterior::new(criterion, first, cfg.prior.clone())?.sequential_update(second.observations())?;

    let mut rng = crate::seed::rng(split(seed, 1));
    let sd: Vec<f64> = cfg.model.unit_information_scale(full.escort()).iter().map(|s| s / (data.len() as f64).sqrt()).collect();
    let mut offsets = Vec::with_capacity(100);
    while offsets.len() < 100 {
        let a: Vec<f64> =
            full.escort().0.iter().zip(&sd).map(|(c, s)| c + 3.0 * s * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let (x, y) = (full.log_unnormalized(&a), seq.log_unnormalized(&a));
        if x.is_finite() && y.is_finite() {
            offsets.push(x - y);
        }
    }
    let centre = stats::mean(&offsets);
    let max_offset_spread = offsets.iter().map(|o| (o - centre).abs()).fold(0.0, f64::max);

    let full_chains = sample_posterior(cfg, &full, split(seed, 2))?;
    let seq_chains = sample_posterior(cfg, &seq, split(seed, 3))?;
    let a = estimate(&ChainDraws::pool(&full_chains)?, crate::estimators::LossSpec::SquaredError)?;
    let b = estimate(&ChainDraws::pool(&seq_chains)?, crate::estimators::LossSpec::SquaredError)?;
    let combined: Vec<f64> = a.mc_se.iter().zip(&b.mc_se).map(|(x, y)| x.hypot(*y)).collect();
    let means_agree = a.point.0.iter().zip(&b.point.0).zip(&combined).all(|((x, y), s)| (x - y).abs() <= 3.0 * s);
    Ok(SequentialCheck {
        gamma: divergence.gamma,
        n_first: k,
        n_second: data.len() - k,
        max_offset_spread,
        full_mean: a.point.0,
        sequential_mean: b.point.0,
        combined_mc_se: combined,
        means_agree,
    })
}

fn run_sequential(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let data = load_or_simulate(cfg)?;
    if data.len() < 2 {
        return Err(Error::Config("sequential update needs at least two observations".into()));
    }
    let checks: Vec<Result<SequentialCheck>> = with_pool(opts, || {
        cfg.divergences
            .iter()
            .enumerate()
            .map(|(g, div)| sequential_check(cfg, *div, &data, chain_seed(cfg.master_seed, 0, g, 0)))
            .collect()
    })?;
    let d = cfg.model.dim();
    let mut header: Vec<String> = ["gamma", "n_first", "n_second", "max_offset_spread", "means_agree"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for j in 1..=d {
        header.extend([format!("full_mean_{j}"), format!("sequential_mean_{j}"), format!("mc_se_{j}")]);
    }
    header.push("error".into());
    let mut table = Table::new(header);
    let mut failures = 0;
    let mut records = Vec::new();
    for (div, res) in cfg.divergences.iter().zip(&checks) {
        match res {
            Ok(c) => {
                let mut rec = vec![
                    output::num(c.gamma),
                    c.n_first.to_string(),
                    c.n_second.to_string(),
                    output::num(c.max_offset_spread),
                    c.means_agree.to_string(),
                ];
                for j in 0..d {
                    rec.extend([
                        output::num(c.full_mean[j]),
                        output::num(c.sequential_mean[j]),
                        output::num(c.combined_mc_se[j]),
                    ]);
                }
                rec.push(String::new());
                table.push(rec);
                records.push(serde_json::to_value(c)?);
            }
            Err(e) => {
                failures += 1;
                let mut rec = vec![output::num(div.gamma)];
                rec.extend(std::iter::repeat_n(String::new(), 4 + 3 * d));
                rec.push(e.to_string());
                table.push(rec);
                records.push(serde_json::json!({"gamma": div.gamma, "error": e.to_string()}));
            }
        }
    }
    let run = output::RunDir::create(cfg, StudyKind::SequentialUpdate)?;
    run.write_table("rows.csv", &table)?;
    let summary = serde_json::json!({
        "study": StudyKind::SequentialUpdate.name(),
        "config_hash": cfg.config_hash(),
        "config": cfg,
        "failures": failures,
        "checks": records,
    });
    run.write_json("summary.json", &summary)?;
    Ok(RunOutcome { dir: run.dir, rows: checks.len(), failures, summary })
}

/// Closed-form posterior mean for a Gaussian location model with known `sigma`
/// under a one-dimensional normal prior.
pub fn conjugate_normal_mean(data: &Dataset, prior: &PriorSpec, sigma: f64) -> Option<f64> {
    match prior {
        PriorSpec::Normal { mean, sd } if mean.len() == 1 => {
            let n = data.len() as f64;
            let prec = 1.0 / (sd[0] * sd[0]) + n / (sigma * sigma);
            Some((mean[0] / (sd[0] * sd[0]) + n * data.mean() / (sigma * sigma)) / prec)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
study = "monte-carlo-normality"
replications = 4
n = 40
master_seed = 3
[model]
family = "normal-location"
theta0 = 0.0
[divergence]
gamma = [0.0, 0.5]
[prior]
kind = "normal"
mean = 0.0
sd = 10.0
[mcmc]
steps = 6000
burn_in = 1000
"#,
        )
        .unwrap()
    }

    #[test]
    fn zero_contamination_is_plain_sampling() {
        let m = ModelSpec::normal_location(1.0).unwrap();
        let a = simulate_contaminated(&m, &0.5.into(), 200, 0.0, None, 9).unwrap();
        assert_eq!(a, m.sample(&0.5.into(), 200, 9).unwrap());
    }

    #[test]
    fn contamination_fraction_matches_binomial() {
        let m = ModelSpec::normal_location(1.0).unwrap();
        let c = Contaminant { model: ModelSpec::normal_location_scale(), theta: vec![10.0, 0.1].into() };
        let data = simulate_contaminated(&m, &0.0.into(), 10_000, 0.1, Some(&c), 4).unwrap();
        let frac = data.observations().iter().filter(|x| **x > 5.0).count() as f64 / 1e4;
        assert!((frac - 0.1).abs() < 0.012, "{frac}");
        assert!(simulate_contaminated(&m, &0.0.into(), 10, 0.49, Some(&c), 4).is_ok());
        assert!(simulate_contaminated(&m, &0.0.into(), 10, 0.5, Some(&c), 4).is_err());
    }

    #[test]
    fn contaminant_support_mismatch() {
        let m = ModelSpec::exponential();
        let c = Contaminant { model: ModelSpec::normal_location_scale(), theta: vec![10.0, 0.1].into() };
        assert!(simulate_contaminated(&m, &1.0.into(), 10, 0.1, Some(&c), 4).is_err());
    }

    #[test]
    fn replication_depends_only_on_seed_and_index() {
        let cfg = small_cfg();
        let a = run_replication(&cfg, 2, 1, 0);
        let b = run_replication(&cfg.clone().with_output_dir("/tmp/x"), 2, 1, 0);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.error.is_none());
    }

    #[test]
    fn study_writes_rows_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg().with_output_dir(dir.path());
        let out = run_study(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(out.rows, 8);
        assert_eq!(out.failures, 0);
        let rows = std::fs::read_to_string(out.dir.join("rows.csv")).unwrap();
        assert_eq!(rows.lines().count(), 9);
        assert!(out.dir.join("summary.json").exists());
        assert!(out.dir.starts_with(dir.path().join("monte-carlo-normality")));
    }

    #[test]
    fn sequential_and_duality_studies_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg().with_output_dir(dir.path()).with_study(StudyKind::SequentialUpdate);
        let out = run_study(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(out.failures, 0);
        let checks = out.summary["checks"].as_array().unwrap();
        assert!(checks.iter().all(|c| c["max_offset_spread"].as_f64().unwrap() < 1e-10));
        let cfg = cfg.with_study(StudyKind::DualitySanity);
        let out = run_study(&cfg, &RunOptions::default()).unwrap();
        assert_eq!((out.rows, out.failures), (6, 0));
    }
}
