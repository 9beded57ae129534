//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use phibayes::estimators::{credible_interval, estimate};
use phibayes::experiment::{fit_dataset, run_replication, run_study, sequential_check, summarize};
use phibayes::mcmc::{diagnostics, run_chain};
use phibayes::*;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn nl() -> ModelSpec {
    ModelSpec::normal_location(1.0).unwrap()
}

const GAMMAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

fn conjugate_config(replications: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
study = "monte-carlo-normality"
replications = {replications}
n = 50
master_seed = {seed}
[model]
family = "normal-location"
sigma = 1.0
theta0 = 0.0
[divergence]
gamma = 0.0
[prior]
kind = "normal"
mean = 0.0
sd = 10.0
[escort]
mode = "plugin-median"
"#
    ))
    .unwrap()
}

fn duality_oracle() -> Outcome {
    let opt = OptimizerConfig::default();
    let mut worst_gap = 0.0f64;
    let mut worst_arg = 0.0f64;
    let mut worst_closed = 0.0f64;
    for theta in [0.25, 0.5, 1.0] {
        for g in GAMMAS {
            let c = DualCriterion::new(nl(), DivergenceSpec::new(g).unwrap(), theta.into()).unwrap();
            let r = c.dual_sup_check(&theta.into(), &0.0.into(), &opt).unwrap();
            worst_gap = worst_gap.max(r.gap);
            worst_arg = worst_arg.max(r.argmax[0].abs());
            let closed = match g {
                1.0 => Some(theta * theta / 2.0),
                2.0 => Some(((theta * theta).exp() - 1.0) / 2.0),
                _ => None,
            };
            if let Some(v) = closed {
                worst_closed = worst_closed.max((r.sup_value - v).abs());
            }
        }
    }
    check(
        worst_gap < 1e-6 && worst_arg < 1e-4 && worst_closed < 1e-6,
        format!("max gap {worst_gap:.2e}, max |argmax − θ₀| {worst_arg:.2e}, max closed-form error {worst_closed:.2e}"),
    )
}

fn conjugate_mean(data: &Dataset) -> f64 {
    let prec = 1.0 / 100.0 + data.len() as f64;
    data.len() as f64 * data.mean() / prec
}

fn eap_recovery() -> Outcome {
    let mut ok = true;
    let mut worst_z = 0.0f64;
    let mut worst_se = 0.0f64;
    for seed in 1..=5u64 {
        let data = nl().sample(&0.0.into(), 50, seed).unwrap();
        let c = DualCriterion::new(nl(), DivergenceSpec::kl_m(), data.median().into()).unwrap();
        let post = PhiPosterior::new(c, data.clone(), PriorSpec::normal(vec![0.0], vec![10.0]).unwrap()).unwrap();
        let cfg = SamplerConfig::with_crude_scale(&[1.0 / 50f64.sqrt()]);
        let chain = run_chain(&|a: &[f64]| post.log_unnormalized(a), post.escort(), &cfg, seed).unwrap();
        assert_eq!(chain.len(), 50_000);
        let r = estimate(&chain, LossSpec::SquaredError).unwrap();
        let z = (r.point[0] - conjugate_mean(&data)).abs() / r.mc_se[0];
        worst_z = worst_z.max(z);
        worst_se = worst_se.max(r.mc_se[0]);
        ok &= z < 3.0 && r.mc_se[0] < 0.01;
    }
    check(ok, format!("max |mean − exact|/mc_se {worst_z:.2}, max mc_se {worst_se:.4}"))
}

fn theorem2_normality() -> Outcome {
    let base = ExperimentConfig::from_toml_str(
        r#"
study = "monte-carlo-normality"
replications = 200
n = 500
master_seed = 2024
[model]
family = "normal-location"
sigma = 1.0
theta0 = 0.0
[divergence]
gamma = [0.0, 0.5]
[prior]
kind = "normal"
mean = 0.0
sd = 10.0
[escort]
mode = "plugin-median"
"#,
    )
    .unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for g in 0..2 {
        let rows: Vec<_> = {
            use rayon::prelude::*;
            (0..base.replications).into_par_iter().map(|r| run_replication(&base, r, g, 0)).collect()
        };
        let s = summarize(&rows, &base.theta0);
        let pass = s.failures == 0
            && s.standardized_mean[0].abs() < 0.15
            && (0.8..=1.2).contains(&s.standardized_var[0])
            && s.standardized_ks_pvalue[0] > 0.01;
        ok &= pass;
        parts.push(format!(
            "γ={}: mean {:+.3}, var {:.3}, KS p {:.3}, failures {}",
            base.divergences[g].gamma, s.standardized_mean[0], s.standardized_var[0], s.standardized_ks_pvalue[0], s.failures
        ));
    }
    check(ok, parts.join("; "))
}

fn sandwich_identity() -> Outcome {
    let families = [
        (nl(), ParamVector::scalar(0.3)),
        (ModelSpec::normal_location_scale(), ParamVector::new(vec![0.5, 1.5])),
        (ModelSpec::exponential(), ParamVector::scalar(2.0)),
    ];
    let mut worst = 0.0f64;
    for (m, t0) in &families {
        let fisher = m.fisher_information(t0).unwrap();
        for g in GAMMAS {
            let c = DualCriterion::new(m.clone(), DivergenceSpec::new(g).unwrap(), t0.clone()).unwrap();
            let s = asymptotics::compute_s(&c, t0, t0).unwrap().s;
            let v = asymptotics::compute_v(&c, t0, t0).unwrap().v;
            let sw = asymptotics::sandwich(&s, &v).unwrap();
            worst = worst.max((sw - &fisher).norm() / fisher.norm());
        }
    }
    check(worst < 1e-3, format!("max ‖SᵀV⁻¹S − I‖/‖I‖ {worst:.2e}"))
}

fn theorem1_surrogate() -> Outcome {
    let mut cfg = conjugate_config(1, 77);
    cfg.n = 1000;
    cfg.divergences = vec![DivergenceSpec::new(0.5).unwrap()];
    cfg.mcmc.chains = 4;
    let data = simulate_data(&cfg);
    let fit = fit_dataset(&cfg, cfg.divergences[0], &data, 991, true).unwrap();
    let n = fit.normality.unwrap();
    let ok = n.cov_rel_err < 0.15 && n.ks_pvalues.iter().all(|p| *p > 0.01);
    check(
        ok,
        format!("cov rel err {:.3}, KS D {:.4}, KS p {:.3} (ESS {:.0})", n.cov_rel_err, n.ks_stats[0], n.ks_pvalues[0], n.ess[0]),
    )
}

fn simulate_data(cfg: &ExperimentConfig) -> Dataset {
    experiment::simulate_contaminated(&cfg.model, &cfg.theta0, cfg.n, 0.0, None, experiment::data_seed(cfg.master_seed, 0))
        .unwrap()
}

fn sequential_update() -> Outcome {
    let mut cfg = conjugate_config(1, 5);
    cfg.n = 100;
    let data = simulate_data(&cfg);
    let mut ok = true;
    let mut parts = Vec::new();
    for g in [0.0, 0.5, 2.0] {
        let c = sequential_check(&cfg, DivergenceSpec::new(g).unwrap(), &data, 31).unwrap();
        ok &= c.max_offset_spread < 1e-10 && c.means_agree;
        parts.push(format!(
            "γ={g}: offset spread {:.1e}, |Δmean| {:.4} vs 3·se {:.4}",
            c.max_offset_spread,
            (c.full_mean[0] - c.sequential_mean[0]).abs(),
            3.0 * c.combined_mc_se[0]
        ));
    }
    check(ok, parts.join("; "))
}

fn coverage() -> Outcome {
    let cfg = conjugate_config(300, 4242);
    let rows: Vec<_> = {
        use rayon::prelude::*;
        (0..300).into_par_iter().map(|r| run_replication(&cfg, r, 0, 0)).collect()
    };
    let s = summarize(&rows, &cfg.theta0);
    let cov = s.coverage[0];
    check(s.failures == 0 && (0.91..=0.985).contains(&cov), format!("coverage {cov:.3} over {} replications", rows.len()))
}

fn determinism() -> Outcome {
    let mut cfg = conjugate_config(3, 99);
    cfg.divergences = vec![DivergenceSpec::kl_m(), DivergenceSpec::new(0.5).unwrap()];
    cfg.mcmc.steps = 8000;
    cfg.mcmc.burn_in = 2000;
    let mut same = true;
    for study in [StudyKind::MonteCarloNormality, StudyKind::SingleFit] {
        let cfg = cfg.clone().with_study(study);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_study(&cfg.clone().with_output_dir(a.path()), &RunOptions::default()).unwrap();
        let rb = run_study(&cfg.clone().with_output_dir(b.path()), &RunOptions { jobs: Some(1), gnuplot: false }).unwrap();
        for f in ["rows.csv", "summary.json"] {
            same &= std::fs::read(ra.dir.join(f)).unwrap() == std::fs::read(rb.dir.join(f)).unwrap();
        }
    }
    check(same, "rows.csv and summary.json byte-identical across runs (Monte Carlo and single-fit)")
}

fn invariant_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = phibayes::seed::rng(12345);
    // Convexity and φ(1) = 0.
    for _ in 0..2000 {
        let g = rng.random_range(-2.0..3.0);
        let d = DivergenceSpec::new(g).unwrap();
        let (x, y, t) = (rng.random_range(0.01..20.0), rng.random_range(0.01..20.0), rng.random_range(0.0..1.0));
        let lhs = d.phi(t * x + (1.0 - t) * y).unwrap();
        let rhs = t * d.phi(x).unwrap() + (1.0 - t) * d.phi(y).unwrap();
        if lhs > rhs + 1e-10 * (1.0 + rhs.abs()) || d.phi(1.0).unwrap() != 0.0 {
            failures.push(format!("convexity γ={g}"));
            break;
        }
    }
    // h(θ, θ, x) = 0.
    for (m, theta) in [
        (nl(), ParamVector::scalar(0.4)),
        (ModelSpec::normal_location_scale(), ParamVector::new(vec![0.1, 2.0])),
        (ModelSpec::exponential(), ParamVector::scalar(1.5)),
    ] {
        for g in GAMMAS {
            let c = DualCriterion::new(m.clone(), DivergenceSpec::new(g).unwrap(), theta.clone()).unwrap();
            let x = if m.support() == Support::PositiveHalfLine { 0.7 } else { -1.3 };
            if c.h(&theta, &theta, x).unwrap() != 0.0 {
                failures.push(format!("h(θ,θ,x) ≠ 0 for {} γ={g}", m.family_name()));
            }
        }
    }
    // Finite-difference derivatives of φ.
    for g in [-1.0, 0.0, 0.5, 1.0, 2.0] {
        let d = DivergenceSpec::new(g).unwrap();
        for x in [0.3, 1.0, 2.5] {
            let h = 1e-5 * x;
            let fd1 = (d.phi(x + h).unwrap() - d.phi(x - h).unwrap()) / (2.0 * h);
            let fd2 = (d.phi_prime(x + h).unwrap() - d.phi_prime(x - h).unwrap()) / (2.0 * h);
            if (fd1 - d.phi_prime(x).unwrap()).abs() > 1e-6 || (fd2 - d.phi_second(x).unwrap()).abs() > 1e-6 {
                failures.push(format!("derivatives γ={g} x={x}"));
            }
        }
    }
    // Quantile equivariance and the ESS oracle.
    let rows: Vec<Vec<f64>> = (0..2001).map(|_| vec![rng.sample(rand_distr::StandardNormal)]).collect();
    let chain = ChainDraws::from_rows(&rows, 0).unwrap();
    let (lo, hi) = credible_interval(&chain, &|a| a[0], 0.1).unwrap();
    let (elo, ehi) = credible_interval(&chain, &|a| a[0].exp(), 0.1).unwrap();
    if elo != lo.exp() || ehi != hi.exp() {
        failures.push("quantile equivariance".into());
    }
    let ess = diagnostics(&chain).unwrap().ess[0];
    if (ess / 2001.0 - 1.0).abs() > 0.1 {
        failures.push(format!("ESS oracle {ess:.0}"));
    }
    // S symmetric before symmetrisation.
    let m = ModelSpec::normal_location_scale();
    let t0 = ParamVector::new(vec![0.0, 1.0]);
    let c = DualCriterion::new(m, DivergenceSpec::new(0.5).unwrap(), vec![0.2, 1.1].into()).unwrap();
    let s = asymptotics::compute_s(&c, &vec![0.2, 1.1].into(), &t0).unwrap();
    if s.asymmetry > 1e-6 {
        failures.push(format!("S asymmetry {:.1e}", s.asymmetry));
    }
    let detail = if failures.is_empty() {
        "all invariant checks passed (unit suites run under cargo test --workspace)".to_string()
    } else {
        failures.join(", ")
    };
    check(failures.is_empty(), detail)
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 9] = [
        (1, "duality oracle", duality_oracle, Duration::from_secs(30)),
        (2, "EAP recovery", eap_recovery, Duration::from_secs(60)),
        (3, "asymptotic normality of the estimator", theorem2_normality, Duration::from_secs(900)),
        (4, "sandwich identity", sandwich_identity, Duration::from_secs(60)),
        (5, "posterior normality surrogate", theorem1_surrogate, Duration::from_secs(120)),
        (6, "sequential update", sequential_update, Duration::from_secs(300)),
        (7, "credible-interval coverage", coverage, Duration::from_secs(900)),
        (8, "determinism", determinism, Duration::from_secs(300)),
        (9, "invariant suites", invariant_suites, Duration::from_secs(300)),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            check(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = outcome.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id} [{name}]: {} ({}; {:.1} s, limit {} s{})",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
