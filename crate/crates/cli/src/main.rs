//! `phibayes` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phibayes::{DivergenceSpec, Error, ExperimentConfig, RunOptions, RunOutcome, StudyKind};
use serde_json::Value;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "phibayes", version, about = "Bayesian-type estimation through dual power divergences")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one dataset for every configured divergence.
    Fit(RunArgs),
    /// Run the study named in the configuration.
    Study(RunArgs),
    /// Compare the dual supremum with the directly computed divergence.
    DualityCheck(RunArgs),
    /// Parse and validate a configuration, printing its hash.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the version.
    Version,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications.
    #[arg(long, env = "PHIBAYES_JOBS")]
    jobs: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replaces the divergence list with a single γ (a number or KLm, KL, Hellinger, ChiSquared).
    #[arg(long)]
    gamma: Option<String>,
    /// Also write a gnuplot script next to the CSV output.
    #[arg(long)]
    gnuplot: bool,
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, RunOptions), Error> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &args.output {
        cfg = cfg.with_output_dir(dir);
    }
    if let Some(g) = &args.gamma {
        let spec: DivergenceSpec = g.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        cfg = cfg.with_gamma(spec);
    }
    cfg.validate()?;
    Ok((cfg, RunOptions { jobs: args.jobs, gnuplot: args.gnuplot }))
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn fmt(v: &Value) -> String {
    match v {
        Value::Number(n) => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e5) {
                format!("{x:.3e}")
            } else {
                format!("{x:.5}")
            }
        }
        Value::Null => "-".into(),
        Value::Array(a) => a.iter().map(fmt).collect::<Vec<_>>().join(","),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
    };
    println!("{}", line(header.to_vec()));
    for r in rows {
        println!("{}", line(r.iter().map(String::as_str).collect()));
    }
}

fn report_fit(summary: &Value) {
    let rows: Vec<Vec<String>> = summary["fits"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|f| {
            let est = &f["estimate"];
            vec![
                fmt(&f["gamma"]),
                fmt(&f["escort"]),
                fmt(&est["point"]),
                fmt(&est["mc_se"]),
                f["ci"].as_array().into_iter().flatten().map(|c| format!("[{}]", fmt(c))).collect::<Vec<_>>().join(" "),
                fmt(&est["ess"]),
                fmt(&est["acceptance_rate"]),
                fmt(&f["asymptotic"]["standardized"]),
            ]
        })
        .collect();
    print_table(&["gamma", "escort", "estimate", "mc_se", "ci", "ess", "accept", "standardized"], &rows);
}

fn report_groups(summary: &Value) {
    let rows: Vec<Vec<String>> = summary["groups"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|g| {
            ["gamma", "contamination", "bias", "sd", "rmse", "coverage", "standardized_mean", "standardized_var", "standardized_ks_pvalue", "failures"]
                .iter()
                .map(|k| fmt(&g[*k]))
                .collect()
        })
        .collect();
    print_table(&["gamma", "eps", "bias", "sd", "rmse", "coverage", "z_mean", "z_var", "ks_p", "failed"], &rows);
}

fn report_checks(summary: &Value) {
    let rows: Vec<Vec<String>> = summary["checks"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|c| match (&c["check"], &c["error"]) {
            (Value::Object(_), _) => vec![
                fmt(&c["gamma"]),
                fmt(&c["theta"]),
                fmt(&c["check"]["sup_value"]),
                fmt(&c["check"]["divergence"]),
                fmt(&c["check"]["gap"]),
                fmt(&c["check"]["argmax"]),
            ],
            (_, Value::String(e)) => vec![fmt(&c["gamma"]), fmt(&c["theta"]), e.clone(), "-".into(), "-".into(), "-".into()],
            _ => vec![
                fmt(&c["gamma"]),
                format!("{}+{}", c["n_first"], c["n_second"]),
                fmt(&c["max_offset_spread"]),
                fmt(&c["full_mean"]),
                fmt(&c["sequential_mean"]),
                fmt(&c["means_agree"]),
            ],
        })
        .collect();
    let header = if summary["study"] == "sequential-update" {
        ["gamma", "split", "spread", "full_mean", "seq_mean", "agree"]
    } else {
        ["gamma", "theta", "sup", "divergence", "gap", "argmax"]
    };
    print_table(&header, &rows);
}

fn finish(out: RunOutcome, quiet: bool) -> ExitCode {
    if !quiet {
        match out.summary["study"].as_str() {
            Some("single-fit") => report_fit(&out.summary),
            Some("duality-sanity") | Some("sequential-update") => report_checks(&out.summary),
            _ => report_groups(&out.summary),
        }
        println!("output: {}", out.dir.display());
    }
    if out.failures > 0 {
        eprintln!("{} of {} rows failed", out.failures, out.rows);
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Version => {
            println!("phibayes {}", env!("CARGO_PKG_VERSION"));
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::from_path(config)?;
            if !cli.quiet {
                println!("ok: study {} config_hash {}", cfg.study.name(), cfg.config_hash());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit(args) => {
            let (cfg, opts) = load(&args)?;
            Ok(finish(phibayes::experiment::run_single_fit(&cfg, &opts)?, cli.quiet))
        }
        Command::Study(args) => {
            let (cfg, opts) = load(&args)?;
            Ok(finish(phibayes::experiment::run_study(&cfg, &opts)?, cli.quiet))
        }
        Command::DualityCheck(args) => {
            let (cfg, opts) = load(&args)?;
            let cfg = cfg.with_study(StudyKind::DualitySanity);
            Ok(finish(phibayes::experiment::run_study(&cfg, &opts)?, cli.quiet))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
