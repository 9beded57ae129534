//! Experiment configuration: a TOML file whose tables give dotted keys such as
//! `mcmc.steps` or `prior.kind`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::estimators::LossSpec;
use crate::mcmc::SamplerConfig;
use crate::model::{Family, ModelSpec, ParamBox, ParamVector};
use crate::posterior::{EscortMode, PriorSpec};
use crate::quadrature::{QuadratureConfig, QuadratureScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    SingleFit,
    DualitySanity,
    MonteCarloNormality,
    RobustnessSweep,
    SequentialUpdate,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::SingleFit => "single-fit",
            StudyKind::DualitySanity => "duality-sanity",
            StudyKind::MonteCarloNormality => "monte-carlo-normality",
            StudyKind::RobustnessSweep => "robustness-sweep",
            StudyKind::SequentialUpdate => "sequential-update",
        }
    }
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        Ok(match key.as_str() {
            "singlefit" => StudyKind::SingleFit,
            "dualitysanity" => StudyKind::DualitySanity,
            "montecarlonormality" => StudyKind::MonteCarloNormality,
            "robustnesssweep" => StudyKind::RobustnessSweep,
            "sequentialupdate" => StudyKind::SequentialUpdate,
            _ => return Err(Error::Config(format!("unknown study '{s}'"))),
        })
    }
}

/// Sampler settings shared by every fit in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub adapt: bool,
    pub target_acceptance: f64,
    /// Fixed proposal standard deviations; derived from the data when absent.
    pub proposal_scale: Option<Vec<f64>>,
    pub save_chains: bool,
}

impl McmcSettings {
    /// Sampler configuration given a crude per-coordinate posterior scale.
    pub fn sampler(&self, crude_scale: &[f64]) -> SamplerConfig {
        let base = SamplerConfig::with_crude_scale(crude_scale);
        SamplerConfig {
            steps: self.steps,
            burn_in: self.burn_in,
            thin: self.thin,
            adapt: self.adapt,
            target_acceptance: self.target_acceptance,
            proposal_scale: self.proposal_scale.clone().unwrap_or(base.proposal_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contaminant {
    pub model: ModelSpec,
    pub theta: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub loss: LossSpec,
    pub ci_epsilon: f64,
    /// Also compute posterior modes and the dual estimator for every fit.
    pub modes: bool,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    pub model: ModelSpec,
    pub theta0: ParamVector,
    pub divergences: Vec<DivergenceSpec>,
    pub prior: PriorSpec,
    pub escort: EscortMode,
    pub mcmc: McmcSettings,
    pub quadrature: QuadratureConfig,
    pub replications: usize,
    pub n: usize,
    pub contamination_fractions: Vec<f64>,
    pub contaminant: Option<Contaminant>,
    pub estimator: EstimatorSettings,
    pub duality_thetas: Vec<ParamVector>,
    pub sequential_split: f64,
    pub data_path: Option<PathBuf>,
    pub master_seed: u64,
    /// Where run directories are created; not part of the hash.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = dir.into();
        self
    }

    pub fn with_gamma(mut self, gamma: DivergenceSpec) -> Self {
        self.divergences = vec![gamma];
        self
    }

    pub fn with_study(mut self, study: StudyKind) -> Self {
        self.study = study;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.check_param(&self.theta0).map_err(config_err)?;
        self.prior.validate(&self.model, Some(&self.theta0))?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.divergences.is_empty() {
            return Err(Error::Config("divergence.gamma is empty".into()));
        }
        if self.contamination_fractions.is_empty() {
            return Err(Error::Config("contamination.fraction is empty".into()));
        }
        for eps in &self.contamination_fractions {
            check_fraction(*eps)?;
            if *eps > 0.0 && self.contaminant.is_none() {
                return Err(Error::Config("contamination.fraction > 0 requires a contaminant".into()));
            }
        }
        if let Some(c) = &self.contaminant {
            check_contaminant(&self.model, c)?;
        }
        if self.mcmc.chains == 0 {
            return Err(Error::Config("mcmc.chains must be at least 1".into()));
        }
        self.mcmc.sampler(&vec![1.0; self.model.dim()]).validate(self.model.dim())?;
        self.quadrature.validate().map_err(config_err)?;
        if !(self.estimator.ci_epsilon > 0.0 && self.estimator.ci_epsilon < 1.0) {
            return Err(Error::Config("estimator.ci_epsilon must lie in (0, 1)".into()));
        }
        if let LossSpec::Quantile(t) = self.estimator.loss {
            LossSpec::quantile(t)?;
        }
        if let EscortMode::Fixed(v) = &self.escort {
            self.model.check_param(v).map_err(config_err)?;
        }
        for t in &self.duality_thetas {
            self.model.check_param(t).map_err(config_err)?;
        }
        if !(self.sequential_split > 0.0 && self.sequential_split < 1.0) {
            return Err(Error::Config("sequential.split must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_fraction(eps: f64) -> Result<()> {
    if (0.0..0.5).contains(&eps) {
        Ok(())
    } else {
        Err(Error::Config(format!("contamination fraction must lie in [0, 0.5), got {eps}")))
    }
}

pub(crate) fn check_contaminant(model: &ModelSpec, c: &Contaminant) -> Result<()> {
    c.model.check_param(&c.theta).map_err(config_err)?;
    if c.model.support() != model.support() {
        return Err(Error::Config(format!(
            "contaminant {} has a different support from model {}",
            c.model.family_name(),
            model.family_name()
        )));
    }
    Ok(())
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GammaValue {
    Number(f64),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GammaField {
    One(GammaValue),
    Many(Vec<GammaValue>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    study: Option<String>,
    replications: Option<usize>,
    n: Option<usize>,
    master_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    model: RawModel,
    divergence: RawDivergence,
    prior: Option<RawPrior>,
    escort: Option<RawEscort>,
    #[serde(default)]
    mcmc: RawMcmc,
    quadrature: Option<RawQuadrature>,
    #[serde(default)]
    contamination: RawContamination,
    #[serde(default)]
    estimator: RawEstimator,
    #[serde(default)]
    duality: RawDuality,
    #[serde(default)]
    sequential: RawSequential,
    #[serde(default)]
    data: RawData,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    family: String,
    sigma: Option<f64>,
    theta0: OneOrMany,
    lower: Option<OneOrMany>,
    upper: Option<OneOrMany>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDivergence {
    gamma: GammaField,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    kind: String,
    mean: Option<OneOrMany>,
    sd: Option<OneOrMany>,
    /// One `[lower, upper]` pair per coordinate.
    bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEscort {
    mode: String,
    value: Option<OneOrMany>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMcmc {
    steps: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    chains: Option<usize>,
    adapt: Option<bool>,
    target_acceptance: Option<f64>,
    proposal_scale: Option<OneOrMany>,
    save_chains: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadrature {
    scheme: String,
    order: Option<usize>,
    panels: Option<usize>,
    tol: Option<f64>,
    abs_tol: Option<f64>,
    rel_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContamination {
    fraction: Option<OneOrMany>,
    family: Option<String>,
    sigma: Option<f64>,
    theta: Option<OneOrMany>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    loss: Option<String>,
    tau: Option<f64>,
    ci_epsilon: Option<f64>,
    modes: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDuality {
    thetas: Option<Vec<OneOrMany>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequential {
    split: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    path: Option<PathBuf>,
}

fn family_from(name: &str, sigma: Option<f64>) -> Result<Family> {
    let key: String = name.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    Ok(match key.as_str() {
        "normallocation" => Family::NormalLocation { sigma: sigma.unwrap_or(1.0) },
        "normallocationscale" => Family::NormalLocationScale,
        "exponential" => Family::Exponential,
        _ => return Err(Error::Config(format!("unknown model family '{name}'"))),
    })
}

fn gamma_from(v: GammaValue) -> Result<DivergenceSpec> {
    match v {
        GammaValue::Number(g) => DivergenceSpec::new(g).map_err(config_err),
        GammaValue::Name(s) => s.parse::<DivergenceSpec>().map_err(config_err),
    }
}

impl RawConfig {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut model = ModelSpec::new(family_from(&self.model.family, self.model.sigma)?).map_err(config_err)?;
        if self.model.lower.is_some() || self.model.upper.is_some() {
            let lower = self.model.lower.map_or(model.param_space.lower.clone(), OneOrMany::into_vec);
            let upper = self.model.upper.map_or(model.param_space.upper.clone(), OneOrMany::into_vec);
            model = model.with_param_space(ParamBox::new(lower, upper).map_err(config_err)?).map_err(config_err)?;
        }
        let d = model.dim();
        let theta0 = ParamVector(self.model.theta0.into_vec());

        let divergences = match self.divergence.gamma {
            GammaField::One(v) => vec![gamma_from(v)?],
            GammaField::Many(vs) => vs.into_iter().map(gamma_from).collect::<Result<_>>()?,
        };

        let raw_prior = self.prior.ok_or_else(|| Error::Config("a proper prior block [prior] is required".into()))?;
        let prior = match raw_prior.kind.to_lowercase().as_str() {
            "normal" => {
                let mean = raw_prior.mean.ok_or_else(|| Error::Config("prior.mean is required".into()))?.into_vec();
                let sd = raw_prior.sd.ok_or_else(|| Error::Config("prior.sd is required".into()))?.into_vec();
                PriorSpec::normal(mean, sd)?
            }
            "uniform" | "uniformbox" | "uniform-box" => {
                let bounds = raw_prior.bounds.ok_or_else(|| Error::Config("prior.bounds is required".into()))?;
                PriorSpec::uniform_box(bounds.iter().map(|b| b[0]).collect(), bounds.iter().map(|b| b[1]).collect())?
            }
            "flat" | "improper" => return Err(Error::Config("improper priors are not supported".into())),
            other => return Err(Error::Config(format!("unknown prior.kind '{other}'"))),
        };

        let escort = match self.escort {
            None => EscortMode::default_for(&model),
            Some(e) => match e.mode.to_lowercase().as_str() {
                "fixed" => EscortMode::Fixed(ParamVector(
                    e.value.ok_or_else(|| Error::Config("escort.value is required for mode fixed".into()))?.into_vec(),
                )),
                "plugin-median" => EscortMode::PluginMedian,
                "plugin-mle" => EscortMode::PluginMle,
                other => return Err(Error::Config(format!("unknown escort.mode '{other}'"))),
            },
        };

        let m = self.mcmc;
        let mcmc = McmcSettings {
            steps: m.steps.unwrap_or(60_000),
            burn_in: m.burn_in.unwrap_or(10_000),
            thin: m.thin.unwrap_or(1),
            chains: m.chains.unwrap_or(2),
            adapt: m.adapt.unwrap_or(true),
            target_acceptance: m.target_acceptance.unwrap_or(0.3),
            proposal_scale: m.proposal_scale.map(OneOrMany::into_vec),
            save_chains: m.save_chains.unwrap_or(false),
        };

        let mut quadrature = QuadratureConfig::default_for(model.support());
        if let Some(q) = self.quadrature {
            quadrature.scheme = match q.scheme.to_lowercase().as_str() {
                "gauss-hermite" => QuadratureScheme::GaussHermite { order: q.order.unwrap_or(64) },
                "gauss-legendre" => {
                    QuadratureScheme::GaussLegendreMapped { order: q.order.unwrap_or(16), panels: q.panels.unwrap_or(40) }
                }
                "adaptive" => QuadratureScheme::Adaptive { tol: q.tol.unwrap_or(1e-12) },
                other => return Err(Error::Config(format!("unknown quadrature.scheme '{other}'"))),
            };
            quadrature.abs_tol = q.abs_tol.unwrap_or(quadrature.abs_tol);
            quadrature.rel_tol = q.rel_tol.unwrap_or(quadrature.rel_tol);
        }

        let c = self.contamination;
        let contaminant = match c.family {
            None => None,
            Some(f) => Some(Contaminant {
                model: ModelSpec::new(family_from(&f, c.sigma)?).map_err(config_err)?,
                theta: ParamVector(
                    c.theta.ok_or_else(|| Error::Config("contamination.theta is required".into()))?.into_vec(),
                ),
            }),
        };

        let e = self.estimator;
        let loss = match e.loss.as_deref().map(str::to_lowercase).as_deref() {
            None | Some("squared") => LossSpec::SquaredError,
            Some("absolute") => LossSpec::AbsoluteError,
            Some("quantile") => {
                LossSpec::quantile(e.tau.ok_or_else(|| Error::Config("estimator.tau is required".into()))?)?
            }
            Some(other) => return Err(Error::Config(format!("unknown estimator.loss '{other}'"))),
        };

        let duality_thetas = match self.duality.thetas {
            Some(ts) => ts.into_iter().map(|t| ParamVector(t.into_vec())).collect(),
            None if d == 1 => [0.25, 0.5, 1.0].iter().map(|s| ParamVector(vec![theta0.0[0] + s])).collect(),
            None => vec![ParamVector(theta0.0.iter().map(|t| t + 0.25).collect())],
        };

        let study = match self.study {
            Some(s) => s.parse()?,
            None => StudyKind::SingleFit,
        };

        let cfg = ExperimentConfig {
            study,
            model,
            theta0,
            divergences,
            prior,
            escort,
            mcmc,
            quadrature,
            replications: self.replications.unwrap_or(1),
            n: self.n.unwrap_or(100),
            contamination_fractions: c.fraction.map_or(vec![0.0], OneOrMany::into_vec),
            contaminant,
            estimator: EstimatorSettings {
                loss,
                ci_epsilon: e.ci_epsilon.unwrap_or(0.05),
                modes: e.modes.unwrap_or(false),
            },
            duality_thetas,
            sequential_split: self.sequential.split.unwrap_or(0.6),
            data_path: self.data.path,
            master_seed: self.master_seed.unwrap_or(1),
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("output")),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
