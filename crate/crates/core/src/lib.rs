//! Bayesian-type estimation through dual power divergences.
//!
//! The crate builds the dual criterion `h(θ, α, x)` of a Cressie–Read power
//! divergence for a parametric family, turns it into a generalised posterior
//! `exp{n P_n h(θ, α)} π(α)`, samples that posterior by random-walk Metropolis,
//! and summarises the draws with point estimates, credible intervals and
//! sandwich-type asymptotics.

pub mod asymptotics;
pub mod divergence;
pub mod dual;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod mcmc;
pub mod model;
pub mod optimize;
pub mod posterior;
pub mod quadrature;
pub mod seed;
pub mod stats;

pub use asymptotics::{AsymptoticReport, DenseMatrix, NormalityCheck};
pub use divergence::{DivergenceSpec, GrowthCheck};
pub use dual::{DualCriterion, DualSupCheck};
pub use error::{Error, Result};
pub use estimators::{EstimateReport, LossSpec, ModeEstimate};
pub use experiment::{ExperimentConfig, RunOptions, RunOutcome, StudyKind};
pub use mcmc::{ChainDraws, Diagnostics, SamplerConfig};
pub use model::{Dataset, Family, ModelSpec, ParamBox, ParamVector, Support};
pub use optimize::OptimizerConfig;
pub use posterior::{EscortMode, GridConfig, PhiPosterior, PriorSpec};
pub use quadrature::{QuadratureConfig, QuadratureScheme};
