//! Fixtures shared by the benchmarks.

use phibayes::{DivergenceSpec, DualCriterion, ModelSpec, ParamVector, PhiPosterior, PriorSpec};

/// φ-posterior for `n` standard normal observations with the escort at the truth.
pub fn location_posterior(gamma: f64, n: usize) -> PhiPosterior {
    let model = ModelSpec::normal_location(1.0).expect("valid sigma");
    let data = model.sample(&0.0.into(), n, 1).expect("sampling succeeds");
    let criterion =
        DualCriterion::new(model, DivergenceSpec::new(gamma).expect("finite gamma"), 0.0.into()).expect("valid escort");
    PhiPosterior::new(criterion, data, PriorSpec::normal(vec![0.0], vec![10.0]).expect("proper prior"))
        .expect("valid posterior")
}

/// Dual criterion for the normal location-scale family.
pub fn location_scale_criterion(gamma: f64) -> (DualCriterion, ParamVector) {
    let model = ModelSpec::normal_location_scale();
    let theta = ParamVector::new(vec![0.2, 1.3]);
    let c = DualCriterion::new(model, DivergenceSpec::new(gamma).expect("finite gamma"), theta.clone())
        .expect("valid escort");
    (c, theta)
}
