//! Sandwich matrices `S` and `V`, the averaged criterion gradient `U_n`, the
//! centring point `Δ_n`, standardisation, and a posterior-normality check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dual::DualCriterion;
use crate::error::{Error, Result};
use crate::mcmc::{effective_sample_size, ChainDraws, MIN_DRAWS};
use crate::model::{Dataset, ParamVector};
use crate::optimize::{fd_gradient_richardson, fd_hessian_richardson};
use crate::stats;

/// Minimum eigenvalue of `S` accepted as invertible.
pub const S_MIN_EIGENVALUE: f64 = 1e-10;
const ROOT_FLOOR: f64 = 1e-12;

/// Row-major matrix with explicit dimensions, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for DenseMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl From<&DenseMatrix> for DMatrix<f64> {
    fn from(m: &DenseMatrix) -> Self {
        DMatrix::from_row_slice(m.rows, m.cols, &m.data)
    }
}

/// `S` together with how asymmetric the raw finite-difference Hessian was.
#[derive(Debug, Clone, PartialEq)]
pub struct SMatrix {
    pub s: DMatrix<f64>,
    /// `max |M − Mᵀ| / max |M|` before symmetrisation.
    pub asymmetry: f64,
    pub positive_definite: bool,
}

/// `V` with the amount removed by eigenvalue clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct VMatrix {
    pub v: DMatrix<f64>,
    pub clipped: f64,
}

fn hessian_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|c| 1e-3 * (1.0 + c.abs())).collect()
}

fn gradient_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|c| 1e-4 * (1.0 + c.abs())).collect()
}

/// `S = −E_θ₀[∂²_α h(θ, α, X)]` at `α = θ₀`.
pub fn compute_s(criterion: &DualCriterion, theta: &ParamVector, theta0: &ParamVector) -> Result<SMatrix> {
    let model = criterion.model();
    model.check_param(theta)?;
    model.check_param(theta0)?;
    let d = model.dim();
    let first_error = std::cell::RefCell::new(None);
    let f = |a: &[f64]| match criterion.population_criterion_raw(&theta.0, a, &theta0.0) {
        Ok(v) => v,
        Err(e) => {
            first_error.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let hess = fd_hessian_richardson(&f, &theta0.0, &hessian_steps(&theta0.0));
    if let Some(e) = first_error.into_inner() {
        return Err(e);
    }
    let m = -DMatrix::from_row_slice(d, d, &hess);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (&m - m.transpose()).amax() / scale;
    let s = (&m + m.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(s.clone()).eigenvalues.min();
    let positive_definite = min_eig > 0.0;
    if !positive_definite {
        log::warn!("S is not positive definite (min eigenvalue {min_eig:e})");
    }
    Ok(SMatrix { s, asymmetry, positive_definite })
}

/// Gradient in α of `h(θ, α, x)` by Richardson-extrapolated central differences,
/// with the inner integrals evaluated once per perturbed α.
struct HGradient {
    steps: Vec<f64>,
    /// Inner integrals at α ± h eⱼ and α ± h/2 eⱼ, as `[+h, −h, +h/2, −h/2]`.
    inner: Vec<[f64; 4]>,
    alphas: Vec<[Vec<f64>; 4]>,
}

impl HGradient {
    fn new(criterion: &DualCriterion, theta: &[f64], alpha: &[f64]) -> Result<Self> {
        let steps = gradient_steps(alpha);
        let mut inner = Vec::new();
        let mut alphas = Vec::new();
        for (j, h) in steps.iter().enumerate() {
            let pts: [Vec<f64>; 4] = [*h, -h, 0.5 * h, -0.5 * h].map(|dh| {
                let mut a = alpha.to_vec();
                a[j] += dh;
                a
            });
            let mut vals = [0.0; 4];
            for (v, a) in vals.iter_mut().zip(&pts) {
                *v = criterion.inner_integral_raw(theta, a, true)?;
            }
            inner.push(vals);
            alphas.push(pts);
        }
        Ok(Self { steps, inner, alphas })
    }

    fn eval(&self, criterion: &DualCriterion, theta: &[f64], x: f64, out: &mut [f64]) {
        let model = criterion.model();
        let div = criterion.divergence();
        for (j, o) in out.iter_mut().enumerate() {
            let hv: Vec<f64> = (0..4)
                .map(|k| {
                    let b = div.bracket_log(model.ln_ratio(theta, &self.alphas[j][k], x)).unwrap_or(f64::NAN);
                    self.inner[j][k] - b
                })
                .collect();
            let h = self.steps[j];
            let coarse = (hv[0] - hv[1]) / (2.0 * h);
            let fine = (hv[2] - hv[3]) / h;
            *o = (4.0 * fine - coarse) / 3.0;
        }
    }
}

/// `V = E_θ₀[∇_α h ∇_α hᵀ]` at `α = θ₀`, clipped to be positive semidefinite.
pub fn compute_v(criterion: &DualCriterion, theta: &ParamVector, theta0: &ParamVector) -> Result<VMatrix> {
    let model = criterion.model();
    model.check_param(theta)?;
    model.check_param(theta0)?;
    let d = model.dim();
    let grad = HGradient::new(criterion, &theta.0, &theta0.0)?;
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let th = &theta.0;
    let moments = criterion.quadrature().expect_many(
        model.support(),
        &|x| model.ln_pdf(&theta0.0, x),
        &|x, out: &mut [f64]| {
            let mut g = vec![0.0; d];
            grad.eval(criterion, th, x, &mut g);
            for (o, (i, j)) in out.iter_mut().zip(&pairs) {
                *o = g[*i] * g[*j];
            }
        },
        pairs.len(),
        criterion.hint(&theta0.0),
    )?;
    let mut v = DMatrix::zeros(d, d);
    for (m, (i, j)) in moments.iter().zip(&pairs) {
        v[(*i, *j)] = *m;
        v[(*j, *i)] = *m;
    }
    let eig = SymmetricEigen::new(v.clone());
    let clipped = eig.eigenvalues.iter().filter(|l| **l < 0.0).map(|l| -l).sum::<f64>();
    if clipped > 0.0 {
        if clipped > 1e-10 {
            log::warn!("V clipped to positive semidefinite (removed {clipped:e})");
        }
        let vals = eig.eigenvalues.map(|l| l.max(0.0));
        v = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    }
    Ok(VMatrix { v, clipped })
}

/// `U_n = P_n ∇_α h(θ, α, ·)` at `α = θ₀`.
pub fn u_n(criterion: &DualCriterion, data: &Dataset, theta: &ParamVector, theta0: &ParamVector) -> Result<Vec<f64>> {
    let model = criterion.model();
    model.check_param(theta)?;
    model.check_param(theta0)?;
    model.check_dataset(data)?;
    let n = data.len() as f64;
    let first_error = std::cell::RefCell::new(None);
    let f = |a: &[f64]| match criterion.sum_h(&theta.0, data, a) {
        Ok(v) => v / n,
        Err(e) => {
            first_error.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let g = fd_gradient_richardson(&f, &theta0.0, &gradient_steps(&theta0.0));
    match first_error.into_inner() {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

fn check_invertible(s: &DMatrix<f64>) -> Result<()> {
    let min = SymmetricEigen::new(s.clone()).eigenvalues.min();
    if min > S_MIN_EIGENVALUE {
        Ok(())
    } else {
        Err(Error::SingularS(min))
    }
}

/// `Δ_n = θ₀ + S⁻¹ U_n`.
pub fn delta_n(theta0: &ParamVector, s: &DMatrix<f64>, u: &[f64]) -> Result<ParamVector> {
    check_invertible(s)?;
    let step = s.clone().cholesky().ok_or(Error::SingularS(0.0))?.solve(&DVector::from_column_slice(u));
    Ok(ParamVector(theta0.0.iter().zip(step.iter()).map(|(a, b)| a + b).collect()))
}

/// Symmetric root `M^{−1/2}` with eigenvalues floored at 10⁻¹².
pub fn inverse_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|l| 1.0 / l.max(ROOT_FLOOR).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `V^{−1/2} S √n (α̂ − θ₀)`.
pub fn standardize(
    estimate: &ParamVector,
    n: usize,
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    theta0: &ParamVector,
) -> Result<Vec<f64>> {
    check_invertible(s)?;
    let diff = DVector::from_iterator(estimate.dim(), estimate.0.iter().zip(&theta0.0).map(|(a, b)| a - b));
    let z = inverse_sqrt(v) * s * diff * (n as f64).sqrt();
    Ok(z.iter().copied().collect())
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = (eig.min().abs(), eig.max().abs());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Covariance and Kolmogorov–Smirnov surrogates for the normal approximation
/// of `t = √n(α − Δ_n)` with covariance `S⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCheck {
    pub cov_rel_err: f64,
    pub ks_stats: Vec<f64>,
    /// KS p-values with the effective sample size standing in for the draw count.
    pub ks_pvalues: Vec<f64>,
    pub ess: Vec<f64>,
    pub note: String,
}

pub fn posterior_normality_check(
    chain: &ChainDraws,
    n: usize,
    s: &DMatrix<f64>,
    delta: &ParamVector,
) -> Result<NormalityCheck> {
    if chain.len() < MIN_DRAWS {
        return Err(Error::TooShort { len: chain.len(), min: MIN_DRAWS });
    }
    check_invertible(s)?;
    let d = chain.dim();
    let root_n = (n as f64).sqrt();
    let t: Vec<Vec<f64>> =
        (0..d).map(|j| chain.column(j).iter().map(|a| root_n * (a - delta.0[j])).collect()).collect();
    let means: Vec<f64> = t.iter().map(|c| stats::mean(c)).collect();
    let b = chain.len() as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] = t[i].iter().zip(&t[j]).map(|(x, y)| (x - means[i]) * (y - means[j])).sum::<f64>() / (b - 1.0);
        }
    }
    let s_inv = s.clone().try_inverse().ok_or(Error::SingularS(0.0))?;
    let cov_rel_err = (&cov - &s_inv).norm() / s_inv.norm();
    let mut ks_stats = Vec::new();
    let mut ks_pvalues = Vec::new();
    let mut ess = Vec::new();
    for (j, col) in t.iter().enumerate() {
        let sd = s_inv[(j, j)].sqrt();
        let dstat = stats::ks_statistic(col, |x| stats::normal_cdf(x / sd));
        let (e, _) = effective_sample_size(col);
        ks_stats.push(dstat);
        ks_pvalues.push(stats::ks_pvalue(dstat, e));
        ess.push(e);
    }
    Ok(NormalityCheck {
        cov_rel_err,
        ks_stats,
        ks_pvalues,
        ess,
        note: "L1 closeness approximated by covariance and per-coordinate KS surrogates".into(),
    })
}

/// Everything about the asymptotic behaviour of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub s: DenseMatrix,
    pub v: DenseMatrix,
    pub sandwich: DenseMatrix,
    pub u_n: Vec<f64>,
    pub delta_n: ParamVector,
    pub standardized: Vec<f64>,
    pub cond_s: f64,
    pub cond_v: f64,
    pub s_asymmetry: f64,
    pub v_clipped: f64,
}

/// `Sᵀ V⁻¹ S`.
pub fn sandwich(s: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let v_inv = v.clone().try_inverse().ok_or_else(|| Error::Domain("V is singular".into()))?;
    Ok(s.transpose() * v_inv * s)
}

/// S, V, U_n, Δ_n and the standardised estimate at the criterion's escort.
pub fn asymptotic_report(
    criterion: &DualCriterion,
    data: &Dataset,
    theta0: &ParamVector,
    estimate: &ParamVector,
) -> Result<AsymptoticReport> {
    let theta = criterion.escort();
    let s = compute_s(criterion, theta, theta0)?;
    let v = compute_v(criterion, theta, theta0)?;
    let u = u_n(criterion, data, theta, theta0)?;
    let delta = delta_n(theta0, &s.s, &u)?;
    let standardized = standardize(estimate, data.len(), &s.s, &v.v, theta0)?;
    Ok(AsymptoticReport {
        sandwich: (&sandwich(&s.s, &v.v)?).into(),
        cond_s: condition_number(&s.s),
        cond_v: condition_number(&v.v),
        s: (&s.s).into(),
        v: (&v.v).into(),
        u_n: u,
        delta_n: delta,
        standardized,
        s_asymmetry: s.asymmetry,
        v_clipped: v.clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceSpec;
    use crate::model::ModelSpec;
    use rand_distr::{Distribution, StandardNormal};

    const GAMMAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

    fn crit(m: &ModelSpec, g: f64, theta: &ParamVector) -> DualCriterion {
        DualCriterion::new(m.clone(), DivergenceSpec::new(g).unwrap(), theta.clone()).unwrap()
    }

    fn families() -> Vec<(ModelSpec, ParamVector)> {
        vec![
            (ModelSpec::normal_location(1.0).unwrap(), 0.3.into()),
            (ModelSpec::normal_location_scale(), vec![0.5, 1.5].into()),
            (ModelSpec::exponential(), 2.0.into()),
        ]
    }

    #[test]
    fn s_and_v_equal_fisher_at_truth() {
        for (m, t0) in families() {
            let fisher = m.fisher_information(&t0).unwrap();
            for g in GAMMAS {
                let c = crit(&m, g, &t0);
                let s = compute_s(&c, &t0, &t0).unwrap();
                let v = compute_v(&c, &t0, &t0).unwrap();
                let rel = |a: &DMatrix<f64>| (a - &fisher).norm() / fisher.norm();
                assert!(rel(&s.s) < 1e-4, "{} γ={g}: S={}", m.family_name(), s.s);
                assert!(rel(&v.v) < 1e-4, "{} γ={g}: V={}", m.family_name(), v.v);
                assert!(s.asymmetry < 1e-6);
                let sw = sandwich(&s.s, &v.v).unwrap();
                assert!(rel(&sw) < 1e-3);
            }
        }
    }

    #[test]
    fn v_differs_from_s_away_from_truth() {
        let m = ModelSpec::normal_location(1.0).unwrap();
        let c = crit(&m, 2.0, &0.5.into());
        let s = compute_s(&c, &0.5.into(), &0.0.into()).unwrap().s;
        let v = compute_v(&c, &0.5.into(), &0.0.into()).unwrap().v;
        assert!((s[(0, 0)] - v[(0, 0)]).abs() > 1e-3, "{s} {v}");
        assert!(s[(0, 0)] > 0.0);
    }

    #[test]
    fn v_symmetric_for_location_scale() {
        let m = ModelSpec::normal_location_scale();
        let c = crit(&m, 0.5, &vec![0.2, 1.2].into());
        let v = compute_v(&c, &vec![0.2, 1.2].into(), &vec![0.0, 1.0].into()).unwrap().v;
        assert!((v[(0, 1)] - v[(1, 0)]).abs() < 1e-10);
    }

    #[test]
    fn u_n_is_average_score_for_modified_kl() {
        let m = ModelSpec::normal_location(1.0).unwrap();
        let data = m.sample(&0.2.into(), 100, 3).unwrap();
        let c = crit(&m, 0.0, &0.2.into());
        let u = u_n(&c, &data, &0.2.into(), &0.2.into()).unwrap();
        assert!((u[0] - (data.mean() - 0.2)).abs() < 1e-8);
        let one = Dataset::new(vec![1.5]).unwrap();
        let u1 = u_n(&c, &one, &0.2.into(), &0.2.into()).unwrap();
        assert!((u1[0] - 1.3).abs() < 1e-8);
    }

    #[test]
    fn u_n_has_mean_zero() {
        let m = ModelSpec::normal_location(1.0).unwrap();
        let c = crit(&m, 0.5, &0.4.into());
        let us: Vec<f64> = (0..200)
            .map(|r| {
                let data = m.sample(&0.0.into(), 50, crate::seed::split(99, r)).unwrap();
                u_n(&c, &data, &0.4.into(), &0.0.into()).unwrap()[0]
            })
            .collect();
        let mean = stats::mean(&us);
        assert!(mean.abs() < 4.0 * stats::std_dev(&us) / 200f64.sqrt(), "{mean}");
    }

    #[test]
    fn delta_and_standardize_arithmetic() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(delta_n(&0.3.into(), &one, &[0.0]).unwrap(), ParamVector::scalar(0.3));
        assert_eq!(standardize(&0.3.into(), 100, &one, &one, &0.3.into()).unwrap(), vec![0.0]);
        let z = standardize(&0.1.into(), 100, &one, &one, &0.0.into()).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12);
        let zero = DMatrix::from_element(1, 1, 0.0);
        assert!(matches!(delta_n(&0.0.into(), &zero, &[1.0]), Err(Error::SingularS(_))));
    }

    #[test]
    fn synthetic_normal_chain_passes_check() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cov = s.clone().try_inverse().unwrap();
        let l = cov.clone().cholesky().unwrap().l();
        let n = 400;
        let delta = ParamVector(vec![0.3, -0.2]);
        let mut rng = crate::seed::rng(5);
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| {
                let z = DVector::from_iterator(2, (0..2).map(|_| StandardNormal.sample(&mut rng)));
                let t = &l * z;
                (0..2).map(|j| delta.0[j] + t[j] / (n as f64).sqrt()).collect()
            })
            .collect();
        let chain = ChainDraws::from_rows(&rows, 5).unwrap();
        let check = posterior_normality_check(&chain, n, &s, &delta).unwrap();
        assert!(check.cov_rel_err < 0.1, "{}", check.cov_rel_err);
        assert!(check.ks_pvalues.iter().all(|p| *p > 0.01), "{:?}", check.ks_pvalues);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let r = inverse_sqrt(&m);
        let back = &r * &m * &r;
        assert!((back - DMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
