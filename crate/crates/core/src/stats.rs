//! Small descriptive-statistics helpers shared by the estimators and studies.

use statrs::function::erf::erfc;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Sample quantile by linear interpolation of order statistics.
///
/// With sorted values `x₍₁₎ ≤ … ≤ x₍ₙ₎`, position `h = (n − 1)p` and
/// `j = ⌊h⌋`, returns `x₍ⱼ₊₁₎ + (h − j)(x₍ⱼ₊₂₎ − x₍ⱼ₊₁₎)` (Hyndman–Fan type 7).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let j = h.floor() as usize;
    let frac = h - j as f64;
    if j + 1 >= sorted.len() || frac == 0.0 {
        sorted[j]
    } else {
        sorted[j] + frac * (sorted[j + 1] - sorted[j])
    }
}

/// Kolmogorov–Smirnov statistic sup |F_n − F|.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS statistic `d` computed from `n` (effective) samples.
///
/// Uses the Kolmogorov limit distribution with Stephens' small-sample
/// correction `λ = (√n + 0.12 + 0.11/√n) d`.
pub fn ks_pvalue(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    kolmogorov_survival(lambda)
}

/// P(K > λ) for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-theta form, converges fast for small λ.
        let c = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let q = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let mut cdf = 0.0;
        for k in 0..20 {
            let e = (2 * k + 1) as i32;
            cdf += q.powi(e * e);
        }
        return (1.0 - c * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_interpolates() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_relative_eq!(quantile(&xs, 0.5), 2.5);
        assert_relative_eq!(quantile(&xs, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn kolmogorov_matches_reference_points() {
        // Classical critical values: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        // both series agree at the switch point
        let lo = kolmogorov_survival(0.999_999_9);
        let hi = kolmogorov_survival(1.000_000_1);
        assert!((lo - hi).abs() < 1e-6);
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-11);
    }

    proptest::proptest! {
        #[test]
        fn quantile_is_monotone_and_bounded(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..200),
            p1 in 0.0f64..1.0,
            p2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = (p1.min(p2), p1.max(p2));
            let (qa, qb) = (quantile(&xs, lo), quantile(&xs, hi));
            let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(qa <= qb);
            proptest::prop_assert!(min <= qa && qb <= max);
        }

        #[test]
        fn quantile_commutes_with_affine_maps(
            xs in proptest::collection::vec(-1e2f64..1e2, 1..100),
            prob in 0.0f64..1.0,
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
        ) {
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let want = a * quantile(&xs, prob) + b;
            proptest::prop_assert!((quantile(&ys, prob) - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }
}
