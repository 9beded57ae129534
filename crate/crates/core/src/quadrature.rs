//! One-dimensional quadrature for expectations under the model.
//!
//! Integrands are handled in log space. A *frame* (mode and curvature scale of
//! the log integrand) is located first; Gauss–Hermite nodes are then placed on
//! that frame, which makes Gaussian-type integrands exact up to rounding.
//! Half-line integrals are taken in `t = ln x` with the Jacobian folded into
//! the log integrand.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Support;

/// Drop in log integrand at which the finite integration range is cut.
const TAIL_DROP: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QuadratureScheme {
    GaussHermite { order: usize },
    GaussLegendreMapped { order: usize, panels: usize },
    Adaptive { tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub scheme: QuadratureScheme,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl QuadratureConfig {
    /// Gauss–Hermite order 64 on the real line, 40 panels of order-16
    /// Gauss–Legendre on the log-mapped half line.
    pub fn default_for(support: Support) -> Self {
        let scheme = match support {
            Support::RealLine => QuadratureScheme::GaussHermite { order: 64 },
            Support::PositiveHalfLine => QuadratureScheme::GaussLegendreMapped { order: 16, panels: 40 },
        };
        Self { scheme, abs_tol: 1e-10, rel_tol: 1e-10 }
    }

    pub fn validate(&self) -> Result<()> {
        let order_ok = match self.scheme {
            QuadratureScheme::GaussHermite { order } => order >= 16,
            QuadratureScheme::GaussLegendreMapped { order, panels } => order >= 16 && panels >= 1,
            QuadratureScheme::Adaptive { tol } => tol > 0.0 && tol <= 1e-4,
        };
        let tol_ok = |t: f64| t > 0.0 && t <= 1e-4;
        if !order_ok {
            return Err(Error::Config(format!("quadrature order/tolerance invalid: {:?}", self.scheme)));
        }
        if !tol_ok(self.abs_tol) || !tol_ok(self.rel_tol) {
            return Err(Error::Config("quadrature tolerances must lie in (0, 1e-4]".into()));
        }
        Ok(())
    }

    fn doubled(&self) -> Self {
        let scheme = match self.scheme {
            QuadratureScheme::GaussHermite { order } => QuadratureScheme::GaussHermite { order: 2 * order },
            QuadratureScheme::GaussLegendreMapped { order, panels } => {
                QuadratureScheme::GaussLegendreMapped { order, panels: 2 * panels }
            }
            QuadratureScheme::Adaptive { tol } => QuadratureScheme::Adaptive { tol: tol * 1e-2 },
        };
        Self { scheme, ..*self }
    }
}

/// Gauss–Hermite rule for weight `e^{−z²}`; weights are stored pre-multiplied by `e^{z²}`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub scaled_weights: Vec<f64>,
}

/// Golub–Welsch eigenvalues seed the nodes; Newton steps on the orthonormal
/// Hermite recurrence polish them and yield the weights in log form, so the
/// scaled weights stay representable at high order.
pub fn gauss_hermite(order: usize) -> GaussHermite {
    let n = order;
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut seeds: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    seeds.sort_by(f64::total_cmp);

    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut scaled_weights = vec![0.0; n];
    for (i, &seed) in seeds.iter().enumerate() {
        let mut z = seed;
        let mut pp = 0.0;
        for _ in 0..20 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let ln_w = 2f64.ln() - 2.0 * pp.abs().ln();
        nodes[i] = z;
        scaled_weights[i] = (ln_w + z * z).exp();
    }
    // exact symmetry
    for i in 0..n / 2 {
        let z = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        let w = 0.5 * (scaled_weights[i] + scaled_weights[n - 1 - i]);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        scaled_weights[i] = w;
        scaled_weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussHermite { nodes, scaled_weights }
}

/// Gauss–Legendre rule on `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mid + half * z))
            .sum::<f64>()
    }
}

pub fn gauss_legendre(order: usize) -> GaussLegendre {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussLegendre { nodes, weights }
}

// Gauss–Kronrod 7/15 abscissae and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut stack = vec![(a, b)];
    let mut total = 0.0;
    let mut evals = 0usize;
    let width = b - a;
    while let Some((lo, hi)) = stack.pop() {
        let (v, err) = gk15(f, lo, hi);
        evals += 15;
        if err <= tol * (hi - lo) / width || hi - lo < 1e-12 * width {
            total += v;
        } else if evals > 2_000_000 {
            return Err(Error::DivergenceInfinite("adaptive quadrature did not converge".into()));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid));
            stack.push((mid, hi));
        }
    }
    Ok(total)
}

/// Mode and curvature scale of a log integrand in the integration variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub center: f64,
    pub scale: f64,
    pub peak: f64,
}

/// Locates the maximum of a concave-near-the-mode log integrand by Newton
/// steps on central differences, starting from `(center, scale)`.
///
/// Fails with `DivergenceInfinite` when the log integrand increases without
/// bound (the integral is infinite).
pub fn find_frame(log_f: &dyn Fn(f64) -> f64, center: f64, scale: f64) -> Result<Frame> {
    let mut t = center;
    let mut s = scale.abs().max(1e-300);
    let mut lt = log_f(t);
    if !lt.is_finite() {
        return Err(Error::DivergenceInfinite(format!("log integrand not finite at start {t}")));
    }
    for _ in 0..200 {
        let d = 1e-3 * s;
        let lp = log_f(t + d);
        let lm = log_f(t - d);
        let g = (lp - lm) / (2.0 * d);
        let c = (lp - 2.0 * lt + lm) / (d * d);
        let step = if c < 0.0 && c.is_finite() {
            s = (-1.0 / c).sqrt();
            -g / c
        } else {
            // Not concave here: walk uphill until the slope turns.
            let dir = if g >= 0.0 { 1.0 } else { -1.0 };
            let mut step = dir * s;
            let mut prev = lt;
            let mut turned = false;
            for _ in 0..80 {
                let v = log_f(t + step);
                if !v.is_finite() || v < prev {
                    turned = true;
                    break;
                }
                prev = v;
                step *= 2.0;
            }
            if !turned {
                return Err(Error::DivergenceInfinite("log integrand unbounded".into()));
            }
            step / 2.0
        };
        // Damp steps that overshoot into lower values.
        let mut step = step;
        let mut next = log_f(t + step);
        let mut halvings = 0;
        while !(next.is_finite() && next >= lt - 1e-12 * lt.abs().max(1.0)) && halvings < 60 {
            step *= 0.5;
            next = log_f(t + step);
            halvings += 1;
        }
        t += step;
        lt = next;
        if step.abs() <= 1e-11 * s.max(t.abs() * 1e-3) {
            let d = 1e-3 * s;
            let c = (log_f(t + d) - 2.0 * lt + log_f(t - d)) / (d * d);
            if !(c < 0.0) {
                return Err(Error::DivergenceInfinite("log integrand has no proper mode".into()));
            }
            return Ok(Frame { center: t, scale: (-1.0 / c).sqrt(), peak: lt });
        }
    }
    Err(Error::DivergenceInfinite("mode search did not converge".into()))
}

/// A quadrature engine built from a [`QuadratureConfig`].
#[derive(Debug, Clone)]
pub struct Quadrature {
    config: QuadratureConfig,
    rule: Rule,
    doubled: Box<Option<Quadrature>>,
}

#[derive(Debug, Clone)]
enum Rule {
    Hermite(Arc<GaussHermite>),
    Legendre(Arc<GaussLegendre>, usize),
    Adaptive(f64),
}

impl Quadrature {
    pub fn new(config: QuadratureConfig) -> Result<Self> {
        config.validate()?;
        let mut q = Self::build(config);
        q.doubled = Box::new(Some(Self::build(config.doubled())));
        Ok(q)
    }

    fn build(config: QuadratureConfig) -> Self {
        let rule = match config.scheme {
            QuadratureScheme::GaussHermite { order } => Rule::Hermite(Arc::new(gauss_hermite(order))),
            QuadratureScheme::GaussLegendreMapped { order, panels } => {
                Rule::Legendre(Arc::new(gauss_legendre(order)), panels)
            }
            QuadratureScheme::Adaptive { tol } => Rule::Adaptive(tol),
        };
        Self { config, rule, doubled: Box::new(None) }
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.config
    }

    /// ∫ exp(log_f(x)) dx over the support, with an order-doubling stability check.
    ///
    /// `hint` gives a starting `(location, scale)` in x units.
    pub fn integrate_exp(
        &self,
        support: Support,
        log_f: &dyn Fn(f64) -> f64,
        hint: (f64, f64),
    ) -> Result<f64> {
        let (lt, frame) = self.frame(support, log_f, hint)?;
        let one = |_: f64| 1.0;
        let v = self.integrate_on_frame(support, &*lt, &one, frame)?;
        if let Some(fine) = self.doubled.as_ref() {
            let w = fine.integrate_on_frame(support, &*lt, &one, frame)?;
            let tol = self.config.abs_tol + self.config.rel_tol * w.abs();
            if !w.is_finite() || (v - w).abs() > tol {
                return Err(Error::DivergenceInfinite(format!(
                    "quadrature unstable under order doubling: {v:e} vs {w:e}"
                )));
            }
        }
        finite_or_infinite(v)
    }

    /// ∫ exp(log_w(x)) f(x) dx, where the frame is taken from `log_w` alone.
    pub fn expect(
        &self,
        support: Support,
        log_w: &dyn Fn(f64) -> f64,
        f: &dyn Fn(f64) -> f64,
        hint: (f64, f64),
    ) -> Result<f64> {
        let (lt, frame) = self.frame(support, log_w, hint)?;
        finite_or_infinite(self.integrate_on_frame(support, &*lt, f, frame)?)
    }

    /// Same as [`Quadrature::expect`] for several integrands sharing one weight.
    pub fn expect_many(
        &self,
        support: Support,
        log_w: &dyn Fn(f64) -> f64,
        f: &dyn Fn(f64, &mut [f64]),
        outputs: usize,
        hint: (f64, f64),
    ) -> Result<Vec<f64>> {
        let (lt, frame) = self.frame(support, log_w, hint)?;
        let mut acc = vec![0.0; outputs];
        let mut buf = vec![0.0; outputs];
        self.for_each_node(support, &*lt, frame, &mut |x, w| {
            f(x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        })?;
        let scale = frame.peak.exp();
        acc.iter_mut().try_for_each(|v| {
            *v *= scale;
            finite_or_infinite(*v).map(|_| ())
        })?;
        Ok(acc)
    }

    #[allow(clippy::type_complexity)]
    fn frame<'a>(
        &self,
        support: Support,
        log_f: &'a dyn Fn(f64) -> f64,
        hint: (f64, f64),
    ) -> Result<(Box<dyn Fn(f64) -> f64 + 'a>, Frame)> {
        let (lt, start, scale): (Box<dyn Fn(f64) -> f64 + 'a>, f64, f64) = match support {
            Support::RealLine => (Box::new(move |t: f64| log_f(t)), hint.0, hint.1),
            Support::PositiveHalfLine => {
                let lt = move |t: f64| {
                    let x = t.exp();
                    if x == 0.0 || !x.is_finite() {
                        f64::NEG_INFINITY
                    } else {
                        log_f(x) + t
                    }
                };
                (Box::new(lt), hint.0.max(1e-300).ln(), 1.0)
            }
        };
        let frame = find_frame(&*lt, start, scale)?;
        Ok((lt, frame))
    }

    fn integrate_on_frame(
        &self,
        support: Support,
        lt: &dyn Fn(f64) -> f64,
        f: &dyn Fn(f64) -> f64,
        frame: Frame,
    ) -> Result<f64> {
        let mut total = 0.0;
        match &self.rule {
            Rule::Adaptive(tol) => {
                let (a, b) = tail_range(lt, frame);
                let g = |t: f64| {
                    let w = (lt(t) - frame.peak).exp();
                    if w == 0.0 {
                        0.0
                    } else {
                        w * f(to_x(support, t))
                    }
                };
                total = adaptive_gk(&g, a, b, *tol)?;
            }
            _ => self.for_each_node(support, lt, frame, &mut |x, w| total += w * f(x))?,
        }
        Ok(total * frame.peak.exp())
    }

    // Visits quadrature nodes in x with weights relative to exp(peak).
    fn for_each_node(
        &self,
        support: Support,
        lt: &dyn Fn(f64) -> f64,
        frame: Frame,
        visit: &mut dyn FnMut(f64, f64),
    ) -> Result<()> {
        match &self.rule {
            Rule::Hermite(gh) => {
                let h = std::f64::consts::SQRT_2 * frame.scale;
                for (z, sw) in gh.nodes.iter().zip(&gh.scaled_weights) {
                    let t = frame.center + h * z;
                    let w = (lt(t) - frame.peak).exp();
                    if w > 0.0 {
                        visit(to_x(support, t), h * sw * w);
                    }
                }
            }
            Rule::Legendre(gl, panels) => {
                let (a, b) = tail_range(lt, frame);
                let width = (b - a) / *panels as f64;
                for k in 0..*panels {
                    let lo = a + k as f64 * width;
                    let mid = lo + 0.5 * width;
                    for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
                        let t = mid + 0.5 * width * z;
                        let w = (lt(t) - frame.peak).exp();
                        if w > 0.0 {
                            visit(to_x(support, t), 0.5 * width * wz * w);
                        }
                    }
                }
            }
            Rule::Adaptive(tol) => {
                // Fall back to a dense Gauss–Legendre grid sized by the tolerance.
                let panels = ((1.0 / tol).log10().ceil() as usize * 20).max(40);
                let gl = gauss_legendre(16);
                let (a, b) = tail_range(lt, frame);
                let width = (b - a) / panels as f64;
                for k in 0..panels {
                    let mid = a + (k as f64 + 0.5) * width;
                    for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
                        let t = mid + 0.5 * width * z;
                        let w = (lt(t) - frame.peak).exp();
                        if w > 0.0 {
                            visit(to_x(support, t), 0.5 * width * wz * w);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn to_x(support: Support, t: f64) -> f64 {
    match support {
        Support::RealLine => t,
        Support::PositiveHalfLine => t.exp(),
    }
}

// Range around the frame outside of which the integrand is below e^{−TAIL_DROP} of its peak.
fn tail_range(lt: &dyn Fn(f64) -> f64, frame: Frame) -> (f64, f64) {
    let edge = |dir: f64| {
        let mut k = 1.0;
        while k < 1e4 {
            let t = frame.center + dir * k * frame.scale;
            let v = lt(t);
            if !(v > frame.peak - TAIL_DROP) {
                return t;
            }
            k *= 1.25;
        }
        frame.center + dir * k * frame.scale
    };
    (edge(-1.0), edge(1.0))
}

fn finite_or_infinite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::DivergenceInfinite(format!("integral evaluated to {v}")))
    }
}
