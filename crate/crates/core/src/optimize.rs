//! Derivative-free maximisation over a parameter box, plus finite-difference helpers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Coarse grid points per dimension for grid-started searches.
    pub grid_points: usize,
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_iter: usize,
    /// Nelder–Mead restarts from the incumbent.
    pub restarts: usize,
    /// Random starts added to multi-start searches.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_points: 101,
            x_tol: 1e-10,
            f_tol: 1e-15,
            max_iter: 4000,
            restarts: 2,
            random_starts: 3,
            seed: 0x5eed,
        }
    }
}

/// Result of a maximisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Objective values of `f`, with errors and NaN mapped to −∞.
pub fn finite_or_neg_inf(v: Result<f64>) -> f64 {
    match v {
        Ok(v) if !v.is_nan() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub fn golden_section_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Optimum {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) && iterations < 500 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let (x, value) = if fc >= fd { (c, fc) } else { (d, fd) };
    Optimum { x: vec![x], value, iterations }
}

/// Nelder–Mead maximisation projected onto `bounds`, restarted from the incumbent.
pub fn nelder_mead_max(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    step: &[f64],
    bounds: &ParamBox,
    cfg: &OptimizerConfig,
) -> Result<Optimum> {
    let mut best = nelder_mead_once(f, start, step, bounds, cfg);
    for _ in 0..cfg.restarts {
        let shrunk: Vec<f64> = step.iter().map(|s| s * 0.05).collect();
        let again = nelder_mead_once(f, &best.x, &shrunk, bounds, cfg);
        let improved = again.value > best.value;
        let iterations = best.iterations + again.iterations;
        if improved {
            best = again;
        }
        best.iterations = iterations;
        if !improved {
            break;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::NonConvergence {
            message: "Nelder–Mead found no finite objective value".into(),
            trace: vec![best.value],
        });
    }
    Ok(best)
}

fn nelder_mead_once(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    step: &[f64],
    bounds: &ParamBox,
    cfg: &OptimizerConfig,
) -> Optimum {
    let n = start.len();
    let project = |x: &mut Vec<f64>| bounds.clamp(x);
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut x0 = start.to_vec();
    project(&mut x0);
    simplex.push((x0.clone(), eval(&x0)));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += step[i];
        if x[i] > bounds.upper[i] {
            x[i] = x0[i] - step[i];
        }
        project(&mut x);
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        // Descending order: simplex[0] is the best vertex.
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let spread_x = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread_f = (simplex[0].1 - simplex[n].1).abs();
        if spread_x < cfg.x_tol && (spread_f <= cfg.f_tol * (1.0 + simplex[0].1.abs()) || spread_x < 1e-3 * cfg.x_tol) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut x);
            x
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr > simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr > simplex[n].1 {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc > simplex[n].1.max(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let mut x: Vec<f64> =
                        vertex.0.iter().zip(&best).map(|(v, b)| b + 0.5 * (v - b)).collect();
                    project(&mut x);
                    let v = eval(&x);
                    *vertex = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (x, value) = simplex.swap_remove(0);
    Optimum { x, value, iterations }
}

/// Newton refinement with finite-difference derivatives; keeps the incumbent
/// unless a step improves the objective.
pub fn newton_polish(f: &dyn Fn(&[f64]) -> f64, start: &Optimum, bounds: &ParamBox, steps: usize) -> Optimum {
    let mut best = start.clone();
    for _ in 0..steps {
        let h: Vec<f64> = best.x.iter().map(|x| 1e-4 * (1.0 + x.abs())).collect();
        let grad = fd_gradient(f, &best.x, &h);
        let hess = fd_hessian(f, &best.x, &h);
        let n = best.x.len();
        let hm = nalgebra::DMatrix::from_row_slice(n, n, &hess);
        let g = nalgebra::DVector::from_vec(grad);
        // Only take Newton steps where the Hessian is negative definite.
        let neg = -hm;
        let Some(chol) = neg.cholesky() else { break };
        let delta = chol.solve(&g);
        let mut x: Vec<f64> = best.x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
        bounds.clamp(&mut x);
        let v = f(&x);
        if v.is_finite() && v >= best.value {
            let moved = x.iter().zip(&best.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            best = Optimum { x, value: v, iterations: best.iterations + 1 };
            if moved < 1e-14 {
                break;
            }
        } else {
            break;
        }
    }
    best
}

/// Central-difference gradient with per-coordinate steps.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h[j];
            let fp = f(&y);
            y[j] = x[j] - h[j];
            let fm = f(&y);
            y[j] = x[j];
            (fp - fm) / (2.0 * h[j])
        })
        .collect()
}

/// Central-difference Hessian, row-major.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    let f0 = f(x);
    let mut y = x.to_vec();
    let mut at = |dj: (usize, f64), dk: (usize, f64)| {
        y.copy_from_slice(x);
        y[dj.0] += dj.1;
        y[dk.0] += dk.1;
        f(&y)
    };
    for j in 0..n {
        let fp = at((j, h[j]), (j, 0.0));
        let fm = at((j, -h[j]), (j, 0.0));
        out[j * n + j] = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
        for k in (j + 1)..n {
            let v = (at((j, h[j]), (k, h[k])) - at((j, h[j]), (k, -h[k])) - at((j, -h[j]), (k, h[k]))
                + at((j, -h[j]), (k, -h[k])))
                / (4.0 * h[j] * h[k]);
            out[j * n + k] = v;
            out[k * n + j] = v;
        }
    }
    out
}

/// Central-difference gradient extrapolated once: `(4·D(h/2) − D(h))/3`.
pub fn fd_gradient_richardson(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: &[f64]) -> Vec<f64> {
    let half: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
    let coarse = fd_gradient(f, x, h);
    let fine = fd_gradient(f, x, &half);
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

/// Central-difference Hessian extrapolated once, row-major.
pub fn fd_hessian_richardson(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: &[f64]) -> Vec<f64> {
    let half: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
    let coarse = fd_hessian(f, x, h);
    let fine = fd_hessian(f, x, &half);
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

/// Maximises `f` over `bounds` from several starting points; ties broken by
/// the highest objective, then smallest distance to `anchor`.
pub fn multi_start_max(
    f: &dyn Fn(&[f64]) -> f64,
    starts: &[Vec<f64>],
    step: &[f64],
    bounds: &ParamBox,
    anchor: &[f64],
    cfg: &OptimizerConfig,
) -> Result<Optimum> {
    let mut rng = crate::seed::rng(cfg.seed);
    let mut all: Vec<Vec<f64>> = starts.to_vec();
    for _ in 0..cfg.random_starts {
        all.push(
            bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(l, u)| rng.random_range(*l..*u))
                .collect(),
        );
    }
    let finite: Vec<Vec<f64>> = all
        .into_iter()
        .map(|mut s| {
            bounds.clamp(&mut s);
            s
        })
        .filter(|s| f(s).is_finite())
        .collect();
    if finite.is_empty() {
        return Err(Error::NoFiniteStart);
    }
    let mut best: Option<Optimum> = None;
    let dist = |x: &[f64]| x.iter().zip(anchor).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    for s in &finite {
        let Ok(opt) = nelder_mead_max(f, s, step, bounds, cfg) else { continue };
        let opt = newton_polish(f, &opt, bounds, 8);
        let better = match &best {
            None => true,
            Some(b) => {
                let tie = (opt.value - b.value).abs() <= 1e-12 * (1.0 + b.value.abs());
                (!tie && opt.value > b.value) || (tie && dist(&opt.x) < dist(&b.x))
            }
        };
        if better {
            best = Some(opt);
        }
    }
    best.ok_or(Error::NoFiniteStart)
}
