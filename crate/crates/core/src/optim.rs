//! Quasi-Newton minimisation with simple lower bounds and fixed coordinates.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Threshold on `max_i |g_i| max(|x_i|, 1) / max(|f|, 1)` over free
    /// coordinates.
    pub gradient_tolerance: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub relative_gradient: f64,
}

fn relative_gradient(x: &[f64], g: &[f64], f: f64, free: &[bool]) -> f64 {
    let scale = f.abs().max(1.0);
    x.iter()
        .zip(g)
        .zip(free)
        .filter(|(_, &fr)| fr)
        .map(|((xi, gi), _)| gi.abs() * xi.abs().max(1.0) / scale)
        .fold(0.0, f64::max)
}

/// Kind of evaluation requested from the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Point {
    /// An iterate. The objective may re-tune internal approximations here.
    Base,
    /// A line-search trial. Approximations must stay as at the last base
    /// point so that compared values belong to one function. The gradient
    /// is not read.
    Trial,
}

/// Minimises `obj` from `x0` subject to `x_i ≥ lower_i`; coordinates with
/// `fixed[i]` stay at their starting values. `obj` returns `f(x)` and writes
/// `∇f(x)`; errors and non-finite values count as `+∞` in line searches.
pub fn minimize<O: FnMut(&[f64], &mut [f64], Point) -> Result<f64>>(
    obj: &mut O,
    x0: &[f64],
    lower: &[f64],
    fixed: &[bool],
    opts: &BfgsOptions,
) -> Result<OptimResult> {
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().zip(lower).map(|(v, l)| v.max(*l)).collect();
    let mut g = vec![0.0; n];
    let mut f = obj(&x, &mut g, Point::Base)?;
    let mut evaluations = 1;
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];

    let free_set = |x: &[f64], g: &[f64]| -> Vec<bool> {
        (0..n)
            .map(|i| !fixed[i] && !(x[i] <= lower[i] && g[i] > 0.0))
            .collect()
    };

    loop {
        let free = free_set(&x, &g);
        let rel = relative_gradient(&x, &g, f, &free);
        if rel <= opts.gradient_tolerance || iterations >= opts.max_iterations {
            return Ok(OptimResult {
                converged: rel <= opts.gradient_tolerance,
                x,
                f,
                gradient: g,
                iterations,
                evaluations,
                relative_gradient: rel,
            });
        }
        iterations += 1;

        for i in 0..n {
            d[i] = if free[i] {
                -(0..n)
                    .filter(|&k| free[k])
                    .map(|k| h[i * n + k] * g[k])
                    .sum::<f64>()
            } else {
                0.0
            };
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            h_is_identity = true;
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut alpha = if h_is_identity {
            (1.0 / dmax).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = (x[i] + alpha * d[i]).max(lower[i]);
            }
            let f_try = obj(&x_new, &mut g_new, Point::Trial);
            evaluations += 1;
            if let Ok(ft) = f_try {
                let decrease: f64 = g
                    .iter()
                    .zip(&x_new)
                    .zip(&x)
                    .map(|((gi, a), b)| gi * (a - b))
                    .sum();
                if ft.is_finite() && ft <= f + 1e-4 * decrease {
                    accepted = Some(ft);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let accepted = match accepted {
            Some(_) => {
                evaluations += 1;
                match obj(&x_new, &mut g_new, Point::Base) {
                    Ok(fb) if fb.is_finite() && g_new.iter().all(|v| v.is_finite()) => Some(fb),
                    _ => None,
                }
            }
            None => None,
        };
        let Some(f_acc) = accepted else {
            if h_is_identity {
                let free = free_set(&x, &g);
                let rel = relative_gradient(&x, &g, f, &free);
                return Ok(OptimResult {
                    converged: rel <= opts.gradient_tolerance,
                    x,
                    f,
                    gradient: g,
                    iterations,
                    evaluations,
                    relative_gradient: rel,
                });
            }
            h = identity(n);
            h_is_identity = true;
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-10 * (ss * yy).sqrt() {
            if h_is_identity {
                let scale = sy / yy;
                h.iter_mut().for_each(|v| *v *= scale);
                h_is_identity = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_acc;
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H ← (I - ρ s y') H (I - ρ y s') + ρ s s'`
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|k| h[i * n + k] * y[k]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for k in 0..n {
            h[i * n + k] +=
                -rho * (hy[i] * s[k] + s[i] * hy[k]) + (rho * rho * yhy + rho) * s[i] * s[k];
        }
    }
}
