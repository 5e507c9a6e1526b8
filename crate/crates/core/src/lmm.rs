//! Linear mixed model on summary scores, fitted by maximum likelihood.
//!
//! `S_iv = β_0 + (t_v - t_0) β_1 + ξ_i0 [+ (t_v - t_0) ξ_i1] + ε_iv` with
//! independent normal random effects. Fixed effects are profiled out by
//! generalised least squares; the log standard deviations are optimised
//! numerically.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{bic_value, LOG_SCALE_FLOOR};
use crate::optim::{minimize, BfgsOptions, Point};
use crate::score::{ScorePoint, ScoreSeries};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LmmModel {
    /// Random intercept.
    M1,
    /// Random intercept and random slope.
    M2,
}

impl LmmModel {
    fn q(self) -> usize {
        match self {
            LmmModel::M1 => 1,
            LmmModel::M2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmmFit {
    pub model: LmmModel,
    /// `(β_0, β_1)`
    pub beta: [f64; 2],
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub sigma_eps_sq: f64,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_subjects: usize,
    pub converged: bool,
    pub iterations: usize,
}

struct Group<'a> {
    points: &'a [ScorePoint],
    elapsed: Vec<f64>,
}

/// Per-subject `Z'a` for `Z = [1, e]` truncated to `q` columns.
#[inline]
fn zt(e: &[f64], a: &[f64], q: usize) -> [f64; 2] {
    let s0: f64 = a.iter().sum();
    let s1 = if q == 2 {
        e.iter().zip(a).map(|(x, y)| x * y).sum()
    } else {
        0.0
    };
    [s0, s1]
}

/// `A = D⁻¹ + Z'Z / s²` and its inverse and log-determinant.
fn woodbury(e: &[f64], d: [f64; 2], s2: f64, q: usize) -> ([[f64; 2]; 2], f64) {
    let n = e.len() as f64;
    let se: f64 = e.iter().sum();
    let see: f64 = e.iter().map(|x| x * x).sum();
    if q == 1 {
        let a = 1.0 / d[0] + n / s2;
        return ([[1.0 / a, 0.0], [0.0, 0.0]], a.ln());
    }
    let a = [
        [1.0 / d[0] + n / s2, se / s2],
        [se / s2, 1.0 / d[1] + see / s2],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    (
        [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ],
        det.ln(),
    )
}

/// `u'V⁻¹w` given `Z'u`, `Z'w` and `u'w`.
#[inline]
fn quad_form(uw: f64, zu: [f64; 2], zw: [f64; 2], ainv: &[[f64; 2]; 2], s2: f64) -> f64 {
    let mut corr = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            corr += zu[a] * ainv[a][b] * zw[b];
        }
    }
    uw / s2 - corr / (s2 * s2)
}

fn groups(scores: &ScoreSeries, baseline_time: f64) -> Vec<Group<'_>> {
    scores
        .by_subject()
        .into_iter()
        .map(|points| Group {
            elapsed: points.iter().map(|p| p.time - baseline_time).collect(),
            points,
        })
        .collect()
}

/// Profile log-likelihood at log standard deviations `(σ_0, [σ_1,] σ_ε)`,
/// with the GLS fixed effects.
fn profile(model: LmmModel, groups: &[Group], log_sd: &[f64]) -> Result<(f64, [f64; 2])> {
    let q = model.q();
    let d = [
        (2.0 * log_sd[0]).exp(),
        if q == 2 { (2.0 * log_sd[1]).exp() } else { 1.0 },
    ];
    let s2 = (2.0 * log_sd[q]).exp();
    let mut xtx = [[0.0; 2]; 2];
    let mut xty = [0.0; 2];
    let mut cache = Vec::with_capacity(groups.len());
    let mut log_det = 0.0;
    let mut n_total = 0usize;
    for g in groups {
        let e = &g.elapsed;
        let y: Vec<f64> = g.points.iter().map(|p| p.score).collect();
        let ones = vec![1.0; e.len()];
        let (ainv, log_det_a) = woodbury(e, d, s2, q);
        let cols = [&ones, e];
        let zx = [zt(e, &ones, q), zt(e, e, q)];
        let zy = zt(e, &y, q);
        for a in 0..2 {
            for b in 0..2 {
                let dot: f64 = cols[a].iter().zip(cols[b].iter()).map(|(u, w)| u * w).sum();
                xtx[a][b] += quad_form(dot, zx[a], zx[b], &ainv, s2);
            }
            let dot: f64 = cols[a].iter().zip(&y).map(|(u, w)| u * w).sum();
            xty[a] += quad_form(dot, zx[a], zy, &ainv, s2);
        }
        let log_det_d = d[0].ln() + if q == 2 { d[1].ln() } else { 0.0 };
        log_det += e.len() as f64 * s2.ln() + log_det_d + log_det_a;
        n_total += e.len();
        cache.push((y, ainv));
    }
    let det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
    if !(det.is_finite() && det > 0.0) {
        return Err(Error::data("singular fixed-effect design"));
    }
    let beta = [
        (xtx[1][1] * xty[0] - xtx[0][1] * xty[1]) / det,
        (xtx[0][0] * xty[1] - xtx[1][0] * xty[0]) / det,
    ];
    let mut quad = 0.0;
    for (g, (y, ainv)) in groups.iter().zip(&cache) {
        let r: Vec<f64> = y
            .iter()
            .zip(&g.elapsed)
            .map(|(yv, e)| yv - beta[0] - beta[1] * e)
            .collect();
        let zr = zt(&g.elapsed, &r, q);
        let rr: f64 = r.iter().map(|v| v * v).sum();
        quad += quad_form(rr, zr, zr, ainv, s2);
    }
    let ll = -0.5 * (n_total as f64 * LN_2PI + log_det + quad);
    if !ll.is_finite() {
        return Err(Error::Domain {
            what: "LMM log-likelihood",
            value: ll,
        });
    }
    Ok((ll, beta))
}

/// Maximised-over-β log-likelihood at the given variance components
/// (`sigma1_sq` is ignored for M1).
pub fn lmm_loglik(
    model: LmmModel,
    scores: &ScoreSeries,
    baseline_time: f64,
    sigma0_sq: f64,
    sigma1_sq: f64,
    sigma_eps_sq: f64,
) -> Result<(f64, [f64; 2])> {
    let groups = groups(scores, baseline_time);
    let mut log_sd = vec![0.5 * sigma0_sq.ln()];
    if model == LmmModel::M2 {
        log_sd.push(0.5 * sigma1_sq.ln());
    }
    log_sd.push(0.5 * sigma_eps_sq.ln());
    if log_sd.iter().any(|v| !v.is_finite()) {
        return Err(Error::spec("variance components must be positive"));
    }
    profile(model, &groups, &log_sd)
}

fn optimise(model: LmmModel, groups: &[Group], x0: &[f64]) -> Result<crate::optim::OptimResult> {
    let n = x0.len();
    let mut obj = |x: &[f64], g: &mut [f64], point: Point| -> Result<f64> {
        let f = -profile(model, groups, x)?.0;
        if point == Point::Trial {
            return Ok(f);
        }
        let mut xp = x.to_vec();
        for i in 0..n {
            xp[i] = x[i] + FD_STEP;
            let fp = -profile(model, groups, &xp)?.0;
            xp[i] = x[i] - FD_STEP;
            let fm = -profile(model, groups, &xp)?.0;
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * FD_STEP);
        }
        Ok(f)
    };
    minimize(
        &mut obj,
        x0,
        &vec![LOG_SCALE_FLOOR; n],
        &vec![false; n],
        &BfgsOptions::default(),
    )
}

/// ML fit of M1 or M2. For M2 the search is also started from the M1
/// optimum with the slope variance at its floor, so that the returned
/// log-likelihood never falls below the nested model's.
pub fn fit_lmm(model: LmmModel, scores: &ScoreSeries, baseline_time: f64) -> Result<LmmFit> {
    let groups = groups(scores, baseline_time);
    let n_obs = scores.points.len();
    if groups.is_empty() || n_obs < 3 {
        return Err(Error::data("not enough scores to fit a linear mixed model"));
    }
    let all_e: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.elapsed.iter().copied())
        .collect();
    let mean_e = all_e.iter().sum::<f64>() / n_obs as f64;
    let var_e = all_e.iter().map(|e| (e - mean_e).powi(2)).sum::<f64>() / n_obs as f64;
    if !(var_e > 0.0) {
        return Err(Error::data(
            "all score times are equal; the slope is not identifiable",
        ));
    }
    if !groups.iter().any(|g| g.points.len() >= 2) {
        return Err(Error::data("no subject has two or more scored visits"));
    }
    let ys: Vec<f64> = scores.points.iter().map(|p| p.score).collect();
    let mean_y = ys.iter().sum::<f64>() / n_obs as f64;
    let mut var_y = ys.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / n_obs as f64;
    if !(var_y > 0.0) {
        var_y = 1.0;
    }
    let half = 0.5 * (0.5 * var_y).ln();
    let m1_x0 = [half, half];
    let m1 = optimise(LmmModel::M1, &groups, &m1_x0)?;
    let best = match model {
        LmmModel::M1 => m1,
        LmmModel::M2 => {
            let slope = 0.5 * (0.01 * var_y / var_e).ln();
            let fresh = optimise(
                LmmModel::M2,
                &groups,
                &[half, slope.max(LOG_SCALE_FLOOR), half],
            )?;
            let nested = optimise(LmmModel::M2, &groups, &[m1.x[0], LOG_SCALE_FLOOR, m1.x[1]])?;
            if fresh.f <= nested.f {
                fresh
            } else {
                nested
            }
        }
    };
    let q = model.q();
    let (loglik, beta) = profile(model, &groups, &best.x)?;
    let n_params = 2 + q + 1;
    Ok(LmmFit {
        model,
        beta,
        sigma0_sq: (2.0 * best.x[0]).exp(),
        sigma1_sq: if q == 2 { (2.0 * best.x[1]).exp() } else { 0.0 },
        sigma_eps_sq: (2.0 * best.x[q]).exp(),
        loglik,
        bic: bic_value(loglik, n_params, groups.len()),
        n_params,
        n_subjects: groups.len(),
        converged: best.converged,
        iterations: best.iterations,
    })
}
