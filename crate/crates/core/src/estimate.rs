//! Marginal maximum likelihood for ordinal item-response mixed models.
//!
//! Each subject's random effects are integrated out with a Gauss-Hermite
//! product rule, recentred at the subject's posterior mode and scaled by the
//! Cholesky factor of the posterior curvature. The gradient differentiates
//! the quadrature sum with the nodes held fixed in `ξ`-space.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::{response_curvature, response_loglik_grad, MAX_THRESHOLDS};
use crate::model::{
    pack, unpack, unpack_cholesky, CovStructure, Covariance, ItemDesign, ItemParams, ModelSpec,
    ParameterLayout, ParameterVector, RandomEffects,
};
use crate::optim::{minimize, BfgsOptions, Point};
use crate::quadrature::{GridNode, QuadratureRule};

/// Lower bound on log standard deviations and log Cholesky diagonals.
pub const LOG_SCALE_FLOOR: f64 = -10.0;
const BIC_TIE: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 25;
const NEWTON_TOL: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub quadrature: QuadratureRule,
    pub bfgs: BfgsOptions,
    /// Packed-parameter indices held at their initial values.
    pub fixed: Vec<usize>,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            quadrature: QuadratureRule::default(),
            bfgs: BfgsOptions::default(),
            fixed: Vec::new(),
            standard_errors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub relative_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Responses whose log-probability hit the floor at the final estimate.
    pub clamped_probabilities: u64,
    /// Subjects integrated without recentring at the final estimate.
    pub inner_fallbacks: u64,
    /// The observed information could be inverted on the free parameters.
    pub information_ok: bool,
}

/// A natural-scale estimate. `z` and `p` are filled for fixed effects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ParameterVector,
    pub items: ItemParams,
    pub beta: Vec<f64>,
    pub covariance: Covariance,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_subjects: usize,
    pub n_observations: usize,
    pub estimates: Vec<Estimate>,
    /// Packed parameters sitting on their lower bound.
    pub at_bound: Vec<String>,
    pub convergence: Convergence,
    pub diagnostics: Diagnostics,
    pub dataset_fingerprint: u64,
    pub quadrature_nodes: usize,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

pub fn bic_value(loglik: f64, n_params: usize, n_subjects: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_subjects as f64).ln()
}

pub fn bic(fit: &FitResult) -> f64 {
    fit.bic
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Selected {
    First,
    Second,
}

/// Smaller BIC wins; within `1e-9` the model with fewer parameters wins.
pub fn compare_bic(a: &FitResult, b: &FitResult) -> Result<Selected> {
    if a.dataset_fingerprint != b.dataset_fingerprint || a.n_subjects != b.n_subjects {
        return Err(Error::Comparison(
            "fits were obtained on different datasets".into(),
        ));
    }
    Ok(select_by_bic(a.bic, a.n_params, b.bic, b.n_params))
}

pub fn select_by_bic(bic_a: f64, k_a: usize, bic_b: f64, k_b: usize) -> Selected {
    if (bic_a - bic_b).abs() <= BIC_TIE {
        if k_b < k_a {
            Selected::Second
        } else {
            Selected::First
        }
    } else if bic_b < bic_a {
        Selected::Second
    } else {
        Selected::First
    }
}

/// Two-sided standard-normal tail probability of `|z|`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

pub fn wald_test(fit: &FitResult, name: &str) -> Result<(f64, f64)> {
    let e = fit
        .estimate(name)
        .ok_or_else(|| Error::Inference(format!("no coefficient named '{name}'")))?;
    wald(e.estimate, e.se)
}

pub fn wald(estimate: f64, se: f64) -> Result<(f64, f64)> {
    if !(se.is_finite() && se > 0.0) {
        return Err(Error::Inference(format!(
            "standard error {se} is not positive"
        )));
    }
    let z = estimate / se;
    Ok((z, normal_two_sided_p(z)))
}

/// Table with columns `parameter,estimate,se,z,p`.
pub fn write_estimates_csv<W: Write>(fit: &FitResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "estimate", "se", "z", "p"])?;
    let num = |v: f64| {
        if v.is_finite() {
            format!("{v:.6}")
        } else {
            String::new()
        }
    };
    for e in &fit.estimates {
        w.write_record([
            e.name.clone(),
            num(e.estimate),
            num(e.se),
            e.z.map(num).unwrap_or_default(),
            e.p.map(|p| format!("{p:.3e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct PVisit {
    elapsed: f64,
    x: Vec<f64>,
    /// `(item, category)` of the observed responses.
    obs: Vec<(usize, usize)>,
}

struct PSubject {
    visits: Vec<PVisit>,
}

/// Unpacked parameters in the form used by the hot loops.
struct Params {
    beta: Vec<f64>,
    /// `δ_jk + τ_j`
    offsets: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    l: [[f64; 2]; 2],
    prec: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub per_subject: Vec<f64>,
    pub clamped: u64,
    pub fallbacks: u64,
}

/// Per-subject quadrature placement.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Adapt {
    /// Newton warm start (last successful mode).
    mu: [f64; 2],
    /// Grid centre and scale.
    centre: [f64; 2],
    c: [[f64; 2]; 2],
    fell_back: bool,
    ready: bool,
}

pub(crate) struct Engine<'a> {
    spec: &'a ModelSpec,
    layout: ParameterLayout,
    subjects: Vec<PSubject>,
    grid: Vec<GridNode>,
    adaptive: bool,
    dim: usize,
    raw_item_offsets: Vec<usize>,
    raw_cov_offset: usize,
    raw_len: usize,
}

impl<'a> Engine<'a> {
    pub fn new(spec: &'a ModelSpec, data: &Dataset, quad: &QuadratureRule) -> Result<Self> {
        spec.validate()?;
        data.check_compatible(spec)?;
        let mut subjects = Vec::with_capacity(data.n_subjects());
        for s in data.subjects() {
            let mut visits = Vec::new();
            for v in &s.visits {
                let obs: Vec<(usize, usize)> = v
                    .responses
                    .iter()
                    .enumerate()
                    .filter_map(|(j, r)| r.map(|y| (j, y as usize)))
                    .collect();
                if obs.is_empty() {
                    continue;
                }
                let elapsed = v.time - spec.baseline_time;
                visits.push(PVisit {
                    elapsed,
                    x: spec.design_row(&v.covariates, elapsed)?,
                    obs,
                });
            }
            subjects.push(PSubject { visits });
        }
        let layout = spec.layout();
        let n_beta = layout.n_beta;
        let mut raw_item_offsets = Vec::new();
        let mut off = n_beta;
        for item in &spec.items {
            raw_item_offsets.push(off);
            off += item.n_thresholds();
        }
        let dim = spec.re_dim();
        Ok(Engine {
            spec,
            subjects,
            grid: quad.grid(dim),
            adaptive: quad.adaptive,
            dim,
            raw_item_offsets,
            raw_cov_offset: off,
            raw_len: off + layout.n_cov,
            layout,
        })
    }

    fn params(&self, packed: &[f64]) -> Result<Params> {
        let (items, beta, _) = unpack(self.spec, &ParameterVector(packed.to_vec()))?;
        let l = unpack_cholesky(self.spec, &packed[self.layout.cov_offset..]);
        let prec = if self.dim == 1 {
            [[1.0 / (l[0][0] * l[0][0]), 0.0], [0.0, 0.0]]
        } else {
            // Σ⁻¹ = L⁻ᵀ L⁻¹ with L⁻¹ = [[1/a, 0], [-b/(ac), 1/c]]
            let (a, b, c) = (l[0][0], l[1][0], l[1][1]);
            let (i00, i10, i11) = (1.0 / a, -b / (a * c), 1.0 / c);
            [[i00 * i00 + i10 * i10, i10 * i11], [i10 * i11, i11 * i11]]
        };
        Ok(Params {
            beta,
            offsets: items
                .thresholds
                .iter()
                .zip(&items.shifts)
                .map(|(th, s)| th.iter().map(|d| d + s).collect())
                .collect(),
            alpha: items.discrimination,
            l,
            prec,
        })
    }

    #[inline]
    fn theta(&self, fx: f64, elapsed: f64, xi: [f64; 2]) -> f64 {
        if self.dim == 1 {
            fx + xi[0]
        } else {
            fx + xi[0] + elapsed * xi[1]
        }
    }

    /// Unnormalised log posterior with gradient and Hessian in `ξ`.
    fn log_posterior(
        &self,
        p: &Params,
        s: &PSubject,
        fx: &[f64],
        xi: [f64; 2],
    ) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let (family, kind) = (self.spec.family, self.spec.cdf);
        let mut eta = [0.0f64; MAX_THRESHOLDS];
        let (mut h, mut g, mut hs) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
        for (v, f) in s.visits.iter().zip(fx) {
            let theta = self.theta(*f, v.elapsed, xi);
            let (mut d0, mut d1, mut d2) = (0.0, 0.0, 0.0);
            for &(j, y) in &v.obs {
                let (c, a) = (&p.offsets[j], p.alpha[j]);
                for (e, ck) in eta.iter_mut().zip(c) {
                    *e = a * (theta - ck);
                }
                let rc = response_curvature(family, kind, &eta[..c.len()], y);
                d0 += rc.loglik;
                d1 += a * rc.d1;
                d2 += a * a * rc.d2;
            }
            h += d0;
            g[0] += d1;
            hs[0][0] += d2;
            if self.dim == 2 {
                let t = v.elapsed;
                g[1] += t * d1;
                hs[0][1] += t * d2;
                hs[1][1] += t * t * d2;
            }
        }
        hs[1][0] = hs[0][1];
        let pr = &p.prec;
        if self.dim == 1 {
            h -= 0.5 * pr[0][0] * xi[0] * xi[0];
            g[0] -= pr[0][0] * xi[0];
            hs[0][0] -= pr[0][0];
        } else {
            let px = [
                pr[0][0] * xi[0] + pr[0][1] * xi[1],
                pr[1][0] * xi[0] + pr[1][1] * xi[1],
            ];
            h -= 0.5 * (xi[0] * px[0] + xi[1] * px[1]);
            for a in 0..2 {
                g[a] -= px[a];
                for b in 0..2 {
                    hs[a][b] -= pr[a][b];
                }
            }
        }
        (h, g, hs)
    }

    /// Posterior mode and the negative Hessian there.
    fn find_mode(
        &self,
        p: &Params,
        s: &PSubject,
        fx: &[f64],
        start: [f64; 2],
    ) -> Option<([f64; 2], [[f64; 2]; 2])> {
        let d = self.dim;
        let mut xi = start;
        let (mut h, mut g, mut hs) = self.log_posterior(p, s, fx, xi);
        if !h.is_finite() {
            xi = [0.0; 2];
            (h, g, hs) = self.log_posterior(p, s, fx, xi);
        }
        for _ in 0..NEWTON_MAX_ITER {
            let mut a = neg(hs, d);
            if !is_pd(a, d) {
                a = p.prec;
            }
            let step = solve(a, g, d)?;
            let mut t = 1.0;
            let mut moved = None;
            for _ in 0..40 {
                let cand = [xi[0] + t * step[0], xi[1] + t * step[1]];
                let next = self.log_posterior(p, s, fx, cand);
                if next.0.is_finite() && next.0 >= h - 1e-12 * h.abs() {
                    moved = Some((cand, next));
                    break;
                }
                t *= 0.5;
            }
            let (cand, next) = moved?;
            let size = (t * step[0]).abs().max((t * step[1]).abs());
            xi = cand;
            (h, g, hs) = next;
            if size <= NEWTON_TOL {
                let a = neg(hs, d);
                return is_pd(a, d).then_some((xi, a));
            }
        }
        None
    }

    /// Log marginal likelihood of one subject; adds its raw gradient to
    /// `raw` when given. Returns `(loglik, clamped, fell_back)`.
    fn subject(
        &self,
        p: &Params,
        s: &PSubject,
        state: &mut Adapt,
        refresh: bool,
        raw: Option<&mut [f64]>,
    ) -> (f64, u64, bool) {
        let d = self.dim;
        let fx: Vec<f64> = s
            .visits
            .iter()
            .map(|v| v.x.iter().zip(&p.beta).map(|(a, b)| a * b).sum())
            .collect();
        if refresh || !state.ready {
            let prior = ([0.0; 2], p.l);
            let found = if self.adaptive {
                self.find_mode(p, s, &fx, state.mu).and_then(|(mu, a)| {
                    let cov = inverse(a, d)?;
                    chol(cov, d).map(|c| (mu, c))
                })
            } else {
                Some(prior)
            };
            state.fell_back = found.is_none();
            let (mu, c) = found.unwrap_or(prior);
            if !state.fell_back {
                state.mu = mu;
            }
            state.c = c;
            state.centre = if state.fell_back { [0.0; 2] } else { mu };
            state.ready = true;
        }
        let (mu, c) = (state.centre, state.c);
        let log_det_c = if d == 1 {
            c[0][0].ln()
        } else {
            c[0][0].ln() + c[1][1].ln()
        };

        let (family, kind) = (self.spec.family, self.spec.cdf);
        let nq = self.grid.len();
        let nv = s.visits.len();
        let want = raw.is_some();
        let n_thr = self.raw_cov_offset - self.layout.n_beta;
        let n_cov = self.layout.n_cov;
        let mut terms = vec![0.0; nq];
        let (mut dth, mut dthr, mut dcov) = if want {
            (
                vec![0.0; nq * nv],
                vec![0.0; nq * n_thr],
                vec![0.0; nq * n_cov],
            )
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let mut eta = [0.0f64; MAX_THRESHOLDS];
        let mut geta = [0.0f64; MAX_THRESHOLDS];
        let mut clamped = 0u64;
        let n_beta = self.layout.n_beta;
        for (q, node) in self.grid.iter().enumerate() {
            let z = node.z;
            let xi = if d == 1 {
                [mu[0] + c[0][0] * z[0], 0.0]
            } else {
                [
                    mu[0] + c[0][0] * z[0],
                    mu[1] + c[1][0] * z[0] + c[1][1] * z[1],
                ]
            };
            let (lp, cg) = self.log_prior(p, xi);
            let mut ll = 0.0;
            for (vi, (v, f)) in s.visits.iter().zip(&fx).enumerate() {
                let theta = self.theta(*f, v.elapsed, xi);
                let mut sum_dtheta = 0.0;
                for &(j, y) in &v.obs {
                    let (cj, a) = (&p.offsets[j], p.alpha[j]);
                    let m = cj.len();
                    for (e, ck) in eta.iter_mut().zip(cj) {
                        *e = a * (theta - ck);
                    }
                    let (l, cl) = if want {
                        response_loglik_grad(family, kind, &eta[..m], y, Some(&mut geta[..m]))
                    } else {
                        response_loglik_grad(family, kind, &eta[..m], y, None)
                    };
                    ll += l;
                    clamped += cl as u64;
                    if want {
                        let base = q * n_thr + self.raw_item_offsets[j] - n_beta;
                        for k in 0..m {
                            sum_dtheta += a * geta[k];
                            dthr[base + k] -= a * geta[k];
                        }
                    }
                }
                if want {
                    dth[q * nv + vi] = sum_dtheta;
                }
            }
            if want {
                dcov[q * n_cov..(q + 1) * n_cov].copy_from_slice(&cg[..n_cov]);
            }
            terms[q] = node.log_weight + 0.5 * (z[0] * z[0] + z[1] * z[1]) + ll + lp;
        }
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
        let lse = mx + sum.ln();
        let loglik = lse + log_det_c + 0.5 * d as f64 * LN_2PI;

        if let Some(raw) = raw {
            for q in 0..nq {
                let w = (terms[q] - lse).exp();
                if w == 0.0 {
                    continue;
                }
                for (vi, v) in s.visits.iter().enumerate() {
                    let dt = w * dth[q * nv + vi];
                    for (r, x) in raw[..n_beta].iter_mut().zip(&v.x) {
                        *r += dt * x;
                    }
                }
                for k in 0..n_thr {
                    raw[n_beta + k] += w * dthr[q * n_thr + k];
                }
                for k in 0..n_cov {
                    raw[self.raw_cov_offset + k] += w * dcov[q * n_cov + k];
                }
            }
        }
        (loglik, clamped, state.fell_back)
    }

    /// Normalised log prior density at `ξ` and its gradient with respect to
    /// the packed covariance parameters.
    fn log_prior(&self, p: &Params, xi: [f64; 2]) -> (f64, [f64; 3]) {
        let l = p.l;
        match (self.spec.random_effects, self.spec.random_cov) {
            (RandomEffects::InterceptOnly, _) => {
                let u = xi[0] / l[0][0];
                (
                    -0.5 * u * u - l[0][0].ln() - 0.5 * LN_2PI,
                    [u * u - 1.0, 0.0, 0.0],
                )
            }
            (RandomEffects::InterceptAndSlope, CovStructure::Diagonal) => {
                let (u0, u1) = (xi[0] / l[0][0], xi[1] / l[1][1]);
                (
                    -0.5 * (u0 * u0 + u1 * u1) - l[0][0].ln() - l[1][1].ln() - LN_2PI,
                    [u0 * u0 - 1.0, u1 * u1 - 1.0, 0.0],
                )
            }
            (RandomEffects::InterceptAndSlope, CovStructure::Unstructured) => {
                let (a, b, c) = (l[0][0], l[1][0], l[1][1]);
                let u0 = xi[0] / a;
                let u1 = (xi[1] - b * u0) / c;
                let v1 = u1 / c;
                let v0 = (u0 - b * v1) / a;
                (
                    -0.5 * (u0 * u0 + u1 * u1) - a.ln() - c.ln() - LN_2PI,
                    [a * v0 * u0 - 1.0, v1 * u0, c * v1 * u1 - 1.0],
                )
            }
        }
    }

    /// Maps a raw gradient (fixed effects, `∂/∂(δ_jk + τ_j)`, covariance)
    /// onto the packed parameters.
    fn chain(&self, packed: &[f64], raw: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let mut g = vec![0.0; lay.len];
        g[..lay.n_beta].copy_from_slice(&raw[..lay.n_beta]);
        let block = |g: &mut [f64], start: usize, r: &[f64]| {
            let mut tail = 0.0;
            for k in (0..r.len()).rev() {
                tail += r[k];
                g[start + k] = if k == 0 {
                    tail
                } else {
                    packed[start + k].exp() * tail
                };
            }
        };
        match self.spec.item_design {
            ItemDesign::PerItemThresholds => {
                for (j, &(start, m)) in lay.threshold_blocks.iter().enumerate() {
                    let off = self.raw_item_offsets[j];
                    block(&mut g, start, &raw[off..off + m]);
                }
            }
            ItemDesign::RatingScale => {
                let (start, m) = lay.threshold_blocks[0];
                let mut shared = vec![0.0; m];
                for (j, &off) in self.raw_item_offsets.iter().enumerate() {
                    let r = &raw[off..off + m];
                    for k in 0..m {
                        shared[k] += r[k];
                    }
                    if j > 0 {
                        g[lay.shift_offset.expect("rating scale") + j - 1] = r.iter().sum();
                    }
                }
                block(&mut g, start, &shared);
            }
        }
        g[lay.cov_offset..].copy_from_slice(&raw[self.raw_cov_offset..]);
        g
    }

    /// Evaluates at `packed`. With `refresh` the quadrature is re-centred
    /// on each subject's posterior; otherwise the nodes of the last refresh
    /// are reused, which makes the gradient exact for that objective.
    pub fn evaluate(
        &self,
        packed: &[f64],
        states: &mut [Adapt],
        refresh: bool,
        want_grad: bool,
    ) -> Result<Evaluation> {
        let p = self.params(packed)?;
        let results: Vec<(f64, u64, bool, Vec<f64>)> = self
            .subjects
            .par_iter()
            .zip(states.par_iter_mut())
            .with_min_len(8)
            .map(|(s, w)| {
                let mut raw = if want_grad {
                    vec![0.0; self.raw_len]
                } else {
                    Vec::new()
                };
                let (ll, cl, fb) =
                    self.subject(&p, s, w, refresh, want_grad.then_some(raw.as_mut_slice()));
                (ll, cl, fb, raw)
            })
            .collect();
        let mut ev = Evaluation::default();
        let mut raw = vec![0.0; self.raw_len];
        for (ll, cl, fb, r) in &results {
            ev.loglik += ll;
            ev.clamped += cl;
            ev.fallbacks += *fb as u64;
            ev.per_subject.push(*ll);
            if want_grad {
                for (a, b) in raw.iter_mut().zip(r) {
                    *a += b;
                }
            }
        }
        if !ev.loglik.is_finite() {
            return Err(Error::Domain {
                what: "marginal log-likelihood",
                value: ev.loglik,
            });
        }
        if want_grad {
            ev.gradient = self.chain(packed, &raw);
        }
        Ok(ev)
    }

    pub fn fresh_states(&self) -> Vec<Adapt> {
        vec![Adapt::default(); self.subjects.len()]
    }
}

fn neg(h: [[f64; 2]; 2], d: usize) -> [[f64; 2]; 2] {
    if d == 1 {
        [[-h[0][0], 0.0], [0.0, 1.0]]
    } else {
        [[-h[0][0], -h[0][1]], [-h[1][0], -h[1][1]]]
    }
}

fn is_pd(a: [[f64; 2]; 2], d: usize) -> bool {
    let ok0 = a[0][0] > 0.0 && a[0][0].is_finite();
    if d == 1 {
        ok0
    } else {
        ok0 && a[0][0] * a[1][1] - a[0][1] * a[1][0] > 0.0 && a[1][1].is_finite()
    }
}

fn solve(a: [[f64; 2]; 2], g: [f64; 2], d: usize) -> Option<[f64; 2]> {
    let inv = inverse(a, d)?;
    Some([
        inv[0][0] * g[0] + inv[0][1] * g[1],
        inv[1][0] * g[0] + inv[1][1] * g[1],
    ])
}

fn inverse(a: [[f64; 2]; 2], d: usize) -> Option<[[f64; 2]; 2]> {
    if d == 1 {
        return (a[0][0] != 0.0).then(|| [[1.0 / a[0][0], 0.0], [0.0, 0.0]]);
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if !(det.is_finite() && det != 0.0) {
        return None;
    }
    Some([
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ])
}

fn chol(a: [[f64; 2]; 2], d: usize) -> Option<[[f64; 2]; 2]> {
    if !(a[0][0] > 0.0) {
        return None;
    }
    let l00 = a[0][0].sqrt();
    if d == 1 {
        return Some([[l00, 0.0], [0.0, 0.0]]);
    }
    let l10 = a[1][0] / l00;
    let rest = a[1][1] - l10 * l10;
    (rest > 0.0).then(|| [[l00, 0.0], [l10, rest.sqrt()]])
}

/// `∑_i log ∫ ∏ π(y | θ_iv(ξ)) dN(ξ; 0, Σ)` under the quadrature rule.
pub fn marginal_loglik(
    spec: &ModelSpec,
    data: &Dataset,
    params: &ParameterVector,
    quad: &QuadratureRule,
) -> Result<f64> {
    subject_logliks(spec, data, params, quad).map(|v| v.iter().sum())
}

/// Per-subject terms of [`marginal_loglik`], in dataset subject order.
pub fn subject_logliks(
    spec: &ModelSpec,
    data: &Dataset,
    params: &ParameterVector,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    let engine = Engine::new(spec, data, quad)?;
    let mut states = engine.fresh_states();
    Ok(engine
        .evaluate(params.as_slice(), &mut states, true, false)?
        .per_subject)
}

/// Marginal log-likelihood and its gradient with respect to the packed
/// parameters.
pub fn marginal_loglik_gradient(
    spec: &ModelSpec,
    data: &Dataset,
    params: &ParameterVector,
    quad: &QuadratureRule,
) -> Result<(f64, Vec<f64>)> {
    let engine = Engine::new(spec, data, quad)?;
    let mut states = engine.fresh_states();
    let ev = engine.evaluate(params.as_slice(), &mut states, true, true)?;
    Ok((ev.loglik, ev.gradient))
}

/// The marginal log-likelihood with the quadrature placement of each
/// subject held where [`LikelihoodSurface::anchor`] last put it. The
/// gradient is exact for this function; re-anchoring moves the nodes.
pub struct LikelihoodSurface<'a> {
    engine: Engine<'a>,
    states: Vec<Adapt>,
}

impl<'a> LikelihoodSurface<'a> {
    pub fn new(spec: &'a ModelSpec, data: &Dataset, quad: &QuadratureRule) -> Result<Self> {
        let engine = Engine::new(spec, data, quad)?;
        let states = engine.fresh_states();
        Ok(LikelihoodSurface { engine, states })
    }

    /// Re-centres the nodes at `params` and returns the log-likelihood there.
    pub fn anchor(&mut self, params: &ParameterVector) -> Result<f64> {
        Ok(self
            .engine
            .evaluate(params.as_slice(), &mut self.states, true, false)?
            .loglik)
    }

    pub fn value(&mut self, params: &ParameterVector) -> Result<f64> {
        Ok(self
            .engine
            .evaluate(params.as_slice(), &mut self.states, false, false)?
            .loglik)
    }

    pub fn value_and_gradient(&mut self, params: &ParameterVector) -> Result<(f64, Vec<f64>)> {
        let ev = self
            .engine
            .evaluate(params.as_slice(), &mut self.states, false, true)?;
        Ok((ev.loglik, ev.gradient))
    }
}

/// Fixed effects zero, thresholds from pooled cumulative logits, unit
/// variances.
pub fn default_init(spec: &ModelSpec, data: &Dataset) -> Result<ParameterVector> {
    let counts = data.category_counts();
    let thresholds_from = |c: &[usize]| -> Vec<f64> {
        let total: usize = c.iter().sum();
        let mut out = Vec::with_capacity(c.len() - 1);
        let mut above = total;
        for m in 1..c.len() {
            above -= c[m - 1];
            let p = ((above as f64 + 0.5) / (total as f64 + 1.0)).clamp(1e-4, 1.0 - 1e-4);
            let mut d = -(p / (1.0 - p)).ln();
            if let Some(&prev) = out.last() {
                d = f64::max(d, prev + 0.1);
            }
            out.push(d);
        }
        out
    };
    let items = match spec.item_design {
        ItemDesign::PerItemThresholds => {
            ItemParams::per_item(counts.iter().map(|c| thresholds_from(c)).collect())
        }
        ItemDesign::RatingScale => {
            let mut pooled = vec![0usize; spec.items[0].categories];
            for c in &counts {
                for (p, v) in pooled.iter_mut().zip(c) {
                    *p += v;
                }
            }
            ItemParams::rating_scale(thresholds_from(&pooled), vec![0.0; spec.items.len()])
        }
    };
    let cov = match spec.random_effects {
        RandomEffects::InterceptOnly => Covariance::intercept(1.0),
        RandomEffects::InterceptAndSlope => Covariance::diagonal(1.0, 1.0),
    };
    pack(spec, &items, &vec![0.0; spec.fixed_effects.len()], &cov)
}

fn check_not_degenerate(spec: &ModelSpec, data: &Dataset) -> Result<()> {
    for (item, c) in spec.items.iter().zip(data.category_counts()) {
        if c.iter().filter(|&&n| n > 0).count() < 2 {
            return Err(Error::data(format!(
                "item '{}' has fewer than two observed categories",
                item.id
            )));
        }
    }
    Ok(())
}

/// Lower bounds for the packed parameters.
pub fn lower_bounds(layout: &ParameterLayout) -> Vec<f64> {
    let mut lower = vec![f64::NEG_INFINITY; layout.len];
    for i in layout.log_scale_indices() {
        lower[i] = LOG_SCALE_FLOOR;
    }
    lower
}

/// Maximises the marginal likelihood.
pub fn fit(
    spec: &ModelSpec,
    data: &Dataset,
    init: Option<&ParameterVector>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !spec.is_glmm() {
        return Err(Error::spec(
            "discrimination parameters other than 1 make the predictor nonlinear; they are not estimable here",
        ));
    }
    let engine = Engine::new(spec, data, &opts.quadrature)?;
    check_not_degenerate(spec, data)?;
    let layout = spec.layout();
    let x0 = match init {
        Some(p) => {
            unpack(spec, p)?;
            p.0.clone()
        }
        None => default_init(spec, data)?.0,
    };
    let lower = lower_bounds(&layout);
    let mut fixed = vec![false; layout.len];
    for &i in &opts.fixed {
        *fixed
            .get_mut(i)
            .ok_or_else(|| Error::spec(format!("fixed index {i} out of range")))? = true;
    }
    let mut states = engine.fresh_states();
    let res = {
        let mut obj = |x: &[f64], g: &mut [f64], point: Point| -> Result<f64> {
            let base = point == Point::Base;
            let ev = engine.evaluate(x, &mut states, base, base)?;
            if !base {
                return Ok(-ev.loglik);
            }
            for (gi, e) in g.iter_mut().zip(&ev.gradient) {
                *gi = -e;
            }
            Ok(-ev.loglik)
        };
        minimize(&mut obj, &x0, &lower, &fixed, &opts.bfgs)?
    };
    let final_eval = engine.evaluate(&res.x, &mut states, true, false)?;
    let at_bound_idx: Vec<usize> = (0..layout.len)
        .filter(|&i| res.x[i] - lower[i] < 1e-6)
        .collect();
    let mut excluded = fixed.clone();
    for &i in &at_bound_idx {
        excluded[i] = true;
    }
    let packed_cov = if opts.standard_errors && res.converged {
        observed_information_inverse(&engine, &res.x, &excluded, &mut states)?
    } else {
        None
    };
    let params = ParameterVector(res.x.clone());
    let (items, beta, covariance) = unpack(spec, &params)?;
    let estimates = natural_estimates(spec, &layout, &res.x, packed_cov.as_ref(), &excluded);
    let n_params = layout.len - opts.fixed.len();
    let result = FitResult {
        spec: spec.clone(),
        items,
        beta,
        covariance,
        loglik: final_eval.loglik,
        bic: bic_value(final_eval.loglik, n_params, data.n_subjects()),
        n_params,
        n_subjects: data.n_subjects(),
        n_observations: data.n_observations(),
        estimates,
        at_bound: at_bound_idx
            .iter()
            .map(|&i| layout.names[i].clone())
            .collect(),
        convergence: Convergence {
            converged: res.converged,
            iterations: res.iterations,
            evaluations: res.evaluations,
            relative_gradient: res.relative_gradient,
        },
        diagnostics: Diagnostics {
            clamped_probabilities: final_eval.clamped,
            inner_fallbacks: final_eval.fallbacks,
            information_ok: packed_cov.is_some(),
        },
        dataset_fingerprint: data.fingerprint(),
        quadrature_nodes: opts.quadrature.nodes_per_dim,
        params,
    };
    if !result.convergence.converged {
        return Err(Error::NoConvergence {
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Inverse of the central-difference Hessian of `-loglik` over the
/// non-excluded coordinates, embedded in a full-size matrix.
fn observed_information_inverse(
    engine: &Engine,
    x: &[f64],
    excluded: &[bool],
    states: &mut [Adapt],
) -> Result<Option<DMatrix<f64>>> {
    let n = x.len();
    let free: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
    let k = free.len();
    let mut info = DMatrix::<f64>::zeros(k, k);
    let mut xp = x.to_vec();
    for (col, &i) in free.iter().enumerate() {
        let h = 1e-4 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let gp = engine.evaluate(&xp, states, false, true)?.gradient;
        xp[i] = x[i] - h;
        let gm = engine.evaluate(&xp, states, false, true)?.gradient;
        xp[i] = x[i];
        for (row, &r) in free.iter().enumerate() {
            info[(row, col)] = -(gp[r] - gm[r]) / (2.0 * h);
        }
    }
    let sym = (&info + info.transpose()) * 0.5;
    let Some(ch) = sym.cholesky() else {
        return Ok(None);
    };
    let inv = ch.inverse();
    let mut full = DMatrix::<f64>::from_element(n, n, f64::NAN);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            full[(i, j)] = inv[(a, b)];
        }
    }
    Ok(Some(full))
}

/// Natural-scale estimates with delta-method standard errors.
fn natural_estimates(
    spec: &ModelSpec,
    layout: &ParameterLayout,
    x: &[f64],
    packed_cov: Option<&DMatrix<f64>>,
    excluded: &[bool],
) -> Vec<Estimate> {
    let n = x.len();
    // rows: (name, value, d value / d packed, is fixed effect)
    let mut rows: Vec<(String, f64, DVector<f64>, bool)> = Vec::new();
    let unit = |i: usize, scale: f64| {
        let mut v = DVector::zeros(n);
        v[i] = scale;
        v
    };
    for (i, name) in spec.fixed_effect_names().into_iter().enumerate() {
        rows.push((name, x[i], unit(i, 1.0), true));
    }
    let block_rows =
        |label: &str, start: usize, m: usize, rows: &mut Vec<(String, f64, DVector<f64>, bool)>| {
            let mut acc = x[start];
            let mut jac = unit(start, 1.0);
            rows.push((format!("{label}.delta1"), acc, jac.clone(), false));
            for k in 1..m {
                let gap = x[start + k].exp();
                acc += gap;
                jac[start + k] = gap;
                rows.push((format!("{label}.delta{}", k + 1), acc, jac.clone(), false));
            }
        };
    match spec.item_design {
        ItemDesign::PerItemThresholds => {
            for (item, &(start, m)) in spec.items.iter().zip(&layout.threshold_blocks) {
                block_rows(&item.id, start, m, &mut rows);
            }
        }
        ItemDesign::RatingScale => {
            let (start, m) = layout.threshold_blocks[0];
            block_rows("shared", start, m, &mut rows);
            let off = layout.shift_offset.expect("rating scale");
            for (j, item) in spec.items.iter().enumerate().skip(1) {
                let i = off + j - 1;
                rows.push((format!("{}.shift", item.id), x[i], unit(i, 1.0), false));
            }
        }
    }
    let c = layout.cov_offset;
    match (spec.random_effects, spec.random_cov) {
        (RandomEffects::InterceptOnly, _) => {
            let v = (2.0 * x[c]).exp();
            rows.push(("var0".into(), v, unit(c, 2.0 * v), false));
        }
        (RandomEffects::InterceptAndSlope, CovStructure::Diagonal) => {
            let (v0, v1) = ((2.0 * x[c]).exp(), (2.0 * x[c + 1]).exp());
            rows.push(("var0".into(), v0, unit(c, 2.0 * v0), false));
            rows.push(("var1".into(), v1, unit(c + 1, 2.0 * v1), false));
        }
        (RandomEffects::InterceptAndSlope, CovStructure::Unstructured) => {
            let (a, b, cc) = (x[c].exp(), x[c + 1], x[c + 2].exp());
            rows.push(("var0".into(), a * a, unit(c, 2.0 * a * a), false));
            let mut j1 = unit(c + 1, 2.0 * b);
            j1[c + 2] = 2.0 * cc * cc;
            rows.push(("var1".into(), b * b + cc * cc, j1, false));
            let mut j01 = unit(c, a * b);
            j01[c + 1] = a;
            rows.push(("cov01".into(), a * b, j01, false));
        }
    }
    rows.into_iter()
        .map(|(name, value, jac, is_fixed)| {
            let depends_on_excluded = (0..n).any(|i| jac[i] != 0.0 && excluded[i]);
            let se = match packed_cov {
                Some(v) if !depends_on_excluded => {
                    let idx: Vec<usize> = (0..n).filter(|&i| jac[i] != 0.0).collect();
                    let mut var = 0.0;
                    for &i in &idx {
                        for &j in &idx {
                            var += jac[i] * v[(i, j)] * jac[j];
                        }
                    }
                    if var > 0.0 {
                        var.sqrt()
                    } else {
                        f64::NAN
                    }
                }
                _ => f64::NAN,
            };
            let (z, p) = match (is_fixed, wald(value, se)) {
                (true, Ok((z, p))) => (Some(z), Some(p)),
                _ => (None, None),
            };
            Estimate {
                name,
                estimate: value,
                se,
                z,
                p,
            }
        })
        .collect()
}

/// Index of the packed parameter named `name`.
pub fn parameter_index(spec: &ModelSpec, name: &str) -> Option<usize> {
    spec.layout().names.iter().position(|n| n == name)
}
