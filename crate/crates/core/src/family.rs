//! Ratio families: how a vector of linear predictors `(η_1, …, η_M)` maps
//! to the probabilities of categories `0..=M`.
//!
//! All three families use the descending convention: a larger latent trait
//! pushes mass towards higher categories. For the cumulative family
//! `Pr(Y ≥ m) = F(η_m)`; the sequential family is the continuation form
//! `Pr(Y ≥ m | Y ≥ m-1) = F(η_m)`; the adjacent family satisfies
//! `π_m / (π_{m-1} + π_m) = F(η_m)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::CdfKind;

/// Largest number of thresholds (`M`) supported per item.
pub const MAX_THRESHOLDS: usize = 15;

/// Log-probabilities below this are clamped in the likelihood.
pub const LOG_PROB_FLOOR: f64 = -34.538_776_394_910_684; // ln(1e-15)

const ORDER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioFamily {
    Adjacent,
    Cumulative,
    Sequential,
}

impl RatioFamily {
    pub const ALL: [RatioFamily; 3] = [
        RatioFamily::Adjacent,
        RatioFamily::Cumulative,
        RatioFamily::Sequential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RatioFamily::Adjacent => "adjacent",
            RatioFamily::Cumulative => "cumulative",
            RatioFamily::Sequential => "sequential",
        }
    }
}

impl fmt::Display for RatioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RatioFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RatioFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::spec(format!("unknown ratio family '{s}'")))
    }
}

/// Probabilities of categories `0..=M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryDistribution(Vec<f64>);

impl CategoryDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn n_categories(&self) -> usize {
        self.0.len()
    }

    pub fn reversed(&self) -> CategoryDistribution {
        CategoryDistribution(self.0.iter().rev().copied().collect())
    }

    /// Sum categories `m-1` and `m` (1 ≤ m ≤ M).
    pub fn merged(&self, m: usize) -> Result<CategoryDistribution> {
        if m == 0 || m >= self.0.len() {
            return Err(Error::Category {
                item: None,
                category: m as i64,
                max: self.0.len().saturating_sub(1),
            });
        }
        let mut out = self.0.clone();
        out[m - 1] += out[m];
        out.remove(m);
        Ok(CategoryDistribution(out))
    }
}

fn check_eta(eta: &[f64]) -> Result<()> {
    if eta.len() > MAX_THRESHOLDS {
        return Err(Error::spec(format!(
            "{} thresholds exceed the supported maximum of {MAX_THRESHOLDS}",
            eta.len()
        )));
    }
    for &e in eta {
        if !e.is_finite() {
            return Err(Error::Domain {
                what: "linear predictor",
                value: e,
            });
        }
    }
    Ok(())
}

/// `ln(e^a - e^b)` for `a > b`.
#[inline]
fn log_diff_exp(a: f64, b: f64) -> f64 {
    a + (-(b - a).exp_m1()).ln()
}

#[inline]
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(F(a) - F(b))` for `a ≥ b`, choosing the tail that avoids cancellation.
#[inline]
fn log_cdf_gap(kind: CdfKind, a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        let (sa, sb) = (kind.log_sf(a), kind.log_sf(b));
        if sa >= sb {
            f64::NEG_INFINITY
        } else {
            log_diff_exp(sb, sa)
        }
    } else {
        let (fa, fb) = (kind.log_cdf(a), kind.log_cdf(b));
        if fb >= fa {
            f64::NEG_INFINITY
        } else {
            log_diff_exp(fa, fb)
        }
    }
}

fn validate_cumulative(kind: CdfKind, eta: &[f64]) -> Result<()> {
    for m in 1..eta.len() {
        if kind.cdf(eta[m]) - kind.cdf(eta[m - 1]) > ORDER_TOLERANCE {
            return Err(Error::Ordering { index: m + 1 });
        }
    }
    Ok(())
}

/// Log-probabilities of categories `0..=M` (unclamped).
pub fn log_category_probs(family: RatioFamily, kind: CdfKind, eta: &[f64]) -> Result<Vec<f64>> {
    check_eta(eta)?;
    let m_max = eta.len();
    let mut out = vec![0.0; m_max + 1];
    match family {
        RatioFamily::Cumulative => {
            validate_cumulative(kind, eta)?;
            if m_max == 0 {
                return Ok(out);
            }
            out[0] = kind.log_sf(eta[0]);
            for m in 1..m_max {
                out[m] = log_cdf_gap(kind, eta[m - 1], eta[m]);
            }
            out[m_max] = kind.log_cdf(eta[m_max - 1]);
        }
        RatioFamily::Adjacent => {
            let mut acc = 0.0;
            for (m, &e) in eta.iter().enumerate() {
                acc += kind.log_cdf(e) - kind.log_sf(e);
                out[m + 1] = acc;
            }
            let lse = log_sum_exp(&out);
            out.iter_mut().for_each(|v| *v -= lse);
        }
        RatioFamily::Sequential => {
            let mut reached = 0.0;
            for m in 0..=m_max {
                out[m] = reached + if m < m_max { kind.log_sf(eta[m]) } else { 0.0 };
                if m < m_max {
                    reached += kind.log_cdf(eta[m]);
                }
            }
        }
    }
    Ok(out)
}

pub fn category_probs(
    family: RatioFamily,
    kind: CdfKind,
    eta: &[f64],
) -> Result<CategoryDistribution> {
    let logs = log_category_probs(family, kind, eta)?;
    Ok(CategoryDistribution(
        logs.into_iter().map(f64::exp).collect(),
    ))
}

/// Linear predictors describing the same model with the category order
/// reversed: `η'_m = -η_{M+1-m}`.
pub fn reverse_categories(family: RatioFamily, kind: CdfKind, eta: &[f64]) -> Result<Vec<f64>> {
    if family == RatioFamily::Sequential {
        return Err(Error::UnsupportedTransform(
            "sequential models are not reversible".into(),
        ));
    }
    if !kind.is_symmetric() {
        return Err(Error::UnsupportedTransform(format!(
            "reversal requires a symmetric cdf, got {kind}"
        )));
    }
    check_eta(eta)?;
    Ok(eta.iter().rev().map(|&e| -e).collect())
}

/// Linear predictors of the cumulative model in which categories `m-1` and
/// `m` are pooled.
pub fn merge_categories(family: RatioFamily, eta: &[f64], m: usize) -> Result<Vec<f64>> {
    if family != RatioFamily::Cumulative {
        return Err(Error::UnsupportedTransform(format!(
            "category merging is only invariant for cumulative models, got {family}"
        )));
    }
    if m == 0 || m > eta.len() {
        return Err(Error::Category {
            item: None,
            category: m as i64,
            max: eta.len(),
        });
    }
    let mut out = eta.to_vec();
    out.remove(m - 1);
    Ok(out)
}

/// Log-likelihood contribution of one response together with its
/// derivatives with respect to the latent trait.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ResponseCurvature {
    pub loglik: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Per-point quantities of `F` used by the derivative formulas.
#[derive(Clone, Copy)]
struct Ratios {
    /// f/F
    r: f64,
    /// -f/S
    q: f64,
    dlog_pdf: f64,
}

#[inline]
fn ratios(kind: CdfKind, eta: f64, log_cdf: f64, log_sf: f64) -> Ratios {
    let lp = kind.log_pdf(eta);
    Ratios {
        r: (lp - log_cdf).exp(),
        q: -(lp - log_sf).exp(),
        dlog_pdf: kind.dlog_pdf(eta),
    }
}

/// Log-likelihood of category `y` and its gradient with respect to each
/// linear predictor, written into `grad[..M]`. Returns `(loglik, clamped)`.
#[inline]
pub(crate) fn response_loglik_grad(
    family: RatioFamily,
    kind: CdfKind,
    eta: &[f64],
    y: usize,
    grad: Option<&mut [f64]>,
) -> (f64, bool) {
    let m_max = eta.len();
    let ll = match family {
        RatioFamily::Cumulative => {
            let ll = if y == 0 {
                kind.log_sf(eta[0])
            } else if y == m_max {
                kind.log_cdf(eta[m_max - 1])
            } else {
                log_cdf_gap(kind, eta[y - 1], eta[y])
            };
            if let Some(g) = grad {
                g[..m_max].iter_mut().for_each(|v| *v = 0.0);
                if ll > LOG_PROB_FLOOR {
                    if y > 0 {
                        g[y - 1] = (kind.log_pdf(eta[y - 1]) - ll).exp();
                    }
                    if y < m_max {
                        g[y] = -(kind.log_pdf(eta[y]) - ll).exp();
                    }
                }
            }
            ll
        }
        RatioFamily::Sequential => {
            let mut ll = 0.0;
            for &e in &eta[..y] {
                ll += kind.log_cdf(e);
            }
            if y < m_max {
                ll += kind.log_sf(eta[y]);
            }
            if let Some(g) = grad {
                g[..m_max].iter_mut().for_each(|v| *v = 0.0);
                if ll > LOG_PROB_FLOOR {
                    for k in 0..y {
                        g[k] = (kind.log_pdf(eta[k]) - kind.log_cdf(eta[k])).exp();
                    }
                    if y < m_max {
                        g[y] = -(kind.log_pdf(eta[y]) - kind.log_sf(eta[y])).exp();
                    }
                }
            }
            ll
        }
        RatioFamily::Adjacent => {
            let mut cum = [0.0f64; MAX_THRESHOLDS + 1];
            let mut slope = [0.0f64; MAX_THRESHOLDS];
            let logistic = kind == CdfKind::Logistic;
            let want_grad = grad.is_some();
            for (k, &e) in eta.iter().enumerate() {
                if logistic {
                    cum[k + 1] = cum[k] + e;
                    slope[k] = 1.0;
                } else {
                    let (lc, ls) = (kind.log_cdf(e), kind.log_sf(e));
                    cum[k + 1] = cum[k] + lc - ls;
                    if want_grad {
                        let rt = ratios(kind, e, lc, ls);
                        slope[k] = rt.r - rt.q;
                    }
                }
            }
            let lse = log_sum_exp(&cum[..=m_max]);
            let ll = cum[y] - lse;
            if let Some(g) = grad {
                // dℓ/dη_k = a'_k (1[k < y] - Pr(Y > k)) with 0-based k
                let mut upper = 0.0;
                for k in (0..m_max).rev() {
                    upper += (cum[k + 1] - lse).exp();
                    let ind = if k < y { 1.0 } else { 0.0 };
                    g[k] = if ll > LOG_PROB_FLOOR {
                        slope[k] * (ind - upper)
                    } else {
                        0.0
                    };
                }
            }
            ll
        }
    };
    if ll > LOG_PROB_FLOOR {
        (ll, false)
    } else {
        (LOG_PROB_FLOOR, true)
    }
}

/// Log-likelihood of category `y` as a function of a common shift of all
/// linear predictors, with first and second derivatives in that shift.
pub(crate) fn response_curvature(
    family: RatioFamily,
    kind: CdfKind,
    eta: &[f64],
    y: usize,
) -> ResponseCurvature {
    let m_max = eta.len();
    let (ll, d1, d2) = match family {
        RatioFamily::Cumulative => {
            if y == 0 {
                let e = eta[0];
                let (lc, ls) = (kind.log_cdf(e), kind.log_sf(e));
                let rt = ratios(kind, e, lc, ls);
                (ls, rt.q, rt.q * rt.dlog_pdf - rt.q * rt.q)
            } else if y == m_max {
                let e = eta[m_max - 1];
                let (lc, ls) = (kind.log_cdf(e), kind.log_sf(e));
                let rt = ratios(kind, e, lc, ls);
                (lc, rt.r, rt.r * rt.dlog_pdf - rt.r * rt.r)
            } else {
                let (a, b) = (eta[y - 1], eta[y]);
                let ll = log_cdf_gap(kind, a, b);
                let fa = (kind.log_pdf(a) - ll).exp();
                let fb = (kind.log_pdf(b) - ll).exp();
                let d1 = fa - fb;
                let d2 = fa * kind.dlog_pdf(a) - fb * kind.dlog_pdf(b) - d1 * d1;
                (ll, d1, d2)
            }
        }
        RatioFamily::Sequential => {
            let (mut ll, mut d1, mut d2) = (0.0, 0.0, 0.0);
            for &e in &eta[..y] {
                let (lc, ls) = (kind.log_cdf(e), kind.log_sf(e));
                let rt = ratios(kind, e, lc, ls);
                ll += lc;
                d1 += rt.r;
                d2 += rt.r * rt.dlog_pdf - rt.r * rt.r;
            }
            if y < m_max {
                let e = eta[y];
                let (lc, ls) = (kind.log_cdf(e), kind.log_sf(e));
                let rt = ratios(kind, e, lc, ls);
                ll += ls;
                d1 += rt.q;
                d2 += rt.q * rt.dlog_pdf - rt.q * rt.q;
            }
            (ll, d1, d2)
        }
        RatioFamily::Adjacent => {
            // A_m = Σ_{k≤m} a_k, B_m = dA_m/dθ, C_m = d²A_m/dθ²
            let mut a = [0.0f64; MAX_THRESHOLDS + 1];
            let mut b = [0.0f64; MAX_THRESHOLDS + 1];
            let mut c = [0.0f64; MAX_THRESHOLDS + 1];
            for (k, &e) in eta.iter().enumerate() {
                if kind == CdfKind::Logistic {
                    a[k + 1] = a[k] + e;
                    b[k + 1] = b[k] + 1.0;
                    c[k + 1] = c[k];
                } else {
                    let (lc, ls) = (kind.log_cdf(e), kind.log_sf(e));
                    let rt = ratios(kind, e, lc, ls);
                    let da = rt.r - rt.q;
                    let dr = rt.r * rt.dlog_pdf - rt.r * rt.r;
                    let dq = rt.q * rt.dlog_pdf - rt.q * rt.q;
                    a[k + 1] = a[k] + lc - ls;
                    b[k + 1] = b[k] + da;
                    c[k + 1] = c[k] + dr - dq;
                }
            }
            let lse = log_sum_exp(&a[..=m_max]);
            let (mut eb, mut eb2, mut ec) = (0.0, 0.0, 0.0);
            for m in 0..=m_max {
                let p = (a[m] - lse).exp();
                eb += p * b[m];
                eb2 += p * b[m] * b[m];
                ec += p * c[m];
            }
            (a[y] - lse, b[y] - eb, c[y] - ec - (eb2 - eb * eb))
        }
    };
    if ll > LOG_PROB_FLOOR {
        ResponseCurvature { loglik: ll, d1, d2 }
    } else {
        ResponseCurvature {
            loglik: LOG_PROB_FLOOR,
            d1: 0.0,
            d2: 0.0,
        }
    }
}
