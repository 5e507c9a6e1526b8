//! Cumulative distribution functions used as the `F` component of the
//! ordinal link, together with densities and their log-derivatives.
//!
//! Every function is evaluated in a numerically careful form: survival
//! functions are computed directly instead of as `1 - F`, and log-scale
//! variants avoid underflow in the tails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::Neg;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfKind {
    Logistic,
    Gaussian,
    GumbelMax,
    GumbelMin,
}

/// Everything the likelihood layer needs about `F` at a single point.
#[derive(Debug, Clone, Copy)]
pub struct CdfPoint {
    pub log_cdf: f64,
    pub log_sf: f64,
    pub log_pdf: f64,
    /// d/dη log f(η)
    pub dlog_pdf: f64,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// log Φ(x), accurate far into the lower tail.
fn log_ndtr(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > -20.0 {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

impl CdfKind {
    pub const ALL: [CdfKind; 4] = [
        CdfKind::Logistic,
        CdfKind::Gaussian,
        CdfKind::GumbelMax,
        CdfKind::GumbelMin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CdfKind::Logistic => "logistic",
            CdfKind::Gaussian => "gaussian",
            CdfKind::GumbelMax => "gumbel_max",
            CdfKind::GumbelMin => "gumbel_min",
        }
    }

    /// Symmetric about zero, i.e. `F(-η) = 1 - F(η)`.
    pub fn is_symmetric(self) -> bool {
        matches!(self, CdfKind::Logistic | CdfKind::Gaussian)
    }

    #[inline]
    pub fn cdf(self, eta: f64) -> f64 {
        match self {
            CdfKind::Logistic => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            CdfKind::Gaussian => 0.5 * libm::erfc(-eta * FRAC_1_SQRT_2),
            CdfKind::GumbelMax => (-(-eta).exp()).exp(),
            CdfKind::GumbelMin => -(-(eta.exp())).exp_m1(),
        }
    }

    /// Survival function `1 - F(η)`, computed without cancellation.
    #[inline]
    pub fn sf(self, eta: f64) -> f64 {
        match self {
            CdfKind::Logistic | CdfKind::Gaussian => self.cdf(-eta),
            CdfKind::GumbelMax => -(-(-eta).exp()).exp_m1(),
            CdfKind::GumbelMin => (-(eta.exp())).exp(),
        }
    }

    #[inline]
    pub fn pdf(self, eta: f64) -> f64 {
        match self {
            CdfKind::Logistic => {
                let e = (-eta.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            CdfKind::Gaussian => (-0.5 * eta * eta).exp() / (2.0 * PI).sqrt(),
            _ => self.log_pdf(eta).exp(),
        }
    }

    #[inline]
    pub fn log_cdf(self, eta: f64) -> f64 {
        match self {
            CdfKind::Logistic => -softplus(-eta),
            CdfKind::Gaussian => log_ndtr(eta),
            CdfKind::GumbelMax => -(-eta).exp(),
            CdfKind::GumbelMin if eta > 0.0 => (-(eta.exp())).exp().neg().ln_1p(),
            CdfKind::GumbelMin => (-(-(eta.exp())).exp_m1()).ln(),
        }
    }

    #[inline]
    pub fn log_sf(self, eta: f64) -> f64 {
        match self {
            CdfKind::Logistic => -softplus(eta),
            CdfKind::Gaussian => log_ndtr(-eta),
            CdfKind::GumbelMax if eta < 0.0 => (-(-eta).exp()).exp().neg().ln_1p(),
            CdfKind::GumbelMax => (-(-(-eta).exp()).exp_m1()).ln(),
            CdfKind::GumbelMin => -eta.exp(),
        }
    }

    #[inline]
    pub fn log_pdf(self, eta: f64) -> f64 {
        match self {
            CdfKind::Logistic => -eta.abs() - 2.0 * (-eta.abs()).exp().ln_1p(),
            CdfKind::Gaussian => -0.5 * eta * eta - LN_SQRT_2PI,
            CdfKind::GumbelMax => -eta - (-eta).exp(),
            CdfKind::GumbelMin => eta - eta.exp(),
        }
    }

    /// d/dη log f(η), so that `f'(η) = f(η) * dlog_pdf(η)`.
    #[inline]
    pub fn dlog_pdf(self, eta: f64) -> f64 {
        match self {
            CdfKind::Logistic => -(0.5 * eta).tanh(),
            CdfKind::Gaussian => -eta,
            CdfKind::GumbelMax => (-eta).exp() - 1.0,
            CdfKind::GumbelMin => 1.0 - eta.exp(),
        }
    }

    #[inline]
    pub fn point(self, eta: f64) -> CdfPoint {
        CdfPoint {
            log_cdf: self.log_cdf(eta),
            log_sf: self.log_sf(eta),
            log_pdf: self.log_pdf(eta),
            dlog_pdf: self.dlog_pdf(eta),
        }
    }
}

impl fmt::Display for CdfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CdfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CdfKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::spec(format!("unknown cdf '{s}'")))
    }
}

fn check_finite(eta: f64) -> Result<()> {
    if eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "linear predictor",
            value: eta,
        })
    }
}

pub fn cdf_eval(kind: CdfKind, eta: f64) -> Result<f64> {
    check_finite(eta)?;
    Ok(kind.cdf(eta))
}

pub fn pdf_eval(kind: CdfKind, eta: f64) -> Result<f64> {
    check_finite(eta)?;
    Ok(kind.pdf(eta))
}

pub fn is_symmetric(kind: CdfKind) -> bool {
    kind.is_symmetric()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    }

    #[test]
    fn reference_values() {
        assert_eq!(cdf_eval(CdfKind::Logistic, 0.0).unwrap(), 0.5);
        assert!((cdf_eval(CdfKind::GumbelMax, 0.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        // 1/(1+e^{-2.1}) from an independent evaluation
        assert!(
            (cdf_eval(CdfKind::Logistic, 2.1).unwrap() - 0.890_903_178_804_387_1).abs() < 1e-12
        );
        assert!((cdf_eval(CdfKind::Gaussian, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((pdf_eval(CdfKind::Logistic, 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(
            (pdf_eval(CdfKind::Gaussian, 0.0).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15
        );
    }

    #[test]
    fn gaussian_matches_tabulated_values() {
        // Φ(1), Φ(-3), Φ(-8) to full double precision.
        let cases = [
            (1.0, 0.841_344_746_068_542_9),
            (-3.0, 0.001_349_898_031_630_094_6),
            (-8.0, 6.220_960_574_271_784e-16),
        ];
        for (x, want) in cases {
            let got = CdfKind::Gaussian.cdf(x);
            assert!(((got - want) / want).abs() < 1e-12, "Φ({x}) = {got}");
        }
    }

    #[test]
    fn gumbel_max_density_matches_finite_difference() {
        let h = 1e-5;
        let fd = (CdfKind::GumbelMax.cdf(1.0 + h) - CdfKind::GumbelMax.cdf(1.0 - h)) / (2.0 * h);
        assert!((pdf_eval(CdfKind::GumbelMax, 1.0).unwrap() - fd).abs() < 1e-8);
    }

    #[test]
    fn symmetry_flags() {
        assert!(is_symmetric(CdfKind::Logistic));
        assert!(is_symmetric(CdfKind::Gaussian));
        assert!(!is_symmetric(CdfKind::GumbelMax));
        assert!(!is_symmetric(CdfKind::GumbelMin));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        for kind in CdfKind::ALL {
            assert!(matches!(
                cdf_eval(kind, f64::NAN),
                Err(Error::Domain { .. })
            ));
            assert!(matches!(
                pdf_eval(kind, f64::INFINITY),
                Err(Error::Domain { .. })
            ));
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in CdfKind::ALL {
            assert_eq!(kind.name().parse::<CdfKind>().unwrap(), kind);
        }
        assert!("probit".parse::<CdfKind>().is_err());
    }

    #[test]
    fn strictly_increasing_inside_unit_interval() {
        let h = 1e-3;
        for kind in CdfKind::ALL {
            // F and S round to 0 or 1 in the tails, so strict bounds and
            // monotonicity are checked on the log scale; the Gumbel tails
            // decay doubly exponentially and leave the double range sooner.
            let reach = if kind.is_symmetric() { 10.0 } else { 6.0 };
            for eta in grid(-reach, reach, 2001) {
                let (lc, ls) = (kind.log_cdf(eta), kind.log_sf(eta));
                assert!(lc.is_finite() && lc < 0.0, "{kind} log F({eta}) = {lc}");
                assert!(ls.is_finite() && ls < 0.0, "{kind} log S({eta}) = {ls}");
                assert!(kind.log_cdf(eta + h) > lc);
                assert!(kind.log_sf(eta + h) < ls);
            }
        }
    }

    #[test]
    fn symmetric_kinds_reflect() {
        for kind in [CdfKind::Logistic, CdfKind::Gaussian] {
            for eta in grid(-10.0, 10.0, 401) {
                assert!((kind.cdf(-eta) - (1.0 - kind.cdf(eta))).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        let h = 1e-5;
        for kind in CdfKind::ALL {
            for eta in grid(-8.0, 8.0, 201) {
                let fd = (kind.cdf(eta + h) - kind.cdf(eta - h)) / (2.0 * h);
                let pdf = pdf_eval(kind, eta).unwrap();
                assert!(pdf >= 0.0);
                assert!((pdf - fd).abs() <= 1e-6, "{kind} at {eta}: {pdf} vs {fd}");
            }
        }
    }

    #[test]
    fn log_forms_agree_with_direct_forms() {
        for kind in CdfKind::ALL {
            for eta in grid(-6.0, 6.0, 121) {
                assert!((kind.log_cdf(eta).exp() - kind.cdf(eta)).abs() < 1e-14);
                assert!((kind.log_sf(eta).exp() - kind.sf(eta)).abs() < 1e-14);
                assert!((kind.sf(eta) + kind.cdf(eta) - 1.0).abs() < 1e-14);
                assert!((kind.log_pdf(eta).exp() - kind.pdf(eta)).abs() < 1e-14);
                let h = 1e-5;
                let fd = (kind.log_pdf(eta + h) - kind.log_pdf(eta - h)) / (2.0 * h);
                assert!((kind.dlog_pdf(eta) - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_log_tail_is_continuous() {
        let below = log_ndtr(-20.0 - 1e-9);
        let above = log_ndtr(-20.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
        assert!(log_ndtr(-40.0).is_finite());
    }
}
