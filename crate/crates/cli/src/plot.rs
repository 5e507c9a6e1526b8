//! Tidy plot data: distribution-function curves and stacked category
//! probabilities along latent-trait trajectories.

use std::io::Write;

use irtlong::config::ConfigDoc;
use irtlong::family::category_probs;
use irtlong::link::CdfKind;
use irtlong::model::{latent_trait, ItemDesign, ItemParams, ModelSpec};
use irtlong::{Error, Result};

pub const CDF_KINDS: [CdfKind; 4] = [
    CdfKind::Logistic,
    CdfKind::Gaussian,
    CdfKind::GumbelMax,
    CdfKind::GumbelMin,
];
pub const DISCRIMINATIONS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Values in `[lo, hi]` on a fixed step, computed from integer counters so
/// that output is identical on every platform.
fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

/// `cdf,eta,cdf_value,density` over `η ∈ [-6, 6]`.
pub fn write_cdf_curves<W: Write>(out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cdf", "eta", "cdf_value", "density"])?;
    for kind in CDF_KINDS {
        for eta in grid(-6.0, 6.0, 0.05) {
            w.write_record([
                kind.name().to_string(),
                format!("{eta:.2}"),
                format!("{:.8}", kind.cdf(eta)),
                format!("{:.8}", kind.pdf(eta)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `alpha,theta,probability`: logistic `F(α θ)` for several slopes.
pub fn write_discrimination_curves<W: Write>(out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "theta", "probability"])?;
    for alpha in DISCRIMINATIONS {
        for theta in grid(-6.0, 6.0, 0.05) {
            w.write_record([
                alpha.to_string(),
                format!("{theta:.2}"),
                format!("{:.8}", CdfKind::Logistic.cdf(alpha * theta)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A named assignment of covariate values.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub label: String,
    pub covariates: Vec<f64>,
}

/// Cartesian product of per-covariate value lists, in order.
pub fn profiles(names: &[String], values: &[Vec<f64>]) -> Vec<Profile> {
    let mut out = vec![Profile {
        label: String::new(),
        covariates: Vec::new(),
    }];
    for (name, vals) in names.iter().zip(values) {
        let mut next = Vec::new();
        for p in &out {
            for v in vals {
                let mut c = p.covariates.clone();
                c.push(*v);
                let label = if p.label.is_empty() {
                    format!("{name}={v}")
                } else {
                    format!("{};{name}={v}", p.label)
                };
                next.push(Profile {
                    label,
                    covariates: c,
                });
            }
        }
        out = next;
    }
    if out.len() == 1 && out[0].label.is_empty() {
        out[0].label = "all".into();
    }
    out
}

/// Stacked category probabilities. `theta_grid` rows cover `θ ∈ [-4, 4]`;
/// `trajectory` rows follow `θ(t)` with zero random effects for each
/// profile and time. `lower`/`upper` bound each category's band.
pub fn write_decomposition<W: Write>(
    spec: &ModelSpec,
    items: &ItemParams,
    beta: &[f64],
    times: &[f64],
    profiles: &[Profile],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "section",
        "item",
        "profile",
        "time",
        "theta",
        "category",
        "probability",
        "lower",
        "upper",
    ])?;
    let emit = |w: &mut csv::Writer<W>,
                section: &str,
                profile: &str,
                time: Option<f64>,
                theta: f64|
     -> Result<()> {
        for (j, item) in spec.items.iter().enumerate() {
            let p = category_probs(spec.family, spec.cdf, &items.etas(j, theta))?;
            let mut lower = 0.0;
            for (m, pm) in p.probs().iter().enumerate() {
                let upper = (lower + pm).min(1.0);
                w.write_record([
                    section.to_string(),
                    item.id.clone(),
                    profile.to_string(),
                    time.map(|t| t.to_string()).unwrap_or_default(),
                    format!("{theta:.6}"),
                    m.to_string(),
                    format!("{pm:.6}"),
                    format!("{lower:.6}"),
                    format!("{upper:.6}"),
                ])?;
                lower = upper;
            }
        }
        Ok(())
    };
    for theta in grid(-4.0, 4.0, 0.1) {
        emit(&mut w, "theta_grid", "", None, theta)?;
    }
    let xi = vec![0.0; spec.re_dim()];
    for p in profiles {
        for &t in times {
            let theta = latent_trait(spec, beta, &xi, &p.covariates, t, spec.baseline_time)?;
            emit(&mut w, "trajectory", &p.label, Some(t), theta)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parameter values for `plotdata`, read from the key-value format:
///
/// ```text
/// beta = [0, -0.330, -0.188]
/// thresholds.<item> = [-2.1, 1, 2.75]    # one line per item
/// shift.<item> = 0.4                     # rating-scale designs only
/// times = [0, 1, 2, 4]                   # trajectory times
/// profiles.<covariate> = [0, 1]          # default [0, 1]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PlotParams {
    pub items: ItemParams,
    pub beta: Vec<f64>,
    pub times: Vec<f64>,
    pub profile_values: Vec<Vec<f64>>,
}

impl PlotParams {
    pub fn parse(text: &str, spec: &ModelSpec) -> Result<PlotParams> {
        let doc = ConfigDoc::parse(text)?;
        let ids: Vec<&str> = spec.items.iter().map(|i| i.id.as_str()).collect();
        let covs = spec.covariate_names();
        doc.reject_unknown(|k| {
            matches!(k, "beta" | "times")
                || k.strip_prefix("thresholds.")
                    .is_some_and(|id| ids.contains(&id))
                || k.strip_prefix("shift.").is_some_and(|id| ids.contains(&id))
                || k.strip_prefix("profiles.")
                    .is_some_and(|c| covs.iter().any(|n| n == c))
        })?;
        let beta: Vec<f64> = doc.parsed_list("beta")?.unwrap_or_default();
        if beta.len() != spec.fixed_effects.len() {
            return Err(Error::spec(format!(
                "'beta' needs {} values, one per fixed effect",
                spec.fixed_effects.len()
            )));
        }
        let mut thresholds = Vec::new();
        let mut shifts = Vec::new();
        let finite = |what: &str, v: &[f64]| -> Result<()> {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::spec(format!("'{what}' values must be finite")))
            }
        };
        finite("beta", &beta)?;
        for item in &spec.items {
            let th: Vec<f64> = doc
                .parsed_list(&format!("thresholds.{}", item.id))?
                .ok_or_else(|| Error::spec(format!("missing 'thresholds.{}'", item.id)))?;
            if th.len() != item.n_thresholds() {
                return Err(Error::spec(format!(
                    "item '{}' needs {} thresholds, got {}",
                    item.id,
                    item.n_thresholds(),
                    th.len()
                )));
            }
            finite("thresholds", &th)?;
            thresholds.push(th);
            let shift: Option<f64> = doc.parsed(&format!("shift.{}", item.id))?;
            finite("shift", shift.as_slice())?;
            if shift.is_some() && spec.item_design != ItemDesign::RatingScale {
                return Err(Error::spec("item shifts require the rating-scale design"));
            }
            shifts.push(shift.unwrap_or(0.0));
        }
        let discrimination = spec.items.iter().map(|i| i.discrimination).collect();
        let items = ItemParams {
            thresholds,
            shifts,
            discrimination,
        };
        items.check_increasing()?;
        let times = doc.parsed_list("times")?.unwrap_or_else(|| vec![0.0]);
        finite("times", &times)?;
        let profile_values = covs
            .iter()
            .map(|c| {
                let v: Vec<f64> = doc
                    .parsed_list(&format!("profiles.{c}"))?
                    .unwrap_or_else(|| vec![0.0, 1.0]);
                finite("profiles", &v)?;
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PlotParams {
            items,
            beta,
            times,
            profile_values,
        })
    }
}
