//! Model specification `(r, F, Z_q, U_r)`, item parameters, the latent-trait
//! regression and the packing of free parameters into an unconstrained
//! vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ConfigDoc;
use crate::error::{Error, Result};
use crate::family::{RatioFamily, MAX_THRESHOLDS};
use crate::link::CdfKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemDesign {
    /// `Z_1`: thresholds `δ_jm` per item.
    PerItemThresholds,
    /// `Z_2`: shared thresholds `δ_m` plus a shift `τ_j` per item.
    RatingScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomEffects {
    /// `U_1`: random intercept `ξ_i0`.
    InterceptOnly,
    /// `U_2`: random intercept and random slope on elapsed time.
    InterceptAndSlope,
}

impl RandomEffects {
    pub fn dim(self) -> usize {
        match self {
            RandomEffects::InterceptOnly => 1,
            RandomEffects::InterceptAndSlope => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovStructure {
    Diagonal,
    Unstructured,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($variant:path => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::spec(format!(concat!("unknown ", $what, " '{}'"), s))),
                }
            }
        }
    };
}

keyword_enum!(ItemDesign, "item design", {
    ItemDesign::PerItemThresholds => "per_item_thresholds",
    ItemDesign::RatingScale => "rating_scale",
});
keyword_enum!(RandomEffects, "random-effect structure", {
    RandomEffects::InterceptOnly => "intercept_only",
    RandomEffects::InterceptAndSlope => "intercept_and_slope",
});
keyword_enum!(CovStructure, "covariance structure", {
    CovStructure::Diagonal => "diagonal",
    CovStructure::Unstructured => "unstructured",
});

/// One factor of a fixed-effect column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    /// Elapsed time `t_v - t_0`.
    Time,
    Covariate(String),
}

/// A fixed-effect column: the product of its factors, written `group*time`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedEffect {
    factors: Vec<Factor>,
}

impl FixedEffect {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::spec("fixed effect without factors"));
        }
        Ok(FixedEffect { factors })
    }

    pub fn time() -> Self {
        FixedEffect {
            factors: vec![Factor::Time],
        }
    }

    pub fn covariate(name: &str) -> Self {
        FixedEffect {
            factors: vec![Factor::Covariate(name.to_string())],
        }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn name(&self) -> String {
        self.factors
            .iter()
            .map(|f| match f {
                Factor::Time => "time",
                Factor::Covariate(c) => c.as_str(),
            })
            .collect::<Vec<_>>()
            .join("*")
    }
}

impl FromStr for FixedEffect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let factors = s
            .split('*')
            .map(|part| {
                let part = part.trim();
                if part.is_empty()
                    || !part
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
                {
                    return Err(Error::spec(format!("invalid fixed effect '{s}'")));
                }
                Ok(if part == "time" {
                    Factor::Time
                } else {
                    Factor::Covariate(part.to_string())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FixedEffect::new(factors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: String,
    /// Number of response categories, `M_j + 1`.
    pub categories: usize,
    /// Responses are stored as `M_j - y` (functional scales).
    pub reversed: bool,
    /// `α_j`; estimation requires 1.
    pub discrimination: f64,
}

impl ItemSpec {
    pub fn new(id: impl Into<String>, categories: usize) -> Self {
        ItemSpec {
            id: id.into(),
            categories,
            reversed: false,
            discrimination: 1.0,
        }
    }

    pub fn n_thresholds(&self) -> usize {
        self.categories - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: RatioFamily,
    pub cdf: CdfKind,
    pub item_design: ItemDesign,
    pub items: Vec<ItemSpec>,
    pub fixed_effects: Vec<FixedEffect>,
    pub random_effects: RandomEffects,
    pub random_cov: CovStructure,
    pub baseline_time: f64,
}

impl ModelSpec {
    /// Per-item thresholds, no covariates, random intercept only.
    pub fn new(family: RatioFamily, cdf: CdfKind, items: Vec<ItemSpec>) -> Self {
        ModelSpec {
            family,
            cdf,
            item_design: ItemDesign::PerItemThresholds,
            items,
            fixed_effects: Vec::new(),
            random_effects: RandomEffects::InterceptOnly,
            random_cov: CovStructure::Diagonal,
            baseline_time: 0.0,
        }
    }

    pub fn with_fixed_effects(mut self, effects: Vec<FixedEffect>) -> Self {
        self.fixed_effects = effects;
        self
    }

    pub fn with_random_effects(mut self, re: RandomEffects, cov: CovStructure) -> Self {
        self.random_effects = re;
        self.random_cov = cov;
        self
    }

    pub fn with_item_design(mut self, design: ItemDesign) -> Self {
        self.item_design = design;
        self
    }

    /// (adjacent, logistic, Z_2, U_1)
    pub fn rating_scale(items: Vec<ItemSpec>) -> Self {
        ModelSpec::new(RatioFamily::Adjacent, CdfKind::Logistic, items)
            .with_item_design(ItemDesign::RatingScale)
    }

    /// (adjacent, logistic, Z_1, U_1)
    pub fn partial_credit(items: Vec<ItemSpec>) -> Self {
        ModelSpec::new(RatioFamily::Adjacent, CdfKind::Logistic, items)
    }

    /// (sequential, logistic, Z_1, U_1)
    pub fn sequential_rasch(items: Vec<ItemSpec>) -> Self {
        ModelSpec::new(RatioFamily::Sequential, CdfKind::Logistic, items)
    }

    /// (cumulative, logistic, nl): forward evaluation only.
    pub fn graded_response(items: Vec<ItemSpec>) -> Self {
        ModelSpec::new(RatioFamily::Cumulative, CdfKind::Logistic, items)
    }

    /// (adjacent, logistic, nl): forward evaluation only.
    pub fn generalized_partial_credit(items: Vec<ItemSpec>) -> Self {
        ModelSpec::new(RatioFamily::Adjacent, CdfKind::Logistic, items)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::spec("at least one item is required"));
        }
        for (j, item) in self.items.iter().enumerate() {
            if item.categories < 2 || item.categories > MAX_THRESHOLDS + 1 {
                return Err(Error::spec(format!(
                    "item '{}' must have between 2 and {} categories",
                    item.id,
                    MAX_THRESHOLDS + 1
                )));
            }
            if !(item.discrimination.is_finite() && item.discrimination > 0.0) {
                return Err(Error::spec(format!(
                    "item '{}' discrimination must be positive",
                    item.id
                )));
            }
            if self.items[..j].iter().any(|o| o.id == item.id) {
                return Err(Error::spec(format!("duplicate item '{}'", item.id)));
            }
        }
        if self.item_design == ItemDesign::RatingScale
            && self
                .items
                .iter()
                .any(|i| i.categories != self.items[0].categories)
        {
            return Err(Error::spec(
                "rating_scale requires every item to have the same number of categories",
            ));
        }
        for (k, fe) in self.fixed_effects.iter().enumerate() {
            let name = fe.name();
            if self.fixed_effects[..k].iter().any(|o| o.name() == name) {
                return Err(Error::spec(format!("duplicate fixed effect '{name}'")));
            }
        }
        if !self.baseline_time.is_finite() {
            return Err(Error::spec("baseline time must be finite"));
        }
        Ok(())
    }

    /// Discrimination parameters are all one, i.e. the model is a GLMM.
    pub fn is_glmm(&self) -> bool {
        self.items.iter().all(|i| i.discrimination == 1.0)
    }

    pub fn re_dim(&self) -> usize {
        self.random_effects.dim()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.id == id)
    }

    /// Covariate columns referenced by the fixed effects, in order of first use.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for fe in &self.fixed_effects {
            for f in &fe.factors {
                if let Factor::Covariate(c) = f {
                    if !out.contains(c) {
                        out.push(c.clone());
                    }
                }
            }
        }
        out
    }

    pub fn fixed_effect_names(&self) -> Vec<String> {
        self.fixed_effects.iter().map(FixedEffect::name).collect()
    }

    /// Fixed-effect design row `x_iv` for covariate values aligned with
    /// [`ModelSpec::covariate_names`] and elapsed time `t_v - t_0`.
    pub fn design_row(&self, covariates: &[f64], elapsed: f64) -> Result<Vec<f64>> {
        let names = self.covariate_names();
        if covariates.len() != names.len() {
            return Err(Error::spec(format!(
                "expected {} covariate values, got {}",
                names.len(),
                covariates.len()
            )));
        }
        Ok(self
            .fixed_effects
            .iter()
            .map(|fe| {
                fe.factors
                    .iter()
                    .map(|f| match f {
                        Factor::Time => elapsed,
                        Factor::Covariate(c) => {
                            covariates[names.iter().position(|n| n == c).expect("listed")]
                        }
                    })
                    .product()
            })
            .collect())
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout::new(self)
    }

    pub fn from_config(doc: &ConfigDoc) -> Result<ModelSpec> {
        let family = doc
            .parsed::<RatioFamily>("family")?
            .ok_or_else(|| Error::spec("missing 'family'"))?;
        let cdf = doc
            .parsed::<CdfKind>("cdf")?
            .ok_or_else(|| Error::spec("missing 'cdf'"))?;
        let mut items = Vec::new();
        for id in doc.sections("items") {
            let key = |field: &str| format!("items.{id}.{field}");
            let categories = doc
                .parsed::<usize>(&key("categories"))?
                .ok_or_else(|| Error::spec(format!("item '{id}' needs 'categories'")))?;
            let mut item = ItemSpec::new(id.clone(), categories);
            item.reversed = doc.bool(&key("reversed"))?.unwrap_or(false);
            item.discrimination = doc.parsed(&key("discrimination"))?.unwrap_or(1.0);
            items.push(item);
        }
        doc.reject_unknown(|k| {
            matches!(
                k,
                "family"
                    | "cdf"
                    | "item_design"
                    | "fixed_effects"
                    | "random_effects"
                    | "random_cov"
                    | "baseline_time"
            ) || matches!(
                k.split('.').collect::<Vec<_>>().as_slice(),
                ["items", _, "categories" | "reversed" | "discrimination"]
            )
        })?;
        let spec = ModelSpec {
            family,
            cdf,
            item_design: doc
                .parsed("item_design")?
                .unwrap_or(ItemDesign::PerItemThresholds),
            items,
            fixed_effects: doc.parsed_list("fixed_effects")?.unwrap_or_default(),
            random_effects: doc
                .parsed("random_effects")?
                .unwrap_or(RandomEffects::InterceptOnly),
            random_cov: doc.parsed("random_cov")?.unwrap_or(CovStructure::Diagonal),
            baseline_time: doc.parsed("baseline_time")?.unwrap_or(0.0),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = format!(
            "family = {}\ncdf = {}\nitem_design = {}\nrandom_effects = {}\nrandom_cov = {}\nbaseline_time = {}\nfixed_effects = [{}]\n",
            self.family,
            self.cdf,
            self.item_design,
            self.random_effects,
            self.random_cov,
            self.baseline_time,
            self.fixed_effect_names().join(", ")
        );
        for item in &self.items {
            out.push_str(&format!(
                "items.{id}.categories = {}\nitems.{id}.reversed = {}\nitems.{id}.discrimination = {}\n",
                item.categories,
                item.reversed,
                item.discrimination,
                id = item.id
            ));
        }
        out
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelSpec::from_config(&ConfigDoc::parse(s)?)
    }
}

/// Item location and discrimination parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    /// `δ_j1 < … < δ_jM_j`; under the rating-scale design every item holds
    /// the same shared vector.
    pub thresholds: Vec<Vec<f64>>,
    /// `τ_j` (zero under per-item thresholds; `τ_1 = 0` under rating scale).
    pub shifts: Vec<f64>,
    pub discrimination: Vec<f64>,
}

impl ItemParams {
    pub fn per_item(thresholds: Vec<Vec<f64>>) -> Self {
        let n = thresholds.len();
        ItemParams {
            thresholds,
            shifts: vec![0.0; n],
            discrimination: vec![1.0; n],
        }
    }

    pub fn rating_scale(shared: Vec<f64>, shifts: Vec<f64>) -> Self {
        let n = shifts.len();
        ItemParams {
            thresholds: vec![shared; n],
            shifts,
            discrimination: vec![1.0; n],
        }
    }

    pub fn with_discrimination(mut self, alpha: Vec<f64>) -> Self {
        self.discrimination = alpha;
        self
    }

    pub fn n_items(&self) -> usize {
        self.thresholds.len()
    }

    /// `η_jm` for item `j` (0-based) and category `m` (1-based).
    pub fn linear_predictor(&self, j: usize, theta: f64, m: usize) -> Result<f64> {
        let th = self
            .thresholds
            .get(j)
            .ok_or_else(|| Error::spec(format!("no item with index {j}")))?;
        linear_predictor(theta, th, self.shifts[j], self.discrimination[j], m)
    }

    /// All `M_j` linear predictors of item `j`.
    pub fn etas(&self, j: usize, theta: f64) -> Vec<f64> {
        let (a, s) = (self.discrimination[j], self.shifts[j]);
        self.thresholds[j]
            .iter()
            .map(|d| a * (theta - (d + s)))
            .collect()
    }

    pub fn check_increasing(&self) -> Result<()> {
        for th in &self.thresholds {
            for m in 1..th.len() {
                if !(th[m] > th[m - 1]) {
                    return Err(Error::Ordering { index: m + 1 });
                }
            }
        }
        Ok(())
    }
}

/// `α (θ - (δ_m + τ))` for category `m` in `1..=M`.
pub fn linear_predictor(
    theta: f64,
    thresholds: &[f64],
    shift: f64,
    alpha: f64,
    m: usize,
) -> Result<f64> {
    if m == 0 || m > thresholds.len() {
        return Err(Error::Category {
            item: None,
            category: m as i64,
            max: thresholds.len(),
        });
    }
    Ok(alpha * (theta - (thresholds[m - 1] + shift)))
}

/// Random-effect covariance `Σ` (1×1 or 2×2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub var0: f64,
    pub var1: f64,
    pub cov01: f64,
    pub dim: usize,
}

impl Covariance {
    pub fn intercept(var0: f64) -> Self {
        Covariance {
            var0,
            var1: 0.0,
            cov01: 0.0,
            dim: 1,
        }
    }

    pub fn diagonal(var0: f64, var1: f64) -> Self {
        Covariance {
            var0,
            var1,
            cov01: 0.0,
            dim: 2,
        }
    }

    pub fn full(var0: f64, var1: f64, cov01: f64) -> Self {
        Covariance {
            var0,
            var1,
            cov01,
            dim: 2,
        }
    }

    /// Lower Cholesky factor `[[l00, 0], [l10, l11]]`.
    pub fn cholesky(&self) -> Result<[[f64; 2]; 2]> {
        if !(self.var0 > 0.0) || (self.dim == 2 && !(self.var1 > 0.0)) {
            return Err(Error::spec("random-effect variances must be positive"));
        }
        let l00 = self.var0.sqrt();
        if self.dim == 1 {
            return Ok([[l00, 0.0], [0.0, 0.0]]);
        }
        let l10 = self.cov01 / l00;
        let rest = self.var1 - l10 * l10;
        if !(rest > 0.0) {
            return Err(Error::spec(
                "random-effect covariance is not positive definite",
            ));
        }
        Ok([[l00, 0.0], [l10, rest.sqrt()]])
    }

    pub fn from_cholesky(l: [[f64; 2]; 2], dim: usize) -> Self {
        if dim == 1 {
            return Covariance::intercept(l[0][0] * l[0][0]);
        }
        Covariance::full(
            l[0][0] * l[0][0],
            l[1][0] * l[1][0] + l[1][1] * l[1][1],
            l[0][0] * l[1][0],
        )
    }
}

/// `θ = x'β + ξ_0 + (t_v - t_0) ξ_1`.
pub fn latent_trait(
    spec: &ModelSpec,
    beta: &[f64],
    xi: &[f64],
    covariates: &[f64],
    t_v: f64,
    t_0: f64,
) -> Result<f64> {
    if beta.len() != spec.fixed_effects.len() {
        return Err(Error::spec(format!(
            "expected {} fixed-effect coefficients, got {}",
            spec.fixed_effects.len(),
            beta.len()
        )));
    }
    if xi.len() != spec.re_dim() {
        return Err(Error::spec(format!(
            "expected {} random effects, got {}",
            spec.re_dim(),
            xi.len()
        )));
    }
    let elapsed = t_v - t_0;
    let x = spec.design_row(covariates, elapsed)?;
    let fixed: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
    let random = xi[0] + if xi.len() > 1 { elapsed * xi[1] } else { 0.0 };
    Ok(fixed + random)
}

/// Where each block lives inside a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub n_beta: usize,
    /// Start of each item's threshold block (per-item design) or of the
    /// shared block (rating scale, single entry).
    pub threshold_blocks: Vec<(usize, usize)>,
    /// Start of the `τ_2..τ_J` block under rating scale.
    pub shift_offset: Option<usize>,
    pub cov_offset: usize,
    pub n_cov: usize,
    pub len: usize,
    pub names: Vec<String>,
}

impl ParameterLayout {
    fn new(spec: &ModelSpec) -> Self {
        let mut names: Vec<String> = spec.fixed_effect_names();
        let mut blocks = Vec::new();
        let push_block = |names: &mut Vec<String>, label: &str, m: usize| {
            let start = names.len();
            names.push(format!("{label}.delta1"));
            for k in 2..=m {
                names.push(format!("{label}.log_gap{k}"));
            }
            (start, m)
        };
        let mut shift_offset = None;
        match spec.item_design {
            ItemDesign::PerItemThresholds => {
                for item in &spec.items {
                    blocks.push(push_block(&mut names, &item.id, item.n_thresholds()));
                }
            }
            ItemDesign::RatingScale => {
                blocks.push(push_block(
                    &mut names,
                    "shared",
                    spec.items[0].n_thresholds(),
                ));
                shift_offset = Some(names.len());
                for item in &spec.items[1..] {
                    names.push(format!("{}.shift", item.id));
                }
            }
        }
        let cov_offset = names.len();
        match (spec.random_effects, spec.random_cov) {
            (RandomEffects::InterceptOnly, _) => names.push("log_sd0".into()),
            (RandomEffects::InterceptAndSlope, CovStructure::Diagonal) => {
                names.push("log_sd0".into());
                names.push("log_sd1".into());
            }
            (RandomEffects::InterceptAndSlope, CovStructure::Unstructured) => {
                names.push("log_chol00".into());
                names.push("chol10".into());
                names.push("log_chol11".into());
            }
        }
        ParameterLayout {
            n_beta: spec.fixed_effects.len(),
            threshold_blocks: blocks,
            shift_offset,
            cov_offset,
            n_cov: names.len() - cov_offset,
            len: names.len(),
            names,
        }
    }

    /// Indices of parameters that are log standard deviations or log
    /// Cholesky diagonals (bounded below during estimation).
    pub fn log_scale_indices(&self) -> Vec<usize> {
        match self.n_cov {
            1 => vec![self.cov_offset],
            2 => vec![self.cov_offset, self.cov_offset + 1],
            _ => vec![self.cov_offset, self.cov_offset + 2],
        }
    }
}

/// Unconstrained free parameters: fixed effects, first threshold plus log
/// gaps per item, random-effect scale parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn pack_thresholds(th: &[f64], out: &mut Vec<f64>) -> Result<()> {
    out.push(th[0]);
    for m in 1..th.len() {
        let gap = th[m] - th[m - 1];
        if !(gap > 0.0) {
            return Err(Error::Ordering { index: m + 1 });
        }
        out.push(gap.ln());
    }
    Ok(())
}

fn unpack_thresholds(packed: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(packed.len());
    let mut acc = packed[0];
    out.push(acc);
    for &g in &packed[1..] {
        acc += g.exp();
        out.push(acc);
    }
    out
}

pub fn pack(
    spec: &ModelSpec,
    items: &ItemParams,
    beta: &[f64],
    cov: &Covariance,
) -> Result<ParameterVector> {
    let layout = spec.layout();
    if beta.len() != layout.n_beta {
        return Err(Error::spec(format!(
            "expected {} fixed-effect coefficients, got {}",
            layout.n_beta,
            beta.len()
        )));
    }
    if items.n_items() != spec.items.len() {
        return Err(Error::spec("item parameter count does not match the spec"));
    }
    for (j, item) in spec.items.iter().enumerate() {
        if items.thresholds[j].len() != item.n_thresholds() {
            return Err(Error::spec(format!(
                "item '{}' needs {} thresholds",
                item.id,
                item.n_thresholds()
            )));
        }
    }
    if cov.dim != spec.re_dim() {
        return Err(Error::spec(
            "covariance dimension does not match the random effects",
        ));
    }
    let mut out = beta.to_vec();
    match spec.item_design {
        ItemDesign::PerItemThresholds => {
            for th in &items.thresholds {
                pack_thresholds(th, &mut out)?;
            }
        }
        ItemDesign::RatingScale => {
            if items.thresholds.iter().any(|t| t != &items.thresholds[0]) {
                return Err(Error::spec(
                    "rating_scale thresholds must be shared by all items",
                ));
            }
            if items.shifts[0] != 0.0 {
                return Err(Error::spec("the first item's shift is fixed at zero"));
            }
            pack_thresholds(&items.thresholds[0], &mut out)?;
            out.extend_from_slice(&items.shifts[1..]);
        }
    }
    let l = cov.cholesky()?;
    match (spec.random_effects, spec.random_cov) {
        (RandomEffects::InterceptOnly, _) => out.push(l[0][0].ln()),
        (RandomEffects::InterceptAndSlope, CovStructure::Diagonal) => {
            if cov.cov01 != 0.0 {
                return Err(Error::spec(
                    "diagonal covariance cannot hold a covariance term",
                ));
            }
            out.push(0.5 * cov.var0.ln());
            out.push(0.5 * cov.var1.ln());
        }
        (RandomEffects::InterceptAndSlope, CovStructure::Unstructured) => {
            out.push(l[0][0].ln());
            out.push(l[1][0]);
            out.push(l[1][1].ln());
        }
    }
    Ok(ParameterVector(out))
}

/// Random-effect Cholesky factor encoded in a packed vector.
pub(crate) fn unpack_cholesky(spec: &ModelSpec, cov_params: &[f64]) -> [[f64; 2]; 2] {
    match (spec.random_effects, spec.random_cov) {
        (RandomEffects::InterceptOnly, _) => [[cov_params[0].exp(), 0.0], [0.0, 0.0]],
        (RandomEffects::InterceptAndSlope, CovStructure::Diagonal) => {
            [[cov_params[0].exp(), 0.0], [0.0, cov_params[1].exp()]]
        }
        (RandomEffects::InterceptAndSlope, CovStructure::Unstructured) => [
            [cov_params[0].exp(), 0.0],
            [cov_params[1], cov_params[2].exp()],
        ],
    }
}

pub fn unpack(
    spec: &ModelSpec,
    params: &ParameterVector,
) -> Result<(ItemParams, Vec<f64>, Covariance)> {
    let layout = spec.layout();
    let p = params.as_slice();
    if p.len() != layout.len {
        return Err(Error::spec(format!(
            "expected {} packed parameters, got {}",
            layout.len,
            p.len()
        )));
    }
    if let Some(bad) = p.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain {
            what: "packed parameter",
            value: *bad,
        });
    }
    let beta = p[..layout.n_beta].to_vec();
    let mut items = match spec.item_design {
        ItemDesign::PerItemThresholds => ItemParams::per_item(
            layout
                .threshold_blocks
                .iter()
                .map(|&(start, m)| unpack_thresholds(&p[start..start + m]))
                .collect(),
        ),
        ItemDesign::RatingScale => {
            let (start, m) = layout.threshold_blocks[0];
            let shared = unpack_thresholds(&p[start..start + m]);
            let off = layout.shift_offset.expect("rating scale layout");
            let mut shifts = vec![0.0];
            shifts.extend_from_slice(&p[off..off + spec.items.len() - 1]);
            ItemParams::rating_scale(shared, shifts)
        }
    };
    items.discrimination = spec.items.iter().map(|i| i.discrimination).collect();
    let l = unpack_cholesky(spec, &p[layout.cov_offset..]);
    let cov = Covariance::from_cholesky(l, spec.re_dim());
    Ok((items, beta, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_items() -> Vec<ItemSpec> {
        vec![ItemSpec::new("q1", 4), ItemSpec::new("q2", 4)]
    }

    fn eq10_spec() -> ModelSpec {
        ModelSpec::new(RatioFamily::Cumulative, CdfKind::Logistic, two_items())
            .with_fixed_effects(vec![
                "group".parse().unwrap(),
                "time".parse().unwrap(),
                "group*time".parse().unwrap(),
            ])
            .with_random_effects(RandomEffects::InterceptAndSlope, CovStructure::Unstructured)
    }

    #[test]
    fn slope_model_latent_trait() {
        let spec = ModelSpec::new(RatioFamily::Adjacent, CdfKind::Logistic, two_items())
            .with_fixed_effects(vec![FixedEffect::time()])
            .with_random_effects(RandomEffects::InterceptAndSlope, CovStructure::Diagonal);
        let theta = latent_trait(&spec, &[0.3], &[1.5, 0.0], &[], 4.0, 0.0).unwrap();
        assert!((theta - 2.7).abs() < 1e-15);
        assert_eq!(
            latent_trait(&spec, &[0.0], &[0.0, 0.0], &[], 4.0, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn group_by_time_latent_trait() {
        let spec = eq10_spec();
        let theta =
            latent_trait(&spec, &[0.0, -0.330, -0.188], &[0.0, 0.0], &[1.0], 4.0, 0.0).unwrap();
        assert!((theta - (-2.072)).abs() < 1e-12);
    }

    #[test]
    fn latent_trait_dimension_errors() {
        let spec = eq10_spec();
        assert!(latent_trait(&spec, &[0.0, 0.0], &[0.0, 0.0], &[1.0], 1.0, 0.0).is_err());
        assert!(latent_trait(&spec, &[0.0; 3], &[0.0], &[1.0], 1.0, 0.0).is_err());
        assert!(latent_trait(&spec, &[0.0; 3], &[0.0, 0.0], &[], 1.0, 0.0).is_err());
    }

    #[test]
    fn linear_predictor_examples() {
        let items = ItemParams::per_item(vec![vec![-2.1, 1.0, 2.75]]);
        assert!((items.linear_predictor(0, 0.0, 1).unwrap() - 2.1).abs() < 1e-15);
        assert_eq!(linear_predictor(0.4, &[0.4], 0.0, 3.0, 1).unwrap(), 0.0);
        assert_eq!(linear_predictor(1.0, &[0.0], 0.0, 2.0, 1).unwrap(), 2.0);
        assert!(items.linear_predictor(0, 0.0, 4).is_err());
        assert!(items.linear_predictor(0, 0.0, 0).is_err());
        let rs = ItemParams::rating_scale(vec![-1.0, 0.5], vec![0.0, 0.25]);
        assert!((rs.linear_predictor(1, 1.0, 2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pack_examples() {
        let spec = ModelSpec::new(
            RatioFamily::Cumulative,
            CdfKind::Logistic,
            vec![ItemSpec::new("q9", 4)],
        );
        let items = ItemParams::per_item(vec![vec![-2.1, 1.0, 2.75]]);
        let packed = pack(&spec, &items, &[], &Covariance::intercept(1.0)).unwrap();
        let want = [-2.1, 3.1f64.ln(), 1.75f64.ln(), 0.0];
        for (g, w) in packed.as_slice().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        let (back, _, _) = unpack(&spec, &packed).unwrap();
        for (g, w) in back.thresholds[0].iter().zip([-2.1, 1.0, 2.75]) {
            assert!((g - w).abs() < 1e-14);
        }

        let binary = ModelSpec::new(
            RatioFamily::Cumulative,
            CdfKind::Logistic,
            vec![ItemSpec::new("b", 2)],
        );
        let packed = pack(
            &binary,
            &ItemParams::per_item(vec![vec![0.0]]),
            &[],
            &Covariance::intercept(1.0),
        )
        .unwrap();
        assert_eq!(packed.as_slice()[0], 0.0);

        let spec = ModelSpec::new(
            RatioFamily::Adjacent,
            CdfKind::Logistic,
            vec![ItemSpec::new("b", 2)],
        )
        .with_random_effects(RandomEffects::InterceptAndSlope, CovStructure::Diagonal);
        let cov = Covariance::diagonal(1.5, 0.2);
        let packed = pack(&spec, &ItemParams::per_item(vec![vec![0.0]]), &[], &cov).unwrap();
        assert!((packed.as_slice()[1] - 0.5 * 1.5f64.ln()).abs() < 1e-15);
        assert!((packed.as_slice()[2] - 0.5 * 0.2f64.ln()).abs() < 1e-15);
        let (_, _, back) = unpack(&spec, &packed).unwrap();
        assert!((back.var0 - 1.5).abs() < 1e-14 && (back.var1 - 0.2).abs() < 1e-14);
    }

    #[test]
    fn pack_rejects_unordered_thresholds() {
        let spec = ModelSpec::new(
            RatioFamily::Cumulative,
            CdfKind::Logistic,
            vec![ItemSpec::new("q", 4)],
        );
        let items = ItemParams::per_item(vec![vec![-1.0, 1.0, 1.0]]);
        assert!(matches!(
            pack(&spec, &items, &[], &Covariance::intercept(1.0)),
            Err(Error::Ordering { index: 3 })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = eq10_spec();
        assert!(spec.validate().is_ok());
        spec.items[1].id = "q1".into();
        assert!(spec.validate().is_err());
        let spec = ModelSpec::rating_scale(vec![ItemSpec::new("a", 4), ItemSpec::new("b", 3)]);
        assert!(spec.validate().is_err());
        let spec = ModelSpec::partial_credit(vec![]);
        assert!(spec.validate().is_err());
        let spec = ModelSpec::partial_credit(vec![ItemSpec::new("a", 1)]);
        assert!(spec.validate().is_err());
        let spec = eq10_spec().with_fixed_effects(vec![FixedEffect::time(), FixedEffect::time()]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn taxonomy_constructors() {
        let items = two_items();
        let rs = ModelSpec::rating_scale(items.clone());
        assert_eq!(
            (rs.family, rs.item_design),
            (RatioFamily::Adjacent, ItemDesign::RatingScale)
        );
        assert_eq!(
            ModelSpec::sequential_rasch(items.clone()).family,
            RatioFamily::Sequential
        );
        assert_eq!(
            ModelSpec::graded_response(items).family,
            RatioFamily::Cumulative
        );
    }

    #[test]
    fn config_round_trip() {
        let text = "family = cumulative\ncdf = logistic\nfixed_effects = [group, time, group*time]\nrandom_effects = intercept_and_slope\nrandom_cov = unstructured\nitems.q9.categories = 4\nitems.q19.categories = 4\nitems.q19.reversed = true\n";
        let spec: ModelSpec = text.parse().unwrap();
        assert_eq!(spec.items.len(), 2);
        assert!(spec.items[1].reversed);
        assert_eq!(spec.covariate_names(), vec!["group".to_string()]);
        let again: ModelSpec = spec.to_config_string().parse().unwrap();
        assert_eq!(spec, again);
        assert!(
            "family = cumulative\ncdf = logistic\nitems.a.categories = 3\nbogus = 1\n"
                .parse::<ModelSpec>()
                .is_err()
        );
        assert!("cdf = logistic\nitems.a.categories = 3\n"
            .parse::<ModelSpec>()
            .is_err());
    }

    fn arb_spec() -> impl Strategy<Value = ModelSpec> {
        (
            prop::collection::vec(2usize..6, 1..4),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(cats, rating, slope, unstructured)| {
                let items = if rating {
                    cats.iter()
                        .enumerate()
                        .map(|(j, _)| ItemSpec::new(format!("i{j}"), cats[0]))
                        .collect()
                } else {
                    cats.iter()
                        .enumerate()
                        .map(|(j, &c)| ItemSpec::new(format!("i{j}"), c))
                        .collect()
                };
                let re = if slope {
                    RandomEffects::InterceptAndSlope
                } else {
                    RandomEffects::InterceptOnly
                };
                let cov = if unstructured {
                    CovStructure::Unstructured
                } else {
                    CovStructure::Diagonal
                };
                let design = if rating {
                    ItemDesign::RatingScale
                } else {
                    ItemDesign::PerItemThresholds
                };
                ModelSpec::new(RatioFamily::Cumulative, CdfKind::Logistic, items)
                    .with_fixed_effects(vec![FixedEffect::time(), FixedEffect::covariate("g")])
                    .with_random_effects(re, cov)
                    .with_item_design(design)
            })
    }

    proptest! {
        #[test]
        fn unpacked_thresholds_always_increase(
            spec in arb_spec(),
            raw in prop::collection::vec(-8.0f64..8.0, 40),
        ) {
            let n = spec.layout().len;
            let (items, _, cov) = unpack(&spec, &ParameterVector(raw[..n].to_vec())).unwrap();
            prop_assert!(items.check_increasing().is_ok());
            prop_assert!(cov.var0 > 0.0);
        }

        #[test]
        fn pack_unpack_round_trip(
            spec in arb_spec(),
            raw in prop::collection::vec(-3.0f64..3.0, 40),
        ) {
            let n = spec.layout().len;
            let p = ParameterVector(raw[..n].to_vec());
            let (items, beta, cov) = unpack(&spec, &p).unwrap();
            let again = pack(&spec, &items, &beta, &cov).unwrap();
            for (a, b) in again.as_slice().iter().zip(p.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }

        #[test]
        fn latent_trait_is_linear_in_beta(
            b1 in prop::collection::vec(-2.0f64..2.0, 3),
            b2 in prop::collection::vec(-2.0f64..2.0, 3),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            g in 0.0f64..1.0,
            t in 0.0f64..12.0,
        ) {
            let spec = eq10_spec();
            let zero = [0.0, 0.0];
            let mix: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + b * y).collect();
            let lhs = latent_trait(&spec, &mix, &zero, &[g], t, 0.0).unwrap();
            let rhs = a * latent_trait(&spec, &b1, &zero, &[g], t, 0.0).unwrap()
                + b * latent_trait(&spec, &b2, &zero, &[g], t, 0.0).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
