//! Multinomial data generation and the random-slope model-selection study.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ConfigDoc;
use crate::data::{Dataset, DatasetBuilder};
use crate::error::{Error, Result};
use crate::estimate::{fit, select_by_bic, FitOptions, FitResult, Selected, LOG_SCALE_FLOOR};
use crate::family::{category_probs, RatioFamily};
use crate::link::CdfKind;
use crate::lmm::{fit_lmm, LmmModel};
use crate::model::{
    latent_trait, pack, CovStructure, Covariance, FixedEffect, ItemParams, ItemSpec, ModelSpec,
    ParameterVector, RandomEffects,
};
use crate::quadrature::QuadratureRule;
use crate::rng::{derive_seed, subject_stream};
use crate::score::score_dataset;

pub const DEFAULT_TIMES: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0];
pub const DEFAULT_SIGMA0_SQ: f64 = 1.5;
pub const DEFAULT_SUBJECTS: usize = 300;
pub const DEFAULT_REPLICATIONS: usize = 100;

/// The two difficulty sets of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSet {
    /// Thresholds close together.
    Near,
    /// Thresholds spread apart.
    Far,
}

impl DeltaSet {
    pub fn thresholds(self) -> Vec<Vec<f64>> {
        match self {
            DeltaSet::Near => vec![vec![-1.6, 1.0, 1.45], vec![-0.8, 1.15, 1.9]],
            DeltaSet::Far => vec![vec![-2.1, 1.0, 2.75], vec![-1.25, 1.4, 3.3]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeltaSet::Near => "near",
            DeltaSet::Far => "far",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "near" => Ok(DeltaSet::Near),
            "far" => Ok(DeltaSet::Far),
            _ => Err(Error::spec(format!("unknown difficulty set '{s}'"))),
        }
    }
}

/// A fully specified generating model: spec, true parameters and design.
/// Covariates alternate 0/1 across subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub spec: ModelSpec,
    pub items: ItemParams,
    pub beta: Vec<f64>,
    pub covariance: Covariance,
    pub n_subjects: usize,
    pub times: Vec<f64>,
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_subjects == 0 {
            return Err(Error::spec("at least one subject is required"));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::spec("visit times must be finite and non-negative"));
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::spec("visit times must be non-decreasing"));
        }
        let c = &self.covariance;
        if !(c.var0 >= 0.0 && c.var1 >= 0.0) || c.dim != self.spec.re_dim() {
            return Err(Error::spec("random-effect variances must be non-negative"));
        }
        if c.cov01 * c.cov01 > c.var0 * c.var1 {
            return Err(Error::spec(
                "random-effect covariance is not positive semi-definite",
            ));
        }
        if self.beta.len() != self.spec.fixed_effects.len() {
            return Err(Error::spec("fixed-effect count does not match the spec"));
        }
        if self.items.n_items() != self.spec.items.len() {
            return Err(Error::spec("item parameter count does not match the spec"));
        }
        Ok(())
    }

    /// Packed true parameters (requires positive variances).
    pub fn true_parameters(&self) -> Result<ParameterVector> {
        pack(&self.spec, &self.items, &self.beta, &self.covariance)
    }
}

/// Draws one dataset; identical `(seed, replication)` give identical data.
pub fn simulate_from(gen: &Generator, seed: u64, replication: u32) -> Result<Dataset> {
    gen.validate()?;
    let spec = &gen.spec;
    let n_cov = spec.covariate_names().len();
    let mut builder = DatasetBuilder::for_spec(spec);
    let c = &gen.covariance;
    let l00 = c.var0.sqrt();
    let (l10, l11) = if c.dim == 2 && c.var0 > 0.0 {
        let l10 = c.cov01 / l00;
        (l10, (c.var1 - l10 * l10).max(0.0).sqrt())
    } else {
        (0.0, c.var1.sqrt())
    };
    let width = (gen.n_subjects.max(2) - 1).to_string().len();
    for i in 0..gen.n_subjects {
        let mut rng = subject_stream(seed, replication, i as u32);
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let xi0 = l00 * z0;
        let xi1 = l10 * z0 + l11 * z1;
        let xi: Vec<f64> = if spec.re_dim() == 2 {
            vec![xi0, xi1]
        } else {
            vec![xi0]
        };
        let covs = vec![(i % 2) as f64; n_cov];
        let id = format!("s{i:0width$}");
        for (v, &t) in gen.times.iter().enumerate() {
            let theta = latent_trait(spec, &gen.beta, &xi, &covs, t, spec.baseline_time)?;
            for j in 0..spec.items.len() {
                let probs = category_probs(spec.family, spec.cdf, &gen.items.etas(j, theta))?;
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut y = probs.n_categories() - 1;
                for (m, p) in probs.probs().iter().enumerate() {
                    acc += p;
                    if u < acc {
                        y = m;
                        break;
                    }
                }
                builder.push(&id, v as u32 + 1, t, j, Some(y as u8), &covs)?;
            }
        }
    }
    builder.finish()
}

/// Fitted model classes of the selection study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    Lmm,
    Adjacent,
    Cumulative,
}

impl ModelClass {
    pub const ALL: [ModelClass; 3] = [
        ModelClass::Lmm,
        ModelClass::Adjacent,
        ModelClass::Cumulative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelClass::Lmm => "lmm",
            ModelClass::Adjacent => "adjacent",
            ModelClass::Cumulative => "cumulative",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        ModelClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::spec(format!("unknown model class '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    /// 4 or 5 for cells of the built-in grid.
    pub table: Option<u8>,
    pub generator: RatioFamily,
    pub cdf: CdfKind,
    pub deltas: DeltaSet,
    pub beta1: f64,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub n_subjects: usize,
    pub times: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
}

impl Scenario {
    /// Defaults of the study design with the given cell values.
    pub fn new(generator: RatioFamily, deltas: DeltaSet, beta1: f64, sigma1_sq: f64) -> Self {
        Scenario {
            name: cell_name(generator, deltas, beta1, sigma1_sq),
            table: None,
            generator,
            cdf: CdfKind::Logistic,
            deltas,
            beta1,
            sigma0_sq: DEFAULT_SIGMA0_SQ,
            sigma1_sq,
            n_subjects: DEFAULT_SUBJECTS,
            times: DEFAULT_TIMES.to_vec(),
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq >= 0.0
            && self.sigma1_sq >= 0.0
            && self.sigma0_sq.is_finite()
            && self.sigma1_sq.is_finite())
        {
            return Err(Error::spec(
                "scenario variances must be finite and non-negative",
            ));
        }
        if self.replications == 0 {
            return Err(Error::spec("scenario needs at least one replication"));
        }
        if self.n_subjects == 0 {
            return Err(Error::spec("scenario needs at least one subject"));
        }
        if !self.beta1.is_finite() {
            return Err(Error::spec("beta1 must be finite"));
        }
        self.generator_model().validate()
    }

    /// Generating model: random slope unless `σ_1² = 0`.
    pub fn generator_model(&self) -> Generator {
        let slope = self.sigma1_sq > 0.0;
        let spec = study_spec(self.generator, self.cdf, slope);
        Generator {
            covariance: if slope {
                Covariance::diagonal(self.sigma0_sq, self.sigma1_sq)
            } else {
                Covariance::intercept(self.sigma0_sq)
            },
            items: ItemParams::per_item(self.deltas.thresholds()),
            beta: vec![self.beta1],
            n_subjects: self.n_subjects,
            times: self.times.clone(),
            spec,
        }
    }

    /// Seed of one replication's dataset.
    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, &self.name)
    }

    pub fn simulate(&self, replication: u32) -> Result<Dataset> {
        simulate_from(&self.generator_model(), self.dataset_seed(), replication)
    }
}

fn cell_name(generator: RatioFamily, deltas: DeltaSet, beta1: f64, sigma1_sq: f64) -> String {
    format!(
        "{}_{}_b{}_s{}",
        generator.name(),
        deltas.name(),
        beta1,
        sigma1_sq
    )
}

/// Two items with four categories, time as the only fixed effect.
pub fn study_spec(family: RatioFamily, cdf: CdfKind, slope: bool) -> ModelSpec {
    let spec = ModelSpec::new(
        family,
        cdf,
        vec![ItemSpec::new("item1", 4), ItemSpec::new("item2", 4)],
    )
    .with_fixed_effects(vec![FixedEffect::time()]);
    if slope {
        spec.with_random_effects(RandomEffects::InterceptAndSlope, CovStructure::Diagonal)
    } else {
        spec
    }
}

/// Outcome of one model class on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassOutcome {
    pub class: ModelClass,
    pub selected: Option<u8>,
    pub bic_m1: f64,
    pub bic_m2: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: u32,
    pub outcomes: Vec<ClassOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class: ModelClass,
    pub m1: usize,
    pub m2: usize,
    pub failures: usize,
}

impl ClassSummary {
    /// Percentage among converged replications.
    pub fn m1_frequency(&self) -> f64 {
        percentage(self.m1, self.m1 + self.m2)
    }

    pub fn m2_frequency(&self) -> f64 {
        percentage(self.m2, self.m1 + self.m2)
    }
}

fn percentage(k: usize, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        100.0 * k as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub scenario: Scenario,
    pub classes: Vec<ClassSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl SelectionSummary {
    pub fn class(&self, class: ModelClass) -> Option<&ClassSummary> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Fits M1 and M2 of an IRT class and returns both fits. M2 starts from the
/// M1 estimates; if it ends below M1 it is refitted with the slope
/// variance starting at its floor.
pub fn fit_nested_pair(
    data: &Dataset,
    family: RatioFamily,
    cdf: CdfKind,
    opts: &FitOptions,
) -> Result<(FitResult, FitResult)> {
    let spec1 = study_spec(family, cdf, false);
    let spec2 = study_spec(family, cdf, true);
    let quick = FitOptions {
        standard_errors: false,
        ..opts.clone()
    };
    let m1 = fit(&spec1, data, None, &quick)?;
    let start = |log_sd1: f64, min_log_gap: f64| -> ParameterVector {
        let mut p = m1.params.0.clone();
        for (v, name) in p.iter_mut().zip(&spec1.layout().names) {
            if name.contains(".log_gap") {
                *v = v.max(min_log_gap);
            }
        }
        p.push(log_sd1);
        ParameterVector(p)
    };
    // Collapsed gaps have vanishing gradients, so they are reopened first.
    let m2 = fit(
        &spec2,
        data,
        Some(&start(0.5 * 0.05f64.ln(), 0.1f64.ln())),
        &quick,
    );
    let m2 = match m2 {
        Ok(f) if f.loglik >= m1.loglik - 1e-6 => f,
        other => {
            let nested = fit(
                &spec2,
                data,
                Some(&start(LOG_SCALE_FLOOR, f64::NEG_INFINITY)),
                &quick,
            )?;
            match other {
                Ok(f) if f.loglik > nested.loglik => f,
                _ => nested,
            }
        }
    };
    Ok((m1, m2))
}

fn outcome(class: ModelClass, res: Result<(f64, usize, f64, usize)>) -> ClassOutcome {
    match res {
        Ok((b1, k1, b2, k2)) => ClassOutcome {
            class,
            selected: Some(match select_by_bic(b1, k1, b2, k2) {
                Selected::First => 1,
                Selected::Second => 2,
            }),
            bic_m1: b1,
            bic_m2: b2,
            error: None,
        },
        Err(e) => ClassOutcome {
            class,
            selected: None,
            bic_m1: f64::NAN,
            bic_m2: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

/// Simulates one replication and runs the requested model comparisons.
pub fn run_replication(
    scenario: &Scenario,
    classes: &[ModelClass],
    quad: &QuadratureRule,
    replication: u32,
) -> Result<ReplicationRecord> {
    let data = scenario.simulate(replication)?;
    let opts = FitOptions {
        quadrature: quad.clone(),
        ..FitOptions::default()
    };
    let outcomes = classes
        .iter()
        .map(|&class| {
            let res = match class {
                ModelClass::Lmm => score_dataset(&data).and_then(|s| {
                    let m1 = fit_lmm(LmmModel::M1, &s, 0.0)?;
                    let m2 = fit_lmm(LmmModel::M2, &s, 0.0)?;
                    if !(m1.converged && m2.converged) {
                        return Err(Error::Inference(
                            "linear mixed model did not converge".into(),
                        ));
                    }
                    Ok((m1.bic, m1.n_params, m2.bic, m2.n_params))
                }),
                ModelClass::Adjacent | ModelClass::Cumulative => {
                    let family = if class == ModelClass::Adjacent {
                        RatioFamily::Adjacent
                    } else {
                        RatioFamily::Cumulative
                    };
                    fit_nested_pair(&data, family, scenario.cdf, &opts)
                        .map(|(m1, m2)| (m1.bic, m1.n_params, m2.bic, m2.n_params))
                }
            };
            outcome(class, res)
        })
        .collect();
    Ok(ReplicationRecord {
        replication,
        outcomes,
    })
}

/// Runs every replication (in parallel on the current rayon pool) and
/// tallies selections. Fit failures are counted, not fatal.
pub fn run_scenario(
    scenario: &Scenario,
    classes: &[ModelClass],
    quad: &QuadratureRule,
) -> Result<SelectionSummary> {
    scenario.validate()?;
    if classes.is_empty() {
        return Err(Error::spec("no model classes requested"));
    }
    let records = (0..scenario.replications as u32)
        .into_par_iter()
        .with_max_len(1)
        .map(|r| run_replication(scenario, classes, quad, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(scenario, classes, records))
}

pub fn summarize(
    scenario: &Scenario,
    classes: &[ModelClass],
    records: Vec<ReplicationRecord>,
) -> SelectionSummary {
    let classes = classes
        .iter()
        .map(|&class| {
            let mut s = ClassSummary {
                class,
                m1: 0,
                m2: 0,
                failures: 0,
            };
            for o in records
                .iter()
                .flat_map(|r| &r.outcomes)
                .filter(|o| o.class == class)
            {
                match o.selected {
                    Some(1) => s.m1 += 1,
                    Some(_) => s.m2 += 1,
                    None => s.failures += 1,
                }
            }
            s
        })
        .collect();
    SelectionSummary {
        scenario: scenario.clone(),
        classes,
        records,
    }
}

/// Scenario collection read from a manifest or built in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub replications: usize,
    pub subjects: usize,
    pub times: Vec<f64>,
    pub sigma0_sq: f64,
    pub fit_models: Vec<ModelClass>,
    pub scenarios: Vec<Scenario>,
}

/// Generator and difficulty pairings of the four scenario columns.
pub const STUDY_COLUMNS: [(RatioFamily, DeltaSet); 4] = [
    (RatioFamily::Adjacent, DeltaSet::Near),
    (RatioFamily::Cumulative, DeltaSet::Far),
    (RatioFamily::Cumulative, DeltaSet::Near),
    (RatioFamily::Adjacent, DeltaSet::Far),
];

/// `(σ_1², β_1)` rows of the first table (frequency of M1).
pub const TABLE4_ROWS: [(f64, f64); 10] = [
    (0.2, -0.3),
    (0.2, 0.3),
    (0.0, -0.5),
    (0.0, -0.3),
    (0.0, -0.2),
    (0.0, -0.1),
    (0.0, 0.0),
    (0.0, 0.1),
    (0.0, 0.3),
    (0.0, 0.5),
];

/// `(β_1, σ_1²)` rows of the second table (frequency of M2).
pub const TABLE5_ROWS: [(f64, f64); 14] = [
    (1.0, 0.01),
    (1.0, 0.02),
    (1.0, 0.03),
    (1.0, 0.05),
    (1.0, 0.2),
    (1.0, 0.5),
    (0.3, 0.002),
    (0.3, 0.005),
    (0.3, 0.008),
    (0.3, 0.01),
    (0.3, 0.02),
    (-0.3, 0.002),
    (-0.3, 0.005),
    (-0.3, 0.008),
];

impl Manifest {
    /// Every cell of both tables for every scenario column.
    pub fn builtin(replications: usize, seed: u64) -> Manifest {
        let mut m = Manifest {
            replications,
            subjects: DEFAULT_SUBJECTS,
            times: DEFAULT_TIMES.to_vec(),
            sigma0_sq: DEFAULT_SIGMA0_SQ,
            fit_models: ModelClass::ALL.to_vec(),
            scenarios: Vec::new(),
        };
        m.push_builtin(seed);
        m
    }

    fn push_builtin(&mut self, seed: u64) {
        let cells = TABLE4_ROWS
            .iter()
            .map(|&(s, b)| (4u8, b, s))
            .chain(TABLE5_ROWS.iter().map(|&(b, s)| (5u8, b, s)));
        for (table, beta1, sigma1_sq) in cells {
            for (generator, deltas) in STUDY_COLUMNS {
                let mut sc = Scenario::new(generator, deltas, beta1, sigma1_sq);
                sc.name = format!("t{table}_{}", sc.name);
                sc.table = Some(table);
                sc.seed = seed;
                self.apply_globals(&mut sc);
                self.scenarios.push(sc);
            }
        }
    }

    fn apply_globals(&self, sc: &mut Scenario) {
        sc.replications = self.replications;
        sc.n_subjects = self.subjects;
        sc.times = self.times.clone();
        sc.sigma0_sq = self.sigma0_sq;
    }

    /// Parses the key-value manifest format:
    ///
    /// ```text
    /// replications = 100
    /// subjects = 300
    /// times = [0, 1, 2, 4, 6, 8, 10, 12]
    /// sigma0_sq = 1.5
    /// fit_models = [lmm, adjacent, cumulative]
    /// grid = builtin            # optional: all built-in cells
    /// scenario.<name>.generator = adjacent | cumulative | sequential
    /// scenario.<name>.cdf = logistic           # optional
    /// scenario.<name>.deltas = near | far
    /// scenario.<name>.beta1 = 0.3
    /// scenario.<name>.sigma1_sq = 0.2
    /// scenario.<name>.sigma0_sq = 1.5          # optional override
    /// ```
    pub fn parse(text: &str, seed: u64) -> Result<Manifest> {
        let doc = ConfigDoc::parse(text)?;
        doc.reject_unknown(|k| {
            matches!(
                k,
                "replications" | "subjects" | "times" | "sigma0_sq" | "fit_models" | "grid"
            ) || matches!(
                k.split('.').collect::<Vec<_>>().as_slice(),
                [
                    "scenario",
                    _,
                    "generator" | "cdf" | "deltas" | "beta1" | "sigma1_sq" | "sigma0_sq"
                ]
            )
        })?;
        let mut m = Manifest {
            replications: doc.parsed("replications")?.unwrap_or(DEFAULT_REPLICATIONS),
            subjects: doc.parsed("subjects")?.unwrap_or(DEFAULT_SUBJECTS),
            times: doc
                .parsed_list("times")?
                .unwrap_or_else(|| DEFAULT_TIMES.to_vec()),
            sigma0_sq: doc.parsed("sigma0_sq")?.unwrap_or(DEFAULT_SIGMA0_SQ),
            fit_models: match doc.list("fit_models") {
                None => ModelClass::ALL.to_vec(),
                Some((names, _)) => names
                    .into_iter()
                    .map(ModelClass::parse)
                    .collect::<Result<_>>()?,
            },
            scenarios: Vec::new(),
        };
        match doc.scalar("grid")? {
            None => {}
            Some(("builtin", _)) => m.push_builtin(seed),
            Some((other, line)) => {
                return Err(Error::parse(line, format!("unknown grid '{other}'")))
            }
        }
        for name in doc.sections("scenario") {
            let key = |f: &str| format!("scenario.{name}.{f}");
            let need = |f: &str| -> Result<&str> {
                doc.scalar(&key(f))?
                    .map(|(s, _)| s)
                    .ok_or_else(|| Error::spec(format!("scenario '{name}' needs '{f}'")))
            };
            let generator: RatioFamily = need("generator")?.parse()?;
            let deltas = DeltaSet::parse(need("deltas")?)?;
            let beta1: f64 = doc
                .parsed(&key("beta1"))?
                .ok_or_else(|| Error::spec(format!("scenario '{name}' needs 'beta1'")))?;
            let sigma1_sq: f64 = doc
                .parsed(&key("sigma1_sq"))?
                .ok_or_else(|| Error::spec(format!("scenario '{name}' needs 'sigma1_sq'")))?;
            let mut sc = Scenario::new(generator, deltas, beta1, sigma1_sq);
            sc.name = name.clone();
            sc.seed = seed;
            if let Some(cdf) = doc.parsed::<CdfKind>(&key("cdf"))? {
                sc.cdf = cdf;
            }
            m.apply_globals(&mut sc);
            if let Some(s0) = doc.parsed::<f64>(&key("sigma0_sq"))? {
                sc.sigma0_sq = s0;
            }
            m.scenarios.push(sc);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn with_replications(mut self, n: usize) -> Manifest {
        self.replications = n;
        for sc in &mut self.scenarios {
            sc.replications = n;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::spec("manifest defines no scenarios"));
        }
        if self.fit_models.is_empty() {
            return Err(Error::spec("manifest requests no model classes"));
        }
        for (k, sc) in self.scenarios.iter().enumerate() {
            if self.scenarios[..k].iter().any(|o| o.name == sc.name) {
                return Err(Error::spec(format!("duplicate scenario '{}'", sc.name)));
            }
            sc.validate()?;
        }
        Ok(())
    }
}

fn fmt_freq(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.1}")
    } else {
        String::new()
    }
}

/// Long-format CSV: one row per scenario and model class.
pub fn write_summary_csv<W: Write>(summaries: &[SelectionSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "table",
        "generator",
        "deltas",
        "beta1",
        "sigma1_sq",
        "class",
        "m1_count",
        "m2_count",
        "failures",
        "m1_frequency",
        "m2_frequency",
    ])?;
    for s in summaries {
        let sc = &s.scenario;
        for c in &s.classes {
            w.write_record([
                sc.name.clone(),
                sc.table.map(|t| t.to_string()).unwrap_or_default(),
                sc.generator.name().to_string(),
                sc.deltas.name().to_string(),
                sc.beta1.to_string(),
                sc.sigma1_sq.to_string(),
                c.class.name().to_string(),
                c.m1.to_string(),
                c.m2.to_string(),
                c.failures.to_string(),
                fmt_freq(c.m1_frequency()),
                fmt_freq(c.m2_frequency()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide table: one row per `(σ_1², β_1)` cell, one column per scenario
/// column and model class, plus total failures. Table 4 reports the M1
/// frequency, table 5 the M2 frequency.
pub fn write_table_csv<W: Write>(
    summaries: &[SelectionSummary],
    table: u8,
    classes: &[ModelClass],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sigma1_sq".to_string(), "beta1".to_string()];
    for (g, d) in STUDY_COLUMNS {
        for c in classes {
            header.push(format!("{}_{}_{}", g.name(), d.name(), c.name()));
        }
    }
    header.push("failures".into());
    w.write_record(&header)?;
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for s in summaries.iter().filter(|s| s.scenario.table == Some(table)) {
        let k = (s.scenario.sigma1_sq, s.scenario.beta1);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (sigma1_sq, beta1) in keys {
        let mut row = vec![sigma1_sq.to_string(), beta1.to_string()];
        let mut failures = 0;
        for (g, d) in STUDY_COLUMNS {
            let cell = summaries.iter().find(|s| {
                let sc = &s.scenario;
                sc.table == Some(table)
                    && sc.generator == g
                    && sc.deltas == d
                    && sc.sigma1_sq == sigma1_sq
                    && sc.beta1 == beta1
            });
            for &c in classes {
                let v = cell.and_then(|s| s.class(c)).map(|cs| {
                    failures += cs.failures;
                    if table == 4 {
                        cs.m1_frequency()
                    } else {
                        cs.m2_frequency()
                    }
                });
                row.push(v.map(fmt_freq).unwrap_or_default());
            }
        }
        row.push(failures.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replication CSV of one scenario.
pub fn write_records_csv<W: Write>(summary: &SelectionSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "replication",
        "class",
        "selected",
        "bic_m1",
        "bic_m2",
        "error",
    ])?;
    let num = |v: f64| {
        if v.is_finite() {
            format!("{v:.6}")
        } else {
            String::new()
        }
    };
    for r in &summary.records {
        for o in &r.outcomes {
            w.write_record([
                r.replication.to_string(),
                o.class.name().to_string(),
                o.selected.map(|s| format!("M{s}")).unwrap_or_default(),
                num(o.bic_m1),
                num(o.bic_m2),
                o.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
