//! Longitudinal item-response datasets and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// One visit of one subject: time, covariates and a response slot per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub visit: u32,
    pub time: f64,
    pub covariates: Vec<f64>,
    /// Indexed by item; `None` is a missing response.
    pub responses: Vec<Option<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Sorted by visit number.
    pub visits: Vec<Visit>,
}

/// Validated dataset. Subjects are sorted by id, so summation order does
/// not depend on row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    item_ids: Vec<String>,
    categories: Vec<usize>,
    covariate_names: Vec<String>,
    subjects: Vec<Subject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub observations: usize,
    pub missing: usize,
    pub subjects: usize,
    pub items: usize,
    pub ignored_columns: Vec<String>,
}

pub struct DatasetBuilder {
    item_ids: Vec<String>,
    categories: Vec<usize>,
    covariate_names: Vec<String>,
    subjects: BTreeMap<String, BTreeMap<u32, Visit>>,
    seen: BTreeSet<(String, u32, usize)>,
}

impl DatasetBuilder {
    pub fn new(
        item_ids: Vec<String>,
        categories: Vec<usize>,
        covariate_names: Vec<String>,
    ) -> Self {
        DatasetBuilder {
            item_ids,
            categories,
            covariate_names,
            subjects: BTreeMap::new(),
            seen: BTreeSet::new(),
        }
    }

    pub fn for_spec(spec: &ModelSpec) -> Self {
        DatasetBuilder::new(
            spec.items.iter().map(|i| i.id.clone()).collect(),
            spec.items.iter().map(|i| i.categories).collect(),
            spec.covariate_names(),
        )
    }

    /// Adds one response row. `item` indexes the builder's item list.
    pub fn push(
        &mut self,
        subject: &str,
        visit: u32,
        time: f64,
        item: usize,
        response: Option<u8>,
        covariates: &[f64],
    ) -> Result<()> {
        let n_items = self.item_ids.len();
        if item >= n_items {
            return Err(Error::data(format!("item index {item} out of range")));
        }
        if let Some(y) = response {
            let max = self.categories[item] - 1;
            if y as usize > max {
                return Err(Error::Category {
                    item: Some(self.item_ids[item].clone()),
                    category: y as i64,
                    max,
                });
            }
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::data(format!(
                "time must be finite and non-negative, got {time}"
            )));
        }
        if covariates.len() != self.covariate_names.len()
            || covariates.iter().any(|c| !c.is_finite())
        {
            return Err(Error::data("covariate values missing or not finite"));
        }
        let visits = self.subjects.entry(subject.to_string()).or_default();
        let slot = visits.entry(visit).or_insert_with(|| Visit {
            visit,
            time,
            covariates: covariates.to_vec(),
            responses: vec![None; n_items],
        });
        if slot.time != time {
            return Err(Error::data(format!(
                "subject '{subject}' visit {visit} has inconsistent times"
            )));
        }
        if slot.covariates != covariates {
            return Err(Error::data(format!(
                "subject '{subject}' visit {visit} has inconsistent covariates"
            )));
        }
        if !self.seen.insert((subject.to_string(), visit, item)) {
            return Err(Error::data(format!(
                "duplicate row for subject '{subject}', visit {visit}, item '{}'",
                self.item_ids[item]
            )));
        }
        slot.responses[item] = response;
        Ok(())
    }

    pub fn finish(self) -> Result<Dataset> {
        let mut subjects = Vec::with_capacity(self.subjects.len());
        for (id, visits) in self.subjects {
            let visits: Vec<Visit> = visits.into_values().collect();
            if visits.windows(2).any(|w| w[1].time < w[0].time) {
                return Err(Error::data(format!(
                    "subject '{id}' has visit times that decrease with the visit number"
                )));
            }
            subjects.push(Subject { id, visits });
        }
        Ok(Dataset {
            item_ids: self.item_ids,
            categories: self.categories,
            covariate_names: self.covariate_names,
            subjects,
        })
    }
}

impl Dataset {
    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.responses().filter(|r| r.is_some()).count()
    }

    pub fn n_missing(&self) -> usize {
        self.responses().filter(|r| r.is_none()).count()
    }

    fn responses(&self) -> impl Iterator<Item = &Option<u8>> {
        self.subjects
            .iter()
            .flat_map(|s| s.visits.iter().flat_map(|v| v.responses.iter()))
    }

    /// Observed category counts per item.
    pub fn category_counts(&self) -> Vec<Vec<usize>> {
        let mut counts: Vec<Vec<usize>> = self.categories.iter().map(|&c| vec![0; c]).collect();
        for s in &self.subjects {
            for v in &s.visits {
                for (j, r) in v.responses.iter().enumerate() {
                    if let Some(y) = r {
                        counts[j][*y as usize] += 1;
                    }
                }
            }
        }
        counts
    }

    /// Items and covariates line up with the spec.
    pub fn check_compatible(&self, spec: &ModelSpec) -> Result<()> {
        let ids: Vec<&str> = spec.items.iter().map(|i| i.id.as_str()).collect();
        let cats: Vec<usize> = spec.items.iter().map(|i| i.categories).collect();
        if self.item_ids.iter().map(String::as_str).collect::<Vec<_>>() != ids
            || self.categories != cats
        {
            return Err(Error::spec(
                "dataset items do not match the model specification",
            ));
        }
        if self.covariate_names != spec.covariate_names() {
            return Err(Error::spec(
                "dataset covariates do not match the model specification",
            ));
        }
        Ok(())
    }

    /// Returns a copy with every response `y` replaced by `M - y`.
    pub fn reversed(&self) -> Dataset {
        let mut out = self.clone();
        for s in &mut out.subjects {
            for v in &mut s.visits {
                for (j, r) in v.responses.iter_mut().enumerate() {
                    if let Some(y) = r {
                        *y = (self.categories[j] - 1) as u8 - *y;
                    }
                }
            }
        }
        out
    }

    /// FNV-1a hash of the full content; identical data give identical values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        for (id, c) in self.item_ids.iter().zip(&self.categories) {
            h.bytes(id.as_bytes());
            h.bytes(&(*c as u64).to_le_bytes());
        }
        for name in &self.covariate_names {
            h.bytes(name.as_bytes());
        }
        for s in &self.subjects {
            h.bytes(s.id.as_bytes());
            for v in &s.visits {
                h.bytes(&v.visit.to_le_bytes());
                h.bytes(&v.time.to_bits().to_le_bytes());
                for c in &v.covariates {
                    h.bytes(&c.to_bits().to_le_bytes());
                }
                for r in &v.responses {
                    h.bytes(&[r.map_or(0xff, |y| y)]);
                }
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Fnv {
    fn bytes(&mut self, data: &[u8]) {
        for &b in data {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // length separator keeps field boundaries distinct
        self.0 ^= data.len() as u64;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }
}

const REQUIRED: [&str; 5] = ["subject", "visit", "time", "item", "response"];

/// Reads `subject,visit,time,item,response[,covariates]`. Items marked
/// `reversed` in the spec are stored as `M - y`.
pub fn ingest_csv<R: Read>(reader: R, spec: &ModelSpec) -> Result<(Dataset, IngestReport)> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 5];
    for (k, name) in REQUIRED.iter().enumerate() {
        idx[k] = col(name).ok_or_else(|| Error::parse(1, format!("missing column '{name}'")))?;
    }
    let cov_names = spec.covariate_names();
    let cov_idx = cov_names
        .iter()
        .map(|c| col(c).ok_or_else(|| Error::parse(1, format!("missing covariate column '{c}'"))))
        .collect::<Result<Vec<_>>>()?;
    let mut report = IngestReport {
        ignored_columns: headers
            .iter()
            .filter(|h| !REQUIRED.contains(h) && !cov_names.iter().any(|c| c == h))
            .map(str::to_string)
            .collect(),
        ..IngestReport::default()
    };
    let mut builder = DatasetBuilder::for_spec(spec);
    let mut covs = vec![0.0; cov_idx.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let subject = field(0);
        if subject.is_empty() {
            return Err(Error::parse(line, "empty subject"));
        }
        let visit: u32 = field(1)
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid visit '{}'", field(1))))?;
        let time: f64 = field(2)
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid time '{}'", field(2))))?;
        let item_id = field(3);
        let j = spec
            .item_index(item_id)
            .ok_or_else(|| Error::parse(line, format!("unknown item '{item_id}'")))?;
        let item = &spec.items[j];
        let max = item.categories - 1;
        let response = match field(4) {
            "" => {
                report.missing += 1;
                None
            }
            raw => {
                let y: i64 = raw
                    .parse()
                    .map_err(|_| Error::parse(line, format!("invalid response '{raw}'")))?;
                if y < 0 || y as usize > max {
                    return Err(Error::parse(
                        line,
                        format!("category {y} out of range 0..={max} for item {item_id}"),
                    ));
                }
                report.observations += 1;
                let y = y as usize;
                Some(if item.reversed { max - y } else { y } as u8)
            }
        };
        for (c, &k) in covs.iter_mut().zip(&cov_idx) {
            let raw = rec.get(k).unwrap_or("");
            *c = raw
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid covariate value '{raw}'")))?;
        }
        builder
            .push(subject, visit, time, j, response, &covs)
            .map_err(|e| Error::parse(line, e.to_string()))?;
        report.rows += 1;
    }
    let data = builder.finish()?;
    report.subjects = data.n_subjects();
    report.items = spec.items.len();
    Ok((data, report))
}

pub fn ingest_path(path: &Path, spec: &ModelSpec) -> Result<(Dataset, IngestReport)> {
    ingest_csv(std::fs::File::open(path)?, spec)
}

/// Writes a dataset in the ingestion format, undoing reversal flags.
pub fn write_csv<W: std::io::Write>(data: &Dataset, spec: &ModelSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for s in &data.subjects {
        for v in &s.visits {
            for (j, r) in v.responses.iter().enumerate() {
                let mut row = vec![
                    s.id.clone(),
                    v.visit.to_string(),
                    v.time.to_string(),
                    data.item_ids[j].clone(),
                ];
                row.push(match r {
                    None => String::new(),
                    Some(y) => {
                        let max = data.categories[j] as u8 - 1;
                        let reversed = spec.items.get(j).is_some_and(|i| i.reversed);
                        (if reversed { max - y } else { *y }).to_string()
                    }
                });
                row.extend(v.covariates.iter().map(|c| c.to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
