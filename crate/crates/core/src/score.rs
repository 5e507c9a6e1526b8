//! Summary scores on the 0-100 scale.

use std::io::Write;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Mean item response rescaled to `[0, 100]`. Missing items are ignored
/// when at least half of the items are present; otherwise the score is
/// missing.
pub fn eortc_score(responses: &[Option<u8>], max_category: usize) -> Result<Option<f64>> {
    if max_category == 0 {
        return Err(Error::spec("maximum category must be positive"));
    }
    let mut sum = 0usize;
    let mut present = 0usize;
    for y in responses.iter().flatten() {
        if *y as usize > max_category {
            return Err(Error::Category {
                item: None,
                category: *y as i64,
                max: max_category,
            });
        }
        sum += *y as usize;
        present += 1;
    }
    if present == 0 || 2 * present < responses.len() {
        return Ok(None);
    }
    Ok(Some(
        (sum as f64 / present as f64) * (100.0 / max_category as f64),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorePoint {
    pub subject: String,
    pub visit: u32,
    pub time: f64,
    pub score: f64,
}

/// Scores per `(subject, visit)`, grouped by subject in dataset order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSeries {
    pub points: Vec<ScorePoint>,
}

impl ScoreSeries {
    /// Consecutive runs of points that belong to one subject.
    pub fn by_subject(&self) -> Vec<&[ScorePoint]> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=self.points.len() {
            if k == self.points.len() || self.points[k].subject != self.points[start].subject {
                if k > start {
                    out.push(&self.points[start..k]);
                }
                start = k;
            }
        }
        out
    }
}

/// Scores every visit. Items flagged `reversed` were already reflected at
/// ingestion, so every item points in the same direction here.
pub fn score_dataset(data: &Dataset) -> Result<ScoreSeries> {
    let cats = data.categories();
    if cats.is_empty() || cats.iter().any(|&c| c != cats[0]) {
        return Err(Error::data(
            "scoring requires items with a common number of categories",
        ));
    }
    let max = cats[0] - 1;
    let mut points = Vec::new();
    for s in data.subjects() {
        for v in &s.visits {
            if let Some(score) = eortc_score(&v.responses, max)? {
                points.push(ScorePoint {
                    subject: s.id.clone(),
                    visit: v.visit,
                    time: v.time,
                    score,
                });
            }
        }
    }
    Ok(ScoreSeries { points })
}

/// CSV with columns `subject,visit,time,score`.
pub fn write_scores_csv<W: Write>(scores: &ScoreSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject", "visit", "time", "score"])?;
    for p in &scores.points {
        w.write_record([
            p.subject.clone(),
            p.visit.to_string(),
            p.time.to_string(),
            format!("{:.6}", p.score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(eortc_score(&[Some(1), Some(2)], 3).unwrap(), Some(50.0));
        assert_eq!(eortc_score(&[Some(0), Some(0)], 3).unwrap(), Some(0.0));
        assert_eq!(eortc_score(&[Some(3), Some(3)], 3).unwrap(), Some(100.0));
    }

    #[test]
    fn half_rule() {
        assert_eq!(eortc_score(&[Some(3), None], 3).unwrap(), Some(100.0));
        assert_eq!(eortc_score(&[None, None], 3).unwrap(), None);
        assert_eq!(eortc_score(&[Some(3), None, None], 3).unwrap(), None);
        assert_eq!(
            eortc_score(&[Some(1), Some(2), None, None], 3).unwrap(),
            Some(50.0)
        );
        assert!(eortc_score(&[Some(4)], 3).is_err());
    }

    #[test]
    fn multiples_of_the_grid() {
        for a in 0..=3u8 {
            for b in 0..=3u8 {
                let s = eortc_score(&[Some(a), Some(b)], 3).unwrap().unwrap();
                let step = 100.0 / 6.0;
                assert!((s / step - (s / step).round()).abs() < 1e-12);
                assert!((0.0..=100.0).contains(&s));
            }
        }
    }
}
