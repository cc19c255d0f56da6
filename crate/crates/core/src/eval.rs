//! Accuracy and AUROC over a labeled set.

use std::io::Write;
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::dataset::MemeSample;
use crate::media::Image;
use crate::pipeline::Pipeline;
use crate::verdict::{Harmfulness, UNRESOLVED_SCORE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub truth: bool,
    pub predicted: Harmfulness,
    pub score: f64,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn is_correct(&self) -> bool {
        match self.predicted {
            Harmfulness::Yes => self.truth,
            Harmfulness::No => !self.truth,
            Harmfulness::Unresolved => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no records to evaluate")]
    Empty,
    #[error("AUROC is undefined without both positive and negative records")]
    SingleClass,
    #[error("sample {0} has no ground-truth label")]
    MissingTruth(String),
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Mann-Whitney AUROC with ties counted one half.
///
/// Sorts once and walks tie groups, accumulating twice the U statistic as
/// an integer so the result is exact up to the final division.
pub fn auroc(records: &[EvalRecord]) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut scored: Vec<(f64, bool)> = records.iter().map(|r| (r.score, r.truth)).collect();
    let n_pos = scored.iter().filter(|(_, t)| *t).count() as u64;
    let n_neg = scored.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < scored.len() && scored[j].0 == scored[i].0 {
            if scored[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_unresolved: usize,
    pub accuracy: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
}

impl EvalReport {
    pub fn from_records(records: &[EvalRecord]) -> Result<Self, MetricError> {
        let n_pos = records.iter().filter(|r| r.truth).count();
        Ok(Self {
            n: records.len(),
            n_pos,
            n_neg: records.len() - n_pos,
            n_unresolved: records.iter().filter(|r| r.predicted == Harmfulness::Unresolved).count(),
            accuracy: accuracy(records)?,
            auroc: auroc(records).ok(),
        })
    }

    pub fn render_table(&self) -> String {
        let auroc = self.auroc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        let rows = [
            ("n", self.n.to_string()),
            ("positives", self.n_pos.to_string()),
            ("negatives", self.n_neg.to_string()),
            ("unresolved", self.n_unresolved.to_string()),
            ("accuracy", format!("{:.4}", self.accuracy)),
            ("auroc", auroc),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<12}{v:>10}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Sorted by sample id.
    pub records: Vec<EvalRecord>,
    pub report: EvalReport,
}

impl Evaluation {
    pub fn write_log(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

async fn evaluate_one(sample: &MemeSample, path: &Path, truth: bool, pipeline: &Pipeline) -> EvalRecord {
    let failed = |error: String, attempts| EvalRecord {
        sample_id: sample.id.clone(),
        truth,
        predicted: Harmfulness::Unresolved,
        score: UNRESOLVED_SCORE,
        attempts,
        error: Some(error),
    };
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => return failed(format!("{}: {e}", path.display()), 0),
    };
    let image = match Image::from_bytes(bytes) {
        Ok(i) => i,
        Err(e) => return failed(e.to_string(), 0),
    };
    match pipeline.classify(&image).await {
        Ok(run) => EvalRecord {
            sample_id: sample.id.clone(),
            truth,
            predicted: run.verdict.harmful,
            score: run.verdict.score,
            attempts: run.verdict.attempts,
            error: None,
        },
        Err(f) => failed(f.error.to_string(), f.verdict.attempts),
    }
}

/// Runs the pipeline over every sample with up to `parallel` in flight.
/// Output order and metrics do not depend on `parallel`.
pub async fn evaluate(
    samples: &[MemeSample],
    base_dir: &Path,
    pipeline: &Pipeline,
    parallel: usize,
) -> Result<Evaluation, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut jobs = Vec::with_capacity(samples.len());
    for s in samples {
        let truth = s.ground_truth().ok_or_else(|| MetricError::MissingTruth(s.id.clone()))?;
        jobs.push((s, base_dir.join(&s.path), truth));
    }
    let mut records: Vec<EvalRecord> = stream::iter(jobs)
        .map(|(s, path, truth)| async move { evaluate_one(s, &path, truth, pipeline).await })
        .buffer_unordered(parallel.max(1))
        .collect()
        .await;
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let report = EvalReport::from_records(&records)?;
    Ok(Evaluation { records, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(truth: bool, predicted: Harmfulness, score: f64) -> EvalRecord {
        EvalRecord {
            sample_id: String::new(),
            truth,
            predicted,
            score,
            attempts: 1,
            error: None,
        }
    }

    #[test]
    fn accuracy_counts_unresolved_as_wrong() {
        use Harmfulness::*;
        let rs = [
            rec(true, Yes, 0.9),
            rec(false, No, 0.1),
            rec(true, Yes, 0.7),
            rec(true, Unresolved, 0.5),
        ];
        assert_eq!(accuracy(&rs).unwrap(), 0.75);
        assert_eq!(accuracy(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn auroc_edges() {
        use Harmfulness::*;
        let sep = [rec(true, Yes, 0.9), rec(true, Yes, 0.8), rec(false, No, 0.1), rec(false, No, 0.2)];
        assert_eq!(auroc(&sep).unwrap(), 1.0);
        let ties = [rec(true, Unresolved, 0.5), rec(false, Unresolved, 0.5), rec(true, Unresolved, 0.5)];
        assert_eq!(auroc(&ties).unwrap(), 0.5);
        assert_eq!(auroc(&sep[..2]), Err(MetricError::SingleClass));
    }

    #[test]
    fn all_unresolved_report() {
        let rs = [rec(true, Harmfulness::Unresolved, 0.5), rec(false, Harmfulness::Unresolved, 0.5)];
        let r = EvalReport::from_records(&rs).unwrap();
        assert_eq!((r.accuracy, r.auroc, r.n_unresolved), (0.0, Some(0.5), 2));
    }
}
