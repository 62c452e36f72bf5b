//! Per-step accuracy, progression-quartile accuracy and macro F1.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::represent::NestedSequence;
use crate::way::WayModel;

/// Per-step predictions for one trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: usize,
    pub predictions: Vec<usize>,
}

impl PredictionRecord {
    pub fn correct_in(&self, steps: Range<usize>) -> usize {
        self.predictions[steps].iter().filter(|&&p| p == self.label).count()
    }
}

/// Argmax of every row; ties go to the lowest index.
pub fn argmax_rows(logits: &crate::nn::Tensor) -> Vec<usize> {
    let rows = logits.shape()[0];
    (0..rows)
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

pub fn predict(model: &WayModel, seq: &NestedSequence) -> Result<PredictionRecord> {
    let logits = model.logits(seq)?;
    Ok(PredictionRecord {
        id: seq.id.clone(),
        label: seq.label,
        predictions: argmax_rows(&logits),
    })
}

pub fn overall_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("prediction records"));
    }
    let total: usize = records.iter().map(|r| r.predictions.len()).sum();
    if total == 0 {
        return Err(Error::Empty("prediction steps"));
    }
    let correct: usize = records.iter().map(|r| r.correct_in(0..r.predictions.len())).sum();
    Ok(correct as f64 / total as f64)
}

/// Zero-based steps of quartile `q` (1..=4) of an `n`-step trajectory: the
/// one-based steps `floor((q-1)n/4) + 1 ..= floor(qn/4)`.
pub fn quartile_range(n: usize, q: usize) -> Range<usize> {
    assert!((1..=4).contains(&q), "quartile {q} outside 1..=4");
    (q - 1) * n / 4..q * n / 4
}

/// `(correct, total)` steps of quartile `q` across all records.
pub fn quartile_counts(records: &[PredictionRecord], q: usize) -> (usize, usize) {
    records.iter().fold((0, 0), |(c, t), r| {
        let range = quartile_range(r.predictions.len(), q);
        (c + r.correct_in(range.clone()), t + range.len())
    })
}

/// Accuracy within quartile `q`; `None` when no trajectory has a step there.
pub fn quartile_accuracy(records: &[PredictionRecord], q: usize) -> Option<f64> {
    let (c, t) = quartile_counts(records, q);
    (t > 0).then(|| c as f64 / t as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
}

/// Macro F1 over classes that occur as a label or a prediction, plus the
/// per-class table sorted by class.
pub fn macro_f1(records: &[PredictionRecord]) -> (f64, Vec<ClassScore>) {
    let mut table: BTreeMap<usize, ClassScore> = BTreeMap::new();
    for r in records {
        for &p in &r.predictions {
            if p == r.label {
                let e = table.entry(p).or_insert_with(|| blank(p));
                e.tp += 1;
                e.support += 1;
            } else {
                let e = table.entry(p).or_insert_with(|| blank(p));
                e.fp += 1;
                let e = table.entry(r.label).or_insert_with(|| blank(r.label));
                e.fn_ += 1;
                e.support += 1;
            }
        }
    }
    let mut scores: Vec<ClassScore> = table.into_values().collect();
    for s in &mut scores {
        let denom = s.tp as f64 + 0.5 * (s.fp + s.fn_) as f64;
        s.f1 = if denom > 0.0 { s.tp as f64 / denom } else { 0.0 };
    }
    let value = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64
    };
    (value, scores)
}

fn blank(class: usize) -> ClassScore {
    ClassScore {
        class,
        support: 0,
        tp: 0,
        fp: 0,
        fn_: 0,
        f1: 0.0,
    }
}

/// Predicts, for every departure port, the destination most often seen
/// from it in training; unseen departures fall back to the overall most
/// common destination. Ties go to the lower port id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureBaseline {
    by_departure: BTreeMap<usize, usize>,
    fallback: usize,
}

impl DepartureBaseline {
    pub fn fit(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
        let mut overall: BTreeMap<usize, usize> = BTreeMap::new();
        for (dep, label) in pairs {
            *counts.entry(dep).or_default().entry(label).or_default() += 1;
            *overall.entry(label).or_default() += 1;
        }
        let majority = |m: &BTreeMap<usize, usize>| {
            m.iter()
                .fold((0, 0), |best, (&c, &n)| if n > best.1 { (c, n) } else { best })
                .0
        };
        if overall.is_empty() {
            return Err(Error::Empty("baseline training pairs"));
        }
        Ok(Self {
            by_departure: counts.iter().map(|(&d, m)| (d, majority(m))).collect(),
            fallback: majority(&overall),
        })
    }

    pub fn predict(&self, departure: usize) -> usize {
        self.by_departure.get(&departure).copied().unwrap_or(self.fallback)
    }

    pub fn records(&self, seqs: &[&NestedSequence]) -> Vec<PredictionRecord> {
        seqs.iter()
            .map(|s| PredictionRecord {
                id: s.id.clone(),
                label: s.label,
                predictions: vec![self.predict(s.departure); s.len()],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: Option<u64>,
    pub trajectories: usize,
    pub steps: usize,
    pub overall_accuracy: f64,
    /// Accuracy per progression quartile; `null` when no step falls there.
    pub quartile_accuracy: [Option<f64>; 4],
    pub macro_f1: f64,
    pub baseline_accuracy: Option<f64>,
    pub per_class: Vec<ClassScore>,
}

impl MetricsReport {
    pub fn new(records: &[PredictionRecord], seed: Option<u64>, baseline_accuracy: Option<f64>) -> Result<Self> {
        let overall_accuracy = overall_accuracy(records)?;
        let (macro_f1, per_class) = macro_f1(records);
        Ok(Self {
            seed,
            trajectories: records.len(),
            steps: records.iter().map(|r| r.predictions.len()).sum(),
            overall_accuracy,
            quartile_accuracy: [1, 2, 3, 4].map(|q| quartile_accuracy(records, q)),
            macro_f1,
            baseline_accuracy,
            per_class,
        })
    }

    /// Accuracy against progression quartile, one row per quartile.
    pub fn quartile_csv(&self, records: &[PredictionRecord]) -> String {
        let mut out = String::from("quartile,correct,total,accuracy\n");
        for q in 1..=4 {
            let (c, t) = quartile_counts(records, q);
            let acc = self.quartile_accuracy[q - 1].map_or(String::new(), |a| format!("{a}"));
            out.push_str(&format!("{q},{c},{t},{acc}\n"));
        }
        out
    }
}
