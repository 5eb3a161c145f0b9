//! Multi-label classification metrics.
//!
//! Rankings are by descending score with ties broken by lower class index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StanError};
use crate::io::ClipRecord;
use crate::model::Stan;
use crate::tensor::Real;

fn check(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<()> {
    if scores.is_empty() {
        return Err(StanError::Contract("metrics need at least one instance".into()));
    }
    if scores.len() != labels.len() {
        return Err(StanError::Contract(format!(
            "{} score rows for {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    for (i, (s, y)) in scores.iter().zip(labels).enumerate() {
        if s.len() != y.len() || s.is_empty() {
            return Err(StanError::Contract(format!(
                "instance {i}: {} scores for {} labels",
                s.len(),
                y.len()
            )));
        }
        if !y.contains(&1) {
            return Err(StanError::Contract(format!("instance {i} has no relevant label")));
        }
        if s.iter().any(|v| v.is_nan()) {
            return Err(StanError::Contract(format!("instance {i} has a NaN score")));
        }
    }
    Ok(())
}

/// Class indices ordered by descending score, ties by lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Fraction of instances whose top-ranked class is a relevant label.
pub fn top1_accuracy(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<f64> {
    check(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| y[ranking(s)[0]] == 1)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Average precision of one instance over its relevant labels.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &c) in ranking(scores).iter().enumerate() {
        if labels[c] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / hits as f64
}

/// Instance-averaged average precision.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<f64> {
    check(scores, labels)?;
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, y)| average_precision(s, y))
        .sum();
    Ok(sum / scores.len() as f64)
}

/// Instance-averaged F1 with predictions `score >= threshold`.
pub fn f_score(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    let mut sum = 0.0;
    for (s, y) in scores.iter().zip(labels) {
        let mut tp = 0usize;
        let mut predicted = 0usize;
        let mut relevant = 0usize;
        for (&v, &l) in s.iter().zip(y) {
            let p = v >= threshold;
            predicted += p as usize;
            relevant += (l == 1) as usize;
            tp += (p && l == 1) as usize;
        }
        sum += 2.0 * tp as f64 / (predicted + relevant) as f64;
    }
    Ok(sum / scores.len() as f64)
}

/// The three headline metrics over one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub top1: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "F")]
    pub f_score: f64,
    pub n: usize,
}

impl MetricReport {
    pub const THRESHOLD: f64 = 0.5;

    pub fn compute(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<Self> {
        Ok(Self {
            top1: top1_accuracy(scores, labels)?,
            map: mean_average_precision(scores, labels)?,
            f_score: f_score(scores, labels, Self::THRESHOLD)?,
            n: scores.len(),
        })
    }
}

/// Aligned text table, one row per named report.
pub fn render_table(rows: &[(String, MetricReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("model".len());
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>5}\n",
        "model", "top1", "mAP", "F", "n"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>5}\n",
            name, r.top1, r.map, r.f_score, r.n
        ));
    }
    out
}

/// Final-head probabilities for each clip, in order.
pub fn predict<T: Real>(model: &Stan<T>, clips: &[ClipRecord]) -> Result<Vec<Vec<f64>>> {
    clips
        .iter()
        .map(|c| {
            let out = model.forward(c)?;
            let p = out.p.to_f64_vec();
            if p.iter().any(|v| !v.is_finite()) {
                return Err(StanError::Contract(format!("{}: non-finite prediction", c.id)));
            }
            Ok(p)
        })
        .collect()
}

/// Predict and score `clips` with `model`.
pub fn evaluate<T: Real>(model: &Stan<T>, clips: &[ClipRecord]) -> Result<MetricReport> {
    let scores = predict(model, clips)?;
    let labels: Vec<Vec<u8>> = clips.iter().map(|c| c.labels.clone()).collect();
    MetricReport::compute(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top1_examples() {
        let s = vec![vec![0.1, 0.9, 0.3]];
        assert_eq!(top1_accuracy(&s, &[vec![0, 1, 0]]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&s, &[vec![1, 0, 0]]).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let s = vec![vec![0.5, 0.5]];
        assert_eq!(top1_accuracy(&s, &[vec![1, 0]]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&s, &[vec![0, 1]]).unwrap(), 0.0);
    }

    #[test]
    fn map_examples() {
        let s = vec![vec![0.9, 0.8, 0.1]];
        assert_eq!(mean_average_precision(&s, &[vec![1, 1, 0]]).unwrap(), 1.0);
        let s = vec![vec![0.1, 0.9]];
        assert_eq!(mean_average_precision(&s, &[vec![1, 0]]).unwrap(), 0.5);
        // Relevant at ranks 1 and 3: (1 + 2/3) / 2.
        let s = vec![vec![0.9, 0.5, 0.7]];
        let got = mean_average_precision(&s, &[vec![1, 1, 0]]).unwrap();
        assert!((got - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn f_examples() {
        let s = vec![vec![0.9, 0.2, 0.7]];
        assert_eq!(f_score(&s, &[vec![1, 0, 1]], 0.5).unwrap(), 1.0);
        let s = vec![vec![0.1, 0.2, 0.3]];
        assert_eq!(f_score(&s, &[vec![1, 0, 0]], 0.5).unwrap(), 0.0);
        let s = vec![vec![0.9, 0.9, 0.1]];
        assert!((f_score(&s, &[vec![1, 0, 0]], 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(top1_accuracy(&[], &[]), Err(StanError::Contract(_))));
        let s = vec![vec![0.5, 0.5]];
        assert!(matches!(
            mean_average_precision(&s, &[vec![0, 0]]),
            Err(StanError::Contract(_))
        ));
        assert!(matches!(f_score(&s, &[vec![1]], 0.5), Err(StanError::Contract(_))));
    }

    #[test]
    fn table_is_aligned() {
        let r = MetricReport {
            top1: 0.5,
            map: 0.75,
            f_score: 0.25,
            n: 4,
        };
        let t = render_table(&[("audio-visual".into(), r), ("audio".into(), r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[1].contains("0.7500"));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (1usize..7).prop_flat_map(|k| {
            (
                proptest::collection::vec(0.0f64..1.0, k),
                proptest::collection::vec(0u8..2, k),
                0..k,
            )
                .prop_map(|(s, mut y, forced)| {
                    y[forced] = 1;
                    (s, y)
                })
        })
    }

    proptest! {
        #[test]
        fn metrics_lie_in_unit_interval(inst in proptest::collection::vec(instance(), 1..8)) {
            let (s, y): (Vec<_>, Vec<_>) = inst.into_iter().unzip();
            let r = MetricReport::compute(&s, &y).unwrap();
            for v in [r.top1, r.map, r.f_score] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn map_invariant_to_monotone_rescaling((s, y) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v + 0.25).exp()).collect();
            prop_assert_eq!(average_precision(&s, &y), average_precision(&t, &y));
        }

        #[test]
        fn instance_order_does_not_matter(inst in proptest::collection::vec(instance(), 1..8)) {
            let (s, y): (Vec<_>, Vec<_>) = inst.iter().cloned().unzip();
            let (rs, ry): (Vec<_>, Vec<_>) = inst.into_iter().rev().unzip();
            let a = MetricReport::compute(&s, &y).unwrap();
            let b = MetricReport::compute(&rs, &ry).unwrap();
            prop_assert!((a.top1 - b.top1).abs() < 1e-12);
            prop_assert!((a.map - b.map).abs() < 1e-12);
            prop_assert!((a.f_score - b.f_score).abs() < 1e-12);
        }
    }
}
