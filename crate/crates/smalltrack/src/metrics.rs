//! One-pass evaluation: precision and success curves, PRC@20, AUC,
//! per-attribute breakdowns, and multi-tracker ranking.
//!
//! Frames whose ground truth is absent are excluded from every denominator;
//! the tracker is neither rewarded nor penalized while the target is gone.

use crate::dataset::{Attribute, Sequence};
use crate::geometry::BBox;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequence {sequence}: {got} predictions for {expected} frames")]
    LengthMismatch {
        sequence: String,
        expected: usize,
        got: usize,
    },
    #[error("no results provided for sequence {0}")]
    MissingResults(String),
    #[error("curve does not sample threshold {0}")]
    MissingThreshold(f64),
}

/// A sampled evaluation curve: fraction of frames passing each threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(thresholds: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(thresholds.len(), values.len());
        assert!(thresholds.windows(2).all(|w| w[0] < w[1]));
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Curve { thresholds, values }
    }

    /// The curve value at an exactly-sampled threshold.
    pub fn value_at(&self, threshold: f64) -> Result<f64, MetricsError> {
        self.thresholds
            .iter()
            .position(|t| *t == threshold)
            .map(|i| self.values[i])
            .ok_or(MetricsError::MissingThreshold(threshold))
    }

    /// CSV rendering: one `threshold,value` line per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

/// Precision thresholds: 0..=50 px in 1 px steps.
pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(|i| i as f64).collect()
}

/// Success thresholds: 21 IoU samples 0.00, 0.05, ..., 1.00.
pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

fn check_len(gt: &Sequence, pred: &[BBox]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            sequence: gt.name.clone(),
            expected: gt.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Center errors over evaluated (present ground-truth) frames.
fn center_errors(gt: &Sequence, pred: &[BBox]) -> Vec<f64> {
    gt.frames
        .iter()
        .zip(pred)
        .filter_map(|(f, p)| f.bbox.map(|b| b.center_error(p)))
        .collect()
}

/// IoU values over evaluated frames.
fn ious(gt: &Sequence, pred: &[BBox]) -> Vec<f64> {
    gt.frames
        .iter()
        .zip(pred)
        .filter_map(|(f, p)| f.bbox.map(|b| b.iou(p)))
        .collect()
}

/// Fraction of evaluated frames whose center error is within each pixel
/// threshold (inclusive).
pub fn precision_curve(gt: &Sequence, pred: &[BBox]) -> Result<Curve, MetricsError> {
    check_len(gt, pred)?;
    let errors = center_errors(gt, pred);
    let n = errors.len().max(1) as f64;
    let thresholds = precision_thresholds();
    let values = thresholds
        .iter()
        .map(|t| errors.iter().filter(|e| **e <= *t).count() as f64 / n)
        .collect();
    Ok(Curve::new(thresholds, values))
}

/// The precision value at the 20 px threshold.
pub fn prc(curve: &Curve) -> Result<f64, MetricsError> {
    curve.value_at(20.0)
}

/// Fraction of evaluated frames whose IoU strictly exceeds each threshold.
pub fn success_curve(gt: &Sequence, pred: &[BBox]) -> Result<Curve, MetricsError> {
    check_len(gt, pred)?;
    let overlaps = ious(gt, pred);
    let n = overlaps.len().max(1) as f64;
    let thresholds = success_thresholds();
    let values = thresholds
        .iter()
        .map(|t| overlaps.iter().filter(|v| **v > *t).count() as f64 / n)
        .collect();
    Ok(Curve::new(thresholds, values))
}

/// Mean of the sampled success values.
pub fn auc(curve: &Curve) -> f64 {
    if curve.values.is_empty() {
        return 0.0;
    }
    curve.values.iter().sum::<f64>() / curve.values.len() as f64
}

/// Fraction of evaluated frames with IoU strictly above 0.5.
pub fn success_rate_at_half(gt: &Sequence, pred: &[BBox]) -> Result<f64, MetricsError> {
    check_len(gt, pred)?;
    let overlaps = ious(gt, pred);
    let n = overlaps.len().max(1) as f64;
    Ok(overlaps.iter().filter(|v| **v > 0.5).count() as f64 / n)
}

/// Scalar scores plus the curves they came from, for one sequence or for an
/// aggregate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scores {
    pub prc: f64,
    pub auc: f64,
    pub success_at_half: f64,
    pub precision_curve: Curve,
    pub success_curve: Curve,
}

/// Full one-pass evaluation output for one tracker.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_sequence: BTreeMap<String, Scores>,
    pub aggregate: Scores,
    pub evaluated_frames: usize,
}

fn mean_curve(curves: &[&Curve]) -> Curve {
    let thresholds = curves[0].thresholds.clone();
    let n = curves.len() as f64;
    let values = (0..thresholds.len())
        .map(|i| curves.iter().map(|c| c.values[i]).sum::<f64>() / n)
        .collect();
    Curve::new(thresholds, values)
}

fn aggregate_scores(per_sequence: &BTreeMap<String, Scores>) -> Scores {
    let n = per_sequence.len() as f64;
    let precision_curves: Vec<&Curve> =
        per_sequence.values().map(|s| &s.precision_curve).collect();
    let success_curves: Vec<&Curve> = per_sequence.values().map(|s| &s.success_curve).collect();
    Scores {
        prc: per_sequence.values().map(|s| s.prc).sum::<f64>() / n,
        auc: per_sequence.values().map(|s| s.auc).sum::<f64>() / n,
        success_at_half: per_sequence.values().map(|s| s.success_at_half).sum::<f64>() / n,
        precision_curve: mean_curve(&precision_curves),
        success_curve: mean_curve(&success_curves),
    }
}

/// Runs one-pass evaluation for every sequence in the dataset. Aggregates
/// are unweighted means over sequences.
pub fn evaluate(
    dataset: &[Sequence],
    results: &BTreeMap<String, Vec<BBox>>,
) -> Result<EvalResult, MetricsError> {
    let mut per_sequence = BTreeMap::new();
    let mut evaluated_frames = 0usize;
    for seq in dataset {
        let pred = results
            .get(&seq.name)
            .ok_or_else(|| MetricsError::MissingResults(seq.name.clone()))?;
        let p_curve = precision_curve(seq, pred)?;
        let s_curve = success_curve(seq, pred)?;
        evaluated_frames += seq.frames.iter().filter(|f| !f.is_absent()).count();
        per_sequence.insert(
            seq.name.clone(),
            Scores {
                prc: prc(&p_curve)?,
                auc: auc(&s_curve),
                success_at_half: success_rate_at_half(seq, pred)?,
                precision_curve: p_curve,
                success_curve: s_curve,
            },
        );
    }
    assert!(!per_sequence.is_empty(), "evaluate requires sequences");
    let aggregate = aggregate_scores(&per_sequence);
    Ok(EvalResult {
        per_sequence,
        aggregate,
        evaluated_frames,
    })
}

/// Restricts an evaluation to the sequences carrying each attribute.
/// Attributes carried by no sequence are omitted. Per-sequence scores are
/// reused; only the aggregation is redone over the restricted subsets.
pub fn attribute_breakdown(
    eval: &EvalResult,
    dataset: &[Sequence],
) -> BTreeMap<Attribute, EvalResult> {
    let mut by_attr: BTreeMap<Attribute, BTreeSet<String>> = BTreeMap::new();
    for seq in dataset {
        for attr in seq.resolved_attributes() {
            by_attr.entry(attr).or_default().insert(seq.name.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (attr, names) in by_attr {
        let per_sequence: BTreeMap<String, Scores> = eval
            .per_sequence
            .iter()
            .filter(|(name, _)| names.contains(*name))
            .map(|(name, s)| (name.clone(), s.clone()))
            .collect();
        if per_sequence.is_empty() {
            continue;
        }
        let evaluated_frames = dataset
            .iter()
            .filter(|s| names.contains(&s.name))
            .map(|s| s.frames.iter().filter(|f| !f.is_absent()).count())
            .sum();
        let aggregate = aggregate_scores(&per_sequence);
        out.insert(
            attr,
            EvalResult {
                per_sequence,
                aggregate,
                evaluated_frames,
            },
        );
    }
    out
}

/// The scalar used to order trackers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankKey {
    Prc,
    Auc,
}

/// Orders trackers by the chosen aggregate score, descending; ties break by
/// tracker name ascending.
pub fn rank(evals: &BTreeMap<String, EvalResult>, key: RankKey) -> Vec<(String, f64)> {
    let mut rows: Vec<(String, f64)> = evals
        .iter()
        .map(|(name, e)| {
            let v = match key {
                RankKey::Prc => e.aggregate.prc,
                RankKey::Auc => e.aggregate.auc,
            };
            (name.clone(), v)
        })
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    rows
}
