//! Ranking and thresholded metrics for multi-label slice predictions.
//!
//! Average precision is the step-wise area under the precision-recall curve
//! with one curve point per distinct score: `AP = Σ_k (R_k − R_{k−1}) P_k`,
//! thresholds taken in decreasing order and an item predicted positive when
//! its score is at least the threshold. Tied scores therefore enter the
//! curve together, which makes AP independent of the order of ties.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::LabelMatrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{labels} labels but {scores} scores")]
    Length { labels: usize, scores: usize },
    #[error("labels are {label_rows}x{label_cols} but predictions are {pred_rows}x{pred_cols}")]
    Shape {
        label_rows: usize,
        label_cols: usize,
        pred_rows: usize,
        pred_cols: usize,
    },
    #[error("no positive labels; the metric is undefined")]
    NoPositives,
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("label value {0} is not binary")]
    NonBinary(u8),
    #[error("non-finite score")]
    NonFinite,
    #[error("report parse error: {0}")]
    Parse(String),
}

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// How exact-match is judged for a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmrMode {
    /// The whole binarized row must equal the label row.
    #[default]
    Strict,
    /// Only missed positives count as failures; false alarms are tolerated.
    MissesOnly,
}

fn validate(labels: &[u8], scores: &[f64]) -> Result<(), MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::Length {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::NonBinary(bad));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn check_shapes(y: &LabelMatrix, yhat: &Tensor) -> Result<(), MetricsError> {
    let (r, c) = (yhat.rows(), yhat.cols());
    if y.rows() != r || y.cols() != c || yhat.shape().len() != 2 {
        return Err(MetricsError::Shape {
            label_rows: y.rows(),
            label_cols: y.cols(),
            pred_rows: r,
            pred_cols: c,
        });
    }
    if yhat.data().iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

/// Cumulative `(threshold, tp, fp)` at every distinct score, highest first.
fn sweep(labels: &[u8], scores: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((threshold, tp, fp));
    }
    out
}

/// Precision-recall points, one per distinct score from highest to lowest.
pub fn precision_recall_curve(labels: &[u8], scores: &[f64]) -> Result<Vec<PrPoint>, MetricsError> {
    validate(labels, scores)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    Ok(sweep(labels, scores)
        .into_iter()
        .map(|(threshold, tp, fp)| PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        })
        .collect())
}

/// Average precision; `None` when there are no positive labels.
pub fn average_precision(labels: &[u8], scores: &[f64]) -> Result<Option<f64>, MetricsError> {
    validate(labels, scores)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut area = 0.0;
    let mut prev_tp = 0;
    for (_, tp, fp) in sweep(labels, scores) {
        if tp > prev_tp {
            area += (tp - prev_tp) as f64 * (tp as f64 / (tp + fp) as f64);
            prev_tp = tp;
        }
    }
    Ok(Some(area / positives as f64))
}

/// AP over all `S·B` (label, score) pairs flattened together.
pub fn map_micro(y: &LabelMatrix, yhat: &Tensor) -> Result<f64, MetricsError> {
    check_shapes(y, yhat)?;
    average_precision(y.data(), yhat.data())?.ok_or(MetricsError::NoPositives)
}

/// AP of every biomarker column; `None` for columns without positives.
pub fn per_biomarker_ap(y: &LabelMatrix, yhat: &Tensor) -> Result<Vec<Option<f64>>, MetricsError> {
    check_shapes(y, yhat)?;
    (0..y.cols())
        .map(|b| {
            let scores: Vec<f64> = (0..y.rows()).map(|s| yhat.get(s, b)).collect();
            average_precision(&y.column(b), &scores)
        })
        .collect()
}

/// Unweighted mean of the defined per-biomarker APs. Columns without
/// positives are left out; if none remain the metric is undefined.
pub fn map_macro(y: &LabelMatrix, yhat: &Tensor) -> Result<f64, MetricsError> {
    mean_defined(&per_biomarker_ap(y, yhat)?).ok_or(MetricsError::NoPositives)
}

fn mean_defined(aps: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Fraction of slices whose binarized row (`score ≥ threshold`) matches the
/// labels.
pub fn emr(y: &LabelMatrix, yhat: &Tensor, threshold: f64) -> Result<f64, MetricsError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::Threshold(threshold));
    }
    emr_at(y, yhat, threshold, EmrMode::Strict)
}

/// [`emr`] without the open-interval restriction on the threshold.
pub fn emr_at(y: &LabelMatrix, yhat: &Tensor, threshold: f64, mode: EmrMode) -> Result<f64, MetricsError> {
    check_shapes(y, yhat)?;
    if y.rows() == 0 {
        return Ok(0.0);
    }
    let matched = (0..y.rows())
        .filter(|&s| {
            y.row(s).iter().zip(yhat.row_slice(s)).all(|(&l, &p)| {
                let predicted = p >= threshold;
                match mode {
                    EmrMode::Strict => predicted == (l == 1),
                    EmrMode::MissesOnly => l == 0 || predicted,
                }
            })
        })
        .count();
    Ok(matched as f64 / y.rows() as f64)
}

/// Best micro-F1 over one global threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Point {
    pub f1: f64,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweeps every distinct score as a threshold and returns the largest
/// micro-F1, at the smallest threshold that attains it.
pub fn max_f1_scores(labels: &[u8], scores: &[f64]) -> Result<F1Point, MetricsError> {
    validate(labels, scores)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut best: Option<F1Point> = None;
    for (threshold, tp, fp) in sweep(labels, scores) {
        let fneg = positives - tp;
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        // Thresholds arrive in decreasing order, so ties move to the smaller one.
        if best.is_none_or(|b| f1 >= b.f1) {
            best = Some(F1Point {
                f1,
                threshold,
                precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
                recall: tp as f64 / positives as f64,
            });
        }
    }
    Ok(best.expect("at least one positive implies one score"))
}

pub fn max_f1(y: &LabelMatrix, yhat: &Tensor) -> Result<F1Point, MetricsError> {
    check_shapes(y, yhat)?;
    max_f1_scores(y.data(), yhat.data())
}

/// One column of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_biomarker_ap: Vec<Option<f64>>,
    pub map_micro: f64,
    pub map_macro: f64,
    /// False when every score is 0 or 1: a binary output gives a single
    /// precision-recall point, so its AP does not compare with ranked scores.
    pub ap_comparable: bool,
    /// Exact-match ratio at `f1_threshold`.
    pub emr: f64,
    pub emr_mode: EmrMode,
    pub max_f1: f64,
    pub f1_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// Positive count per biomarker.
    pub support: Vec<usize>,
    /// Biomarkers left out of the macro average for lack of positives.
    pub excluded_biomarkers: usize,
    pub slices: usize,
}

impl MetricsReport {
    /// Pretty JSON with keys sorted.
    pub fn to_canonical_string(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn from_canonical_str(s: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(s).map_err(|e| MetricsError::Parse(e.to_string()))
    }
}

pub fn metrics_report(y: &LabelMatrix, yhat: &Tensor, emr_mode: EmrMode) -> Result<MetricsReport, MetricsError> {
    check_shapes(y, yhat)?;
    let per_biomarker_ap = per_biomarker_ap(y, yhat)?;
    let map_micro = map_micro(y, yhat)?;
    let map_macro = mean_defined(&per_biomarker_ap).ok_or(MetricsError::NoPositives)?;
    let best = max_f1(y, yhat)?;
    let emr = emr_at(y, yhat, best.threshold, emr_mode)?;
    let support = (0..y.cols()).map(|b| y.column(b).iter().map(|&v| usize::from(v)).sum()).collect();
    Ok(MetricsReport {
        excluded_biomarkers: per_biomarker_ap.iter().filter(|a| a.is_none()).count(),
        per_biomarker_ap,
        map_micro,
        map_macro,
        ap_comparable: !yhat.data().iter().all(|&v| v == 0.0 || v == 1.0),
        emr,
        emr_mode,
        max_f1: best.f1,
        f1_threshold: best.threshold,
        precision: best.precision,
        recall: best.recall,
        support,
        slices: y.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Enumerates every distinct threshold directly.
    fn oracle_ap(labels: &[u8], scores: &[f64]) -> Option<f64> {
        let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
        if positives == 0.0 {
            return None;
        }
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut prev_recall = 0.0;
        let mut area = 0.0;
        for t in thresholds {
            let tp = (0..labels.len()).filter(|&i| scores[i] >= t && labels[i] == 1).count() as f64;
            let predicted = (0..labels.len()).filter(|&i| scores[i] >= t).count() as f64;
            let recall = tp / positives;
            area += (recall - prev_recall) * (tp / predicted);
            prev_recall = recall;
        }
        Some(area)
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> (Vec<u8>, Vec<f64>) {
        let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
        let scores = (0..n)
            .map(|_| if ties { f64::from(rng.random_range(0..4)) / 4.0 } else { rng.random() })
            .collect();
        (labels, scores)
    }

    #[test]
    fn two_element_cases() {
        assert_eq!(average_precision(&[1, 0], &[0.9, 0.1]).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0, 1], &[0.9, 0.1]).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[0, 0], &[0.9, 0.1]).unwrap(), None);
        assert!(average_precision(&[0, 1, 1], &[0.9, 0.1]).is_err());
    }

    #[test]
    fn ap_matches_threshold_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..300 {
            let n = rng.random_range(1..=20);
            let (labels, scores) = random_instance(&mut rng, n, trial % 2 == 0);
            let got = average_precision(&labels, &scores).unwrap();
            let want = oracle_ap(&labels, &scores);
            match (got, want) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
                (None, None) => {}
                other => panic!("definedness differs: {other:?}"),
            }
        }
    }

    #[test]
    fn pr_curve_ends_at_full_recall() {
        let curve = precision_recall_curve(&[1, 0, 1, 0], &[0.8, 0.7, 0.3, 0.1]).unwrap();
        assert_eq!(curve.len(), 4);
        assert_eq!(curve[0].precision, 1.0);
        assert_eq!(curve.last().unwrap().recall, 1.0);
    }

    #[test]
    fn micro_and_macro_on_degenerate_inputs() {
        let y = LabelMatrix::from_rows(&[vec![1], vec![0], vec![1]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.2], vec![0.6], vec![0.9]]).unwrap();
        let ap = average_precision(&[1, 0, 1], &[0.2, 0.6, 0.9]).unwrap().unwrap();
        assert_eq!(map_micro(&y, &p).unwrap(), ap);
        assert_eq!(map_macro(&y, &p).unwrap(), ap);

        let y = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        assert_eq!(map_micro(&y, &p).unwrap(), 1.0);
        assert_eq!(map_macro(&y, &p).unwrap(), 1.0);

        let none = LabelMatrix::zeros(2, 2);
        assert_eq!(map_micro(&none, &p), Err(MetricsError::NoPositives));
    }

    #[test]
    fn macro_skips_empty_columns() {
        let y = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        assert_eq!(per_biomarker_ap(&y, &p).unwrap(), vec![Some(1.0), None]);
        assert_eq!(map_macro(&y, &p).unwrap(), 1.0);
        assert_eq!(metrics_report(&y, &p, EmrMode::Strict).unwrap().excluded_biomarkers, 1);
    }

    #[test]
    fn emr_cases() {
        let y = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let exact = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        assert_eq!(emr(&y, &exact, 0.5).unwrap(), 1.0);
        let one_off = Tensor::from_rows(&[vec![0.9, 0.6], vec![0.2, 0.8]]).unwrap();
        assert_eq!(emr(&y, &one_off, 0.5).unwrap(), 0.5);
        assert_eq!(emr_at(&y, &one_off, 0.5, EmrMode::MissesOnly).unwrap(), 1.0);
        assert!(emr(&y, &exact, 1.0).is_err());
        assert!(emr(&y, &exact, 0.0).is_err());
    }

    #[test]
    fn max_f1_worked_example() {
        let best = max_f1_scores(&[1, 1, 0, 0], &[0.9, 0.4, 0.6, 0.1]).unwrap();
        assert!((best.f1 - 0.8).abs() < 1e-15);
        assert_eq!(best.threshold, 0.4);
        assert!((best.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(best.recall, 1.0);
    }

    #[test]
    fn max_f1_duplicates_do_not_matter() {
        let a = max_f1_scores(&[1, 0, 1], &[0.7, 0.3, 0.5]).unwrap();
        let b = max_f1_scores(&[1, 0, 1, 1, 0], &[0.7, 0.3, 0.5, 0.5, 0.3]).unwrap();
        assert_eq!(a.threshold, b.threshold);
        assert_eq!(max_f1_scores(&[1, 0], &[0.9, 0.1]).unwrap().f1, 1.0);
    }

    #[test]
    fn binary_scores_flag_ap_as_not_comparable() {
        let y = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let crf = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let r = metrics_report(&y, &crf, EmrMode::Strict).unwrap();
        assert!(!r.ap_comparable);
        assert_eq!(r.f1_threshold, 1.0);
        assert!((r.emr - 2.0 / 3.0).abs() < 1e-15);
        let soft = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.7, 0.6]]).unwrap();
        assert!(metrics_report(&y, &soft, EmrMode::Strict).unwrap().ap_comparable);
    }

    #[test]
    fn perfect_report_and_round_trip() {
        let y = LabelMatrix::from_rows(&[vec![1, 0, 1], vec![0, 1, 1]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.9, 0.1, 0.8], vec![0.2, 0.7, 0.95]]).unwrap();
        let r = metrics_report(&y, &p, EmrMode::Strict).unwrap();
        assert_eq!((r.map_micro, r.map_macro, r.emr, r.max_f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.support, vec![1, 1, 2]);
        let text = r.to_canonical_string();
        assert_eq!(MetricsReport::from_canonical_str(&text).unwrap(), r);
        let keys: Vec<&str> = text.lines().filter(|l| l.starts_with("  \"")).map(|l| l.trim()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
