//! Training and scoring of every model kind on one fold, shared by the
//! commands and the experiment tests.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use slicefuse::crf::{crf_predict, fit_crf, CrfGrid, CrfModel};
use slicefuse::data::{generate_synthetic, select, split_patients, SyntheticConfig, VolumeRecord};
use slicefuse::descriptor::StoredDescriptors;
use slicefuse::fusion::{fuse_predict, FusionModel, HeadMode};
use slicefuse::labels::LabelMatrix;
use slicefuse::metrics::{metrics_report, EmrMode, MetricsReport};
use slicefuse::mlp::{mlp_predict, MlpModel};
use slicefuse::params::{tensor_checksum, Parameters};
use slicefuse::slice_head::{base_logits, head_predict, SliceHeadModel};
use slicefuse::tensor::Tensor;
use slicefuse::training::{train_mlp, train_stage1, train_stage2, FusionOptions, HistoryRow, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Base,
    Mlp,
    Crf,
    Fused,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Base, ModelKind::Mlp, ModelKind::Crf, ModelKind::Fused];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::Mlp => "mlp",
            ModelKind::Crf => "crf",
            ModelKind::Fused => "fused",
        }
    }

    fn label(self) -> &'static str {
        match self {
            ModelKind::Base => "Base",
            ModelKind::Mlp => "MLP",
            ModelKind::Crf => "CRF",
            ModelKind::Fused => "Fused (BiLSTM)",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model kind {s:?} (expected base, fused, mlp or crf)"))
    }
}

/// Architecture and optimizer settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub train: TrainConfig,
    /// Optimizer settings for the MLP; `None` reuses `train`.
    pub mlp_train: Option<TrainConfig>,
    pub hidden: usize,
    pub head_mode: HeadMode,
    pub mlp_hidden: usize,
    pub crf_grid: CrfGrid,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            mlp_train: None,
            hidden: 64,
            head_mode: HeadMode::Concat,
            mlp_hidden: slicefuse::mlp::DEFAULT_MLP_HIDDEN,
            crf_grid: CrfGrid::default(),
        }
    }
}

/// Models trained on one fold. The base head is always present; the others
/// only when requested.
#[derive(Debug, Clone, Default)]
pub struct FoldModels {
    pub head: Option<SliceHeadModel>,
    pub fused: Option<FusionModel>,
    pub mlp: Option<MlpModel>,
    pub crf: Option<CrfModel>,
    pub histories: BTreeMap<ModelKind, Vec<HistoryRow>>,
    /// Base-logit checksum on the validation split, before and after the CRF
    /// fit.
    pub crf_logit_checksums: Option<(String, String)>,
}

fn logits_checksum(head: &SliceHeadModel, records: &[VolumeRecord]) -> Result<String, CliError> {
    let logits: Vec<Tensor> = records
        .iter()
        .map(|r| base_logits(head, &r.descriptors))
        .collect::<Result<_, _>>()?;
    Ok(format!(
        "{}:{}",
        tensor_checksum(head.parameters()),
        tensor_checksum(logits.iter())
    ))
}

/// Trains `kinds` on one fold. A supplied `head` is reused as the stage-1
/// model; otherwise stage 1 runs first.
pub fn train_fold(
    train: &[VolumeRecord],
    val: &[VolumeRecord],
    settings: &ModelSettings,
    kinds: &[ModelKind],
    head: Option<SliceHeadModel>,
) -> Result<FoldModels, CliError> {
    let mut out = FoldModels::default();
    let head = match head {
        Some(h) => h,
        None => {
            let (h, history) = train_stage1(train, val, &StoredDescriptors, &settings.train)?;
            out.histories.insert(ModelKind::Base, history);
            h
        }
    };
    if kinds.contains(&ModelKind::Fused) {
        let opts = FusionOptions { hidden: settings.hidden, head_mode: settings.head_mode };
        let (m, history) = train_stage2(train, val, &StoredDescriptors, Some(&head), opts, &settings.train)?;
        out.fused = Some(m);
        out.histories.insert(ModelKind::Fused, history);
    }
    if kinds.contains(&ModelKind::Mlp) {
        let cfg = settings.mlp_train.as_ref().unwrap_or(&settings.train);
        let (m, history) = train_mlp(train, val, &StoredDescriptors, settings.mlp_hidden, cfg)?;
        out.mlp = Some(m);
        out.histories.insert(ModelKind::Mlp, history);
    }
    if kinds.contains(&ModelKind::Crf) {
        let before = logits_checksum(&head, val)?;
        let pairs: Vec<(Tensor, LabelMatrix)> = val
            .iter()
            .map(|r| Ok((base_logits(&head, &r.descriptors)?, r.labels.clone())))
            .collect::<Result<_, CliError>>()?;
        out.crf = Some(fit_crf(&pairs, &settings.crf_grid)?);
        let after = logits_checksum(&head, val)?;
        out.crf_logit_checksums = Some((before, after));
    }
    out.head = Some(head);
    Ok(out)
}

impl FoldModels {
    pub fn has(&self, kind: ModelKind) -> bool {
        match kind {
            ModelKind::Base => self.head.is_some(),
            ModelKind::Fused => self.fused.is_some(),
            ModelKind::Mlp => self.mlp.is_some(),
            ModelKind::Crf => self.crf.is_some() && self.head.is_some(),
        }
    }

    /// `S × B` scores of one volume. CRF scores are its 0/1 labeling.
    pub fn predict(&self, kind: ModelKind, record: &VolumeRecord) -> Result<Tensor, CliError> {
        let missing = || CliError::Data(format!("no {kind} model available"));
        let d = &record.descriptors;
        Ok(match kind {
            ModelKind::Base => head_predict(self.head.as_ref().ok_or_else(missing)?, d)?,
            ModelKind::Fused => fuse_predict(self.fused.as_ref().ok_or_else(missing)?, d)?,
            ModelKind::Mlp => mlp_predict(self.mlp.as_ref().ok_or_else(missing)?, d)?,
            ModelKind::Crf => {
                let head = self.head.as_ref().ok_or_else(missing)?;
                let crf = self.crf.as_ref().ok_or_else(missing)?;
                let map = crf_predict(crf, &base_logits(head, d)?)?;
                Tensor::matrix(map.rows(), map.cols(), map.to_f64())?
            }
        })
    }

    /// Metrics over every slice of `records`, pooled.
    pub fn evaluate(&self, kind: ModelKind, records: &[VolumeRecord], mode: EmrMode) -> Result<MetricsReport, CliError> {
        let preds: Vec<Tensor> = records
            .par_iter()
            .map(|r| self.predict(kind, r))
            .collect::<Result<_, _>>()?;
        let (y, yhat) = stack(records, &preds)?;
        Ok(metrics_report(&y, &yhat, mode)?)
    }
}

/// Generates a dataset, splits it by patient into train/validation/test with
/// `fractions`, trains `kinds` and scores each model on the test split.
pub fn synthetic_comparison(
    data: &SyntheticConfig,
    fractions: [f64; 3],
    settings: &ModelSettings,
    kinds: &[ModelKind],
) -> Result<BTreeMap<ModelKind, MetricsReport>, CliError> {
    let records = generate_synthetic(data)?;
    let split = split_patients(&records, fractions, data.seed)?;
    let (train, val, test) = (select(&records, &split.train), select(&records, &split.val), select(&records, &split.test));
    let models = train_fold(&train, &val, settings, kinds, None)?;
    std::iter::once(ModelKind::Base)
        .chain(kinds.iter().copied())
        .map(|k| Ok((k, models.evaluate(k, &test, EmrMode::Strict)?)))
        .collect()
}

/// Concatenates the slices of several volumes into one label matrix and one
/// score matrix.
pub fn stack(records: &[VolumeRecord], preds: &[Tensor]) -> Result<(LabelMatrix, Tensor), CliError> {
    let cols = records.first().map_or(0, |r| r.labels.cols());
    let rows: usize = records.iter().map(VolumeRecord::slices).sum();
    let mut labels = Vec::with_capacity(rows * cols);
    let mut scores = Vec::with_capacity(rows * cols);
    for (r, p) in records.iter().zip(preds) {
        labels.extend_from_slice(r.labels.data());
        scores.extend_from_slice(p.data());
    }
    let y = LabelMatrix::new(rows, cols, labels).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((y, Tensor::matrix(rows, cols, scores)?))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fold-averaged comparison table: `mean±std` (sample standard deviation)
/// per metric. Starred columns are taken at the max-F1 threshold. AP cells
/// of models with binary outputs print as `-`.
pub fn render_table(reports: &BTreeMap<ModelKind, Vec<MetricsReport>>) -> String {
    let header = ["Method", "micro mAP", "macro mAP", "EMR*", "F1*", "folds"];
    let mut rows: Vec<[String; 6]> = Vec::new();
    for (kind, folds) in reports {
        if folds.is_empty() {
            continue;
        }
        let cell = |f: &dyn Fn(&MetricsReport) -> f64| {
            let (m, s) = mean_std(&folds.iter().map(f).collect::<Vec<_>>());
            format!("{m:.3}±{s:.3}")
        };
        let comparable = folds.iter().all(|r| r.ap_comparable);
        let ap = |f: &dyn Fn(&MetricsReport) -> f64| if comparable { cell(f) } else { "-".to_owned() };
        rows.push([
            kind.label().to_owned(),
            ap(&|r| r.map_micro),
            ap(&|r| r.map_macro),
            cell(&|r| r.emr),
            cell(&|r| r.max_f1),
            folds.len().to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &rows {
        line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(micro: f64, comparable: bool) -> MetricsReport {
        MetricsReport {
            per_biomarker_ap: vec![Some(micro)],
            map_micro: micro,
            map_macro: micro,
            ap_comparable: comparable,
            emr: 0.5,
            emr_mode: EmrMode::Strict,
            max_f1: 0.6,
            f1_threshold: 0.4,
            precision: 0.6,
            recall: 0.6,
            support: vec![3],
            excluded_biomarkers: 0,
            slices: 4,
        }
    }

    #[test]
    fn table_marks_binary_ap() {
        let mut reports = BTreeMap::new();
        reports.insert(ModelKind::Base, vec![report(0.8, true), report(0.82, true)]);
        reports.insert(ModelKind::Crf, vec![report(0.5, false)]);
        let t = render_table(&reports);
        assert!(t.contains("0.810±0.014"));
        let crf_line = t.lines().find(|l| l.starts_with("| CRF")).unwrap();
        assert!(crf_line.contains(" - "));
        assert!(crf_line.contains("0.500±0.000"));
    }

    #[test]
    fn kinds_parse() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
