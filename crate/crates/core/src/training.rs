//! Loss, optimizer, learning-rate schedule and the two-stage training loops.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::VolumeRecord;
use crate::descriptor::{DescriptorMatrix, DescriptorSource};
use crate::fusion::{forward_on_tape, fuse_predict, init_fusion, FusionDims, FusionError, FusionModel, HeadMode};
use crate::labels::LabelMatrix;
use crate::metrics::{average_precision, MetricsError};
use crate::mlp::{self, mlp_predict, MlpError, MlpModel};
use crate::params::{tensor_checksum, Parameters};
use crate::slice_head::{head_predict, logits_on_tape, SliceHeadModel};
use crate::tape::{bce_sum, Tape};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("stage 2 needs a trained stage-1 model")]
    MissingStage1,
    #[error("frozen stage-1 state changed during fusion training")]
    FreezeViolated,
    #[error("labels are {label_rows}x{label_cols} but predictions are {pred_rows}x{pred_cols}")]
    Shape {
        label_rows: usize,
        label_cols: usize,
        pred_rows: usize,
        pred_cols: usize,
    },
    #[error("{0} parameter tensors but {1} gradients")]
    ParamCount(usize, usize),
    #[error("non-finite training loss at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl TrainError {
    /// True for failures of the arithmetic itself rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::Diverged(_) | TrainError::Tensor(TensorError::NonFinite { .. })
        ) || matches!(self, TrainError::Fusion(FusionError::Tensor(TensorError::NonFinite { .. })))
            || matches!(self, TrainError::Mlp(MlpError::Tensor(TensorError::NonFinite { .. })))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_volumes: usize,
    pub stage1_batch_slices: usize,
    pub patience_epochs: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub clamp_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            batch_volumes: 4,
            stage1_batch_slices: 32,
            patience_epochs: 10,
            lr_decay_factor: 0.1,
            max_epochs: 50,
            seed: 0,
            clamp_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    /// Parses `key = value` lines. Missing keys keep their defaults; unknown
    /// keys are an error.
    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.patience_epochs == 0 {
            return bad("patience_epochs must be at least 1".into());
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return bad(format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.batch_volumes == 0 || self.stage1_batch_slices == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        Ok(())
    }
}

fn check_pair(y: &LabelMatrix, yhat: &Tensor) -> Result<(), TrainError> {
    if y.rows() != yhat.rows() || y.cols() != yhat.cols() || yhat.shape().len() != 2 {
        return Err(TrainError::Shape {
            label_rows: y.rows(),
            label_cols: y.cols(),
            pred_rows: yhat.rows(),
            pred_cols: yhat.cols(),
        });
    }
    Ok(())
}

/// Summed binary cross-entropy `−Σ_s Σ_b [(1−y) ln(1−ŷ) + y ln ŷ]` with `ŷ`
/// clamped into `[eps, 1 − eps]`.
pub fn bce_loss(y: &LabelMatrix, yhat: &Tensor, clamp_eps: f64) -> Result<f64, TrainError> {
    check_pair(y, yhat)?;
    if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
        return Err(TensorError::ClampEpsilon(clamp_eps).into());
    }
    Ok(bce_sum(yhat.data(), &y.to_f64(), clamp_eps))
}

/// [`bce_loss`] divided by the number of entries.
pub fn bce_loss_mean(y: &LabelMatrix, yhat: &Tensor, clamp_eps: f64) -> Result<f64, TrainError> {
    let n = (y.rows() * y.cols()).max(1);
    Ok(bce_loss(y, yhat, clamp_eps)? / n as f64)
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            velocity: params.into_iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }
}

/// Classical momentum: `v ← momentum·v + g`, then `p ← p − lr·v`.
pub fn sgd_momentum_step(
    params: Vec<&mut Tensor>,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(TrainError::ParamCount(params.len(), grads.len()));
    }
    for ((p, g), v) in params.into_iter().zip(grads).zip(&mut state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sgd step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }
            .into());
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without a strictly better validation score.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: Option<f64>,
    pub stale_epochs: usize,
    patience: usize,
    factor: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self { lr, best: None, stale_epochs: 0, patience, factor }
    }

    /// Records an epoch's score and returns whether it is a new best.
    pub fn observe(&mut self, score: f64) -> bool {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.stale_epochs = 0;
            return true;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            self.lr *= self.factor;
            self.stale_epochs = 0;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub stage: String,
    /// Mean summed loss per batch.
    pub train_loss: f64,
    pub val_map_micro: f64,
    /// Rate used during the epoch.
    pub lr: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,stage,train_loss,val_map_micro,lr\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.stage, r.train_loss, r.val_map_micro, r.lr);
    }
    out
}

/// Micro-averaged AP over every slice of every volume.
pub fn pooled_map_micro(pairs: &[(&LabelMatrix, Tensor)]) -> Result<f64, TrainError> {
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for (y, yhat) in pairs {
        check_pair(y, yhat)?;
        labels.extend_from_slice(y.data());
        scores.extend_from_slice(yhat.data());
    }
    Ok(average_precision(&labels, &scores)?.ok_or(MetricsError::NoPositives)?)
}

fn add_into(acc: &mut [Tensor], grads: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += y;
        }
    }
}

fn collect_grads(tape: &Tape, vars: &[crate::tape::Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
        })
        .collect()
}

/// Runs `per_item` on every item of a batch in parallel and sums the losses
/// and gradients in item order, so the result does not depend on scheduling.
fn reduce_batch<T: Sync>(
    items: &[T],
    per_item: impl Fn(&T) -> Result<(f64, Vec<Tensor>), TrainError> + Sync + Send,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let parts: Vec<(f64, Vec<Tensor>)> = items.par_iter().map(per_item).collect::<Result<_, _>>()?;
    let mut parts = parts.into_iter();
    let (mut loss, mut grads): (f64, Vec<Tensor>) = parts.next().expect("batches are nonempty");
    for (l, g) in parts {
        loss += l;
        add_into(&mut grads, &g);
    }
    Ok((loss, grads))
}

/// The shared epoch loop: shuffled minibatches, momentum SGD, plateau decay
/// and best-validation retention.
fn fit<M, T>(
    mut model: M,
    stage: &str,
    cfg: &TrainConfig,
    items: &[T],
    batch_size: usize,
    batch_grad: impl Fn(&M, &[T]) -> Result<(f64, Vec<Tensor>), TrainError>,
    validate: impl Fn(&M) -> Result<f64, TrainError>,
) -> Result<(M, Vec<HistoryRow>), TrainError>
where
    M: Parameters + Clone,
    T: Clone,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stage.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b))));
    let mut order: Vec<T> = items.to_vec();
    let mut state = OptimizerState::new(model.parameters());
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.patience_epochs, cfg.lr_decay_factor);
    let mut best = model.clone();
    let mut history = Vec::with_capacity(cfg.max_epochs);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = sched.lr;
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(batch_size) {
            let (loss, grads) = batch_grad(&model, batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged(epoch));
            }
            sgd_momentum_step(model.parameters_mut(), &grads, &mut state, lr, cfg.momentum)?;
            total += loss;
            batches += 1;
        }
        if model.parameters().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(TrainError::Diverged(epoch));
        }
        let score = validate(&model)?;
        if sched.observe(score) {
            best = model.clone();
        }
        history.push(HistoryRow {
            epoch,
            stage: stage.to_owned(),
            train_loss: total / batches.max(1) as f64,
            val_map_micro: score,
            lr,
        });
    }
    Ok((best, history))
}

fn dims_of(records: &[VolumeRecord]) -> Result<(usize, usize), TrainError> {
    let first = records.first().ok_or(TrainError::EmptySplit("training"))?;
    Ok((first.descriptors.dim(), first.labels.cols()))
}

/// Stage 1: fits the per-slice head on shuffled slices pooled across the
/// training volumes, batches of `stage1_batch_slices`.
pub fn train_stage1(
    train: &[VolumeRecord],
    val: &[VolumeRecord],
    source: &dyn DescriptorSource,
    cfg: &TrainConfig,
) -> Result<(SliceHeadModel, Vec<HistoryRow>), TrainError> {
    let (d, b) = dims_of(train)?;
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let descs: Vec<DescriptorMatrix> = train.iter().map(|r| source.describe(r)).collect();
    let val_descs: Vec<DescriptorMatrix> = val.iter().map(|r| source.describe(r)).collect();
    let slices: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(v, r)| (0..r.slices()).map(move |s| (v, s)))
        .collect();

    let batch_grad = |model: &SliceHeadModel, batch: &[(usize, usize)]| {
        let mut x = Vec::with_capacity(batch.len() * d);
        let mut y = Vec::with_capacity(batch.len() * b);
        for &(v, s) in batch {
            x.extend_from_slice(descs[v].values().row_slice(s));
            y.extend(train[v].labels.row(s).iter().map(|&l| f64::from(l)));
        }
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let xv = tape.constant(Tensor::from_parts(vec![batch.len(), d], x));
        let logits = logits_on_tape(&mut tape, vars, xv)?;
        let p = tape.sigmoid(logits)?;
        let loss = tape.bce(p, &y, cfg.clamp_eps)?;
        tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], collect_grads(&tape, &vars)))
    };
    let validate = |model: &SliceHeadModel| {
        let preds: Vec<(&LabelMatrix, Tensor)> = val
            .iter()
            .zip(&val_descs)
            .map(|(r, dm)| Ok((&r.labels, head_predict(model, dm)?)))
            .collect::<Result<_, TrainError>>()?;
        pooled_map_micro(&preds)
    };
    let init = SliceHeadModel::init(d, b, cfg.seed);
    fit(init, "stage1", cfg, &slices, cfg.stage1_batch_slices, batch_grad, validate)
}

/// Architecture choices for the fusion network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionOptions {
    pub hidden: usize,
    pub head_mode: HeadMode,
}

/// SHA-256 over the stage-1 head parameters and every descriptor the source
/// produces for `records`. Stage 2 must leave it unchanged.
pub fn frozen_checksum(head: &SliceHeadModel, source: &dyn DescriptorSource, records: &[VolumeRecord]) -> String {
    let descs: Vec<DescriptorMatrix> = records.iter().map(|r| source.describe(r)).collect();
    let tensors = head.parameters().into_iter().chain(descs.iter().map(|d| d.values()));
    format!("{}:{}", source.name(), tensor_checksum(tensors))
}

/// Stage 2: fits the fusion network on whole volumes with the descriptor
/// source and stage-1 head frozen. Volumes of a batch run on separate tapes.
pub fn train_stage2(
    train: &[VolumeRecord],
    val: &[VolumeRecord],
    source: &dyn DescriptorSource,
    stage1: Option<&SliceHeadModel>,
    opts: FusionOptions,
    cfg: &TrainConfig,
) -> Result<(FusionModel, Vec<HistoryRow>), TrainError> {
    let head = stage1.ok_or(TrainError::MissingStage1)?;
    let (d, b) = dims_of(train)?;
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let before = frozen_checksum(head, source, train);
    let descs: Vec<DescriptorMatrix> = train.iter().map(|r| source.describe(r)).collect();
    let labels: Vec<Vec<f64>> = train.iter().map(|r| r.labels.to_f64()).collect();
    let val_descs: Vec<DescriptorMatrix> = val.iter().map(|r| source.describe(r)).collect();
    let volumes: Vec<usize> = (0..train.len()).collect();

    let batch_grad = |model: &FusionModel, batch: &[usize]| {
        reduce_batch(batch, |&v| {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let x = tape.constant(descs[v].values().clone());
            let p = forward_on_tape(&mut tape, &vars, x)?;
            let loss = tape.bce(p, &labels[v], cfg.clamp_eps)?;
            tape.backward(loss)?;
            Ok((tape.value(loss).data()[0], collect_grads(&tape, &vars.parameters())))
        })
    };
    let validate = |model: &FusionModel| {
        let preds: Vec<(&LabelMatrix, Tensor)> = val
            .par_iter()
            .zip(&val_descs)
            .map(|(r, dm)| Ok((&r.labels, fuse_predict(model, dm)?)))
            .collect::<Result<_, TrainError>>()?;
        pooled_map_micro(&preds)
    };
    let dims = FusionDims { descriptor: d, hidden: opts.hidden, biomarkers: b };
    let init = init_fusion(dims, opts.head_mode, cfg.seed)?;
    let out = fit(init, "stage2", cfg, &volumes, cfg.batch_volumes, batch_grad, validate)?;
    if frozen_checksum(head, source, train) != before {
        return Err(TrainError::FreezeViolated);
    }
    Ok(out)
}

/// Fits the fixed-size MLP fusion baseline on whole volumes. Every volume
/// must have the same slice count.
pub fn train_mlp(
    train: &[VolumeRecord],
    val: &[VolumeRecord],
    source: &dyn DescriptorSource,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<HistoryRow>), TrainError> {
    let (d, b) = dims_of(train)?;
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let s = train[0].slices();
    let descs: Vec<DescriptorMatrix> = train.iter().map(|r| source.describe(r)).collect();
    let val_descs: Vec<DescriptorMatrix> = val.iter().map(|r| source.describe(r)).collect();
    let init = MlpModel::init(s, d, b, hidden, cfg.seed)?;
    for dm in descs.iter().chain(&val_descs) {
        init.check_input(dm)?;
    }
    let volumes: Vec<usize> = (0..train.len()).collect();

    let batch_grad = |model: &MlpModel, batch: &[usize]| {
        let mut x = Vec::with_capacity(batch.len() * s * d);
        let mut y = Vec::with_capacity(batch.len() * s * b);
        for &v in batch {
            x.extend_from_slice(descs[v].values().data());
            y.extend(train[v].labels.to_f64());
        }
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let xv = tape.constant(Tensor::from_parts(vec![batch.len(), s * d], x));
        let p = mlp::forward_on_tape(&mut tape, vars, xv)?;
        let loss = tape.bce(p, &y, cfg.clamp_eps)?;
        tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], collect_grads(&tape, &vars)))
    };
    let validate = |model: &MlpModel| {
        let preds: Vec<(&LabelMatrix, Tensor)> = val
            .iter()
            .zip(&val_descs)
            .map(|(r, dm)| Ok((&r.labels, mlp_predict(model, dm)?)))
            .collect::<Result<_, TrainError>>()?;
        pooled_map_micro(&preds)
    };
    fit(init, "mlp", cfg, &volumes, cfg.batch_volumes, batch_grad, validate)
}
