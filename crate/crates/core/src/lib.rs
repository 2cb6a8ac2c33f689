//! Fused multi-label prediction over ordered slice sequences.
//!
//! A shared-weight bidirectional LSTM turns per-slice descriptors into
//! per-slice biomarker probabilities that account for the whole volume. The
//! crate also carries the baselines it is measured against (a per-slice head,
//! a dense MLP, and a graph-cut CRF), the ranking metrics, a synthetic data
//! generator with controllable inter-slice coherence, and binary containers
//! for datasets and checkpoints.
//!
//! Everything numeric runs in `f64` on a small tape-based reverse-mode
//! autodiff engine ([`tape`]).

pub mod checkpoint;
pub mod crf;
pub mod data;
pub mod descriptor;
pub mod fusion;
pub mod gradcheck;
pub mod labels;
pub mod maxflow;
pub mod metrics;
pub mod mlp;
pub mod params;
pub mod slice_head;
pub mod tape;
pub mod tensor;
pub mod training;

pub use checkpoint::Checkpoint;
pub use crf::{brute_force_map, build_energy, crf_predict, fit_crf, graph_cut_map, CrfGrid, CrfModel, EnergyGraph};
pub use data::{generate_synthetic, read_dataset, split_patients, write_dataset, SyntheticConfig, VolumeRecord};
pub use descriptor::{DescriptorMatrix, DescriptorSource, StoredDescriptors};
pub use fusion::{fuse_predict, init_fusion, lstm_cell, run_direction, Direction, FusionDims, FusionModel, HeadMode, LstmParams};
pub use labels::LabelMatrix;
pub use metrics::{average_precision, emr, map_macro, map_micro, max_f1, metrics_report, EmrMode, MetricsReport};
pub use mlp::{mlp_predict, MlpModel};
pub use params::Parameters;
pub use slice_head::{base_logits, head_predict, SliceHeadModel};
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError};
pub use training::{bce_loss, sgd_momentum_step, train_mlp, train_stage1, train_stage2, TrainConfig};
