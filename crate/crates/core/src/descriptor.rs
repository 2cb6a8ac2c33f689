//! Per-slice descriptor matrices and the sources that produce them.

use crate::data::VolumeRecord;
use crate::tensor::{Tensor, TensorError};

/// `S × D` descriptors for one volume. Row `s` is slice `s` in acquisition
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMatrix {
    pub volume_id: String,
    values: Tensor,
}

impl DescriptorMatrix {
    pub fn new(volume_id: impl Into<String>, values: Tensor) -> Result<Self, TensorError> {
        if values.shape().len() != 2 {
            return Err(TensorError::Rank {
                op: "descriptor matrix",
                shape: values.shape().to_vec(),
            });
        }
        Ok(Self {
            volume_id: volume_id.into(),
            values,
        })
    }

    /// Stacks one descriptor per slice.
    pub fn from_slices(volume_id: impl Into<String>, slices: &[Vec<f64>]) -> Result<Self, TensorError> {
        Self::new(volume_id, Tensor::from_rows(slices)?)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn slices(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn reversed(&self) -> Self {
        Self {
            volume_id: self.volume_id.clone(),
            values: self.values.reversed_rows(),
        }
    }

    /// Rounds every entry to the nearest `f32`, the storage precision of the
    /// dataset container.
    pub fn round_to_f32(&self) -> Self {
        let data = self.values.data().iter().map(|&v| f64::from(v as f32)).collect();
        Self {
            volume_id: self.volume_id.clone(),
            values: Tensor::from_parts(self.values.shape().to_vec(), data),
        }
    }
}

/// Maps a volume to its descriptor matrix, one descriptor per slice.
///
/// Implementations are frozen while the fusion stage trains.
pub trait DescriptorSource: Send + Sync {
    fn describe(&self, volume: &VolumeRecord) -> DescriptorMatrix;

    /// Stable identifier folded into freeze checksums.
    fn name(&self) -> &str;
}

/// Descriptors precomputed and stored alongside each record.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoredDescriptors;

impl DescriptorSource for StoredDescriptors {
    fn describe(&self, volume: &VolumeRecord) -> DescriptorMatrix {
        volume.descriptors.clone()
    }

    fn name(&self) -> &str {
        "stored"
    }
}
