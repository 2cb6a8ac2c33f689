//! Ordered parameter access shared by the trainable models.

use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

/// A model whose trainable tensors can be listed in a fixed order. The order
/// is also the serialization order of the checkpoint container.
pub trait Parameters {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }
}

/// Hex SHA-256 over the shapes and little-endian bytes of `tensors`.
pub fn tensor_checksum<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut hasher = Sha256::new();
    for t in tensors {
        for d in t.shape() {
            hasher.update((*d as u64).to_le_bytes());
        }
        hasher.update(t.to_le_bytes());
    }
    hex_digest(hasher)
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
