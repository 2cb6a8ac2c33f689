//! Dense fusion baseline: the whole `S × D` descriptor matrix is flattened
//! and mapped to all `S × B` outputs through one hidden rectifier layer.
//!
//! Input and output widths are bound to the `S` and `D` seen at
//! construction, so a model trained on one volume length cannot score
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::descriptor::DescriptorMatrix;
use crate::fusion::fill_uniform;
use crate::params::Parameters;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_MLP_HIDDEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("MLP built for {expected_slices}x{expected_dim} descriptors, got {slices}x{dim}")]
    InputShape {
        expected_slices: usize,
        expected_dim: usize,
        slices: usize,
        dim: usize,
    },
    #[error("MLP dimensions must be positive")]
    InvalidDims,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub slices: usize,
    pub descriptor_dim: usize,
    pub biomarkers: usize,
    /// `(S·D) × Hm`.
    pub w1: Tensor,
    pub b1: Tensor,
    /// `Hm × (S·B)`.
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpModel {
    pub fn init(slices: usize, descriptor_dim: usize, biomarkers: usize, hidden: usize, seed: u64) -> Result<Self, MlpError> {
        if slices == 0 || descriptor_dim == 0 || biomarkers == 0 || hidden == 0 {
            return Err(MlpError::InvalidDims);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = slices * descriptor_dim;
        let output = slices * biomarkers;
        let mut w1 = Tensor::zeros(vec![input, hidden]);
        let mut w2 = Tensor::zeros(vec![hidden, output]);
        fill_uniform(&mut w1, input, &mut rng);
        fill_uniform(&mut w2, hidden, &mut rng);
        Ok(Self {
            slices,
            descriptor_dim,
            biomarkers,
            w1,
            b1: Tensor::zeros(vec![1, hidden]),
            w2,
            b2: Tensor::zeros(vec![1, output]),
        })
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> [Var; 4] {
        [
            tape.param(self.w1.clone()),
            tape.param(self.b1.clone()),
            tape.param(self.w2.clone()),
            tape.param(self.b2.clone()),
        ]
    }

    pub fn check_input(&self, d: &DescriptorMatrix) -> Result<(), MlpError> {
        if d.slices() != self.slices || d.dim() != self.descriptor_dim {
            return Err(MlpError::InputShape {
                expected_slices: self.slices,
                expected_dim: self.descriptor_dim,
                slices: d.slices(),
                dim: d.dim(),
            });
        }
        Ok(())
    }
}

impl Parameters for MlpModel {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Probabilities for a batch of flattened volumes (`n × S·D` → `n × S·B`).
pub fn forward_on_tape(tape: &mut Tape, vars: [Var; 4], x: Var) -> Result<Var, TensorError> {
    let z1 = tape.matmul(x, vars[0])?;
    let z1 = tape.add_row(z1, vars[1])?;
    let a1 = tape.relu(z1)?;
    let z2 = tape.matmul(a1, vars[2])?;
    let z2 = tape.add_row(z2, vars[3])?;
    tape.sigmoid(z2)
}

/// Per-slice probabilities `S × B`.
pub fn mlp_predict(model: &MlpModel, d: &DescriptorMatrix) -> Result<Tensor, MlpError> {
    model.check_input(d)?;
    let mut tape = Tape::new();
    let vars = [
        tape.constant(model.w1.clone()),
        tape.constant(model.b1.clone()),
        tape.constant(model.w2.clone()),
        tape.constant(model.b2.clone()),
    ];
    let x = tape.constant(Tensor::from_parts(vec![1, d.values().numel()], d.values().data().to_vec()));
    let p = forward_on_tape(&mut tape, vars, x)?;
    Ok(Tensor::from_parts(vec![model.slices, model.biomarkers], tape.value(p).data().to_vec()))
}
