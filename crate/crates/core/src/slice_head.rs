//! Per-slice predictor: an affine map from one descriptor to biomarker
//! logits, then a sigmoid. It sees no neighbouring slices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::DescriptorMatrix;
use crate::fusion::{fill_uniform, FusionError};
use crate::params::Parameters;
use crate::tape::{Tape, Var};
use crate::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SliceHeadModel {
    /// `D × B`.
    pub weight: Tensor,
    /// `1 × B`.
    pub bias: Tensor,
}

impl SliceHeadModel {
    pub fn zeros(descriptor: usize, biomarkers: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![descriptor, biomarkers]),
            bias: Tensor::zeros(vec![1, biomarkers]),
        }
    }

    pub fn init(descriptor: usize, biomarkers: usize, seed: u64) -> Self {
        let mut model = Self::zeros(descriptor, biomarkers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fill_uniform(&mut model.weight, descriptor, &mut rng);
        model
    }

    pub fn descriptor_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn biomarkers(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> [Var; 2] {
        [tape.param(self.weight.clone()), tape.param(self.bias.clone())]
    }
}

impl Parameters for SliceHeadModel {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Logits for a stack of descriptors (`n × D`) on a tape.
pub fn logits_on_tape(tape: &mut Tape, vars: [Var; 2], x: Var) -> Result<Var, crate::tensor::TensorError> {
    let xw = tape.matmul(x, vars[0])?;
    tape.add_row(xw, vars[1])
}

/// Pre-sigmoid scores `S × B`; these are the CRF unaries.
pub fn base_logits(model: &SliceHeadModel, d: &DescriptorMatrix) -> Result<Tensor, FusionError> {
    if d.dim() != model.descriptor_dim() {
        return Err(FusionError::DescriptorWidth {
            expected: model.descriptor_dim(),
            got: d.dim(),
        });
    }
    let xw = d.values().matmul(&model.weight)?;
    let b = model.bias.data();
    let (rows, cols) = xw.dims2()?;
    let mut data = xw.into_data();
    for r in 0..rows {
        for (v, bv) in data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *v += bv;
        }
    }
    Ok(Tensor::new(vec![rows, cols], data)?)
}

/// Per-slice probabilities `S × B`, exactly `σ(base_logits)`.
pub fn head_predict(model: &SliceHeadModel, d: &DescriptorMatrix) -> Result<Tensor, FusionError> {
    Ok(base_logits(model, d)?.map(sigmoid)?)
}
