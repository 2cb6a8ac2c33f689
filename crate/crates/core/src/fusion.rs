//! Bidirectional shared-weight LSTM fusion over slice descriptors.
//!
//! One [`LstmParams`] instance runs over the descriptors in slice order and
//! again in reverse slice order. At every slice the two states are combined
//! by a per-slice affine head followed by a sigmoid, giving one probability
//! per biomarker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::DescriptorMatrix;
use crate::params::Parameters;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("volume {0:?} has no slices")]
    EmptyVolume(String),
    #[error("descriptor width {got} does not match model input width {expected}")]
    DescriptorWidth { expected: usize, got: usize },
    #[error("state width {got} does not match hidden size {expected}")]
    StateWidth { expected: usize, got: usize },
    #[error("all model dimensions must be positive, got {0:?}")]
    InvalidDims(FusionDims),
}

/// Gate order used throughout: input, forget, cell candidate, output.
pub const GATES: usize = 4;
pub const INPUT_GATE: usize = 0;
pub const FORGET_GATE: usize = 1;
pub const CANDIDATE: usize = 2;
pub const OUTPUT_GATE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FusionDims {
    pub descriptor: usize,
    pub hidden: usize,
    pub biomarkers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// `σ(W [h, h′] + b)` over the concatenated states.
    #[default]
    Concat,
    /// `σ(W h + W h′ + b)`; makes the network equivariant to slice reversal.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Peephole-free LSTM weights, indexed by gate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `D × H` per gate.
    pub input_weights: [Tensor; GATES],
    /// `H × H` per gate.
    pub recurrent_weights: [Tensor; GATES],
    /// `1 × H` per gate.
    pub biases: [Tensor; GATES],
}

impl LstmParams {
    pub fn input_dim(&self) -> usize {
        self.input_weights[0].rows()
    }

    pub fn hidden(&self) -> usize {
        self.recurrent_weights[0].rows()
    }

    pub fn zeros(descriptor: usize, hidden: usize) -> Self {
        Self {
            input_weights: std::array::from_fn(|_| Tensor::zeros(vec![descriptor, hidden])),
            recurrent_weights: std::array::from_fn(|_| Tensor::zeros(vec![hidden, hidden])),
            biases: std::array::from_fn(|_| Tensor::zeros(vec![1, hidden])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    /// Serves both directions.
    pub lstm: LstmParams,
    /// `2H × B` in [`HeadMode::Concat`], `H × B` in [`HeadMode::Symmetric`].
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    pub head_mode: HeadMode,
    /// Fixed initial states; zero unless set explicitly. Not trained.
    pub forward_h0: Tensor,
    pub forward_c0: Tensor,
    pub backward_h0: Tensor,
    pub backward_c0: Tensor,
}

impl FusionModel {
    pub fn dims(&self) -> FusionDims {
        FusionDims {
            descriptor: self.lstm.input_dim(),
            hidden: self.lstm.hidden(),
            biomarkers: self.head_bias.cols(),
        }
    }

    pub fn zeros(dims: FusionDims, head_mode: HeadMode) -> Self {
        let FusionDims { descriptor, hidden, biomarkers } = dims;
        let head_in = match head_mode {
            HeadMode::Concat => 2 * hidden,
            HeadMode::Symmetric => hidden,
        };
        let state = || Tensor::zeros(vec![1, hidden]);
        Self {
            lstm: LstmParams::zeros(descriptor, hidden),
            head_weight: Tensor::zeros(vec![head_in, biomarkers]),
            head_bias: Tensor::zeros(vec![1, biomarkers]),
            head_mode,
            forward_h0: state(),
            forward_c0: state(),
            backward_h0: state(),
            backward_c0: state(),
        }
    }

    /// Initial states, in the order forward h, forward c, backward h,
    /// backward c.
    pub fn initial_states(&self) -> [&Tensor; 4] {
        [&self.forward_h0, &self.forward_c0, &self.backward_h0, &self.backward_c0]
    }

    pub fn initial_states_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.forward_h0,
            &mut self.forward_c0,
            &mut self.backward_h0,
            &mut self.backward_c0,
        ]
    }

    /// Registers the model on `tape`. With `trainable` the weights become
    /// gradient-receiving leaves; initial states are always constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> FusionVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let lstm = LstmVars {
            input_weights: std::array::from_fn(|g| leaf(&self.lstm.input_weights[g])),
            recurrent_weights: std::array::from_fn(|g| leaf(&self.lstm.recurrent_weights[g])),
            biases: std::array::from_fn(|g| leaf(&self.lstm.biases[g])),
        };
        let head_weight = leaf(&self.head_weight);
        let head_bias = leaf(&self.head_bias);
        FusionVars {
            lstm,
            head_weight,
            head_bias,
            head_mode: self.head_mode,
            forward_init: (tape.constant(self.forward_h0.clone()), tape.constant(self.forward_c0.clone())),
            backward_init: (tape.constant(self.backward_h0.clone()), tape.constant(self.backward_c0.clone())),
        }
    }
}

impl Parameters for FusionModel {
    fn parameters(&self) -> Vec<&Tensor> {
        let l = &self.lstm;
        l.input_weights
            .iter()
            .chain(&l.recurrent_weights)
            .chain(&l.biases)
            .chain([&self.head_weight, &self.head_bias])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let l = &mut self.lstm;
        l.input_weights
            .iter_mut()
            .chain(&mut l.recurrent_weights)
            .chain(&mut l.biases)
            .chain([&mut self.head_weight, &mut self.head_bias])
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub input_weights: [Var; GATES],
    pub recurrent_weights: [Var; GATES],
    pub biases: [Var; GATES],
}

/// Tape handles for a bound [`FusionModel`].
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub lstm: LstmVars,
    pub head_weight: Var,
    pub head_bias: Var,
    pub head_mode: HeadMode,
    pub forward_init: (Var, Var),
    pub backward_init: (Var, Var),
}

impl FusionVars {
    /// Trainable handles in [`Parameters`] order.
    pub fn parameters(&self) -> Vec<Var> {
        let l = &self.lstm;
        l.input_weights
            .iter()
            .chain(&l.recurrent_weights)
            .chain(&l.biases)
            .copied()
            .chain([self.head_weight, self.head_bias])
            .collect()
    }
}

/// `x · W_g + b_g` for every gate; rows of `x` are slices.
pub fn project_inputs(tape: &mut Tape, lstm: &LstmVars, x: Var) -> Result<[Var; GATES], TensorError> {
    let mut out = [x; GATES];
    for (g, slot) in out.iter_mut().enumerate() {
        let xw = tape.matmul(x, lstm.input_weights[g])?;
        *slot = tape.add_row(xw, lstm.biases[g])?;
    }
    Ok(out)
}

/// One LSTM update from precomputed input projections.
fn cell_step(tape: &mut Tape, lstm: &LstmVars, projected: [Var; GATES], h: Var, c: Var) -> Result<(Var, Var), TensorError> {
    let mut pre = [h; GATES];
    for (g, slot) in pre.iter_mut().enumerate() {
        let hu = tape.matmul(h, lstm.recurrent_weights[g])?;
        *slot = tape.add(projected[g], hu)?;
    }
    let i = tape.sigmoid(pre[INPUT_GATE])?;
    let f = tape.sigmoid(pre[FORGET_GATE])?;
    let g = tape.tanh(pre[CANDIDATE])?;
    let o = tape.sigmoid(pre[OUTPUT_GATE])?;
    let kept = tape.mul(f, c)?;
    let written = tape.mul(i, g)?;
    let c_next = tape.add(kept, written)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// `(h, c) = f_ℓ(d, h_prev, c_prev)` on a tape; `d`, `h` and `c` are rows.
pub fn lstm_cell_on_tape(tape: &mut Tape, lstm: &LstmVars, d: Var, h: Var, c: Var) -> Result<(Var, Var), TensorError> {
    let projected = project_inputs(tape, lstm, d)?;
    cell_step(tape, lstm, projected, h, c)
}

/// Runs the cell over projected inputs in the given direction. The returned
/// states are indexed by slice regardless of direction.
pub fn run_projected(
    tape: &mut Tape,
    lstm: &LstmVars,
    projected: [Var; GATES],
    slices: usize,
    direction: Direction,
    init: (Var, Var),
) -> Result<Vec<Var>, TensorError> {
    let (mut h, mut c) = init;
    let mut states = vec![h; slices];
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::Forward => Box::new(0..slices),
        Direction::Backward => Box::new((0..slices).rev()),
    };
    for s in order {
        let mut row = [h; GATES];
        for (g, slot) in row.iter_mut().enumerate() {
            *slot = tape.rows(projected[g], s, 1)?;
        }
        (h, c) = cell_step(tape, lstm, row, h, c)?;
        states[s] = h;
    }
    Ok(states)
}

/// Per-slice probabilities `S × B` for descriptors `x` (`S × D`) on a tape.
pub fn forward_on_tape(tape: &mut Tape, vars: &FusionVars, x: Var) -> Result<Var, FusionError> {
    let slices = tape.value(x).rows();
    if slices == 0 {
        return Err(FusionError::EmptyVolume(String::new()));
    }
    let projected = project_inputs(tape, &vars.lstm, x)?;
    let fwd = run_projected(tape, &vars.lstm, projected, slices, Direction::Forward, vars.forward_init)?;
    let bwd = run_projected(tape, &vars.lstm, projected, slices, Direction::Backward, vars.backward_init)?;
    let fwd = tape.concat(&fwd, 0)?;
    let bwd = tape.concat(&bwd, 0)?;
    let scores = match vars.head_mode {
        HeadMode::Concat => {
            let joined = tape.concat(&[fwd, bwd], 1)?;
            tape.matmul(joined, vars.head_weight)?
        }
        HeadMode::Symmetric => {
            let a = tape.matmul(fwd, vars.head_weight)?;
            let b = tape.matmul(bwd, vars.head_weight)?;
            tape.add(a, b)?
        }
    };
    let logits = tape.add_row(scores, vars.head_bias)?;
    Ok(tape.sigmoid(logits)?)
}

fn check_descriptors(model: &FusionModel, d: &DescriptorMatrix) -> Result<(), FusionError> {
    if d.slices() == 0 {
        return Err(FusionError::EmptyVolume(d.volume_id.clone()));
    }
    if d.dim() != model.lstm.input_dim() {
        return Err(FusionError::DescriptorWidth {
            expected: model.lstm.input_dim(),
            got: d.dim(),
        });
    }
    Ok(())
}

/// One LSTM step on plain values.
pub fn lstm_cell(params: &LstmParams, d: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor), FusionError> {
    let hidden = params.hidden();
    if d.numel() != params.input_dim() {
        return Err(FusionError::DescriptorWidth {
            expected: params.input_dim(),
            got: d.numel(),
        });
    }
    for s in [h_prev, c_prev] {
        if s.numel() != hidden {
            return Err(FusionError::StateWidth { expected: hidden, got: s.numel() });
        }
    }
    let row = |t: &Tensor| Tensor::from_parts(vec![1, t.numel()], t.data().to_vec());
    let mut tape = Tape::new();
    let lstm = LstmVars {
        input_weights: std::array::from_fn(|g| tape.constant(params.input_weights[g].clone())),
        recurrent_weights: std::array::from_fn(|g| tape.constant(params.recurrent_weights[g].clone())),
        biases: std::array::from_fn(|g| tape.constant(params.biases[g].clone())),
    };
    let d = tape.constant(row(d));
    let h = tape.constant(row(h_prev));
    let c = tape.constant(row(c_prev));
    let (h, c) = lstm_cell_on_tape(&mut tape, &lstm, d, h, c)?;
    Ok((tape.value(h).clone(), tape.value(c).clone()))
}

/// Hidden states `S × H` for one direction, row `s` holding the state at
/// slice `s`.
pub fn run_direction(model: &FusionModel, d: &DescriptorMatrix, direction: Direction) -> Result<Tensor, FusionError> {
    check_descriptors(model, d)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let x = tape.constant(d.values().clone());
    let projected = project_inputs(&mut tape, &vars.lstm, x)?;
    let init = match direction {
        Direction::Forward => vars.forward_init,
        Direction::Backward => vars.backward_init,
    };
    let states = run_projected(&mut tape, &vars.lstm, projected, d.slices(), direction, init)?;
    let stacked = tape.concat(&states, 0)?;
    Ok(tape.value(stacked).clone())
}

/// Per-slice biomarker probabilities `S × B`.
pub fn fuse_predict(model: &FusionModel, d: &DescriptorMatrix) -> Result<Tensor, FusionError> {
    check_descriptors(model, d)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let x = tape.constant(d.values().clone());
    let probs = forward_on_tape(&mut tape, &vars, x)?;
    Ok(tape.value(probs).clone())
}

/// Seeded initialization: weights uniform in `±1/√fan_in`, forget-gate bias
/// 1, other biases 0, zero initial states.
pub fn init_fusion(dims: FusionDims, head_mode: HeadMode, seed: u64) -> Result<FusionModel, FusionError> {
    if dims.descriptor == 0 || dims.hidden == 0 || dims.biomarkers == 0 {
        return Err(FusionError::InvalidDims(dims));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = FusionModel::zeros(dims, head_mode);
    for g in 0..GATES {
        fill_uniform(&mut model.lstm.input_weights[g], dims.descriptor, &mut rng);
    }
    for g in 0..GATES {
        fill_uniform(&mut model.lstm.recurrent_weights[g], dims.hidden, &mut rng);
    }
    model.lstm.biases[FORGET_GATE].data_mut().fill(1.0);
    let head_in = model.head_weight.rows();
    fill_uniform(&mut model.head_weight, head_in, &mut rng);
    Ok(model)
}

pub(crate) fn fill_uniform(t: &mut Tensor, fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error, FD_STEP, GRAD_REL_TOL};
    use crate::labels::LabelMatrix;

    fn dims(descriptor: usize, hidden: usize, biomarkers: usize) -> FusionDims {
        FusionDims { descriptor, hidden, biomarkers }
    }

    fn random_descriptors(rng: &mut ChaCha8Rng, slices: usize, dim: usize) -> DescriptorMatrix {
        let rows: Vec<Vec<f64>> = (0..slices)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        DescriptorMatrix::from_slices("v", &rows).unwrap()
    }

    /// Straight-line LSTM on plain vectors, no tape.
    fn reference_cell(p: &LstmParams, d: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden = p.hidden();
        let pre = |g: usize, j: usize| {
            let mut z = p.biases[g].data()[j];
            for (k, dk) in d.iter().enumerate() {
                z += dk * p.input_weights[g].get(k, j);
            }
            for (k, hk) in h.iter().enumerate() {
                z += hk * p.recurrent_weights[g].get(k, j);
            }
            z
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h_next = vec![0.0; hidden];
        let mut c_next = vec![0.0; hidden];
        for j in 0..hidden {
            let i = sig(pre(INPUT_GATE, j));
            let f = sig(pre(FORGET_GATE, j));
            let g = pre(CANDIDATE, j).tanh();
            let o = sig(pre(OUTPUT_GATE, j));
            c_next[j] = f * c[j] + i * g;
            h_next[j] = o * c_next[j].tanh();
        }
        (h_next, c_next)
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = LstmParams::zeros(3, 2);
        let d = Tensor::row(vec![0.4, -1.0, 9.0]).unwrap();
        let z = Tensor::zeros(vec![1, 2]);
        let (h, c) = lstm_cell(&p, &d, &z, &z).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmParams::zeros(2, 2);
        p.biases[FORGET_GATE].data_mut().fill(50.0);
        p.biases[INPUT_GATE].data_mut().fill(-50.0);
        let d = Tensor::row(vec![0.3, 0.1]).unwrap();
        let h = Tensor::zeros(vec![1, 2]);
        let c = Tensor::row(vec![7.0, 12.0]).unwrap();
        let (_, c_next) = lstm_cell(&p, &d, &h, &c).unwrap();
        assert!((c_next.data()[0] - 7.0).abs() < 1e-9);
        assert!((c_next.data()[1] - 12.0).abs() < 1e-9);
    }

    #[test]
    fn cell_dimension_errors() {
        let p = LstmParams::zeros(3, 2);
        let z = Tensor::zeros(vec![1, 2]);
        let bad = Tensor::zeros(vec![1, 4]);
        assert!(matches!(lstm_cell(&p, &bad, &z, &z), Err(FusionError::DescriptorWidth { .. })));
        assert!(matches!(
            lstm_cell(&p, &Tensor::zeros(vec![1, 3]), &bad, &z),
            Err(FusionError::StateWidth { .. })
        ));
    }

    #[test]
    fn three_step_unroll_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = init_fusion(dims(4, 3, 2), HeadMode::Concat, 5).unwrap();
        let d = random_descriptors(&mut rng, 3, 4);
        let fwd = run_direction(&model, &d, Direction::Forward).unwrap();
        let bwd = run_direction(&model, &d, Direction::Backward).unwrap();

        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for s in 0..3 {
            (h, c) = reference_cell(&model.lstm, d.values().row_slice(s), &h, &c);
            for j in 0..3 {
                assert!((fwd.get(s, j) - h[j]).abs() < 1e-12);
            }
        }
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for s in (0..3).rev() {
            (h, c) = reference_cell(&model.lstm, d.values().row_slice(s), &h, &c);
            for j in 0..3 {
                assert!((bwd.get(s, j) - h[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_slice_directions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = init_fusion(dims(5, 4, 3), HeadMode::Concat, 9).unwrap();
        let d = random_descriptors(&mut rng, 1, 5);
        let f = run_direction(&model, &d, Direction::Forward).unwrap();
        let b = run_direction(&model, &d, Direction::Backward).unwrap();
        assert!(f.bitwise_eq(&b));
    }

    #[test]
    fn backward_is_forward_on_reversed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..10 {
            let model = init_fusion(dims(6, 5, 3), HeadMode::Concat, seed).unwrap();
            let d = random_descriptors(&mut rng, 7, 6);
            let bwd = run_direction(&model, &d, Direction::Backward).unwrap();
            let rev_fwd = run_direction(&model, &d.reversed(), Direction::Forward).unwrap();
            assert!(bwd.bitwise_eq(&rev_fwd.reversed_rows()));
        }
    }

    #[test]
    fn symmetric_head_is_reversal_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = init_fusion(dims(4, 3, 2), HeadMode::Symmetric, 1).unwrap();
        let d = random_descriptors(&mut rng, 6, 4);
        let p = fuse_predict(&model, &d).unwrap();
        let p_rev = fuse_predict(&model, &d.reversed()).unwrap();
        assert!(p.bitwise_eq(&p_rev.reversed_rows()));
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = init_fusion(dims(4, 3, 2), HeadMode::Concat, 1).unwrap();
        model.head_weight = Tensor::zeros(vec![6, 2]);
        let p = fuse_predict(&model, &random_descriptors(&mut rng, 5, 4)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn probabilities_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = init_fusion(dims(4, 3, 2), HeadMode::Concat, 4).unwrap();
        let p = fuse_predict(&model, &random_descriptors(&mut rng, 9, 4)).unwrap();
        assert_eq!(p.shape(), &[9, 2]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn perturbing_one_slice_moves_other_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = init_fusion(dims(4, 3, 2), HeadMode::Concat, 6).unwrap();
        let d = random_descriptors(&mut rng, 5, 4);
        let base = fuse_predict(&model, &d).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..5).map(|s| d.values().row_slice(s).to_vec()).collect();
        rows[2][0] += 0.5;
        let moved = fuse_predict(&model, &DescriptorMatrix::from_slices("v", &rows).unwrap()).unwrap();
        for s in [0, 1, 3, 4] {
            assert!(base.row_slice(s) != moved.row_slice(s), "row {s} unchanged");
        }
    }

    #[test]
    fn init_contract() {
        let d = dims(4, 3, 2);
        let a = init_fusion(d, HeadMode::Concat, 42).unwrap();
        let b = init_fusion(d, HeadMode::Concat, 42).unwrap();
        let c = init_fusion(d, HeadMode::Concat, 43).unwrap();
        assert!(a.parameters().iter().zip(b.parameters()).all(|(x, y)| x.bitwise_eq(y)));
        assert!(a.parameters().iter().zip(c.parameters()).any(|(x, y)| !x.bitwise_eq(y)));
        assert!(a.lstm.biases[FORGET_GATE].data().iter().all(|&v| v == 1.0));
        for g in [INPUT_GATE, CANDIDATE, OUTPUT_GATE] {
            assert!(a.lstm.biases[g].data().iter().all(|&v| v == 0.0));
        }
        let bound = 1.0 / 2.0;
        assert!(a.lstm.input_weights.iter().all(|w| w.data().iter().all(|v| v.abs() <= bound)));
        assert!(a.initial_states().iter().all(|s| s.data().iter().all(|&v| v == 0.0)));
        assert!(matches!(
            init_fusion(dims(0, 3, 2), HeadMode::Concat, 1),
            Err(FusionError::InvalidDims(_))
        ));
    }

    #[test]
    fn empty_volume_and_width_errors() {
        let model = init_fusion(dims(4, 3, 2), HeadMode::Concat, 1).unwrap();
        let empty = DescriptorMatrix::new("e", Tensor::zeros(vec![0, 4])).unwrap();
        assert!(matches!(fuse_predict(&model, &empty), Err(FusionError::EmptyVolume(_))));
        let wide = DescriptorMatrix::new("w", Tensor::zeros(vec![2, 5])).unwrap();
        assert!(matches!(
            run_direction(&model, &wide, Direction::Forward),
            Err(FusionError::DescriptorWidth { .. })
        ));
    }

    fn loss_of(model: &FusionModel, d: &DescriptorMatrix, y: &LabelMatrix) -> f64 {
        let p = fuse_predict(model, d).unwrap();
        crate::tape::bce_sum(p.data(), &y.to_f64(), 1e-7)
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (case, mode) in [HeadMode::Concat, HeadMode::Symmetric].into_iter().enumerate() {
            let model = init_fusion(dims(4, 3, 2), mode, case as u64 + 7).unwrap();
            let d = random_descriptors(&mut rng, 3, 4);
            let y = LabelMatrix::new(3, 2, (0..6).map(|_| rng.random_range(0..2)).collect()).unwrap();

            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let x = tape.constant(d.values().clone());
            let p = forward_on_tape(&mut tape, &vars, x).unwrap();
            let loss = tape.bce(p, &y.to_f64(), 1e-7).unwrap();
            tape.backward(loss).unwrap();
            let analytic: Vec<Tensor> = vars.parameters().iter().map(|v| tape.grad(*v).unwrap().clone()).collect();

            let params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
            let numeric = central_difference(&params, FD_STEP, |ps| {
                let mut m = model.clone();
                for (dst, src) in m.parameters_mut().into_iter().zip(ps) {
                    *dst = src.clone();
                }
                loss_of(&m, &d, &y)
            });
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= GRAD_REL_TOL, "{mode:?}: relative error {err}");
        }
    }
}
