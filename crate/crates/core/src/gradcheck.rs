//! Central finite differences for verifying analytic gradients.
//!
//! Only forward evaluations are used here, so these helpers stay independent
//! of [`crate::tape::Tape::backward`].

use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;

/// Gradients smaller than this are compared on an absolute scale, where the
/// rounding error of a central difference dominates.
pub const GRAD_SCALE_FLOOR: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, GRAD_SCALE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(GRAD_SCALE_FLOOR);
    (a - b).abs() / scale
}

/// Numeric gradient of `f` with respect to every entry of every tensor in
/// `params`.
pub fn central_difference(params: &[Tensor], step: f64, f: impl Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let mut grad = vec![0.0; params[t].numel()];
        for (i, g) in grad.iter_mut().enumerate() {
            let original = params[t].data()[i];
            work[t].data_mut()[i] = original + step;
            let plus = f(&work);
            work[t].data_mut()[i] = original - step;
            let minus = f(&work);
            work[t].data_mut()[i] = original;
            *g = (plus - minus) / (2.0 * step);
        }
        out.push(Tensor::from_parts(params[t].shape().to_vec(), grad));
    }
    out
}

/// Largest entrywise [`relative_error`] between paired gradient lists.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lists differ in length");
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.shape(), n.shape(), "gradient shapes differ");
            a.data().iter().zip(n.data()).map(|(&x, &y)| relative_error(x, y))
        })
        .fold(0.0, f64::max)
}
