//! Dense tensors, a per-forward-pass tape for reverse-mode differentiation,
//! and the Adam optimizer.
//!
//! Parameters live in a [`ParamStore`]. A forward pass records them onto a
//! fresh [`Tape`]; [`Tape::backward`] returns [`Gradients`] that are then
//! accumulated back into the store.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{
    cosine_similarity, log_sum_exp_slice, Gradients, Mode, ParamGrad, ParamGrads, Tape, Var,
};
pub use tensor::Tensor;

/// Central finite-difference gradient of `f` at `x` with step `eps`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
