//! Dense layers, activations, losses and Adam with hand-derived gradients.
//!
//! Everything runs in `f64`. Models in this crate are plain structs of
//! [`LinearLayer`]s; a model-shaped clone filled with zeros doubles as its
//! gradient buffer, which keeps the optimizer and checkpoint code generic
//! through the [`Parameterized`] trait.

mod activation;
mod adam;
mod checkpoint;
mod gradcheck;
mod linear;
mod loss;
mod rng;

pub use activation::{
    dropout, dropout_mask, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, softmax,
    softmax_backward,
};
pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointHeader, LayerInfo, TensorRecord};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, FD_STEP};
pub use linear::LinearLayer;
pub use loss::{bce, cross_entropy, mse};
pub use rng::Rng;

/// A set of named parameter tensors, visited in a fixed order.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    /// Overwrite all parameters from a flat vector in visiting order.
    fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}
