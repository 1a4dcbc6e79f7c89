use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{Parameterized, Rng};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored as `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearLayer {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights =
            Array2::from_shape_simple_fn((out_dim, in_dim), || rng.uniform_range(-limit, limit));
        Self {
            weights,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Dim {
                expected: weights.nrows(),
                got: bias.len(),
                context: "linear bias",
            });
        }
        Ok(Self {
            weights: weights.as_standard_layout().to_owned(),
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_in(x.len())?;
        let x = ndarray::ArrayView1::from(x);
        Ok((self.weights.dot(&x) + &self.bias).to_vec())
    }

    /// Gradients of a scalar loss w.r.t. `W`, `b` and `x`, given the loss
    /// gradient w.r.t. the output. Returned as `(grad_layer, grad_x)`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(LinearLayer, Vec<f64>)> {
        self.check_in(x.len())?;
        if upstream.len() != self.out_dim() {
            return Err(Error::Dim {
                expected: self.out_dim(),
                got: upstream.len(),
                context: "linear upstream gradient",
            });
        }
        let mut grads = self.zeros_like();
        let xm = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let gm = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row view");
        let gx = self.backward_batch(&xm, &gm, &mut grads);
        Ok((grads, gx.into_raw_vec_and_offset().0))
    }

    /// Batched forward: each row of `x` is one input.
    pub fn forward_batch(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.ncols(), self.in_dim());
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn try_forward_batch(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_in(x.ncols())?;
        Ok(self.forward_batch(x))
    }

    /// Batched backward. Accumulates parameter gradients into `grads` and
    /// returns the gradient w.r.t. `x`.
    pub fn backward_batch(
        &self,
        x: &ArrayView2<f64>,
        grad_out: &ArrayView2<f64>,
        grads: &mut LinearLayer,
    ) -> Array2<f64> {
        debug_assert_eq!(x.nrows(), grad_out.nrows());
        grads.weights += &grad_out.t().dot(x);
        grads.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weights)
    }

    /// Like [`backward_batch`](Self::backward_batch) but skips the input
    /// gradient, for layers fed by frozen features.
    pub fn accumulate_param_grads(
        &self,
        x: &ArrayView2<f64>,
        grad_out: &ArrayView2<f64>,
        grads: &mut LinearLayer,
    ) {
        grads.weights += &grad_out.t().dot(x);
        grads.bias += &grad_out.sum_axis(Axis(0));
    }

    fn check_in(&self, got: usize) -> Result<()> {
        if got != self.in_dim() {
            return Err(Error::Dim {
                expected: self.in_dim(),
                got,
                context: "linear input",
            });
        }
        Ok(())
    }
}

impl Parameterized for LinearLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_forward() {
        let layer = LinearLayer::from_parts(Array2::eye(2), Array1::zeros(2)).unwrap();
        assert_eq!(layer.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn row_sum_plus_bias() {
        let layer = LinearLayer::from_parts(array![[1.0, 1.0]], array![0.5]).unwrap();
        assert_eq!(layer.forward(&[2.0, 3.0]).unwrap(), vec![5.5]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let layer = LinearLayer::zeros(3, 2);
        assert!(matches!(layer.forward(&[1.0]), Err(Error::Dim { .. })));
        assert!(layer.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = Rng::new(9);
        let layer = LinearLayer::new(10, 20, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(layer.weights.iter().all(|w| w.abs() <= limit));
        assert!(layer.bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn backward_closed_form() {
        let layer =
            LinearLayer::from_parts(array![[1.0, 2.0], [3.0, 4.0]], array![0.0, 0.0]).unwrap();
        let (g, gx) = layer.backward(&[5.0, 6.0], &[1.0, -1.0]).unwrap();
        assert_eq!(g.weights, array![[5.0, 6.0], [-5.0, -6.0]]);
        assert_eq!(g.bias, array![1.0, -1.0]);
        assert_eq!(gx, vec![-2.0, -2.0]);
    }
}
