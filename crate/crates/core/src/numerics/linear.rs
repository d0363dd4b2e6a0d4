use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::Tensor2;
use crate::error::{M3vError, Result};

/// Affine map `y = W·x + b` with gradient buffers.
///
/// Gradient buffers and the cached input are not serialized; they are
/// re-created on demand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "StoredLayer")]
pub struct LinearLayer {
    /// `out × in`
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    #[serde(skip)]
    pub grad_weight: Tensor2,
    #[serde(skip)]
    pub grad_bias: Vec<f64>,
    #[serde(skip)]
    cached_input: Option<Tensor2>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredLayer {
    weight: Tensor2,
    bias: Vec<f64>,
}

impl TryFrom<StoredLayer> for LinearLayer {
    type Error = M3vError;

    fn try_from(s: StoredLayer) -> Result<Self> {
        LinearLayer::from_parts(s.weight, s.bias)
    }
}

impl PartialEq for LinearLayer {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.bias == other.bias
    }
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self::from_parts(Tensor2::zeros(out_dim, in_dim), vec![0.0; out_dim])
            .expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor2, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(M3vError::shape(
                "LinearLayer::from_parts",
                weight.shape(),
                (bias.len(), 1),
            ));
        }
        let (out_dim, in_dim) = weight.shape();
        Ok(LinearLayer {
            weight,
            bias,
            grad_weight: Tensor2::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
            cached_input: None,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weight.data_mut() {
            *w = rng.uniform_range(-limit, limit);
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Pure forward pass over a batch (`batch × in` → `batch × out`).
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.in_dim() {
            return Err(M3vError::shape(
                "linear_forward",
                x.shape(),
                self.weight.shape(),
            ));
        }
        let mut out = x.matmul_transposed(&self.weight)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Forward pass that remembers its input for a later [`LinearLayer::backward`].
    pub fn forward_cached(&mut self, x: &Tensor2) -> Result<Tensor2> {
        let out = self.forward(x)?;
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    /// Backward through the most recent [`LinearLayer::forward_cached`] call.
    pub fn backward(&mut self, dout: &Tensor2) -> Result<Tensor2> {
        let x = self.cached_input.take().ok_or_else(|| {
            M3vError::State("LinearLayer::backward called before forward".into())
        })?;
        let dx = self.backward_with_input(&x, dout);
        self.cached_input = Some(x);
        dx
    }

    /// Accumulates `dL/dW`, `dL/db` for the given input and upstream gradient and
    /// returns `dL/dx`.
    pub fn backward_with_input(&mut self, x: &Tensor2, dout: &Tensor2) -> Result<Tensor2> {
        if dout.cols() != self.out_dim() || dout.rows() != x.rows() || x.cols() != self.in_dim() {
            return Err(M3vError::shape("linear_backward", x.shape(), dout.shape()));
        }
        self.ensure_grad_buffers();
        let (out_dim, in_dim) = self.weight.shape();
        for b in 0..x.rows() {
            let xr = x.row(b);
            let dr = dout.row(b);
            for o in 0..out_dim {
                let g = dr[o];
                if g == 0.0 {
                    continue;
                }
                self.grad_bias[o] += g;
                let gw = &mut self.grad_weight.data_mut()[o * in_dim..(o + 1) * in_dim];
                for (w, &xi) in gw.iter_mut().zip(xr) {
                    *w += g * xi;
                }
            }
        }
        dout.matmul(&self.weight)
    }

    pub fn zero_grad(&mut self) {
        let (out_dim, in_dim) = self.weight.shape();
        self.grad_weight = Tensor2::zeros(out_dim, in_dim);
        self.grad_bias = vec![0.0; out_dim];
    }

    fn ensure_grad_buffers(&mut self) {
        if self.grad_weight.shape() != self.weight.shape() || self.grad_bias.len() != self.bias.len()
        {
            self.zero_grad();
        }
    }

    /// Visits `(parameter, gradient)` slices: weight first, then bias.
    pub fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.ensure_grad_buffers();
        f(self.weight.data_mut(), self.grad_weight.data_mut());
        f(&mut self.bias, &mut self.grad_bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer() {
        let layer = LinearLayer::from_parts(
            Tensor2::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            vec![0.0, 0.0],
        )
        .unwrap();
        let y = layer.forward(&Tensor2::from_rows(&[[1.0, 2.0]])).unwrap();
        assert_eq!(y, Tensor2::from_rows(&[[1.0, 2.0]]));
    }

    #[test]
    fn hand_arithmetic() {
        let layer =
            LinearLayer::from_parts(Tensor2::from_rows(&[[2.0, 3.0]]), vec![1.0]).unwrap();
        let y = layer.forward(&Tensor2::from_rows(&[[1.0, 1.0]])).unwrap();
        assert_eq!(y, Tensor2::from_rows(&[[6.0]]));
    }

    #[test]
    fn batch_rows_preserved() {
        let layer = LinearLayer::zeros(4, 3);
        let y = layer.forward(&Tensor2::zeros(3, 4)).unwrap();
        assert_eq!(y.shape(), (3, 3));
    }

    #[test]
    fn dimension_mismatch_names_both_shapes() {
        let layer = LinearLayer::zeros(4, 3);
        let err = layer.forward(&Tensor2::zeros(2, 5)).unwrap_err().to_string();
        assert!(err.contains("(2, 5)") && err.contains("(3, 4)"), "{err}");
    }

    #[test]
    fn squared_loss_gradient_by_hand() {
        // L = ½ (w·x + b − t)² with x = [1, 2], w = [0.5, −1], b = 0.25, t = 1
        // residual r = 0.5 − 2 + 0.25 − 1 = −2.25; dL/dw = r·x, dL/db = r
        let mut layer =
            LinearLayer::from_parts(Tensor2::from_rows(&[[0.5, -1.0]]), vec![0.25]).unwrap();
        let x = Tensor2::from_rows(&[[1.0, 2.0]]);
        let y = layer.forward_cached(&x).unwrap();
        let r = y.get(0, 0) - 1.0;
        assert_eq!(r, -2.25);
        let dx = layer.backward(&Tensor2::from_rows(&[[r]])).unwrap();
        assert_eq!(layer.grad_weight.data(), &[-2.25, -4.5]);
        assert_eq!(layer.grad_bias, vec![-2.25]);
        assert_eq!(dx.data(), &[-1.125, 2.25]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut layer = LinearLayer::xavier(3, 2, &mut Rng::new(0));
        layer.forward_cached(&Tensor2::from_rows(&[[1.0, -1.0, 2.0]])).unwrap();
        layer.backward(&Tensor2::zeros(1, 2)).unwrap();
        assert!(layer.grad_weight.data().iter().all(|&g| g == 0.0));
        assert!(layer.grad_bias.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut layer = LinearLayer::xavier(3, 2, &mut Rng::new(1));
        let x = Tensor2::from_rows(&[[0.3, -0.7, 1.1], [1.0, 0.5, -0.2]]);
        let dout = Tensor2::from_rows(&[[1.0, -2.0], [0.5, 0.25]]);
        layer.forward_cached(&x).unwrap();
        layer.backward(&dout).unwrap();
        let once = layer.grad_weight.clone();
        layer.backward(&dout).unwrap();
        for (a, b) in layer.grad_weight.data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
        layer.zero_grad();
        assert!(layer.grad_weight.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample_gradients() {
        let mut layer = LinearLayer::xavier(3, 2, &mut Rng::new(2));
        let x = Tensor2::from_rows(&[[0.3, -0.7, 1.1], [1.0, 0.5, -0.2], [0.0, 2.0, 1.0]]);
        let dout = Tensor2::from_rows(&[[1.0, -2.0], [0.5, 0.25], [-1.0, 3.0]]);
        layer.backward_with_input(&x, &dout).unwrap();
        let batch = layer.grad_weight.clone();
        layer.zero_grad();
        for r in 0..3 {
            layer
                .backward_with_input(&x.select_rows(&[r]), &dout.select_rows(&[r]))
                .unwrap();
        }
        for (a, b) in batch.data().iter().zip(layer.grad_weight.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut layer = LinearLayer::zeros(2, 2);
        let err = layer.backward(&Tensor2::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, M3vError::State(_)));
    }
}
