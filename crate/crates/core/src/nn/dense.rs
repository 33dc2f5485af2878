use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};

/// Affine layer `z = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub(crate) weights: Matrix,
    pub(crate) bias: Matrix,
    pub(crate) grad_weights: Matrix,
    pub(crate) grad_bias: Matrix,
    cache: Option<DenseCache>,
}

#[derive(Clone, Debug)]
struct DenseCache {
    input: Matrix,
    net: Matrix,
}

impl DenseLayer {
    /// Gaussian weights with standard deviation `1/√in`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut RngStream) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::domain("dense layer needs non-zero dimensions"));
        }
        let weights = rng.gaussian_init(inputs, outputs, 1.0 / (inputs as f64).sqrt())?;
        Self::from_params(weights, Matrix::zeros(1, outputs))
    }

    pub fn from_params(weights: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weights.cols() {
            return Err(Error::Shape {
                op: "DenseLayer::from_params",
                left: weights.shape(),
                right: bias.shape(),
            });
        }
        let (i, o) = weights.shape();
        Ok(Self {
            grad_weights: Matrix::zeros(i, o),
            grad_bias: Matrix::zeros(1, o),
            weights,
            bias,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &Matrix {
        &self.bias
    }

    pub fn grad_weights(&self) -> &Matrix {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> &Matrix {
        &self.grad_bias
    }

    /// Net computed by the most recent training forward, if still cached.
    pub fn cached_net(&self) -> Option<&Matrix> {
        self.cache.as_ref().map(|c| &c.net)
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::Shape {
                op: "dense_forward",
                left: x.shape(),
                right: self.weights.shape(),
            });
        }
        x.affine(&self.weights, &self.bias)
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        let net = self.forward_eval(x)?;
        self.cache = Some(DenseCache {
            input: x.clone(),
            net: net.clone(),
        });
        Ok(net)
    }

    /// Accumulates `xᵀ·grad_out` and the column sums of `grad_out` into the
    /// parameter gradients; returns `grad_out·Wᵀ`. Consumes the cache.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        self.accumulate(grad_out)?;
        grad_out.matmul_nt(&self.weights)
    }

    /// The parameter half of [`backward`](Self::backward), for a layer whose
    /// input gradient nobody needs.
    pub fn backward_params_only(&mut self, grad_out: &Matrix) -> Result<()> {
        self.accumulate(grad_out)
    }

    fn accumulate(&mut self, grad_out: &Matrix) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("dense backward without a cached forward"))?;
        if grad_out.rows() != cache.input.rows() || grad_out.cols() != self.outputs() {
            return Err(Error::Shape {
                op: "dense_backward",
                left: grad_out.shape(),
                right: cache.net.shape(),
            });
        }
        self.grad_weights.add_matmul_tn(&cache.input, grad_out)?;
        self.grad_bias.add_assign(&grad_out.column_sums())
    }

    pub fn zero_grads(&mut self) {
        self.grad_weights = Matrix::zeros(self.inputs(), self.outputs());
        self.grad_bias = Matrix::zeros(1, self.outputs());
    }
}
