use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Entry-wise nonlinearity. Its input is the layer "net" that probes record.
///
/// A training forward caches the local derivative at every entry, so the
/// backward pass is a plain entry-wise product.
#[derive(Clone, Debug)]
pub struct ActivationLayer {
    activation: Activation,
    cache: Option<Matrix>,
}

impl ActivationLayer {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            cache: None,
        }
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.activation;
        x.map(|v| act.forward(v))
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        let act = self.activation;
        let mut out = Vec::with_capacity(x.len());
        let mut grad = Vec::with_capacity(x.len());
        for (index, &z) in x.as_slice().iter().enumerate() {
            let (y, d) = act.forward_with_grad(z);
            if !(y.is_finite() && d.is_finite()) {
                return Err(Error::NonFinite {
                    op: "activation_forward",
                    index,
                });
            }
            out.push(y);
            grad.push(d);
        }
        self.cache = Some(Matrix::from_parts(x.rows(), x.cols(), grad));
        Ok(Matrix::from_parts(x.rows(), x.cols(), out))
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let local = self
            .cache
            .take()
            .ok_or_else(|| Error::state("activation backward without a cached forward"))?;
        grad_out.hadamard(&local)
    }
}
