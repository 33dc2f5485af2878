//! Layers and the sequential network that chains them.

mod activation;
mod batchnorm;
pub mod checkpoint;
mod dense;
mod dropout;
mod network;

pub use activation::ActivationLayer;
pub use batchnorm::{BatchNormLayer, BN_EPSILON, BN_MOMENTUM};
pub use dense::DenseLayer;
pub use dropout::DropoutLayer;
pub use network::{MlpSpec, Network, ParamSlot, RecordedForward};

use crate::error::Result;
use crate::numcore::{Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(DenseLayer),
    Dropout(DropoutLayer),
    BatchNorm(BatchNormLayer),
    Activation(ActivationLayer),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Dropout(_) => "dropout",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Activation(_) => "activation",
        }
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.forward_eval(x),
            Layer::Dropout(l) => l.forward_eval(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::Activation(l) => l.forward_eval(x),
        }
    }

    pub fn forward_train(&mut self, x: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.forward_train(x),
            Layer::Dropout(l) => l.forward_train(x, rng),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Activation(l) => l.forward_train(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Activation(l) => l.backward(grad_out),
        }
    }

    pub fn zero_grads(&mut self) {
        match self {
            Layer::Dense(l) => l.zero_grads(),
            Layer::BatchNorm(l) => l.zero_grads(),
            Layer::Dropout(_) | Layer::Activation(_) => {}
        }
    }
}
