use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};

use super::{ActivationLayer, BatchNormLayer, DenseLayer, DropoutLayer, Layer, Mode};

/// Sequential stack of layers.
#[derive(Clone, Debug, Default)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Output of a forward pass that also captured the probe-point nets.
#[derive(Clone, Debug)]
pub struct RecordedForward {
    pub output: Matrix,
    /// One entry per probe point, in forward order.
    pub nets: Vec<Matrix>,
}

/// Multi-layer perceptron layout: `dense → [batchnorm] → activation`
/// blocks, with dropout in front of every dense layer except the first.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// Layer widths including input and output, e.g. `[784, 512, 256, 256, 10]`.
    pub sizes: Vec<usize>,
    pub activation: Activation,
    /// `None` builds no dropout layers at all; `Some(p)` inserts them with `p`.
    pub dropout: Option<f64>,
    pub per_sample_mask: bool,
    pub batchnorm: bool,
}

/// Mutable view of one parameter matrix and its accumulated gradient.
pub struct ParamSlot<'a> {
    pub param: &'a mut Matrix,
    pub grad: &'a Matrix,
}

impl Network {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a network after checking that adjacent widths agree.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut width: Option<usize> = None;
        for (index, layer) in layers.iter().enumerate() {
            let (needs, produces) = match layer {
                Layer::Dense(d) => (Some(d.inputs()), Some(d.outputs())),
                Layer::BatchNorm(b) => (Some(b.dim()), Some(b.dim())),
                Layer::Dropout(_) | Layer::Activation(_) => (None, None),
            };
            if let (Some(have), Some(need)) = (width, needs) {
                if have != need {
                    return Err(Error::Shape {
                        op: "Network::new",
                        left: (index, have),
                        right: (index, need),
                    }
                    .at_layer(index));
                }
            }
            if produces.is_some() {
                width = produces;
            }
        }
        Ok(Self { layers })
    }

    pub fn mlp(spec: &MlpSpec, rng: &mut RngStream) -> Result<Self> {
        if spec.sizes.len() < 2 {
            return Err(Error::domain(
                "an MLP needs at least input and output widths",
            ));
        }
        let depth = spec.sizes.len() - 1;
        let mut layers = Vec::new();
        for i in 0..depth {
            if i > 0 {
                if let Some(p) = spec.dropout {
                    layers.push(Layer::Dropout(
                        DropoutLayer::new(p)?.with_per_sample_masks(spec.per_sample_mask),
                    ));
                }
            }
            layers.push(Layer::Dense(DenseLayer::init(
                spec.sizes[i],
                spec.sizes[i + 1],
                rng,
            )?));
            if i + 1 < depth {
                if spec.batchnorm {
                    layers.push(Layer::BatchNorm(BatchNormLayer::new(spec.sizes[i + 1])));
                }
                layers.push(Layer::Activation(ActivationLayer::new(spec.activation)));
            }
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense(d) => Some(d.inputs()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.outputs()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    pub fn dropout_layers_mut(&mut self) -> impl Iterator<Item = &mut DropoutLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Dropout(d) => Some(d),
            _ => None,
        })
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout(_)))
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    /// Probe points are the inputs of every activation layer, plus the final
    /// output when the network does not end in an activation (the logits).
    pub fn probe_count(&self) -> usize {
        let acts = self
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Activation(_)))
            .count();
        let tail = match self.layers.last() {
            Some(Layer::Activation(_)) | None => 0,
            Some(_) => 1,
        };
        acts + tail
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut RngStream) -> Result<Matrix> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => self.run_train(x, rng, None),
        }
    }

    /// Evaluation-mode forward. Touches no caches, so a frozen network can be
    /// shared between readers.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.run_eval(x, None)
    }

    pub fn forward_recording(
        &mut self,
        x: &Matrix,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<RecordedForward> {
        let mut nets = Vec::with_capacity(self.probe_count());
        let output = match mode {
            Mode::Eval => self.run_eval(x, Some(&mut nets))?,
            Mode::Train => self.run_train(x, rng, Some(&mut nets))?,
        };
        Ok(RecordedForward { output, nets })
    }

    pub fn forward_eval_recording(&self, x: &Matrix) -> Result<RecordedForward> {
        let mut nets = Vec::with_capacity(self.probe_count());
        let output = self.run_eval(x, Some(&mut nets))?;
        Ok(RecordedForward { output, nets })
    }

    fn run_eval(&self, x: &Matrix, mut nets: Option<&mut Vec<Matrix>>) -> Result<Matrix> {
        let mut cur = x.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            if let (Layer::Activation(_), Some(n)) = (layer, nets.as_deref_mut()) {
                n.push(cur.clone());
            }
            cur = layer.forward_eval(&cur).map_err(|e| e.at_layer(index))?;
        }
        self.record_tail(&cur, nets);
        Ok(cur)
    }

    fn run_train(
        &mut self,
        x: &Matrix,
        rng: &mut RngStream,
        mut nets: Option<&mut Vec<Matrix>>,
    ) -> Result<Matrix> {
        let mut cur = x.clone();
        for (index, layer) in self.layers.iter_mut().enumerate() {
            if let (Layer::Activation(_), Some(n)) = (&*layer, nets.as_deref_mut()) {
                n.push(cur.clone());
            }
            cur = layer
                .forward_train(&cur, rng)
                .map_err(|e| e.at_layer(index))?;
        }
        self.record_tail(&cur, nets);
        Ok(cur)
    }

    fn record_tail(&self, out: &Matrix, nets: Option<&mut Vec<Matrix>>) {
        if let Some(n) = nets {
            if !matches!(self.layers.last(), Some(Layer::Activation(_)) | None) {
                n.push(out.clone());
            }
        }
    }

    /// Propagates `grad_loss` through the layers in reverse order,
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, grad_loss: &Matrix) -> Result<Matrix> {
        let mut grad = grad_loss.clone();
        for (index, layer) in self.layers.iter_mut().enumerate().rev() {
            grad = layer.backward(&grad).map_err(|e| e.at_layer(index))?;
        }
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but skips the input gradient of a
    /// leading dense layer, which training never uses.
    pub fn backward_params(&mut self, grad_loss: &Matrix) -> Result<()> {
        let mut grad = grad_loss.clone();
        for (index, layer) in self.layers.iter_mut().enumerate().rev() {
            match layer {
                Layer::Dense(d) if index == 0 => {
                    return d.backward_params_only(&grad).map_err(|e| e.at_layer(0));
                }
                _ => grad = layer.backward(&grad).map_err(|e| e.at_layer(index))?,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    /// Parameters with their gradients in a fixed order (layer order; weights
    /// before bias, gamma before beta).
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(DenseLayer {
                    weights,
                    bias,
                    grad_weights,
                    grad_bias,
                    ..
                }) => {
                    out.push(ParamSlot {
                        param: weights,
                        grad: grad_weights,
                    });
                    out.push(ParamSlot {
                        param: bias,
                        grad: grad_bias,
                    });
                }
                Layer::BatchNorm(BatchNormLayer {
                    gamma,
                    beta,
                    grad_gamma,
                    grad_beta,
                    ..
                }) => {
                    out.push(ParamSlot {
                        param: gamma,
                        grad: grad_gamma,
                    });
                    out.push(ParamSlot {
                        param: beta,
                        grad: grad_beta,
                    });
                }
                Layer::Dropout(_) | Layer::Activation(_) => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.weights().len() + d.bias().len(),
                Layer::BatchNorm(b) => 2 * b.dim(),
                _ => 0,
            })
            .sum()
    }
}
