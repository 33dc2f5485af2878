//! Scalar nonlinearities and gradient-accelerated activations (GAAF).
//!
//! A GAAF activation adds a tiny sawtooth `g(x)` (amplitude `0.5 / K`, slope 1
//! almost everywhere) scaled by a shape envelope `s(x) ∈ [0, 1]` to a base
//! nonlinearity `φ`:
//!
//! ```text
//! forward:   φ(x) + g(x)·s(x)
//! backward:  grad · (φ'(x) + s(x))
//! ```
//!
//! The backward is a surrogate: `g'` is taken as exactly 1 everywhere
//! (breakpoints included) and the `g·s'` term is dropped. It is a definition,
//! not an approximation of the forward's local slope, so it must not be
//! checked with finite differences taken at a step much larger than `1/K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FREQUENCY: f64 = 10_000.0;
pub const DEFAULT_BUMP_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
    Relu,
}

impl ActivationKind {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Relu => x.max(0.0),
        }
    }

    /// Analytic derivative. ReLU's derivative at exactly 0 is 0.
    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Value and analytic derivative from a single evaluation; bit-identical
    /// to calling [`eval`](Self::eval) and [`deriv`](Self::deriv) separately.
    #[inline]
    pub fn eval_with_deriv(self, x: f64) -> (f64, f64) {
        match self {
            ActivationKind::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            ActivationKind::Relu => (x.max(0.0), if x > 0.0 { 1.0 } else { 0.0 }),
        }
    }

    /// Shape function conventionally paired with this base activation.
    pub fn default_shape(self) -> ShapeKind {
        match self {
            ActivationKind::Tanh | ActivationKind::Sigmoid => ShapeKind::GaussianBump {
                sigma: DEFAULT_BUMP_SIGMA,
            },
            ActivationKind::Relu => ShapeKind::ShiftedSigmoid {
                center: 0.0,
                temperature: 1.0,
            },
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient acceleration sawtooth `(xK − ⌊xK⌋ − 0.5) / K`.
///
/// Range is `[−0.5/K, 0.5/K)`, period `1/K`. Uses the mathematical floor, so
/// negative inputs continue the same sawtooth.
#[inline]
pub fn gaf_eval(x: f64, k: f64) -> f64 {
    let t = x * k;
    (t - t.floor() - 0.5) / k
}

/// Envelope that localizes gradient acceleration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeKind {
    /// `exp(−x² / (2σ²))`, peak 1 at the origin. Used with tanh.
    GaussianBump { sigma: f64 },
    /// `1 / (1 + exp((x − center) / temperature))`, decreasing from 1 to 0.
    /// Used with ReLU.
    ShiftedSigmoid { center: f64, temperature: f64 },
    /// Fixed value; `Constant { value: 0.0 }` switches GAAF off exactly.
    Constant { value: f64 },
}

impl ShapeKind {
    pub fn gaussian_bump(sigma: f64) -> Result<Self> {
        let s = ShapeKind::GaussianBump { sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn shifted_sigmoid(center: f64, temperature: f64) -> Result<Self> {
        let s = ShapeKind::ShiftedSigmoid {
            center,
            temperature,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(value: f64) -> Result<Self> {
        let s = ShapeKind::Constant { value };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ShapeKind::GaussianBump { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::domain(format!("gaussian bump sigma must be positive, got {sigma}")),
            ),
            ShapeKind::ShiftedSigmoid {
                center,
                temperature,
            } if !(temperature > 0.0 && temperature.is_finite() && center.is_finite()) => {
                Err(Error::domain(format!(
                    "shifted sigmoid needs finite center and positive temperature, got center {center}, temperature {temperature}"
                )))
            }
            ShapeKind::Constant { value } if !(0.0..=1.0).contains(&value) => Err(Error::domain(
                format!("constant shape value must lie in [0, 1], got {value}"),
            )),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ShapeKind::GaussianBump { sigma } => (-(x * x) / (2.0 * sigma * sigma)).exp(),
            ShapeKind::ShiftedSigmoid {
                center,
                temperature,
            } => 1.0 / (1.0 + ((x - center) / temperature).exp()),
            ShapeKind::Constant { value } => value,
        }
    }
}

/// Base activation, frequency constant and shape envelope of a GAAF unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaafSpec {
    pub base: ActivationKind,
    #[serde(default = "default_frequency")]
    pub k: f64,
    pub shape: ShapeKind,
}

fn default_frequency() -> f64 {
    DEFAULT_FREQUENCY
}

impl GaafSpec {
    pub fn new(base: ActivationKind, k: f64, shape: ShapeKind) -> Result<Self> {
        let spec = Self { base, k, shape };
        spec.validate()?;
        Ok(spec)
    }

    /// Defaults: `K = 10⁴` with the base activation's conventional shape.
    pub fn with_defaults(base: ActivationKind) -> Self {
        Self {
            base,
            k: DEFAULT_FREQUENCY,
            shape: base.default_shape(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::domain(format!(
                "frequency constant K must be positive, got {}",
                self.k
            )));
        }
        self.shape.validate()
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        self.base.eval(x) + gaf_eval(x, self.k) * self.shape.eval(x)
    }

    /// Surrogate local derivative `φ'(x) + s(x)`.
    #[inline]
    pub fn surrogate_deriv(&self, x: f64) -> f64 {
        self.base.deriv(x) + self.shape.eval(x)
    }

    #[inline]
    pub fn backward(&self, x: f64, grad_out: f64) -> f64 {
        grad_out * self.surrogate_deriv(x)
    }

    /// `(forward(x), surrogate_deriv(x))` sharing the base and shape
    /// evaluations.
    #[inline]
    pub fn forward_with_deriv(&self, x: f64) -> (f64, f64) {
        let (phi, dphi) = self.base.eval_with_deriv(x);
        let s = self.shape.eval(x);
        (phi + gaf_eval(x, self.k) * s, dphi + s)
    }
}

/// Nonlinearity used by an activation layer: a plain base function or its
/// GAAF-augmented version.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Plain(ActivationKind),
    Gaaf(GaafSpec),
}

impl Activation {
    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        match self {
            Activation::Plain(kind) => kind.eval(x),
            Activation::Gaaf(spec) => spec.forward(x),
        }
    }

    /// Local derivative used by backprop (surrogate for GAAF).
    #[inline]
    pub fn local_grad(&self, x: f64) -> f64 {
        match self {
            Activation::Plain(kind) => kind.deriv(x),
            Activation::Gaaf(spec) => spec.surrogate_deriv(x),
        }
    }

    /// `(forward(x), local_grad(x))` in one pass.
    #[inline]
    pub fn forward_with_grad(&self, x: f64) -> (f64, f64) {
        match self {
            Activation::Plain(kind) => kind.eval_with_deriv(x),
            Activation::Gaaf(spec) => spec.forward_with_deriv(x),
        }
    }

    pub fn base(&self) -> ActivationKind {
        match self {
            Activation::Plain(kind) => *kind,
            Activation::Gaaf(spec) => spec.base,
        }
    }
}
