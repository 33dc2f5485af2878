//! Binary model checkpoints.
//!
//! All integers are little-endian; reals are IEEE-754 binary64 little-endian,
//! so a save/load round trip reproduces every parameter bit for bit.
//!
//! ```text
//! magic      8 bytes   b"GAAFNET\0"
//! version    u32       1
//! n_layers   u32
//! layer*     tag u8, then a tag-specific payload:
//!   1 dense      in u32, out u32, weights in·out f64 (row-major, in × out),
//!                bias out f64
//!   2 dropout    p_drop f64, per_sample u8 (0/1)
//!   3 batchnorm  dim u32, epsilon f64, momentum f64,
//!                gamma, beta, running_mean, running_var (dim f64 each)
//!   4 activation base u8 (0 tanh, 1 sigmoid, 2 relu), gaaf u8 (0/1)
//!                if gaaf: K f64, shape u8, shape parameters:
//!                  0 gaussian bump     sigma f64
//!                  1 shifted sigmoid   center f64, temperature f64
//!                  2 constant          value f64
//! ```
//!
//! Transient state (caches, masks, gradients) is not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::activations::{Activation, ActivationKind, GaafSpec, ShapeKind};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

use super::{ActivationLayer, BatchNormLayer, DenseLayer, DropoutLayer, Layer, Network};

pub const MAGIC: &[u8; 8] = b"GAAFNET\0";
pub const VERSION: u32 = 1;

const TAG_DENSE: u8 = 1;
const TAG_DROPOUT: u8 = 2;
const TAG_BATCHNORM: u8 = 3;
const TAG_ACTIVATION: u8 = 4;

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, net.layers().len() as u32);
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                put_u32(&mut out, d.inputs() as u32);
                put_u32(&mut out, d.outputs() as u32);
                put_reals(&mut out, d.weights().as_slice());
                put_reals(&mut out, d.bias().as_slice());
            }
            Layer::Dropout(d) => {
                out.push(TAG_DROPOUT);
                put_reals(&mut out, &[d.p_drop()]);
                out.push(d.per_sample() as u8);
            }
            Layer::BatchNorm(b) => {
                out.push(TAG_BATCHNORM);
                put_u32(&mut out, b.dim() as u32);
                put_reals(&mut out, &[b.epsilon, b.momentum]);
                put_reals(&mut out, b.gamma().as_slice());
                put_reals(&mut out, b.beta().as_slice());
                put_reals(&mut out, b.running_mean().as_slice());
                put_reals(&mut out, b.running_var().as_slice());
            }
            Layer::Activation(a) => {
                out.push(TAG_ACTIVATION);
                let (base, gaaf) = match a.activation() {
                    Activation::Plain(kind) => (*kind, None),
                    Activation::Gaaf(spec) => (spec.base, Some(spec)),
                };
                out.push(match base {
                    ActivationKind::Tanh => 0,
                    ActivationKind::Sigmoid => 1,
                    ActivationKind::Relu => 2,
                });
                match gaaf {
                    None => out.push(0),
                    Some(spec) => {
                        out.push(1);
                        put_reals(&mut out, &[spec.k]);
                        match spec.shape {
                            ShapeKind::GaussianBump { sigma } => {
                                out.push(0);
                                put_reals(&mut out, &[sigma]);
                            }
                            ShapeKind::ShiftedSigmoid {
                                center,
                                temperature,
                            } => {
                                out.push(1);
                                put_reals(&mut out, &[center, temperature]);
                            }
                            ShapeKind::Constant { value } => {
                                out.push(2);
                                put_reals(&mut out, &[value]);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Network, String> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic, not a checkpoint".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let layer = match r.u8()? {
            TAG_DENSE => {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                let w = r.matrix(inputs, outputs)?;
                let b = r.matrix(1, outputs)?;
                Layer::Dense(DenseLayer::from_params(w, b).map_err(|e| e.to_string())?)
            }
            TAG_DROPOUT => {
                let p = r.f64()?;
                let per_sample = r.flag()?;
                Layer::Dropout(
                    DropoutLayer::new(p)
                        .map_err(|e| e.to_string())?
                        .with_per_sample_masks(per_sample),
                )
            }
            TAG_BATCHNORM => {
                let dim = r.u32()? as usize;
                let eps = r.f64()?;
                let momentum = r.f64()?;
                let gamma = r.matrix(1, dim)?;
                let beta = r.matrix(1, dim)?;
                let mean = r.matrix(1, dim)?;
                let var = r.matrix(1, dim)?;
                Layer::BatchNorm(
                    BatchNormLayer::from_parts(gamma, beta, mean, var, eps, momentum)
                        .map_err(|e| e.to_string())?,
                )
            }
            TAG_ACTIVATION => {
                let base = match r.u8()? {
                    0 => ActivationKind::Tanh,
                    1 => ActivationKind::Sigmoid,
                    2 => ActivationKind::Relu,
                    other => return Err(format!("layer {i}: unknown activation {other}")),
                };
                let act = if r.flag()? {
                    let k = r.f64()?;
                    let shape = match r.u8()? {
                        0 => ShapeKind::GaussianBump { sigma: r.f64()? },
                        1 => ShapeKind::ShiftedSigmoid {
                            center: r.f64()?,
                            temperature: r.f64()?,
                        },
                        2 => ShapeKind::Constant { value: r.f64()? },
                        other => return Err(format!("layer {i}: unknown shape {other}")),
                    };
                    Activation::Gaaf(GaafSpec::new(base, k, shape).map_err(|e| e.to_string())?)
                } else {
                    Activation::Plain(base)
                };
                Layer::Activation(ActivationLayer::new(act))
            }
            other => return Err(format!("layer {i}: unknown tag {other}")),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Network::new(layers).map_err(|e| e.to_string())
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(net))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_reals(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> std::result::Result<bool, String> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format!("invalid flag byte {other}")),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> std::result::Result<Matrix, String> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| "matrix size overflow".to_string())?;
        let raw = self.take(n.checked_mul(8).ok_or("matrix size overflow")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::new(rows, cols, data).map_err(|e| e.to_string())
    }
}
