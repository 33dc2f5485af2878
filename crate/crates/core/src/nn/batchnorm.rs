use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-column batch normalization with learned scale `gamma` and shift `beta`.
///
/// Training normalizes with the batch mean and biased batch variance and
/// updates `running = momentum·running + (1 − momentum)·batch`. Evaluation
/// uses the running statistics only.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub(crate) gamma: Matrix,
    pub(crate) beta: Matrix,
    pub(crate) grad_gamma: Matrix,
    pub(crate) grad_beta: Matrix,
    pub(crate) running_mean: Matrix,
    pub(crate) running_var: Matrix,
    pub(crate) epsilon: f64,
    pub(crate) momentum: f64,
    frozen: bool,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNormLayer {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, dim, 1.0).expect("finite"),
            beta: Matrix::zeros(1, dim),
            grad_gamma: Matrix::zeros(1, dim),
            grad_beta: Matrix::zeros(1, dim),
            running_mean: Matrix::zeros(1, dim),
            running_var: Matrix::filled(1, dim, 1.0).expect("finite"),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            frozen: false,
            cache: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        gamma: Matrix,
        beta: Matrix,
        running_mean: Matrix,
        running_var: Matrix,
        epsilon: f64,
        momentum: f64,
    ) -> Result<Self> {
        let dim = gamma.cols();
        for m in [&gamma, &beta, &running_mean, &running_var] {
            if m.shape() != (1, dim) {
                return Err(Error::Shape {
                    op: "BatchNormLayer::from_parts",
                    left: (1, dim),
                    right: m.shape(),
                });
            }
        }
        if running_var.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::domain("running variance must be non-negative"));
        }
        if !(epsilon > 0.0) || !(0.0..=1.0).contains(&momentum) {
            return Err(Error::domain(format!(
                "batchnorm epsilon {epsilon} / momentum {momentum} out of range"
            )));
        }
        Ok(Self {
            grad_gamma: Matrix::zeros(1, dim),
            grad_beta: Matrix::zeros(1, dim),
            gamma,
            beta,
            running_mean,
            running_var,
            epsilon,
            momentum,
            frozen: false,
            cache: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.cols()
    }

    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn beta(&self) -> &Matrix {
        &self.beta
    }

    pub fn running_mean(&self) -> &Matrix {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Matrix {
        &self.running_var
    }

    pub fn grad_gamma(&self) -> &Matrix {
        &self.grad_gamma
    }

    pub fn grad_beta(&self) -> &Matrix {
        &self.grad_beta
    }

    pub fn set_gamma_beta(&mut self, gamma: Matrix, beta: Matrix) -> Result<()> {
        if gamma.shape() != (1, self.dim()) || beta.shape() != (1, self.dim()) {
            return Err(Error::Shape {
                op: "BatchNormLayer::set_gamma_beta",
                left: gamma.shape(),
                right: beta.shape(),
            });
        }
        self.gamma = gamma;
        self.beta = beta;
        Ok(())
    }

    /// With frozen statistics, training forwards normalize with the running
    /// statistics and leave them untouched; backward is then the gradient of
    /// that fixed affine map.
    pub fn freeze_statistics(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Shape {
                op: "batchnorm_forward",
                left: x.shape(),
                right: (1, self.dim()),
            });
        }
        Ok(())
    }

    fn running_inv_std(&self) -> Vec<f64> {
        self.running_var
            .as_slice()
            .iter()
            .map(|&v| 1.0 / (v + self.epsilon).sqrt())
            .collect()
    }

    fn normalize(&self, x: &Matrix, mean: &[f64], inv_std: &[f64]) -> Matrix {
        let d = self.dim();
        let mut out = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                out.push((v - mean[c]) * inv_std[c]);
            }
        }
        Matrix::from_parts(x.rows(), d, out)
    }

    fn scale_shift(&self, normalized: &Matrix) -> Result<Matrix> {
        let scaled = normalized.broadcast_rows(&self.gamma, |v, g| v * g)?;
        scaled.broadcast_rows(&self.beta, |v, b| v + b)
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let inv_std = self.running_inv_std();
        let normalized = self.normalize(x, self.running_mean.as_slice(), &inv_std);
        self.scale_shift(&normalized)
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        if self.frozen {
            let inv_std = self.running_inv_std();
            let normalized = self.normalize(x, self.running_mean.as_slice(), &inv_std);
            let out = self.scale_shift(&normalized)?;
            self.cache = Some(BnCache {
                normalized,
                inv_std,
                batch_stats: false,
            });
            return Ok(out);
        }
        let n = x.rows();
        if n < 2 {
            return Err(Error::domain(format!(
                "batch normalization in training mode needs at least 2 rows, got {n}"
            )));
        }
        let d = self.dim();
        let mean: Vec<f64> = x
            .column_sums()
            .as_slice()
            .iter()
            .map(|s| s / n as f64)
            .collect();
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (c, &v) in x.row(r).iter().enumerate() {
                let dv = v - mean[c];
                var[c] += dv * dv;
            }
        }
        for v in var.iter_mut() {
            *v /= n as f64;
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let normalized = self.normalize(x, &mean, &inv_std);
        let out = self.scale_shift(&normalized)?;

        let m = self.momentum;
        for (rm, bm) in self.running_mean.data_mut().iter_mut().zip(&mean) {
            *rm = m * *rm + (1.0 - m) * bm;
        }
        for (rv, bv) in self.running_var.data_mut().iter_mut().zip(&var) {
            *rv = m * *rv + (1.0 - m) * bv;
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std,
            batch_stats: true,
        });
        Ok(out)
    }

    /// Exact gradient of the training transform (batch statistics are
    /// differentiated through). Accumulates `gamma`/`beta` gradients.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("batchnorm backward without a cached forward"))?;
        if grad_out.shape() != cache.normalized.shape() {
            return Err(Error::Shape {
                op: "batchnorm_backward",
                left: grad_out.shape(),
                right: cache.normalized.shape(),
            });
        }
        let (n, d) = grad_out.shape();
        let gamma = self.gamma.as_slice();

        let mut sum_g = vec![0.0; d];
        let mut sum_g_xhat = vec![0.0; d];
        for r in 0..n {
            let g = grad_out.row(r);
            let xh = cache.normalized.row(r);
            for c in 0..d {
                sum_g[c] += g[c];
                sum_g_xhat[c] += g[c] * xh[c];
            }
        }
        self.grad_beta
            .add_assign(&Matrix::from_parts(1, d, sum_g.clone()))?;
        self.grad_gamma
            .add_assign(&Matrix::from_parts(1, d, sum_g_xhat.clone()))?;

        let mut out = Vec::with_capacity(n * d);
        let nf = n as f64;
        for r in 0..n {
            let g = grad_out.row(r);
            let xh = cache.normalized.row(r);
            for c in 0..d {
                let scale = gamma[c] * cache.inv_std[c];
                let v = if cache.batch_stats {
                    scale * (g[c] - sum_g[c] / nf - xh[c] * sum_g_xhat[c] / nf)
                } else {
                    scale * g[c]
                };
                out.push(v);
            }
        }
        Matrix::new(n, d, out)
    }

    pub fn zero_grads(&mut self) {
        self.grad_gamma = Matrix::zeros(1, self.dim());
        self.grad_beta = Matrix::zeros(1, self.dim());
    }
}
