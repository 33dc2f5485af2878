use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};

/// Multiplies inputs by a Bernoulli keep/drop mask during training and by
/// `1 − p_drop` at evaluation (non-inverted dropout).
///
/// By default one mask entry is drawn per input node and shared by every row
/// of the batch; `per_sample` draws an independent mask row per sample.
#[derive(Clone, Debug)]
pub struct DropoutLayer {
    p_drop: f64,
    per_sample: bool,
    mask: Option<Matrix>,
    pinned: Option<Matrix>,
}

impl DropoutLayer {
    pub fn new(p_drop: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_drop) {
            return Err(Error::domain(format!(
                "drop probability {p_drop} outside [0, 1]"
            )));
        }
        Ok(Self {
            p_drop,
            per_sample: false,
            mask: None,
            pinned: None,
        })
    }

    pub fn with_per_sample_masks(mut self, per_sample: bool) -> Self {
        self.per_sample = per_sample;
        self
    }

    pub fn p_drop(&self) -> f64 {
        self.p_drop
    }

    pub fn per_sample(&self) -> bool {
        self.per_sample
    }

    /// Mask used by the most recent training forward.
    pub fn current_mask(&self) -> Option<&Matrix> {
        self.mask.as_ref()
    }

    /// Forces every subsequent training forward to reuse `mask` (a `1 × n`
    /// row or a full `batch × n` matrix) instead of drawing a fresh one.
    pub fn pin_mask(&mut self, mask: Matrix) -> Result<()> {
        if mask.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::domain("dropout mask entries must be 0 or 1"));
        }
        self.pinned = Some(mask);
        Ok(())
    }

    pub fn unpin_mask(&mut self) {
        self.pinned = None;
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        let keep = 1.0 - self.p_drop;
        x.map(|v| v * keep)
    }

    pub fn forward_train(&mut self, x: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
        let mask = match &self.pinned {
            Some(m) => m.clone(),
            None if self.per_sample => rng.bernoulli_mask_rows(self.p_drop, x.rows(), x.cols())?,
            None => rng.bernoulli_mask(self.p_drop, x.cols())?,
        };
        let out = apply_mask(x, &mask)?;
        self.mask = Some(mask);
        Ok(out)
    }

    /// Masks the upstream gradient with the forward's mask. Consumes it.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::state("dropout backward without a cached mask"))?;
        apply_mask(grad_out, &mask)
    }
}

fn apply_mask(x: &Matrix, mask: &Matrix) -> Result<Matrix> {
    if mask.rows() == 1 {
        x.broadcast_rows(mask, |v, m| v * m)
    } else {
        x.hadamard(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Matrix {
        Matrix::row_vector(v).unwrap()
    }

    #[test]
    fn zero_drop_is_identity_in_training() {
        let mut layer = DropoutLayer::new(0.0).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.5], [0.1, 0.2, 0.3]]).unwrap();
        let y = layer.forward_train(&x, &mut RngStream::new(3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn eval_rescales_by_keep_probability() {
        let layer = DropoutLayer::new(0.5).unwrap();
        let y = layer.forward_eval(&row(&[4.0, 2.0])).unwrap();
        assert_eq!(y.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn eval_draws_nothing() {
        let layer = DropoutLayer::new(0.5).unwrap();
        layer.forward_eval(&row(&[4.0, 2.0])).unwrap();
        assert!(layer.current_mask().is_none());
    }

    #[test]
    fn pinned_mask_application() {
        let mut layer = DropoutLayer::new(0.5).unwrap();
        layer.pin_mask(row(&[1.0, 0.0])).unwrap();
        let y = layer
            .forward_train(&row(&[4.0, 2.0]), &mut RngStream::new(0))
            .unwrap();
        assert_eq!(y.as_slice(), &[4.0, 0.0]);
        let g = layer.backward(&row(&[3.0, 5.0])).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 0.0]);
    }

    #[test]
    fn all_ones_and_all_zeros_masks() {
        let mut layer = DropoutLayer::new(0.5).unwrap();
        let mut rng = RngStream::new(0);
        layer.pin_mask(row(&[1.0, 1.0])).unwrap();
        layer.forward_train(&row(&[1.0, 1.0]), &mut rng).unwrap();
        assert_eq!(
            layer.backward(&row(&[3.0, 5.0])).unwrap().as_slice(),
            &[3.0, 5.0]
        );
        layer.pin_mask(row(&[0.0, 0.0])).unwrap();
        layer.forward_train(&row(&[1.0, 1.0]), &mut rng).unwrap();
        assert_eq!(
            layer.backward(&row(&[3.0, 5.0])).unwrap().as_slice(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn shared_mask_across_batch_rows() {
        let mut layer = DropoutLayer::new(0.5).unwrap();
        let x = Matrix::filled(4, 64, 1.0).unwrap();
        let y = layer.forward_train(&x, &mut RngStream::new(11)).unwrap();
        for r in 1..4 {
            assert_eq!(y.row(r), y.row(0));
        }
    }

    #[test]
    fn backward_without_forward() {
        let mut layer = DropoutLayer::new(0.5).unwrap();
        assert!(matches!(layer.backward(&row(&[1.0])), Err(Error::State(_))));
    }

    #[test]
    fn rejects_bad_probability_and_mask() {
        assert!(DropoutLayer::new(1.2).is_err());
        let mut layer = DropoutLayer::new(0.5).unwrap();
        assert!(layer.pin_mask(row(&[0.5])).is_err());
    }
}
