//! Datasets: MNIST IDX ingestion, synthetic Gaussian blobs and deterministic
//! shuffled batching.

pub mod idx;

pub use idx::{find_mnist_files, load_mnist_dir, load_mnist_idx, write_mnist_idx, MnistSplit};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};

/// Feature matrix (one sample per row) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::domain(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// First `n` samples (or all of them when `n ≥ len`).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features.slice_rows(0, n),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Shuffles once with `seed`, then carves the last `fraction` of the
    /// shuffled order off as a held-out set. `fraction == 0` returns the
    /// original dataset untouched and no held-out part.
    pub fn split_tail(&self, fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::domain(format!(
                "held-out fraction {fraction} outside [0, 1)"
            )));
        }
        if fraction == 0.0 {
            return Ok((self.clone(), None));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        RngStream::new(seed).shuffle(&mut order);
        let held = ((self.len() as f64) * fraction).round() as usize;
        let held = held.clamp(1, self.len().saturating_sub(1).max(1));
        let cut = self.len() - held;
        Ok((self.select(&order[..cut]), Some(self.select(&order[cut..]))))
    }
}

/// Gaussian clusters, one per class, with centers drawn from `seed` at
/// radius ~3 and per-point noise of standard deviation `spread`. Labels
/// cycle through the classes so the set is balanced.
pub fn synthetic_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::domain(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if n < classes {
        return Err(Error::domain(format!(
            "need at least one sample per class ({n} < {classes})"
        )));
    }
    if dim == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::domain(format!(
            "spread must be non-negative, got {spread}"
        )));
    }
    let root = RngStream::new(seed);
    let centers = root.split(0).gaussian_init(classes, dim, 3.0)?;
    let mut noise = root.split(1);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            features.push(centers.get(c, j) + spread * noise.standard_normal());
        }
        labels.push(c);
    }
    Dataset::new(Matrix::new(n, dim, features)?, labels, classes)
}

/// Mini-batch schedule: a fresh permutation per epoch derived from
/// `(seed, epoch)`; the last short batch is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::domain("batch size must be at least 1"));
        }
        Ok(Self { batch_size, seed })
    }

    pub fn permutation(&self, n: usize, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(self.seed).split(epoch).shuffle(&mut order);
        order
    }

    pub fn batches<'a>(&self, dataset: &'a Dataset, epoch: u64) -> Batches<'a> {
        Batches {
            dataset,
            order: self.permutation(dataset.len(), epoch),
            batch_size: self.batch_size,
            pos: 0,
        }
    }
}

pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Matrix, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let x = self.dataset.features.select_rows(idx);
        let y = idx.iter().map(|&i| self.dataset.labels[i]).collect();
        Some((x, y))
    }
}
