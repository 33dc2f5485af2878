//! Dense `f64` matrices and seeded, splittable random streams.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::{mix64, RngStream};
