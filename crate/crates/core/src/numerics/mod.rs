//! Dense linear algebra, parameter tensors with Adam state, and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod param;

pub use gradcheck::{grad_check, GradCheckReport, Parameterized};
pub use matrix::{
    axpy, dense_matmul, dot, elementwise, relu, sigmoid, softmax_in_place, softmax_rows,
    Activation, DenseMatrix,
};
pub use param::{adam_step, AdamConfig, AdamMoments, ParamTensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used throughout.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard deviation of the Gaussian parameter initializer.
pub const INIT_STD: f64 = 0.1;
