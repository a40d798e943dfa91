//! Dense matrix / 3-tensor kernels and the two nonnegative convex solvers the
//! model modules build on.
//!
//! Matrices are row-major `ndarray` arrays. Tensors are indexed `[i, j, k]`
//! with dims `(n1, n2, n3)`; unfoldings follow the Kolda–Bader convention.

mod kernels;
mod solvers;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kernels::{
    cp_inner_products, cp_reconstruct, fold, frobenius_sq, hadamard, khatri_rao, mode_product,
    mttkrp, mttkrp_materialized, unfold, Mode,
};
pub use solvers::{
    kkt_residual, lasso_objective, nnls, nnls_columns, nnls_objective, nonneg_lasso,
    GramProblem,
};

pub type Mat = Array2<f64>;
pub type Tensor3 = Array3<f64>;

/// Iteration budget, stopping rule, and seed shared by every iterative routine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the relative objective change drops below this.
    pub tolerance: f64,
    /// Division guard added to multiplicative-update denominators.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-5,
            epsilon: 1e-12,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn new(max_iterations: usize, tolerance: f64) -> Self {
        Self {
            max_iterations,
            tolerance,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }

    /// Configuration used for the per-column subproblems inside model fits.
    pub(crate) fn inner() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-9,
            ..Self::default()
        }
    }
}

/// Seeded uniform(0, 1] matrix. Zero is excluded so multiplicative updates
/// never start in an absorbing state.
pub fn random_positive(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.random::<f64>())
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn ensure_finite<'a, I>(values: I, what: &'static str) -> Result<()>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_nonnegative<'a, I>(values: I, what: &'static str) -> Result<()>
where
    I: IntoIterator<Item = &'a f64>,
{
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(what));
        }
        if v < 0.0 {
            return Err(Error::Negative(what));
        }
    }
    Ok(())
}
