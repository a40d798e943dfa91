//! Batch NMF by Lee–Seung multiplicative updates, and per-day code matrices
//! against a fixed dictionary.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::{
    ensure_nonnegative, nnls_columns, random_positive, seeded_rng, Mat, SolverConfig,
};

/// Dictionary `W` (terms × topics) and codes `H` (topics × documents).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfModel {
    pub w: Mat,
    pub h: Mat,
    /// `‖X − WH‖²_F` at initialization and after every iteration.
    pub objective_trace: Vec<f64>,
    pub config: SolverConfig,
    pub rank: usize,
}

impl NmfModel {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn rel_error(&self, x: ArrayView2<f64>) -> Result<f64> {
        rel_error(x, self.w.view(), self.h.view())
    }

    /// `W` with unit-ℓ₁ columns and the compensating scale moved into `H`.
    /// Used for reporting only; the product `WH` is unchanged.
    pub fn normalized(&self) -> (Mat, Mat) {
        l1_normalize_columns(&self.w, &self.h)
    }
}

pub(crate) fn l1_normalize_columns(w: &Mat, h: &Mat) -> (Mat, Mat) {
    let mut w = w.clone();
    let mut h = h.clone();
    for k in 0..w.ncols() {
        let s: f64 = w.column(k).sum();
        if s > 0.0 {
            w.column_mut(k).mapv_inplace(|v| v / s);
            h.row_mut(k).mapv_inplace(|v| v * s);
        }
    }
    (w, h)
}

/// `‖X − WH‖²_F`
pub fn objective(x: ArrayView2<f64>, w: ArrayView2<f64>, h: ArrayView2<f64>) -> f64 {
    let diff = &x - &w.dot(&h);
    diff.iter().map(|v| v * v).sum()
}

/// `‖X − WH‖_F / max(‖X‖_F, ε)`
pub fn rel_error(x: ArrayView2<f64>, w: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<f64> {
    if w.nrows() != x.nrows() || h.ncols() != x.ncols() || w.ncols() != h.nrows() {
        return Err(Error::shape(format!(
            "X {:?} vs W {:?} · H {:?}",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(objective(x, w, h).sqrt() / x_norm.max(1e-12))
}

/// Fits `X ≈ WH` from a seeded uniform(0, 1] start.
pub fn fit_nmf(x: ArrayView2<f64>, rank: usize, config: &SolverConfig) -> Result<NmfModel> {
    if rank == 0 {
        return Err(Error::invalid("rank must be ≥ 1"));
    }
    let (m, n) = x.dim();
    if rank >= m.min(n) {
        log::warn!("rank {rank} is not below min({m}, {n}); the factorization is not low-rank");
    }
    let mut rng = seeded_rng(config.seed);
    let w = random_positive(m, rank, &mut rng);
    let h = random_positive(rank, n, &mut rng);
    fit_nmf_from(x, w, h, config)
}

/// Multiplicative updates from explicit starting factors:
/// `H ← H ⊙ (WᵀX) / (WᵀWH + ε)`, then `W ← W ⊙ (XHᵀ) / (WHHᵀ + ε)`,
/// until the relative objective change drops below `config.tolerance`.
pub fn fit_nmf_from(x: ArrayView2<f64>, mut w: Mat, mut h: Mat, config: &SolverConfig) -> Result<NmfModel> {
    config.validate()?;
    ensure_nonnegative(x.iter(), "data matrix")?;
    ensure_nonnegative(w.iter(), "initial W")?;
    ensure_nonnegative(h.iter(), "initial H")?;
    let rank = w.ncols();
    if w.nrows() != x.nrows() || h.ncols() != x.ncols() || h.nrows() != rank {
        return Err(Error::shape(format!(
            "X {:?} vs W {:?} · H {:?}",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    let eps = config.epsilon;
    let mut trace = vec![objective(x, w.view(), h.view())];
    for _ in 0..config.max_iterations {
        let numer = w.t().dot(&x);
        let denom = w.t().dot(&w).dot(&h);
        ndarray::Zip::from(&mut h)
            .and(&numer)
            .and(&denom)
            .for_each(|h, &a, &b| *h *= a / (b + eps));

        let numer = x.dot(&h.t());
        let denom = w.dot(&h.dot(&h.t()));
        ndarray::Zip::from(&mut w)
            .and(&numer)
            .and(&denom)
            .for_each(|w, &a, &b| *w *= a / (b + eps));

        let prev = *trace.last().expect("trace is non-empty");
        let cur = objective(x, w.view(), h.view());
        trace.push(cur);
        let scale = prev.max(cur);
        if scale == 0.0 || (prev - cur).abs() / scale < config.tolerance {
            break;
        }
    }
    Ok(NmfModel {
        w,
        h,
        objective_trace: trace,
        config: *config,
        rank,
    })
}

/// Codes of `x` against a fixed dictionary: column-wise nonnegative least squares.
pub fn code(x: ArrayView2<f64>, w: ArrayView2<f64>, config: &SolverConfig) -> Result<Mat> {
    if w.nrows() != x.nrows() {
        return Err(Error::shape(format!(
            "dictionary has {} rows, data has {}",
            w.nrows(),
            x.nrows()
        )));
    }
    ensure_nonnegative(w.iter(), "dictionary")?;
    if x.ncols() == 0 {
        return Ok(Array2::zeros((w.ncols(), 0)));
    }
    nnls_columns(w, x, config)
}

/// Per-day code matrices: re-fits each day's documents against the global `w`.
pub fn daily_codes<'a, I>(days: I, w: ArrayView2<f64>, config: &SolverConfig) -> Result<Vec<Mat>>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
{
    days.into_iter().map(|x| code(x, w, config)).collect()
}

/// Splits a day-major concatenated code matrix back into per-day blocks.
pub fn split_columns(h: &Mat, sizes: &[usize]) -> Result<Vec<Mat>> {
    if sizes.iter().sum::<usize>() != h.ncols() {
        return Err(Error::shape("day sizes do not add up to the code columns"));
    }
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&len| {
            let block = h.slice_axis(Axis(1), (start..start + len).into()).to_owned();
            start += len;
            block
        })
        .collect())
}
