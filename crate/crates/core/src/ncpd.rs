//! Batch nonnegative CP decomposition by multiplicative updates.

use ndarray::{Array2, ArrayView3, Axis, Zip};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::{
    cp_reconstruct, ensure_nonnegative, mttkrp, random_positive, seeded_rng, Mat, Mode,
    SolverConfig, Tensor3,
};

/// Factor matrices of a rank-r CP model: time `A` (n1 × r), term `B`
/// (n2 × r) and document `C` (n3 × r).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpFactors {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

impl CpFactors {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let r = a.ncols();
        if b.ncols() != r || c.ncols() != r {
            return Err(Error::shape(format!(
                "factor ranks differ: {}, {}, {}",
                r,
                b.ncols(),
                c.ncols()
            )));
        }
        Ok(Self { a, b, c })
    }

    /// Seeded uniform(0, 1] factors, drawn in A, B, C order.
    pub fn random(dims: (usize, usize, usize), rank: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: random_positive(dims.0, rank, rng),
            b: random_positive(dims.1, rank, rng),
            c: random_positive(dims.2, rank, rng),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    pub fn reconstruct(&self) -> Tensor3 {
        cp_reconstruct(self.a.view(), self.b.view(), self.c.view(), None)
            .expect("factor ranks checked at construction")
    }

    /// Same components, reordered: new column `t` is old column `perm[t]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            a: self.a.select(Axis(1), perm),
            b: self.b.select(Axis(1), perm),
            c: self.c.select(Axis(1), perm),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.a.iter().chain(self.b.iter()).chain(self.c.iter()).all(|&v| v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpModel {
    pub factors: CpFactors,
    /// `‖X − Σ a_k⊗b_k⊗c_k‖_F` at initialization and after every sweep.
    pub objective_trace: Vec<f64>,
    pub rank: usize,
    pub config: SolverConfig,
}

impl CpModel {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Defaults for batch NCPD fits.
pub fn default_config() -> SolverConfig {
    SolverConfig::new(2000, 1e-6)
}

/// `‖X − Σ a_k⊗b_k⊗c_k‖_F`
pub fn reconstruction_error(x: ArrayView3<f64>, factors: &CpFactors) -> Result<f64> {
    if x.dim() != factors.dims() {
        return Err(Error::shape(format!(
            "tensor {:?} vs factors {:?}",
            x.dim(),
            factors.dims()
        )));
    }
    let recon = factors.reconstruct();
    Ok(Zip::from(&x)
        .and(&recon)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
        .sqrt())
}

pub fn fit_ncpd(x: ArrayView3<f64>, rank: usize, config: &SolverConfig) -> Result<CpModel> {
    if rank == 0 {
        return Err(Error::invalid("rank must be ≥ 1"));
    }
    let mut rng = seeded_rng(config.seed);
    let init = CpFactors::random(x.dim(), rank, &mut rng);
    fit_ncpd_from(x, init, config)
}

/// Cyclic multiplicative updates, e.g. for A:
/// `A ← A ⊙ (X₍₁₎·(C ⊙ B)) / (A·((CᵀC) ∗ (BᵀB)) + ε)`, then B, then C.
pub fn fit_ncpd_from(x: ArrayView3<f64>, mut factors: CpFactors, config: &SolverConfig) -> Result<CpModel> {
    config.validate()?;
    ensure_nonnegative(x.iter(), "data tensor")?;
    if !factors.is_nonnegative() {
        return Err(Error::Negative("initial factors"));
    }
    let mut trace = vec![reconstruction_error(x, &factors)?];
    for _ in 0..config.max_iterations {
        for mode in Mode::ALL {
            update_factor(x, &mut factors, mode, config.epsilon)?;
        }
        let prev = *trace.last().expect("trace is non-empty");
        let cur = reconstruction_error(x, &factors)?;
        trace.push(cur);
        let scale = prev.max(cur);
        if scale == 0.0 || (prev - cur).abs() / scale < config.tolerance {
            break;
        }
    }
    let rank = factors.rank();
    Ok(CpModel {
        factors,
        objective_trace: trace,
        rank,
        config: *config,
    })
}

fn update_factor(x: ArrayView3<f64>, f: &mut CpFactors, mode: Mode, eps: f64) -> Result<()> {
    let numer = mttkrp(x, f.a.view(), f.b.view(), f.c.view(), mode)?;
    let (p, q) = match mode {
        Mode::One => (&f.b, &f.c),
        Mode::Two => (&f.a, &f.c),
        Mode::Three => (&f.a, &f.b),
    };
    let gram = p.t().dot(p) * q.t().dot(q);
    let target = match mode {
        Mode::One => &mut f.a,
        Mode::Two => &mut f.b,
        Mode::Three => &mut f.c,
    };
    let denom = target.dot(&gram);
    Zip::from(target)
        .and(&numer)
        .and(&denom)
        .for_each(|v, &n, &d| *v *= n / (d + eps));
    Ok(())
}

/// How the temporal prevalence matrix is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrevalenceNorm {
    /// Each day (column) is a distribution over topics.
    #[default]
    PerDay,
    /// Each topic (row) is a distribution over days.
    PerTopic,
}

/// Topic × day prevalence from the time factor. Each `a_k` first absorbs
/// `‖b_k‖₁·‖c_k‖₁`, then the `r × n1` transpose is normalized to unit sums
/// (per day by default); all-zero columns or rows stay zero.
pub fn temporal_prevalence(factors: &CpFactors, norm: PrevalenceNorm) -> Mat {
    let r = factors.rank();
    let n1 = factors.a.nrows();
    let mut out = Array2::zeros((r, n1));
    for k in 0..r {
        let scale = factors.b.column(k).sum() * factors.c.column(k).sum();
        for i in 0..n1 {
            out[[k, i]] = factors.a[[i, k]] * scale;
        }
    }
    let axis = match norm {
        PrevalenceNorm::PerDay => Axis(1),
        PrevalenceNorm::PerTopic => Axis(0),
    };
    for mut lane in out.axis_iter_mut(axis) {
        let s: f64 = lane.sum();
        if s > 0.0 {
            lane.mapv_inplace(|v| v / s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};
    use rand::Rng;

    fn random_tensor(dims: (usize, usize, usize), seed: u64) -> Tensor3 {
        let mut rng = seeded_rng(seed);
        Array3::from_shape_simple_fn(dims, || rng.random::<f64>())
    }

    #[test]
    fn zero_tensor_objective_drops_to_zero() {
        let x = Array3::<f64>::zeros((3, 3, 3));
        let model = fit_ncpd(x.view(), 2, &default_config()).unwrap();
        assert_eq!(model.final_objective(), 0.0);
    }

    #[test]
    fn monotone_on_random_tensor() {
        let x = random_tensor((8, 8, 8), 4);
        let model = fit_ncpd(x.view(), 3, &SolverConfig::new(300, 1e-12).with_seed(1)).unwrap();
        for pair in model.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-8), "{pair:?}");
        }
        assert!(model.factors.is_nonnegative());
    }

    #[test]
    fn rejects_negative_tensor() {
        let mut x = random_tensor((2, 2, 2), 1);
        x[[0, 1, 0]] = -0.5;
        assert!(fit_ncpd(x.view(), 1, &default_config()).is_err());
    }

    #[test]
    fn column_permutation_leaves_error_unchanged() {
        let x = random_tensor((4, 3, 5), 2);
        let mut rng = seeded_rng(8);
        let f = CpFactors::random((4, 3, 5), 3, &mut rng);
        let e1 = reconstruction_error(x.view(), &f).unwrap();
        let e2 = reconstruction_error(x.view(), &f.permuted(&[2, 0, 1])).unwrap();
        assert_abs_diff_eq!(e1, e2, epsilon = 1e-12);
    }

    #[test]
    fn prevalence_single_topic_is_one() {
        let f = CpFactors::new(array![[0.5], [0.0], [2.0]], array![[1.], [2.]], array![[3.]]).unwrap();
        let p = temporal_prevalence(&f, PrevalenceNorm::PerDay);
        assert_eq!(p, array![[1.0, 0.0, 1.0]]);
    }

    #[test]
    fn prevalence_identity_fixture() {
        let f = CpFactors::new(Array2::eye(2), Array2::ones((3, 2)), Array2::ones((2, 2))).unwrap();
        assert_eq!(temporal_prevalence(&f, PrevalenceNorm::PerDay), Array2::<f64>::eye(2));
    }

    #[test]
    fn prevalence_absorbs_term_and_document_mass() {
        let f = CpFactors::new(
            array![[1., 1.], [1., 3.]],
            array![[2., 1.], [0., 1.]],
            array![[1., 1.]],
        )
        .unwrap();
        // Topic 0 scaled by 2, topic 1 by 2: day 0 = [2, 2], day 1 = [2, 6].
        let p = temporal_prevalence(&f, PrevalenceNorm::PerDay);
        assert_abs_diff_eq!(p[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[[1, 1]], 0.75, epsilon = 1e-15);
        let q = temporal_prevalence(&f, PrevalenceNorm::PerTopic);
        assert_abs_diff_eq!(q.row(1).sum(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[[1, 1]], 0.75, epsilon = 1e-15);
    }
}
