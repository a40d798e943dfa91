//! Online NCPD: online CP-dictionary learning with nonnegative factors.
//!
//! Each incoming tensor `X_t` is coded as `h = argmin_{h ≥ 0} ‖X_t − Σ h(k)
//! a_k⊗b_k⊗c_k‖² + λ‖h‖₁`. The surrogate
//! `f̂_t = (1 − w_t) f̂_{t−1} + w_t [‖X_t − Σ h(k) a'_k⊗b'_k⊗c'_k‖² + λ‖h‖₁]`,
//! `w_t = t^(−β)`, is kept as sufficient statistics: the code Gram
//! `P ≈ Σ h hᵀ` and, per component, `Y_k ≈ Σ h(k) X`. The factors are then
//! updated A → B → C, each by projected gradient on its convex quadratic
//! restriction of the surrogate.

use std::borrow::Borrow;
use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ncpd::CpFactors;
use crate::tensor_core::{
    cp_inner_products, ensure_nonnegative, frobenius_sq, nonneg_lasso, seeded_rng, GramProblem,
    Mat, SolverConfig, Tensor3,
};
use crate::vectorizer::TermTensor;

/// Iterations of projected gradient per factor update.
pub const FACTOR_UPDATE_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OncpdState {
    pub factors: CpFactors,
    /// `Σ c_s h_s h_sᵀ` (r × r).
    pub code_gram: Mat,
    /// Slice `k` holds `Σ c_s h_s(k) X_s`.
    pub data_code_agg: Vec<Tensor3>,
    /// `Σ c_s ‖X_s‖²`, the surrogate's constant part.
    pub data_norm_agg: f64,
    /// `Σ c_s λ‖h_s‖₁`.
    pub l1_agg: f64,
    /// Index of the next step (1-based).
    pub step_count: u64,
    pub beta: f64,
    pub lambda: f64,
    /// Settings for the coding subproblem.
    pub config: SolverConfig,
}

/// What one [`OncpdState::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub code: Array1<f64>,
    /// `‖X − Σ h(k) a_k⊗b_k⊗c_k‖² + λ‖h‖₁` at the coding factors.
    pub coding_objective: f64,
    /// Updated surrogate evaluated before and after the factor updates.
    pub surrogate_before: f64,
    pub surrogate_after: f64,
}

impl OncpdState {
    pub fn new(factors: CpFactors, beta: f64, lambda: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be ≥ 0, got {beta}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be ≥ 0, got {lambda}")));
        }
        if !factors.is_nonnegative() {
            return Err(Error::Negative("initial factors"));
        }
        let r = factors.rank();
        let dims = factors.dims();
        Ok(Self {
            code_gram: Array2::zeros((r, r)),
            data_code_agg: (0..r).map(|_| Array3::zeros(dims)).collect(),
            data_norm_agg: 0.0,
            l1_agg: 0.0,
            step_count: 1,
            beta,
            lambda,
            config: SolverConfig::new(500, 1e-12),
            factors,
        })
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.factors.dims()
    }

    pub fn learning_rate(&self) -> f64 {
        (self.step_count as f64).powf(-self.beta)
    }

    /// Elements held by the surrogate statistics.
    pub fn aggregate_len(&self) -> usize {
        self.code_gram.len() + self.data_code_agg.iter().map(|t| t.len()).sum::<usize>()
    }

    fn check_dims(&self, x: ArrayView3<f64>) -> Result<()> {
        if x.dim() != self.dims() {
            return Err(Error::shape(format!(
                "tensor {:?} vs state {:?}",
                x.dim(),
                self.dims()
            )));
        }
        Ok(())
    }

    /// Coding problem in Gram form, built from factor Grams and the
    /// correlations `⟨x, a_k⊗b_k⊗c_k⟩`; the `n1·n2·n3 × r` design is never formed.
    fn coding_problem(&self, x: ArrayView3<f64>) -> Result<GramProblem> {
        let f = &self.factors;
        let gram = f.a.t().dot(&f.a) * f.b.t().dot(&f.b) * f.c.t().dot(&f.c);
        let lin = cp_inner_products(x, f.a.view(), f.b.view(), f.c.view())?;
        Ok(GramProblem::new(gram, lin)?.with_l1(self.lambda))
    }

    /// Nonnegative ℓ₁-regularized code of `x` over the rank-1 atoms.
    pub fn code(&self, x: ArrayView3<f64>) -> Result<Array1<f64>> {
        self.check_dims(x)?;
        ensure_nonnegative(x.iter(), "data tensor")?;
        Ok(self.coding_problem(x)?.solve_coordinate(&self.config))
    }

    /// Same code through the explicit design matrix; used to cross-check
    /// [`Self::code`].
    pub fn code_materialized(&self, x: ArrayView3<f64>) -> Result<Array1<f64>> {
        self.check_dims(x)?;
        let (design, target) = materialized_design(&self.factors, x);
        nonneg_lasso(design.view(), target.view(), self.lambda, &self.config)
    }

    /// Surrogate `f̂_t` at the given factors.
    pub fn surrogate_at(&self, f: &CpFactors) -> f64 {
        let r = self.rank();
        let gram = f.a.t().dot(&f.a) * f.b.t().dot(&f.b) * f.c.t().dot(&f.c);
        let quad = (&gram * &self.code_gram).sum();
        let cross: f64 = (0..r)
            .map(|k| {
                rank_one_inner(
                    self.data_code_agg[k].view(),
                    f.a.column(k),
                    f.b.column(k),
                    f.c.column(k),
                )
            })
            .sum();
        self.data_norm_agg + self.l1_agg - 2.0 * cross + quad
    }

    pub fn surrogate_value(&self) -> f64 {
        self.surrogate_at(&self.factors)
    }

    /// One online step: code, fold into the aggregates with weight `t^(−β)`,
    /// then update A, B and C in that order.
    pub fn step(&mut self, x: ArrayView3<f64>) -> Result<StepReport> {
        self.check_dims(x)?;
        ensure_nonnegative(x.iter(), "data tensor")?;
        let problem = self.coding_problem(x)?;
        let h = problem.solve_coordinate(&self.config);
        let x_norm = frobenius_sq(&x.to_owned());
        let coding_objective = x_norm + problem.value(h.view());

        let rate = self.learning_rate();
        let keep = 1.0 - rate;
        let r = self.rank();
        for j in 0..r {
            for k in 0..r {
                self.code_gram[[j, k]] = keep * self.code_gram[[j, k]] + rate * h[j] * h[k];
            }
        }
        for (k, agg) in self.data_code_agg.iter_mut().enumerate() {
            let w = rate * h[k];
            Zip::from(agg).and(&x).for_each(|a, &v| *a = keep * *a + w * v);
        }
        self.data_norm_agg = keep * self.data_norm_agg + rate * x_norm;
        self.l1_agg = keep * self.l1_agg + rate * self.lambda * h.sum();

        let surrogate_before = self.surrogate_value();
        for mode in 0..3 {
            self.update_factor(mode);
        }
        let surrogate_after = self.surrogate_value();
        self.step_count += 1;
        Ok(StepReport {
            code: h,
            coding_objective,
            surrogate_before,
            surrogate_after,
        })
    }

    /// Projected gradient on `tr(F M Fᵀ) − 2 tr(Fᵀ N)` for one factor `F`,
    /// where `M = P ∗ (GᵀG) ∗ (HᵀH)` over the other two factors and
    /// `N[:, k]` contracts `Y_k` with their k-th columns.
    fn update_factor(&mut self, mode: usize) {
        let r = self.rank();
        let f = &self.factors;
        let (p, q) = match mode {
            0 => (&f.b, &f.c),
            1 => (&f.a, &f.c),
            _ => (&f.a, &f.b),
        };
        let m = &self.code_gram * &p.t().dot(p) * q.t().dot(q);
        let rows = match mode {
            0 => f.a.nrows(),
            1 => f.b.nrows(),
            _ => f.c.nrows(),
        };
        let mut n = Array2::zeros((rows, r));
        for k in 0..r {
            let y = self.data_code_agg[k].view();
            let col = match mode {
                0 => contract_mode1(y, f.b.column(k), f.c.column(k)),
                1 => contract_mode2(y, f.a.column(k), f.c.column(k)),
                _ => contract_mode3(y, f.a.column(k), f.b.column(k)),
            };
            n.column_mut(k).assign(&col);
        }
        let step = 1.0 / (m.diag().sum() + self.config.epsilon);
        let target = match mode {
            0 => &mut self.factors.a,
            1 => &mut self.factors.b,
            _ => &mut self.factors.c,
        };
        for _ in 0..FACTOR_UPDATE_ITERATIONS {
            let grad = target.dot(&m) - &n;
            target.zip_mut_with(&grad, |v, &g| *v = (*v - step * g).max(0.0));
        }
    }
}

/// Design with columns `vec(a_k⊗b_k⊗c_k)` and target `vec(x)`, both in the
/// row-major `(i, j, k)` order.
pub fn materialized_design(f: &CpFactors, x: ArrayView3<f64>) -> (Mat, Array1<f64>) {
    let r = f.rank();
    let (n1, n2, n3) = f.dims();
    let mut design = Array2::zeros((n1 * n2 * n3, r));
    for k in 0..r {
        let mut row = 0;
        for i in 0..n1 {
            for j in 0..n2 {
                for l in 0..n3 {
                    design[[row, k]] = f.a[[i, k]] * f.b[[j, k]] * f.c[[l, k]];
                    row += 1;
                }
            }
        }
    }
    let target = x.iter().copied().collect();
    (design, target)
}

/// `Σ_{ijl} y[i,j,l]·a_i·b_j·c_l`
fn rank_one_inner(y: ArrayView3<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>, c: ArrayView1<f64>) -> f64 {
    contract_mode1(y, b, c).dot(&a)
}

fn contract_mode1(y: ArrayView3<f64>, b: ArrayView1<f64>, c: ArrayView1<f64>) -> Array1<f64> {
    // (n1, n2, n3) · c over the last axis, then · b.
    let yc = y.dot_last(c);
    yc.dot(&b)
}

fn contract_mode2(y: ArrayView3<f64>, a: ArrayView1<f64>, c: ArrayView1<f64>) -> Array1<f64> {
    let yc = y.dot_last(c);
    yc.t().dot(&a)
}

fn contract_mode3(y: ArrayView3<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n3 = y.dim().2;
    Array1::from_shape_fn(n3, |l| {
        y.index_axis(Axis(2), l).dot(&b).dot(&a)
    })
}

trait DotLast {
    fn dot_last(&self, v: ArrayView1<f64>) -> Mat;
}

impl DotLast for ArrayView3<'_, f64> {
    fn dot_last(&self, v: ArrayView1<f64>) -> Mat {
        let (n1, n2, _) = self.dim();
        let mut out = Array2::zeros((n1, n2));
        for (l, &vl) in v.iter().enumerate() {
            if vl != 0.0 {
                out.scaled_add(vl, &self.index_axis(Axis(2), l));
            }
        }
        out
    }
}

/// Functional form of [`OncpdState::code`].
pub fn oncpd_code(x: ArrayView3<f64>, state: &OncpdState) -> Result<Array1<f64>> {
    state.code(x)
}

/// Functional form of [`OncpdState::step`].
pub fn oncpd_step(mut state: OncpdState, x: ArrayView3<f64>) -> Result<OncpdState> {
    state.step(x)?;
    Ok(state)
}

/// Tensors whose document slots can be gathered a few at a time.
pub trait DocSource {
    /// (days, terms, document slots)
    fn dims(&self) -> (usize, usize, usize);

    /// Slots `docs` of days `days`, as a `(days.len(), terms, docs.len())` tensor.
    fn select(&self, days: Range<usize>, docs: &[usize]) -> Result<Tensor3>;
}

impl DocSource for Tensor3 {
    fn dims(&self) -> (usize, usize, usize) {
        self.dim()
    }

    fn select(&self, days: Range<usize>, docs: &[usize]) -> Result<Tensor3> {
        if days.end > self.dim().0 || docs.iter().any(|&j| j >= self.dim().2) {
            return Err(Error::invalid("selection outside the tensor"));
        }
        Ok(self.slice(s![days, .., ..]).select(Axis(2), docs))
    }
}

impl DocSource for TermTensor {
    fn dims(&self) -> (usize, usize, usize) {
        TermTensor::dims(self)
    }

    fn select(&self, days: Range<usize>, docs: &[usize]) -> Result<Tensor3> {
        self.values().select(days, docs)
    }
}

/// Lazily generated stream of document-mode subsamples: each tensor keeps
/// `width` document slots drawn independently and uniformly (with
/// replacement) from the source.
pub struct TensorStream<'a> {
    source: &'a dyn DocSource,
    days: Range<usize>,
    width: usize,
    remaining: usize,
    rng: ChaCha8Rng,
}

impl<'a> TensorStream<'a> {
    pub fn subsample(source: &'a dyn DocSource, width: usize, count: usize, seed: u64) -> Result<Self> {
        Self::over_days(source, 0..source.dims().0, width, count, seed)
    }

    /// As [`Self::subsample`], restricted to days `days`.
    pub fn over_days(
        source: &'a dyn DocSource,
        days: Range<usize>,
        width: usize,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("stream width must be ≥ 1"));
        }
        let (n1, _, n3) = source.dims();
        if n3 == 0 {
            return Err(Error::invalid("source has no document slots"));
        }
        if days.is_empty() || days.end > n1 {
            return Err(Error::invalid(format!("day range {days:?} outside 0..{n1}")));
        }
        Ok(Self {
            source,
            days,
            width,
            remaining: count,
            rng: seeded_rng(seed),
        })
    }
}

impl Iterator for TensorStream<'_> {
    type Item = Result<Tensor3>;

    fn next(&mut self) -> Option<Result<Tensor3>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let n3 = self.source.dims().2;
        let idx: Vec<usize> = (0..self.width).map(|_| self.rng.random_range(0..n3)).collect();
        Some(self.source.select(self.days.clone(), &idx))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OncpdParams {
    pub rank: usize,
    pub beta: f64,
    pub lambda: f64,
    /// Seeds the factor initialization.
    pub seed: u64,
}

impl Default for OncpdParams {
    fn default() -> Self {
        Self {
            rank: 20,
            beta: 0.7,
            lambda: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OncpdFit {
    pub state: OncpdState,
    /// Coding objective of every step.
    pub coding_trace: Vec<f64>,
}

impl OncpdFit {
    pub fn factors(&self) -> &CpFactors {
        &self.state.factors
    }
}

/// Folds [`OncpdState::step`] over the stream from seeded uniform(0, 1]
/// factors sized after the first tensor. Tensors are consumed one at a time.
pub fn fit_oncpd<I>(stream: I, params: &OncpdParams) -> Result<OncpdFit>
where
    I: IntoIterator,
    I::Item: Borrow<Tensor3>,
{
    try_fit_oncpd(stream.into_iter().map(Ok), params)
}

/// [`fit_oncpd`] over a fallible stream such as [`TensorStream`].
pub fn try_fit_oncpd<I, T>(stream: I, params: &OncpdParams) -> Result<OncpdFit>
where
    I: IntoIterator<Item = Result<T>>,
    T: Borrow<Tensor3>,
{
    if params.rank == 0 {
        return Err(Error::invalid("rank must be ≥ 1"));
    }
    let mut iter = stream.into_iter();
    let first = iter.next().ok_or(Error::EmptyStream)??;
    let mut rng = seeded_rng(params.seed);
    let init = CpFactors::random(first.borrow().dim(), params.rank, &mut rng);
    try_fit_oncpd_from(std::iter::once(Ok(first)).chain(iter), init, params)
}

/// As [`fit_oncpd`], starting from the given factors with fresh aggregates.
pub fn fit_oncpd_from<I>(stream: I, init: CpFactors, params: &OncpdParams) -> Result<OncpdFit>
where
    I: IntoIterator,
    I::Item: Borrow<Tensor3>,
{
    try_fit_oncpd_from(stream.into_iter().map(Ok), init, params)
}

pub fn try_fit_oncpd_from<I, T>(stream: I, init: CpFactors, params: &OncpdParams) -> Result<OncpdFit>
where
    I: IntoIterator<Item = Result<T>>,
    T: Borrow<Tensor3>,
{
    let mut state = OncpdState::new(init, params.beta, params.lambda)?;
    let mut coding_trace = Vec::new();
    for x in stream {
        let x = x?;
        let report = state.step(x.borrow().view())?;
        coding_trace.push(report.coding_objective);
    }
    if coding_trace.is_empty() {
        return Err(Error::EmptyStream);
    }
    Ok(OncpdFit {
        state,
        coding_trace,
    })
}

/// Stream settings shared by every month of [`sequential_oncpd`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    /// Stream tensors drawn per month.
    pub count: usize,
    /// Document slots per stream tensor.
    pub width: usize,
}

impl Default for StreamPlan {
    fn default() -> Self {
        Self {
            count: 50,
            width: 100,
        }
    }
}

/// Seed of month `s`'s subsampling stream.
pub fn month_stream_seed(seed: u64, month: usize) -> u64 {
    seed.wrapping_add(1).wrapping_add(month as u64)
}

/// Runs [`fit_oncpd`] on each month (days between consecutive `month_ends`,
/// exclusive ends) in turn. Month `s > 0` starts from month `s − 1`'s final
/// factors with fresh aggregates and `t = 1`. Returns each month's final factors.
pub fn sequential_oncpd(
    source: &dyn DocSource,
    month_ends: &[usize],
    params: &OncpdParams,
    plan: &StreamPlan,
) -> Result<Vec<CpFactors>> {
    let days = source.dims().0;
    let mut ends = month_ends.to_vec();
    if ends.last() != Some(&days) {
        ends.push(days);
    }
    if ends.iter().any(|&e| e == 0 || e > days) || ends.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "month ends {month_ends:?} must be increasing within 1..={days}"
        )));
    }
    let mut snapshots: Vec<CpFactors> = Vec::with_capacity(ends.len());
    let mut start = 0;
    for (s, &end) in ends.iter().enumerate() {
        let stream = TensorStream::over_days(
            source,
            start..end,
            plan.width,
            plan.count,
            month_stream_seed(params.seed, s),
        )?;
        let fit = match snapshots.last() {
            None => try_fit_oncpd(stream, params)?,
            Some(prev) => try_fit_oncpd_from(stream, warm_start(prev, end - start), params)?,
        };
        snapshots.push(fit.state.factors);
        start = end;
    }
    Ok(snapshots)
}

/// Previous factors as the next month's start; a time factor of a different
/// length is truncated or extended by repeating its last row.
pub fn warm_start(prev: &CpFactors, days: usize) -> CpFactors {
    let mut init = prev.clone();
    let old = prev.a.nrows();
    if days != old && old > 0 {
        let idx: Vec<usize> = (0..days).map(|i| i.min(old - 1)).collect();
        init.a = prev.a.select(Axis(0), &idx);
    }
    init
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_tensor(dims: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor3 {
        Array3::from_shape_simple_fn(dims, || rng.random::<f64>())
    }

    #[test]
    fn exact_rank_one_codes_to_one() {
        let a = array![0.6, 0.8];
        let b = array![1.0, 0.0, 0.0];
        let c = array![0.0, 1.0];
        let f = CpFactors::new(
            a.clone().insert_axis(Axis(1)),
            b.clone().insert_axis(Axis(1)),
            c.clone().insert_axis(Axis(1)),
        )
        .unwrap();
        let x = f.reconstruct();
        let state = OncpdState::new(f, 0.7, 0.0).unwrap();
        let h = state.code(x.view()).unwrap();
        assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_atoms_decouple() {
        let f = CpFactors::new(
            array![[1., 0.], [0., 2.]],
            array![[1., 0.], [0., 1.]],
            array![[0.5, 0.], [0., 1.]],
        )
        .unwrap();
        let mut rng = seeded_rng(3);
        let x = random_tensor((2, 2, 2), &mut rng);
        let state = OncpdState::new(f.clone(), 0.5, 0.0).unwrap();
        let h = state.code(x.view()).unwrap();
        let (design, target) = materialized_design(&f, x.view());
        for k in 0..2 {
            let d = design.column(k);
            let expect = (d.dot(&target) / d.dot(&d)).max(0.0);
            assert_abs_diff_eq!(h[k], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn implicit_and_materialized_codes_agree() {
        let mut rng = seeded_rng(17);
        let f = CpFactors::random((3, 3, 3), 2, &mut rng);
        let x = random_tensor((3, 3, 3), &mut rng);
        let state = OncpdState::new(f, 0.5, 0.5).unwrap();
        let a = state.code(x.view()).unwrap();
        let b = state.code_materialized(x.view()).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_factor_column_gets_zero_code() {
        let mut rng = seeded_rng(2);
        let mut f = CpFactors::random((2, 3, 2), 2, &mut rng);
        f.b.column_mut(1).fill(0.0);
        let x = random_tensor((2, 3, 2), &mut rng);
        let state = OncpdState::new(f, 0.5, 0.1).unwrap();
        assert_eq!(state.code(x.view()).unwrap()[1], 0.0);
    }

    #[test]
    fn first_step_replaces_history() {
        let mut rng = seeded_rng(5);
        let f = CpFactors::random((2, 3, 2), 2, &mut rng);
        let x = random_tensor((2, 3, 2), &mut rng);
        let mut state = OncpdState::new(f, 0.3, 0.2).unwrap();
        let report = state.step(x.view()).unwrap();
        let h = &report.code;
        for j in 0..2 {
            for k in 0..2 {
                assert_eq!(state.code_gram[[j, k]], h[j] * h[k]);
            }
            let expect = &x * h[j];
            assert_eq!(state.data_code_agg[j], expect);
        }
        assert!(report.surrogate_after <= report.surrogate_before * (1.0 + 1e-12));
        assert_eq!(state.step_count, 2);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = seeded_rng(5);
        let f = CpFactors::random((2, 3, 2), 2, &mut rng);
        let mut state = OncpdState::new(f, 0.3, 0.2).unwrap();
        let x = Array3::<f64>::zeros((2, 2, 2));
        assert!(state.step(x.view()).is_err());
        assert!(state.code(x.view()).is_err());
    }

    #[test]
    fn empty_stream_rejected() {
        let empty: Vec<Tensor3> = Vec::new();
        assert!(matches!(
            fit_oncpd(empty, &OncpdParams::default()),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn single_tensor_stream_is_one_step() {
        let mut rng = seeded_rng(9);
        let x = random_tensor((3, 4, 2), &mut rng);
        let params = OncpdParams {
            rank: 2,
            beta: 0.7,
            lambda: 0.1,
            seed: 4,
        };
        let fit = fit_oncpd(vec![x.clone()], &params).unwrap();
        let init = CpFactors::random((3, 4, 2), 2, &mut seeded_rng(4));
        let state = oncpd_step(OncpdState::new(init, 0.7, 0.1).unwrap(), x.view()).unwrap();
        assert_eq!(fit.state, state);
    }

    #[test]
    fn stream_emits_requested_shapes() {
        let mut rng = seeded_rng(1);
        let x = random_tensor((3, 4, 7), &mut rng);
        let stream = TensorStream::subsample(&x, 5, 3, 0).unwrap();
        let tensors: Vec<Tensor3> = stream.collect::<Result<_>>().unwrap();
        assert_eq!(tensors.len(), 3);
        assert!(tensors.iter().all(|t| t.dim() == (3, 4, 5)));
    }

    #[test]
    fn warm_start_resizes_time_factor() {
        let mut rng = seeded_rng(1);
        let f = CpFactors::random((3, 2, 2), 2, &mut rng);
        assert_eq!(warm_start(&f, 3), f);
        let longer = warm_start(&f, 4);
        assert_eq!(longer.a.row(3), f.a.row(2));
        assert_eq!(warm_start(&f, 2).a.nrows(), 2);
    }

    #[test]
    fn single_month_matches_direct_fit() {
        let mut rng = seeded_rng(4);
        let x = random_tensor((4, 5, 9), &mut rng);
        let params = OncpdParams {
            rank: 2,
            seed: 3,
            ..OncpdParams::default()
        };
        let plan = StreamPlan { count: 6, width: 4 };
        let months = sequential_oncpd(&x, &[], &params, &plan).unwrap();
        let stream = TensorStream::subsample(&x, 4, 6, month_stream_seed(3, 0)).unwrap();
        let direct = try_fit_oncpd(stream, &params).unwrap();
        assert_eq!(months.len(), 1);
        assert_eq!(months[0], direct.state.factors);
    }

    #[test]
    fn months_follow_boundaries() {
        let mut rng = seeded_rng(5);
        let x = random_tensor((6, 3, 5), &mut rng);
        let params = OncpdParams {
            rank: 2,
            ..OncpdParams::default()
        };
        let plan = StreamPlan { count: 3, width: 2 };
        let months = sequential_oncpd(&x, &[2, 5], &params, &plan).unwrap();
        let rows: Vec<usize> = months.iter().map(|f| f.a.nrows()).collect();
        assert_eq!(rows, [2, 3, 1]);
        assert!(sequential_oncpd(&x, &[3, 3], &params, &plan).is_err());
        assert!(sequential_oncpd(&x, &[7], &params, &plan).is_err());
    }
}
