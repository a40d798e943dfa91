//! Online NMF: sequential dictionary learning over day slices.
//!
//! The surrogate `f̂_t(W') = (1 − w_t) f̂_{t−1}(W') + w_t ‖X̃_t − W'H‖²_F`, with
//! `w_t = t^(−β)`, is quadratic in `W'`, so it is carried exactly by two
//! aggregates: `gram_agg ≈ Σ HHᵀ` (r × r) and `cross_agg ≈ Σ X̃Hᵀ` (m × r).
//! Memory is therefore one slice plus `O(m·r + r²)` regardless of the number
//! of days.

use std::borrow::Cow;
use std::ops::Deref;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmf;
use crate::tensor_core::{
    ensure_nonnegative, nnls_columns, random_positive, seeded_rng, Mat, SolverConfig,
};
use crate::vectorizer::TermTensor;

/// Which counter drives the learning rate `t^(−β)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecayPer {
    /// Global inner-step counter; the rate keeps decaying within a day.
    #[default]
    Step,
    /// Day counter; every inner step of day `t` uses `t^(−β)`.
    Day,
}

impl std::str::FromStr for DecayPer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(DecayPer::Step),
            "day" => Ok(DecayPer::Day),
            other => Err(Error::invalid(format!("decay_per must be step or day, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinibatchPlan {
    pub batch_size: usize,
    pub inner_iterations: usize,
    pub seed: u64,
}

impl Default for MinibatchPlan {
    fn default() -> Self {
        Self {
            batch_size: 50,
            inner_iterations: 100,
            seed: 0,
        }
    }
}

/// Iterations of projected gradient per dictionary update.
pub const W_UPDATE_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OnmfState {
    pub w: Mat,
    pub gram_agg: Mat,
    pub cross_agg: Mat,
    /// Index of the next step (1-based).
    pub step_count: u64,
    /// Days started so far; drives the rate under [`DecayPer::Day`].
    pub day_count: u64,
    pub beta: f64,
    pub decay_per: DecayPer,
    /// Settings for the per-column coding subproblems.
    pub config: SolverConfig,
}

impl OnmfState {
    pub fn new(w: Mat, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be ≥ 0, got {beta}")));
        }
        ensure_nonnegative(w.iter(), "initial dictionary")?;
        let (m, r) = w.dim();
        Ok(Self {
            w,
            gram_agg: Array2::zeros((r, r)),
            cross_agg: Array2::zeros((m, r)),
            step_count: 1,
            day_count: 0,
            beta,
            decay_per: DecayPer::Step,
            config: SolverConfig::inner(),
        })
    }

    /// Seeded uniform(0, 1] dictionary.
    pub fn random(terms: usize, rank: usize, beta: f64, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::invalid("rank must be ≥ 1"));
        }
        let mut rng = seeded_rng(seed);
        Self::new(random_positive(terms, rank, &mut rng), beta)
    }

    pub fn with_decay(mut self, decay_per: DecayPer) -> Self {
        self.decay_per = decay_per;
        self
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn terms(&self) -> usize {
        self.w.nrows()
    }

    /// Marks the start of a new day (relevant under [`DecayPer::Day`]).
    pub fn begin_day(&mut self) {
        self.day_count += 1;
    }

    /// Weight `t^(−β)` the next step will give its minibatch.
    pub fn learning_rate(&self) -> f64 {
        let t = match self.decay_per {
            DecayPer::Step => self.step_count,
            DecayPer::Day => self.day_count.max(1),
        };
        (t as f64).powf(-self.beta)
    }

    /// Elements held by the surrogate statistics.
    pub fn aggregate_len(&self) -> usize {
        self.gram_agg.len() + self.cross_agg.len()
    }

    /// One online step: code the minibatch, fold it into the aggregates with
    /// weight `t^(−β)`, then re-minimize the surrogate over `W ≥ 0`. Returns
    /// the minibatch codes.
    pub fn step(&mut self, minibatch: ArrayView2<f64>) -> Result<Mat> {
        if minibatch.nrows() != self.terms() {
            return Err(Error::shape(format!(
                "minibatch has {} rows, dictionary has {}",
                minibatch.nrows(),
                self.terms()
            )));
        }
        ensure_nonnegative(minibatch.iter(), "minibatch")?;
        let h = nnls_columns(self.w.view(), minibatch, &self.config)?;

        let rate = self.learning_rate();
        let keep = 1.0 - rate;
        let hht = h.dot(&h.t());
        let xht = minibatch.dot(&h.t());
        self.gram_agg.zip_mut_with(&hht, |a, &b| *a = keep * *a + rate * b);
        self.cross_agg.zip_mut_with(&xht, |a, &b| *a = keep * *a + rate * b);

        self.update_dictionary();
        self.step_count += 1;
        Ok(h)
    }

    /// Projected gradient on `tr(W G Wᵀ) − 2 tr(Wᵀ C)` from the current `W`,
    /// step `1 / (tr G + ε)`.
    fn update_dictionary(&mut self) {
        let step = 1.0 / (self.gram_agg.diag().sum() + self.config.epsilon);
        for _ in 0..W_UPDATE_ITERATIONS {
            let grad = self.w.dot(&self.gram_agg) - &self.cross_agg;
            self.w
                .zip_mut_with(&grad, |w, &g| *w = (*w - step * g).max(0.0));
        }
    }

    /// Surrogate value `tr(W G Wᵀ) − 2 tr(Wᵀ C)` at the current dictionary,
    /// without the data-norm constant.
    pub fn surrogate_value(&self) -> f64 {
        let wg = self.w.dot(&self.gram_agg);
        (&wg * &self.w).sum() - 2.0 * (&self.w * &self.cross_agg).sum()
    }
}

/// Functional form of [`OnmfState::step`].
pub fn onmf_step(mut state: OnmfState, minibatch: ArrayView2<f64>) -> Result<OnmfState> {
    state.step(minibatch)?;
    Ok(state)
}

/// Day slices loaded on demand, so fits never need more than one resident.
pub trait SliceSource {
    type Slice<'a>: Deref<Target = Mat>
    where
        Self: 'a;

    fn num_slices(&self) -> usize;

    fn num_terms(&self) -> usize;

    /// Term × document matrix of day `t`.
    fn load(&self, t: usize) -> Result<Self::Slice<'_>>;
}

impl SliceSource for [Mat] {
    type Slice<'a> = &'a Mat;

    fn num_slices(&self) -> usize {
        self.len()
    }

    fn num_terms(&self) -> usize {
        self.first().map_or(0, |m| m.nrows())
    }

    fn load(&self, t: usize) -> Result<&Mat> {
        self.get(t)
            .ok_or_else(|| Error::invalid(format!("no slice {t}")))
    }
}

impl SliceSource for Vec<Mat> {
    type Slice<'a> = &'a Mat;

    fn num_slices(&self) -> usize {
        self.len()
    }

    fn num_terms(&self) -> usize {
        self.as_slice().num_terms()
    }

    fn load(&self, t: usize) -> Result<&Mat> {
        self.as_slice().load(t)
    }
}

impl SliceSource for TermTensor {
    type Slice<'a> = Cow<'a, Mat>;

    fn num_slices(&self) -> usize {
        self.dims().0
    }

    fn num_terms(&self) -> usize {
        self.dims().1
    }

    fn load(&self, t: usize) -> Result<Cow<'_, Mat>> {
        if t >= self.dims().0 {
            return Err(Error::invalid(format!("no day {t}")));
        }
        Ok(Cow::Owned(self.day_matrix(t)))
    }
}

/// W snapshot at a checkpoint plus the codes of the days it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct OnmfSnapshot {
    pub w: Mat,
    /// First day (inclusive) and last day (exclusive) of the segment.
    pub days: (usize, usize),
    /// Per-day codes against this snapshot's dictionary.
    pub codes: Vec<Mat>,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnmfFit {
    pub w: Mat,
    /// Per-day codes against the final dictionary.
    pub codes: Vec<Mat>,
    pub state: OnmfState,
    pub steps: u64,
}

impl OnmfFit {
    /// `Σ_t ‖X_t − W H_t‖²_F` over the source.
    pub fn objective<S: SliceSource + ?Sized>(&self, source: &S) -> Result<f64> {
        total_objective(source, &self.w, &self.codes)
    }
}

pub(crate) fn total_objective<S: SliceSource + ?Sized>(source: &S, w: &Mat, codes: &[Mat]) -> Result<f64> {
    let mut total = 0.0;
    for (t, h) in codes.iter().enumerate() {
        let x = source.load(t)?;
        total += nmf::objective(x.view(), w.view(), h.view());
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnmfParams {
    pub rank: usize,
    pub beta: f64,
    pub plan: MinibatchPlan,
    pub decay_per: DecayPer,
}

impl OnmfParams {
    pub fn new(rank: usize, beta: f64, plan: MinibatchPlan) -> Self {
        Self {
            rank,
            beta,
            plan,
            decay_per: DecayPer::Step,
        }
    }
}

/// Online NMF over all days, then codes for every day against the final W.
pub fn fit_onmf<S: SliceSource + ?Sized>(source: &S, params: &OnmfParams) -> Result<OnmfFit> {
    let (mut snapshots, state) = run(source, params, &[])?;
    let last = snapshots.pop().expect("one snapshot per run");
    Ok(OnmfFit {
        w: last.w,
        codes: last.codes,
        steps: last.steps,
        state,
    })
}

fn sample_minibatch(x: &Mat, batch_size: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Mat {
    let n = x.ncols();
    if n <= batch_size {
        return x.clone();
    }
    let idx = sample(rng, n, batch_size).into_vec();
    x.select(Axis(1), &idx)
}

/// One continuous online run with W snapshotted after each checkpoint day
/// count (e.g. `[29, 60, 91]` for month ends). Each segment's days are coded
/// against that segment's ending snapshot. An empty schedule yields one
/// snapshot at the end; a schedule ending before the last day gets the end
/// appended.
pub fn sequential_onmf<S: SliceSource + ?Sized>(
    source: &S,
    params: &OnmfParams,
    checkpoints: &[usize],
) -> Result<Vec<OnmfSnapshot>> {
    run(source, params, checkpoints).map(|(snapshots, _)| snapshots)
}

fn run<S: SliceSource + ?Sized>(
    source: &S,
    params: &OnmfParams,
    checkpoints: &[usize],
) -> Result<(Vec<OnmfSnapshot>, OnmfState)> {
    let days = source.num_slices();
    if params.plan.batch_size == 0 || params.plan.inner_iterations == 0 {
        return Err(Error::invalid("batch_size and inner_iterations must be ≥ 1"));
    }
    let mut schedule: Vec<usize> = checkpoints.to_vec();
    if schedule.windows(2).any(|w| w[0] >= w[1]) || schedule.iter().any(|&c| c == 0 || c > days) {
        return Err(Error::invalid(format!(
            "checkpoints {checkpoints:?} must be increasing within 1..={days}"
        )));
    }
    if schedule.last() != Some(&days) {
        schedule.push(days);
    }

    let mut state = OnmfState::random(source.num_terms(), params.rank, params.beta, params.plan.seed)?
        .with_decay(params.decay_per);
    let mut rng = seeded_rng(params.plan.seed.wrapping_add(1));
    let mut snapshots = Vec::with_capacity(schedule.len());
    let mut segment_start = 0;
    for &checkpoint in &schedule {
        for t in segment_start..checkpoint {
            let slice = source.load(t)?;
            if slice.ncols() == 0 {
                log::warn!("day {t} has no documents; skipped");
                continue;
            }
            state.begin_day();
            for _ in 0..params.plan.inner_iterations {
                let batch = sample_minibatch(&slice, params.plan.batch_size, &mut rng);
                state.step(batch.view())?;
            }
        }
        let w = state.w.clone();
        let mut codes = Vec::with_capacity(checkpoint - segment_start);
        for t in segment_start..checkpoint {
            let slice = source.load(t)?;
            codes.push(nmf::code(slice.view(), w.view(), &state.config)?);
        }
        snapshots.push(OnmfSnapshot {
            w,
            days: (segment_start, checkpoint),
            codes,
            steps: state.step_count - 1,
        });
        segment_start = checkpoint;
    }
    Ok((snapshots, state))
}
