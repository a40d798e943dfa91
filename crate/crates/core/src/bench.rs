//! Acceptance benchmarks: solver invariants, oracle comparisons, online vs
//! batch agreement, planted pulse recovery, memory contracts, preprocessing
//! fixtures and CLI determinism. Each criterion runs on its own and reports
//! pass/fail with the measured numbers.

use std::borrow::Borrow;
use std::cell::Cell;
use std::fmt;
use std::ops::Deref;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ncpd::{self, CpFactors, PrevalenceNorm};
use crate::nmf;
use crate::online_ncpd::{fit_oncpd, OncpdParams, OncpdState};
use crate::online_nmf::{fit_onmf, MinibatchPlan, OnmfParams, SliceSource};
use crate::synth::{gen_planted, recovery_score, PulseDesign};
use crate::tensor_core::{
    kkt_residual, lasso_objective, nnls, nonneg_lasso, seeded_rng, Mat, SolverConfig, Tensor3,
};
use crate::topics;
use crate::vectorizer;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub budget_seconds: f64,
    pub detail: String,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<28} {:>7.2}s / {:>4.0}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str, f64); 10] = [
    (1, "nmf-monotone", 5.0),
    (2, "ncpd-monotone-recovery", 20.0),
    (3, "solver-oracles", 30.0),
    (4, "implicit-coding", 10.0),
    (5, "online-batch-agreement", 60.0),
    (6, "pulse-recovery", 120.0),
    (7, "oncpd-mm-descent", 10.0),
    (8, "memory-contracts", 5.0),
    (9, "preprocessing-fixtures", 1.0),
    (10, "fit-determinism", 60.0),
];

/// Runs criterion `id`; the budget is part of passing.
pub fn run_criterion(id: u8) -> Result<CriterionReport> {
    let &(_, name, budget) = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .ok_or_else(|| Error::invalid(format!("no criterion {id}")))?;
    let start = Instant::now();
    let outcome = match id {
        1 => nmf_monotone(),
        2 => ncpd_monotone_recovery(),
        3 => solver_oracles(),
        4 => implicit_coding(),
        5 => online_batch_agreement(),
        6 => pulse_recovery(),
        7 => oncpd_mm_descent(),
        8 => memory_contracts(),
        9 => preprocessing_fixtures(),
        _ => fit_determinism(),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(pair) => pair,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_budget = seconds < budget;
    Ok(CriterionReport {
        id,
        name,
        passed: ok && in_budget,
        seconds,
        budget_seconds: budget,
        detail: if in_budget { detail } else { format!("{detail}; over budget") },
    })
}

pub fn run_all() -> Vec<CriterionReport> {
    CRITERIA
        .iter()
        .map(|c| run_criterion(c.0).expect("listed criterion"))
        .collect()
}

type Outcome = Result<(bool, String)>;

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
}

fn uniform3(dims: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor3 {
    Array3::from_shape_simple_fn(dims, || rng.random::<f64>())
}

/// Largest relative increase between consecutive trace entries.
fn worst_increase(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn nmf_monotone() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..50 {
        let mut rng = seeded_rng(seed);
        let x = uniform(20, 15, &mut rng);
        let model = nmf::fit_nmf(x.view(), 5, &SolverConfig::new(500, 1e-300).with_seed(seed))?;
        worst = worst.max(worst_increase(&model.objective_trace));
    }
    Ok((worst <= 1e-10, format!("worst relative increase {worst:.3e} (limit 1e-10)")))
}

fn ncpd_monotone_recovery() -> Outcome {
    let mut rng = seeded_rng(2);
    let x = uniform3((8, 8, 8), &mut rng);
    let model = ncpd::fit_ncpd(x.view(), 3, &SolverConfig::new(500, 1e-300).with_seed(2))?;
    let worst = worst_increase(&model.objective_trace);

    let planted = CpFactors::random((10, 8, 6), 2, &mut rng);
    let y = planted.reconstruct();
    let fit = ncpd::fit_ncpd(y.view(), 2, &SolverConfig::new(2000, 1e-300).with_seed(3))?;
    let rel = fit.final_objective() / y.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((
        worst <= 1e-8 && rel < 1e-3,
        format!(
            "worst relative increase {worst:.3e} (limit 1e-8); rank-2 relative error {rel:.3e} after {} iterations (limit 1e-3)",
            fit.iterations()
        ),
    ))
}

/// Solves `m·x = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot vanishes.
fn solve_dense(mut m: Mat, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))?;
        if m[[piv, col]].abs() <= 1e-10 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap([piv, k], [col, k]);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = m[[row, col]] / m[[col, col]];
            for k in col..n {
                m[[row, k]] -= f * m[[col, k]];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[[row, k]] * x[k]).sum();
        x[row] = (b[row] - s) / m[[row, row]];
    }
    Some(x)
}

/// Exact minimizer of `‖target − design·h‖² + λ‖h‖₁` over `h ≥ 0` by trying
/// every support: on a support `S` the stationary point solves
/// `(A_Sᵀ A_S) h_S = A_Sᵀ b − λ/2`, and some optimum has linearly
/// independent support columns.
pub fn brute_force_lasso(design: ArrayView2<f64>, target: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
    let r = design.ncols();
    assert!(r < 20, "brute force is exponential in the rank");
    let mut best = Array1::zeros(r);
    let mut best_value = lasso_objective(design, target, lambda, best.view());
    for mask in 1u32..(1 << r) {
        let support: Vec<usize> = (0..r).filter(|&k| mask >> k & 1 == 1).collect();
        let sub = design.select(Axis(1), &support);
        let gram = sub.t().dot(&sub);
        let rhs = sub.t().dot(&target) - lambda / 2.0;
        let Some(hs) = solve_dense(gram, rhs) else { continue };
        if hs.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut h = Array1::zeros(r);
        for (&k, &v) in support.iter().zip(hs.iter()) {
            h[k] = v;
        }
        let value = lasso_objective(design, target, lambda, h.view());
        if value < best_value {
            best_value = value;
            best = h;
        }
    }
    best
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn solver_oracles() -> Outcome {
    let mut rng = seeded_rng(3);
    let cfg = SolverConfig::new(1000, 1e-12);
    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for n in 0..2000 {
        let m = rng.random_range(1..=8);
        let r = rng.random_range(1..=8);
        let design = gaussian(m, r, &mut rng);
        let target: Array1<f64> = gaussian(m, 1, &mut rng).column(0).to_owned();
        let (lambda, h) = if n % 2 == 0 {
            (0.0, nnls(design.view(), target.view(), &cfg)?)
        } else {
            let lambda = 2.0 * rng.random::<f64>();
            (lambda, nonneg_lasso(design.view(), target.view(), lambda, &cfg)?)
        };
        let oracle = brute_force_lasso(design.view(), target.view(), lambda);
        let gap = lasso_objective(design.view(), target.view(), lambda, h.view())
            - lasso_objective(design.view(), target.view(), lambda, oracle.view());
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(kkt_residual(design.view(), target.view(), lambda, h.view()));
    }
    Ok((
        worst_gap < 1e-4 && worst_kkt < 1e-6,
        format!("1000 nnls + 1000 lasso: worst gap {worst_gap:.3e} (limit 1e-4), worst KKT {worst_kkt:.3e} (limit 1e-6)"),
    ))
}

fn implicit_coding() -> Outcome {
    let mut rng = seeded_rng(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let r = rng.random_range(1..=3);
        let dims = loop {
            let d = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
            if d.0 * d.1 * d.2 >= r {
                break d;
            }
        };
        let factors = CpFactors::random(dims, r, &mut rng);
        let x = uniform3(dims, &mut rng);
        let lambda = 2.0 * rng.random::<f64>();
        let state = OncpdState::new(factors, 0.7, lambda)?;
        let a = state.code(x.view())?;
        let b = state.code_materialized(x.view())?;
        worst = a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(worst, f64::max);
    }
    Ok((worst < 1e-8, format!("200 instances: max |Δh| {worst:.3e} (limit 1e-8)")))
}

/// Ninety noisy day slices drawn from one fixed nonnegative dictionary.
pub fn stationary_stream(seed: u64) -> Vec<Mat> {
    let mut rng = seeded_rng(seed);
    let w_star = uniform(50, 5, &mut rng);
    (0..90)
        .map(|_| {
            let h = uniform(5, 50, &mut rng);
            let mut x = w_star.dot(&h);
            x.mapv_inplace(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v + 0.1 * z).max(0.0)
            });
            x
        })
        .collect()
}

fn online_batch_agreement() -> Outcome {
    let slices = stationary_stream(1000);
    let views: Vec<ArrayView2<f64>> = slices.iter().map(|m| m.view()).collect();
    let full = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?;
    let batch = nmf::fit_nmf(full.view(), 5, &SolverConfig::default().with_seed(0))?;
    let params = OnmfParams::new(
        5,
        0.7,
        MinibatchPlan {
            batch_size: 50,
            inner_iterations: 100,
            seed: 0,
        },
    );
    let online = fit_onmf(&slices, &params)?;
    let online_obj = online.objective(&slices)?;
    let ratio = online_obj / batch.final_objective();
    Ok((
        ratio <= 1.10,
        format!(
            "online {online_obj:.2} vs batch {:.2}: ratio {ratio:.4} (limit 1.10)",
            batch.final_objective()
        ),
    ))
}

/// Best cosine between the planted pulse and any learned prevalence row,
/// for NCPD and NMF on the same planted tensor.
pub fn pulse_cosines(design: &PulseDesign) -> Result<(f64, f64)> {
    let spec = design.spec()?;
    let x = gen_planted(&spec)?;
    let pulse = spec.profiles().slice(s![.., design.pulse_index()..design.pulse_index() + 1]).to_owned();
    let rank = design.persistent + 1;

    let cp = ncpd::fit_ncpd(x.values().view(), rank, &ncpd::default_config().with_seed(design.seed))?;
    let cp_prev = ncpd::temporal_prevalence(&cp.factors, PrevalenceNorm::PerDay);
    let cp_cos = recovery_score(cp_prev.t(), pulse.view())?.mean_cosine;

    let model = nmf::fit_nmf(x.concatenated().view(), rank, &SolverConfig::default().with_seed(design.seed))?;
    let days: Vec<Mat> = (0..spec.n_days).map(|t| x.day_matrix(t)).collect();
    let codes = nmf::daily_codes(days.iter().map(|d| d.view()), model.w.view(), &SolverConfig::new(200, 1e-9))?;
    let nmf_prev = topics::daily_prevalence(&codes)?;
    let nmf_cos = recovery_score(nmf_prev.values.t(), pulse.view())?.mean_cosine;
    Ok((cp_cos, nmf_cos))
}

fn pulse_recovery() -> Outcome {
    let (cp, nmf) = pulse_cosines(&PulseDesign::default())?;
    Ok((
        cp >= 0.90 && nmf <= cp,
        format!("pulse cosine: NCPD {cp:.4} (threshold 0.90), NMF {nmf:.4} (must not exceed NCPD)"),
    ))
}

fn oncpd_mm_descent() -> Outcome {
    let mut rng = seeded_rng(7);
    let x = uniform3((6, 5, 4), &mut rng);
    let factors = CpFactors::random((6, 5, 4), 3, &mut rng);
    let mut state = OncpdState::new(factors, 1.0, 0.0)?;
    let mut prev = f64::INFINITY;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let report = state.step(x.view())?;
        let slack = 1e-8 * report.surrogate_before.abs().max(1.0);
        worst = worst.max(report.surrogate_after - report.surrogate_before - slack);
        if prev.is_finite() {
            worst = worst.max(report.surrogate_after - prev - 1e-8 * prev.abs().max(1.0));
        }
        prev = report.surrogate_after;
    }
    Ok((
        worst <= 0.0,
        format!("100 steps: largest increase beyond slack {:.3e}; final surrogate {prev:.6}", worst.max(0.0)),
    ))
}

/// Counts how many loaded items are alive at once.
#[derive(Debug, Default)]
pub struct ResidencyMeter {
    live: Cell<usize>,
    peak: Cell<usize>,
    loads: Cell<usize>,
}

impl ResidencyMeter {
    pub fn peak(&self) -> usize {
        self.peak.get()
    }

    pub fn loads(&self) -> usize {
        self.loads.get()
    }

    fn enter(&self) {
        self.loads.set(self.loads.get() + 1);
        self.live.set(self.live.get() + 1);
        self.peak.set(self.peak.get().max(self.live.get()));
    }
}

/// An item that is counted by a [`ResidencyMeter`] while it lives.
pub struct Resident<'m, T> {
    item: T,
    meter: &'m ResidencyMeter,
}

impl<'m, T> Resident<'m, T> {
    pub fn new(item: T, meter: &'m ResidencyMeter) -> Self {
        meter.enter();
        Self { item, meter }
    }
}

impl<T> Drop for Resident<'_, T> {
    fn drop(&mut self) {
        self.meter.live.set(self.meter.live.get() - 1);
    }
}

impl<T: Deref<Target = Mat>> Deref for Resident<'_, T> {
    type Target = Mat;

    fn deref(&self) -> &Mat {
        &self.item
    }
}

impl Borrow<Tensor3> for Resident<'_, Tensor3> {
    fn borrow(&self) -> &Tensor3 {
        &self.item
    }
}

/// Slice source whose loads are metered.
pub struct MeteredSource<'a, S: ?Sized> {
    pub inner: &'a S,
    pub meter: ResidencyMeter,
}

impl<S: SliceSource + ?Sized> SliceSource for MeteredSource<'_, S> {
    type Slice<'b>
        = Resident<'b, S::Slice<'b>>
    where
        Self: 'b;

    fn num_slices(&self) -> usize {
        self.inner.num_slices()
    }

    fn num_terms(&self) -> usize {
        self.inner.num_terms()
    }

    fn load(&self, t: usize) -> Result<Self::Slice<'_>> {
        Ok(Resident::new(self.inner.load(t)?, &self.meter))
    }
}

fn memory_contracts() -> Outcome {
    let plan = MinibatchPlan {
        batch_size: 10,
        inner_iterations: 3,
        seed: 1,
    };
    let params = OnmfParams::new(4, 0.7, plan);
    let mut rng = seeded_rng(8);
    let days: Vec<Mat> = (0..40).map(|_| uniform(30, 12, &mut rng)).collect();
    let mut peaks = Vec::new();
    let mut aggregate = Vec::new();
    for t in [20, 40] {
        let source = MeteredSource {
            inner: &days[..t],
            meter: ResidencyMeter::default(),
        };
        let fit = fit_onmf(&source, &params)?;
        peaks.push(source.meter.peak());
        aggregate.push(fit.state.aggregate_len());
    }

    let meter = ResidencyMeter::default();
    let x = uniform3((5, 6, 20), &mut rng);
    let stream = (0..30).map(|_| {
        let idx: Vec<usize> = (0..4).map(|_| rng.random_range(0..20)).collect();
        Resident::new(x.select(Axis(2), &idx), &meter)
    });
    let params = OncpdParams {
        rank: 3,
        beta: 0.7,
        lambda: 0.1,
        seed: 2,
    };
    let fit = fit_oncpd(stream, &params)?;
    let stream_peak = meter.peak();
    let ok = peaks.iter().all(|&p| p == 1) && aggregate[0] == aggregate[1] && stream_peak == 1 && meter.loads() == 30;
    Ok((
        ok,
        format!(
            "online NMF peak resident slices {peaks:?}, aggregate elements T=20: {}, T=40: {}; online NCPD peak resident tensors {stream_peak} over {} steps (aggregate elements {})",
            aggregate[0],
            aggregate[1],
            fit.coding_trace.len(),
            fit.state.aggregate_len()
        ),
    ))
}

fn preprocessing_fixtures() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut total = 0;
    let mut check = |name: &str, ok: bool| {
        total += 1;
        if !ok {
            failures.push(name.to_string());
        }
    };
    check(
        "tokenize url",
        vectorizer::tokenize("Stay Home! https://t.co/x") == ["stay", "home", "https", "co"],
    );
    check("tokenize empty", vectorizer::tokenize("").is_empty());
    check(
        "tokenize hyphen",
        vectorizer::tokenize("COVID-19 cases") == ["covid", "19", "cases"],
    );
    check(
        "covid filter",
        vectorizer::filter_terms(&["coronavirus", "covid19", "recovered", "discover"]) == ["recovered", "discover"],
    );
    check("stopwords", vectorizer::filter_terms(&["the", "cases"]) == ["cases"]);
    check("no letters", vectorizer::filter_terms(&["123", "covid", "19"]).is_empty());
    check(
        "ngrams",
        vectorizer::ngrams(&["new", "cases", "reported"])
            == ["new", "cases", "reported", "new cases", "cases reported"],
    );

    let vocab = vectorizer::build_vocab_from_texts(["cat sat", "cat ran"], 10)?;
    check(
        "vocab terms",
        vocab.terms() == ["cat", "cat ran", "cat sat", "ran", "sat"],
    );
    let sat = vocab.position("sat").expect("sat in vocabulary");
    let cat = vocab.position("cat").expect("cat in vocabulary");
    check("idf(sat)", (vocab.idf(sat) - ((1.5f64).ln() + 1.0)).abs() < 1e-12);
    check("idf(cat)", (vocab.idf(cat) - 1.0).abs() < 1e-12);
    let m = vectorizer::tfidf_texts(["cat sat"], &vocab);
    let idf = (1.5f64).ln() + 1.0;
    let norm = (1.0 + 2.0 * idf * idf).sqrt();
    check("tfidf cat", (m.values()[[cat, 0]] - 1.0 / norm).abs() < 1e-12);
    check("tfidf sat", (m.values()[[sat, 0]] - idf / norm).abs() < 1e-12);
    let capped = vectorizer::build_vocab_from_texts(["cat sat", "cat ran"], 2)?;
    check("vocab cap", capped.terms() == ["cat", "cat ran"]);

    let s = topics::summarize_topic(0, &[("stay", 0.4), ("safe", 0.3), ("stay safe", 0.25)], 3)?;
    check("stay safe", s.terms().eq(["stay safe"]));
    let s = topics::summarize_topic(0, &[("stay", 0.8), ("stay safe", 0.1)], 2)?;
    check("light bigram", s.terms().eq(["stay", "stay safe"]));
    let s = topics::summarize_topic(0, &[("19", 0.9), ("cases", 0.5)], 2)?;
    check("numeric term", s.terms().eq(["cases"]));

    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("{total} fixtures exact")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    ))
}

/// Writes a small planted tensor and fits every model kind twice through
/// the CLI, comparing model files byte for byte.
fn fit_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let root = dir.path();
    let design = PulseDesign {
        n_days: 8,
        n_terms: 40,
        docs_per_day: 12,
        persistent: 2,
        pulse_start: 3,
        pulse_len: 2,
        support: 8,
        seed: 5,
        ..PulseDesign::default()
    };
    let x = gen_planted(&design.spec()?)?;
    let tensor = root.join("tensor.bin");
    crate::io::write_tensor_bin(&tensor, x.values())?;

    let mut mismatches = Vec::new();
    for model in ["nmf", "onmf", "ncpd", "oncpd"] {
        let mut runs = Vec::new();
        for run in 0..2 {
            let out = root.join(format!("{model}-{run}"));
            let args = [
                "dyntopic",
                "fit",
                "--model",
                model,
                "--tensor",
                tensor.to_str().expect("temp path is UTF-8"),
                "--rank",
                "3",
                "--seed",
                "7",
                "--stream-count",
                "10",
                "--stream-width",
                "6",
                "--inner-iterations",
                "5",
                "--minibatch-size",
                "6",
                "--out",
                out.to_str().expect("temp path is UTF-8"),
            ];
            let mut stdout = Vec::new();
            let mut stderr = Vec::new();
            let code = crate::cli::run(args, &mut stdout, &mut stderr);
            if code != 0 {
                return Ok((false, format!("{model} fit exited {code}: {}", String::from_utf8_lossy(&stderr))));
            }
            runs.push(read_tree(&out)?);
        }
        if runs[0].is_empty() || runs[0] != runs[1] {
            mismatches.push(model);
        }
    }
    Ok((
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "nmf, onmf, ncpd, oncpd: model files identical across runs".to_string()
        } else {
            format!("differing outputs: {}", mismatches.join(", "))
        },
    ))
}

/// Relative path and bytes of every file under `dir`, sorted.
fn read_tree(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path.strip_prefix(dir).expect("under dir").to_string_lossy().into_owned();
                out.push((rel, bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}
