//! Planted-topic tensors and recovery scoring.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::{seeded_rng, Mat};
use crate::vectorizer::TermTensor;

/// A topic with a distribution over terms and an intensity per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTopic {
    pub term_dist: Vec<f64>,
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n_days: usize,
    pub n_terms: usize,
    pub docs_per_day: usize,
    pub topics: Vec<PlantedTopic>,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 || self.n_terms == 0 || self.docs_per_day == 0 {
            return Err(Error::invalid("planted dimensions must be ≥ 1"));
        }
        if self.topics.is_empty() {
            return Err(Error::invalid("at least one planted topic is required"));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid(format!("noise must be ≥ 0, got {}", self.noise)));
        }
        for (k, topic) in self.topics.iter().enumerate() {
            if topic.term_dist.len() != self.n_terms || topic.profile.len() != self.n_days {
                return Err(Error::shape(format!("topic {k} does not match the planted dimensions")));
            }
            if topic.term_dist.iter().chain(&topic.profile).any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Negative("planted topic"));
            }
            let mass: f64 = topic.term_dist.iter().sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("topic {k} term distribution sums to {mass}")));
            }
            if topic.profile.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!("topic {k} is never active")));
            }
        }
        Ok(())
    }

    /// Planted profiles as a days × topics matrix.
    pub fn profiles(&self) -> Mat {
        Array2::from_shape_fn((self.n_days, self.topics.len()), |(t, k)| self.topics[k].profile[t])
    }
}

/// Generates the day × term × document tensor.
///
/// Each document draws Dirichlet(1) weights `π` over topics; slot `(t, :, j)`
/// is `Σ_k profile_k(t)·π_k·term_dist_k` plus `N(0, σ²)` noise, clipped at zero.
pub fn gen_planted(spec: &PlantedSpec) -> Result<TermTensor> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let r = spec.topics.len();
    let mut values = Array3::zeros((spec.n_days, spec.n_terms, spec.docs_per_day));
    let mut pi = vec![0.0; r];
    for t in 0..spec.n_days {
        for j in 0..spec.docs_per_day {
            for p in pi.iter_mut() {
                *p = Exp1.sample(&mut rng);
            }
            let total: f64 = pi.iter().sum();
            for (k, topic) in spec.topics.iter().enumerate() {
                let weight = topic.profile[t] * pi[k] / total;
                if weight == 0.0 {
                    continue;
                }
                for (i, &q) in topic.term_dist.iter().enumerate() {
                    values[[t, i, j]] += weight * q;
                }
            }
            if spec.noise > 0.0 {
                for i in 0..spec.n_terms {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let v: &mut f64 = &mut values[[t, i, j]];
                    *v = (*v + spec.noise * z).max(0.0);
                }
            }
        }
    }
    TermTensor::with_padding(values, Array2::from_elem((spec.n_days, spec.docs_per_day), false))
}

/// Persistent topics plus one short pulse, on disjoint term supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseDesign {
    pub n_days: usize,
    pub n_terms: usize,
    pub docs_per_day: usize,
    pub persistent: usize,
    pub pulse_start: usize,
    pub pulse_len: usize,
    /// Terms per topic.
    pub support: usize,
    /// Pulse intensity relative to the persistent topics' mean.
    pub pulse_height: f64,
    /// Multiplies every profile.
    pub intensity: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PulseDesign {
    fn default() -> Self {
        Self {
            n_days: 30,
            n_terms: 200,
            docs_per_day: 50,
            persistent: 3,
            pulse_start: 10,
            pulse_len: 3,
            support: 10,
            pulse_height: 2.0,
            intensity: 4.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl PulseDesign {
    /// Topic `k` lives on terms `k·support..(k+1)·support` with seeded
    /// Dirichlet(1) weights. Persistent profiles are phase-shifted waves in
    /// `[0.5, 1.5]`; the pulse topic (last) is constant on its days, zero elsewhere.
    pub fn spec(&self) -> Result<PlantedSpec> {
        let r = self.persistent + 1;
        if self.support == 0 || r * self.support > self.n_terms {
            return Err(Error::invalid(format!(
                "{r} topics with {} terms each do not fit in {} terms",
                self.support, self.n_terms
            )));
        }
        if self.pulse_len == 0 || self.pulse_start + self.pulse_len > self.n_days {
            return Err(Error::invalid("pulse must lie within the planted days"));
        }
        let mut rng = seeded_rng(self.seed);
        let mut topics = Vec::with_capacity(r);
        for k in 0..r {
            let mut term_dist = vec![0.0; self.n_terms];
            let mut total = 0.0;
            for q in &mut term_dist[k * self.support..(k + 1) * self.support] {
                *q = Exp1.sample(&mut rng);
                total += *q;
            }
            term_dist.iter_mut().for_each(|q| *q /= total);
            let profile = if k < self.persistent {
                let phase = rng.random::<f64>() * std::f64::consts::TAU;
                let period = self.n_days as f64 * (0.5 + rng.random::<f64>());
                (0..self.n_days)
                    .map(|t| self.intensity * (1.0 + 0.5 * (std::f64::consts::TAU * t as f64 / period + phase).sin()))
                    .collect()
            } else {
                (0..self.n_days)
                    .map(|t| {
                        if (self.pulse_start..self.pulse_start + self.pulse_len).contains(&t) {
                            self.intensity * self.pulse_height
                        } else {
                            0.0
                        }
                    })
                    .collect()
            };
            topics.push(PlantedTopic { term_dist, profile });
        }
        Ok(PlantedSpec {
            n_days: self.n_days,
            n_terms: self.n_terms,
            docs_per_day: self.docs_per_day,
            topics,
            noise: self.noise,
            seed: self.seed.wrapping_add(1),
        })
    }

    pub fn pulse_index(&self) -> usize {
        self.persistent
    }
}

/// `⟨u, v⟩ / (‖u‖‖v‖)`, defined as 0 when either vector is zero.
pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        u.dot(&v) / (nu * nv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    /// Learned column assigned to each planted profile.
    pub matching: Vec<usize>,
    pub cosines: Vec<f64>,
    pub mean_cosine: f64,
}

/// Greedy matching: repeatedly pairs the most similar unassigned planted
/// profile and learned column.
pub fn recovery_score(learned: ArrayView2<f64>, planted: ArrayView2<f64>) -> Result<Recovery> {
    let (n, r) = learned.dim();
    let (m, rs) = planted.dim();
    if n != m {
        return Err(Error::shape(format!("learned has {n} days, planted {m}")));
    }
    if r < rs {
        return Err(Error::invalid(format!("{r} learned columns cannot match {rs} planted profiles")));
    }
    let sim = Array2::from_shape_fn((rs, r), |(p, l)| cosine(planted.column(p), learned.column(l)));
    let mut matching = vec![usize::MAX; rs];
    let mut cosines = vec![0.0; rs];
    let mut used = vec![false; r];
    for _ in 0..rs {
        let mut best: Option<(usize, usize, f64)> = None;
        for p in (0..rs).filter(|&p| matching[p] == usize::MAX) {
            for l in (0..r).filter(|&l| !used[l]) {
                if best.is_none_or(|(_, _, s)| sim[[p, l]] > s) {
                    best = Some((p, l, sim[[p, l]]));
                }
            }
        }
        let (p, l, s) = best.expect("an unassigned pair remains");
        matching[p] = l;
        cosines[p] = s;
        used[l] = true;
    }
    let mean_cosine = if rs == 0 { 0.0 } else { cosines.iter().sum::<f64>() / rs as f64 };
    Ok(Recovery {
        matching,
        cosines,
        mean_cosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};
    use proptest::prelude::*;
    use rand::Rng;

    fn one_topic(n_terms: usize, n_days: usize, noise: f64) -> PlantedSpec {
        PlantedSpec {
            n_days,
            n_terms,
            docs_per_day: 4,
            topics: vec![PlantedTopic {
                term_dist: (0..n_terms).map(|i| (i + 1) as f64).map(|v| v / (n_terms * (n_terms + 1) / 2) as f64).collect(),
                profile: vec![1.0; n_days],
            }],
            noise,
            seed: 3,
        }
    }

    #[test]
    fn single_topic_columns_are_proportional() {
        let spec = one_topic(5, 3, 0.0);
        let x = gen_planted(&spec).unwrap();
        for t in 0..3 {
            for col in x.day_slice(t).columns() {
                let c = cosine(col, ArrayView1::from(&spec.topics[0].term_dist));
                assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_topics_on_disjoint_days() {
        let spec = PlantedSpec {
            n_days: 2,
            n_terms: 4,
            docs_per_day: 3,
            topics: vec![
                PlantedTopic { term_dist: vec![0.5, 0.5, 0.0, 0.0], profile: vec![1.0, 0.0] },
                PlantedTopic { term_dist: vec![0.0, 0.0, 0.25, 0.75], profile: vec![0.0, 2.0] },
            ],
            noise: 0.0,
            seed: 1,
        };
        let x = gen_planted(&spec).unwrap();
        let v = x.values();
        for j in 0..3 {
            assert!(v[[0, 2, j]] == 0.0 && v[[0, 3, j]] == 0.0 && v[[0, 0, j]] > 0.0);
            assert!(v[[1, 0, j]] == 0.0 && v[[1, 1, j]] == 0.0 && v[[1, 3, j]] > 0.0);
        }
    }

    #[test]
    fn pulse_terms_silent_outside_pulse() {
        let design = PulseDesign {
            noise: 0.0,
            n_days: 20,
            n_terms: 60,
            docs_per_day: 5,
            ..PulseDesign::default()
        };
        let spec = design.spec().unwrap();
        let x = gen_planted(&spec).unwrap();
        let k = design.pulse_index();
        let terms = k * design.support..(k + 1) * design.support;
        for t in 0..design.n_days {
            let mass: f64 = terms.clone().map(|i| x.values().index_axis(Axis(0), t).row(i).sum()).sum();
            if (10..13).contains(&t) {
                assert!(mass > 0.0);
            } else {
                assert_eq!(mass, 0.0, "day {t}");
            }
        }
    }

    #[test]
    fn generation_is_seeded_and_nonnegative() {
        let spec = PulseDesign { n_terms: 50, docs_per_day: 6, ..PulseDesign::default() }.spec().unwrap();
        let a = gen_planted(&spec).unwrap();
        let b = gen_planted(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v >= 0.0));
        let other = PlantedSpec { seed: spec.seed + 1, ..spec };
        assert_ne!(gen_planted(&other).unwrap(), a);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = one_topic(3, 2, 0.0);
        spec.topics[0].term_dist = vec![0.5, 0.2, 0.2];
        assert!(gen_planted(&spec).is_err());
        let mut spec = one_topic(3, 2, 0.0);
        spec.topics[0].profile = vec![0.0, 0.0];
        assert!(gen_planted(&spec).is_err());
        assert!(gen_planted(&one_topic(3, 2, -1.0)).is_err());
        assert!(PulseDesign { n_terms: 30, ..PulseDesign::default() }.spec().is_err());
    }

    #[test]
    fn identical_profiles_score_one() {
        let p = array![[1., 0.], [2., 1.], [0., 3.]];
        let rec = recovery_score(p.view(), p.view()).unwrap();
        assert_eq!(rec.matching, [0, 1]);
        assert_abs_diff_eq!(rec.mean_cosine, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn permuted_scaled_profiles_score_one() {
        let p = array![[1., 0.], [2., 1.], [0., 3.]];
        let learned = array![[0., 3., 5.], [3., 6., 5.], [9., 0., 5.]];
        let rec = recovery_score(learned.view(), p.view()).unwrap();
        assert_eq!(rec.matching, [1, 0]);
        assert_abs_diff_eq!(rec.mean_cosine, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_profiles_score_zero() {
        let p = array![[1.], [0.]];
        let learned = array![[0.], [4.]];
        assert_eq!(recovery_score(learned.view(), p.view()).unwrap().mean_cosine, 0.0);
        assert!(recovery_score(learned.view(), array![[1., 1.], [0., 0.]].view()).is_err());
    }

    fn exhaustive_best(sim: &Mat) -> f64 {
        fn go(sim: &Mat, p: usize, used: &mut Vec<bool>) -> f64 {
            if p == sim.nrows() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for l in 0..sim.ncols() {
                if !used[l] {
                    used[l] = true;
                    best = best.max(sim[[p, l]] + go(sim, p + 1, used));
                    used[l] = false;
                }
            }
            best
        }
        go(sim, 0, &mut vec![false; sim.ncols()])
    }

    /// Planted profiles with one learned column each, jittered.
    fn near_recovery(days: usize, rs: usize, extra: usize, jitter: f64, seed: u64) -> (Mat, Mat) {
        let mut rng = seeded_rng(seed);
        let planted = Array2::from_shape_simple_fn((days, rs), || rng.random::<f64>());
        let mut learned = Array2::from_shape_simple_fn((days, rs + extra), || rng.random::<f64>());
        let perm: Vec<usize> = {
            let mut v: Vec<usize> = (0..rs + extra).collect();
            for i in (1..v.len()).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            v
        };
        for p in 0..rs {
            let scale = 0.5 + rng.random::<f64>();
            for t in 0..days {
                learned[[t, perm[p]]] = scale * (planted[[t, p]] + jitter * rng.random::<f64>());
            }
        }
        (learned, planted)
    }

    #[test]
    fn greedy_matches_exhaustive_on_small_fixtures() {
        for seed in 0..200 {
            let rs = 1 + (seed as usize) % 4;
            let (learned, planted) = near_recovery(12, rs, 1, 0.2, seed);
            let rec = recovery_score(learned.view(), planted.view()).unwrap();
            let sim = Array2::from_shape_fn((rs, learned.ncols()), |(p, l)| {
                cosine(planted.column(p), learned.column(l))
            });
            let best = exhaustive_best(&sim);
            assert_abs_diff_eq!(rec.mean_cosine * rs as f64, best, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn scores_bounded_and_scale_invariant(
            flat in prop::collection::vec(0.0f64..1.0, 6 * 5),
            scales in prop::collection::vec(0.1f64..10.0, 3),
        ) {
            let learned = Array2::from_shape_vec((6, 3), flat[..18].to_vec()).unwrap();
            let planted = Array2::from_shape_vec((6, 2), flat[18..].to_vec()).unwrap();
            let rec = recovery_score(learned.view(), planted.view()).unwrap();
            let mut scaled = learned.clone();
            for (k, s) in scales.iter().enumerate() {
                scaled.column_mut(k).mapv_inplace(|v| v * s);
            }
            let rec2 = recovery_score(scaled.view(), planted.view()).unwrap();
            prop_assert!(rec.cosines.iter().all(|&c| (0.0..=1.0 + 1e-12).contains(&c)));
            prop_assert!((rec.mean_cosine - rec2.mean_cosine).abs() < 1e-12);
            let mut m = rec.matching.clone();
            m.sort_unstable();
            m.dedup();
            prop_assert_eq!(m.len(), 2);
        }
    }
}
