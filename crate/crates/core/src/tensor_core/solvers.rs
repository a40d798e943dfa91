use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::{ensure_finite, Mat, SolverConfig};
use crate::error::{Error, Result};

/// Nonnegative quadratic program in Gram form:
/// minimize `hᵀ G h − 2 linᵀ h` subject to `h ≥ 0`.
///
/// With `G = DᵀD` and `lin = Dᵀy` this is `‖y − D h‖²` up to the constant
/// `‖y‖²`; an ℓ₁ penalty `λ‖h‖₁` shifts `lin` by `−λ/2`.
#[derive(Debug, Clone)]
pub struct GramProblem {
    pub gram: Mat,
    pub lin: Array1<f64>,
}

impl GramProblem {
    pub fn new(gram: Mat, lin: Array1<f64>) -> Result<Self> {
        let r = lin.len();
        if gram.dim() != (r, r) {
            return Err(Error::shape(format!(
                "gram {:?} does not match linear term of length {r}",
                gram.dim()
            )));
        }
        Ok(Self { gram, lin })
    }

    pub fn from_design(design: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<Self> {
        if design.nrows() != target.len() {
            return Err(Error::shape(format!(
                "design has {} rows, target has {}",
                design.nrows(),
                target.len()
            )));
        }
        Ok(Self {
            gram: design.t().dot(&design),
            lin: design.t().dot(&target),
        })
    }

    /// Adds the ℓ₁ weight: `λ‖h‖₁` contributes `−λ/2` to every linear coefficient.
    pub fn with_l1(mut self, lambda: f64) -> Self {
        self.lin.mapv_inplace(|v| v - 0.5 * lambda);
        self
    }

    pub fn rank(&self) -> usize {
        self.lin.len()
    }

    pub fn value(&self, h: ArrayView1<f64>) -> f64 {
        h.dot(&self.gram.dot(&h)) - 2.0 * self.lin.dot(&h)
    }

    /// Gradient of `value`.
    pub fn gradient(&self, h: ArrayView1<f64>) -> Array1<f64> {
        (self.gram.dot(&h) - &self.lin) * 2.0
    }

    /// Largest eigenvalue of the Gram matrix by power iteration, floored at
    /// `trace/r` (a lower bound on the true value).
    pub fn lipschitz(&self) -> f64 {
        lipschitz(self.gram.view())
    }

    /// Projected gradient with step `1/L` from `init`, stopping on relative
    /// objective change below `config.tolerance`.
    pub fn projected_gradient(
        &self,
        init: Array1<f64>,
        lipschitz: f64,
        config: &SolverConfig,
    ) -> Array1<f64> {
        let mut h = init;
        if lipschitz <= 0.0 {
            return h.mapv(|_| 0.0);
        }
        let step = 1.0 / lipschitz;
        let mut prev = self.value(h.view());
        for _ in 0..config.max_iterations {
            let half_grad = self.gram.dot(&h) - &self.lin;
            h.zip_mut_with(&half_grad, |v, &g| *v = (*v - step * g).max(0.0));
            let cur = self.value(h.view());
            if relative_change(prev, cur) < config.tolerance {
                break;
            }
            prev = cur;
        }
        h
    }

    /// Cyclic coordinate descent with the closed-form nonnegative update
    /// `h_k = max(0, (lin_k − Σ_{j≠k} G_kj h_j) / G_kk)`; coordinates with a
    /// zero diagonal stay at zero.
    pub fn coordinate_descent(&self, init: Array1<f64>, config: &SolverConfig) -> Array1<f64> {
        let r = self.rank();
        let mut h = init;
        // Running G·h so each coordinate update is O(r).
        let mut gh = self.gram.dot(&h);
        let mut prev = self.value(h.view());
        for _ in 0..config.max_iterations {
            for k in 0..r {
                let gkk = self.gram[[k, k]];
                let old = h[k];
                let new = if gkk > 0.0 {
                    ((self.lin[k] - (gh[k] - gkk * old)) / gkk).max(0.0)
                } else {
                    0.0
                };
                if new != old {
                    let delta = new - old;
                    gh.scaled_add(delta, &self.gram.column(k));
                    h[k] = new;
                }
            }
            let cur = self.value(h.view());
            if relative_change(prev, cur) < config.tolerance {
                break;
            }
            prev = cur;
        }
        h
    }

    /// Active-set refinement (Lawson–Hanson on the Gram form), warm-started
    /// from the support of `warm` when that support is a valid passive set.
    /// Returns the exact minimizer up to rounding when it terminates normally.
    pub fn active_set(&self, warm: ArrayView1<f64>) -> Array1<f64> {
        let r = self.rank();
        let scale = self.lin.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-13 * scale;

        let mut passive: Vec<bool> = warm.iter().map(|&v| v > 0.0).collect();
        let mut h = Array1::zeros(r);
        match self.solve_passive(&passive) {
            Some(z) if passive.iter().any(|&p| p) && passive_positive(&z, &passive) => h = z,
            _ => passive.fill(false),
        }

        for _ in 0..(3 * r + 10) {
            let w = &self.lin - &self.gram.dot(&h);
            let candidate = (0..r)
                .filter(|&k| !passive[k])
                .max_by(|&a, &b| w[a].total_cmp(&w[b]));
            let Some(j) = candidate else { break };
            if w[j] <= tol {
                break;
            }
            passive[j] = true;

            let mut accepted = false;
            for _ in 0..=r {
                let Some(z) = self.solve_passive(&passive) else {
                    break;
                };
                if passive_positive(&z, &passive) {
                    h = z;
                    accepted = true;
                    break;
                }
                // Step back towards h until the first passive coordinate hits zero.
                let mut alpha = 1.0f64;
                for k in 0..r {
                    if passive[k] && z[k] <= 0.0 {
                        let denom = h[k] - z[k];
                        if denom > 0.0 {
                            alpha = alpha.min(h[k] / denom);
                        } else {
                            alpha = 0.0;
                        }
                    }
                }
                for k in 0..r {
                    if passive[k] {
                        h[k] += alpha * (z[k] - h[k]);
                        if h[k] <= 0.0 || (z[k] <= 0.0 && h[k] <= tol) {
                            h[k] = 0.0;
                            passive[k] = false;
                        }
                    }
                }
                if !passive.iter().any(|&p| p) {
                    break;
                }
            }
            if !accepted {
                break;
            }
        }
        h
    }

    /// Solves `G_PP z = lin_P` by Cholesky; entries outside P are zero.
    fn solve_passive(&self, passive: &[bool]) -> Option<Array1<f64>> {
        let idx: Vec<usize> = (0..passive.len()).filter(|&k| passive[k]).collect();
        let mut out = Array1::zeros(passive.len());
        if idx.is_empty() {
            return Some(out);
        }
        let sub = self.gram.select(Axis(0), &idx).select(Axis(1), &idx);
        let rhs = self.lin.select(Axis(0), &idx);
        let z = cholesky_solve(&sub, &rhs)?;
        for (pos, &k) in idx.iter().enumerate() {
            out[k] = z[pos];
        }
        Some(out)
    }

    /// Projected gradient followed by the active-set refinement.
    pub fn solve_projected(&self, lipschitz: f64, config: &SolverConfig) -> Array1<f64> {
        let h = self.projected_gradient(Array1::zeros(self.rank()), lipschitz, config);
        self.refine(h)
    }

    /// Coordinate descent followed by the active-set refinement.
    pub fn solve_coordinate(&self, config: &SolverConfig) -> Array1<f64> {
        let h = self.coordinate_descent(Array1::zeros(self.rank()), config);
        self.refine(h)
    }

    fn refine(&self, h: Array1<f64>) -> Array1<f64> {
        let polished = self.active_set(h.view());
        let before = self.value(h.view());
        let after = self.value(polished.view());
        if after.is_finite() && after <= before + 1e-12 * before.abs().max(1.0) {
            polished
        } else {
            h
        }
    }
}

fn passive_positive(z: &Array1<f64>, passive: &[bool]) -> bool {
    passive.iter().zip(z.iter()).all(|(&p, &v)| !p || v > 0.0)
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let denom = prev.abs().max(cur.abs());
    if denom == 0.0 {
        0.0
    } else {
        (prev - cur).abs() / denom
    }
}

pub(crate) fn lipschitz(gram: ArrayView2<f64>) -> f64 {
    let r = gram.nrows();
    if r == 0 {
        return 0.0;
    }
    let trace: f64 = gram.diag().sum();
    // Deterministic, non-symmetric start vector so it is unlikely to be
    // orthogonal to the leading eigenvector.
    let mut v = Array1::from_shape_fn(r, |k| 1.0 + 0.1 * k as f64);
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..100 {
        let u = gram.dot(&v);
        let rayleigh = v.dot(&u);
        let un = u.dot(&u).sqrt();
        if un == 0.0 {
            break;
        }
        v = u / un;
        let converged = (rayleigh - estimate).abs() <= 1e-6 * rayleigh.abs();
        estimate = rayleigh;
        if converged {
            break;
        }
    }
    estimate.max(trace / r as f64)
}

fn cholesky_solve(a: &Mat, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let max_diag = a.diag().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_diag == 0.0 {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 1e-12 * max_diag {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn check_inputs(design: ArrayView2<f64>, target: ArrayView1<f64>) -> Result<()> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::invalid("design must have at least one row and column"));
    }
    if design.nrows() != target.len() {
        return Err(Error::shape(format!(
            "design has {} rows, target has {}",
            design.nrows(),
            target.len()
        )));
    }
    ensure_finite(design.iter(), "design")?;
    ensure_finite(target.iter(), "target")
}

/// Nonnegative least squares: `argmin_{h ≥ 0} ‖target − design·h‖²`.
///
/// Projected gradient with step `1/L` (`L` the power-iteration estimate of
/// the largest eigenvalue of `designᵀdesign`), then an active-set pass that
/// pins the result to the exact KKT point.
pub fn nnls(
    design: ArrayView2<f64>,
    target: ArrayView1<f64>,
    config: &SolverConfig,
) -> Result<Array1<f64>> {
    check_inputs(design, target)?;
    let problem = GramProblem::from_design(design, target)?;
    let lipschitz = problem.lipschitz();
    Ok(problem.solve_projected(lipschitz, config))
}

/// Column-wise [`nnls`] of every column of `targets` against one design.
/// The Gram matrix and step size are shared; columns are solved in parallel
/// and the result does not depend on scheduling.
pub fn nnls_columns(
    design: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    config: &SolverConfig,
) -> Result<Mat> {
    if design.nrows() != targets.nrows() {
        return Err(Error::shape(format!(
            "design has {} rows, targets have {}",
            design.nrows(),
            targets.nrows()
        )));
    }
    ensure_finite(design.iter(), "design")?;
    ensure_finite(targets.iter(), "targets")?;
    let r = design.ncols();
    let n = targets.ncols();
    let gram = design.t().dot(&design);
    let cross = design.t().dot(&targets);
    let lipschitz = lipschitz(gram.view());
    let columns: Vec<Array1<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let lin = cross.column(j).to_owned();
            if lin.iter().all(|&v| v <= 0.0) {
                // h = 0 already satisfies KKT: gradient −2·lin ≥ 0.
                return Array1::zeros(r);
            }
            let problem = GramProblem {
                gram: gram.clone(),
                lin,
            };
            problem.solve_projected(lipschitz, config)
        })
        .collect();
    let mut out = Array2::zeros((r, n));
    for (j, col) in columns.into_iter().enumerate() {
        out.column_mut(j).assign(&col);
    }
    Ok(out)
}

/// Nonnegative LASSO: `argmin_{h ≥ 0} ‖target − design·h‖² + λ‖h‖₁` by
/// cyclic coordinate descent, refined by the same active-set pass as [`nnls`].
pub fn nonneg_lasso(
    design: ArrayView2<f64>,
    target: ArrayView1<f64>,
    lambda: f64,
    config: &SolverConfig,
) -> Result<Array1<f64>> {
    check_inputs(design, target)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and ≥ 0, got {lambda}")));
    }
    let problem = GramProblem::from_design(design, target)?.with_l1(lambda);
    Ok(problem.solve_coordinate(config))
}

pub fn nnls_objective(design: ArrayView2<f64>, target: ArrayView1<f64>, h: ArrayView1<f64>) -> f64 {
    let residual = &target - &design.dot(&h);
    residual.dot(&residual)
}

pub fn lasso_objective(
    design: ArrayView2<f64>,
    target: ArrayView1<f64>,
    lambda: f64,
    h: ArrayView1<f64>,
) -> f64 {
    nnls_objective(design, target, h) + lambda * h.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest KKT violation of `h` for `‖target − design·h‖² + λ‖h‖₁`, `h ≥ 0`:
/// `|g_k|` on the support, `max(0, −g_k)` off it, where `g` is the gradient.
pub fn kkt_residual(
    design: ArrayView2<f64>,
    target: ArrayView1<f64>,
    lambda: f64,
    h: ArrayView1<f64>,
) -> f64 {
    let residual = &design.dot(&h) - &target;
    let grad = design.t().dot(&residual) * 2.0 + lambda;
    h.iter()
        .zip(grad.iter())
        .map(|(&hk, &gk)| if hk > 0.0 { gk.abs() } else { (-gk).max(0.0) })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn cfg() -> SolverConfig {
        SolverConfig::new(1000, 1e-12)
    }

    #[test]
    fn nnls_identity_design() {
        let d = Array2::eye(2);
        let h = nnls(d.view(), array![2., 3.].view(), &cfg()).unwrap();
        assert_abs_diff_eq!(h[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn nnls_single_column_mean() {
        let d = array![[1.], [1.]];
        let h = nnls(d.view(), array![0., 2.].view(), &cfg()).unwrap();
        assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nnls_projects_onto_orthant() {
        let d = array![[1.], [1.]];
        let h = nnls(d.view(), array![-1., -1.].view(), &cfg()).unwrap();
        assert_eq!(h[0], 0.0);
    }

    #[test]
    fn nnls_rejects_non_finite() {
        let d = array![[1.], [f64::NAN]];
        assert!(nnls(d.view(), array![0., 1.].view(), &cfg()).is_err());
        let d = array![[1.], [1.]];
        assert!(nnls(d.view(), array![f64::INFINITY, 1.].view(), &cfg()).is_err());
        assert!(nnls(d.view(), array![1.].view(), &cfg()).is_err());
    }

    #[test]
    fn lasso_identity_halves_penalty() {
        // −2(1 − h) + λ = 0 ⇒ h = 1 − λ/2.
        let d = Array2::eye(2);
        let h = nonneg_lasso(d.view(), array![1., 1.].view(), 1.0, &cfg()).unwrap();
        assert_abs_diff_eq!(h[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn lasso_kill_threshold() {
        let d = array![[1., 0.5], [0.2, 1.], [0.3, 0.1]];
        let t = array![0.4, 0.9, 0.2];
        let max_corr = d.t().dot(&t).iter().fold(0.0f64, |m, &v| m.max(v));
        let h = nonneg_lasso(d.view(), t.view(), 2.0 * max_corr, &cfg()).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        let h = nonneg_lasso(d.view(), t.view(), 1.9 * max_corr, &cfg()).unwrap();
        assert!(h.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn lasso_zero_column_pinned() {
        let d = array![[1., 0.], [0., 0.], [1., 0.]];
        let h = nonneg_lasso(d.view(), array![1., 2., 3.].view(), 0.0, &cfg()).unwrap();
        assert_eq!(h[1], 0.0);
        assert_abs_diff_eq!(h[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lasso_rejects_negative_lambda() {
        let d = Array2::eye(2);
        assert!(nonneg_lasso(d.view(), array![1., 1.].view(), -0.1, &cfg()).is_err());
    }

    #[test]
    fn lasso_without_penalty_matches_nnls() {
        let d = array![[1., 0.3, 0.2], [0.1, 1., 0.4], [0.5, 0.2, 1.], [0.3, 0.3, 0.3]];
        let t = array![1.0, -0.5, 2.0, 0.7];
        let a = nnls(d.view(), t.view(), &cfg()).unwrap();
        let b = nonneg_lasso(d.view(), t.view(), 0.0, &cfg()).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn active_set_handles_ill_conditioning() {
        // Nearly collinear columns: plain projected gradient stalls, the
        // refinement lands on the exact minimizer.
        let d = array![[1., 1.], [1., 1.0001], [1., 0.9999]];
        let t = array![2., 2.0003, 1.9999];
        let h = nnls(d.view(), t.view(), &SolverConfig::new(50, 1e-6)).unwrap();
        assert!(kkt_residual(d.view(), t.view(), 0.0, h.view()) < 1e-8);
    }

    #[test]
    fn columns_match_single_solves() {
        let d = array![[1., 0.2], [0.3, 1.], [0.5, 0.5]];
        let x = array![[1., 0., 0.2], [0.5, 0., 1.], [0.7, 0., 0.4]];
        let h = nnls_columns(d.view(), x.view(), &cfg()).unwrap();
        for j in 0..3 {
            let single = nnls(d.view(), x.column(j), &cfg()).unwrap();
            for k in 0..2 {
                assert_abs_diff_eq!(h[[k, j]], single[k], epsilon = 1e-12);
            }
        }
        assert!(h.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = array![[1., 1.], [1., 1.]];
        assert!(cholesky_solve(&a, &array![1., 1.]).is_none());
    }

    #[test]
    fn lipschitz_bounds_spectrum() {
        let g = array![[2., -2.], [-2., 2.]];
        let l = lipschitz(g.view());
        assert!(l >= 2.0 && l <= 4.0 + 1e-9);
    }
}
