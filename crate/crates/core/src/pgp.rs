//! The parametric Gaussian process: a zero-mean GP prior conditioned on a
//! hypothetical dataset `{Z, u}` with `u ~ N(m, S)`.
//!
//! For inputs `x`, `x'` the conditional process has
//!
//! ```text
//! μ(x)     = k(x,Z) K⁻¹ m
//! Σ(x,x')  = k(x,x') − k(x,Z) K⁻¹ k(Z,x') + k(x,Z) K⁻¹ S K⁻¹ k(Z,x')
//! ```
//!
//! with `K = k(Z,Z)`. Observed mini-batches are folded into `(m, S)` by exact
//! Gaussian conditioning, after which the batch can be discarded.

use std::f64::consts::PI;

use faer::{Col, Mat, MatRef};
use log::warn;

use crate::error::{ensure_dim, PgpError, Result};
use crate::kernel::{contract_log_w_derivatives, kernel_matrix, KernelParams};
use crate::linalg::{self, Cholesky};

/// A block of observations `(X̃, ỹ)` with targets in normalized units.
#[derive(Debug, Clone, Copy)]
pub struct MiniBatch<'a> {
    x: MatRef<'a, f64>,
    y: &'a [f64],
}

impl<'a> MiniBatch<'a> {
    pub fn new(x: MatRef<'a, f64>, y: &'a [f64]) -> Result<Self> {
        ensure_dim("mini-batch rows", x.nrows(), y.len())?;
        if y.is_empty() {
            return Err(PgpError::Config("mini-batch must hold at least one row".into()));
        }
        Ok(MiniBatch { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x(&self) -> MatRef<'a, f64> {
        self.x
    }

    pub fn y(&self) -> &'a [f64] {
        self.y
    }
}

/// Pointwise predictive moments of the latent function.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Conditional variance clamped at zero; excludes observation noise.
    pub variance: Vec<f64>,
}

/// The whole distilled model: inducing locations, pseudo-output moments and
/// kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PgpState {
    z: Mat<f64>,
    m: Col<f64>,
    s: Mat<f64>,
    params: KernelParams,
}

impl PgpState {
    /// `m = 0`, `S = k(Z, Z)`.
    pub fn init(z: Mat<f64>, params: KernelParams) -> Result<Self> {
        params.validate()?;
        if z.nrows() == 0 {
            return Err(PgpError::Config("need at least one inducing point".into()));
        }
        ensure_dim("inducing point columns", params.dim(), z.ncols())?;
        if !linalg::all_finite(z.as_ref()) {
            return Err(PgpError::NonFinite("inducing locations"));
        }
        if let Some((i, j)) = first_duplicate_row(z.as_ref()) {
            warn!("inducing points {i} and {j} coincide; K(Z,Z) will be poorly conditioned");
        }
        let s = kernel_matrix(z.as_ref(), z.as_ref(), &params)?;
        let m = Col::zeros(z.nrows());
        Ok(PgpState { z, m, s, params })
    }

    /// Reassembles a state from stored components, checking shapes.
    pub fn from_parts(z: Mat<f64>, m: Col<f64>, s: Mat<f64>, params: KernelParams) -> Result<Self> {
        params.validate()?;
        let n = z.nrows();
        if n == 0 {
            return Err(PgpError::Config("need at least one inducing point".into()));
        }
        ensure_dim("inducing point columns", params.dim(), z.ncols())?;
        ensure_dim("mean vector length", n, m.nrows())?;
        ensure_dim("covariance rows", n, s.nrows())?;
        ensure_dim("covariance columns", n, s.ncols())?;
        let finite = linalg::all_finite(z.as_ref())
            && linalg::all_finite(s.as_ref())
            && m.iter().all(|v| v.is_finite());
        if !finite {
            return Err(PgpError::NonFinite("model state"));
        }
        Ok(PgpState { z, m, s, params })
    }

    /// Same hypothetical dataset, new hyperparameters. `(m, S)` are kept as is.
    pub fn with_params(&self, params: KernelParams) -> Result<Self> {
        params.validate()?;
        ensure_dim("kernel dimension", self.dim(), params.dim())?;
        Ok(PgpState {
            params,
            ..self.clone()
        })
    }

    pub fn num_inducing(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> MatRef<'_, f64> {
        self.z.as_ref()
    }

    pub fn m(&self) -> &Col<f64> {
        &self.m
    }

    pub fn s(&self) -> MatRef<'_, f64> {
        self.s.as_ref()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Jittered Cholesky factor of `k(Z, Z)` under the current hyperparameters.
    pub fn prior_factor(&self) -> Result<PriorFactor> {
        let kzz = kernel_matrix(self.z.as_ref(), self.z.as_ref(), &self.params)?;
        let chol = Cholesky::factor(kzz.as_ref(), self.params.signal_variance())?;
        Ok(PriorFactor { kzz, chol })
    }

    pub fn predict(&self, xstar: MatRef<'_, f64>) -> Result<Prediction> {
        self.predict_with(&self.prior_factor()?, xstar)
    }

    pub fn predict_with(&self, factor: &PriorFactor, xstar: MatRef<'_, f64>) -> Result<Prediction> {
        let proj = self.project(factor, xstar)?;
        let mean = linalg::mul_tn_vec(proj.a.as_ref(), self.m.as_ref());
        let sa = linalg::mul(self.s.as_ref(), proj.a.as_ref());
        let gamma2 = self.params.signal_variance();
        let variance = (0..xstar.nrows())
            .map(|t| {
                let (kz, a, sa) = (proj.kzs.col(t), proj.a.col(t), sa.col(t));
                let mut explained = 0.0;
                let mut restored = 0.0;
                for j in 0..self.num_inducing() {
                    explained += kz[j] * a[j];
                    restored += a[j] * sa[j];
                }
                (gamma2 - explained + restored).max(0.0)
            })
            .collect();
        Ok(Prediction {
            mean: mean.iter().copied().collect(),
            variance,
        })
    }

    /// Full predictive covariance `Σ(X*, X*)` (unclamped).
    pub fn predict_cov(&self, xstar: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let factor = self.prior_factor()?;
        let proj = self.project(&factor, xstar)?;
        let kss = kernel_matrix(xstar, xstar, &self.params)?;
        let sa = linalg::mul(self.s.as_ref(), proj.a.as_ref());
        let residual = &proj.kzs - &sa;
        let mut cov = &kss - linalg::mul_tn(proj.a.as_ref(), residual.as_ref());
        linalg::symmetrize(&mut cov);
        Ok(cov)
    }

    /// Conditions `(m, S)` on a mini-batch.
    pub fn distill(&self, batch: &MiniBatch<'_>) -> Result<PgpState> {
        let factor = self.prior_factor()?;
        Ok(self.distill_with(&factor, batch)?.state)
    }

    /// Distillation reusing a prior factor computed for the current hyperparameters.
    pub fn distill_with(&self, factor: &PriorFactor, batch: &MiniBatch<'_>) -> Result<Distilled> {
        let proj = self.project(factor, batch.x())?;
        let n = batch.len();

        // Σ(Z, X̃) = S K⁻¹ k(Z, X̃)
        let cross = linalg::mul(self.s.as_ref(), proj.a.as_ref());
        // Σ(X̃, X̃) + σ²I = k(X̃,X̃) − k(X̃,Z) K⁻¹ [k(Z,X̃) − S K⁻¹ k(Z,X̃)] + σ²I
        let unexplained = &proj.kzs - &cross;
        let mut innov = kernel_matrix(batch.x(), batch.x(), &self.params)?;
        linalg::sub_tn_symmetric(&mut innov, proj.a.as_ref(), unexplained.as_ref());
        let noise = self.params.noise_variance();
        for i in 0..n {
            innov[(i, i)] += noise;
        }
        let innov_chol = Cholesky::factor(innov.as_ref(), self.params.signal_variance() + noise)?;

        let predicted = linalg::mul_tn_vec(proj.a.as_ref(), self.m.as_ref());
        let residual = Col::from_fn(n, |i| batch.y()[i] - predicted[i]);
        let sse = residual.iter().map(|r| r * r).sum::<f64>();

        let gain_t = innov_chol.half_solve(cross.transpose())?;
        let whitened = innov_chol.half_solve(residual.as_mat())?;
        let m = &self.m + linalg::mul_tn_vec(gain_t.as_ref(), whitened.col(0));
        let mut s = self.s.clone();
        linalg::sub_tn_symmetric(&mut s, gain_t.as_ref(), gain_t.as_ref());

        if !(m.iter().all(|v| v.is_finite()) && linalg::all_finite(s.as_ref())) {
            return Err(PgpError::NonFinite("distilled state"));
        }
        Ok(Distilled {
            state: PgpState {
                z: self.z.clone(),
                m,
                s,
                params: self.params.clone(),
            },
            sse,
        })
    }

    /// `½ mᵀK⁻¹m + ½ log|K| + ½ M log 2π`.
    pub fn nlml(&self) -> Result<f64> {
        Ok(self.nlml_with(&self.prior_factor()?))
    }

    pub fn nlml_with(&self, factor: &PriorFactor) -> f64 {
        let half = factor
            .chol
            .half_solve(self.m.as_mat())
            .expect("factor matches state");
        let quad = half.col(0).iter().map(|v| v * v).sum::<f64>();
        0.5 * quad + 0.5 * factor.chol.log_det() + 0.5 * self.num_inducing() as f64 * (2.0 * PI).ln()
    }

    /// Gradient of [`PgpState::nlml`] with respect to `(log γ, log w_1..log w_D)`,
    /// treating `m` as fixed data.
    pub fn nlml_grad(&self) -> Result<Vec<f64>> {
        Ok(self.nlml_grad_with(&self.prior_factor()?))
    }

    pub fn nlml_grad_with(&self, factor: &PriorFactor) -> Vec<f64> {
        // dNLML/dθ = ½ tr((K⁻¹ − ααᵀ) ∂K/∂θ), α = K⁻¹m
        let mut weights = factor.chol.inverse();
        let alpha = factor.chol.solve_vec(self.m.as_ref()).expect("factor matches state");
        let n = self.num_inducing();
        for j in 0..n {
            for i in 0..n {
                weights[(i, j)] -= alpha[i] * alpha[j];
            }
        }
        let mut grad = Vec::with_capacity(1 + self.dim());
        // The jitter is proportional to γ², so ∂K̃/∂log γ = 2K̃ and the trace collapses.
        let quad = alpha.iter().zip(self.m.iter()).map(|(a, m)| a * m).sum::<f64>();
        grad.push(n as f64 - quad);
        let dw = contract_log_w_derivatives(self.z.as_ref(), factor.kzz.as_ref(), weights.as_ref(), &self.params);
        grad.extend(dw.into_iter().map(|g| 0.5 * g));
        grad
    }

    fn project(&self, factor: &PriorFactor, xstar: MatRef<'_, f64>) -> Result<Projection> {
        ensure_dim("query columns", self.dim(), xstar.ncols())?;
        ensure_dim("prior factor size", self.num_inducing(), factor.chol.dim())?;
        let kzs = kernel_matrix(self.z.as_ref(), xstar, &self.params)?;
        let a = factor.chol.solve(kzs.as_ref())?;
        Ok(Projection { kzs, a })
    }
}

/// `k(Z, Z)` and its jittered Cholesky factor.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    kzz: Mat<f64>,
    chol: Cholesky,
}

impl PriorFactor {
    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    pub fn gram(&self) -> MatRef<'_, f64> {
        self.kzz.as_ref()
    }
}

/// Result of one distillation step.
#[derive(Debug, Clone)]
pub struct Distilled {
    pub state: PgpState,
    /// `Σ (ỹ − μ(X̃))²` under the state *before* the update.
    pub sse: f64,
}

struct Projection {
    /// `k(Z, X*)`
    kzs: Mat<f64>,
    /// `K⁻¹ k(Z, X*)`
    a: Mat<f64>,
}

fn first_duplicate_row(z: MatRef<'_, f64>) -> Option<(usize, usize)> {
    let n = z.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (0..z.ncols()).all(|d| z[(i, d)] == z[(j, d)]) {
                return Some((i, j));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_eval;
    use crate::oracle::ExactGp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn well_spaced(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        Mat::from_fn(m, d, |_, _| rng.random_range(0.0..1.0))
    }

    fn random_state(m: usize, d: usize, rng: &mut ChaCha8Rng) -> PgpState {
        let z = well_spaced(m, d, rng);
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(3.0..6.0)).collect();
        let params = KernelParams::new(rng.random_range(0.7..1.5), &w, 0.3).unwrap();
        let init = PgpState::init(z.clone(), params.clone()).unwrap();
        let mvec = Col::from_fn(m, |_| rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(m, m, |_, _| rng.random_range(-0.3..0.3));
        let mut s = linalg::mul_tn(b.as_ref(), b.as_ref());
        for i in 0..m {
            s[(i, i)] += 0.05;
        }
        let _ = init;
        PgpState::from_parts(z, mvec, s, params).unwrap()
    }

    #[test]
    fn init_single_point() {
        let z = Mat::from_fn(1, 1, |_, _| 0.0);
        let st = PgpState::init(z, KernelParams::unit(1, 0.1).unwrap()).unwrap();
        assert_eq!(st.m()[0], 0.0);
        assert_eq!(st.s()[(0, 0)], 1.0);
    }

    #[test]
    fn init_rejects_bad_shapes() {
        let p = KernelParams::unit(2, 0.1).unwrap();
        assert!(PgpState::init(Mat::zeros(0, 2), p.clone()).is_err());
        assert!(PgpState::init(Mat::zeros(3, 1), p).is_err());
    }

    #[test]
    fn prior_state_predicts_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = well_spaced(6, 2, &mut rng);
        let p = KernelParams::new(1.4, &[4.0, 5.0], 0.2).unwrap();
        let st = PgpState::init(z, p.clone()).unwrap();
        let xs = well_spaced(5, 2, &mut rng);
        let pred = st.predict(xs.as_ref()).unwrap();
        for (mu, var) in pred.mean.iter().zip(&pred.variance) {
            assert!(mu.abs() < 1e-12);
            assert!((var - 1.96).abs() < 1e-9);
        }
        let cov = st.predict_cov(xs.as_ref()).unwrap();
        let prior = kernel_matrix(xs.as_ref(), xs.as_ref(), &p).unwrap();
        assert!(linalg::max_abs_diff(cov.as_ref(), prior.as_ref()) < 1e-9);
    }

    #[test]
    fn predicting_at_inducing_points_returns_m_and_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = random_state(7, 2, &mut rng);
        let pred = st.predict(st.z()).unwrap();
        let cov = st.predict_cov(st.z()).unwrap();
        for i in 0..7 {
            assert!((pred.mean[i] - st.m()[i]).abs() < 1e-8);
            assert!((pred.variance[i] - st.s()[(i, i)]).abs() < 1e-8);
        }
        assert!(linalg::max_abs_diff(cov.as_ref(), st.s()) < 1e-8);
    }

    #[test]
    fn covariance_diagonal_matches_pointwise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = random_state(5, 3, &mut rng);
        let xs = well_spaced(9, 3, &mut rng);
        let pred = st.predict(xs.as_ref()).unwrap();
        let cov = st.predict_cov(xs.as_ref()).unwrap();
        for i in 0..9 {
            assert!((cov[(i, i)].max(0.0) - pred.variance[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_state_matches_scalar_transcription() {
        let z = Mat::from_fn(2, 1, |i, _| [0.1, 0.6][i]);
        let p = KernelParams::new(1.2, &[2.5], 0.1).unwrap();
        let m = Col::from_fn(2, |i| [0.7, -0.4][i]);
        let s = Mat::from_fn(2, 2, |i, j| [[0.3, 0.05], [0.05, 0.2]][i][j]);
        let st = PgpState::from_parts(z, m, s, p.clone()).unwrap();
        let x = 0.35;
        let pred = st.predict(Mat::from_fn(1, 1, |_, _| x).as_ref()).unwrap();

        let k = |a: f64, b: f64| kernel_eval(&[a], &[b], &p).unwrap();
        let (k11, k12, k22) = (k(0.1, 0.1), k(0.1, 0.6), k(0.6, 0.6));
        let det = k11 * k22 - k12 * k12;
        let (i11, i12, i22) = (k22 / det, -k12 / det, k11 / det);
        let (a1, a2) = (k(x, 0.1), k(x, 0.6));
        let (b1, b2) = (a1 * i11 + a2 * i12, a1 * i12 + a2 * i22);
        let mean = b1 * 0.7 + b2 * -0.4;
        let var = k(x, x) - (b1 * a1 + b2 * a2) + (b1 * (0.3 * b1 + 0.05 * b2) + b2 * (0.05 * b1 + 0.2 * b2));
        assert!((pred.mean[0] - mean).abs() < 1e-12);
        assert!((pred.variance[0] - var).abs() < 1e-12);
    }

    #[test]
    fn huge_noise_teaches_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = well_spaced(5, 1, &mut rng);
        let p = KernelParams::new(1.0, &[5.0], 1e6).unwrap();
        let st = PgpState::init(z, p).unwrap();
        let x = well_spaced(20, 1, &mut rng);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let next = st.distill(&MiniBatch::new(x.as_ref(), &y).unwrap()).unwrap();
        assert!((next.m() - st.m()).norm_l2() <= 1e-6);
        assert!((next.s() - st.s()).norm_l2() <= 1e-6);
    }

    #[test]
    fn one_shot_distill_equals_exact_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = well_spaced(6, 2, &mut rng);
        let p = KernelParams::new(1.1, &[4.0, 3.5], 0.2).unwrap();
        let x = well_spaced(40, 2, &mut rng);
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let st = PgpState::init(z.clone(), p.clone()).unwrap();
        let post = st.distill(&MiniBatch::new(x.as_ref(), &y).unwrap()).unwrap();
        let exact = ExactGp::new(x, y, p).unwrap().posterior_at(z.as_ref()).unwrap();
        for i in 0..6 {
            assert!((post.m()[i] - exact.mean[i]).abs() < 1e-8 * exact.mean[i].abs().max(1.0));
        }
        assert!(linalg::max_abs_diff(post.s(), exact.cov.as_ref()) < 1e-8);
    }

    #[test]
    fn repeated_batches_shrink_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = random_state(8, 2, &mut rng);
        let x = well_spaced(5, 2, &mut rng);
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = MiniBatch::new(x.as_ref(), &y).unwrap();
        for _ in 0..2 {
            let next = st.distill(&batch).unwrap();
            for i in 0..8 {
                assert!(next.s()[(i, i)] <= st.s()[(i, i)] + 1e-12);
            }
            st = next;
        }
    }

    #[test]
    fn nlml_scalar_cases() {
        let z = Mat::from_fn(1, 1, |_, _| 0.0);
        let st = PgpState::init(z.clone(), KernelParams::unit(1, 0.1).unwrap()).unwrap();
        assert!((st.nlml().unwrap() - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((st.nlml().unwrap() - 0.918939).abs() < 1e-6);

        let gamma: f64 = 1.7;
        let c = 0.9;
        let p = KernelParams::new(gamma, &[1.0], 0.1).unwrap();
        let st = PgpState::from_parts(z, Col::from_fn(1, |_| c), Mat::identity(1, 1), p).unwrap();
        let expected = c * c / (2.0 * gamma * gamma) + gamma.ln() + 0.5 * (2.0 * PI).ln();
        assert!((st.nlml().unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn nlml_of_zero_mean_is_log_det_plus_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = well_spaced(5, 2, &mut rng);
        let p = KernelParams::new(0.9, &[5.0, 4.0], 0.1).unwrap();
        let st = PgpState::init(z.clone(), p.clone()).unwrap();
        let k = kernel_matrix(z.as_ref(), z.as_ref(), &p).unwrap();
        let expected = 0.5 * k.determinant().ln() + 2.5 * (2.0 * PI).ln();
        assert!((st.nlml().unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn single_point_gradient() {
        let z = Mat::from_fn(1, 2, |_, _| 0.3);
        let st = PgpState::init(z, KernelParams::new(1.3, &[2.0, 0.5], 0.1).unwrap()).unwrap();
        let g = st.nlml_grad().unwrap();
        assert!((g[0] - 1.0).abs() < 1e-14);
        assert_eq!(&g[1..], &[0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let st = random_state(6, 3, &mut rng);
            let g = st.nlml_grad().unwrap();
            let h = 1e-5;
            let base = st.params().hyper_vector();
            for j in 0..base.len() {
                let mut plus = base.clone();
                plus[j] += h;
                let mut minus = base.clone();
                minus[j] -= h;
                let fp = st.with_params(st.params().with_hyper_vector(&plus).unwrap()).unwrap().nlml().unwrap();
                let fm = st.with_params(st.params().with_hyper_vector(&minus).unwrap()).unwrap().nlml().unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "coord {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn batch_dimension_errors() {
        let st = PgpState::init(Mat::zeros(1, 2), KernelParams::unit(2, 0.1).unwrap()).unwrap();
        let x = Mat::<f64>::zeros(2, 3);
        let y = [0.0, 1.0];
        assert!(st.distill(&MiniBatch::new(x.as_ref(), &y).unwrap()).is_err());
        assert!(MiniBatch::new(x.as_ref(), &y[..1]).is_err());
        assert!(st.predict(x.as_ref()).is_err());
    }
}
