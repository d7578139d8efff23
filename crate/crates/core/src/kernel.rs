//! Squared exponential covariance with automatic relevance determination:
//!
//! `k(x, x') = γ² exp(−½ Σ_d w_d² (x_d − x'_d)²)`
//!
//! All hyperparameters are stored as logarithms so that any real-valued
//! optimizer step keeps them positive.

use faer::{Mat, MatRef};

use crate::error::{ensure_dim, PgpError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    /// `log γ`, the log signal amplitude.
    pub log_gamma: f64,
    /// `log w_d`, log inverse lengthscales, one per input dimension.
    pub log_w: Vec<f64>,
    /// `log σ_ε`, the log observation-noise standard deviation.
    pub log_sigma_eps: f64,
}

impl KernelParams {
    /// Builds parameters from their natural (positive) values.
    pub fn new(gamma: f64, w: &[f64], sigma_eps: f64) -> Result<Self> {
        if !(gamma > 0.0 && sigma_eps > 0.0 && w.iter().all(|&v| v > 0.0)) {
            return Err(PgpError::Config(
                "kernel hyperparameters must be strictly positive".into(),
            ));
        }
        Self::from_log(gamma.ln(), w.iter().map(|v| v.ln()).collect(), sigma_eps.ln())
    }

    pub fn from_log(log_gamma: f64, log_w: Vec<f64>, log_sigma_eps: f64) -> Result<Self> {
        let params = KernelParams {
            log_gamma,
            log_w,
            log_sigma_eps,
        };
        params.validate()?;
        Ok(params)
    }

    /// `γ = 1`, `w_d = 1`, and the given noise level.
    pub fn unit(dim: usize, sigma_eps: f64) -> Result<Self> {
        Self::new(1.0, &vec![1.0; dim], sigma_eps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_w.is_empty() {
            return Err(PgpError::Config("kernel needs at least one input dimension".into()));
        }
        let finite_positive = |v: f64| v.is_finite() && v.exp().is_finite() && v.exp() > 0.0;
        let ok = finite_positive(self.log_gamma)
            && finite_positive(self.log_sigma_eps)
            && self.log_w.iter().all(|&v| finite_positive(v));
        if ok {
            Ok(())
        } else {
            Err(PgpError::NonFinite("kernel hyperparameters"))
        }
    }

    pub fn dim(&self) -> usize {
        self.log_w.len()
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }

    /// `γ²`, the prior variance `k(x, x)`.
    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_gamma).exp()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_w.iter().map(|v| v.exp()).collect()
    }

    pub fn sigma_eps(&self) -> f64 {
        self.log_sigma_eps.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_sigma_eps).exp()
    }

    /// The trainable vector `(log γ, log w_1, …, log w_D)`.
    pub fn hyper_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.dim());
        v.push(self.log_gamma);
        v.extend_from_slice(&self.log_w);
        v
    }

    pub fn with_hyper_vector(&self, hyper: &[f64]) -> Result<Self> {
        ensure_dim("hyperparameter vector", 1 + self.dim(), hyper.len())?;
        Self::from_log(hyper[0], hyper[1..].to_vec(), self.log_sigma_eps)
    }
}

#[inline]
fn scaled_sq_dist(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((a, b), wd) in x.iter().zip(y).zip(w) {
        let t = wd * (a - b);
        acc += t * t;
    }
    acc
}

/// `k(x, x')` for a single pair of points.
pub fn kernel_eval(x: &[f64], x_prime: &[f64], params: &KernelParams) -> Result<f64> {
    ensure_dim("kernel_eval x", params.dim(), x.len())?;
    ensure_dim("kernel_eval x'", params.dim(), x_prime.len())?;
    let w = params.weights();
    Ok(params.signal_variance() * (-0.5 * scaled_sq_dist(x, x_prime, &w)).exp())
}

pub(crate) fn rows_of(a: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Gram matrix with entries `k(a_i, b_j)`.
pub fn kernel_matrix(a: MatRef<'_, f64>, b: MatRef<'_, f64>, params: &KernelParams) -> Result<Mat<f64>> {
    ensure_dim("kernel_matrix A columns", params.dim(), a.ncols())?;
    ensure_dim("kernel_matrix B columns", params.dim(), b.ncols())?;
    let w = params.weights();
    let gamma2 = params.signal_variance();
    // Dimension-major copy of `a` so the inner loop runs over contiguous rows.
    let a_cols: Vec<Vec<f64>> = (0..a.ncols()).map(|d| a.col(d).iter().copied().collect()).collect();
    let mut k = Mat::<f64>::zeros(a.nrows(), b.nrows());
    for j in 0..b.nrows() {
        let col = k.col_as_slice_mut(j);
        for (d, (ad, wd)) in a_cols.iter().zip(&w).enumerate() {
            let bjd = b[(j, d)];
            for (acc, &aid) in col.iter_mut().zip(ad) {
                let t = wd * (aid - bjd);
                *acc += t * t;
            }
        }
        for v in col.iter_mut() {
            *v = gamma2 * (-0.5 * *v).exp();
        }
    }
    Ok(k)
}

/// `∂K/∂log w_d = K ∘ (−w_d² (a_id − a_jd)²)` for the symmetric Gram matrix
/// `K = k(A, A)`, contracted against `weights`: returns
/// `Σ_ij weights_ij ∂K_ij/∂log w_d` for every `d`.
pub(crate) fn contract_log_w_derivatives(
    a: MatRef<'_, f64>,
    k: MatRef<'_, f64>,
    weights: MatRef<'_, f64>,
    params: &KernelParams,
) -> Vec<f64> {
    let w = params.weights();
    let n = a.nrows();
    let rows = rows_of(a);
    let mut out = vec![0.0; params.dim()];
    for j in 0..n {
        for i in (j + 1)..n {
            let coef = (weights[(i, j)] + weights[(j, i)]) * k[(i, j)];
            for (d, slot) in out.iter_mut().enumerate() {
                let t = w[d] * (rows[i][d] - rows[j][d]);
                *slot -= coef * t * t;
            }
        }
    }
    out
}
