//! Exact full-data Gaussian process regression for small `N`.
//!
//! This is ground truth for tests. It shares only the kernel with the
//! parametric model and factorizes `K_XX + σ²I` directly, with no jitter.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{ensure_dim, PgpError, Result};
use crate::kernel::{kernel_matrix, KernelParams};

pub const DEFAULT_CAP: usize = 2000;

#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub mean: Vec<f64>,
    pub cov: Mat<f64>,
}

/// Training data plus the factorization of `K_XX + σ_ε² I`.
#[derive(Debug)]
pub struct ExactGp {
    x: Mat<f64>,
    y: Vec<f64>,
    params: KernelParams,
    llt: faer::linalg::solvers::Llt<f64>,
}

impl ExactGp {
    pub fn new(x: Mat<f64>, y: Vec<f64>, params: KernelParams) -> Result<Self> {
        Self::with_cap(x, y, params, DEFAULT_CAP)
    }

    pub fn with_cap(x: Mat<f64>, y: Vec<f64>, params: KernelParams, cap: usize) -> Result<Self> {
        ensure_dim("oracle targets", x.nrows(), y.len())?;
        ensure_dim("oracle input columns", params.dim(), x.ncols())?;
        if x.nrows() == 0 {
            return Err(PgpError::Config("exact GP needs at least one training point".into()));
        }
        if x.nrows() > cap {
            return Err(PgpError::Config(format!(
                "exact GP limited to {cap} points, got {}",
                x.nrows()
            )));
        }
        let mut kxx = kernel_matrix(x.as_ref(), x.as_ref(), &params)?;
        let noise = params.noise_variance();
        for i in 0..x.nrows() {
            kxx[(i, i)] += noise;
        }
        let llt = kxx
            .llt(Side::Lower)
            .map_err(|_| PgpError::NotPositiveDefinite { jitter: 0.0 })?;
        Ok(ExactGp { x, y, params, llt })
    }

    /// Posterior mean and covariance of the latent function at `xq`.
    pub fn posterior_at(&self, xq: MatRef<'_, f64>) -> Result<ExactPosterior> {
        let kxq = kernel_matrix(self.x.as_ref(), xq, &self.params)?;
        let kqq = kernel_matrix(xq, xq, &self.params)?;
        let yv = Mat::from_fn(self.y.len(), 1, |i, _| self.y[i]);
        let alpha = self.llt.solve(&yv);
        let mean_mat = kxq.transpose() * &alpha;
        let v = self.llt.solve(&kxq);
        let cov = &kqq - kxq.transpose() * &v;
        Ok(ExactPosterior {
            mean: (0..xq.nrows()).map(|i| mean_mat[(i, 0)]).collect(),
            cov,
        })
    }

    /// The same posterior through an explicit matrix inverse. Only sensible for tiny `N`.
    pub fn posterior_via_inverse(&self, xq: MatRef<'_, f64>) -> Result<ExactPosterior> {
        let mut kxx = kernel_matrix(self.x.as_ref(), self.x.as_ref(), &self.params)?;
        for i in 0..self.x.nrows() {
            kxx[(i, i)] += self.params.noise_variance();
        }
        let inv = kxx.partial_piv_lu().inverse();
        let kxq = kernel_matrix(self.x.as_ref(), xq, &self.params)?;
        let kqq = kernel_matrix(xq, xq, &self.params)?;
        let weights = kxq.transpose() * &inv;
        let mean = (0..xq.nrows())
            .map(|q| (0..self.y.len()).map(|i| weights[(q, i)] * self.y[i]).sum())
            .collect();
        let cov = &kqq - &weights * &kxq;
        Ok(ExactPosterior { mean, cov })
    }
}
