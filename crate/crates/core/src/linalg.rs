//! Dense double-precision helpers, including the jittered
//! Cholesky factorization used for every `K⁻¹` in the model.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Accum, Col, ColRef, Mat, MatRef, Par};

use crate::error::{ensure_dim, PgpError, Result};

/// First nonzero relative jitter level.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

const PAR: Par = Par::Seq;

/// `a * b`.
pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, PAR);
    out
}

/// `aᵀ * b`.
pub fn mul_tn(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    mul(a.transpose(), b)
}

/// `a * x`.
pub fn mul_vec(a: MatRef<'_, f64>, x: ColRef<'_, f64>) -> Col<f64> {
    let mut out = Col::zeros(a.nrows());
    matmul(out.as_mat_mut(), Accum::Replace, a, x.as_mat(), 1.0, PAR);
    out
}

/// `aᵀ * x`.
pub fn mul_tn_vec(a: MatRef<'_, f64>, x: ColRef<'_, f64>) -> Col<f64> {
    mul_vec(a.transpose(), x)
}

/// `c ← c − aᵀb` for a product known to be symmetric: only the lower
/// triangle is computed, then mirrored, so `c` must start symmetric.
pub fn sub_tn_symmetric(c: &mut Mat<f64>, a: MatRef<'_, f64>, b: MatRef<'_, f64>) {
    let n = c.nrows();
    debug_assert_eq!(n, c.ncols());
    triangular::matmul(
        c.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Add,
        a.transpose(),
        BlockStructure::Rectangular,
        b,
        BlockStructure::Rectangular,
        -1.0,
        PAR,
    );
    for j in 0..n {
        for i in (j + 1)..n {
            c[(j, i)] = c[(i, j)];
        }
    }
}

/// Replaces `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `max |a_ij − a_ji|`.
pub fn max_asymmetry(a: MatRef<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    debug_assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut worst = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}

pub fn all_finite(a: MatRef<'_, f64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite()))
}

/// Lower Cholesky factor of `K + jitter·I`.
///
/// The factorization is first attempted without jitter and accepted only if
/// every squared pivot is at least `JITTER_START · scale`. Otherwise the
/// jitter `λ · scale` is applied with `λ` stepping ×10 from `JITTER_START`
/// to `JITTER_MAX`. `scale` is the natural magnitude of the diagonal
/// (γ² for a kernel Gram matrix).
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat<f64>,
    jitter: f64,
}

impl Cholesky {
    pub fn factor(k: MatRef<'_, f64>, scale: f64) -> Result<Self> {
        ensure_dim("cholesky (square)", k.nrows(), k.ncols())?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(PgpError::NonFinite("cholesky scale"));
        }
        let floor = JITTER_START * scale;
        if let Some(l) = try_factor(k, 0.0) {
            let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot >= floor {
                return Ok(Cholesky { l, jitter: 0.0 });
            }
        }
        let mut jitter = floor;
        for exponent in -8..=-4 {
            jitter = 10f64.powi(exponent) * scale;
            if let Some(l) = try_factor(k, jitter) {
                return Ok(Cholesky { l, jitter });
            }
        }
        Err(PgpError::NotPositiveDefinite { jitter })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Absolute jitter that was added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The lower-triangular factor. Entries above the diagonal are not meaningful.
    pub fn factor_ref(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    /// `log |K + jitter·I| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// `L⁻¹ b`.
    pub fn half_solve(&self, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
        ensure_dim("cholesky half-solve rows", self.dim(), b.nrows())?;
        let mut x = b.to_owned();
        solve_lower_triangular_in_place(self.l.as_ref(), x.as_mut(), PAR);
        Ok(x)
    }

    /// `(K + jitter·I)⁻¹ b`.
    pub fn solve(&self, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let mut x = self.half_solve(b)?;
        solve_upper_triangular_in_place(self.l.transpose(), x.as_mut(), PAR);
        Ok(x)
    }

    pub fn solve_vec(&self, b: ColRef<'_, f64>) -> Result<Col<f64>> {
        let x = self.solve(b.as_mat())?;
        Ok(x.col(0).to_owned())
    }

    pub fn inverse(&self) -> Mat<f64> {
        let n = self.dim();
        let mut inv = self
            .solve(Mat::<f64>::identity(n, n).as_ref())
            .expect("identity has matching dimension");
        symmetrize(&mut inv);
        inv
    }
}

fn try_factor(k: MatRef<'_, f64>, jitter: f64) -> Option<Mat<f64>> {
    let n = k.nrows();
    let mut l = Mat::from_fn(n, n, |i, j| if i >= j { k[(i, j)] } else { 0.0 });
    if jitter > 0.0 {
        for i in 0..n {
            l[(i, i)] += jitter;
        }
    }
    let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, PAR, Default::default()));
    let stack = MemStack::new(&mut mem);
    cholesky_in_place(l.as_mut(), Default::default(), PAR, stack, Default::default()).ok()?;
    for j in 1..n {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    let healthy = (0..n).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0);
    healthy.then_some(l)
}

/// Solves `K X = B` and returns `(X, log |K + jitter·I|)`.
pub fn chol_solve(k: MatRef<'_, f64>, b: MatRef<'_, f64>, scale: f64) -> Result<(Mat<f64>, f64)> {
    let chol = Cholesky::factor(k, scale)?;
    let x = chol.solve(b)?;
    Ok((x, chol.log_det()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_update_matches_full_product() {
        let a = Mat::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let b = a.clone();
        let mut c = Mat::<f64>::identity(6, 6);
        sub_tn_symmetric(&mut c, a.as_ref(), b.as_ref());
        let want = Mat::<f64>::identity(6, 6) - mul_tn(a.as_ref(), b.as_ref());
        assert!(max_abs_diff(c.as_ref(), want.as_ref()) < 1e-12);
        assert_eq!(max_asymmetry(c.as_ref()), 0.0);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut k = mul_tn(a.as_ref(), a.as_ref());
        for i in 0..n {
            k[(i, i)] += 0.5;
        }
        k
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let k = Mat::<f64>::identity(3, 3);
        let b = Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        let (x, logdet) = chol_solve(k.as_ref(), b.as_ref(), 1.0).unwrap();
        assert_eq!(max_abs_diff(x.as_ref(), b.as_ref()), 0.0);
        assert_eq!(logdet, 0.0);
    }

    #[test]
    fn diagonal_solve() {
        let k = Mat::from_fn(1, 1, |_, _| 4.0);
        let b = Mat::from_fn(1, 1, |_, _| 2.0);
        let (x, logdet) = chol_solve(k.as_ref(), b.as_ref(), 4.0).unwrap();
        assert_eq!(x[(0, 0)], 0.5);
        assert!((logdet - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn multiply_then_solve_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = random_spd(5, &mut rng);
            let x = Mat::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
            let b = mul(k.as_ref(), x.as_ref());
            let (solved, _) = chol_solve(k.as_ref(), b.as_ref(), 1.0).unwrap();
            let rel = max_abs_diff(solved.as_ref(), x.as_ref()) / x.norm_max();
            assert!(rel < 1e-10, "relative error {rel}");
        }
    }

    #[test]
    fn log_det_matches_direct_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            let k = random_spd(n, &mut rng);
            let chol = Cholesky::factor(k.as_ref(), 1.0).unwrap();
            assert_eq!(chol.jitter(), 0.0);
            let direct = k.determinant().ln();
            let rel = (chol.log_det() - direct).abs() / direct.abs().max(1e-300);
            assert!(rel < 1e-10 || (chol.log_det() - direct).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn singular_matrix_gets_smallest_jitter() {
        let k = Mat::from_fn(3, 3, |_, _| 1.0);
        let chol = Cholesky::factor(k.as_ref(), 1.0).unwrap();
        assert!(chol.jitter() > 0.0 && chol.jitter() <= JITTER_START * 1.0001);
    }

    #[test]
    fn indefinite_matrix_reports_final_jitter() {
        let k = Mat::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        match Cholesky::factor(k.as_ref(), 2.0) {
            Err(PgpError::NotPositiveDefinite { jitter }) => {
                assert!((jitter - JITTER_MAX * 2.0).abs() < 1e-18)
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn non_square_is_rejected() {
        let k = Mat::<f64>::zeros(2, 3);
        assert!(matches!(
            Cholesky::factor(k.as_ref(), 1.0),
            Err(PgpError::Dimension { .. })
        ));
    }

    #[test]
    fn rhs_row_mismatch_is_rejected() {
        let chol = Cholesky::factor(Mat::<f64>::identity(3, 3).as_ref(), 1.0).unwrap();
        assert!(chol.solve(Mat::<f64>::zeros(2, 1).as_ref()).is_err());
    }

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let mut a = Mat::from_fn(2, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(max_asymmetry(a.as_ref()), 1.0);
        symmetrize(&mut a);
        assert_eq!(max_asymmetry(a.as_ref()), 0.0);
        assert_eq!(a[(0, 1)], 1.5);
    }
}
