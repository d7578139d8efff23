//! Shared fixtures for the benchmarks.

use pgp_core::{kmeans, synth_highdim, Dataset, KMeansConfig, KernelParams, Mat, Normalizer, PgpState};

/// Normalized synthetic rows with `d` inputs, two of them informative.
pub fn normalized_rows(n: usize, d: usize, seed: u64) -> Dataset {
    let ds = synth_highdim(n, d, d.min(2), 0.3, seed).expect("valid synthetic shape");
    Normalizer::fit(&ds).and_then(|norm| norm.apply(&ds)).expect("non-degenerate columns")
}

/// A state with `m` inducing points placed by k-means, after one distilled batch.
pub fn warm_state(m: usize, d: usize) -> PgpState {
    let data = normalized_rows(4 * m.max(64), d, 1);
    let z = kmeans(data.x.as_ref(), &KMeansConfig::new(m, 0)).expect("enough rows for k-means");
    let w = vec![(12f64).sqrt(); d];
    let state = PgpState::init(z, KernelParams::new(1.0, &w, 0.1).expect("positive parameters")).expect("valid Z");
    let rows: Vec<usize> = (0..m).collect();
    let (x, y) = data.gather(&rows);
    let batch = pgp_core::MiniBatch::new(x.as_ref(), &y).expect("matching rows");
    state.distill(&batch).expect("well-posed update")
}

/// The first `n` rows of a fresh normalized sample, as a mini-batch source.
pub fn batch(n: usize, d: usize) -> (Mat<f64>, Vec<f64>) {
    let data = normalized_rows(n.max(64), d, 2);
    let rows: Vec<usize> = (0..n).collect();
    data.gather(&rows)
}
