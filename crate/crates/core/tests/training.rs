use pgp_core::linalg::Cholesky;
use pgp_core::{
    evaluate, kernel_matrix, resume, synth_1d, synth_highdim, train, Checkpoint, Dataset, KernelParams, Mat, Schedule,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn small_config(iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(12, 25, Schedule::Iterations(iters));
    cfg.eval_every = 10;
    cfg.seed = 17;
    cfg
}

#[test]
fn identical_runs_give_identical_reports() {
    let ds = synth_highdim(600, 3, 2, 0.2, 4).unwrap();
    let test = synth_highdim(200, 3, 2, 0.2, 5).unwrap();
    let a = train(&ds, &small_config(50), Some(&test)).unwrap();
    let b = train(&ds, &small_config(50), Some(&test)).unwrap();
    assert_eq!(a.report.history, b.report.history);
    assert_eq!(a.state, b.state);
    assert_eq!(a.report.history.len(), 5);
    for rec in &a.report.history {
        assert!(rec.nlml.is_finite() && rec.train_mse.is_finite());
        assert!(rec.test_mse.unwrap().is_finite());
    }
}

#[test]
fn resume_continues_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.pgp");
    let ds = synth_highdim(600, 3, 2, 0.2, 8).unwrap();

    let full = train(&ds, &small_config(40), None).unwrap();

    let mut first = small_config(23);
    first.checkpoint_path = Some(ckpt.clone());
    train(&ds, &first, None).unwrap();
    let saved = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(saved.model.metadata.iterations, 23);
    let resumed = resume(&ds, &small_config(40), None, saved).unwrap();

    assert_eq!(resumed.state, full.state);
    assert_eq!(resumed.optimizer, full.optimizer);
    assert_eq!(resumed.report.history.last(), full.report.history.last());
}

#[test]
fn resume_rejects_other_data() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.pgp");
    let mut cfg = small_config(10);
    cfg.checkpoint_path = Some(ckpt.clone());
    train(&synth_highdim(600, 3, 2, 0.2, 8).unwrap(), &cfg, None).unwrap();
    let other = synth_highdim(600, 3, 2, 0.2, 9).unwrap();
    assert!(resume(&other, &small_config(20), None, Checkpoint::load(&ckpt).unwrap()).is_err());
}

/// Uniform inputs with two corner rows pinning the min/max normalization to the identity.
fn prior_sample(n: usize, params: &KernelParams, rng: &mut ChaCha8Rng) -> Dataset {
    let mut x = Mat::from_fn(n, 2, |_, _| rng.random_range(0.0..1.0));
    x[(0, 0)] = 0.0;
    x[(0, 1)] = 0.0;
    x[(1, 0)] = 1.0;
    x[(1, 1)] = 1.0;
    let k = kernel_matrix(x.as_ref(), x.as_ref(), params).unwrap();
    let chol = Cholesky::factor(k.as_ref(), params.signal_variance()).unwrap();
    let l = chol.factor_ref();
    let e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let y = (0..n)
        .map(|i| {
            let f: f64 = (0..=i).map(|j| l[(i, j)] * e[j]).sum();
            let noise: f64 = StandardNormal.sample(rng);
            f + params.sigma_eps() * noise
        })
        .collect();
    Dataset::new(x, y, vec!["a".into(), "b".into()], "y").unwrap()
}

#[test]
fn frozen_model_beats_zero_predictor_on_its_own_prior() {
    let params = KernelParams::new(1.0, &[3.0, 3.0], 0.1).unwrap();
    let mut wins = 0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = prior_sample(600, &params, &mut rng);
        let (train_rows, test_rows): (Vec<usize>, Vec<usize>) = (0..600).partition(|i| i % 3 != 0);
        let (train_ds, test_ds) = (ds.subset(&train_rows), ds.subset(&test_rows));
        let mut cfg = TrainConfig::new(30, 20, Schedule::Epochs(1));
        cfg.learn_hyperparameters = false;
        cfg.log_w_init = Some(3f64.ln());
        cfg.seed = seed;
        let out = train(&train_ds, &cfg, None).unwrap();
        let rep = evaluate(&out.state, &out.normalizer, &test_ds).unwrap();
        wins += usize::from(rep.mse <= rep.baseline_mse);
    }
    assert!(wins >= 3, "{wins}/5");
}

#[test]
fn one_epoch_on_the_curve_learns_it() {
    let ds = synth_1d(3000, 0.1, 21).unwrap();
    let test = synth_1d(1000, 0.1, 22).unwrap();
    let out = train(&ds, &TrainConfig::new(8, 1, Schedule::Epochs(1)), None).unwrap();
    assert_eq!(out.report.iterations, 3000);
    let rep = evaluate(&out.state, &out.normalizer, &test).unwrap();
    assert!(rep.mse < 0.25, "{}", rep.mse);
}
