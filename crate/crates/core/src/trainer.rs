//! Mini-batch training: normalize, place inducing points by k-means, then
//! alternate distillation of each batch with one Adam step on the
//! log-hyperparameters.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use faer::Mat;
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, KMeansConfig};
use crate::data::{Dataset, Normalizer};
use crate::error::{PgpError, Result};
use crate::kernel::KernelParams;
use crate::model_file::{ModelFile, TrainingMetadata};
use crate::optimizer::{AdamConfig, AdamState};
use crate::pgp::{MiniBatch, PgpState};

/// Rows per prediction chunk during evaluation.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Iterations(usize),
    /// Full passes; each pass is `⌈N / batch_size⌉` iterations.
    Epochs(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub m_inducing: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    /// Noise standard deviation in normalized target units; held fixed.
    pub sigma_eps_init: f64,
    /// Starting `log w_d` for every input. `None` picks `−ln sd_d` of each
    /// normalized training column, a unit lengthscale in standardized inputs.
    pub log_w_init: Option<f64>,
    /// When false, θ stays at its initial value and only `(m, S)` are learned.
    pub learn_hyperparameters: bool,
    pub seed: u64,
    pub eval_every: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_rel_tol: f64,
    pub kmeans_sample_cap: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Recorded in the model metadata.
    pub source: String,
}

impl TrainConfig {
    pub fn new(m_inducing: usize, batch_size: usize, schedule: Schedule) -> Self {
        TrainConfig {
            m_inducing,
            batch_size,
            schedule,
            adam: AdamConfig::default(),
            sigma_eps_init: 0.1,
            log_w_init: None,
            learn_hyperparameters: true,
            seed: 0,
            eval_every: 100,
            kmeans_max_iters: 100,
            kmeans_rel_tol: 1e-6,
            kmeans_sample_cap: 100_000,
            checkpoint_path: None,
            source: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PgpError::Config(msg.to_string()));
        if self.m_inducing == 0 {
            return bad("m_inducing must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if matches!(self.schedule, Schedule::Iterations(0) | Schedule::Epochs(0)) {
            return bad("need at least one iteration");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !(self.sigma_eps_init > 0.0 && self.sigma_eps_init.is_finite()) {
            return bad("sigma_eps_init must be positive");
        }
        if self.log_w_init.is_some_and(|v| !v.is_finite()) {
            return bad("log_w_init must be finite");
        }
        self.adam.validate()
    }

    pub fn total_iterations(&self, n_train: usize) -> usize {
        match self.schedule {
            Schedule::Iterations(n) => n,
            Schedule::Epochs(e) => e * n_train.div_ceil(self.batch_size),
        }
    }

    fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.m_inducing,
            max_iters: self.kmeans_max_iters,
            rel_tol: self.kmeans_rel_tol,
            seed: self.seed,
            sample_cap: self.kmeans_sample_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    pub nlml: f64,
    /// Mean squared one-step-ahead residual over the batches since the previous record.
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimings {
    pub clustering: Duration,
    pub distill: Duration,
    pub hyper_step: Duration,
    pub evaluation: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EvalRecord>,
    pub iterations: usize,
    pub data_fingerprint: String,
    pub timings: PhaseTimings,
}

impl TrainReport {
    /// Writes `iteration,nlml,train_mse,test_mse`; `test_mse` is empty when absent.
    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| PgpError::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "iteration,nlml,train_mse,test_mse").map_err(io)?;
        for r in &self.history {
            let test = r.test_mse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(f, "{},{},{},{}", r.iteration, r.nlml, r.train_mse, test).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub state: PgpState,
    pub normalizer: Normalizer,
    pub report: TrainReport,
    pub optimizer: AdamState,
}

impl Trained {
    pub fn model_file(&self, train: &Dataset, cfg: &TrainConfig) -> ModelFile {
        ModelFile {
            state: self.state.clone(),
            normalizer: self.normalizer.clone(),
            column_names: train.column_names.clone(),
            target_name: train.target_name.clone(),
            metadata: TrainingMetadata {
                seed: cfg.seed,
                iterations: self.report.iterations as u64,
                data_fingerprint: self.report.data_fingerprint.clone(),
                source: cfg.source.clone(),
            },
        }
    }
}

/// Model plus optimizer moments, enough to continue a run exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelFile,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct OptimizerSidecar {
    optimizer: AdamState,
}

impl Checkpoint {
    pub fn optimizer_path(model_path: &Path) -> PathBuf {
        let mut p = model_path.as_os_str().to_owned();
        p.push(".adam.json");
        PathBuf::from(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.model.save(path)?;
        let side = Self::optimizer_path(path);
        let json = serde_json::to_vec_pretty(&OptimizerSidecar {
            optimizer: self.optimizer.clone(),
        })
        .map_err(|e| PgpError::Format(e.to_string()))?;
        std::fs::write(&side, json).map_err(|e| PgpError::io(side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let model = ModelFile::load(path)?;
        let side = Self::optimizer_path(path);
        let bytes = std::fs::read(&side).map_err(|e| PgpError::io(&side, e))?;
        let OptimizerSidecar { optimizer } =
            serde_json::from_slice(&bytes).map_err(|e| PgpError::Format(e.to_string()))?;
        Ok(Checkpoint { model, optimizer })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    /// MSE of predicting the training mean, i.e. zero in normalized units.
    pub baseline_mse: f64,
    pub rows: usize,
}

/// Normalized-target MSE of the predictive mean on a raw-unit dataset.
pub fn evaluate(state: &PgpState, normalizer: &Normalizer, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(PgpError::Data("cannot evaluate on zero rows".into()));
    }
    let factor = state.prior_factor()?;
    let mut sse = 0.0;
    let mut baseline = 0.0;
    let rows: Vec<usize> = (0..ds.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (x, y) = ds.gather(chunk);
        let xn = normalizer.apply_x(x.as_ref())?;
        let pred = state.predict_with(&factor, xn.as_ref())?;
        for (mu, &raw) in pred.mean.iter().zip(&y) {
            let t = normalizer.apply_y(raw);
            sse += (t - mu) * (t - mu);
            baseline += t * t;
        }
    }
    let n = ds.len() as f64;
    Ok(EvalReport {
        mse: sse / n,
        baseline_mse: baseline / n,
        rows: ds.len(),
    })
}

pub fn train(train_ds: &Dataset, cfg: &TrainConfig, test_ds: Option<&Dataset>) -> Result<Trained> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(PgpError::Data("training set is empty".into()));
    }
    if cfg.m_inducing > train_ds.len() {
        return Err(PgpError::Config(format!(
            "m_inducing = {} exceeds the {} training rows",
            cfg.m_inducing,
            train_ds.len()
        )));
    }
    let normalizer = Normalizer::fit(train_ds)?;
    let normalized = normalizer.apply(train_ds)?;

    let t0 = Instant::now();
    let z = kmeans(normalized.x.as_ref(), &cfg.kmeans_config())?;
    let clustering = t0.elapsed();
    info!("placed {} inducing points in {:.2?}", cfg.m_inducing, clustering);

    let params = initial_params(&normalized, cfg)?;
    let state = PgpState::init(z, params)?;
    let optimizer = AdamState::new(cfg.adam, 1 + train_ds.dim())?;
    let mut run = Run::new(train_ds, normalized, normalizer, cfg, test_ds, state, optimizer, 0)?;
    run.timings.clustering = clustering;
    run.execute()
}

/// `log γ = 0`, `σ_ε = sigma_eps_init` and per-column `log w_d`.
pub fn initial_params(normalized: &Dataset, cfg: &TrainConfig) -> Result<KernelParams> {
    let n = normalized.len() as f64;
    let log_w = (0..normalized.dim())
        .map(|j| match cfg.log_w_init {
            Some(v) => v,
            None => {
                let col = normalized.x.col(j);
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                if var > 0.0 {
                    -0.5 * var.ln()
                } else {
                    0.0
                }
            }
        })
        .collect();
    KernelParams::from_log(0.0, log_w, cfg.sigma_eps_init.ln())
}

/// Continues a run from a checkpoint written by [`train`] with the same data and config.
pub fn resume(train_ds: &Dataset, cfg: &TrainConfig, test_ds: Option<&Dataset>, checkpoint: Checkpoint) -> Result<Trained> {
    cfg.validate()?;
    let model = checkpoint.model;
    if model.state.dim() != train_ds.dim() || model.state.num_inducing() != cfg.m_inducing {
        return Err(PgpError::Config("checkpoint does not match the data or config".into()));
    }
    if model.metadata.data_fingerprint != train_ds.fingerprint() {
        return Err(PgpError::Config("checkpoint was written for different training data".into()));
    }
    let normalized = model.normalizer.apply(train_ds)?;
    let done = model.metadata.iterations as usize;
    let run = Run::new(train_ds, normalized, model.normalizer, cfg, test_ds, model.state, checkpoint.optimizer, done)?;
    run.execute()
}

struct Run<'a> {
    raw: &'a Dataset,
    data: Dataset,
    normalizer: Normalizer,
    cfg: &'a TrainConfig,
    test: Option<&'a Dataset>,
    state: PgpState,
    optimizer: AdamState,
    start: usize,
    total: usize,
    fingerprint: String,
    timings: PhaseTimings,
}

impl<'a> Run<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        raw: &'a Dataset,
        data: Dataset,
        normalizer: Normalizer,
        cfg: &'a TrainConfig,
        test: Option<&'a Dataset>,
        state: PgpState,
        optimizer: AdamState,
        start: usize,
    ) -> Result<Self> {
        let total = cfg.total_iterations(data.len());
        if start > total {
            return Err(PgpError::Config(format!(
                "checkpoint is at iteration {start}, beyond the scheduled {total}"
            )));
        }
        Ok(Run {
            raw,
            data,
            normalizer,
            cfg,
            test,
            state,
            optimizer,
            start,
            total,
            fingerprint: raw.fingerprint(),
            timings: PhaseTimings::default(),
        })
    }

    fn execute(mut self) -> Result<Trained> {
        let n = self.data.len();
        let b = self.cfg.batch_size.min(n);
        let per_epoch = n.div_ceil(b);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5eed_ba7c_4000_0001);
        let mut order: Vec<usize> = (0..n).collect();
        // Replay the shuffles of every epoch already begun so a resumed run sees the same batches.
        let mut epoch = None;
        let mut history = Vec::new();
        let (mut sse, mut seen) = (0.0, 0usize);
        let mut factor = self.state.prior_factor()?;

        for it in self.start..self.total {
            let this_epoch = it / per_epoch;
            while epoch.is_none_or(|e| e < this_epoch) {
                order.shuffle(&mut rng);
                epoch = Some(epoch.map_or(0, |e| e + 1));
            }
            let pos = it % per_epoch;
            let rows = &order[pos * b..((pos + 1) * b).min(n)];
            let (bx, by) = self.data.gather(rows);

            match self.iterate(&mut factor, bx, &by) {
                Ok(batch_sse) => {
                    sse += batch_sse;
                    seen += rows.len();
                }
                Err(err) => return Err(self.abort(it, err)),
            }

            let done = it + 1;
            if done % self.cfg.eval_every == 0 || done == self.total {
                let t = Instant::now();
                let nlml = self.state.nlml_with(&factor);
                if !nlml.is_finite() {
                    return Err(self.abort(it, PgpError::NonFinite("NLML")));
                }
                let test_mse = match self.test {
                    Some(ds) => Some(evaluate(&self.state, &self.normalizer, ds)?.mse),
                    None => None,
                };
                let record = EvalRecord {
                    iteration: done,
                    nlml,
                    train_mse: sse / seen.max(1) as f64,
                    test_mse,
                };
                debug!("{record:?}");
                history.push(record);
                (sse, seen) = (0.0, 0);
                self.timings.evaluation += t.elapsed();
                if let Some(path) = &self.cfg.checkpoint_path {
                    self.checkpoint(done).save(path)?;
                }
            }
        }

        Ok(Trained {
            state: self.state,
            normalizer: self.normalizer,
            report: TrainReport {
                history,
                iterations: self.total,
                data_fingerprint: self.fingerprint,
                timings: self.timings,
            },
            optimizer: self.optimizer,
        })
    }

    /// One distill + hyperparameter step. Leaves `self.state` untouched on error.
    fn iterate(&mut self, factor: &mut crate::pgp::PriorFactor, bx: Mat<f64>, by: &[f64]) -> Result<f64> {
        let t = Instant::now();
        let batch = MiniBatch::new(bx.as_ref(), by)?;
        let distilled = self.state.distill_with(factor, &batch)?;
        self.timings.distill += t.elapsed();

        let mut next = distilled.state;
        let mut next_optimizer = self.optimizer.clone();
        if self.cfg.learn_hyperparameters {
            let t = Instant::now();
            let grad = next.nlml_grad_with(factor);
            let mut hyper = next.params().hyper_vector();
            next_optimizer.step(&mut hyper, &grad)?;
            next = next.with_params(next.params().with_hyper_vector(&hyper)?)?;
            *factor = next.prior_factor()?;
            self.timings.hyper_step += t.elapsed();
        }
        self.state = next;
        self.optimizer = next_optimizer;
        Ok(distilled.sse)
    }

    fn checkpoint(&self, iterations: usize) -> Checkpoint {
        Checkpoint {
            model: ModelFile {
                state: self.state.clone(),
                normalizer: self.normalizer.clone(),
                column_names: self.raw.column_names.clone(),
                target_name: self.raw.target_name.clone(),
                metadata: TrainingMetadata {
                    seed: self.cfg.seed,
                    iterations: iterations as u64,
                    data_fingerprint: self.fingerprint.clone(),
                    source: self.cfg.source.clone(),
                },
            },
            optimizer: self.optimizer.clone(),
        }
    }

    fn abort(&self, iteration: usize, err: PgpError) -> PgpError {
        if let Some(path) = &self.cfg.checkpoint_path {
            if let Err(e) = self.checkpoint(iteration).save(path) {
                log::error!("could not write checkpoint after failure: {e}");
            }
        }
        PgpError::TrainingAborted {
            iteration,
            source: Box::new(err),
        }
    }
}
