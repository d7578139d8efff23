//! Streaming parametric Gaussian process regression.
//!
//! A training set of any size is distilled, one mini-batch at a time, into a
//! small hypothetical dataset: `M` inducing locations `Z` with pseudo-outputs
//! `u ~ N(m, S)`. Predictions use only `(Z, m, S)` and the kernel
//! hyperparameters, never the original data.
//!
//! ```
//! use pgp_core::{synth_1d, train, Schedule, TrainConfig};
//!
//! let data = synth_1d(200, 0.1, 7).unwrap();
//! let cfg = TrainConfig::new(8, 10, Schedule::Epochs(1));
//! let trained = train(&data, &cfg, None).unwrap();
//! assert_eq!(trained.state.num_inducing(), 8);
//! ```

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod model_file;
pub mod optimizer;
pub mod oracle;
pub mod pgp;
pub mod trainer;

pub use clustering::{kmeans, KMeansConfig};
pub use data::{load_csv, split, synth_1d, synth_highdim, Dataset, LoadReport, Normalizer};
pub use error::{ErrorKind, PgpError, Result};
pub use kernel::{kernel_eval, kernel_matrix, KernelParams};
pub use model_file::{ModelFile, TrainingMetadata};
pub use optimizer::{adam_step, AdamConfig, AdamState};
pub use pgp::{MiniBatch, PgpState, Prediction, PriorFactor};
pub use trainer::{evaluate, initial_params, resume, train, Checkpoint, EvalReport, Schedule, TrainConfig, TrainReport, Trained};

pub use faer::{Col, Mat, MatRef};
