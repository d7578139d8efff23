use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use pgp_core::data::curve_1d;
use pgp_core::{
    evaluate, load_csv, resume, split, synth_1d, synth_highdim, train, AdamConfig, Checkpoint, Dataset, Mat, MatRef,
    ModelFile, PgpError, Result, Schedule, TrainConfig,
};

use crate::args::{CsvArgs, EvalArgs, ExportArgs, PredictArgs, SourceArgs, SynthArgs, SynthKind, SynthShape, TrainArgs};

const PREDICT_CHUNK: usize = 4096;

/// `source` tag recorded in models trained on the one-input synthetic curve.
pub const SOURCE_SYNTH_1D: &str = "synth-1d";
pub const SOURCE_SYNTH_HIGHDIM: &str = "synth-highdim";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PgpError + '_ {
    move |source| PgpError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| PgpError::Config(format!("delimiter must be a single ASCII character, got {c:?}")))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Loads or generates the training rows and the tag stored in the model metadata.
pub fn load_source(source: &SourceArgs, csv: &CsvArgs, shape: &SynthShape, seed: u64) -> Result<(Dataset, String)> {
    if let Some(path) = &source.data {
        let (ds, report) = load_csv(path, &csv.target, &csv.features, delimiter_byte(csv.delimiter)?)?;
        if report.rows_dropped > 0 {
            info!("dropped {} of {} rows with missing values", report.rows_dropped, report.rows_read);
        }
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok((ds, format!("csv:{name}")))
    } else if let Some(n) = source.synth_1d {
        Ok((synth_1d(n, shape.noise, seed)?, SOURCE_SYNTH_1D.to_string()))
    } else if let Some(n) = source.synth_highdim {
        let ds = synth_highdim(n, shape.d_total, shape.d_relevant, shape.noise, seed)?;
        Ok((ds, SOURCE_SYNTH_HIGHDIM.to_string()))
    } else {
        Err(PgpError::Config("no training data source given".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_nlml: f64,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub metrics_path: PathBuf,
}

pub fn train_config(args: &TrainArgs, source: String) -> TrainConfig {
    let schedule = match (args.length.iters, args.length.epochs) {
        (Some(n), _) => Schedule::Iterations(n),
        (None, Some(e)) => Schedule::Epochs(e),
        (None, None) => Schedule::Iterations(0),
    };
    let mut cfg = TrainConfig::new(args.m, args.batch, schedule);
    cfg.adam = AdamConfig {
        learning_rate: args.lr,
        clip_norm: args.clip_norm,
        ..AdamConfig::default()
    };
    cfg.sigma_eps_init = args.sigma_eps;
    cfg.log_w_init = args.init_log_w;
    cfg.learn_hyperparameters = !args.freeze_hyper;
    cfg.seed = args.seed;
    cfg.eval_every = args.eval_every;
    cfg.checkpoint_path = args.checkpoint.clone();
    cfg.source = source;
    cfg
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    if !(0.0..1.0).contains(&args.test_fraction) {
        return Err(PgpError::Config(format!(
            "test fraction must lie in [0, 1), got {}",
            args.test_fraction
        )));
    }
    let (all, source) = load_source(&args.source, &args.csv, &args.shape, args.seed)?;
    let (train_ds, test_ds) = if args.test_fraction > 0.0 {
        let (a, b) = split(&all, 1.0 - args.test_fraction, args.seed)?;
        (a, Some(b))
    } else {
        (all, None)
    };
    let cfg = train_config(args, source);
    let trained = match &args.resume {
        Some(path) => resume(&train_ds, &cfg, test_ds.as_ref(), Checkpoint::load(path)?)?,
        None => train(&train_ds, &cfg, test_ds.as_ref())?,
    };
    trained.model_file(&train_ds, &cfg).save(&args.out)?;
    let metrics_path = args.metrics.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".metrics.csv");
        p.into()
    });
    trained.report.write_metrics_csv(&metrics_path)?;

    let test_mse = match &test_ds {
        Some(t) => Some(evaluate(&trained.state, &trained.normalizer, t)?.mse),
        None => None,
    };
    Ok(TrainSummary {
        iterations: trained.report.iterations,
        final_nlml: trained.state.nlml()?,
        train_mse: evaluate(&trained.state, &trained.normalizer, &train_ds)?.mse,
        test_mse,
        metrics_path,
    })
}

/// Reads the model's input columns, in model order, from a headed CSV file.
/// Other columns are ignored; a missing column or a non-numeric cell is an error.
pub fn read_inputs(path: &Path, columns: &[String], delimiter: u8) -> Result<Mat<f64>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(std::io::BufReader::new(file));
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let idx = columns
        .iter()
        .map(|c| {
            headers.iter().position(|h| h == c).ok_or_else(|| {
                PgpError::Data(format!(
                    "{}: missing model input column `{c}` (model expects {})",
                    path.display(),
                    columns.join(", ")
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        for (&j, name) in idx.iter().zip(columns) {
            let cell = record.get(j).unwrap_or("").trim();
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                PgpError::Data(format!("{}: row {}: `{name}` = {cell:?} is not a finite number", path.display(), line + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let d = columns.len();
    Ok(Mat::from_fn(rows, d, |i, j| values[i * d + j]))
}

/// Predictive mean and std for raw-unit inputs.
pub fn predict_rows(
    model: &ModelFile,
    x_raw: MatRef<'_, f64>,
    observation_noise: bool,
    normalized_output: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let state = &model.state;
    let norm = &model.normalizer;
    let factor = state.prior_factor()?;
    let noise = if observation_noise {
        state.params().noise_variance()
    } else {
        0.0
    };
    let (mut mean, mut std) = (Vec::with_capacity(x_raw.nrows()), Vec::with_capacity(x_raw.nrows()));
    let mut start = 0;
    while start < x_raw.nrows() {
        let len = PREDICT_CHUNK.min(x_raw.nrows() - start);
        let xn = norm.apply_x(x_raw.subrows(start, len))?;
        let pred = state.predict_with(&factor, xn.as_ref())?;
        for (mu, var) in pred.mean.into_iter().zip(pred.variance) {
            let sd = (var + noise).sqrt();
            if normalized_output {
                mean.push(mu);
                std.push(sd);
            } else {
                mean.push(norm.invert_y(mu));
                std.push(sd * norm.y_std);
            }
        }
        start += len;
    }
    Ok((mean, std))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<usize> {
    let model = ModelFile::load(&args.model)?;
    let x = read_inputs(&args.input, &model.column_names, delimiter_byte(args.delimiter)?)?;
    let (mean, std) = predict_rows(&model, x.as_ref(), args.observation_noise, args.normalized_output)?;
    let mut w = csv_writer(&args.out)?;
    let mut header = model.column_names.clone();
    header.extend(["mean".to_string(), "std".to_string()]);
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..x.nrows() {
        rec.clear();
        rec.extend((0..x.ncols()).map(|j| x[(i, j)].to_string()));
        rec.push(mean[i].to_string());
        rec.push(std[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&args.out))?;
    Ok(x.nrows())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<pgp_core::EvalReport> {
    let model = ModelFile::load(&args.model)?;
    let target = args.target.as_deref().unwrap_or(&model.target_name);
    let (ds, _) = load_csv(&args.data, target, &model.column_names, delimiter_byte(args.delimiter)?)?;
    evaluate(&model.state, &model.normalizer, &ds)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<usize> {
    let ds = match args.kind {
        SynthKind::OneD => synth_1d(args.n, args.shape.noise, args.seed)?,
        SynthKind::Highdim => synth_highdim(args.n, args.shape.d_total, args.shape.d_relevant, args.shape.noise, args.seed)?,
    };
    pgp_core::data::write_csv(&ds, &args.out, b',')?;
    Ok(ds.len())
}

/// Writes `inducing.csv`, `ard.csv` and, for one-input models, `band.csv`.
pub fn cmd_export_plots(args: &ExportArgs) -> Result<Vec<PathBuf>> {
    let model = ModelFile::load(&args.model)?;
    std::fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let mut written = Vec::new();
    let state = &model.state;
    let norm = &model.normalizer;

    // Inducing locations and their means, in raw units.
    let path = args.out_dir.join("inducing.csv");
    let z_raw = norm.invert_x(state.z())?;
    let mut w = csv_writer(&path)?;
    let mut header = model.column_names.clone();
    header.extend(["m".to_string(), "std".to_string()]);
    w.write_record(&header)?;
    for i in 0..state.num_inducing() {
        let mut rec: Vec<String> = (0..state.dim()).map(|j| z_raw[(i, j)].to_string()).collect();
        rec.push(norm.invert_y(state.m()[i]).to_string());
        rec.push((state.s()[(i, i)].max(0.0).sqrt() * norm.y_std).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    let path = args.out_dir.join("ard.csv");
    let mut ard: Vec<(String, f64)> = model.column_names.iter().cloned().zip(state.params().weights()).collect();
    ard.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut w = csv_writer(&path)?;
    w.write_record(["column_name", "w"])?;
    for (name, wd) in &ard {
        w.write_record([name.clone(), wd.to_string()])?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    if state.dim() == 1 {
        written.push(write_band(&model, &args.out_dir, args.grid)?);
    } else {
        info!("skipping band.csv: the model has {} inputs", state.dim());
    }
    Ok(written)
}

/// Dense grid over the training input range with the mean ± 2 std band.
pub fn write_band(model: &ModelFile, dir: &Path, grid: usize) -> Result<PathBuf> {
    if model.state.dim() != 1 {
        return Err(PgpError::Config(format!(
            "a prediction band needs a one-input model, this one has {}",
            model.state.dim()
        )));
    }
    if grid < 2 {
        return Err(PgpError::Config("band grid needs at least 2 points".into()));
    }
    let (lo, hi) = (model.normalizer.x_min[0], model.normalizer.x_max[0]);
    let xs = Mat::from_fn(grid, 1, |i, _| lo + (hi - lo) * i as f64 / (grid - 1) as f64);
    let (mean, std) = predict_rows(model, xs.as_ref(), false, false)?;
    let with_truth = model.metadata.source == SOURCE_SYNTH_1D;

    let path = dir.join("band.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["x"];
    if with_truth {
        header.push("f_true");
    }
    header.extend(["mean", "std", "lower", "upper"]);
    w.write_record(&header)?;
    for i in 0..grid {
        let x = xs[(i, 0)];
        let mut rec = vec![x.to_string()];
        if with_truth {
            rec.push(curve_1d(x).to_string());
        }
        rec.push(mean[i].to_string());
        rec.push(std[i].to_string());
        rec.push((mean[i] - 2.0 * std[i]).to_string());
        rec.push((mean[i] + 2.0 * std[i]).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Runs one subcommand and returns the text destined for stdout.
pub fn run(cli: &crate::args::Cli) -> Result<String> {
    use crate::args::Command;
    let mut out = String::new();
    match &cli.command {
        Command::Train(a) => {
            let s = cmd_train(a)?;
            let _ = writeln!(out, "iterations {}", s.iterations);
            let _ = writeln!(out, "final_nlml {}", s.final_nlml);
            let _ = writeln!(out, "train_mse {}", s.train_mse);
            if let Some(t) = s.test_mse {
                let _ = writeln!(out, "test_mse {t}");
            }
            let _ = writeln!(out, "model {}", a.out.display());
            let _ = writeln!(out, "metrics {}", s.metrics_path.display());
        }
        Command::Predict(a) => {
            let n = cmd_predict(a)?;
            let _ = writeln!(out, "predicted {n} rows -> {}", a.out.display());
        }
        Command::Eval(a) => {
            let r = cmd_eval(a)?;
            let _ = writeln!(out, "mse {}", r.mse);
            let _ = writeln!(out, "baseline_mse {}", r.baseline_mse);
            let _ = writeln!(out, "rows {}", r.rows);
        }
        Command::Synth(a) => {
            let n = cmd_synth(a)?;
            let _ = writeln!(out, "wrote {n} rows -> {}", a.out.display());
        }
        Command::ExportPlots(a) => {
            for p in cmd_export_plots(a)? {
                let _ = writeln!(out, "{}", p.display());
            }
        }
    }
    Ok(out)
}
