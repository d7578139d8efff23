//! Dataset container with its preprocessing helpers and synthetic generators.

use std::f64::consts::PI;
use std::path::Path;

use faer::{Mat, MatRef};
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{ensure_dim, PgpError, Result};

/// Inputs and targets with their column labels, in one unit system.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    pub column_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(x: Mat<f64>, y: Vec<f64>, column_names: Vec<String>, target_name: impl Into<String>) -> Result<Self> {
        ensure_dim("dataset targets", x.nrows(), y.len())?;
        ensure_dim("dataset column names", x.ncols(), column_names.len())?;
        let ds = Dataset {
            x,
            y,
            column_names,
            target_name: target_name.into(),
        };
        let finite = crate::linalg::all_finite(ds.x.as_ref()) && ds.y.iter().all(|v| v.is_finite());
        if !finite {
            return Err(PgpError::Data("dataset contains non-finite values".into()));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Copies the given rows, in order.
    pub fn gather(&self, rows: &[usize]) -> (Mat<f64>, Vec<f64>) {
        let x = Mat::from_fn(rows.len(), self.dim(), |i, j| self.x[(rows[i], j)]);
        let y = rows.iter().map(|&r| self.y[r]).collect();
        (x, y)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let (x, y) = self.gather(rows);
        Dataset {
            x,
            y,
            column_names: self.column_names.clone(),
            target_name: self.target_name.clone(),
        }
    }

    /// SHA-256 over the column names and shape followed by the little-endian bytes of every value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.column_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.update(self.target_name.as_bytes());
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for i in 0..self.len() {
            for j in 0..self.dim() {
                h.update(self.x[(i, j)].to_le_bytes());
            }
            h.update(self.y[i].to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

/// Reads `target` and `features` from a headed CSV file. An empty feature list
/// selects every column except the target. Rows with a missing or non-numeric
/// value in a selected column are dropped and counted.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &str,
    features: &[String],
    delimiter: u8,
) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| PgpError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PgpError::Data(format!("{}: no column named `{name}`", path.display())))
    };
    let target_idx = find(target)?;
    let feature_names: Vec<String> = if features.is_empty() {
        headers.iter().filter(|h| h.as_str() != target).cloned().collect()
    } else {
        features.to_vec()
    };
    if feature_names.is_empty() {
        return Err(PgpError::Data("no feature columns selected".into()));
    }
    let feature_idx = feature_names.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut report = LoadReport {
        rows_read: 0,
        rows_dropped: 0,
    };
    let mut row = Vec::with_capacity(feature_idx.len());
    for record in reader.records() {
        let record = record?;
        report.rows_read += 1;
        let parse = |i: usize| {
            record
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        row.clear();
        let parsed = parse(target_idx).and_then(|t| {
            for &i in &feature_idx {
                row.push(parse(i)?);
            }
            Some(t)
        });
        match parsed {
            Some(t) => {
                values.extend_from_slice(&row);
                y.push(t);
            }
            None => report.rows_dropped += 1,
        }
    }
    if y.is_empty() {
        return Err(PgpError::Data(format!("{}: no usable rows", path.display())));
    }
    if report.rows_dropped > 0 {
        info!(
            "{}: dropped {} of {} rows with missing or non-numeric values",
            path.display(),
            report.rows_dropped,
            report.rows_read
        );
    }
    let d = feature_idx.len();
    let x = Mat::from_fn(y.len(), d, |i, j| values[i * d + j]);
    Ok((Dataset::new(x, y, feature_names, target)?, report))
}

/// Min/max input scaling to `[0, 1]` and target standardization, fitted on
/// training data. The target scale uses the population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Normalizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(PgpError::Data("cannot fit a normalizer on zero rows".into()));
        }
        let d = train.dim();
        let mut x_min = vec![f64::INFINITY; d];
        let mut x_max = vec![f64::NEG_INFINITY; d];
        for i in 0..train.len() {
            for j in 0..d {
                let v = train.x[(i, j)];
                x_min[j] = x_min[j].min(v);
                x_max[j] = x_max[j].max(v);
            }
        }
        for j in 0..d {
            if x_max[j] <= x_min[j] {
                return Err(PgpError::ConstantColumn(train.column_names[j].clone()));
            }
        }
        let n = train.len() as f64;
        let y_mean = train.y.iter().sum::<f64>() / n;
        let y_std = (train.y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n).sqrt();
        if !(y_std > 0.0) {
            return Err(PgpError::Data(format!(
                "target `{}` has zero variance on the training split",
                train.target_name
            )));
        }
        Ok(Normalizer {
            x_min,
            x_max,
            y_mean,
            y_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.x_min.len()
    }

    pub fn apply_x(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        ensure_dim("normalizer input columns", self.dim(), x.ncols())?;
        Ok(Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.x_min[j]) / (self.x_max[j] - self.x_min[j])
        }))
    }

    pub fn invert_x(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        ensure_dim("normalizer input columns", self.dim(), x.ncols())?;
        Ok(Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            x[(i, j)] * (self.x_max[j] - self.x_min[j]) + self.x_min[j]
        }))
    }

    pub fn apply_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn invert_y(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }

    /// A copy of `ds` in normalized units.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            x: self.apply_x(ds.x.as_ref())?,
            y: ds.y.iter().map(|&v| self.apply_y(v)).collect(),
            column_names: ds.column_names.clone(),
            target_name: ds.target_name.clone(),
        })
    }
}

/// Seeded uniform shuffle, then the first `round(fraction · N)` rows train.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(PgpError::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ds.len() as f64).round() as usize;
    let (train, test) = idx.split_at(n_train.min(ds.len()));
    Ok((ds.subset(train), ds.subset(test)))
}

/// `f(x) = x sin(4πx)`.
pub fn curve_1d(x: f64) -> f64 {
    x * (4.0 * PI * x).sin()
}

/// `x ~ U[0, 1]`, `y = x sin(4πx) + ε`, `ε ~ N(0, noise_std²)`.
pub fn synth_1d(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !(noise_std >= 0.0) {
        return Err(PgpError::Config("synth_1d needs n ≥ 1 and noise_std ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| PgpError::Config(e.to_string()))?;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        xs.push(x);
        ys.push(curve_1d(x) + noise.sample(&mut rng));
    }
    Dataset::new(Mat::from_fn(n, 1, |i, _| xs[i]), ys, vec!["x".into()], "y")
}

/// Smooth signal in the first `d_relevant` coordinates: `Σ_j sin(2π x_j + j)`.
pub fn highdim_signal(x: &[f64], d_relevant: usize) -> f64 {
    x.iter()
        .take(d_relevant)
        .enumerate()
        .map(|(j, v)| (2.0 * PI * v + j as f64).sin())
        .sum()
}

/// `x ~ U[0, 1]^d_total`; the target depends only on the first `d_relevant`
/// coordinates, the rest are distractors.
pub fn synth_highdim(n: usize, d_total: usize, d_relevant: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d_total == 0 || d_relevant > d_total || !(noise_std >= 0.0) {
        return Err(PgpError::Config(
            "synth_highdim needs n ≥ 1, d_total ≥ 1, d_relevant ≤ d_total, noise_std ≥ 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| PgpError::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(n * d_total);
    let mut ys = Vec::with_capacity(n);
    let mut row = vec![0.0; d_total];
    for _ in 0..n {
        for v in row.iter_mut() {
            *v = rng.random();
        }
        ys.push(highdim_signal(&row, d_relevant) + noise.sample(&mut rng));
        values.extend_from_slice(&row);
    }
    let names = (1..=d_total).map(|j| format!("x{j}")).collect();
    Dataset::new(Mat::from_fn(n, d_total, |i, j| values[i * d_total + j]), ys, names, "y")
}

/// Writes `ds` as a headed CSV with the feature columns followed by the target.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| PgpError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(std::io::BufWriter::new(file));
    let mut header = ds.column_names.clone();
    header.push(ds.target_name.clone());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(ds.dim() + 1);
    for i in 0..ds.len() {
        rec.clear();
        rec.extend((0..ds.dim()).map(|j| ds.x[(i, j)].to_string()));
        rec.push(ds.y[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| PgpError::io(path, e))?;
    Ok(())
}
