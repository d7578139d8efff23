//! Self-describing binary container for a trained model.
//!
//! Layout (version 1): a UTF-8 text header of `key value` lines terminated by
//! a line `end`, followed by little-endian IEEE-754 `f64` arrays with no
//! padding:
//!
//! ```text
//! PGP-MODEL
//! format_version 1
//! dim <D>
//! inducing <M>
//! columns <name_1>\t<name_2>\t...\t<name_D>
//! target <name>
//! log_gamma <f64>
//! log_w <f64> ... (D values)
//! log_sigma_eps <f64>
//! x_min <f64> ... (D values)
//! x_max <f64> ... (D values)
//! y_mean <f64>
//! y_std <f64>
//! seed <u64>
//! iterations <u64>
//! data_fingerprint <text>
//! source <text>
//! end
//! Z  : M×D values, row-major
//! m  : M values
//! S  : M×M values, row-major
//! ```
//!
//! Header reals are written in shortest round-trip scientific notation, so
//! save → load → save is byte-identical.

use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use faer::{Col, Mat};

use crate::data::Normalizer;
use crate::error::{PgpError, Result};
use crate::kernel::KernelParams;
use crate::pgp::PgpState;

pub const MAGIC: &str = "PGP-MODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub iterations: u64,
    pub data_fingerprint: String,
    /// Free-form description of where the training data came from, e.g. `synth-1d`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub state: PgpState,
    pub normalizer: Normalizer,
    pub column_names: Vec<String>,
    pub target_name: String,
    pub metadata: TrainingMetadata,
}

fn fmt_reals(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

fn check_text(what: &str, s: &str, allow_tab: bool) -> Result<()> {
    if s.contains('\n') || s.contains('\r') || (!allow_tab && s.contains('\t')) {
        return Err(PgpError::Format(format!("{what} `{s}` contains a line break or tab")));
    }
    Ok(())
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let st = &self.state;
        let (m, d) = (st.num_inducing(), st.dim());
        if self.column_names.len() != d || self.normalizer.dim() != d {
            return Err(PgpError::Format("column names or normalizer disagree with model dimension".into()));
        }
        for name in &self.column_names {
            check_text("column name", name, false)?;
            if name.is_empty() {
                return Err(PgpError::Format("empty column name".into()));
            }
        }
        check_text("target name", &self.target_name, true)?;
        check_text("data fingerprint", &self.metadata.data_fingerprint, true)?;
        check_text("source", &self.metadata.source, true)?;

        let p = st.params();
        let n = &self.normalizer;
        let header = format!(
            "{MAGIC}\nformat_version {FORMAT_VERSION}\ndim {d}\ninducing {m}\ncolumns {}\ntarget {}\n\
             log_gamma {:e}\nlog_w {}\nlog_sigma_eps {:e}\nx_min {}\nx_max {}\ny_mean {:e}\ny_std {:e}\n\
             seed {}\niterations {}\ndata_fingerprint {}\nsource {}\nend\n",
            self.column_names.join("\t"),
            self.target_name,
            p.log_gamma,
            fmt_reals(&p.log_w),
            p.log_sigma_eps,
            fmt_reals(&n.x_min),
            fmt_reals(&n.x_max),
            n.y_mean,
            n.y_std,
            self.metadata.seed,
            self.metadata.iterations,
            self.metadata.data_fingerprint,
            self.metadata.source,
        );
        let mut out = header.into_bytes();
        out.reserve(8 * (m * d + m + m * m));
        for i in 0..m {
            for j in 0..d {
                out.extend_from_slice(&st.z()[(i, j)].to_le_bytes());
            }
        }
        for i in 0..m {
            out.extend_from_slice(&st.m()[i].to_le_bytes());
        }
        for i in 0..m {
            for j in 0..m {
                out.extend_from_slice(&st.s()[(i, j)].to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut header = Header { cur: &mut cur };
        if header.line()? != MAGIC {
            return Err(PgpError::Format("not a model file (bad magic line)".into()));
        }
        let version: u32 = header.parse_one("format_version")?;
        if version != FORMAT_VERSION {
            return Err(PgpError::Format(format!("unsupported format_version {version}")));
        }
        let d: usize = header.parse_one("dim")?;
        let m: usize = header.parse_one("inducing")?;
        if d == 0 || m == 0 {
            return Err(PgpError::Format("dim and inducing must be positive".into()));
        }
        let column_names: Vec<String> = header.field("columns")?.split('\t').map(String::from).collect();
        if column_names.len() != d {
            return Err(PgpError::Format(format!("expected {d} column names, found {}", column_names.len())));
        }
        let target_name = header.field("target")?;
        let log_gamma = header.parse_one("log_gamma")?;
        let log_w = header.reals("log_w", d)?;
        let log_sigma_eps = header.parse_one("log_sigma_eps")?;
        let x_min = header.reals("x_min", d)?;
        let x_max = header.reals("x_max", d)?;
        let y_mean = header.parse_one("y_mean")?;
        let y_std = header.parse_one("y_std")?;
        let seed = header.parse_one("seed")?;
        let iterations = header.parse_one("iterations")?;
        let data_fingerprint = header.field("data_fingerprint")?;
        let source = header.field("source")?;
        if header.line()? != "end" {
            return Err(PgpError::Format("missing `end` after header".into()));
        }

        let mut body = Vec::new();
        cur.read_to_end(&mut body).map_err(|e| PgpError::Format(e.to_string()))?;
        let expected = 8 * (m * d + m + m * m);
        if body.len() != expected {
            return Err(PgpError::Format(format!(
                "expected {expected} bytes of arrays, found {}",
                body.len()
            )));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let (zv, rest) = vals.split_at(m * d);
        let (mv, sv) = rest.split_at(m);
        let z = Mat::from_fn(m, d, |i, j| zv[i * d + j]);
        let mean = Col::from_fn(m, |i| mv[i]);
        let s = Mat::from_fn(m, m, |i, j| sv[i * m + j]);

        let params = KernelParams::from_log(log_gamma, log_w, log_sigma_eps)?;
        let state = PgpState::from_parts(z, mean, s, params)?;
        Ok(ModelFile {
            state,
            normalizer: Normalizer {
                x_min,
                x_max,
                y_mean,
                y_std,
            },
            column_names,
            target_name,
            metadata: TrainingMetadata {
                seed,
                iterations,
                data_fingerprint,
                source,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| PgpError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| PgpError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Header<'a, 'b> {
    cur: &'a mut Cursor<&'b [u8]>,
}

impl Header<'_, '_> {
    fn line(&mut self) -> Result<String> {
        let mut buf = Vec::new();
        let n = self
            .cur
            .read_until(b'\n', &mut buf)
            .map_err(|e| PgpError::Format(e.to_string()))?;
        if n == 0 || buf.last() != Some(&b'\n') {
            return Err(PgpError::Format("truncated header".into()));
        }
        buf.pop();
        String::from_utf8(buf).map_err(|_| PgpError::Format("header is not UTF-8".into()))
    }

    fn field(&mut self, key: &str) -> Result<String> {
        let line = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            None if line == key => Ok(String::new()),
            _ => Err(PgpError::Format(format!("expected `{key}`, found `{line}`"))),
        }
    }

    fn parse_one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse()
            .map_err(|_| PgpError::Format(format!("cannot parse `{key}` value `{v}`")))
    }

    fn reals(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let v = self.field(key)?;
        let out = v
            .split(' ')
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| PgpError::Format(format!("cannot parse `{key}` values")))?;
        if out.len() != n {
            return Err(PgpError::Format(format!("`{key}` has {} values, expected {n}", out.len())));
        }
        Ok(out)
    }
}
