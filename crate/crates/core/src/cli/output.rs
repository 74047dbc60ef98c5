//! File outputs: trajectory CSV, JSON reports, atomic writes.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::flow::{Sample, Trajectory};
use crate::verify::HuberRow;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed trajectory CSV: {0}")]
    Malformed(String),
}

/// 17 significant digits; round-trips every finite `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn parse_f64(s: &str) -> Result<f64, OutputError> {
    s.parse::<f64>()
        .map_err(|e| OutputError::Malformed(format!("{s:?}: {e}")))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    let io_err = |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("w_{i}")));
    h.extend((1..=n).map(|i| format!("wt_{i}")));
    h.extend(["loss", "bregman_to_ref", "min_abs_rho_prime"].map(String::from));
    h
}

/// CSV text for a trajectory; an absent `bregman_to_ref` is an empty field.
pub fn trajectory_csv(traj: &Trajectory) -> Result<Vec<u8>, OutputError> {
    let n = traj.first().w.len();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(trajectory_header(n))?;
    for s in &traj.samples {
        let mut rec = vec![fmt_f64(s.t)];
        rec.extend(s.w.iter().map(|&v| fmt_f64(v)));
        rec.extend(s.w_tilde.iter().map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(s.loss));
        rec.push(s.bregman_to_ref.map(fmt_f64).unwrap_or_default());
        rec.push(fmt_f64(s.min_abs_rho_prime));
        wtr.write_record(&rec)?;
    }
    wtr.into_inner()
        .map_err(|e| OutputError::Malformed(e.to_string()))
}

/// Parses the output of [`trajectory_csv`] back into samples.
pub fn parse_trajectory_csv(bytes: &[u8]) -> Result<Vec<Sample>, OutputError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    if header.len() < 6 || (header.len() - 4) % 2 != 0 {
        return Err(OutputError::Malformed(format!("{} columns", header.len())));
    }
    let n = (header.len() - 4) / 2;
    let expect = trajectory_header(n);
    if header.iter().ne(expect.iter().map(String::as_str)) {
        return Err(OutputError::Malformed("unexpected header".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let col = |i: usize| parse_f64(&rec[i]);
        let w = (1..=n).map(col).collect::<Result<Vec<_>, _>>()?;
        let w_tilde = (n + 1..=2 * n).map(col).collect::<Result<Vec<_>, _>>()?;
        let b = &rec[2 * n + 2];
        out.push(Sample {
            t: col(0)?,
            w,
            w_tilde,
            loss: col(2 * n + 1)?,
            bregman_to_ref: if b.is_empty() { None } else { Some(parse_f64(b)?) },
            min_abs_rho_prime: col(2 * n + 3)?,
        });
    }
    Ok(out)
}

pub fn huber_csv(rows: &[HuberRow]) -> Result<Vec<u8>, OutputError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["t", "g_sinh", "huber"])?;
    for r in rows {
        wtr.write_record([fmt_f64(r.t), fmt_f64(r.g_sinh), fmt_f64(r.huber)])?;
    }
    wtr.into_inner()
        .map_err(|e| OutputError::Malformed(e.to_string()))
}

/// Pretty JSON whose floats carry 17 significant digits. serde_json emits
/// non-finite floats as `null` before the formatter sees them.
struct Formatter17(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for Formatter17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", fmt_f64(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, OutputError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        Formatter17(serde_json::ser::PrettyFormatter::new()),
    );
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}
