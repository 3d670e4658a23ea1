use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::mc::McSummary;
use super::predict::PredictReport;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::simulate::SamplePath;

/// A path read from CSV together with its column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries<T> {
    pub names: Vec<String>,
    /// Contents of the `date` column, when the file has one.
    pub dates: Option<Vec<String>>,
    pub path: SamplePath<T>,
}

/// Reads a file with header `t,X1,...,Xd` or `date,<names...>`.
pub fn load_series_csv<T: Real>(file: &Path, delta: T) -> Result<LoadedSeries<T>> {
    let text = std::fs::read_to_string(file).map_err(|e| Error::Io(format!("{}: {e}", file.display())))?;
    load_series_csv_str(&text, delta)
}

pub fn load_series_csv_str<T: Real>(text: &str, delta: T) -> Result<LoadedSeries<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::Parse { line: 1, message: e.to_string() }),
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    };
    let first = header.get(0).unwrap_or("").trim().to_ascii_lowercase();
    let dated = match first.as_str() {
        "t" => false,
        "date" => true,
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("first column must be 't' or 'date', found '{other}'"),
            })
        }
    };
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if names.is_empty() {
        return Err(Error::Parse { line: 1, message: "no series columns".into() });
    }
    let width = names.len() + 1;
    let mut rows = Vec::new();
    let mut dates = Vec::new();
    let mut t0 = T::zero();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse { line, message: format!("expected {width} fields, found {}", rec.len()) });
        }
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            let column = header.get(j).unwrap_or("?");
            if cell.is_empty() {
                return Err(Error::Parse { line, message: format!("missing value in column '{column}'") });
            }
            if j == 0 && dated {
                dates.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric value '{cell}' in column '{column}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite value in column '{column}'") });
            }
            if j == 0 {
                if rows.is_empty() {
                    t0 = T::lit(v);
                }
            } else {
                row.push(T::lit(v));
            }
        }
        rows.push(row);
    }
    if rows.len() < 3 {
        return Err(Error::Parse {
            line: rows.len() + 1,
            message: format!("need at least 3 data rows, found {}", rows.len()),
        });
    }
    let path = SamplePath::from_rows(&rows, delta, t0)?;
    Ok(LoadedSeries { names, dates: dated.then_some(dates), path })
}

fn num<T: Real>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// Writes `t,<names...>` with every value in `{:.16e}` form.
pub fn write_path_csv<T: Real, W: Write>(path: &SamplePath<T>, names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for i in 0..=path.n() {
        let mut rec = vec![num(path.times[i])];
        rec.extend(path.state(i).iter().map(|&v| num(v)));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// One row per (method, parameter).
pub fn write_summary_csv<T: Real, W: Write>(summary: &McSummary<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "param", "truth", "mean", "std_dev", "mse", "zero_freq"]).map_err(io_err)?;
    for m in &summary.methods {
        for p in &m.params {
            w.write_record([
                m.method.as_str().to_string(),
                p.name.clone(),
                num(p.truth),
                num(p.mean),
                num(p.std_dev),
                num(p.mse),
                num(p.zero_freq),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Zero-selection frequencies of the truly-zero parameters.
pub fn write_selection_csv<T: Real, W: Write>(summary: &McSummary<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "param", "zero_freq"]).map_err(io_err)?;
    for m in &summary.methods {
        for p in m.params.iter().filter(|p| p.truth.is_zero()) {
            w.write_record([m.method.as_str().to_string(), p.name.clone(), num(p.zero_freq)]).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn write_tuning_csv<T: Real, W: Write>(summary: &McSummary<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param", "min", "q1", "median", "mean", "q3", "max", "std_dev"]).map_err(io_err)?;
    for t in &summary.tuning {
        w.write_record([
            t.name.clone(),
            num(t.min),
            num(t.q1),
            num(t.median),
            num(t.mean),
            num(t.q3),
            num(t.max),
            num(t.std_dev),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Quantile bands of series `c` for every report, one row per (method, step).
pub fn write_bands_csv<T: Real, W: Write>(
    reports: &[PredictReport<T>],
    c: usize,
    observed: &[T],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "step", "observed", "mean", "q025", "q10", "q90", "q975", "mse"]).map_err(io_err)?;
    for r in reports {
        let s = &r.series[c];
        for i in 0..r.n_te {
            w.write_record([
                r.method.clone(),
                (i + 1).to_string(),
                num(observed[i]),
                num(s.mean[i]),
                num(s.q025[i]),
                num(s.q10[i]),
                num(s.q90[i]),
                num(s.q975[i]),
                num(s.mse_by_time[i]),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Git-style object hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize)]
struct Sidecar<'a, C: Serialize> {
    config: &'a C,
    seed: u64,
    files: std::collections::BTreeMap<String, String>,
}

/// Writes `<dir>/<name>` holding the resolved config, the seed and the hash
/// of each listed output file. Returns the hashes in `files` order.
pub fn write_sidecar<C: Serialize>(
    dir: &Path,
    name: &str,
    config: &C,
    seed: u64,
    files: &[&str],
) -> Result<Vec<String>> {
    let mut map = std::collections::BTreeMap::new();
    let mut hashes = Vec::with_capacity(files.len());
    for f in files {
        let bytes = std::fs::read(dir.join(f)).map_err(|e| Error::Io(format!("{f}: {e}")))?;
        let h = content_hash(&bytes);
        hashes.push(h.clone());
        map.insert(f.to_string(), h);
    }
    let json = serde_json::to_string_pretty(&Sidecar { config, seed, files: map }).map_err(io_err)?;
    std::fs::write(dir.join(name), json + "\n").map_err(|e| Error::Io(format!("{name}: {e}")))?;
    Ok(hashes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_give_two_increments() {
        let s = load_series_csv_str::<f64>("t,X1\n0,1\n1,2\n2,4\n", 1.0).unwrap();
        assert_eq!(s.path.n(), 2);
        assert_eq!(s.names, vec!["X1"]);
    }

    #[test]
    fn blank_cell_names_line() {
        let e = load_series_csv_str::<f64>("t,X1,X2\n0,1,2\n1,,3\n2,4,5\n", 1.0).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e:?}");
    }

    #[test]
    fn ragged_and_non_numeric_rows_rejected() {
        let e = load_series_csv_str::<f64>("t,X1\n0,1\n1,2,3\n2,4\n", 1.0).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e:?}");
        let e = load_series_csv_str::<f64>("date,A\n2020-01-01,1\n2020-01-02,x\n2020-01-03,2\n", 1.0).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e:?}");
        let e = load_series_csv_str::<f64>("t,X1\n0,1\n1,2\n", 1.0).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }), "{e:?}");
    }

    #[test]
    fn dated_file_keeps_dates() {
        let s = load_series_csv_str::<f64>("date,A,B\nd1,1,2\nd2,3,4\nd3,5,6\n", 0.5).unwrap();
        assert_eq!(s.dates.unwrap(), vec!["d1", "d2", "d3"]);
        assert_eq!(s.path.state(2), &[5.0, 6.0]);
    }

    #[test]
    fn content_hash_matches_git_sha256_object_format() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(content_hash(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
    }
}
