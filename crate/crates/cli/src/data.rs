//! CSV ingestion and output.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TimeColumn {
    /// Treat the first column as time when it is strictly increasing.
    Auto,
    Yes,
    No,
}

/// Numeric series read from a CSV file.
#[derive(Debug, Clone)]
pub struct Series {
    /// `rows × d` samples, time column excluded.
    pub values: DMatrix<f64>,
    pub time: Option<Vec<f64>>,
}

impl Series {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

pub fn read_series(path: &Path, time: TimeColumn) -> Result<Series> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_series(file, time).with_context(|| format!("reading {}", path.display()))
}

pub fn parse_series<R: std::io::Read>(input: R, time: TimeColumn) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = rdr.headers().context("line 1: unreadable header")?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        bail!("line 1: header required");
    }
    let width = header.len();
    let mut cells = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            anyhow!("line {line}: {e}")
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            bail!("line {line}: expected {width} fields, found {}", rec.len());
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| anyhow!("line {line}, column `{}`: non-numeric cell {cell:?}", header[j]))?;
            if !v.is_finite() {
                bail!("line {line}, column `{}`: non-finite value {cell:?}", header[j]);
            }
            cells.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        bail!("no data rows");
    }
    let all = DMatrix::from_row_slice(rows, width, &cells);
    let first: Vec<f64> = all.column(0).iter().copied().collect();
    let has_time = match time {
        TimeColumn::Yes => true,
        TimeColumn::No => false,
        TimeColumn::Auto => width > 1 && rows > 1 && first.windows(2).all(|w| w[1] > w[0]),
    };
    if has_time && width < 2 {
        bail!("a time column leaves no data columns");
    }
    let skip = has_time as usize;
    Ok(Series {
        values: all.columns(skip, width - skip).into_owned(),
        time: has_time.then_some(first),
    })
}

/// Writes `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

/// Samples with a leading integer time column.
pub fn series_csv(values: &DMatrix<f64>) -> Vec<u8> {
    let mut out = String::new();
    out.push('t');
    for j in 0..values.ncols() {
        out.push_str(&format!(",y{}", j + 1));
    }
    out.push('\n');
    for i in 0..values.nrows() {
        out.push_str(&i.to_string());
        for j in 0..values.ncols() {
            out.push_str(&format!(",{}", values[(i, j)]));
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_time_column() {
        let s = parse_series("time,a,b\n0,1.5,2\n1,0.5,-1\n2,3,4\n".as_bytes(), TimeColumn::Auto).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.time.unwrap(), vec![0.0, 1.0, 2.0]);
        assert_eq!(s.values[(1, 1)], -1.0);
    }

    #[test]
    fn non_monotone_first_column_is_data() {
        let s = parse_series("a,b\n3,1\n1,2\n2,3\n".as_bytes(), TimeColumn::Auto).unwrap();
        assert_eq!(s.dim(), 2);
        assert!(s.time.is_none());
        let s = parse_series("a,b\n1,1\n2,2\n".as_bytes(), TimeColumn::No).unwrap();
        assert_eq!(s.dim(), 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_series("a,b\n1,2\n3,x\n".as_bytes(), TimeColumn::Auto).unwrap_err();
        let msg = format!("{e:#}");
        assert!(msg.contains("line 3") && msg.contains("non-numeric"), "{msg}");
        let e = parse_series("a,b\n1,2\n3,4,5\n".as_bytes(), TimeColumn::Auto).unwrap_err();
        let msg = format!("{e:#}");
        assert!(msg.contains("line 3") && msg.contains("expected 2 fields"), "{msg}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1e-300, 1.0 / 3.0, 12345.678]);
        let s = parse_series(series_csv(&m).as_slice(), TimeColumn::Auto).unwrap();
        assert_eq!(s.values, m);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
