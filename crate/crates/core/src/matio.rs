//! Plain CSV matrix dumps: a `# rows cols` header line followed by one
//! comma-separated line per row. Values use Rust's shortest round-trip
//! formatting, so a dump reloads bit-exactly. Debugging aid only.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn to_csv_string(m: &DMatrix<f64>) -> String {
    let mut s = format!("# {} {}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", m[(r, c)]);
        }
        s.push('\n');
    }
    s
}

pub fn from_csv_str(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty matrix file".into()))?;
    let dims: Vec<usize> = header
        .trim_start_matches('#')
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::InvalidInput(format!("bad header `{header}`"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::InvalidInput(format!("bad header `{header}`")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad value `{t}` on row {i}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(Error::Dimension(format!("row {i} has {} values, expected {cols}", row.len())));
        }
        data.extend(row);
    }
    if data.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "expected {rows} rows, found {}",
            data.len() / cols.max(1)
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path.as_ref(), to_csv_string(m)).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
    from_csv_str(&text)
}
