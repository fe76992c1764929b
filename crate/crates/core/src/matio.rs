//! Complex matrix files.
//!
//! Two formats are supported:
//! - CSV: one matrix row per line, real and imaginary parts interleaved
//!   (`re0,im0,re1,im1,…`). Lines starting with `#` are ignored.
//! - Binary: magic `QPCM`, `u32` version (1), `u64` rows, `u64` cols, then
//!   row-major `f64` pairs, all little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMat;

const MAGIC: &[u8; 4] = b"QPCM";
const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.csv` (any case) is CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

pub fn encode_csv(m: &CMat) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .flat_map(|j| [m[(i, j)].re, m[(i, j)].im])
            .map(|x| format!("{x:e}"))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str, path: &Path) -> Result<CMat> {
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("line {}: {e}", ln + 1)))?;
        if vals.len() % 2 != 0 {
            return Err(bad(format!("line {}: odd number of fields {}", ln + 1, vals.len())));
        }
        let row: Vec<Complex64> = vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(bad(format!(
                    "line {}: {} entries, expected {}",
                    ln + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let cols = rows[0].len();
    Ok(CMat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn encode_binary(m: &CMat) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 16 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<CMat> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(bad("missing QPCM header"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    let expect = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() != expect {
        return Err(bad(&format!("{rows}x{cols} needs {expect} bytes, found {}", bytes.len())));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[HEADER + 8 * k..HEADER + 8 * k + 8].try_into().unwrap());
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        Complex64::new(f(k), f(k + 1))
    }))
}

pub fn read_matrix(path: &Path) -> Result<CMat> {
    match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            decode_csv(&text, path)
        }
        MatrixFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes, path)
        }
    }
}

/// Write atomically: the file appears only once fully written.
pub fn write_matrix(path: &Path, m: &CMat) -> Result<()> {
    let bytes = match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => encode_csv(m).into_bytes(),
        MatrixFormat::Binary => encode_binary(m),
    };
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Read a real vector: one value per line or comma separated.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| l.split(','))
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("`{}`: {e}", f.trim()),
            })
        })
        .collect()
}
