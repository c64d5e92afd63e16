//! CSV tables and small file helpers.
//!
//! Dialect: comma separated, one header row, UTF-8, `.` as the decimal mark,
//! numbers unquoted. Numbers are written with 17 significant digits so a
//! write/read cycle reproduces every `f64` exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A numeric CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn new(header: Vec<String>, data: DMatrix<f64>) -> Self {
        Table { header, data }
    }

    /// Header `prefix1, prefix2, ...`.
    pub fn with_default_header(data: DMatrix<f64>, prefix: &str) -> Self {
        let header = (1..=data.ncols()).map(|j| format!("{prefix}{j}")).collect();
        Table { header, data }
    }
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, 0, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_err(1, 0, "missing header row".into()));
    }
    let width = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                line,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (k, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, k + 1, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, k + 1, format!("`{cell}` is not finite")));
            }
            values.push(v);
        }
        rows += 1;
    }
    Ok(Table {
        header,
        data: DMatrix::from_row_slice(rows, width, &values),
    })
}

/// Single-column table as a vector.
pub fn read_csv_vector(path: &Path) -> Result<(String, Vec<f64>)> {
    let table = read_csv(path)?;
    if table.data.ncols() != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 2,
            message: format!("expected a single column, found {}", table.data.ncols()),
        });
    }
    Ok((table.header[0].clone(), table.data.column(0).iter().copied().collect()))
}

/// Shortest `%.17g`-style rendering: 17 significant digits, trailing zeros
/// trimmed.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut out = String::new();
    out.push_str(&table.header.join(","));
    out.push('\n');
    for i in 0..table.data.nrows() {
        let row: Vec<String> = table.data.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_csv_vector(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    write_csv(
        path,
        &Table::new(vec![name.to_owned()], DMatrix::from_column_slice(values.len(), 1, values)),
    )
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
