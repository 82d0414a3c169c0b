//! CSV and binary matrix serialization. Floats are written with Rust's
//! shortest round-trip formatting, so CSV values parse back bit-exactly.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::processes::Series;

pub fn write_series_csv(path: &Path, series: &Series) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let d = series.dim();
    let mut header = String::from("t");
    for c in 0..d {
        header.push_str(&format!(",x{c}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..series.len() {
        let mut line = format!("{}", series.time_at(i));
        for c in 0..d {
            line.push(',');
            line.push_str(&format!("{}", series.values[[i, c]]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Series> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if lineno == 0 {
            if !trimmed.starts_with('t') {
                return Err(Error::validation(format!(
                    "{}: expected a header starting with 't'",
                    path.display()
                )));
            }
            continue;
        }
        let mut fields = trimmed.split(',');
        let t: f64 = fields
            .next()
            .ok_or_else(|| Error::validation("empty csv row"))?
            .parse()
            .map_err(|e| Error::validation(format!("bad time value on line {}: {e}", lineno + 1)))?;
        let vals = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::validation(format!("bad value on line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if vals.len() != first.len() {
                return Err(Error::validation(format!(
                    "inconsistent column count on line {}",
                    lineno + 1
                )));
            }
        }
        times.push(t);
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(Error::validation("csv series needs at least two rows"));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::validation("csv series times must be strictly increasing"));
    }
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "csv series is not regularly sampled at row {}",
                i + 2
            )));
        }
    }
    let d = rows[0].len();
    let values = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
    Series::new(values, dt, times[0])
}

/// Binary matrix: u64 LE rows, u64 LE cols, then row-major f64 LE entries.
pub fn write_matrix_bin(path: &Path, m: &Array2<f64>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_bin(path: &Path) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    let rows = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[8..].try_into().unwrap()) as usize;
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::validation(format!("bad matrix file {}: {e}", path.display())))
}

pub fn write_vec_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
