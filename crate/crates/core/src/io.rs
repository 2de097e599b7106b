//! On-disk formats.
//!
//! Binary tensors (`*.bin`, `*.npyish`): a 16-byte header of four
//! little-endian `u32` dimensions (unused trailing dimensions are 1), then
//! the values as little-endian `f32` in row-major order. Contours and affect
//! tracks are small CSV files with a header row.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::autograd::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: [u32; 4],
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn from_mat(m: &Mat) -> Self {
        Self {
            dims: [m.nrows() as u32, m.ncols() as u32, 1, 1],
            values: m.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Collapses all trailing dimensions into columns.
    pub fn to_mat(&self) -> Mat {
        let rows = self.dims[0] as usize;
        let cols = self.dims[1..].iter().map(|&d| d as usize).product();
        Array2::from_shape_vec((rows, cols), self.values.iter().map(|&v| v as f64).collect())
            .expect("tensor length checked at read")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(path, "shorter than the 16-byte header"));
        }
        let mut dims = [0u32; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        }
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let Some(count) = count else {
            return Err(Error::format(path, "dimension product overflows"));
        };
        let body = &bytes[16..];
        if body.len() != count * 4 {
            return Err(Error::format(
                path,
                format!("header promises {count} values, body holds {} bytes", body.len()),
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, values })
    }
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, t.to_bytes())?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path)?, path)
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_tensor(path, &Tensor::from_mat(m))
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    Ok(read_tensor(path)?.to_mat())
}

/// Writes `frame,<columns...>` rows.
pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from("frame");
    for c in columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the named value columns of a `frame,...` CSV, one `Vec` per column.
pub fn read_csv(path: &Path, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty CSV"))?
        .split(',')
        .map(str::trim)
        .collect();
    let index: Vec<usize> = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::format(path, format!("missing column '{c}'")))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); columns.len()];
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        for (slot, &i) in out.iter_mut().zip(&index) {
            let v = fields
                .get(i)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| Error::format(path, format!("bad value on data line {}", lineno + 1)))?;
            slot.push(v);
        }
    }
    Ok(out)
}
