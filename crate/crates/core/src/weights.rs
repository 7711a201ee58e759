//! The weight triple `(W_a, W_b, W_c)` of a multiplier network and its text
//! file format.
//!
//! All three matrices are stored densely in row-major order:
//! `W_a` and `W_b` are `r × n²`, `W_c` is `n² × r`.
//!
//! # File format
//!
//! A weight file is a single JSON object:
//!
//! ```text
//! {
//!   "n": 2,
//!   "r": 7,
//!   "w_a": [[...n² numbers...], ...r rows...],
//!   "w_b": [[...n² numbers...], ...r rows...],
//!   "w_c": [[...r numbers...], ...n² rows...]
//! }
//! ```
//!
//! Every number is written in scientific notation with 17 significant digits
//! (`-1.2345678901234567e-3`), which reproduces the 64-bit value exactly on
//! reading.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    n: usize,
    r: usize,
    wa: Vec<f64>,
    wb: Vec<f64>,
    wc: Vec<f64>,
}

impl WeightSet {
    pub fn zeros(n: usize, r: usize) -> Self {
        let dim = n * n;
        Self {
            n,
            r,
            wa: vec![0.0; r * dim],
            wb: vec![0.0; r * dim],
            wc: vec![0.0; dim * r],
        }
    }

    /// Builds a weight set from flat row-major buffers.
    pub fn from_parts(n: usize, r: usize, wa: Vec<f64>, wb: Vec<f64>, wc: Vec<f64>) -> Result<Self> {
        let dim = n * n;
        for (name, buf) in [("W_a", &wa), ("W_b", &wb), ("W_c", &wc)] {
            if buf.len() != r * dim {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} entries, expected {} for n = {n}, r = {r}",
                    buf.len(),
                    r * dim
                )));
            }
            if let Some(pos) = buf.iter().position(|v| !v.is_finite()) {
                return Err(Error::DimensionMismatch(format!("{name} entry {pos} is not finite")));
            }
        }
        Ok(Self { n, r, wa, wb, wc })
    }

    /// The rank-`n³` decomposition implied by the schoolbook algorithm: one
    /// multiplier per triple `(p, m, q)` computing `A[p,m]·B[m,q]` and adding
    /// it into `C[p,q]`.
    pub fn standard(n: usize) -> Self {
        let dim = n * n;
        let r = n * n * n;
        let mut w = Self::zeros(n, r);
        let mut j = 0;
        for p in 0..n {
            for m in 0..n {
                for q in 0..n {
                    w.wa[j * dim + p * n + m] = 1.0;
                    w.wb[j * dim + m * n + q] = 1.0;
                    w.wc[(p * n + q) * r + j] = 1.0;
                    j += 1;
                }
            }
        }
        w
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Length of an unrolled matrix, `n²`.
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn wa(&self) -> &[f64] {
        &self.wa
    }

    pub fn wb(&self) -> &[f64] {
        &self.wb
    }

    pub fn wc(&self) -> &[f64] {
        &self.wc
    }

    pub fn wa_mut(&mut self) -> &mut [f64] {
        &mut self.wa
    }

    pub fn wb_mut(&mut self) -> &mut [f64] {
        &mut self.wb
    }

    pub fn wc_mut(&mut self) -> &mut [f64] {
        &mut self.wc
    }

    /// Mutable views of `W_a`, `W_b`, `W_c`, in that order.
    pub fn buffers_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.wa, &mut self.wb, &mut self.wc]
    }

    #[inline]
    pub fn wa_at(&self, j: usize, k: usize) -> f64 {
        self.wa[j * self.dim() + k]
    }

    #[inline]
    pub fn wb_at(&self, j: usize, l: usize) -> f64 {
        self.wb[j * self.dim() + l]
    }

    #[inline]
    pub fn wc_at(&self, i: usize, j: usize) -> f64 {
        self.wc[i * self.r + j]
    }

    pub fn is_finite(&self) -> bool {
        self.wa.iter().chain(&self.wb).chain(&self.wc).all(|v| v.is_finite())
    }

    /// `max(|W_a|, |W_b|, |W_c|)` over all entries; zero for an empty set.
    pub fn max_abs(&self) -> f64 {
        self.wa
            .iter()
            .chain(&self.wb)
            .chain(&self.wc)
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn to_file_string(&self) -> String {
        let dim = self.dim();
        let mut out = String::new();
        let _ = writeln!(out, "{{");
        let _ = writeln!(out, "  \"n\": {},", self.n);
        let _ = writeln!(out, "  \"r\": {},", self.r);
        write_matrix(&mut out, "w_a", &self.wa, self.r, dim);
        out.push_str(",\n");
        write_matrix(&mut out, "w_b", &self.wb, self.r, dim);
        out.push_str(",\n");
        write_matrix(&mut out, "w_c", &self.wc, dim, self.r);
        out.push_str("\n}\n");
        out
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let raw: RawWeightFile = serde_json::from_str(text)
            .map_err(|e| Error::WeightFile(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if raw.n == 0 || raw.n > crate::tensor::MAX_N {
            return Err(Error::WeightFile(format!(
                "field \"n\": value {} out of range 1..={}",
                raw.n,
                crate::tensor::MAX_N
            )));
        }
        let dim = raw.n * raw.n;
        let wa = flatten("w_a", raw.w_a, raw.r, dim)?;
        let wb = flatten("w_b", raw.w_b, raw.r, dim)?;
        let wc = flatten("w_c", raw.w_c, dim, raw.r)?;
        Ok(Self {
            n: raw.n,
            r: raw.r,
            wa,
            wb,
            wc,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file_str(&text)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeightFile {
    n: usize,
    r: usize,
    w_a: Vec<Vec<f64>>,
    w_b: Vec<Vec<f64>>,
    w_c: Vec<Vec<f64>>,
}

fn write_matrix(out: &mut String, name: &str, data: &[f64], rows: usize, cols: usize) {
    let _ = write!(out, "  \"{name}\": [");
    for row in 0..rows {
        out.push_str(if row == 0 { "\n    [" } else { ",\n    [" });
        for col in 0..cols {
            if col > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{:.16e}", data[row * cols + col]);
        }
        out.push(']');
    }
    if rows > 0 {
        out.push_str("\n  ");
    }
    out.push(']');
}

fn flatten(name: &str, rows: Vec<Vec<f64>>, expect_rows: usize, expect_cols: usize) -> Result<Vec<f64>> {
    if rows.len() != expect_rows {
        return Err(Error::WeightFile(format!(
            "field \"{name}\": {} rows, expected {expect_rows}",
            rows.len()
        )));
    }
    let mut flat = Vec::with_capacity(expect_rows * expect_cols);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != expect_cols {
            return Err(Error::WeightFile(format!(
                "field \"{name}\" row {i}: {} entries, expected {expect_cols}",
                row.len()
            )));
        }
        flat.extend(row);
    }
    Ok(flat)
}
