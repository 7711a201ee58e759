//! The matrix-multiplication tensor `M_n` and decomposition checks against it.
//!
//! Matrices are unrolled row-major: entry `(p, q)` of an `n × n` matrix sits at
//! index `p·n + q` (0-based). With that convention `M_n(i, k, l) = 1` exactly
//! when `i = idx(p, q)`, `k = idx(p, m)` and `l = idx(m, q)` for some
//! `p, m, q`, and zero otherwise.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::weights::WeightSet;

/// Largest supported matrix dimension; `M_6` has 46 656 entries.
pub const MAX_N: usize = 6;

/// Largest accepted 2-norm condition number of a transform matrix.
pub const MAX_TRANSFORM_COND: f64 = 1e8;

/// Dense order-3 tensor of shape `n² × n² × n²`, indexed `(i, k, l)` with `l`
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MatMulTensor {
    n: usize,
    entries: Vec<f64>,
}

impl MatMulTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, l: usize) -> f64 {
        let d = self.dim();
        self.entries[(i * d + k) * d + l]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Squared Frobenius distance to another tensor of the same shape.
    pub fn frobenius_distance_sq(&self, other: &MatMulTensor) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "tensors for n = {} and n = {}",
                self.n, other.n
            )));
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(x, y)| (x - y) * (x - y))
            .sum())
    }
}

#[inline]
pub fn unroll_index(n: usize, p: usize, q: usize) -> usize {
    p * n + q
}

pub fn build_matmul_tensor(n: usize) -> Result<MatMulTensor> {
    if n == 0 || n > MAX_N {
        return Err(Error::SizeOutOfRange(n));
    }
    let d = n * n;
    let mut entries = vec![0.0; d * d * d];
    for p in 0..n {
        for m in 0..n {
            for q in 0..n {
                let i = unroll_index(n, p, q);
                let k = unroll_index(n, p, m);
                let l = unroll_index(n, m, q);
                entries[(i * d + k) * d + l] = 1.0;
            }
        }
    }
    Ok(MatMulTensor { n, entries })
}

/// Root-mean-square entrywise error between `t` and the tensor represented by
/// the weights.
pub fn decomposition_error(w: &WeightSet, t: &MatMulTensor) -> Result<f64> {
    if w.n() != t.n() {
        return Err(Error::DimensionMismatch(format!(
            "weights for n = {} against tensor for n = {}",
            w.n(),
            t.n()
        )));
    }
    let d = t.dim();
    let r = w.r();
    let mut scaled = vec![0.0; r];
    let mut sum_sq = 0.0;
    for i in 0..d {
        for k in 0..d {
            for (j, s) in scaled.iter_mut().enumerate() {
                *s = w.wc_at(i, j) * w.wa_at(j, k);
            }
            for l in 0..d {
                let mut model = 0.0;
                for (j, s) in scaled.iter().enumerate() {
                    model += s * w.wb_at(j, l);
                }
                let diff = t.get(i, k, l) - model;
                sum_sq += diff * diff;
            }
        }
    }
    Ok((sum_sq / (d * d * d) as f64).sqrt())
}

/// `T(i, k, l) = Σ_j W_c(i, j) W_a(j, k) W_b(j, l)`.
pub fn reconstruct_tensor(w: &WeightSet) -> MatMulTensor {
    let d = w.dim();
    let mut entries = vec![0.0; d * d * d];
    for j in 0..w.r() {
        for i in 0..d {
            let c = w.wc_at(i, j);
            if c == 0.0 {
                continue;
            }
            for k in 0..d {
                let ca = c * w.wa_at(j, k);
                if ca == 0.0 {
                    continue;
                }
                let base = (i * d + k) * d;
                for l in 0..d {
                    entries[base + l] += ca * w.wb_at(j, l);
                }
            }
        }
    }
    MatMulTensor { n: w.n(), entries }
}

/// 2-norm condition number from the singular values; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Matrix of the linear map `x ↦ unroll(L · roll(x) · R)` on row-major
/// unrolled `n × n` matrices.
fn sandwich_operator(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let n = left.nrows();
    let d = n * n;
    DMatrix::from_fn(d, d, |row, col| {
        let (p, q) = (row / n, row % n);
        let (s, t) = (col / n, col % n);
        left[(p, s)] * right[(t, q)]
    })
}

fn checked_inverse(name: &'static str, m: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}×{}, expected {n}×{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let cond = condition_number(m);
    if cond.is_nan() || cond > MAX_TRANSFORM_COND {
        return Err(Error::IllConditioned { name, cond });
    }
    m.clone().try_inverse().ok_or(Error::IllConditioned { name, cond })
}

/// Applies the symmetry `A ↦ U A V⁻¹`, `B ↦ V B X⁻¹`, `C ↦ U C X⁻¹` to a
/// decomposition. The returned weights compute
/// `U · N(U⁻¹ A V, V⁻¹ B X) · X⁻¹`, where `N` is the original network, so an
/// exact decomposition stays exact.
pub fn transform_decomposition(
    w: &WeightSet,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<WeightSet> {
    let n = w.n();
    let u_inv = checked_inverse("U", u, n)?;
    let v_inv = checked_inverse("V", v, n)?;
    let x_inv = checked_inverse("X", x, n)?;

    let s_a = sandwich_operator(&u_inv, v);
    let s_b = sandwich_operator(&v_inv, x);
    let s_c = sandwich_operator(u, &x_inv);

    let d = w.dim();
    let r = w.r();
    let wa = DMatrix::from_row_slice(r, d, w.wa()) * s_a;
    let wb = DMatrix::from_row_slice(r, d, w.wb()) * s_b;
    let wc = s_c * DMatrix::from_row_slice(d, r, w.wc());

    WeightSet::from_parts(n, r, row_major(&wa), row_major(&wb), row_major(&wc))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}
