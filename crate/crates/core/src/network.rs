//! The three-layer multiplier network: linear pooling into `r` multipliers,
//! componentwise products, and linear pooling of the products into the output.

use rand::Rng;

use crate::error::{Error, Result};
use crate::weights::WeightSet;

/// Tolerance on the `aᵀa = bᵀb = 1` and `c = ab` item invariants.
pub const ITEM_TOLERANCE: f64 = 1e-12;

/// Intermediate values of a forward pass with the current weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    /// `ã* = W_a a`
    pub a_star: Vec<f64>,
    /// `b̃* = W_b b`
    pub b_star: Vec<f64>,
    /// `c̃* = ã* ∘ b̃*`
    pub c_star: Vec<f64>,
    /// `c̃ = W_c c̃*`
    pub c_tilde: Vec<f64>,
}

/// A normalized training example: unrolled `A`, `B` with unit Frobenius norm
/// and their product `C = AB`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TrainingItem {
    /// Validates the normalization and product invariants.
    pub fn new(n: usize, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let d = n * n;
        if a.len() != d || b.len() != d || c.len() != d {
            return Err(Error::InvalidItem(format!(
                "vector lengths ({}, {}, {}) do not match n² = {d}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        for (name, v) in [("a", &a), ("b", &b)] {
            let norm_sq = dot(v, v);
            if (norm_sq - 1.0).abs() > ITEM_TOLERANCE {
                return Err(Error::InvalidItem(format!("{name}ᵀ{name} = {norm_sq}, expected 1")));
            }
        }
        let product = unrolled_product(n, &a, &b);
        if let Some((i, _)) = product
            .iter()
            .zip(&c)
            .enumerate()
            .find(|(_, (x, y))| (*x - *y).abs() > ITEM_TOLERANCE)
        {
            return Err(Error::InvalidItem(format!("c[{i}] is not the product entry")));
        }
        Ok(Self { n, a, b, c })
    }

    /// Normalizes `A` and `B` and computes `C`; `None` if either is zero.
    pub fn from_matrices(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Self> {
        let na = dot(&a, &a).sqrt();
        let nb = dot(&b, &b).sqrt();
        if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
            return None;
        }
        a.iter_mut().for_each(|x| *x /= na);
        b.iter_mut().for_each(|x| *x /= nb);
        let c = unrolled_product(n, &a, &b);
        Some(Self { n, a, b, c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `unroll(roll(a) · roll(b))` for row-major unrolled `n × n` matrices.
pub fn unrolled_product(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            c[p * n + q] = (0..n).map(|m| a[p * n + m] * b[m * n + q]).sum();
        }
    }
    c
}

/// Every entry independently uniform on `[-scale, scale]`, drawn in the order
/// `W_a`, `W_b`, `W_c`, each row-major.
pub fn init_weights<R: Rng + ?Sized>(n: usize, r: usize, scale: f64, rng: &mut R) -> WeightSet {
    let mut w = WeightSet::zeros(n, r);
    for buf in w.buffers_mut() {
        for x in buf.iter_mut() {
            *x = rng.random_range(-scale..=scale);
        }
    }
    w
}

pub fn forward(w: &WeightSet, a: &[f64], b: &[f64]) -> Result<ForwardState> {
    let d = w.dim();
    if a.len() != d || b.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "inputs of length ({}, {}) for a network on n² = {d}",
            a.len(),
            b.len()
        )));
    }
    let r = w.r();
    let mut state = ForwardState {
        a_star: vec![0.0; r],
        b_star: vec![0.0; r],
        c_star: vec![0.0; r],
        c_tilde: vec![0.0; d],
    };
    forward_into(w, a, b, &mut state);
    Ok(state)
}

/// Forward pass into preallocated buffers; shapes are the caller's problem.
pub(crate) fn forward_into(w: &WeightSet, a: &[f64], b: &[f64], state: &mut ForwardState) {
    let d = w.dim();
    let r = w.r();
    for j in 0..r {
        let sa = dot(&w.wa()[j * d..(j + 1) * d], a);
        let sb = dot(&w.wb()[j * d..(j + 1) * d], b);
        state.a_star[j] = sa;
        state.b_star[j] = sb;
        state.c_star[j] = sa * sb;
    }
    for i in 0..d {
        state.c_tilde[i] = dot(&w.wc()[i * r..(i + 1) * r], &state.c_star);
    }
}

/// Strassen's rank-7 scheme for 2 × 2 matrices.
///
/// ```text
/// M1 = (A11 + A22)(B11 + B22)     C11 = M1 + M4 - M5 + M7
/// M2 = (A21 + A22) B11            C12 = M3 + M5
/// M3 = A11 (B12 - B22)            C21 = M2 + M4
/// M4 = A22 (B21 - B11)            C22 = M1 - M2 + M3 + M6
/// M5 = (A11 + A12) B22
/// M6 = (A21 - A11)(B11 + B12)
/// M7 = (A12 - A22)(B21 + B22)
/// ```
pub fn strassen_fixture() -> WeightSet {
    // columns: 11, 12, 21, 22
    #[rustfmt::skip]
    let wa = vec![
         1.0,  0.0,  0.0,  1.0,
         0.0,  0.0,  1.0,  1.0,
         1.0,  0.0,  0.0,  0.0,
         0.0,  0.0,  0.0,  1.0,
         1.0,  1.0,  0.0,  0.0,
        -1.0,  0.0,  1.0,  0.0,
         0.0,  1.0,  0.0, -1.0,
    ];
    #[rustfmt::skip]
    let wb = vec![
         1.0,  0.0,  0.0,  1.0,
         1.0,  0.0,  0.0,  0.0,
         0.0,  1.0,  0.0, -1.0,
        -1.0,  0.0,  1.0,  0.0,
         0.0,  0.0,  0.0,  1.0,
         1.0,  1.0,  0.0,  0.0,
         0.0,  0.0,  1.0,  1.0,
    ];
    // rows: C11, C12, C21, C22; columns: M1..M7
    #[rustfmt::skip]
    let wc = vec![
         1.0,  0.0,  0.0,  1.0, -1.0,  0.0,  1.0,
         0.0,  0.0,  1.0,  0.0,  1.0,  0.0,  0.0,
         0.0,  1.0,  0.0,  1.0,  0.0,  0.0,  0.0,
         1.0, -1.0,  1.0,  0.0,  0.0,  1.0,  0.0,
    ];
    WeightSet::from_parts(2, 7, wa, wb, wc).expect("fixture shapes")
}
