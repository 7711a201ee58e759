//! Conservative-learning updates.
//!
//! Each training item changes the weights by the smallest amount (to first
//! order, in Frobenius norm) that makes the network reproduce that item. For a
//! purely linear network this is the exact rank-1 rule in
//! [`linear_cl_update`]. For the multiplier network the rule linearizes the
//! constraint system around the forward pass:
//!
//! 1. forward pass: `ã* = W_a a`, `b̃* = W_b b`, `c̃* = ã* ∘ b̃*`, `c̃ = W_c c̃*`;
//! 2. output multiplier `γ` from the discrepancy `δ = c − c̃`, see [`compute_gamma`];
//! 3. `Δ_c = γ c̃*ᵀ`;
//! 4. `α = b̃* ∘ (W_cᵀ γ)`, `β = ã* ∘ (W_cᵀ γ)`;
//! 5. `Δ_a = α aᵀ`, `Δ_b = β bᵀ`.
//!
//! There is no step size. The only constants are the degeneracy floors below.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{dot, forward_into, ForwardState, TrainingItem};
use crate::weights::WeightSet;

/// Skip when `‖δ‖²` is at or below this floor.
pub const DISCREPANCY_FLOOR: f64 = 1e-28;

/// Skip when the Rayleigh quotient `δᵀGδ / δᵀδ` (CG1) or `c̃*ᵀc̃*` (DIAG) is at
/// or below this floor.
pub const CURVATURE_FLOOR: f64 = 1e-28;

/// How `γ` is obtained from `δ = Gγ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// One conjugate-gradient step from `γ = 0`: `γ = (δᵀδ / δᵀGδ) δ`.
    #[default]
    Cg1,
    /// Keep only the diagonal part of `G`: `γ = δ / (c̃*ᵀc̃*)`.
    Diag,
}

impl std::str::FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cg1" => Ok(Self::Cg1),
            "diag" => Ok(Self::Diag),
            other => Err(format!("unknown update mode {other:?} (expected cg1 or diag)")),
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cg1 => "cg1",
            Self::Diag => "diag",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateIntermediates {
    /// `δ = c − c̃`
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Set when a degeneracy floor suppressed the update; `γ`, `α`, `β` are
    /// then zero.
    pub skipped: bool,
}

/// `W' = W + (y − Wx) xᵀ` for a unit vector `x`.
pub fn linear_cl_update(w: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    if w.ncols() != x.len() || w.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "W is {}×{}, x has {} entries, y has {}",
            w.nrows(),
            w.ncols(),
            x.len(),
            y.len()
        )));
    }
    let norm_sq = x.dot(x);
    if (norm_sq - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized(norm_sq));
    }
    let residual = y - w * x;
    Ok(w + residual * x.transpose())
}

fn check_state(w: &WeightSet, fs: &ForwardState, v: &[f64]) -> Result<()> {
    if fs.a_star.len() != w.r()
        || fs.b_star.len() != w.r()
        || fs.c_star.len() != w.r()
        || fs.c_tilde.len() != w.dim()
        || v.len() != w.dim()
    {
        return Err(Error::DimensionMismatch(
            "forward state or vector does not match the weight shapes".into(),
        ));
    }
    Ok(())
}

/// `G v` with `G = (c̃*ᵀc̃*) I + W_c diag(ã*∘ã* + b̃*∘b̃*) W_cᵀ`, without forming `G`.
pub fn apply_g(w: &WeightSet, fs: &ForwardState, v: &[f64]) -> Result<Vec<f64>> {
    check_state(w, fs, v)?;
    let mut back = vec![0.0; w.r()];
    let mut out = vec![0.0; w.dim()];
    apply_g_into(w, fs, v, &mut back, &mut out);
    Ok(out)
}

fn apply_g_into(w: &WeightSet, fs: &ForwardState, v: &[f64], back: &mut [f64], out: &mut [f64]) {
    let r = w.r();
    let wc = w.wc();
    back.iter_mut().for_each(|x| *x = 0.0);
    for (i, vi) in v.iter().enumerate() {
        for (bj, wij) in back.iter_mut().zip(&wc[i * r..(i + 1) * r]) {
            *bj += wij * vi;
        }
    }
    for (j, bj) in back.iter_mut().enumerate() {
        *bj *= fs.a_star[j] * fs.a_star[j] + fs.b_star[j] * fs.b_star[j];
    }
    let scale = dot(&fs.c_star, &fs.c_star);
    for (i, oi) in out.iter_mut().enumerate() {
        *oi = scale * v[i] + dot(&wc[i * r..(i + 1) * r], back);
    }
}

/// Returns `(γ, skipped)` for target output `c`.
pub fn compute_gamma(w: &WeightSet, fs: &ForwardState, c: &[f64], mode: UpdateMode) -> Result<(Vec<f64>, bool)> {
    check_state(w, fs, c)?;
    let delta: Vec<f64> = c.iter().zip(&fs.c_tilde).map(|(x, y)| x - y).collect();
    let mut gamma = vec![0.0; w.dim()];
    let mut back = vec![0.0; w.r()];
    let skipped = gamma_into(w, fs, &delta, mode, &mut back, &mut gamma);
    Ok((gamma, skipped))
}

fn gamma_into(
    w: &WeightSet,
    fs: &ForwardState,
    delta: &[f64],
    mode: UpdateMode,
    back: &mut [f64],
    gamma: &mut [f64],
) -> bool {
    let dd = dot(delta, delta);
    let coeff = if dd <= DISCREPANCY_FLOOR {
        None
    } else {
        match mode {
            UpdateMode::Cg1 => {
                apply_g_into(w, fs, delta, back, gamma);
                let dgd = dot(delta, gamma);
                (dgd > CURVATURE_FLOOR * dd).then(|| dd / dgd)
            }
            UpdateMode::Diag => {
                let cc = dot(&fs.c_star, &fs.c_star);
                (cc > CURVATURE_FLOOR).then(|| 1.0 / cc)
            }
        }
    };
    match coeff {
        Some(s) if s.is_finite() => {
            for (g, d) in gamma.iter_mut().zip(delta) {
                *g = s * d;
            }
            false
        }
        _ => {
            gamma.iter_mut().for_each(|g| *g = 0.0);
            true
        }
    }
}

/// `α = b̃* ∘ (W_cᵀ γ)`, `β = ã* ∘ (W_cᵀ γ)`.
pub fn backprop_alpha_beta(w: &WeightSet, fs: &ForwardState, gamma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state(w, fs, gamma)?;
    let mut alpha = vec![0.0; w.r()];
    let mut beta = vec![0.0; w.r()];
    backprop_into(w, fs, gamma, &mut alpha, &mut beta);
    Ok((alpha, beta))
}

fn backprop_into(w: &WeightSet, fs: &ForwardState, gamma: &[f64], alpha: &mut [f64], beta: &mut [f64]) {
    let r = w.r();
    let wc = w.wc();
    alpha.iter_mut().for_each(|x| *x = 0.0);
    for (i, gi) in gamma.iter().enumerate() {
        for (aj, wij) in alpha.iter_mut().zip(&wc[i * r..(i + 1) * r]) {
            *aj += wij * gi;
        }
    }
    for j in 0..r {
        let back = alpha[j];
        alpha[j] = fs.b_star[j] * back;
        beta[j] = fs.a_star[j] * back;
    }
}

/// One conservative-learning step. The input weights are left untouched.
pub fn conservative_update(
    w: &WeightSet,
    item: &TrainingItem,
    mode: UpdateMode,
) -> Result<(WeightSet, UpdateIntermediates)> {
    if item.n() != w.n() {
        return Err(Error::InvalidItem(format!(
            "item for n = {} applied to weights for n = {}",
            item.n(),
            w.n()
        )));
    }
    let mut next = w.clone();
    let mut learner = Learner::new(w.n(), w.r());
    let skipped = learner.step(&mut next, item, mode);
    let s = learner.scratch;
    Ok((
        next,
        UpdateIntermediates {
            delta: s.delta,
            gamma: s.gamma,
            alpha: s.alpha,
            beta: s.beta,
            skipped,
        },
    ))
}

#[derive(Debug, Clone)]
struct Scratch {
    fs: ForwardState,
    delta: Vec<f64>,
    gamma: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    back: Vec<f64>,
}

/// Reusable buffers for applying updates in place, one item at a time.
#[derive(Debug, Clone)]
pub struct Learner {
    n: usize,
    r: usize,
    scratch: Scratch,
}

impl Learner {
    pub fn new(n: usize, r: usize) -> Self {
        let d = n * n;
        Self {
            n,
            r,
            scratch: Scratch {
                fs: ForwardState {
                    a_star: vec![0.0; r],
                    b_star: vec![0.0; r],
                    c_star: vec![0.0; r],
                    c_tilde: vec![0.0; d],
                },
                delta: vec![0.0; d],
                gamma: vec![0.0; d],
                alpha: vec![0.0; r],
                beta: vec![0.0; r],
                back: vec![0.0; r],
            },
        }
    }

    /// Applies steps 1–5 to `w` in place and returns whether the update was
    /// skipped. Panics if `w` or `item` do not match the learner's shape.
    pub fn step(&mut self, w: &mut WeightSet, item: &TrainingItem, mode: UpdateMode) -> bool {
        assert_eq!((w.n(), w.r()), (self.n, self.r), "learner shape");
        assert_eq!(item.n(), self.n, "item shape");
        let s = &mut self.scratch;
        let d = w.dim();
        let r = w.r();

        forward_into(w, item.a(), item.b(), &mut s.fs);
        for ((dl, c), ct) in s.delta.iter_mut().zip(item.c()).zip(&s.fs.c_tilde) {
            *dl = c - ct;
        }
        if gamma_into(w, &s.fs, &s.delta, mode, &mut s.back, &mut s.gamma) {
            s.alpha.iter_mut().for_each(|x| *x = 0.0);
            s.beta.iter_mut().for_each(|x| *x = 0.0);
            return true;
        }
        // α, β use the pre-update W_c
        backprop_into(w, &s.fs, &s.gamma, &mut s.alpha, &mut s.beta);

        let wc = w.wc_mut();
        for i in 0..d {
            let g = s.gamma[i];
            for (wij, cj) in wc[i * r..(i + 1) * r].iter_mut().zip(&s.fs.c_star) {
                *wij += g * cj;
            }
        }
        let wa = w.wa_mut();
        for j in 0..r {
            let al = s.alpha[j];
            for (wjk, ak) in wa[j * d..(j + 1) * d].iter_mut().zip(item.a()) {
                *wjk += al * ak;
            }
        }
        let wb = w.wb_mut();
        for j in 0..r {
            let be = s.beta[j];
            for (wjl, bl) in wb[j * d..(j + 1) * d].iter_mut().zip(item.b()) {
                *wjl += be * bl;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, init_weights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_weights(wa: f64, wb: f64, wc: f64) -> WeightSet {
        WeightSet::from_parts(1, 1, vec![wa], vec![wb], vec![wc]).unwrap()
    }

    fn unit_item() -> TrainingItem {
        TrainingItem::new(1, vec![1.0], vec![1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn linear_zero_discrepancy_is_noop() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let x = DVector::from_row_slice(&[0.6, 0.0, 0.8]);
        let y = &w * &x;
        assert_eq!(linear_cl_update(&w, &x, &y).unwrap(), w);
    }

    #[test]
    fn linear_scalar_case() {
        let w = DMatrix::from_element(1, 1, 0.0);
        let x = DVector::from_element(1, 1.0);
        let y = DVector::from_element(1, 2.0);
        assert_eq!(linear_cl_update(&w, &x, &y).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn linear_rejects_unnormalized() {
        let w = DMatrix::from_element(1, 2, 0.0);
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        let y = DVector::from_element(1, 2.0);
        assert!(matches!(linear_cl_update(&w, &x, &y), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn g_with_zero_output_weights_is_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = init_weights(2, 7, 1.0, &mut rng);
        w.wc_mut().iter_mut().for_each(|x| *x = 0.0);
        let fs = forward(&w, &[0.5; 4], &[0.5, -0.5, 0.5, -0.5]).unwrap();
        let v = [1.0, -2.0, 0.5, 3.0];
        let gv = apply_g(&w, &fs, &v).unwrap();
        let cc = dot(&fs.c_star, &fs.c_star);
        for (g, x) in gv.iter().zip(&v) {
            assert!((g - cc * x).abs() <= 1e-15 * (cc * x).abs().max(1.0));
        }
        assert_eq!(apply_g(&w, &fs, &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn gamma_skips_exact_output() {
        let w = scalar_weights(1.0, 1.0, 1.0);
        let fs = forward(&w, &[1.0], &[1.0]).unwrap();
        for mode in [UpdateMode::Cg1, UpdateMode::Diag] {
            let (gamma, skipped) = compute_gamma(&w, &fs, &[1.0], mode).unwrap();
            assert!(skipped);
            assert_eq!(gamma, vec![0.0]);
        }
    }

    #[test]
    fn gamma_skips_when_multipliers_vanish() {
        let w = WeightSet::zeros(2, 3);
        let fs = forward(&w, &[0.5; 4], &[0.5; 4]).unwrap();
        let (gamma, skipped) = compute_gamma(&w, &fs, &[0.5, 0.0, 0.0, 0.5], UpdateMode::Cg1).unwrap();
        assert!(skipped);
        assert!(gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backprop_scalar_case() {
        let w = scalar_weights(1.0, 3.0, 2.0);
        let fs = forward(&w, &[1.0], &[1.0]).unwrap();
        assert_eq!(fs.b_star, vec![3.0]);
        let (alpha, beta) = backprop_alpha_beta(&w, &fs, &[5.0]).unwrap();
        assert_eq!(alpha, vec![30.0]);
        assert_eq!(beta, vec![10.0]);
    }

    #[test]
    fn backprop_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = init_weights(2, 7, 1.0, &mut rng);
        let fs = forward(&w, &[0.5; 4], &[0.5; 4]).unwrap();
        let (a, b) = backprop_alpha_beta(&w, &fs, &[0.0; 4]).unwrap();
        assert!(a.iter().chain(&b).all(|&x| x == 0.0));
        let mut wz = w.clone();
        wz.wc_mut().iter_mut().for_each(|x| *x = 0.0);
        let (a, b) = backprop_alpha_beta(&wz, &fs, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(a.iter().chain(&b).all(|&x| x == 0.0));
    }

    #[test]
    fn exact_scalar_network_unchanged() {
        let w = scalar_weights(1.0, 1.0, 1.0);
        let (next, inter) = conservative_update(&w, &unit_item(), UpdateMode::Cg1).unwrap();
        assert!(inter.skipped);
        assert_eq!(next, w);
    }

    #[test]
    fn scalar_hand_trace() {
        // c̃ = 0, δ = 1, c̃* = 1, G = 1, γ = 1, Δ_c = 1, α = β = 0
        let w = scalar_weights(1.0, 1.0, 0.0);
        let (next, inter) = conservative_update(&w, &unit_item(), UpdateMode::Cg1).unwrap();
        assert!(!inter.skipped);
        assert_eq!(inter.delta, vec![1.0]);
        assert_eq!(inter.gamma, vec![1.0]);
        assert_eq!(inter.alpha, vec![0.0]);
        assert_eq!(inter.beta, vec![0.0]);
        assert_eq!(next, scalar_weights(1.0, 1.0, 1.0));
        let fs = forward(&next, &[1.0], &[1.0]).unwrap();
        assert_eq!(fs.c_tilde, vec![1.0]);
    }

    #[test]
    fn update_leaves_correct_item_alone() {
        let w = crate::network::strassen_fixture();
        let item = TrainingItem::from_matrices(2, vec![0.5, -1.0, 0.25, 2.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (next, inter) = conservative_update(&w, &item, UpdateMode::Cg1).unwrap();
        assert!(inter.skipped);
        assert_eq!(next, w);
    }

    #[test]
    fn update_rejects_mismatched_item() {
        let w = WeightSet::zeros(3, 2);
        assert!(conservative_update(&w, &unit_item(), UpdateMode::Diag).is_err());
    }

    #[test]
    fn update_reduces_item_discrepancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = init_weights(2, 7, 1.0, &mut rng);
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let item = TrainingItem::from_matrices(2, a, b).unwrap();
        let (next, inter) = conservative_update(&w, &item, UpdateMode::Cg1).unwrap();
        let after = forward(&next, item.a(), item.b()).unwrap();
        let resid: f64 = item.c().iter().zip(&after.c_tilde).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(resid < dot(&inter.delta, &inter.delta));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("CG1".parse::<UpdateMode>().unwrap(), UpdateMode::Cg1);
        assert_eq!("diag".parse::<UpdateMode>().unwrap(), UpdateMode::Diag);
        assert!("cg2".parse::<UpdateMode>().is_err());
    }
}
