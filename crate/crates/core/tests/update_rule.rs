use mmcl_core::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `G` written out densely from its definition.
fn materialized_g(w: &WeightSet, fs: &ForwardState) -> DMatrix<f64> {
    let d = w.dim();
    let wc = DMatrix::from_row_slice(d, w.r(), w.wc());
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(
        w.r(),
        (0..w.r()).map(|j| fs.a_star[j].powi(2) + fs.b_star[j].powi(2)),
    ));
    let cc: f64 = fs.c_star.iter().map(|x| x * x).sum();
    DMatrix::identity(d, d) * cc + &wc * diag * wc.transpose()
}

fn numerical_rank_at_most_one(delta: &DMatrix<f64>) -> bool {
    let sv = delta.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s.len() < 2 || s[1] <= 1e-12 * s[0]
}

fn diff(next: &[f64], prev: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    let d: Vec<f64> = next.iter().zip(prev).map(|(a, b)| a - b).collect();
    DMatrix::from_row_slice(rows, cols, &d)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn linear_rule_exact_monotone_and_projective(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let target = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let x = DVector::from_fn(cols, |_, _| rng.random_range(-1.0..1.0));
        prop_assume!(x.norm() > 1e-6);
        let x = x.normalize();
        let y = &target * &x;
        let next = linear_cl_update(&w, &x, &y).unwrap();
        let out = &next * &x;
        for i in 0..rows {
            prop_assert!((out[i] - y[i]).abs() <= 1e-13);
        }
        prop_assert!((&next - &target).norm() <= (&w - &target).norm() + 1e-12);
        let proj = (&next - &target) * &x;
        prop_assert!(proj.amax() <= 1e-13);
    }

    #[test]
    fn network_update_algebra(n in 1usize..4, r in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = init_weights(n, r, 1.0, &mut rng);
        let item = sample_item(n, &mut rng);
        let fs = forward(&w, item.a(), item.b()).unwrap();

        // apply_g against the dense oracle, plus symmetry and positivity
        let g = materialized_g(&w, &fs);
        let u: Vec<f64> = (0..w.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..w.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gv = apply_g(&w, &fs, &v).unwrap();
        let gu = apply_g(&w, &fs, &u).unwrap();
        let dense = &g * DVector::from_column_slice(&v);
        let scale = g.amax().max(1.0);
        for i in 0..w.dim() {
            prop_assert!((gv[i] - dense[i]).abs() <= 1e-12 * scale);
        }
        let nu = dot(&u, &u).sqrt();
        let nv = dot(&v, &v).sqrt();
        prop_assert!((dot(&u, &gv) - dot(&v, &gu)).abs() <= 1e-12 * nu * nv * scale);
        prop_assert!(dot(&v, &gv) >= 0.0);

        // CG1 residual orthogonality
        let (gamma, skipped) = compute_gamma(&w, &fs, item.c(), UpdateMode::Cg1).unwrap();
        let delta: Vec<f64> = item.c().iter().zip(&fs.c_tilde).map(|(a, b)| a - b).collect();
        if !skipped {
            let gg = apply_g(&w, &fs, &gamma).unwrap();
            let resid: Vec<f64> = delta.iter().zip(&gg).map(|(a, b)| a - b).collect();
            prop_assert!(dot(&delta, &resid).abs() <= 1e-12 * dot(&delta, &delta));
        } else {
            prop_assert!(gamma.iter().all(|&x| x == 0.0));
        }

        // each increment is rank one
        for mode in [UpdateMode::Cg1, UpdateMode::Diag] {
            let (next, inter) = conservative_update(&w, &item, mode).unwrap();
            let d = w.dim();
            prop_assert!(numerical_rank_at_most_one(&diff(next.wa(), w.wa(), r, d)));
            prop_assert!(numerical_rank_at_most_one(&diff(next.wb(), w.wb(), r, d)));
            prop_assert!(numerical_rank_at_most_one(&diff(next.wc(), w.wc(), d, r)));
            if inter.skipped {
                prop_assert!(inter.alpha.iter().chain(&inter.beta).chain(&inter.gamma).all(|&x| x == 0.0));
                prop_assert_eq!(&next, &w);
            }
        }
    }

    #[test]
    fn modes_agree_without_output_weights(n in 1usize..4, r in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = init_weights(n, r, 1.0, &mut rng);
        w.wc_mut().iter_mut().for_each(|x| *x = 0.0);
        let item = sample_item(n, &mut rng);
        let fs = forward(&w, item.a(), item.b()).unwrap();
        let (cg, s1) = compute_gamma(&w, &fs, item.c(), UpdateMode::Cg1).unwrap();
        let (dg, s2) = compute_gamma(&w, &fs, item.c(), UpdateMode::Diag).unwrap();
        prop_assert_eq!(s1, s2);
        let cc: f64 = fs.c_star.iter().map(|x| x * x).sum();
        for i in 0..w.dim() {
            prop_assert!((cg[i] - dg[i]).abs() <= 1e-12 * dg[i].abs().max(1.0));
            if !s2 {
                let expect = (item.c()[i] - fs.c_tilde[i]) / cc;
                prop_assert!((dg[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }
}

#[test]
fn diag_update_on_scalar_network() {
    // with W_c = 0, DIAG and CG1 both give γ = δ / (c̃*ᵀc̃*)
    let w = WeightSet::from_parts(1, 1, vec![2.0], vec![0.5], vec![0.0]).unwrap();
    let item = TrainingItem::new(1, vec![1.0], vec![-1.0], vec![-1.0]).unwrap();
    let (_, cg) = conservative_update(&w, &item, UpdateMode::Cg1).unwrap();
    let (_, dg) = conservative_update(&w, &item, UpdateMode::Diag).unwrap();
    // c̃* = 2 · (-0.5) = -1, δ = -1
    assert_eq!(cg.gamma, vec![-1.0]);
    assert_eq!(dg.gamma, vec![-1.0]);
}
