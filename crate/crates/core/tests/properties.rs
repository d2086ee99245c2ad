//! Invariants of the likelihood, the EM map and the helpers, checked on
//! randomly drawn parameters and data.

use gst_ppca::em::{integral_set, log_likelihood, m_step};
use gst_ppca::simulate::{mask_mar, simulate, SimSpec};
use gst_ppca::types::{pack, unpack};
use gst_ppca::{
    collapse_kind, huber_location_scale, model_covariance, validate, DataSet, EmConfig,
    FreeParams, ModelKind, ModelParams, QuadratureGrid,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const NU_CHOICES: [f64; 4] = [3.0, 5.0, 10.0, f64::INFINITY];

fn grid() -> QuadratureGrid {
    EmConfig {
        grid_n: 12,
        ..EmConfig::default()
    }
    .grid()
    .unwrap()
}

fn nu_vector(len: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(prop::sample::select(NU_CHOICES.to_vec()), len)
        .prop_map(DVector::from_vec)
}

fn vector(len: usize, bound: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-bound..bound, len).prop_map(DVector::from_vec)
}

/// General parameters with `d` in 2..=4 and `k < d`. Loadings get a
/// diagonal boost so they keep full column rank.
fn params() -> impl Strategy<Value = ModelParams> {
    (2usize..=4)
        .prop_flat_map(|d| (Just(d), 1usize..d))
        .prop_flat_map(|(d, k)| {
            (
                prop::collection::vec(-1.0..1.0f64, d * k),
                vector(d, 1.0),
                0.1..1.0f64,
                vector(d, 0.5),
                vector(k, 0.5),
                nu_vector(d),
                nu_vector(k),
            )
                .prop_map(move |(w, mu, s2, de, dx, ne, nx)| {
                    let mut w = DMatrix::from_row_slice(d, k, &w);
                    for j in 0..k {
                        w[(j, j)] += 1.5;
                    }
                    ModelParams::new(w, mu, s2, ne, nx).with_skew(de, dx)
                })
        })
}

fn sample(p: &ModelParams, n: usize, seed: u64) -> DataSet {
    simulate(&SimSpec {
        params: p.clone(),
        kind: ModelKind::GStGeneral,
        n,
        seed,
    })
    .unwrap()
}

fn selection() -> impl Strategy<Value = FreeParams> {
    any::<[bool; 5]>().prop_map(|b| FreeParams {
        w: b[0],
        mu: b[1],
        sigma2: b[2],
        delta_eps: b[3],
        delta_x: b[4],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pack_unpack_round_trip(p in params(), sel in selection(), shift in -2.0..2.0f64) {
        let theta = pack(&p, sel);
        prop_assert_eq!(unpack(&p, sel, &theta), p.clone());
        let moved: Vec<f64> = theta.iter().map(|t| t + shift).collect();
        prop_assert_eq!(pack(&unpack(&p, sel, &moved), sel), moved);
    }

    #[test]
    fn collapsed_kind_accepts_its_parameters(p in params()) {
        prop_assert!(validate(&p, collapse_kind(&p)).is_ok());
        prop_assert!(validate(&p, ModelKind::GStGeneral).is_ok());
    }

    #[test]
    fn loglik_ignores_row_order(p in params(), seed in 0u64..1000) {
        let data = sample(&p, 25, seed);
        let reversed: Vec<usize> = (0..data.n()).rev().collect();
        let g = grid();
        let a = log_likelihood(&data, &p, &g).unwrap();
        let b = log_likelihood(&data.select_rows(&reversed), &p, &g).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs(), "{} vs {}", a, b);
    }

    #[test]
    fn equal_latent_dof_is_rotation_invariant(
        p in params(),
        angle in 0.0..std::f64::consts::TAU,
        seed in 0u64..1000,
    ) {
        let mut p = p;
        let k = p.latent_dim();
        p.nu_x = DVector::from_element(k, p.nu_x[0]);
        // Rotation in the plane of the first two factors, identity otherwise.
        let mut r = DMatrix::identity(k, k);
        if k >= 2 {
            let (s, c) = angle.sin_cos();
            r[(0, 0)] = c;
            r[(0, 1)] = -s;
            r[(1, 0)] = s;
            r[(1, 1)] = c;
        }
        let mut rotated = p.clone();
        rotated.w = &p.w * &r;
        rotated.delta_x = r.transpose() * &p.delta_x;
        let data = sample(&p, 20, seed);
        let g = grid();
        let a = log_likelihood(&data, &p, &g).unwrap();
        let b = log_likelihood(&data, &rotated, &g).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs(), "{} vs {}", a, b);
    }

    #[test]
    fn em_step_does_not_lower_loglik(p in params(), seed in 0u64..1000, masked in any::<bool>()) {
        let mut data = sample(&p, 40, seed);
        if masked {
            data = mask_mar(&data, 0.15, seed).unwrap();
        }
        // Start away from the truth so the step has work to do.
        let mut start = p.clone();
        start.w *= 0.7;
        start.sigma2 *= 1.8;
        start.delta_x *= -1.0;
        let g = grid();
        let before = log_likelihood(&data, &start, &g).unwrap();
        let next = m_step(&data, &start, ModelKind::GStGeneral, &g).unwrap();
        let after = log_likelihood(&data, &next, &g).unwrap();
        prop_assert!(after >= before - 1e-9 * before.abs(), "{} -> {}", before, after);
    }

    #[test]
    fn zero_rate_mask_changes_nothing(p in params(), seed in 0u64..1000) {
        let data = sample(&p, 15, seed);
        let masked = mask_mar(&data, 0.0, seed).unwrap();
        prop_assert_eq!(&masked, &data);
        let g = grid();
        prop_assert_eq!(integral_set(&masked, &p, &g).unwrap(), integral_set(&data, &p, &g).unwrap());
    }

    #[test]
    fn huber_is_affine_equivariant(
        values in prop::collection::vec(-50.0..50.0f64, 12..60),
        scale in prop_oneof![-4.0..-0.25f64, 0.25..4.0f64],
        shift in -10.0..10.0f64,
    ) {
        let Ok(base) = huber_location_scale(&values, 1.345) else {
            return Ok(());
        };
        let moved: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
        let est = huber_location_scale(&moved, 1.345).unwrap();
        let tol = 1e-8 * (1.0 + base.scale * scale.abs() + shift.abs());
        prop_assert!((est.location - (scale * base.location + shift)).abs() <= tol);
        prop_assert!((est.scale - scale.abs() * base.scale).abs() <= tol);
    }

    #[test]
    fn defined_covariance_is_symmetric_positive_definite(p in params()) {
        let report = model_covariance(&p, ModelKind::GStGeneral).unwrap();
        if let Some(cov) = report.cov_matrix() {
            prop_assert!((&cov - cov.transpose()).amax() <= 1e-12 * cov.amax());
            prop_assert!(cov.symmetric_eigenvalues().min() > 0.0);
        } else {
            let heavy = p.nu_eps.iter().chain(p.nu_x.iter()).any(|&nu| nu <= 4.0);
            prop_assert!(heavy);
        }
    }
}
