//! Property tests for the invariants of the engine.

use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use homog_core::coefficients::{constant_identity, sine_1d};
use homog_core::corrector::{differentiate, CorrectorField, CorrectorTarget};
use homog_core::effective::{effective_from_corrector, EffectiveModel, PSD_TOLERANCE};
use homog_core::ergodic::{fourier_modes, pi_average, InvariantMeasureEstimate};
use homog_core::feynman_kac::{solve_elliptic, solve_parabolic, EllipticData, ParabolicData};
use homog_core::field::{periodic_interpolate, ScalarFn};
use homog_core::linalg::min_eigenvalue;
use homog_core::sde::simulate_scaled;
use homog_core::{DomainSpec, Error, Executor, ScalarForm, Serial, SimConfig, Torus};

fn torus_2d() -> impl Strategy<Value = Torus> {
    (0.5f64..20.0, 0.5f64..20.0).prop_map(|(a, b)| Torus::new(vec![a, b]).unwrap())
}

/// Evaluates indices in reverse and in two interleaved halves, then restores
/// index order, as a multi-worker executor would.
struct Scrambled;

impl Executor for Scrambled {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
        for i in (0..n).rev().filter(|i| i % 2 == 1).chain((0..n).rev().filter(|i| i % 2 == 0)) {
            slots[i] = Some(f(i));
        }
        slots.into_iter().map(|s| s.unwrap()).collect()
    }
}

/// A corrector field with the given node values and its stencil Jacobian.
fn field(torus: &Torus, shape: &[usize], target: CorrectorTarget, values: Vec<f64>) -> CorrectorField {
    let f = CorrectorField::from_values(torus.clone(), shape.to_vec(), target, values).unwrap();
    let step = torus.periods()[0] / shape[0] as f64;
    differentiate(&f, step).unwrap()
}

/// A smooth 1-periodic profile from two Fourier modes, sampled on 64 nodes.
fn trig(c: &[f64]) -> Vec<f64> {
    (0..64)
        .map(|k| {
            let x = 2.0 * PI * k as f64 / 64.0;
            c[0] * x.sin() + c[1] * x.cos() + c[2] * (2.0 * x).sin() + c[3] * (2.0 * x).cos()
        })
        .collect()
}

proptest! {
    #[test]
    fn wrap_lands_in_the_cell_and_differs_by_periods(t in torus_2d(), x in prop::collection::vec(-1e3f64..1e3, 2)) {
        let w = t.wrap(&x);
        for i in 0..2 {
            let tau = t.periods()[i];
            prop_assert!(w[i] >= 0.0 && w[i] < tau);
            let k = (x[i] - w[i]) / tau;
            prop_assert!((k - k.round()).abs() < 1e-9 * (1.0 + k.abs()));
        }
    }

    #[test]
    fn minimal_image_is_the_shortest_representative(t in torus_2d(), x in prop::collection::vec(-50f64..50.0, 2), y in prop::collection::vec(-50f64..50.0, 2)) {
        let mut d = [0.0; 2];
        t.minimal_image(&x, &y, &mut d);
        for i in 0..2 {
            let tau = t.periods()[i];
            prop_assert!(d[i].abs() <= 0.5 * tau + 1e-9);
            let k = (x[i] - y[i] - d[i]) / tau;
            prop_assert!((k - k.round()).abs() < 1e-6);
        }
        let dist = t.periodic_distance(&x, &y);
        prop_assert!((dist - t.periodic_distance(&y, &x)).abs() < 1e-12);
        prop_assert!(dist <= 0.5 * (t.periods()[0].hypot(t.periods()[1])) + 1e-9);
    }

    #[test]
    fn interpolation_is_exact_at_nodes_periodic_and_bounded(
        t in torus_2d(),
        values in prop::collection::vec(-5f64..5.0, 12),
        x in prop::collection::vec(-30f64..30.0, 2),
    ) {
        let shape = [3, 4];
        let mut out = [0.0];
        for k in 0..12 {
            let node = [(k / 4) as f64 * t.periods()[0] / 3.0, (k % 4) as f64 * t.periods()[1] / 4.0];
            periodic_interpolate(&t, &shape, 1, &values, &node, &mut out);
            prop_assert!((out[0] - values[k]).abs() < 1e-9);
        }
        periodic_interpolate(&t, &shape, 1, &values, &x, &mut out);
        let shifted = [x[0] + 3.0 * t.periods()[0], x[1] - 2.0 * t.periods()[1]];
        let mut again = [0.0];
        periodic_interpolate(&t, &shape, 1, &values, &shifted, &mut again);
        prop_assert!((out[0] - again[0]).abs() < 1e-9);
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        prop_assert!(out[0] >= lo - 1e-12 && out[0] <= hi + 1e-12);
    }

    #[test]
    fn psd_repair_clips_only_roundoff(m in prop::collection::vec(-2f64..2.0, 4), shift in -1e-6f64..1e-6) {
        // a = M M^T + shift I has smallest eigenvalue >= shift.
        let mut a = vec![
            m[0] * m[0] + m[1] * m[1], m[0] * m[2] + m[1] * m[3],
            m[2] * m[0] + m[3] * m[1], m[2] * m[2] + m[3] * m[3],
        ];
        a[0] += shift;
        a[3] += shift;
        let lam = min_eigenvalue(&a, 2);
        match EffectiveModel::analytic(a.clone(), vec![0.0, 0.0]) {
            Ok(model) => {
                prop_assert!(lam >= -PSD_TOLERANCE - 1e-15);
                prop_assert_eq!(model.cov_a[1], model.cov_a[2]);
                prop_assert!(min_eigenvalue(&model.cov_a, 2) >= -1e-12);
                prop_assert_eq!(model.psd_clipped, lam < 0.0);
                for (u, v) in model.cov_a.iter().zip(&a) {
                    prop_assert!((u - v).abs() <= PSD_TOLERANCE + 1e-12);
                }
            }
            Err(Error::NotPsd { min_eigenvalue }) => prop_assert!(min_eigenvalue < -PSD_TOLERANCE),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn constant_shifts_of_the_correctors_leave_the_model_unchanged(
        beta in prop::collection::vec(-1f64..1.0, 4),
        delta in prop::collection::vec(-1f64..1.0, 4),
        shift_b in -10f64..10.0,
        shift_d in -10f64..10.0,
    ) {
        let set = sine_1d().with_potential_d_fn(Arc::new(|x: &[f64]| (2.0 * PI * x[0]).sin()));
        let torus = set.torus().clone();
        let b = field(&torus, &[64], CorrectorTarget::Drift, trig(&beta));
        let d = field(&torus, &[64], CorrectorTarget::Potential, trig(&delta));
        let pi = InvariantMeasureEstimate::uniform(torus, vec![32]);
        let m0 = effective_from_corrector(&set, &b, Some(&d), &pi, true).unwrap();
        let m1 = effective_from_corrector(&set, &b.shifted(&[shift_b]), Some(&d.shifted(&[shift_d])), &pi, true).unwrap();
        prop_assert_eq!(&m0.cov_a, &m1.cov_a);
        prop_assert_eq!(&m0.drift_b, &m1.drift_b);
        prop_assert_eq!(&m0.parabolic_drift, &m1.parabolic_drift);
        prop_assert_eq!(m0.effective_potential, m1.effective_potential);
    }

    #[test]
    fn scaling_sigma_scales_the_covariance_quadratically(kappa in 0.1f64..5.0) {
        let set = constant_identity(Torus::cube(2, 1.0).unwrap()).scale_sigma(kappa);
        let mut a = [0.0; 4];
        set.diffusion(&[0.3, 0.6], &mut a);
        prop_assert!((a[0] - kappa * kappa).abs() < 1e-12 && a[1] == 0.0);
        let zero = field(set.torus(), &[4, 4], CorrectorTarget::Drift, vec![0.0; 32]);
        let pi = InvariantMeasureEstimate::uniform(set.torus().clone(), vec![4, 4]);
        let model = effective_from_corrector(&set, &zero, None, &pi, false).unwrap();
        for (i, v) in model.cov_a.iter().enumerate() {
            let target = if i % 3 == 0 { kappa * kappa } else { 0.0 };
            prop_assert!((v - target).abs() < 1e-12 * (1.0 + target));
        }
    }

    #[test]
    fn pi_average_is_linear(counts in prop::collection::vec(0u64..50, 16), alpha in -3f64..3.0, beta in -3f64..3.0) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let torus = Torus::new(vec![2.0, 3.0]).unwrap();
        let pi = InvariantMeasureEstimate::from_block_counts(torus, vec![4, 4], &[counts], 0.0, 1.0, 0.0).unwrap();
        let f = |x: &[f64]| (x[0] * 1.3).sin() + x[1];
        let g = |x: &[f64]| x[0] * x[1];
        let pf = pi_average(&pi, 1, &|x, o| o[0] = f(x)).unwrap().value[0];
        let pg = pi_average(&pi, 1, &|x, o| o[0] = g(x)).unwrap().value[0];
        let ph = pi_average(&pi, 1, &|x, o| o[0] = alpha * f(x) + beta * g(x)).unwrap().value[0];
        prop_assert!((ph - alpha * pf - beta * pg).abs() < 1e-10 * (1.0 + ph.abs()));
        let one = pi_average(&pi, 1, &|_, o| o[0] = 1.0).unwrap().value[0];
        prop_assert!((one - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fourier_dictionary_has_one_mode_per_wavevector_pair(n in 1usize..4, order in 1u32..4) {
        let torus = Torus::cube(n, 1.0).unwrap();
        let modes = fourier_modes(&torus, order);
        let side = 2 * order as usize + 1;
        prop_assert_eq!(modes.len(), (side.pow(n as u32) - 1) / 2);
        prop_assert!(modes.iter().all(|m| m.sup == 1.0 && m.parts.len() == 2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn killing_calibration_returns_one(alpha in 0.2f64..5.0, x in -0.9f64..0.9, seed in 0u64..1000) {
        let set = sine_1d().with_potential_e(&ScalarForm::constant(-alpha));
        let data = EllipticData::from_forms(&ScalarForm::constant(alpha), &ScalarForm::constant(1.0));
        let cfg = SimConfig { step: 1e-3, n_paths: 64, seed, ..SimConfig::default() };
        let r = solve_elliptic(&set, 0.3, &DomainSpec::interval(-1.0, 1.0), &data, &[x], &cfg, &Serial).unwrap();
        prop_assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn parabolic_solution_is_nonnegative_for_nonnegative_data(
        e0 in -2f64..0.5,
        amp in 0f64..3.0,
        x in -2f64..2.0,
        t in 0.05f64..1.0,
        seed in 0u64..1000,
    ) {
        let set = sine_1d().with_potential_e(&ScalarForm::constant(e0));
        let g: ScalarFn = Arc::new(move |y: &[f64]| amp * (y[0].cos() + 1.0));
        let f: ScalarFn = Arc::new(|y: &[f64]| y[0] * y[0]);
        let data = ParabolicData::new(f, g);
        let cfg = SimConfig { step: 1e-2, n_paths: 32, seed, ..SimConfig::default() };
        let r = solve_parabolic(&set, 0.5, &data, &[x], t, &cfg, &Serial).unwrap();
        prop_assert!(r.value >= 0.0);
    }

    #[test]
    fn paths_do_not_depend_on_evaluation_order(seed in 0u64..1_000_000, n_paths in 1usize..40) {
        let set = sine_1d();
        let cfg = SimConfig { step: 1e-3, horizon: 0.05, n_paths, seed, store_stride: 5, ..SimConfig::default() };
        let starts = vec![vec![0.1], vec![0.7]];
        let a = simulate_scaled(&set, &cfg, &starts, &Serial).unwrap();
        let b = simulate_scaled(&set, &cfg, &starts, &Scrambled).unwrap();
        prop_assert_eq!(a, b);
    }
}
