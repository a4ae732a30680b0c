use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridmor::gramians::{approx_gramians, GramianConfig};
use gridmor::lift::{build_quadratic, lift_state, quadratic_rhs, QuadraticTensor};
use gridmor::lyap::{lyapunov_residual, solve_lyapunov_lr, truncate_lr};
use gridmor::netparams::synth_grid;
use gridmor::pipeline::{shifted_system, RunConfig};
use gridmor::reduce::{assemble_reduced, bt_projections, pod_reduce, PodVariant, ReductionMethod};
use gridmor::sim::{integrate, pti_l2, InputSchedule, IntegratorOptions, QuadraticModel};
use gridmor::swing::{swing_rhs, SwingState};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lifted_rhs_is_the_swing_rhs(seed in any::<u64>(), n_o in 1usize..9) {
        let p = synth_grid(n_o, seed, 0.7).unwrap();
        let sys = build_quadratic(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = rand_vec(&mut rng, n_o, 3.0);
        let omega = rand_vec(&mut rng, n_o, 1.0);
        let x = lift_state(&delta, &omega).unwrap().x;
        let f = quadratic_rhs(&sys, &x, &DVector::from_element(1, 1.0)).unwrap();
        let g = swing_rhs(&p, &SwingState::new(delta.clone(), omega.clone()).unwrap()).unwrap();
        for i in 0..n_o {
            prop_assert!((f[i] - g.delta[i]).abs() <= 1e-13);
            prop_assert!((f[n_o + i] - g.omega[i]).abs() <= 1e-13 * g.omega[i].abs().max(1.0));
            prop_assert!((f[2 * n_o + i] - delta[i].cos() * omega[i]).abs() <= 1e-13);
            prop_assert!((f[3 * n_o + i] + delta[i].sin() * omega[i]).abs() <= 1e-13);
        }
    }

    #[test]
    fn lifted_rhs_ignores_angle_entries(seed in any::<u64>(), n_o in 1usize..9) {
        let sys = build_quadratic(&synth_grid(n_o, seed, 0.7).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = rand_vec(&mut rng, 4 * n_o, 2.0);
        let u = DVector::from_element(1, 1.0);
        let before = quadratic_rhs(&sys, &x, &u).unwrap();
        x.rows_mut(0, n_o).copy_from(&rand_vec(&mut rng, n_o, 50.0));
        prop_assert_eq!(quadratic_rhs(&sys, &x, &u).unwrap(), before);
    }

    #[test]
    fn hessian_is_symmetric(seed in any::<u64>(), n_o in 1usize..9) {
        let sys = build_quadratic(&synth_grid(n_o, seed, 0.7).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_vec(&mut rng, 4 * n_o, 1.0);
        let b = rand_vec(&mut rng, 4 * n_o, 1.0);
        let diff = (sys.h.apply(&a, &b) - sys.h.apply(&b, &a)).amax();
        prop_assert!(diff <= 1e-14, "{}", diff);
    }

    #[test]
    fn truncation_never_adds_columns(seed in any::<u64>(), rows in 1usize..12, cols in 0usize..12, tau in 0.0f64..1e-2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rand_mat(&mut rng, rows, cols);
        let t = truncate_lr(&r, tau).unwrap();
        prop_assert!(t.rank() <= cols);
        let exact = truncate_lr(&r, 0.0).unwrap();
        let gram = &r * r.transpose();
        prop_assert!((exact.gram() - &gram).amax() <= 1e-12 * gram.amax().max(1.0));
    }

    #[test]
    fn lyapunov_residual_bound(seed in any::<u64>(), n in 1usize..24, m in 1usize..4, transpose in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_mat(&mut rng, n, n) / (n as f64).sqrt() - DMatrix::identity(n, n) * 2.0;
        let g = rand_mat(&mut rng, n, m);
        let x = solve_lyapunov_lr(&a, &g, transpose).unwrap().gram();
        let bound = 1e-8 * (&g * g.transpose()).norm().max(1.0);
        prop_assert!(lyapunov_residual(&a, &x, &g, transpose) <= bound);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bt_and_pod_bases_are_biorthogonal(seed in 0u64..1000, n_o in 2usize..7) {
        let p = synth_grid(n_o, seed, 0.8).unwrap();
        let sys = shifted_system(&p, 0.0).unwrap();
        let g = approx_gramians(&sys, &GramianConfig::default()).unwrap();
        if let Ok(proj) = bt_projections(&g, 4) {
            let model = assemble_reduced(&sys, proj, ReductionMethod::BalancedTruncation).unwrap();
            prop_assert!(model.projections.biorthogonality_error() <= 1e-10);
            prop_assert!(model.angle_row_error().unwrap() <= 1e-12);
        }
        let m = QuadraticModel::new(&sys, InputSchedule::constant(DVector::from_element(2, 1.0))).unwrap();
        let train = integrate(&m, &DVector::zeros(sys.n()), (0.0, 2.0), &IntegratorOptions::default()).unwrap();
        let pod = pod_reduce(&sys, &train, 4, PodVariant::Global).unwrap();
        prop_assert!(pod.projections.biorthogonality_error() <= 1e-10);
    }

    #[test]
    fn lifted_simulation_keeps_the_trig_identity(seed in 0u64..1000, n_o in 2usize..8, angle in -1.0f64..1.0) {
        let p = synth_grid(n_o, seed, 0.6).unwrap();
        let sys = build_quadratic(&p).unwrap();
        let mut delta = DVector::zeros(n_o);
        delta[0] = angle;
        let x = lift_state(&delta, &DVector::zeros(n_o)).unwrap().x;
        let m = QuadraticModel::new(&sys, InputSchedule::constant(DVector::from_element(1, 1.0))).unwrap();
        let cfg = RunConfig::default();
        let tr = integrate(&m, &x, (0.0, cfg.t_end), &IntegratorOptions::with_tolerances(cfg.rtol, cfg.atol)).unwrap();
        let pti = pti_l2(&tr.times, tr.lifted.as_ref().unwrap());
        prop_assert!(pti <= 1e-6, "{}", pti);
    }
}
