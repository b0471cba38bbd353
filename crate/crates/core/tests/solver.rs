use odegrad::ode::{integrate_outputs, solve, solve_with_outputs, RhsError, SolverConfig, Trajectory};
use proptest::prelude::*;

fn rotation(_t: f64, z: &[f64], dz: &mut [f64]) -> Result<(), RhsError> {
    dz[0] = -z[1];
    dz[1] = z[0];
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotation_tracks_closed_form(tol_exp in 4i32..11, t1 in 0.5f64..10.0, s in 0.0f64..1.0) {
        let tol = 10f64.powi(-tol_exp);
        let sol = solve(rotation, &[1.0, 0.0], (0.0, t1), &SolverConfig::with_tol(tol)).unwrap();
        let t = s * t1;
        let z = sol.eval(t).unwrap();
        let err = (z[0] - t.cos()).abs().max((z[1] - t.sin()).abs());
        prop_assert!(err < 200.0 * tol * t1.max(1.0), "err {err:e} at tol {tol:e}");
        let nfe = sol.stats().init_evals + 1 + 6 * (sol.stats().accepted + sol.stats().rejected);
        prop_assert_eq!(sol.nfe(), nfe);
    }

    #[test]
    fn streamed_outputs_match_dense_output(n in 1usize..30, t1 in 0.5f64..6.0) {
        let cfg = SolverConfig::with_tol(1e-8);
        let times: Vec<f64> = (0..=n).map(|i| t1 * i as f64 / n as f64).collect();
        let (sol, dense) = solve_with_outputs(rotation, &[1.0, 0.0], (0.0, t1), &cfg, &times).unwrap();
        let (last, streamed, stats) = integrate_outputs(rotation, &[1.0, 0.0], (0.0, t1), &cfg, &times).unwrap();
        prop_assert_eq!(&dense, &streamed);
        prop_assert_eq!(sol.final_state(), &last[..]);
        prop_assert_eq!(sol.stats(), stats);
        let mut buf = vec![0.0; 2];
        sol.state_into(times[n / 2], &mut buf).unwrap();
        prop_assert_eq!(&buf, &dense[n / 2]);
    }
}
