use odegrad::autodiff::{Architecture, VectorField};
use odegrad::diagnostics::fd_gradient;
use odegrad::grad::{grad, LossSeed, MethodConfig, OdeProblem};
use odegrad::ode::SolverConfig;
use proptest::prelude::*;

fn mlp(seed: u64, z0: Vec<f64>, tol: f64) -> OdeProblem {
    let field = VectorField::new(Architecture::tanh_mlp(z0.len(), 6), seed);
    OdeProblem::new(field, z0, (0.0, 1.0), SolverConfig::with_tol(tol)).unwrap()
}

fn methods() -> [MethodConfig; 5] {
    [
        MethodConfig::direct(),
        MethodConfig::rdm(),
        MethodConfig::irdm(16),
        "irdm:16:cubic".parse().unwrap(),
        MethodConfig::checkpoint(4),
    ]
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn every_method_matches_central_differences() {
    let p = mlp(21, vec![0.3, -0.6, 0.1], 1e-10);
    let seed = LossSeed::new(vec![1.0, -2.0, 0.5]);
    let fd = fd_gradient(&p, &seed, 1e-5).unwrap();
    for m in methods() {
        let g = grad(&p, &m, &seed).unwrap();
        assert!(max_rel(g.dl_dtheta.as_slice(), fd.dl_dtheta.as_slice()) < 1e-6, "{m}");
        assert!(max_rel(&g.dl_dz0, &fd.dl_dz0) < 1e-6, "{m}");
    }
}

#[test]
fn problems_run_forward_in_time() {
    let field = VectorField::with_params(Architecture::linear(1), &[0.5]).unwrap();
    assert!(OdeProblem::new(field.clone(), vec![2.0], (1.0, 0.0), SolverConfig::default()).is_err());
    assert!(OdeProblem::new(field, vec![2.0], (1.0, 1.0), SolverConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradients_are_linear_in_the_seed(
        field_seed in 0u64..1000,
        z in prop::collection::vec(-1.0f64..1.0, 2),
        s in prop::collection::vec(-2.0f64..2.0, 2),
        alpha in -3.0f64..3.0,
    ) {
        let p = mlp(field_seed, z, 1e-9);
        let base = LossSeed::new(s.clone());
        let scaled = LossSeed::new(s.iter().map(|v| alpha * v).collect());
        for m in methods() {
            let g = grad(&p, &m, &base).unwrap();
            let h = grad(&p, &m, &scaled).unwrap();
            let want: Vec<f64> = g.dl_dtheta.as_slice().iter().map(|v| alpha * v).collect();
            let scale = want.iter().fold(1e-6f64, |a, v| a.max(v.abs()));
            let err = h.dl_dtheta.as_slice().iter().zip(&want).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            prop_assert!(err / scale < 1e-6, "{} err {:e}", m, err / scale);
        }
    }

    #[test]
    fn methods_agree_at_tight_tolerance(
        field_seed in 0u64..1000,
        z in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let p = mlp(field_seed, z, 1e-10);
        let seed = LossSeed::ones(3);
        let reference = grad(&p, &MethodConfig::direct(), &seed).unwrap();
        for m in methods() {
            let g = grad(&p, &m, &seed).unwrap();
            prop_assert!(max_rel(g.dl_dtheta.as_slice(), reference.dl_dtheta.as_slice()) < 1e-6, "{}", m);
            prop_assert!(max_rel(&g.dl_dz0, &reference.dl_dz0) < 1e-6, "{}", m);
        }
    }

    #[test]
    fn structural_dimensions(field_seed in 0u64..100, d in 1usize..5) {
        let p = mlp(field_seed, vec![0.2; d], 1e-6);
        let np = p.param_dim();
        let seed = LossSeed::ones(d);
        let rdm = grad(&p, &MethodConfig::rdm(), &seed).unwrap().stats;
        let irdm = grad(&p, &MethodConfig::irdm(8), &seed).unwrap().stats;
        prop_assert_eq!(rdm.backward_dim, 2 * d + np);
        prop_assert_eq!(irdm.backward_dim, d + np);
        prop_assert_eq!(rdm.peak_stored_states, 1);
        prop_assert_eq!(irdm.peak_stored_states, 9);
    }
}
