use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snmode_core::diff::Tape;
use snmode_core::field::StableField;
use snmode_core::geometry::ManifoldKind;
use snmode_core::nets::Architecture;
use snmode_core::real::Real;

fn arch() -> Architecture {
    Architecture {
        h_hidden: vec![12, 12],
        feat_hidden: vec![8],
        feat_out: 4,
        icnn_hidden: vec![10, 10],
        lipschitz: 2.0,
        smoothing: 0.1,
    }
}

fn manifolds() -> Vec<ManifoldKind> {
    vec![ManifoldKind::Euclidean(3), ManifoldKind::UnitQuaternion, ManifoldKind::Spd2, ManifoldKind::stacked_pose(1)]
}

fn field(m: &ManifoldKind, seed: u64, alpha: f64) -> (StableField, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goal = m.random_point(&mut rng, 0.5);
    let f = StableField::new(m.clone(), goal, arch(), alpha, 0.05, &mut rng).unwrap();
    (f, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn goal_is_an_exact_equilibrium(seed in any::<u64>()) {
        for m in manifolds() {
            let (f, _) = field(&m, seed, 0.5);
            prop_assert!(f.base_field(&f.goal).iter().all(|&c| c == 0.0));
            prop_assert!(f.stable_field(&f.goal).iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn decay_certificate_holds(seed in any::<u64>(), alpha in prop::sample::select(vec![0.0, 0.5, 2.0])) {
        for m in manifolds() {
            let (f, mut rng) = field(&m, seed, alpha);
            for _ in 0..20 {
                let x = m.random_point(&mut rng, 1.0);
                if m.near_exclusion(&x, &f.goal, 1e-3) {
                    continue;
                }
                let v = f.lyapunov(&x).unwrap();
                let lie = f.lie_derivative(&x, &f.stable_field(&x)).unwrap();
                prop_assert!(lie + alpha * v <= 1e-9 * v.max(1.0), "{}: {lie} + {alpha}·{v}", m.name());
            }
        }
    }

    #[test]
    fn lyapunov_is_positive_away_from_goal(seed in any::<u64>()) {
        for m in manifolds() {
            let (f, mut rng) = field(&m, seed, 0.5);
            let x = m.random_point(&mut rng, 1.0);
            if m.near_exclusion(&x, &f.goal, 1e-3) {
                continue;
            }
            prop_assert!(f.lyapunov(&x).unwrap() > 0.0);
            prop_assert_eq!(f.lyapunov(&f.goal).unwrap(), 0.0);
        }
    }

    #[test]
    fn tape_field_matches_float_field(seed in any::<u64>()) {
        for m in manifolds() {
            let (f, mut rng) = field(&m, seed, 0.5);
            let x = m.random_point(&mut rng, 1.0);
            if m.near_exclusion(&x, &f.goal, 1e-3) {
                continue;
            }
            let tape = Tape::new();
            let net = f.tape_nets(&tape);
            let xs: Vec<_> = x.iter().map(|&c| tape.scalar(c)).collect();
            let t: Vec<f64> = f.stable_field_with(&net, &xs).iter().map(|v| v.value()).collect();
            let p = f.stable_field(&x);
            for (a, b) in t.iter().zip(&p) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn lyapunov_gradient_matches_finite_differences(seed in any::<u64>()) {
        for m in manifolds() {
            let (f, mut rng) = field(&m, seed, 0.5);
            let x = m.random_point(&mut rng, 1.0);
            if m.near_exclusion(&x, &f.goal, 1e-2) {
                continue;
            }
            let w = m.random_tangent(&x, &mut rng, 1.0);
            let g = f.lyapunov_grad(&x).unwrap();
            let v = |s: f64| f.lyapunov(&m.exp(&x, &w.iter().map(|c| c * s).collect::<Vec<_>>())).unwrap();
            let h = 1e-5;
            let fd = (v(h) - v(-h)) / (2.0 * h);
            let ad = m.inner(&x, &g, &w);
            prop_assert!((fd - ad).abs() <= 1e-5 * ad.abs().max(1e-3), "{}: {fd} vs {ad}", m.name());
        }
    }
}
