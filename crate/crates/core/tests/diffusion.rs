use hyperview::diffusion::{add_noise, ism_residual, sds_residual, Condition, GaussianOracle, NoiseSchedule};
use hyperview::rng::seeded;
use hyperview::Tensor;
use proptest::prelude::*;

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap()
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut seeded(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn add_noise_superposition(seed in any::<u64>(), t in 0usize..=1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let s = sched();
        let (x1, x2) = (randn(&[3, 4], seed), randn(&[3, 4], seed ^ 1));
        let (e1, e2) = (randn(&[3, 4], seed ^ 2), randn(&[3, 4], seed ^ 3));
        let x = x1.scale(a).add(&x2.scale(b)).unwrap();
        let e = e1.scale(a).add(&e2.scale(b)).unwrap();
        let lhs = add_noise(&x, t, &e, &s).unwrap();
        let rhs = add_noise(&x1, t, &e1, &s)
            .unwrap()
            .scale(a)
            .add(&add_noise(&x2, t, &e2, &s).unwrap().scale(b))
            .unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn ism_vanishes_at_the_mean_for_any_noise(seed in any::<u64>(), t in 100usize..=1000, dt in 1usize..100) {
        let s = sched();
        let mu = randn(&[2, 3, 3], seed);
        let oracle = GaussianOracle::new(mu.clone(), s.clone());
        let eps = randn(&[2, 3, 3], seed.wrapping_add(7)).scale(3.0);
        let r = ism_residual(&mu, t, dt, &oracle, &Condition::Unconditional, &s, &eps).unwrap();
        prop_assert!(r.abs() < 1e-18, "residual {r}");
    }

    #[test]
    fn sds_descent_shrinks_distance_to_mean(seed in any::<u64>(), t in 100usize..=900) {
        let s = sched();
        let mu = randn(&[8], seed);
        let oracle = GaussianOracle::new(mu.clone(), s.clone());
        let mut x = randn(&[8], seed ^ 0xF00).scale(2.0);
        let mut rng = seeded(seed.wrapping_mul(3));
        let mut dist = x.sub(&mu).unwrap().norm();
        for _ in 0..25 {
            let eps = Tensor::randn(&[8], 1.0, &mut rng);
            let out = sds_residual(&x, t, &eps, &oracle, &Condition::Unconditional, &s).unwrap();
            x.axpy(-0.1, &out.grad).unwrap();
            let next = x.sub(&mu).unwrap().norm();
            prop_assert!(next < dist || dist < 1e-12, "{dist} -> {next}");
            dist = next;
        }
    }
}
