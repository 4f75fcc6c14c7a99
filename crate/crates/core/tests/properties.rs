use nalgebra::DVector;
use proptest::prelude::*;

use irs_joint::alt_opt::{q_floor, update_q};
use irs_joint::channel::generate_channels;
use irs_joint::irs_pgd::{optimize_theta, PhaseObjective};
use irs_joint::metrics::{
    mse_all, order_users, permute, sum_rate, surrogate_value, user_rates, PowerAllocation,
    ReflectionState,
};
use irs_joint::power_alloc::solve_power;
use irs_joint::precoder_admm::update_w;
use irs_joint::{QUpdateMode, SystemConfig, C64};

fn complex() -> impl Strategy<Value = C64> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(re, im)| C64::new(re, im))
}

fn cvec(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec(complex(), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w_projection_lands_in_ball_and_is_idempotent(
        v in cvec(5),
        p in prop::collection::vec(0.01..2.0f64, 3),
        total in 0.01..5.0f64,
    ) {
        let power = PowerAllocation { p: p.clone(), ordering: vec![0, 1, 2] };
        let zero = DVector::zeros(5);
        let w = update_w(&DVector::from_vec(v), &zero, 1.0, &power, total);
        let sum: f64 = p.iter().sum();
        prop_assert!(sum * w.norm_squared() <= total * (1.0 + 1e-9));
        let again = update_w(&w, &zero, 1.0, &power, total);
        prop_assert!((again - &w).norm() <= 1e-12 * (1.0 + w.norm()));
    }

    #[test]
    fn power_allocation_meets_budget_and_floor(
        gains in cvec(3),
        q in prop::collection::vec(1.05..5.0f64, 3),
        total in 0.1..10.0f64,
    ) {
        prop_assume!(gains.iter().all(|g| g.re > 0.05));
        let f = DVector::from_element(2, C64::new(0.5, 0.0));
        let sigma2 = 0.1;
        let rate_floor = 0.01;
        match solve_power(&gains, &q, &f, total, rate_floor, sigma2) {
            Ok((alloc, _)) => {
                prop_assert!(alloc.p.iter().all(|&x| x >= 0.0));
                prop_assert!(alloc.total() * f.norm_squared() <= total * (1.0 + 1e-8));
                let rates = user_rates(&permute(&gains, &alloc.ordering), &alloc.ordered(), sigma2);
                prop_assert!(rates.iter().all(|&r| r >= rate_floor - 1e-6));
            }
            Err(e) => {
                let infeasible = matches!(e, irs_joint::Error::PowerInfeasible { .. });
                prop_assert!(infeasible, "unexpected error {}", e);
            }
        }
    }

    #[test]
    fn decoding_order_is_by_descending_gain(gains in cvec(6)) {
        let order = order_users(&gains);
        let mut seen = order.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..6).collect::<Vec<_>>());
        for w in order.windows(2) {
            prop_assert!(gains[w[0]].norm() >= gains[w[1]].norm());
        }
    }

    #[test]
    fn sum_rate_is_nonnegative_and_grows_with_power(
        gains in cvec(3),
        p in prop::collection::vec(0.0..2.0f64, 3),
        sigma2 in 0.01..1.0f64,
    ) {
        let g = permute(&gains, &order_users(&gains));
        let r = sum_rate(&g, &p, sigma2);
        prop_assert!(r >= 0.0);
        let more: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        prop_assert!(sum_rate(&g, &more, sigma2) >= r - 1e-12);
    }

    #[test]
    fn q_update_maximizes_surrogate_over_admissible_weights(
        gains in cvec(3),
        p in prop::collection::vec(0.01..1.0f64, 3),
        alt in prop::collection::vec(0.0..30.0f64, 3),
    ) {
        let sigma2 = 0.05;
        let g = permute(&gains, &order_users(&gains));
        let e = mse_all(&g, &p, sigma2);
        let q = update_q(&g, &p, sigma2, 0.01, QUpdateMode::InverseMse);
        let floor = q_floor(0.01);
        let alt: Vec<f64> = alt.iter().map(|a| floor + a).collect();
        prop_assert!(surrogate_value(&q, &e).unwrap() >= surrogate_value(&alt, &e).unwrap() - 1e-12);
    }

    #[test]
    fn restored_phases_have_unit_modulus(d in cvec(8)) {
        let theta = ReflectionState::from_directions(&d, &ReflectionState::zeros(8));
        prop_assert_eq!(theta.modulus_deviation(), 0.0);
        for c in theta.coefficients() {
            prop_assert!((c.norm() - 1.0).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn phase_optimization_never_raises_the_weighted_mse(seed in 0u64..1000) {
        let cfg = SystemConfig { n_tx: 4, n_irs_x: 3, n_irs_y: 2, n_users: 2, ..SystemConfig::desk() };
        let ch = generate_channels(&cfg, seed).unwrap();
        let f = DVector::from_element(4, C64::new(0.02, 0.01));
        let theta0 = ReflectionState::zeros(6);
        let power = PowerAllocation { p: vec![0.5, 0.3], ordering: vec![0, 1] };
        let obj = PhaseObjective::new(&ch, &f, &[2.0, 1.5], &power, 0.1, 0.0).unwrap();
        let (theta, _) = optimize_theta(&theta0, &obj, 0.01).unwrap();
        prop_assert!(obj.cost(&theta.coefficients()) <= obj.cost(&theta0.coefficients()) + 1e-12);
        prop_assert_eq!(theta.modulus_deviation(), 0.0);
    }

    #[test]
    fn channel_generation_is_reproducible(seed in any::<u64>()) {
        let cfg = SystemConfig { n_tx: 4, n_irs_x: 2, n_irs_y: 2, n_users: 2, ..SystemConfig::desk() };
        let a = generate_channels(&cfg, seed).unwrap();
        let b = generate_channels(&cfg, seed).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}
