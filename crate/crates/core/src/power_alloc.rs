//! Per-user power allocation for a fixed precoder and IRS.
//!
//! Minimizes `sum_k q_k e_k` over `p >= 0` with `sum_k p_k ||F||^2 <= P`. For
//! a budget dual `upsilon` the stationary point is
//! `sqrt(p_k) = q_k Re(G_k) / (q_k |G_k|^2 + sum_{j>k} q_j |G_j|^2 + upsilon)`
//! in decoding positions. The rate floor is then enforced through its linear
//! form `|G_k|^2 p_k >= (2^R_min - 1)(|G_k|^2 sum_{i<k} p_i + sigma^2)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::metrics::{order_users, permute, PowerAllocation};
use crate::C64;

const BISECTION_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub upsilon: f64,
    /// `sum_k p_k ||F||^2 - P` at `upsilon`.
    pub power_gap: f64,
}

/// Closed-form power for decoding position `k`; `gains` and `q` are ordered.
pub fn closed_form_power(k: usize, gains: &[C64], q: &[f64], upsilon: f64) -> f64 {
    let re = gains[k].re;
    if !(re > 0.0) {
        return 0.0;
    }
    let tail: f64 = (k + 1..gains.len()).map(|j| q[j] * gains[j].norm_sqr()).sum();
    let varsigma = q[k] * gains[k].norm_sqr() + tail + upsilon;
    (q[k] * re / varsigma).powi(2)
}

fn closed_form_all(gains: &[C64], q: &[f64], upsilon: f64) -> Vec<f64> {
    (0..gains.len())
        .map(|k| closed_form_power(k, gains, q, upsilon))
        .collect()
}

/// Smallest powers meeting the linear rate floor, raising positions in
/// decoding order. Each position's floor depends only on the powers before
/// it, so one pass gives the fixed point of any repeated repair sweep.
pub fn repair_rate_floor(p: &mut [f64], gains: &[C64], rate_floor: f64, sigma2: f64) -> Result<()> {
    let c = 2f64.powf(rate_floor) - 1.0;
    if c <= 0.0 {
        return Ok(());
    }
    let mut acc = 0.0;
    for k in 0..p.len() {
        let g2 = gains[k].norm_sqr();
        if !(g2 > 0.0) {
            return Err(Error::PowerInfeasible {
                user: k,
                detail: "zero effective gain cannot meet the rate floor".into(),
            });
        }
        let need = c * (acc + sigma2 / g2);
        if p[k] < need {
            p[k] = need;
        }
        acc += p[k];
    }
    Ok(())
}

/// Solves the power subproblem for user-indexed `gains` and `q`.
///
/// Returns the allocation with its decoding order and the final dual.
pub fn solve_power(
    gains: &[C64],
    q: &[f64],
    f: &DVector<C64>,
    total_power: f64,
    rate_floor: f64,
    sigma2: f64,
) -> Result<(PowerAllocation, DualState)> {
    check_len("q vs users", gains.len(), q.len())?;
    let f2 = f.norm_squared();
    if !(f2 > 0.0) {
        return Err(Error::Domain("power allocation needs a nonzero precoder".into()));
    }
    let ordering = order_users(gains);
    let g = permute(gains, &ordering);
    let qo = permute(q, &ordering);

    let profile = |upsilon: f64| -> Result<Vec<f64>> {
        let mut p = closed_form_all(&g, &qo, upsilon);
        repair_rate_floor(&mut p, &g, rate_floor, sigma2)?;
        Ok(p)
    };
    let gap = |p: &[f64]| p.iter().sum::<f64>() * f2 - total_power;

    let p0 = profile(0.0)?;
    if rate_floor > 0.0 && closed_form_all(&g, &qo, 0.0).iter().all(|&p| p == 0.0) {
        return Err(Error::PowerInfeasible {
            user: ordering[0],
            detail: "no user has a positive in-phase gain".into(),
        });
    }
    if gap(&p0) <= 0.0 {
        let dual = DualState {
            upsilon: 0.0,
            power_gap: gap(&p0),
        };
        return Ok((PowerAllocation::from_ordered(&p0, &ordering), dual));
    }

    // The repaired profile decreases to the pure floor as upsilon grows.
    let mut floor = vec![0.0; g.len()];
    repair_rate_floor(&mut floor, &g, rate_floor, sigma2)?;
    if gap(&floor) > 0.0 {
        let mut acc = 0.0;
        let pos = floor
            .iter()
            .position(|&p| {
                acc += p;
                acc * f2 > total_power
            })
            .unwrap_or(g.len() - 1);
        return Err(Error::PowerInfeasible {
            user: ordering[pos],
            detail: format!(
                "minimum powers need {:.6e} W against a budget of {:.6e} W",
                floor.iter().sum::<f64>() * f2,
                total_power
            ),
        });
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut p_hi = profile(hi)?;
    while gap(&p_hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        p_hi = profile(hi)?;
        if !hi.is_finite() {
            return Err(Error::Domain("power dual bracket diverged".into()));
        }
    }
    let tol = 1e-8 * total_power;
    for _ in 0..BISECTION_MAX_ITERS {
        if gap(&p_hi).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p_mid = profile(mid)?;
        if gap(&p_mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            p_hi = p_mid;
        }
    }
    let dual = DualState {
        upsilon: hi,
        power_gap: gap(&p_hi),
    };
    Ok((PowerAllocation::from_ordered(&p_hi, &ordering), dual))
}

/// Equal split `p_k = P / (K ||F||^2)`, ordered by `gains`.
pub fn uniform_power(gains: &[C64], f: &DVector<C64>, total_power: f64) -> Result<PowerAllocation> {
    let k = gains.len();
    let f2 = f.norm_squared();
    if k == 0 || !(f2 > 0.0) {
        return Err(Error::Domain("uniform power needs users and a nonzero precoder".into()));
    }
    Ok(PowerAllocation {
        p: vec![total_power / (k as f64 * f2); k],
        ordering: order_users(gains),
    })
}

/// `sum_k q_k e_k + upsilon sum_k p_k` with everything in decoding positions.
pub fn power_lagrangian(gains: &[C64], q: &[f64], p: &[f64], sigma2: f64, upsilon: f64) -> f64 {
    let e = crate::metrics::mse_all(gains, p, sigma2);
    crate::metrics::weighted_mse(q, &e) + upsilon * p.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sum_rate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unit_f(n: usize) -> DVector<C64> {
        DVector::from_element(n, c(1.0 / (n as f64).sqrt(), 0.0))
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_power(0, &[c(1.0, 0.0)], &[1.0], 0.0), 1.0);
        assert_eq!(closed_form_power(0, &[c(0.0, 2.0)], &[1.0], 0.0), 0.0);
        assert_eq!(closed_form_power(0, &[c(-1.0, 0.0)], &[1.0], 0.0), 0.0);
    }

    #[test]
    fn closed_form_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let gains = [
                c(rng.random_range(1.0..2.0), rng.random_range(-0.5..0.5)),
                c(rng.random_range(0.2..1.0), rng.random_range(-0.5..0.5)),
            ];
            let q = [rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)];
            let ups = rng.random_range(0.0..1.0);
            let p: Vec<f64> = (0..2).map(|k| closed_form_power(k, &gains, &q, ups)).collect();
            for k in 0..2 {
                let h = 1e-6;
                let mut a = p.clone();
                let mut b = p.clone();
                a[k] += h;
                b[k] -= h;
                let d = (power_lagrangian(&gains, &q, &a, 0.1, ups)
                    - power_lagrangian(&gains, &q, &b, 0.1, ups))
                    / (2.0 * h);
                assert!(d.abs() <= 1e-6, "{d}");
            }
        }
    }

    #[test]
    fn closed_form_decreases_in_dual() {
        let gains = [c(1.5, 0.2), c(0.7, -0.1)];
        let q = [2.0, 1.5];
        for k in 0..2 {
            let mut last = f64::INFINITY;
            for i in 0..20 {
                let p = closed_form_power(k, &gains, &q, i as f64 * 0.3);
                assert!(p < last);
                last = p;
            }
        }
    }

    #[test]
    fn single_user_budget_binds() {
        let f = unit_f(4) * c(2.0, 0.0);
        // unconstrained optimum p = 1 with q = 1, G = 1 exceeds P / ||F||^2 = 0.05
        let (p, dual) = solve_power(&[c(1.0, 0.0)], &[1.0], &f, 0.2, 0.0, 0.1).unwrap();
        assert!((p.p[0] - 0.05).abs() <= 1e-8 * 0.2);
        assert!(dual.upsilon > 0.0);
        assert!(dual.upsilon * dual.power_gap.abs() <= 1e-6 * 0.2);
    }

    #[test]
    fn slack_budget_keeps_zero_dual() {
        let (p, dual) = solve_power(&[c(1.0, 0.0)], &[1.0], &unit_f(2), 10.0, 0.0, 0.1).unwrap();
        assert_eq!(dual.upsilon, 0.0);
        assert!((p.p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_gains_with_floor_are_infeasible() {
        let r = solve_power(&[c(-1.0, 0.0), c(0.0, 1.0)], &[1.0, 1.0], &unit_f(2), 1.0, 0.1, 0.1);
        assert!(matches!(r, Err(Error::PowerInfeasible { .. })));
        let (p, _) =
            solve_power(&[c(-1.0, 0.0), c(0.0, 1.0)], &[1.0, 1.0], &unit_f(2), 1.0, 0.0, 0.1).unwrap();
        assert_eq!(p.p, vec![0.0, 0.0]);
    }

    #[test]
    fn rate_floor_is_repaired() {
        // the weak user gets nothing from the closed form
        let gains = [c(2.0, 0.0), c(-0.5, 0.0)];
        let (p, _) = solve_power(&gains, &[1.0, 1.0], &unit_f(2), 1.0, 0.5, 0.01).unwrap();
        let rates = crate::metrics::user_rates(&permute(&gains, &p.ordering), &p.ordered(), 0.01);
        for r in rates {
            assert!(r >= 0.5 - 1e-9);
        }
        assert!(p.total() <= 1.0 + 1e-8);
    }

    #[test]
    fn floor_beyond_budget_names_binding_user() {
        let gains = [c(1.0, 0.0), c(0.1, 0.0)];
        let r = solve_power(&gains, &[1.0, 1.0], &unit_f(2), 0.01, 3.0, 0.1);
        match r {
            Err(Error::PowerInfeasible { user, .. }) => assert!(user < 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_floor_matches_pure_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let gains: Vec<C64> = (0..3)
                .map(|_| c(rng.random_range(0.1..2.0), rng.random_range(-1.0..1.0)))
                .collect();
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..5.0)).collect();
            let (p, dual) = solve_power(&gains, &q, &unit_f(3), 0.5, 0.0, 0.05).unwrap();
            let g = permute(&gains, &p.ordering);
            let qo = permute(&q, &p.ordering);
            let want = closed_form_all(&g, &qo, dual.upsilon);
            for (a, b) in p.ordered().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn budget_and_nonnegativity_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = rng.random_range(1..5);
            let gains: Vec<C64> = (0..k)
                .map(|_| c(rng.random_range(-1.0..3.0), rng.random_range(-1.0..1.0)))
                .collect();
            let q: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..5.0)).collect();
            let f = unit_f(3) * c(rng.random_range(0.5..2.0), 0.0);
            let total = rng.random_range(0.1..2.0);
            let (p, _) = solve_power(&gains, &q, &f, total, 0.0, 0.05).unwrap();
            assert!(p.p.iter().all(|&x| x >= 0.0));
            assert!(p.total() * f.norm_squared() <= total * (1.0 + 1e-8));
        }
    }

    #[test]
    fn doubling_budget_does_not_lower_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let gains: Vec<C64> = (0..3)
                .map(|_| c(rng.random_range(0.2..3.0), rng.random_range(-0.3..0.3)))
                .collect();
            let q = vec![1.0; 3];
            let f = unit_f(2);
            let total = rng.random_range(0.01..0.5);
            let rate = |budget: f64| {
                let (p, _) = solve_power(&gains, &q, &f, budget, 0.0, 0.01).unwrap();
                sum_rate(&permute(&gains, &p.ordering), &p.ordered(), 0.01)
            };
            assert!(rate(2.0 * total) >= rate(total) - 1e-9);
        }
    }

    #[test]
    fn uniform_examples() {
        let f = unit_f(2);
        let p = uniform_power(&[c(1.0, 0.0), c(2.0, 0.0)], &f, 4.0).unwrap();
        assert!(p.p.iter().all(|&x| (x - 2.0).abs() < 1e-12));
        assert_eq!(p.ordering, vec![1, 0]);
        let f = unit_f(2) * c(2.0, 0.0);
        let p = uniform_power(&[c(1.0, 0.0)], &f, 4.0).unwrap();
        assert!((p.p[0] - 1.0).abs() < 1e-15);
        assert!((p.budget_gap(f.norm_squared(), 4.0)).abs() < 1e-12);
    }
}
