//! Brute-force references for the solvers.
//!
//! Nothing here calls into the solver modules; the oracles share only the
//! metric evaluation in [`crate::metrics`].

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_channels, ChannelRealization};
use crate::error::{check_len, Error, Result};
use crate::metrics::{
    cascaded_rows, effective_gains, mse_all, order_users, permute, user_rates,
    weighted_mse, PowerAllocation, ReflectionState,
};
use crate::precoder_admm::PrecoderProblem;
use crate::{SystemConfig, C64};

pub const PHASE_BUDGET: usize = 1_000_000;
pub const MAX_GRID_USERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
    pub threshold: f64,
}

impl OracleVerdict {
    pub fn new(name: impl Into<String>, max_rel_error: f64, threshold: f64) -> Self {
        OracleVerdict {
            name: name.into(),
            max_rel_error,
            passed: max_rel_error <= threshold,
            threshold,
        }
    }
}

impl fmt::Display for OracleVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} max_rel_error={:.3e} threshold={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.threshold
        )
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_diff_gradient<F>(objective: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("difference step must be positive, got {h}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = x[i];
        x[i] = xi + h;
        let up = objective(&x);
        x[i] = xi - h;
        let down = objective(&x);
        x[i] = xi;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Domain(format!("objective is not finite around coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Complex vector as interleaved `(re, im)` pairs.
pub fn to_real(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn from_real(x: &[f64]) -> Vec<C64> {
    x.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
}

/// Weighted MSE `sum_k q_k e_k` for user-indexed `q`, users ordered as in `power`.
pub fn weighted_mse_at(
    channels: &ChannelRealization,
    theta: &ReflectionState,
    f: &DVector<C64>,
    q: &[f64],
    power: &PowerAllocation,
    sigma2: f64,
) -> f64 {
    let gains = permute(&effective_gains(&cascaded_rows(channels, theta), f), &power.ordering);
    weighted_mse(&permute(q, &power.ordering), &mse_all(&gains, &power.ordered(), sigma2))
}

/// Weighted MSE for a general diagonal (any modulus), used for differencing.
pub fn weighted_mse_diag(
    channels: &ChannelRealization,
    diag: &[C64],
    f: &DVector<C64>,
    q: &[f64],
    power: &PowerAllocation,
    sigma2: f64,
) -> f64 {
    let hf = &channels.bs_irs * f;
    let gains: Vec<C64> = power
        .ordering
        .iter()
        .map(|&u| (0..diag.len()).map(|i| channels.irs_user[u][i] * diag[i] * hf[i]).sum())
        .collect();
    weighted_mse(&permute(q, &power.ordering), &mse_all(&gains, &power.ordered(), sigma2))
}

/// Exhaustive search over `p_k ||F||^2 = P i_k / resolution` with `sum i_k <= resolution`,
/// minimizing `sum_k q_k e_k` among points meeting the rate floor.
pub fn grid_power_search(
    gains: &[C64],
    q: &[f64],
    f: &DVector<C64>,
    total_power: f64,
    rate_floor: f64,
    sigma2: f64,
    resolution: usize,
) -> Result<PowerAllocation> {
    let k = gains.len();
    if k == 0 || k > MAX_GRID_USERS {
        return Err(Error::OracleRefused(format!(
            "grid power search handles 1..={MAX_GRID_USERS} users, got {k}"
        )));
    }
    check_len("q vs users", k, q.len())?;
    if resolution == 0 {
        return Err(Error::Domain("grid resolution must be positive".into()));
    }
    let f2 = f.norm_squared();
    if !(f2 > 0.0) {
        return Err(Error::Domain("grid power search needs a nonzero precoder".into()));
    }
    let ordering = order_users(gains);
    let g = permute(gains, &ordering);
    let qo = permute(q, &ordering);
    let unit = total_power / (resolution as f64 * f2);

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; k];
    loop {
        if idx.iter().sum::<usize>() <= resolution {
            let p: Vec<f64> = idx.iter().map(|&i| i as f64 * unit).collect();
            let feasible = user_rates(&g, &p, sigma2).iter().all(|&r| r >= rate_floor);
            if feasible {
                let value = weighted_mse(&qo, &mse_all(&g, &p, sigma2));
                if best.as_ref().is_none_or(|(b, _)| value < *b) {
                    best = Some((value, p));
                }
            }
        }
        let mut d = 0;
        loop {
            if d == k {
                return match best {
                    Some((_, p)) => Ok(PowerAllocation::from_ordered(&p, &ordering)),
                    None => Err(Error::PowerInfeasible {
                        user: ordering[0],
                        detail: format!("no point of the {resolution}-level grid meets the rate floor"),
                    }),
                };
            }
            idx[d] += 1;
            if idx[d] <= resolution {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Enumerates phases `2 pi l / levels` on every element and returns the minimizer of
/// `sum_k q_k e_k`.
pub fn exhaustive_phase_search(
    channels: &ChannelRealization,
    f: &DVector<C64>,
    q: &[f64],
    power: &PowerAllocation,
    sigma2: f64,
    levels: usize,
) -> Result<ReflectionState> {
    let n = channels.n_irs();
    check_len("q vs users", channels.n_users(), q.len())?;
    if levels == 0 {
        return Err(Error::Domain("phase levels must be positive".into()));
    }
    let total = (levels as f64).powi(n as i32);
    if total > PHASE_BUDGET as f64 {
        return Err(Error::OracleRefused(format!(
            "{levels}^{n} phase configurations exceed the budget of {PHASE_BUDGET}"
        )));
    }
    let step = std::f64::consts::TAU / levels as f64;
    let mut idx = vec![0usize; n];
    let mut best = (f64::INFINITY, ReflectionState::zeros(n));
    for _ in 0..total as usize {
        let theta = ReflectionState::new(idx.iter().map(|&l| l as f64 * step).collect());
        let value = weighted_mse_at(channels, &theta, f, q, power, sigma2);
        if value < best.0 {
            best = (value, theta);
        }
        for d in idx.iter_mut() {
            *d += 1;
            if *d < levels {
                break;
            }
            *d = 0;
        }
    }
    Ok(best.1)
}

/// Plain projected gradient on `C(F)` over the ball `sum_k p_k ||F||^2 <= P`,
/// ignoring the QoS sets. Step `1/L` with `L` the Lipschitz constant of the
/// real gradient; stops once an iterate moves less than `tol`.
pub fn projected_gradient_precoder(
    problem: &PrecoderProblem,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<C64>> {
    let n = problem.n_tx();
    let k = problem.n_users();
    if n == 0 {
        return Err(Error::Domain("precoder reference needs at least one antenna".into()));
    }
    let weight: Vec<f64> = problem.interference.iter().map(|s| 1.0 + s).collect();
    let lipschitz: f64 = (0..k)
        .map(|i| 2.0 * weight[i] * problem.rows[i].norm_squared())
        .sum();
    if !(lipschitz > 0.0) {
        return Ok(DVector::zeros(n));
    }
    let radius = problem.radius_sqr().sqrt();
    let project = |v: DVector<C64>| {
        let norm = v.norm();
        if norm > radius {
            v * C64::new(radius / norm, 0.0)
        } else {
            v
        }
    };
    let mut f = DVector::zeros(n);
    for _ in 0..max_iter {
        let mut grad = DVector::zeros(n);
        for ((a, &w), &sq) in problem.rows.iter().zip(&weight).zip(&problem.sqrt_q) {
            let x: C64 = a.iter().zip(f.iter()).map(|(a, f)| a * f).sum();
            let coef = (x * w - sq) * 2.0;
            grad += a.map(|z| z.conj()) * coef;
        }
        let next = project(&f - grad * C64::new(1.0 / lipschitz, 0.0));
        let moved = (&next - &f).norm();
        f = next;
        if moved <= tol {
            return Ok(f);
        }
    }
    Err(Error::Domain(format!(
        "projected gradient reference did not settle within {max_iter} iterations"
    )))
}

/// Desk-like channels of a given size for oracle instances.
pub fn small_channels(n_tx: usize, irs_grid: (usize, usize), n_users: usize, seed: u64) -> Result<ChannelRealization> {
    let config = SystemConfig {
        n_tx,
        n_irs_x: irs_grid.0,
        n_irs_y: irs_grid.1,
        n_users,
        ..SystemConfig::desk()
    };
    generate_channels(&config, seed)
}

fn random_power<R: Rng + ?Sized>(gains: &[C64], rng: &mut R, scale: f64) -> PowerAllocation {
    let p: Vec<f64> = gains.iter().map(|_| scale * rng.random_range(0.2..1.0)).collect();
    PowerAllocation {
        ordering: order_users(gains),
        p,
    }
}

fn unit_precoder<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<C64> {
    DVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).normalize()
}

/// Runs the gradient, power, phase and precoder checks on seeded small instances.
pub fn validate_suite(seed: u64) -> Result<Vec<OracleVerdict>> {
    use crate::irs_pgd::{grad_theta, optimize_theta, PhaseObjective};
    use crate::power_alloc::solve_power;
    use crate::precoder_admm::{solve_precoder, AdmmSettings};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma2 = 0.1;
    let mut verdicts = Vec::new();

    let mut worst = 0.0f64;
    for t in 0..20 {
        let n_r = rng.random_range(2..=6);
        let k = rng.random_range(1..=3);
        let ch = small_channels(4, (n_r, 1), k, seed.wrapping_add(t))?;
        let f = unit_precoder(4, &mut rng) * C64::new(0.05, 0.0);
        let theta = ReflectionState::random(n_r, &mut rng);
        let gains = effective_gains(&cascaded_rows(&ch, &theta), &f);
        let power = random_power(&gains, &mut rng, 1.0);
        let q: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..3.0)).collect();
        let obj = PhaseObjective::new(&ch, &f, &q, &power, sigma2, 0.0)?;
        let analytic = to_real(grad_theta(&theta.coefficients(), &obj)?.as_slice());
        let fd = finite_diff_gradient(
            |x| weighted_mse_diag(&ch, &from_real(x), &f, &q, &power, sigma2),
            &to_real(&theta.coefficients()),
            1e-5,
        )?;
        worst = worst.max(rel_error(&analytic, &fd));
    }
    verdicts.push(OracleVerdict::new("grad_theta_vs_finite_differences", worst, 1e-5));

    // The grid only brackets the optimum to one cell, so the exact solver must
    // never lose to it on the objective it minimizes.
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let gains: Vec<C64> = (0..2)
            .map(|_| C64::new(rng.random_range(0.3..2.0), rng.random_range(-1.0..1.0)))
            .collect();
        let q: Vec<f64> = (0..2).map(|_| rng.random_range(1.0..4.0)).collect();
        let f = unit_precoder(2, &mut rng);
        let (p, _) = solve_power(&gains, &q, &f, 1.0, 0.01, sigma2)?;
        let g = grid_power_search(&gains, &q, &f, 1.0, 0.01, sigma2, 500)?;
        let value = |a: &PowerAllocation| {
            weighted_mse(&permute(&q, &a.ordering), &mse_all(&permute(&gains, &a.ordering), &a.ordered(), sigma2))
        };
        worst = worst.max((value(&p) - value(&g)) / value(&g));
    }
    verdicts.push(OracleVerdict::new("solve_power_vs_grid_objective", worst, 1e-9));

    let mut worst = 0.0f64;
    for t in 0..5 {
        let ch = small_channels(8, (2, 2), 1, seed.wrapping_add(100 + t))?;
        let f = unit_precoder(8, &mut rng) * C64::new(0.1, 0.0);
        let theta0 = ReflectionState::random(4, &mut rng);
        let gains = effective_gains(&cascaded_rows(&ch, &theta0), &f);
        let power = random_power(&gains, &mut rng, 1.0);
        let q = vec![rng.random_range(1.5..3.0)];
        let obj = PhaseObjective::new(&ch, &f, &q, &power, sigma2, 0.0)?;
        let (theta, _) = optimize_theta(&theta0, &obj, 0.01)?;
        let ours = weighted_mse_at(&ch, &theta, &f, &q, &power, sigma2);
        let best = exhaustive_phase_search(&ch, &f, &q, &power, sigma2, 16)?;
        let reference = weighted_mse_at(&ch, &best, &f, &q, &power, sigma2);
        worst = worst.max((ours - reference) / reference);
    }
    verdicts.push(OracleVerdict::new("optimize_theta_vs_exhaustive_phases", worst, 0.02));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let rows: Vec<DVector<C64>> = (0..2).map(|_| unit_precoder(4, &mut rng)).collect();
        let gains: Vec<C64> = rows.iter().map(|r| r.sum()).collect();
        let power = random_power(&gains, &mut rng, 1.0);
        let q: Vec<f64> = (0..2).map(|_| rng.random_range(1.5..3.0)).collect();
        let problem = PrecoderProblem::new(&rows, &q, &power, 0.5, 0.0)?.relaxed();
        let (f, _) = solve_precoder(&problem, None, &AdmmSettings { tol: 1e-12, max_outer: 20_000, ..AdmmSettings::default() })?;
        let reference = projected_gradient_precoder(&problem, 1e-12, 1_000_000)?;
        let (c, cr) = (problem.cost(&f), problem.cost(&reference));
        worst = worst.max((c - cr) / cr.abs().max(1e-12));
    }
    verdicts.push(OracleVerdict::new("solve_precoder_vs_projected_gradient", worst, 0.01));

    Ok(verdicts)
}

/// `||a - b|| / max(||b||, tiny)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}
