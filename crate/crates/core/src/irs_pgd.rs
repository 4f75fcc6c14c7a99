//! IRS phase optimization by projected gradient on the weighted MSE.
//!
//! With `F`, `p` and `q` fixed, `G_k(theta) = sum_i theta_i c_{k,i}` where
//! `c_{k,i} = h_k[i] (H F)_i`, and the cost is `sum_k q_k e_k`. A step moves
//! the diagonal along the negative gradient, then keeps only the angle of
//! each entry so the unit-modulus constraint holds exactly.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{check_len, Result};
use crate::metrics::{PowerAllocation, ReflectionState};
use crate::C64;

const MAX_HALVINGS: usize = 20;
const MAX_ITERS: usize = 200;
const REL_TOL: f64 = 1e-5;

/// Phase subproblem data, stored by decoding position.
#[derive(Debug, Clone)]
pub struct PhaseObjective {
    /// Row `k` holds `c_{k,i}` for the user at position `k`.
    coupling: DMatrix<C64>,
    q: Vec<f64>,
    p: Vec<f64>,
    interference: Vec<f64>,
    epsilon: Vec<f64>,
    sigma2: f64,
}

impl PhaseObjective {
    /// `q` is indexed by user; positions follow `power.ordering`.
    pub fn new(
        channels: &ChannelRealization,
        f: &DVector<C64>,
        q: &[f64],
        power: &PowerAllocation,
        sigma2: f64,
        rate_floor: f64,
    ) -> Result<Self> {
        let k = channels.n_users();
        check_len("F vs BS antennas", channels.n_tx(), f.len())?;
        check_len("q vs users", k, q.len())?;
        check_len("ordering vs users", k, power.ordering.len())?;
        let hf = &channels.bs_irs * f;
        let n = channels.n_irs();
        let mut coupling = DMatrix::zeros(k, n);
        for (pos, &user) in power.ordering.iter().enumerate() {
            for i in 0..n {
                coupling[(pos, i)] = channels.irs_user[user][i] * hf[i];
            }
        }
        let p = power.ordered();
        let mut interference = Vec::with_capacity(k);
        let mut acc = 0.0;
        for &pk in &p {
            interference.push(acc);
            acc += pk;
        }
        let q: Vec<f64> = power.ordering.iter().map(|&u| q[u]).collect();
        let epsilon = q.iter().map(|&qk| LN_2 * (qk.log2() - rate_floor)).collect();
        Ok(PhaseObjective {
            coupling,
            q,
            p,
            interference,
            epsilon,
            sigma2,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.coupling.ncols()
    }

    /// Effective gains by decoding position.
    pub fn gains(&self, theta: &[C64]) -> Vec<C64> {
        (0..self.coupling.nrows())
            .map(|k| {
                self.coupling
                    .row(k)
                    .iter()
                    .zip(theta)
                    .map(|(c, t)| c * t)
                    .sum()
            })
            .collect()
    }

    fn mse_at(&self, k: usize, g: C64) -> f64 {
        (C64::new(1.0, 0.0) - g * self.p[k].sqrt()).norm_sqr()
            + g.norm_sqr() * self.interference[k]
            + self.sigma2
    }

    /// `sum_k q_k e_k` for an arbitrary (not necessarily unit-modulus) diagonal.
    pub fn cost(&self, theta: &[C64]) -> f64 {
        self.gains(theta)
            .iter()
            .enumerate()
            .map(|(k, &g)| self.q[k] * self.mse_at(k, g))
            .sum()
    }

    /// Largest positive QoS residual
    /// `|sqrt(q) - sqrt(q p) G|^2 + q p |G|^2 S - eps` over users.
    pub fn qos_violation(&self, theta: &[C64]) -> f64 {
        self.gains(theta)
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                let x = g * (self.q[k] * self.p[k]).sqrt();
                let r = (C64::new(self.q[k].sqrt(), 0.0) - x).norm_sqr()
                    + x.norm_sqr() * self.interference[k]
                    - self.epsilon[k];
                r.max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Gradient of `sum_k q_k e_k` in the real coordinates of each diagonal
/// entry, packed as `d/d re + j d/d im` (twice the conjugate Wirtinger
/// derivative):
/// `sum_k q_k conj(c_{k,i}) (2 (p_k + S_k) G_k - 2 sqrt(p_k))`.
pub fn grad_theta(theta: &[C64], objective: &PhaseObjective) -> Result<DVector<C64>> {
    check_len("theta vs IRS elements", objective.n_elements(), theta.len())?;
    let gains = objective.gains(theta);
    let mut grad = DVector::zeros(theta.len());
    for (k, &g) in gains.iter().enumerate() {
        let pk = objective.p[k];
        let w = (g * (2.0 * (pk + objective.interference[k])) - C64::new(2.0 * pk.sqrt(), 0.0))
            * objective.q[k];
        for i in 0..theta.len() {
            grad[i] += objective.coupling[(k, i)].conj() * w;
        }
    }
    Ok(grad)
}

/// Gradient plus a directional finite-difference check along random
/// perturbations of the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub grad: DVector<C64>,
    pub directional_check: f64,
    pub step_used: f64,
}

pub fn gradient_report<R: Rng + ?Sized>(
    theta: &[C64],
    objective: &PhaseObjective,
    directions: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradientReport> {
    let grad = grad_theta(theta, objective)?;
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let d: Vec<C64> = (0..theta.len())
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let plus: Vec<C64> = theta.iter().zip(&d).map(|(t, d)| t + d * h).collect();
        let minus: Vec<C64> = theta.iter().zip(&d).map(|(t, d)| t - d * h).collect();
        let fd = (objective.cost(&plus) - objective.cost(&minus)) / (2.0 * h);
        let an: f64 = grad.iter().zip(&d).map(|(g, d)| (g.conj() * d).re).sum();
        let scale = an.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((an - fd).abs() / scale);
    }
    Ok(GradientReport {
        grad,
        directional_check: worst,
        step_used: h,
    })
}

/// Outcome of one backtracking step.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdStep {
    pub theta: ReflectionState,
    pub cost: f64,
    pub step_used: f64,
    pub halvings: usize,
    pub stalled: bool,
}

/// `d = theta - step * grad`, phases `angle(d)`. The candidate is accepted
/// when the cost does not increase and the QoS violation is not worse than
/// the incumbent's; otherwise the step is halved up to 20 times.
pub fn pgd_step(
    theta: &ReflectionState,
    grad: &DVector<C64>,
    step: f64,
    objective: &PhaseObjective,
) -> Result<PgdStep> {
    check_len("gradient vs IRS elements", theta.len(), grad.len())?;
    let current = theta.coefficients();
    let cost0 = objective.cost(&current);
    let viol0 = objective.qos_violation(&current);
    let mut mu = step;
    for halvings in 0..=MAX_HALVINGS {
        let d: Vec<C64> = current.iter().zip(grad.iter()).map(|(t, g)| t - g * mu).collect();
        let cand = ReflectionState::from_directions(&d, theta);
        let coeffs = cand.coefficients();
        let cost = objective.cost(&coeffs);
        if cost <= cost0 && objective.qos_violation(&coeffs) <= viol0 {
            return Ok(PgdStep {
                theta: cand,
                cost,
                step_used: mu,
                halvings,
                stalled: false,
            });
        }
        mu *= 0.5;
    }
    Ok(PgdStep {
        theta: theta.clone(),
        cost: cost0,
        step_used: mu,
        halvings: MAX_HALVINGS,
        stalled: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdTrace {
    pub iter: usize,
    pub surrogate: f64,
    pub step: f64,
    pub stalled: bool,
}

/// Repeats gradient steps from `theta0`. The step doubles after a step
/// accepted on the first try. Stops on a stall, after 200 iterations, or
/// when a step that needed backtracking gains less than `1e-5` relative.
pub fn optimize_theta(
    theta0: &ReflectionState,
    objective: &PhaseObjective,
    step: f64,
) -> Result<(ReflectionState, Vec<PgdTrace>)> {
    check_len("theta vs IRS elements", objective.n_elements(), theta0.len())?;
    let mut theta = theta0.clone();
    let mut cost = objective.cost(&theta.coefficients());
    let mut mu = step;
    let mut trace = Vec::new();
    for iter in 1..=MAX_ITERS {
        let grad = grad_theta(&theta.coefficients(), objective)?;
        if grad.norm() == 0.0 {
            break;
        }
        let s = pgd_step(&theta, &grad, mu, objective)?;
        trace.push(PgdTrace {
            iter,
            surrogate: s.cost,
            step: s.step_used,
            stalled: s.stalled,
        });
        if s.stalled {
            break;
        }
        let rel = (cost - s.cost) / cost.abs().max(f64::MIN_POSITIVE);
        theta = s.theta;
        cost = s.cost;
        if s.halvings == 0 {
            mu = s.step_used * 2.0;
        } else {
            mu = s.step_used;
            if rel < REL_TOL {
                break;
            }
        }
    }
    Ok((theta, trace))
}
