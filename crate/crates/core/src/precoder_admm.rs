//! Full-digital precoder by two-layer ADMM.
//!
//! For fixed IRS phases, powers and MSE weights the precoder minimizes
//!
//! ```text
//! C(F) = sum_k |sqrt(q_k) - a_k F|^2 + |a_k F|^2 S_k,   a_k = sqrt(q_k p_k) g_k
//! ```
//!
//! subject to the power ball `sum_k p_k ||W||^2 <= P` on the copy `W = F` and
//! the per-user QoS set `|sqrt(q_k) - x|^2 + |x|^2 S_k <= eps_k` on the copy
//! `x = W_hat_k = a_k F`. Here `S_k` is the power decoded ahead of position
//! `k` and `eps_k = ln2 (log2 q_k - R_min)`.
//!
//! Each iteration projects `W`, solves each `W_hat_k` by scalar Lagrange
//! duality, solves the Hermitian system for `F` and ascends both consensus
//! multipliers.

use std::f64::consts::LN_2;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{check_len, Error, Result};
use crate::metrics::{permute, PowerAllocation};
use crate::C64;

/// Dual bracket and iteration budget for the `W_hat` bisection.
const DUAL_BRACKET: f64 = 1e6;
const DUAL_MAX_ITERS: usize = 100;
const DUAL_TOL: f64 = 1e-10;

/// Per-user QoS slack `eps_k = ln2 (log2 q_k - R_min)`, indexed by user.
#[derive(Debug, Clone, PartialEq)]
pub struct QosSlack {
    pub epsilon: Vec<f64>,
}

impl QosSlack {
    pub fn new(q: &[f64], rate_floor: f64) -> Self {
        QosSlack {
            epsilon: q.iter().map(|&qk| LN_2 * (qk.log2() - rate_floor)).collect(),
        }
    }

    /// Errors on the first user whose slack is not positive.
    pub fn check(&self) -> Result<()> {
        match self.epsilon.iter().position(|&e| !(e > 0.0)) {
            Some(user) => Err(Error::QosInfeasible {
                user,
                epsilon: self.epsilon[user],
            }),
            None => Ok(()),
        }
    }
}

/// Data of one precoder subproblem, everything stored by decoding position.
#[derive(Debug, Clone)]
pub struct PrecoderProblem {
    /// `a_k = sqrt(q_k p_k) g_k`.
    pub rows: Vec<DVector<C64>>,
    pub sqrt_q: Vec<f64>,
    /// `S_k = sum_{i<k} p_i`.
    pub interference: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub ordering: Vec<usize>,
    pub power_sum: f64,
    pub total_power: f64,
}

impl PrecoderProblem {
    /// `cascade` and `q` are indexed by user; positions come from `power.ordering`.
    pub fn new(
        cascade: &[DVector<C64>],
        q: &[f64],
        power: &PowerAllocation,
        total_power: f64,
        rate_floor: f64,
    ) -> Result<Self> {
        let k = cascade.len();
        check_len("q vs users", k, q.len())?;
        check_len("powers vs users", k, power.p.len())?;
        check_len("ordering vs users", k, power.ordering.len())?;
        let slack = QosSlack::new(q, rate_floor);
        slack.check()?;

        let p = power.ordered();
        let q_pos = permute(q, &power.ordering);
        let mut rows = Vec::with_capacity(k);
        let mut interference = Vec::with_capacity(k);
        let mut acc = 0.0;
        for (pos, &user) in power.ordering.iter().enumerate() {
            rows.push(&cascade[user] * C64::new((q_pos[pos] * p[pos]).sqrt(), 0.0));
            interference.push(acc);
            acc += p[pos];
        }
        Ok(PrecoderProblem {
            rows,
            sqrt_q: q_pos.iter().map(|q| q.sqrt()).collect(),
            interference,
            epsilon: permute(&slack.epsilon, &power.ordering),
            ordering: power.ordering.clone(),
            power_sum: acc,
            total_power,
        })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_tx(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// `a_k F` for position `k`.
    pub fn consistency(&self, k: usize, f: &DVector<C64>) -> C64 {
        self.rows[k].dot(f)
    }

    fn user_cost(&self, k: usize, x: C64) -> f64 {
        (C64::new(self.sqrt_q[k], 0.0) - x).norm_sqr() + x.norm_sqr() * self.interference[k]
    }

    /// `C(F)`.
    pub fn cost(&self, f: &DVector<C64>) -> f64 {
        (0..self.n_users())
            .map(|k| self.user_cost(k, self.consistency(k, f)))
            .sum()
    }

    /// QoS residual `|sqrt(q_k) - x|^2 + |x|^2 S_k - eps_k`; feasible when `<= 0`.
    pub fn qos_residual(&self, k: usize, x: C64) -> f64 {
        self.user_cost(k, x) - self.epsilon[k]
    }

    /// Largest positive QoS residual of `a_k F` over users.
    pub fn max_qos_violation(&self, f: &DVector<C64>) -> f64 {
        (0..self.n_users())
            .map(|k| self.qos_residual(k, self.consistency(k, f)).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Same problem with the QoS sets dropped, leaving only the power ball.
    pub fn relaxed(&self) -> Self {
        PrecoderProblem {
            epsilon: vec![f64::INFINITY; self.n_users()],
            ..self.clone()
        }
    }

    /// `||W||^2` bound implied by the power ball, `P / sum_k p_k`.
    pub fn radius_sqr(&self) -> f64 {
        if self.power_sum > 0.0 {
            self.total_power / self.power_sum
        } else {
            f64::INFINITY
        }
    }
}

/// Solver state: precoder, splitting copies, multipliers and penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderState {
    pub f: DVector<C64>,
    pub w: DVector<C64>,
    /// One scalar per decoding position.
    pub w_hat: DVector<C64>,
    pub lambda_p1: DVector<C64>,
    pub lambda_p2: DVector<C64>,
    pub penalty_p1: f64,
    pub penalty_p2: f64,
}

impl PrecoderState {
    /// Consistent start at `f`: `W` is its projection, `W_hat_k = a_k f`, zero multipliers.
    pub fn warm(problem: &PrecoderProblem, f: DVector<C64>, penalties: (f64, f64)) -> Self {
        let w = project_ball(&f, problem.radius_sqr());
        let w_hat = DVector::from_fn(problem.n_users(), |k, _| problem.consistency(k, &f));
        PrecoderState {
            lambda_p1: DVector::zeros(f.len()),
            lambda_p2: DVector::zeros(problem.n_users()),
            f,
            w,
            w_hat,
            penalty_p1: penalties.0,
            penalty_p2: penalties.1,
        }
    }
}

fn project_ball(v: &DVector<C64>, radius_sqr: f64) -> DVector<C64> {
    let n2 = v.norm_squared();
    if n2 <= radius_sqr {
        v.clone()
    } else {
        v * C64::new((radius_sqr / n2).sqrt(), 0.0)
    }
}

/// Projects `f + lambda / penalty` onto `sum_k p_k ||W||^2 <= P`.
///
/// With zero total power the constraint is vacuous and the point is returned as is.
pub fn update_w(
    f: &DVector<C64>,
    lambda_p1: &DVector<C64>,
    penalty_p1: f64,
    power: &PowerAllocation,
    total_power: f64,
) -> DVector<C64> {
    let v = f + lambda_p1 / C64::new(penalty_p1, 0.0);
    let sum = power.total();
    if sum > 0.0 {
        project_ball(&v, total_power / sum)
    } else {
        v
    }
}

/// Minimizes `|sqrt_q - x|^2 + s |x|^2 + (penalty / 2) |v - x|^2` over the
/// QoS set `|sqrt_q - x|^2 + s |x|^2 <= eps`.
///
/// For a dual `nu >= 0` the minimizer is
/// `x(nu) = ((1 + nu) sqrt_q + penalty v / 2) / ((1 + nu)(1 + s) + penalty / 2)`,
/// and the constraint value is decreasing in `nu`. When the QoS set is empty
/// the point of least violation `sqrt_q / (1 + s)` is returned.
pub fn solve_w_hat(sqrt_q: f64, s: f64, v: C64, penalty: f64, eps: f64) -> Result<C64> {
    if !(eps > 0.0) {
        return Err(Error::QosInfeasible {
            user: 0,
            epsilon: eps,
        });
    }
    let half = penalty / 2.0;
    let target = C64::new(sqrt_q, 0.0);
    let x_of = |nu: f64| (target * (1.0 + nu) + v * half) / ((1.0 + nu) * (1.0 + s) + half);
    let resid = |x: C64| (target - x).norm_sqr() + s * x.norm_sqr() - eps;

    let x0 = x_of(0.0);
    if resid(x0) <= 0.0 {
        return Ok(x0);
    }
    let least = target / (1.0 + s);
    if resid(least) > 0.0 {
        return Ok(least);
    }
    let (mut lo, mut hi) = (0.0, DUAL_BRACKET);
    if resid(x_of(hi)) > 0.0 {
        return Ok(least);
    }
    for _ in 0..DUAL_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let r = resid(x_of(mid));
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            if r >= -DUAL_TOL {
                break;
            }
        }
    }
    Ok(x_of(hi))
}

/// `W_hat` block for decoding position `k`.
pub fn update_w_hat(
    problem: &PrecoderProblem,
    k: usize,
    f: &DVector<C64>,
    lambda_p2_k: C64,
    penalty_p2: f64,
) -> Result<C64> {
    let v = problem.consistency(k, f) + lambda_p2_k / penalty_p2;
    solve_w_hat(
        problem.sqrt_q[k],
        problem.interference[k],
        v,
        penalty_p2,
        problem.epsilon[k],
    )
    .map_err(|_| Error::QosInfeasible {
        user: problem.ordering[k],
        epsilon: problem.epsilon[k],
    })
}

/// Factored normal matrix of the F-update, reused across outer iterations.
pub struct FSystem {
    matrix: DMatrix<C64>,
    chol: Cholesky<C64, Dyn>,
}

impl FSystem {
    /// `M = sum_k (1 + S_k + penalty_p2 / 2) conj(a_k) a_k^T + (penalty_p1 / 2) I`.
    pub fn new(problem: &PrecoderProblem, penalties: (f64, f64)) -> Result<Self> {
        let n = problem.n_tx();
        let mut m = DMatrix::<C64>::identity(n, n) * C64::new(penalties.0 / 2.0, 0.0);
        for (k, a) in problem.rows.iter().enumerate() {
            let w = 1.0 + problem.interference[k] + penalties.1 / 2.0;
            let ac = a.map(|z| z.conj());
            m.ger(C64::new(w, 0.0), &ac, a, C64::new(1.0, 0.0));
        }
        let chol = Cholesky::new(m.clone()).ok_or(Error::Singular("F-update normal matrix"))?;
        Ok(FSystem { matrix: m, chol })
    }

    fn rhs(problem: &PrecoderProblem, state: &PrecoderState) -> DVector<C64> {
        let (r1, r2) = (state.penalty_p1, state.penalty_p2);
        let mut b = (&state.w - &state.lambda_p1 / C64::new(r1, 0.0)) * C64::new(r1 / 2.0, 0.0);
        for (k, a) in problem.rows.iter().enumerate() {
            let coef = C64::new(problem.sqrt_q[k], 0.0)
                + (state.w_hat[k] - state.lambda_p2[k] / r2) * (r2 / 2.0);
            b.axpy(coef, &a.map(|z| z.conj()), C64::new(1.0, 0.0));
        }
        b
    }

    pub fn solve(&self, problem: &PrecoderProblem, state: &PrecoderState) -> Result<DVector<C64>> {
        let b = Self::rhs(problem, state);
        let f = self.chol.solve(&b);
        let resid = (&self.matrix * &f - &b).norm();
        if !(resid <= 1e-10 * b.norm().max(1.0)) {
            return Err(Error::Singular("F-update residual too large"));
        }
        Ok(f)
    }
}

/// Exact minimizer in `F` of the augmented Lagrangian with `W`, `W_hat` and
/// the multipliers held fixed.
pub fn update_f(state: &PrecoderState, problem: &PrecoderProblem) -> Result<DVector<C64>> {
    FSystem::new(problem, (state.penalty_p1, state.penalty_p2))?.solve(problem, state)
}

/// Multiplier ascent on both consensus constraints.
pub fn update_multipliers(state: &PrecoderState, problem: &PrecoderProblem) -> PrecoderState {
    let mut next = state.clone();
    ascend_p2(&mut next, problem);
    ascend_p1(&mut next);
    next
}

fn ascend_p2(state: &mut PrecoderState, problem: &PrecoderProblem) {
    for k in 0..problem.n_users() {
        let r = problem.consistency(k, &state.f) - state.w_hat[k];
        state.lambda_p2[k] += r * state.penalty_p2;
    }
}

fn ascend_p1(state: &mut PrecoderState) {
    let r = &state.f - &state.w;
    state.lambda_p1 += r * C64::new(state.penalty_p1, 0.0);
}

/// F-dependent part of the augmented Lagrangian at `f`:
/// `C(f) + (r1/2)||f + l1/r1 - W||^2 + sum_k (r2/2)|a_k f + l2_k/r2 - W_hat_k|^2`.
pub fn augmented_lagrangian(problem: &PrecoderProblem, state: &PrecoderState, f: &DVector<C64>) -> f64 {
    let (r1, r2) = (state.penalty_p1, state.penalty_p2);
    let mut total = problem.cost(f);
    total += r1 / 2.0 * (f + &state.lambda_p1 / C64::new(r1, 0.0) - &state.w).norm_squared();
    for k in 0..problem.n_users() {
        let d = problem.consistency(k, f) + state.lambda_p2[k] / r2 - state.w_hat[k];
        total += r2 / 2.0 * d.norm_sqr();
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings {
    pub penalties: (f64, f64),
    pub tol: f64,
    pub max_outer: usize,
    /// `W_hat` sweeps per outer iteration. Extra sweeps ascend the
    /// consensus multiplier with `F` held fixed; one sweep is plain
    /// two-block ADMM, which converges for any positive penalties.
    pub max_inner: usize,
}

impl AdmmSettings {
    pub fn from_config(config: &SystemConfig) -> Self {
        AdmmSettings {
            penalties: config.admm_penalties,
            tol: config.tol_admm,
            max_outer: 500,
            max_inner: 1,
        }
    }
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings {
            penalties: (1.0, 1.0),
            tol: 1e-3,
            max_outer: 500,
            max_inner: 1,
        }
    }
}

/// One outer iteration of the precoder solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmIterate {
    pub iter: usize,
    /// `||F - W||^2`.
    pub primal_residual_c6: f64,
    /// `max_k |a_k F - W_hat_k|^2`.
    pub primal_residual_c7_max: f64,
    pub lagrangian_value: f64,
    /// `||F^t - F^{t-1}||^2`.
    pub f_change: f64,
    pub inner_sweeps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmmDiagnostics {
    pub iterations: Vec<AdmmIterate>,
    pub converged: bool,
    /// Largest QoS residual of the returned precoder.
    pub qos_violation: f64,
}

impl AdmmDiagnostics {
    /// One JSON object per iteration, newline separated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for it in &self.iterations {
            out.push_str(&serde_json::to_string(it)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs the two-layer ADMM from `f0` (zero when `None`).
///
/// Stops when `||F^t - F^{t-1}||^2 <= tol` and `||F^t - W||^2 <= tol`. The
/// returned precoder is scaled back into the power ball if it lies outside.
/// Hitting `max_outer` with a residual above `10 tol` is an error.
pub fn solve_precoder(
    problem: &PrecoderProblem,
    f0: Option<&DVector<C64>>,
    settings: &AdmmSettings,
) -> Result<(DVector<C64>, AdmmDiagnostics)> {
    let n = problem.n_tx();
    let f0 = match f0 {
        Some(f) => {
            check_len("initial precoder", n, f.len())?;
            f.clone()
        }
        None => DVector::zeros(n),
    };
    let mut state = PrecoderState::warm(problem, f0, settings.penalties);
    let system = FSystem::new(problem, settings.penalties)?;
    let radius_sqr = problem.radius_sqr();
    let (r1, r2) = settings.penalties;
    let mut diag = AdmmDiagnostics::default();
    let mut last = (f64::INFINITY, f64::INFINITY);

    for iter in 1..=settings.max_outer {
        let f_prev = state.f.clone();

        let v = &state.f + &state.lambda_p1 / C64::new(r1, 0.0);
        state.w = project_ball(&v, radius_sqr);
        let mut sweeps = 0;
        for sweep in 0..settings.max_inner.max(1) {
            sweeps += 1;
            for k in 0..problem.n_users() {
                state.w_hat[k] = update_w_hat(problem, k, &state.f, state.lambda_p2[k], r2)?;
            }
            if sweep + 1 == settings.max_inner.max(1) {
                break;
            }
            let worst = (0..problem.n_users())
                .map(|k| (problem.consistency(k, &state.f) - state.w_hat[k]).norm_sqr())
                .fold(0.0, f64::max);
            if worst <= settings.tol / 10.0 {
                break;
            }
            ascend_p2(&mut state, problem);
        }

        state.f = system.solve(problem, &state)?;
        ascend_p1(&mut state);
        ascend_p2(&mut state, problem);

        let c6 = (&state.f - &state.w).norm_squared();
        let c7 = (0..problem.n_users())
            .map(|k| (problem.consistency(k, &state.f) - state.w_hat[k]).norm_sqr())
            .fold(0.0, f64::max);
        let df = (&state.f - &f_prev).norm_squared();
        diag.iterations.push(AdmmIterate {
            iter,
            primal_residual_c6: c6,
            primal_residual_c7_max: c7,
            lagrangian_value: augmented_lagrangian(problem, &state, &state.f),
            f_change: df,
            inner_sweeps: sweeps,
        });
        if !(c6.is_finite() && df.is_finite()) {
            return Err(Error::NonConvergence {
                diagnostics: Box::new(diag),
            });
        }
        last = (df, c6);
        if df <= settings.tol && c6 <= settings.tol {
            diag.converged = true;
            break;
        }
    }

    if !diag.converged && (last.0 > 10.0 * settings.tol || last.1 > 10.0 * settings.tol) {
        return Err(Error::NonConvergence {
            diagnostics: Box::new(diag),
        });
    }
    let f = project_ball(&state.f, radius_sqr);
    diag.qos_violation = problem.max_qos_violation(&f);
    Ok((f, diag))
}
