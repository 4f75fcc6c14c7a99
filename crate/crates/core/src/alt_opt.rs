//! Outer alternating loop: precoder, MSE weights, IRS phases, powers.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::config::{QUpdateMode, SystemConfig};
use crate::error::{Error, Result};
use crate::irs_pgd::{optimize_theta, PhaseObjective};
use crate::metrics::{
    cascaded_rows, effective_gains, mse_all, order_users, permute, surrogate_value, user_rates,
    PowerAllocation, ReflectionState,
};
use crate::power_alloc::{solve_power, uniform_power};
use crate::precoder_admm::{solve_precoder, AdmmSettings, PrecoderProblem};
use crate::C64;

/// Relative margin kept between `q_k` and `2^R_min` so the QoS slack stays positive.
pub const Q_CLAMP_MARGIN: f64 = 1e-3;

/// Snapshot after one outer iteration (iteration 0 is the initial point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub iter: usize,
    pub f: Vec<C64>,
    pub theta: ReflectionState,
    pub p: PowerAllocation,
    pub q: Vec<f64>,
    pub sum_rate: f64,
    pub surrogate: f64,
    /// `sum_k p_k ||F||^2 - P`.
    pub c1_residual: f64,
    /// `min_k (R_k - R_min)`.
    pub c2_min_margin: f64,
    /// `max_i | |theta_i| - 1 |`.
    pub c3_max_dev: f64,
    /// All three constraint bounds hold.
    pub accepted: bool,
    /// The precoder block found the QoS sets incompatible with the power
    /// ball and solved without them.
    #[serde(default)]
    pub precoder_relaxed: bool,
}

impl SolutionRecord {
    pub fn precoder(&self) -> DVector<C64> {
        DVector::from_vec(self.f.clone())
    }
}

/// Serializes records one JSON object per line.
pub fn records_to_json_lines(records: &[SolutionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Which blocks run each iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Joint,
    /// Precoder held at the given vector.
    FixedPrecoder(DVector<C64>),
    /// IRS phases held at their initial values.
    FrozenTheta,
    /// Powers held at the uniform split.
    UniformPower,
}

/// A run stopped by an infeasible block; `records` holds what was completed.
#[derive(Debug)]
pub struct Aborted {
    pub records: Vec<SolutionRecord>,
    pub error: Error,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted after {} records: {}", self.records.len(), self.error)
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub fn q_floor(rate_floor: f64) -> f64 {
    2f64.powf(rate_floor) * (1.0 + Q_CLAMP_MARGIN)
}

/// MSE weights by decoding position.
pub fn update_q(gains: &[C64], p: &[f64], sigma2: f64, rate_floor: f64, mode: QUpdateMode) -> Vec<f64> {
    let floor = q_floor(rate_floor);
    match mode {
        QUpdateMode::InverseMse => mse_all(gains, p, sigma2)
            .into_iter()
            .map(|e| (1.0 / e).max(floor))
            .collect(),
        QUpdateMode::Literal => gains
            .iter()
            .zip(p)
            .map(|(g, pk)| {
                let v = (C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) - g * pk.sqrt())).re;
                if v.is_finite() {
                    v.max(floor)
                } else {
                    floor
                }
            })
            .collect(),
    }
}

fn update_q_users(
    gains: &[C64],
    power: &PowerAllocation,
    sigma2: f64,
    rate_floor: f64,
    mode: QUpdateMode,
) -> Vec<f64> {
    let g = permute(gains, &power.ordering);
    let qo = update_q(&g, &power.ordered(), sigma2, rate_floor, mode);
    let mut q = vec![0.0; gains.len()];
    for (pos, &u) in power.ordering.iter().enumerate() {
        q[u] = qo[pos];
    }
    q
}

/// Unit-norm right singular vector of the stacked cascaded rows with the
/// largest singular value.
pub fn dominant_direction(cascade: &[DVector<C64>]) -> DVector<C64> {
    let n = cascade[0].len();
    let a = DMatrix::from_fn(cascade.len(), n, |k, i| cascade[k][i]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let best = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
        .0;
    DVector::from_fn(n, |i, _| v_t[(best, i)].conj())
}

/// Matched filter on the cascaded row with the largest norm.
pub fn matched_strongest(cascade: &[DVector<C64>]) -> DVector<C64> {
    let best = cascade
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, g)| {
            let n = g.norm_squared();
            if n > acc.1 {
                (k, n)
            } else {
                acc
            }
        })
        .0;
    cascade[best].map(|z| z.conj()).normalize()
}

/// Initial phases drawn from `config.rng_seed`, kept separate from the
/// channel stream.
pub fn initial_theta(config: &SystemConfig, n_irs: usize) -> ReflectionState {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(1);
    ReflectionState::random(n_irs, &mut rng)
}

/// Starting point `(theta0, F0, p0, q0)`.
pub fn initialize(
    config: &SystemConfig,
    channels: &ChannelRealization,
) -> Result<(ReflectionState, DVector<C64>, PowerAllocation, Vec<f64>)> {
    let theta = initial_theta(config, channels.n_irs());
    let cascade = cascaded_rows(channels, &theta);
    let f = dominant_direction(&cascade);
    let gains = effective_gains(&cascade, &f);
    let p = uniform_power(&gains, &f, config.total_power)?;
    let q = update_q_users(&gains, &p, config.noise_power, config.rate_floor, QUpdateMode::InverseMse);
    Ok((theta, f, p, q))
}

/// Evaluates the objective and constraints at a point.
#[allow(clippy::too_many_arguments)]
pub fn make_record(
    iter: usize,
    config: &SystemConfig,
    channels: &ChannelRealization,
    f: &DVector<C64>,
    theta: &ReflectionState,
    p: &PowerAllocation,
    q: &[f64],
) -> Result<SolutionRecord> {
    let cascade = cascaded_rows(channels, theta);
    let gains = permute(&effective_gains(&cascade, f), &p.ordering);
    let po = p.ordered();
    let rates = user_rates(&gains, &po, config.noise_power);
    let sum_rate = rates.iter().sum();
    let e = mse_all(&gains, &po, config.noise_power);
    let surrogate = surrogate_value(&permute(q, &p.ordering), &e)?;
    let c1 = p.budget_gap(f.norm_squared(), config.total_power);
    let c2 = rates
        .iter()
        .map(|r| r - config.rate_floor)
        .fold(f64::INFINITY, f64::min);
    let c3 = theta.modulus_deviation();
    let accepted = c1 <= 1e-8 * config.total_power && c2 >= -1e-6 && c3 == 0.0;
    Ok(SolutionRecord {
        iter,
        f: f.iter().copied().collect(),
        theta: theta.clone(),
        p: p.clone(),
        q: q.to_vec(),
        sum_rate,
        surrogate,
        c1_residual: c1,
        c2_min_margin: c2,
        c3_max_dev: c3,
        accepted,
        precoder_relaxed: false,
    })
}

/// Runs the loop from an explicit starting point.
#[allow(clippy::too_many_arguments)]
pub fn run_from(
    config: &SystemConfig,
    channels: &ChannelRealization,
    schedule: &Schedule,
    theta0: ReflectionState,
    f0: DVector<C64>,
    p0: PowerAllocation,
    q0: Vec<f64>,
) -> std::result::Result<Vec<SolutionRecord>, Aborted> {
    let mut records = Vec::new();
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(Aborted { records, error }),
            }
        };
    }

    let (mut theta, mut f, mut p, mut q) = (theta0, f0, p0, q0);
    if let Schedule::FixedPrecoder(fixed) = schedule {
        f = fixed.clone();
    }
    if *schedule == Schedule::UniformPower {
        let gains = effective_gains(&cascaded_rows(channels, &theta), &f);
        p = attempt!(uniform_power(&gains, &f, config.total_power));
    }
    records.push(attempt!(make_record(0, config, channels, &f, &theta, &p, &q)));

    let settings = AdmmSettings::from_config(config);
    for iter in 1..=config.max_outer_iters {
        let cascade = cascaded_rows(channels, &theta);
        let mut relaxed = false;
        if !matches!(schedule, Schedule::FixedPrecoder(_)) {
            let problem = attempt!(PrecoderProblem::new(
                &cascade,
                &q,
                &p,
                config.total_power,
                config.rate_floor
            ));
            let warm = if f.norm_squared() * p.total() <= config.total_power * (1.0 + 1e-9) {
                Some(&f)
            } else {
                None
            };
            let next = match solve_precoder(&problem, warm, &settings) {
                Ok((next, _)) => next,
                Err(Error::NonConvergence { .. }) => {
                    relaxed = true;
                    attempt!(solve_precoder(&problem.relaxed(), warm, &settings)).0
                }
                Err(error) => return Err(Aborted { records, error }),
            };
            if next.norm_squared() > 0.0 {
                f = next;
            }
        }

        let gains = effective_gains(&cascade, &f);
        q = update_q_users(&gains, &p, config.noise_power, config.rate_floor, config.q_update);

        if *schedule != Schedule::FrozenTheta {
            let obj = attempt!(PhaseObjective::new(
                channels,
                &f,
                &q,
                &p,
                config.noise_power,
                config.rate_floor
            ));
            theta = attempt!(optimize_theta(&theta, &obj, config.pgd_step)).0;
        }

        let gains = effective_gains(&cascaded_rows(channels, &theta), &f);
        p = if *schedule == Schedule::UniformPower {
            attempt!(uniform_power(&gains, &f, config.total_power))
        } else {
            attempt!(solve_power(
                &gains,
                &q,
                &f,
                config.total_power,
                config.rate_floor,
                config.noise_power
            ))
            .0
        };

        let mut rec = attempt!(make_record(iter, config, channels, &f, &theta, &p, &q));
        rec.precoder_relaxed = relaxed;
        let prev = records.last().map(|r| r.sum_rate).unwrap_or(f64::NAN);
        let stalled = (rec.sum_rate - prev).abs() < config.tol_outer;
        records.push(rec);
        if stalled {
            break;
        }
    }
    Ok(records)
}

/// Full alternating optimization with every block active.
pub fn run(
    config: &SystemConfig,
    channels: &ChannelRealization,
) -> std::result::Result<Vec<SolutionRecord>, Aborted> {
    run_schedule(config, channels, &Schedule::Joint)
}

/// Alternating optimization under `schedule` from the standard initial point.
pub fn run_schedule(
    config: &SystemConfig,
    channels: &ChannelRealization,
    schedule: &Schedule,
) -> std::result::Result<Vec<SolutionRecord>, Aborted> {
    let (theta, f, p, q) = match initialize(config, channels) {
        Ok(v) => v,
        Err(error) => {
            return Err(Aborted {
                records: Vec::new(),
                error,
            })
        }
    };
    run_from(config, channels, schedule, theta, f, p, q)
}

/// Ordering of users by effective gain for the given point; convenience for callers.
pub fn ordering_at(channels: &ChannelRealization, theta: &ReflectionState, f: &DVector<C64>) -> Vec<usize> {
    order_users(&effective_gains(&cascaded_rows(channels, theta), f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use rand::Rng;

    fn desk(seed: u64) -> (SystemConfig, ChannelRealization) {
        let mut cfg = SystemConfig::desk();
        cfg.rng_seed = seed;
        let ch = generate_channels(&cfg, seed).unwrap();
        (cfg, ch)
    }

    #[test]
    fn q_examples() {
        let g = [C64::new(1.0, 0.0), C64::new(0.5, 0.0)];
        let q = update_q(&g, &[0.0, 0.0], 1.0, 0.0, QUpdateMode::InverseMse);
        assert_eq!(q, vec![0.5f64.max(q_floor(0.0)); 2]);
        let q = update_q(&g, &[0.0, 0.0], 1.0, 0.0, QUpdateMode::InverseMse);
        assert!(q.iter().all(|&x| x >= q_floor(0.0)));
        // perfect equalization: e -> sigma^2
        let q = update_q(&[C64::new(1.0, 0.0)], &[1.0], 1e-3, 0.0, QUpdateMode::InverseMse);
        assert!((q[0] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn q_update_maximizes_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..25 {
            let g: Vec<C64> = (0..3)
                .map(|_| C64::new(rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0)))
                .collect();
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let e = mse_all(&g, &p, 0.1);
            let q = update_q(&g, &p, 0.1, 0.0, QUpdateMode::InverseMse);
            let best = surrogate_value(&q, &e).unwrap();
            for _ in 0..100 {
                let other: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..20.0)).collect();
                assert!(surrogate_value(&other, &e).unwrap() <= best + 1e-12);
            }
        }
    }

    #[test]
    fn initialization_is_deterministic_and_clamped() {
        let (cfg, ch) = desk(3);
        let a = initialize(&cfg, &ch).unwrap();
        let b = initialize(&cfg, &ch).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        assert_eq!(a.3, b.3);
        assert!(a.3.iter().all(|&q| q >= q_floor(cfg.rate_floor)));
    }

    #[test]
    fn initial_q_inverts_mse() {
        let mut cfg = SystemConfig::desk();
        cfg.n_users = 2;
        cfg.rate_floor = 0.0;
        let ch = generate_channels(&cfg, 4).unwrap();
        let (theta, f, p, q) = initialize(&cfg, &ch).unwrap();
        let g = permute(&effective_gains(&cascaded_rows(&ch, &theta), &f), &p.ordering);
        let e = mse_all(&g, &p.ordered(), cfg.noise_power);
        for (pos, &u) in p.ordering.iter().enumerate() {
            if 1.0 / e[pos] > q_floor(0.0) {
                assert!((q[u] * e[pos] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_iterations_returns_initial_record() {
        let (mut cfg, ch) = desk(5);
        cfg.max_outer_iters = 0;
        let recs = run(&cfg, &ch).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].iter, 0);
    }

    #[test]
    fn run_respects_constraints_and_is_deterministic() {
        let (cfg, ch) = desk(6);
        let a = run(&cfg, &ch).unwrap();
        let b = run(&cfg, &ch).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= cfg.max_outer_iters + 1);
        let last = a.last().unwrap();
        assert!(last.accepted, "{last:?}");
        assert_eq!(last.c3_max_dev, 0.0);
        let text = records_to_json_lines(&a).unwrap();
        assert_eq!(text.lines().count(), a.len());
        let back: SolutionRecord = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(back.iter, last.iter);
    }

    #[test]
    fn frozen_blocks_stay_frozen() {
        let (cfg, ch) = desk(3);
        let theta0 = initial_theta(&cfg, ch.n_irs());
        let frozen = run_schedule(&cfg, &ch, &Schedule::FrozenTheta).unwrap();
        assert!(frozen.iter().all(|r| r.theta == theta0));
        let uniform = run_schedule(&cfg, &ch, &Schedule::UniformPower).unwrap();
        for r in &uniform {
            let spread = r.p.p.iter().cloned().fold(0.0, f64::max) - r.p.p.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(spread <= 1e-12 * r.p.p[0]);
        }
    }

    #[test]
    fn dominant_direction_of_single_row_is_matched() {
        let g = DVector::from_vec(vec![C64::new(1.0, 1.0), C64::new(0.0, -2.0)]);
        let v = dominant_direction(std::slice::from_ref(&g));
        let m = g.map(|z| z.conj()).normalize();
        assert!((m.dotc(&v).norm() - 1.0).abs() < 1e-12);
        assert!((matched_strongest(&[g]) - m).norm() < 1e-15);
    }
}
