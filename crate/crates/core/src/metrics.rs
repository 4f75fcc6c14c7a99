//! Effective gains, SIC ordering, SINR, rates and MSE.
//!
//! Functions taking "ordered" slices expect entries in decoding position:
//! position 0 is the strongest user and sees no intra-cluster interference,
//! position `k` is interfered by the powers at positions `0..k`.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{check_len, Error, Result};
use crate::C64;

/// IRS phases `phi_i` in `[-pi, pi)` with a common amplitude `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionState {
    pub phases: Vec<f64>,
    pub amplitude: f64,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

impl ReflectionState {
    pub fn new(phases: Vec<f64>) -> Self {
        ReflectionState {
            phases: phases.into_iter().map(wrap_phase).collect(),
            amplitude: 1.0,
        }
    }

    /// All phases zero.
    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self::new((0..n).map(|_| rng.random_range(-PI..PI)).collect())
    }

    /// Unit-modulus restoration: keeps only the angle of each entry. Zero
    /// entries keep the phase they had in `fallback`.
    pub fn from_directions(d: &[C64], fallback: &ReflectionState) -> Self {
        let phases = d
            .iter()
            .zip(&fallback.phases)
            .map(|(z, &old)| if z.norm_sqr() > 0.0 { z.arg() } else { old })
            .collect();
        Self::new(phases)
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Diagonal entries `beta exp(j phi_i)`.
    pub fn coefficients(&self) -> Vec<C64> {
        self.phases
            .iter()
            .map(|&p| C64::from_polar(self.amplitude, p))
            .collect()
    }

    /// `max_i | |theta_i| - 1 |`; the modulus of every entry is `beta`.
    pub fn modulus_deviation(&self) -> f64 {
        if self.phases.is_empty() {
            0.0
        } else {
            (self.amplitude - 1.0).abs()
        }
    }
}

/// Per-user powers with the decoding order they were computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Indexed by user.
    pub p: Vec<f64>,
    /// `ordering[pos]` is the user decoded at position `pos`.
    pub ordering: Vec<usize>,
}

impl PowerAllocation {
    pub fn from_ordered(p_ordered: &[f64], ordering: &[usize]) -> Self {
        let mut p = vec![0.0; p_ordered.len()];
        for (pos, &user) in ordering.iter().enumerate() {
            p[user] = p_ordered[pos];
        }
        PowerAllocation {
            p,
            ordering: ordering.to_vec(),
        }
    }

    pub fn ordered(&self) -> Vec<f64> {
        permute(&self.p, &self.ordering)
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// `sum_k p_k ||F||^2 - P`.
    pub fn budget_gap(&self, f_norm_sqr: f64, total_power: f64) -> f64 {
        self.total() * f_norm_sqr - total_power
    }
}

/// Reorders `values` (indexed by user) into decoding positions.
pub fn permute<T: Copy>(values: &[T], ordering: &[usize]) -> Vec<T> {
    ordering.iter().map(|&u| values[u]).collect()
}

/// Cascaded rows `g_k = h_k diag(theta) H`, so that `G_k = g_k F`.
pub fn cascaded_rows(channels: &ChannelRealization, theta: &ReflectionState) -> Vec<DVector<C64>> {
    let coeffs = theta.coefficients();
    channels
        .irs_user
        .iter()
        .map(|h| {
            let weighted = DVector::from_iterator(
                h.len(),
                h.iter().zip(&coeffs).map(|(a, b)| a * b),
            );
            // (weighted^T H)^T
            channels.bs_irs.tr_mul(&weighted)
        })
        .collect()
}

/// `G_k = g_k F` for each cascaded row (no conjugation).
pub fn effective_gains(cascade: &[DVector<C64>], f: &DVector<C64>) -> Vec<C64> {
    cascade.iter().map(|g| g.dot(f)).collect()
}

/// `h_k diag(beta e^{j phi}) H F`.
pub fn effective_gain(
    h_k: &DVector<C64>,
    theta: &ReflectionState,
    h: &DMatrix<C64>,
    f: &DVector<C64>,
) -> Result<C64> {
    check_len("h_k vs IRS elements", h.nrows(), h_k.len())?;
    check_len("theta vs IRS elements", h.nrows(), theta.len())?;
    check_len("F vs BS antennas", h.ncols(), f.len())?;
    let hf = h * f;
    Ok(h_k
        .iter()
        .zip(theta.coefficients())
        .zip(hf.iter())
        .map(|((a, t), b)| a * t * b)
        .sum())
}

/// Decoding order by descending `|G_k|`, ties by ascending user index.
pub fn order_users(gains: &[C64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    idx.sort_by(|&a, &b| {
        gains[b]
            .norm()
            .partial_cmp(&gains[a].norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

fn interference(p: &[f64], k: usize) -> f64 {
    p[..k].iter().sum()
}

/// `|G_k|^2 p_k / (|G_k|^2 sum_{i<k} p_i + sigma^2)`.
pub fn sinr(k: usize, gains: &[C64], p: &[f64], sigma2: f64) -> f64 {
    let g2 = gains[k].norm_sqr();
    g2 * p[k] / (g2 * interference(p, k) + sigma2)
}

pub fn user_rates(gains: &[C64], p: &[f64], sigma2: f64) -> Vec<f64> {
    (0..gains.len())
        .map(|k| (1.0 + sinr(k, gains, p, sigma2)).log2())
        .collect()
}

/// Sum of `log2(1 + gamma_k)` in bit/s/Hz.
pub fn sum_rate(gains: &[C64], p: &[f64], sigma2: f64) -> f64 {
    user_rates(gains, p, sigma2).iter().sum()
}

/// `e_k = |1 - sqrt(p_k) G_k|^2 + |G_k|^2 sum_{i<k} p_i + sigma^2`.
pub fn mse(k: usize, gains: &[C64], p: &[f64], sigma2: f64) -> f64 {
    let g = gains[k];
    (C64::new(1.0, 0.0) - g * p[k].sqrt()).norm_sqr() + g.norm_sqr() * interference(p, k) + sigma2
}

pub fn mse_all(gains: &[C64], p: &[f64], sigma2: f64) -> Vec<f64> {
    (0..gains.len()).map(|k| mse(k, gains, p, sigma2)).collect()
}

/// `sum_k q_k e_k`.
pub fn weighted_mse(q: &[f64], e: &[f64]) -> f64 {
    q.iter().zip(e).map(|(q, e)| q * e).sum()
}

/// `sum_k (log2 q_k - q_k e_k / ln 2)`; concave in `q`, maximized at `q = 1/e`.
pub fn surrogate_value(q: &[f64], e: &[f64]) -> Result<f64> {
    check_len("surrogate q vs e", q.len(), e.len())?;
    let mut total = 0.0;
    for (&qk, &ek) in q.iter().zip(e) {
        if !(qk > 0.0) || !(ek > 0.0) {
            return Err(Error::Domain(format!(
                "surrogate needs positive q and e, got q = {qk}, e = {ek}"
            )));
        }
        total += qk.log2() - qk * ek / LN_2;
    }
    Ok(total)
}

/// High-SINR approximation `log2(P |G_max|^2 / sigma^2)`.
pub fn high_sinr_rate(g_max: C64, total_power: f64, sigma2: f64) -> Result<f64> {
    let g2 = g_max.norm_sqr();
    if !(g2 > 0.0) {
        return Err(Error::Domain("high-SINR rate needs a nonzero gain".into()));
    }
    Ok((total_power * g2 / sigma2).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_c(rng: &mut ChaCha8Rng) -> C64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_chain_gain() {
        let n = 3;
        let h = DMatrix::<C64>::identity(n, n);
        let mut hk = DVector::zeros(n);
        hk[0] = c(1.0, 0.0);
        let f = hk.clone();
        let theta = ReflectionState::zeros(n);
        assert!((effective_gain(&hk, &theta, &h, &f).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
        let zero = DVector::zeros(n);
        assert_eq!(effective_gain(&hk, &theta, &h, &zero).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn gain_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 4;
        let h = DMatrix::from_fn(n, n, |_, _| random_c(&mut rng));
        let hk = DVector::from_fn(n, |_, _| random_c(&mut rng));
        let f = DVector::from_fn(n, |_, _| random_c(&mut rng));
        let theta = ReflectionState {
            phases: (0..n).map(|_| rng.random_range(-PI..PI)).collect(),
            amplitude: 0.7,
        };
        let mut want = c(0.0, 0.0);
        for i in 0..n {
            let t = C64::from_polar(0.7, theta.phases[i]);
            for j in 0..n {
                want += hk[i] * t * h[(i, j)] * f[j];
            }
        }
        let got = effective_gain(&hk, &theta, &h, &f).unwrap();
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn gain_dimension_mismatch() {
        let h = DMatrix::<C64>::identity(3, 2);
        let hk = DVector::zeros(3);
        let f = DVector::zeros(3);
        assert!(matches!(
            effective_gain(&hk, &ReflectionState::zeros(3), &h, &f),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn ordering_examples() {
        assert_eq!(order_users(&[c(3.0, 0.0), c(0.0, 2.0), c(1.0, 0.0)]), vec![0, 1, 2]);
        assert_eq!(order_users(&[c(1.0, 0.0), c(0.0, 1.0)]), vec![0, 1]);
        assert_eq!(order_users(&[c(1.0, 0.0), c(0.0, 5.0), c(2.0, 0.0)]), vec![1, 2, 0]);
    }

    #[test]
    fn ordering_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g: Vec<C64> = (0..7).map(|_| random_c(&mut rng)).collect();
            let perm = order_users(&g);
            let mut mags: Vec<f64> = g.iter().map(|z| z.norm()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let got: Vec<f64> = perm.iter().map(|&u| g[u].norm()).collect();
            assert_eq!(got, mags);
            let mut sorted = perm.clone();
            sorted.sort();
            assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn sinr_examples() {
        let g = [C64::new(2f64.sqrt(), 0.0)];
        assert!((sinr(0, &g, &[3.0], 1.0) - 6.0).abs() < 1e-12);
        let g = [c(1.0, 0.0), c(0.5, 0.5)];
        assert_eq!(sinr(1, &g, &[1.0, 0.0], 1.0), 0.0);
    }

    #[test]
    fn sinr_matches_formula_k3() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<C64> = (0..3).map(|_| random_c(&mut rng)).collect();
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
        let s2 = 0.3;
        for k in 0..3 {
            let g2 = g[k].re * g[k].re + g[k].im * g[k].im;
            let mut intf = 0.0;
            for pi in &p[..k] {
                intf += pi;
            }
            let want = g2 * p[k] / (g2 * intf + s2);
            assert!((sinr(k, &g, &p, s2) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn rate_examples() {
        // gamma = 1
        assert!((sum_rate(&[c(1.0, 0.0)], &[1.0], 1.0) - 1.0).abs() < 1e-15);
        // gamma = (3, 1): user 2 with |G|^2 = 1, p = (3, 4), sigma^2 = 1
        let g = [c(1.0, 0.0), c(1.0, 0.0)];
        let r = sum_rate(&g, &[3.0, 4.0], 1.0);
        assert!((r - 3.0).abs() < 1e-12, "{r}");
        assert_eq!(sum_rate(&g, &[0.0, 0.0], 1.0), 0.0);
    }

    #[test]
    fn mse_examples() {
        let g = [c(0.3, 0.1), c(0.2, -0.4)];
        for k in 0..2 {
            assert!((mse(k, &g, &[0.0, 0.0], 0.25) - 1.25).abs() < 1e-15);
        }
        // sqrt(p) G = 1, no interference, tiny noise
        let e = mse(0, &[c(0.5, 0.0)], &[4.0], 1e-300);
        assert!(e < 1e-15);
    }

    #[test]
    fn mse_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<C64> = (0..2).map(|_| random_c(&mut rng)).collect();
        let p = [0.7, 1.3];
        let s2 = 0.05;
        let r1 = 1.0 - 0.7f64.sqrt() * g[0].re;
        let i1 = -0.7f64.sqrt() * g[0].im;
        assert!((mse(0, &g, &p, s2) - (r1 * r1 + i1 * i1 + s2)).abs() < 1e-14);
        let r2 = 1.0 - 1.3f64.sqrt() * g[1].re;
        let i2 = -1.3f64.sqrt() * g[1].im;
        let want = r2 * r2 + i2 * i2 + g[1].norm_sqr() * 0.7 + s2;
        assert!((mse(1, &g, &p, s2) - want).abs() < 1e-14);
    }

    #[test]
    fn surrogate_examples() {
        let v = surrogate_value(&[2.0], &[0.5]).unwrap();
        assert!((v - (1.0 - 1.0 / LN_2)).abs() < 1e-15);
        let v = surrogate_value(&[1.0], &[1.0]).unwrap();
        assert!((v + 1.0 / LN_2).abs() < 1e-15);
        assert!(surrogate_value(&[0.0], &[1.0]).is_err());
        assert!(surrogate_value(&[1.0], &[-1.0]).is_err());
        let (q, e) = ([0.4, 3.0], [0.9, 0.2]);
        let want = 0.4f64.log2() - 0.4 * 0.9 / LN_2 + 3f64.log2() - 3.0 * 0.2 / LN_2;
        assert!((surrogate_value(&q, &e).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn high_sinr_examples() {
        assert!((high_sinr_rate(c(1.0, 0.0), 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((high_sinr_rate(c(0.0, 2.0), 256.0, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(high_sinr_rate(c(0.0, 0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn high_sinr_gap_shrinks_with_noise() {
        // ||F|| = 1 and p_1 + p_2 = P
        let g = [c(1.2, 0.4), c(0.3, -0.5)];
        let p = [0.6, 0.4];
        let mut prev = f64::INFINITY;
        for s2 in [1.0, 0.1, 0.01] {
            let r = sum_rate(&g, &p, s2);
            let approx = high_sinr_rate(g[0], 1.0, s2).unwrap();
            let gap = (r - approx).abs();
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn phase_wrapping() {
        assert_eq!(wrap_phase(PI), -PI);
        assert!((wrap_phase(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_phase(-0.2) + 0.2).abs() < 1e-15);
        let t = ReflectionState::new(vec![PI, 7.0]);
        assert!(t.phases.iter().all(|p| (-PI..PI).contains(p)));
        assert_eq!(t.modulus_deviation(), 0.0);
    }

    #[test]
    fn power_allocation_reordering() {
        let pa = PowerAllocation::from_ordered(&[1.0, 2.0, 3.0], &[2, 0, 1]);
        assert_eq!(pa.p, vec![2.0, 3.0, 1.0]);
        assert_eq!(pa.ordered(), vec![1.0, 2.0, 3.0]);
        assert!((pa.budget_gap(2.0, 10.0) - 2.0).abs() < 1e-15);
    }
}
