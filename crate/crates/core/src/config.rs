//! System and solver parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the auxiliary MSE weights `q_k` are refreshed between blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QUpdateMode {
    /// `q_k = 1 / e_k`, the exact maximizer of the rate surrogate in `q`.
    #[default]
    InverseMse,
    /// `q_k = Re(1 / (1 - sqrt(p_k) G_k))`, kept for comparison runs.
    Literal,
}

/// Dimensions, powers and solver knobs for one simulated system.
///
/// Powers are linear (watts). `rate_floor` is in bit/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_irs_x: usize,
    pub n_irs_y: usize,
    pub n_users: usize,
    pub n_paths_bi: usize,
    pub n_paths_iu: usize,
    pub total_power: f64,
    pub noise_power: f64,
    pub rate_floor: f64,
    /// IRS width in meters, used as the path-loss distance.
    pub irs_width: f64,
    /// Shadowing standard deviation in dB.
    pub shadow_sigma: f64,
    pub max_outer_iters: usize,
    /// `(penalty for F = W, penalty for the per-user consensus)`.
    pub admm_penalties: (f64, f64),
    pub pgd_step: f64,
    pub tol_admm: f64,
    pub tol_outer: f64,
    pub rng_seed: u64,
    /// Divide every path gain variance by the mean large-scale loss at
    /// `irs_width`, leaving only shadowing. With this off the cascaded gain
    /// is around -120 dB and the unit-amplitude MSE model has no signal.
    #[serde(default = "default_true")]
    pub normalize_path_loss: bool,
    /// Extra attenuation of the synthetic direct link used by the no-IRS
    /// baseline, relative to the cascaded link's average gain.
    #[serde(default = "default_no_irs_attenuation")]
    pub no_irs_attenuation_db: f64,
    #[serde(default)]
    pub q_update: QUpdateMode,
}

fn default_true() -> bool {
    true
}

fn default_no_irs_attenuation() -> f64 {
    30.0
}

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl SystemConfig {
    /// Desk-scale system: 32 BS antennas, 4x4 IRS, 4 users, 10 dBm, 10 dB SNR.
    pub fn desk() -> Self {
        let total_power = dbm_to_watts(10.0);
        SystemConfig {
            n_tx: 32,
            n_irs_x: 4,
            n_irs_y: 4,
            n_users: 4,
            n_paths_bi: 3,
            n_paths_iu: 3,
            total_power,
            noise_power: total_power / 10.0,
            rate_floor: 0.01,
            irs_width: 1.0,
            shadow_sigma: 3.0,
            max_outer_iters: 20,
            admm_penalties: (1.0, 1.0),
            pgd_step: 0.01,
            tol_admm: 1e-3,
            tol_outer: 1e-4,
            rng_seed: 0,
            normalize_path_loss: true,
            no_irs_attenuation_db: 30.0,
            q_update: QUpdateMode::InverseMse,
        }
    }

    /// The published evaluation scale: 256 BS antennas, 8x8 IRS, 16 users.
    pub fn paper_scale() -> Self {
        SystemConfig {
            n_tx: 256,
            n_irs_x: 8,
            n_irs_y: 8,
            n_users: 16,
            ..Self::desk()
        }
    }

    pub fn n_irs(&self) -> usize {
        self.n_irs_x * self.n_irs_y
    }

    /// `10 log10(P / sigma^2)`.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.total_power / self.noise_power).log10()
    }

    /// Sets the noise power so that `10 log10(P / sigma^2) = snr_db`.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_power = self.total_power / 10f64.powf(snr_db / 10.0);
        self
    }

    /// Splits `n` elements into the squarest `n_x * n_y` grid with `n_x >= n_y`.
    pub fn with_irs_elements(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("IRS element count must be positive".into()));
        }
        let mut ny = (n as f64).sqrt().floor() as usize;
        while !n.is_multiple_of(ny) {
            ny -= 1;
        }
        self.n_irs_x = n / ny;
        self.n_irs_y = ny;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_tx", self.n_tx),
            ("n_irs_x", self.n_irs_x),
            ("n_irs_y", self.n_irs_y),
            ("n_users", self.n_users),
            ("n_paths_bi", self.n_paths_bi),
            ("n_paths_iu", self.n_paths_iu),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let positives = [
            ("total_power", self.total_power),
            ("noise_power", self.noise_power),
            ("irs_width", self.irs_width),
            ("admm_penalties.0", self.admm_penalties.0),
            ("admm_penalties.1", self.admm_penalties.1),
            ("pgd_step", self.pgd_step),
            ("tol_admm", self.tol_admm),
            ("tol_outer", self.tol_outer),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rate_floor >= 0.0 && self.rate_floor.is_finite()) {
            return Err(Error::Config(format!(
                "rate_floor must be nonnegative, got {}",
                self.rate_floor
            )));
        }
        if !(self.shadow_sigma >= 0.0 && self.shadow_sigma.is_finite()) {
            return Err(Error::Config("shadow_sigma must be nonnegative".into()));
        }
        if !self.no_irs_attenuation_db.is_finite() {
            return Err(Error::Config("no_irs_attenuation_db must be finite".into()));
        }
        Ok(())
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_is_valid() {
        let c = SystemConfig::desk();
        c.validate().unwrap();
        assert!((c.snr_db() - 10.0).abs() < 1e-12);
        assert_eq!(c.n_irs(), 16);
        SystemConfig::paper_scale().validate().unwrap();
        assert_eq!(SystemConfig::paper_scale().n_irs(), 64);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = SystemConfig::desk();
        c.n_users = 0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::desk();
        c.noise_power = 0.0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::desk();
        c.rate_floor = -0.1;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::desk();
        c.rate_floor = 0.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn irs_grid_factorization() {
        let grids: Vec<_> = [8, 16, 32, 48, 64, 7]
            .iter()
            .map(|&n| {
                let c = SystemConfig::desk().with_irs_elements(n).unwrap();
                (c.n_irs_x, c.n_irs_y)
            })
            .collect();
        assert_eq!(grids, vec![(4, 2), (4, 4), (8, 4), (8, 6), (8, 8), (7, 1)]);
    }

    #[test]
    fn snr_and_dbm_helpers() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(10.0) - 0.01).abs() < 1e-15);
        let c = SystemConfig::desk().with_snr_db(5.0);
        assert!((c.snr_db() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn json_fills_optional_fields() {
        let mut v = serde_json::to_value(SystemConfig::desk()).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("normalize_path_loss");
        obj.remove("q_update");
        let c: SystemConfig = serde_json::from_value(v).unwrap();
        assert!(c.normalize_path_loss);
        assert_eq!(c.q_update, QUpdateMode::InverseMse);
    }
}
