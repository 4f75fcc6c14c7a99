//! Monte-Carlo sweeps over SNR, transmit power or IRS size, with CSV output.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alt_opt::{self, initialize, matched_strongest, run_from, run_schedule, Schedule};
use crate::channel::{generate_channels, ChannelRealization};
use crate::config::{dbm_to_watts, QUpdateMode, SystemConfig};
use crate::error::{Error, Result};
use crate::metrics::{cascaded_rows, effective_gains, permute, sum_rate};
use crate::power_alloc::uniform_power;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Joint,
    PartialFFixed,
    RandomTheta,
    UniformPa,
    NoIrs,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Joint,
        Scheme::PartialFFixed,
        Scheme::RandomTheta,
        Scheme::UniformPa,
        Scheme::NoIrs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Joint => "joint",
            Scheme::PartialFFixed => "partial_f_fixed",
            Scheme::RandomTheta => "random_theta",
            Scheme::UniformPa => "uniform_pa",
            Scheme::NoIrs => "no_irs",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    PowerDbm,
    NIrs,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::PowerDbm => "power_dbm",
            SweepAxis::NIrs => "n_irs",
        }
    }

    /// Sweep values used when a spec gives none.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::SnrDb => vec![0.0, 5.0, 10.0, 15.0, 20.0],
            SweepAxis::PowerDbm => vec![10.0, 20.0, 30.0, 40.0, 50.0],
            SweepAxis::NIrs => vec![8.0, 16.0, 32.0, 48.0, 64.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub n_trials: usize,
    pub seed_base: u64,
    pub out_path: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.sweep_values.is_empty() {
            return Err(Error::Config("sweep_values must not be empty".into()));
        }
        if self.sweep_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("sweep_values must be strictly increasing".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.sweep_axis == SweepAxis::NIrs
            && self.sweep_values.iter().any(|&v| !(v >= 1.0 && v.fract() == 0.0))
        {
            return Err(Error::Config("n_irs sweep values must be positive integers".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub mean_se: f64,
    pub std_se: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sweep_axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn mean(&self, sweep_value: f64, scheme: Scheme) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == sweep_value && r.scheme == scheme)
            .map(|r| r.mean_se)
    }
}

/// Applies one sweep value to the base configuration.
pub fn configure(base: &SystemConfig, axis: SweepAxis, value: f64) -> Result<SystemConfig> {
    let cfg = match axis {
        SweepAxis::SnrDb => base.clone().with_snr_db(value),
        SweepAxis::PowerDbm => SystemConfig {
            total_power: dbm_to_watts(value),
            ..base.clone()
        },
        SweepAxis::NIrs => base.clone().with_irs_elements(value as usize)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn final_rate(result: std::result::Result<Vec<alt_opt::SolutionRecord>, alt_opt::Aborted>) -> f64 {
    let records = match result {
        Ok(r) => r,
        Err(a) => a.records,
    };
    records.last().map_or(0.0, |r| r.sum_rate)
}

/// Direct BS-user link for the no-IRS baseline: i.i.d. circular Gaussian
/// entries whose variance sits `no_irs_attenuation_db` below the average
/// per-antenna gain of the cascaded link at the initial phases.
pub fn direct_channel(config: &SystemConfig, channels: &ChannelRealization) -> Vec<DVector<C64>> {
    let theta = alt_opt::initial_theta(config, channels.n_irs());
    let cascade = cascaded_rows(channels, &theta);
    let n_tx = channels.n_tx();
    let avg = cascade.iter().map(|g| g.norm_squared()).sum::<f64>() / (cascade.len() * n_tx) as f64;
    let var = avg * 10f64.powf(-config.no_irs_attenuation_db / 10.0);
    let sd = (var / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(2);
    (0..channels.n_users())
        .map(|_| {
            DVector::from_fn(n_tx, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                C64::new(re * sd, im * sd)
            })
        })
        .collect()
}

/// Final sum rate of one scheme on one channel realization.
pub fn run_scheme(scheme: Scheme, config: &SystemConfig, channels: &ChannelRealization) -> Result<f64> {
    Ok(match scheme {
        Scheme::Joint => final_rate(run_schedule(config, channels, &Schedule::Joint)),
        Scheme::RandomTheta => final_rate(run_schedule(config, channels, &Schedule::FrozenTheta)),
        Scheme::UniformPa => final_rate(run_schedule(config, channels, &Schedule::UniformPower)),
        Scheme::PartialFFixed => {
            let (theta, _, _, _) = initialize(config, channels)?;
            let cascade = cascaded_rows(channels, &theta);
            let f = matched_strongest(&cascade);
            let gains = effective_gains(&cascade, &f);
            let p = uniform_power(&gains, &f, config.total_power)?;
            let q = alt_opt::update_q(
                &permute(&gains, &p.ordering),
                &p.ordered(),
                config.noise_power,
                config.rate_floor,
                QUpdateMode::InverseMse,
            );
            let mut q_users = vec![0.0; q.len()];
            for (pos, &u) in p.ordering.iter().enumerate() {
                q_users[u] = q[pos];
            }
            final_rate(run_from(
                config,
                channels,
                &Schedule::FixedPrecoder(f.clone()),
                theta,
                f,
                p,
                q_users,
            ))
        }
        Scheme::NoIrs => {
            let direct = direct_channel(config, channels);
            let f = matched_strongest(&direct);
            let gains = effective_gains(&direct, &f);
            let p = uniform_power(&gains, &f, config.total_power)?;
            sum_rate(&permute(&gains, &p.ordering), &p.ordered(), config.noise_power)
        }
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn probe_writable(path: &Path) -> Result<()> {
    OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map(|_| ())
        .map_err(|e| Error::io(path, e))
}

/// Runs every (sweep value, trial, scheme) combination. Trial `t` uses seed
/// `seed_base + t` for both the channel draw and the initial phases, so all
/// schemes see the same realization.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    probe_writable(&spec.out_path)?;
    let mut rows = Vec::new();
    for &value in &spec.sweep_values {
        let cfg = configure(&spec.base, spec.sweep_axis, value)?;
        let per_trial: Vec<Vec<f64>> = (0..spec.n_trials)
            .into_par_iter()
            .map(|t| {
                let seed = spec.seed_base.wrapping_add(t as u64);
                let trial_cfg = SystemConfig {
                    rng_seed: seed,
                    ..cfg.clone()
                };
                let channels = generate_channels(&trial_cfg, seed)?;
                spec.schemes
                    .iter()
                    .map(|&s| run_scheme(s, &trial_cfg, &channels))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        for (i, &scheme) in spec.schemes.iter().enumerate() {
            let values: Vec<f64> = per_trial.iter().map(|r| r[i]).collect();
            let (mean_se, std_se) = mean_std(&values);
            rows.push(SweepRow {
                sweep_value: value,
                scheme,
                mean_se,
                std_se,
                n_trials: spec.n_trials,
            });
        }
    }
    Ok(SweepResult {
        sweep_axis: spec.sweep_axis,
        rows,
    })
}

pub const CSV_HEADER: &str = "sweep_axis,sweep_value,scheme,mean_se,std_se,n_trials";

pub fn to_csv(result: &SweepResult) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::Domain("cannot write a CSV without rows".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        writeln!(
            out,
            "{},{:.6},{},{:.6},{:.6},{}",
            result.sweep_axis.name(),
            r.sweep_value,
            r.scheme.name(),
            r.mean_se,
            r.std_se,
            r.n_trials
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let text = to_csv(result)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
