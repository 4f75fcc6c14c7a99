use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use irs_joint::harness::{emit_csv, run_sweep, ExperimentSpec, Scheme, SweepAxis};
use irs_joint::oracle::validate_suite;
use irs_joint::SystemConfig;

#[derive(Parser)]
#[command(name = "irs-joint", version, about = "IRS-assisted NOMA downlink optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Snr,
    Power,
    Nr,
}

impl From<Sweep> for SweepAxis {
    fn from(s: Sweep) -> Self {
        match s {
            Sweep::Snr => SweepAxis::SnrDb,
            Sweep::Power => SweepAxis::PowerDbm,
            Sweep::Nr => SweepAxis::NIrs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    PaperScale,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write the CSV summary.
    Simulate {
        /// JSON experiment spec; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, value_enum)]
        sweep: Option<Sweep>,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Comma-separated scheme names.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the solvers against brute-force oracles.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[allow(clippy::too_many_arguments)]
fn build_spec(
    config: Option<PathBuf>,
    preset: Option<Preset>,
    sweep: Option<Sweep>,
    values: Option<Vec<f64>>,
    schemes: Option<Vec<String>>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> irs_joint::Result<ExperimentSpec> {
    let mut spec = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| irs_joint::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => ExperimentSpec {
            base: SystemConfig::desk(),
            sweep_axis: SweepAxis::SnrDb,
            sweep_values: SweepAxis::SnrDb.default_values(),
            schemes: Scheme::ALL.to_vec(),
            n_trials: 100,
            seed_base: 0,
            out_path: PathBuf::from("sweep.csv"),
        },
    };
    if let Some(p) = preset {
        let dims = match p {
            Preset::Desk => SystemConfig::desk(),
            Preset::PaperScale => SystemConfig::paper_scale(),
        };
        spec.base.n_tx = dims.n_tx;
        spec.base.n_irs_x = dims.n_irs_x;
        spec.base.n_irs_y = dims.n_irs_y;
        spec.base.n_users = dims.n_users;
    }
    if let Some(s) = sweep {
        let axis = SweepAxis::from(s);
        if axis != spec.sweep_axis && values.is_none() {
            spec.sweep_values = axis.default_values();
        }
        spec.sweep_axis = axis;
    }
    if let Some(v) = values {
        spec.sweep_values = v;
    }
    if let Some(names) = schemes {
        spec.schemes = names.iter().map(|n| n.parse()).collect::<irs_joint::Result<_>>()?;
    }
    if let Some(t) = trials {
        spec.n_trials = t;
    }
    if let Some(s) = seed {
        spec.seed_base = s;
    }
    if let Some(o) = out {
        spec.out_path = o;
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            config,
            preset,
            sweep,
            values,
            schemes,
            trials,
            seed,
            out,
        } => {
            let result = build_spec(config, preset, sweep, values, schemes, trials, seed, out)
                .and_then(|spec| {
                    let result = run_sweep(&spec)?;
                    emit_csv(&result, &spec.out_path)?;
                    Ok((spec, result))
                });
            match result {
                Ok((spec, result)) => {
                    eprintln!("wrote {} rows to {}", result.rows.len(), spec.out_path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Validate { seed } => match validate_suite(seed) {
            Ok(verdicts) => {
                for v in &verdicts {
                    println!("{v}");
                }
                if verdicts.iter().all(|v| v.passed) {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
