//! Joint precoder, IRS phase and power optimization for an IRS-assisted
//! mmWave downlink with successive interference cancellation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod alt_opt;
pub mod config;
pub mod error;
pub mod harness;
pub mod irs_pgd;
pub mod metrics;
pub mod oracle;
pub mod power_alloc;
pub mod precoder_admm;

pub type C64 = num_complex::Complex64;

pub use config::{QUpdateMode, SystemConfig};
pub use error::{Error, Result};
