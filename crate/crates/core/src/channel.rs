//! Saleh-Valenzuela mmWave channels for the BS-IRS and IRS-user links.
//!
//! The BS carries a half-wavelength ULA and the IRS a URA. Each link is a sum
//! of a few geometric paths with circularly-symmetric Gaussian gains whose
//! variance follows a 28 GHz close-in path-loss model with log-normal
//! shadowing drawn once per link.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::C64;

/// Path loss in dB at one meter for the 28 GHz model.
pub const PATH_LOSS_1M_DB: f64 = 61.4;

fn check_angle(angle: f64) -> Result<()> {
    if (-FRAC_PI_2..=FRAC_PI_2).contains(&angle) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "angle {angle} rad is outside [-pi/2, pi/2]"
        )))
    }
}

/// Unit-norm ULA steering vector, entry `m` is `exp(j pi m sin(angle)) / sqrt(N)`.
pub fn ula_response(n_elements: usize, angle: f64) -> Result<DVector<C64>> {
    if n_elements == 0 {
        return Err(Error::Domain("array needs at least one element".into()));
    }
    check_angle(angle)?;
    let scale = 1.0 / (n_elements as f64).sqrt();
    let phase = PI * angle.sin();
    Ok(DVector::from_fn(n_elements, |m, _| {
        C64::from_polar(scale, phase * m as f64)
    }))
}

/// Unit-norm URA steering vector.
///
/// Kronecker product of a horizontal factor (phase `pi m sin(az) sin(el)`,
/// `m < nx`) and a vertical factor (phase `pi n cos(el)`, `n < ny`); entry
/// `m * ny + n` is the product of the two.
pub fn ura_response(nx: usize, ny: usize, azimuth: f64, elevation: f64) -> Result<DVector<C64>> {
    if nx == 0 || ny == 0 {
        return Err(Error::Domain("array needs at least one element".into()));
    }
    check_angle(azimuth)?;
    check_angle(elevation)?;
    let scale = 1.0 / ((nx * ny) as f64).sqrt();
    let h_phase = PI * azimuth.sin() * elevation.sin();
    let v_phase = PI * elevation.cos();
    Ok(DVector::from_fn(nx * ny, |idx, _| {
        let (m, n) = (idx / ny, idx % ny);
        C64::from_polar(scale, h_phase * m as f64 + v_phase * n as f64)
    }))
}

/// Linear gain variance `10^(-(61.4 + 20 log10 d + shadow_db) / 10)`.
pub fn path_gain_variance(distance: f64, shadow_db: f64) -> Result<f64> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::Domain(format!(
            "distance must be positive, got {distance}"
        )));
    }
    let loss_db = PATH_LOSS_1M_DB + 20.0 * distance.log10() + shadow_db;
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Gains and angles of the paths of one link.
///
/// Angles a link does not use (elevation of the BS ULA, arrival angles of the
/// IRS-user link) are stored as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub gains: Vec<C64>,
    pub aoa_azimuth: Vec<f64>,
    pub aoa_elevation: Vec<f64>,
    pub aod_azimuth: Vec<f64>,
    pub aod_elevation: Vec<f64>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    fn all_angles(&self) -> impl Iterator<Item = f64> + '_ {
        self.aoa_azimuth
            .iter()
            .chain(&self.aoa_elevation)
            .chain(&self.aod_azimuth)
            .chain(&self.aod_elevation)
            .copied()
    }
}

/// One draw of the cascaded channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `N_r x N_t` BS-to-IRS matrix.
    pub bs_irs: DMatrix<C64>,
    /// Per-user IRS-to-user row vectors of length `N_r`.
    pub irs_user: Vec<DVector<C64>>,
    pub bs_irs_paths: PathSet,
    pub irs_user_paths: Vec<PathSet>,
    /// `(n_irs_x, n_irs_y)`.
    pub irs_grid: (usize, usize),
}

impl ChannelRealization {
    pub fn n_tx(&self) -> usize {
        self.bs_irs.ncols()
    }

    pub fn n_irs(&self) -> usize {
        self.bs_irs.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.irs_user.len()
    }

    /// Structured-text snapshot with complex numbers as `[re, im]`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ChannelSnapshot::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: ChannelSnapshot = serde_json::from_str(text)?;
        snap.try_into()
    }
}

fn uniform_angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-FRAC_PI_2..=FRAC_PI_2)
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

fn link_variance(config: &SystemConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let shadow = if config.shadow_sigma > 0.0 {
        Normal::new(0.0, config.shadow_sigma)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    let var = path_gain_variance(config.irs_width, shadow)?;
    if config.normalize_path_loss {
        Ok(var / path_gain_variance(config.irs_width, 0.0)?)
    } else {
        Ok(var)
    }
}

/// Rebuilds `H = sqrt(N_t N_r / L) sum_n g_n a_n b_n^H` from its paths.
pub fn assemble_bs_irs(paths: &PathSet, n_tx: usize, irs_grid: (usize, usize)) -> Result<DMatrix<C64>> {
    let (nx, ny) = irs_grid;
    let n_irs = nx * ny;
    let l = paths.len();
    if l == 0 {
        return Err(Error::Domain("link has no paths".into()));
    }
    let scale = ((n_tx * n_irs) as f64 / l as f64).sqrt();
    let mut h = DMatrix::<C64>::zeros(n_irs, n_tx);
    for n in 0..l {
        let a = ura_response(nx, ny, paths.aoa_azimuth[n], paths.aoa_elevation[n])?;
        let b = ula_response(n_tx, paths.aod_azimuth[n])?;
        let g = paths.gains[n] * scale;
        for c in 0..n_tx {
            let bc = b[c].conj() * g;
            for r in 0..n_irs {
                h[(r, c)] += a[r] * bc;
            }
        }
    }
    Ok(h)
}

/// Rebuilds the row `h_k = sqrt(N_r / L) sum_n g_n a_n^H`.
pub fn assemble_irs_user(paths: &PathSet, irs_grid: (usize, usize)) -> Result<DVector<C64>> {
    let (nx, ny) = irs_grid;
    let n_irs = nx * ny;
    let l = paths.len();
    if l == 0 {
        return Err(Error::Domain("link has no paths".into()));
    }
    let scale = (n_irs as f64 / l as f64).sqrt();
    let mut h = DVector::<C64>::zeros(n_irs);
    for n in 0..l {
        let a = ura_response(nx, ny, paths.aod_azimuth[n], paths.aod_elevation[n])?;
        let g = paths.gains[n] * scale;
        for r in 0..n_irs {
            h[r] += a[r].conj() * g;
        }
    }
    Ok(h)
}

/// Draws a channel realization; equal `(config, seed)` give identical output.
pub fn generate_channels(config: &SystemConfig, seed: u64) -> Result<ChannelRealization> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = (config.n_irs_x, config.n_irs_y);

    let var = link_variance(config, &mut rng)?;
    let l = config.n_paths_bi;
    let mut bi = PathSet {
        gains: Vec::with_capacity(l),
        aoa_azimuth: Vec::with_capacity(l),
        aoa_elevation: Vec::with_capacity(l),
        aod_azimuth: Vec::with_capacity(l),
        aod_elevation: vec![0.0; l],
    };
    for _ in 0..l {
        bi.gains.push(complex_gaussian(&mut rng, var));
        bi.aoa_azimuth.push(uniform_angle(&mut rng));
        bi.aoa_elevation.push(uniform_angle(&mut rng));
        bi.aod_azimuth.push(uniform_angle(&mut rng));
    }

    let l = config.n_paths_iu;
    let mut iu = Vec::with_capacity(config.n_users);
    for _ in 0..config.n_users {
        let var = link_variance(config, &mut rng)?;
        let mut ps = PathSet {
            gains: Vec::with_capacity(l),
            aoa_azimuth: vec![0.0; l],
            aoa_elevation: vec![0.0; l],
            aod_azimuth: Vec::with_capacity(l),
            aod_elevation: Vec::with_capacity(l),
        };
        for _ in 0..l {
            ps.gains.push(complex_gaussian(&mut rng, var));
            ps.aod_azimuth.push(uniform_angle(&mut rng));
            ps.aod_elevation.push(uniform_angle(&mut rng));
        }
        iu.push(ps);
    }

    let bs_irs = assemble_bs_irs(&bi, config.n_tx, grid)?;
    let irs_user = iu
        .iter()
        .map(|p| assemble_irs_user(p, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization {
        bs_irs,
        irs_user,
        bs_irs_paths: bi,
        irs_user_paths: iu,
        irs_grid: grid,
    })
}

type Pair = [f64; 2];

fn pair(z: C64) -> Pair {
    [z.re, z.im]
}

fn unpair(p: &Pair) -> C64 {
    C64::new(p[0], p[1])
}

#[derive(Serialize, Deserialize)]
struct ChannelSnapshot {
    irs_grid: (usize, usize),
    bs_irs: Vec<Vec<Pair>>,
    irs_user: Vec<Vec<Pair>>,
    bs_irs_paths: PathSet,
    irs_user_paths: Vec<PathSet>,
}

impl From<&ChannelRealization> for ChannelSnapshot {
    fn from(c: &ChannelRealization) -> Self {
        ChannelSnapshot {
            irs_grid: c.irs_grid,
            bs_irs: (0..c.bs_irs.nrows())
                .map(|r| c.bs_irs.row(r).iter().copied().map(pair).collect())
                .collect(),
            irs_user: c
                .irs_user
                .iter()
                .map(|h| h.iter().copied().map(pair).collect())
                .collect(),
            bs_irs_paths: c.bs_irs_paths.clone(),
            irs_user_paths: c.irs_user_paths.clone(),
        }
    }
}

impl TryFrom<ChannelSnapshot> for ChannelRealization {
    type Error = Error;

    fn try_from(s: ChannelSnapshot) -> Result<Self> {
        let rows = s.bs_irs.len();
        let cols = s.bs_irs.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || s.bs_irs.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("bs_irs must be a nonempty rectangular matrix".into()));
        }
        if s.irs_grid.0 * s.irs_grid.1 != rows {
            return Err(Error::Dimension {
                context: "irs_grid",
                expected: rows,
                actual: s.irs_grid.0 * s.irs_grid.1,
            });
        }
        let bs_irs = DMatrix::from_fn(rows, cols, |r, c| unpair(&s.bs_irs[r][c]));
        let mut irs_user = Vec::with_capacity(s.irs_user.len());
        for h in &s.irs_user {
            crate::error::check_len("irs_user", rows, h.len())?;
            irs_user.push(DVector::from_iterator(rows, h.iter().map(unpair)));
        }
        if s.irs_user_paths.len() != irs_user.len() {
            return Err(Error::Dimension {
                context: "irs_user_paths",
                expected: irs_user.len(),
                actual: s.irs_user_paths.len(),
            });
        }
        for ps in std::iter::once(&s.bs_irs_paths).chain(&s.irs_user_paths) {
            let l = ps.len();
            for (name, len) in [
                ("aoa_azimuth", ps.aoa_azimuth.len()),
                ("aoa_elevation", ps.aoa_elevation.len()),
                ("aod_azimuth", ps.aod_azimuth.len()),
                ("aod_elevation", ps.aod_elevation.len()),
            ] {
                crate::error::check_len(name, l, len)?;
            }
            for a in ps.all_angles() {
                check_angle(a)?;
            }
        }
        Ok(ChannelRealization {
            bs_irs,
            irs_user,
            bs_irs_paths: s.bs_irs_paths,
            irs_user_paths: s.irs_user_paths,
            irs_grid: s.irs_grid,
        })
    }
}
