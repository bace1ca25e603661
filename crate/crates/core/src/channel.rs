//! OFDM channel synthesis for the direct (BS-UE) and reflected (BS-RIS-UE)
//! paths under three models: static narrowband, dynamic narrowband, and
//! dynamic spatial-wideband.
//!
//! The received frequency/slow-time signal is an N x L complex matrix
//! (subcarriers x OFDM symbols). The dynamic models apply the fast-time
//! Doppler rotation `F E(v) F^H` on top of the delay/slow-time-Doppler/RIS
//! element-wise factors; the spatial-wideband model additionally lets the
//! RIS steering vectors and slow-time Doppler depend on the subcarrier
//! wavelength.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{Anchors, AnglePair, ChannelParams, UeState};
use crate::ris::RisProfileSet;
use crate::spectrum;

/// Propagation speed used throughout (matches the simulation convention).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Exponent of the element power pattern in the reflected-path gain model.
pub const GAIN_PATTERN_EXPONENT: f64 = 0.285;

/// Received frequency/slow-time sample matrix, N x L.
pub type RxSignal = Array2<Complex64>;

/// Which channel model to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    StaticNb,
    DynamicNb,
    DynamicWb,
}

/// Physical and waveform constants.
///
/// `Q` (RIS element positions), wavelengths, symbol durations, and the
/// per-element noise variance are derived through methods so that the
/// serialized form stays primitive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Carrier frequency, Hz.
    pub carrier_hz: f64,
    /// Number of subcarriers N.
    pub n_subcarriers: usize,
    /// Subcarrier spacing, Hz.
    pub subcarrier_spacing_hz: f64,
    /// Number of OFDM symbols L (must be even).
    pub n_symbols: usize,
    /// Cyclic-prefix duration, seconds.
    pub cp_duration_s: f64,
    /// RIS rows M1.
    pub ris_rows: usize,
    /// RIS columns M2.
    pub ris_cols: usize,
    /// RIS element spacing, meters.
    pub element_spacing_m: f64,
    /// Per-subcarrier pilot energy E_s.
    pub pilot_energy: f64,
    /// One-sided noise PSD (noise figure included), W/Hz.
    pub noise_psd: f64,
    /// Propagation speed, m/s.
    #[serde(default = "default_light_speed")]
    pub light_speed: f64,
}

fn default_light_speed() -> f64 {
    SPEED_OF_LIGHT
}

impl SystemConfig {
    /// Carrier wavelength, meters.
    pub fn wavelength(&self) -> f64 {
        self.light_speed / self.carrier_hz
    }

    /// Wavelength of subcarrier `n`: `c / (f_c + n df)`.
    pub fn wavelength_at(&self, n: usize) -> f64 {
        self.light_speed / (self.carrier_hz + n as f64 * self.subcarrier_spacing_hz)
    }

    /// Elementary symbol duration `T_o = 1 / df`, seconds.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// Total symbol duration `T_sym = T_cp + T_o`, seconds.
    pub fn total_symbol_duration(&self) -> f64 {
        self.cp_duration_s + self.symbol_duration()
    }

    /// Total number of RIS elements `M = M1 * M2`.
    pub fn n_elements(&self) -> usize {
        self.ris_rows * self.ris_cols
    }

    /// Signal bandwidth `B = N df`, Hz.
    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// Per-element complex noise variance: total noise power over the
    /// bandwidth divided evenly across the N subcarriers, i.e. `psd * df`.
    pub fn noise_variance(&self) -> f64 {
        self.noise_psd * self.subcarrier_spacing_hz
    }

    /// RIS element positions in the local frame, 3 x M. Column
    /// `m = r + s * M1` holds `[d r - d (M1-1)/2, 0, d s - d (M2-1)/2]`,
    /// so the row index varies fastest.
    pub fn element_positions(&self) -> Array2<f64> {
        let m1 = self.ris_rows;
        let m2 = self.ris_cols;
        let d = self.element_spacing_m;
        let x0 = d * (m1 as f64 - 1.0) / 2.0;
        let z0 = d * (m2 as f64 - 1.0) / 2.0;
        let mut q = Array2::zeros((3, m1 * m2));
        for s in 0..m2 {
            for r in 0..m1 {
                let m = r + s * m1;
                q[(0, m)] = d * r as f64 - x0;
                q[(2, m)] = d * s as f64 - z0;
            }
        }
        q
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_symbols == 0 || self.n_symbols % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_symbols must be even and positive, got {}",
                self.n_symbols
            )));
        }
        if self.n_subcarriers == 0 {
            return Err(Error::InvalidConfig("n_subcarriers must be positive".into()));
        }
        if self.ris_rows == 0 || self.ris_cols == 0 {
            return Err(Error::InvalidConfig("RIS dimensions must be positive".into()));
        }
        for (name, v) in [
            ("carrier_hz", self.carrier_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("element_spacing_m", self.element_spacing_m),
            ("pilot_energy", self.pilot_energy),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cp_duration_s < 0.0 || self.noise_psd < 0.0 {
            return Err(Error::InvalidConfig(
                "cp_duration_s and noise_psd must be nonnegative".into(),
            ));
        }
        if (self.light_speed - SPEED_OF_LIGHT).abs() > 1e-6 {
            // Geometry helpers use the crate-wide constant; a different value
            // here would silently disagree with them.
            return Err(Error::InvalidConfig(format!(
                "light_speed must equal {SPEED_OF_LIGHT}, got {}",
                self.light_speed
            )));
        }
        Ok(())
    }
}

/// Delay steering matrix `[D]_{n,l} = exp(-j 2 pi n df tau)`; all columns
/// identical.
pub fn delay_matrix(tau: f64, cfg: &SystemConfig) -> Array2<Complex64> {
    let n = cfg.n_subcarriers;
    let l = cfg.n_symbols;
    let col = delay_column(tau, cfg);
    Array2::from_shape_fn((n, l), |(row, _)| col[row])
}

/// Single column of the delay steering matrix.
pub fn delay_column(tau: f64, cfg: &SystemConfig) -> Vec<Complex64> {
    (0..cfg.n_subcarriers)
        .map(|n| Complex64::from_polar(1.0, -TAU * n as f64 * cfg.subcarrier_spacing_hz * tau))
        .collect()
}

/// RIS steering vector for direction `psi`, at the carrier wavelength when
/// `subcarrier` is `None`, or at `lambda_n` for the given subcarrier index.
pub fn steering_vector(
    psi: AnglePair,
    subcarrier: Option<usize>,
    cfg: &SystemConfig,
) -> Result<Vec<Complex64>> {
    let lambda = match subcarrier {
        None => cfg.wavelength(),
        Some(n) if n < cfg.n_subcarriers => cfg.wavelength_at(n),
        Some(n) => {
            return Err(Error::DimensionMismatch(format!(
                "subcarrier index {n} out of range (N = {})",
                cfg.n_subcarriers
            )))
        }
    };
    let dots = direction_element_dots(psi, cfg);
    Ok(dots
        .iter()
        .map(|&d| Complex64::from_polar(1.0, TAU / lambda * d))
        .collect())
}

/// Dot products of the unit direction vector of `psi` with each RIS element
/// position: the wavelength-free part of the steering phase.
pub(crate) fn direction_element_dots(psi: AnglePair, cfg: &SystemConfig) -> Vec<f64> {
    let u = psi.unit_vector();
    let q = cfg.element_positions();
    (0..cfg.n_elements())
        .map(|m| u.x * q[(0, m)] + u.y * q[(1, m)] + u.z * q[(2, m)])
        .collect()
}

/// RIS response matrix `[A]_{n,l} = a_n(theta)^T diag(gamma_l) a_n(phi)`.
///
/// In the narrowband case (`wideband = false`) all `a_n` equal the carrier
/// steering vector, so all rows come out identical.
pub fn ris_response_matrix(
    theta: AnglePair,
    phi: AnglePair,
    profiles: &RisProfileSet,
    cfg: &SystemConfig,
    wideband: bool,
) -> Result<Array2<Complex64>> {
    let n = cfg.n_subcarriers;
    let l = cfg.n_symbols;
    let m = cfg.n_elements();
    if profiles.n_symbols() != l || profiles.n_elements() != m {
        return Err(Error::DimensionMismatch(format!(
            "profiles are {} symbols x {} elements, config wants {l} x {m}",
            profiles.n_symbols(),
            profiles.n_elements()
        )));
    }

    // Combined per-element geometric phase distance for the theta/phi pair.
    let dots_theta = direction_element_dots(theta, cfg);
    let dots_phi = direction_element_dots(phi, cfg);
    let combined: Vec<f64> = dots_theta
        .iter()
        .zip(dots_phi.iter())
        .map(|(a, b)| a + b)
        .collect();

    // Per-beam correlations; the odd columns are exact sign flips of the
    // even ones by the profile pairing.
    let row_for_lambda = |lambda: f64, row: &mut [Complex64]| {
        let pair: Vec<Complex64> = combined
            .iter()
            .map(|&d| Complex64::from_polar(1.0, TAU / lambda * d))
            .collect();
        for (k, beam) in profiles.beams().iter().enumerate() {
            let val: Complex64 = pair.iter().zip(beam.iter()).map(|(p, g)| p * g).sum();
            row[2 * k] = val;
            row[2 * k + 1] = -val;
        }
    };

    let mut a = Array2::<Complex64>::zeros((n, l));
    let mut row = vec![Complex64::default(); l];
    if wideband {
        for r in 0..n {
            row_for_lambda(cfg.wavelength_at(r), &mut row);
            for col in 0..l {
                a[(r, col)] = row[col];
            }
        }
    } else {
        row_for_lambda(cfg.wavelength(), &mut row);
        for r in 0..n {
            for col in 0..l {
                a[(r, col)] = row[col];
            }
        }
    }
    Ok(a)
}

/// Slow-time and fast-time Doppler steering for radial velocity `v`.
#[derive(Debug, Clone)]
pub struct DopplerMatrices {
    /// Slow-time progression `[C]_{n,l} = exp(j 2 pi l T_sym v / lambda_x)`,
    /// with `lambda_x = lambda_n` in the wideband case and `lambda` otherwise.
    pub slow_time: Array2<Complex64>,
    /// Diagonal of the fast-time (intra-symbol) rotation
    /// `[E]_{n,n} = exp(j 2 pi (T_o / N) n v / lambda)`.
    pub fast_time_diag: Vec<Complex64>,
    pub wideband: bool,
}

pub fn doppler_matrices(v: f64, cfg: &SystemConfig, wideband: bool) -> DopplerMatrices {
    DopplerMatrices {
        slow_time: slow_time_doppler(v, cfg, wideband),
        fast_time_diag: fast_time_doppler_diag(v, cfg),
        wideband,
    }
}

pub(crate) fn slow_time_doppler(v: f64, cfg: &SystemConfig, wideband: bool) -> Array2<Complex64> {
    let n = cfg.n_subcarriers;
    let l = cfg.n_symbols;
    let t_sym = cfg.total_symbol_duration();
    let lambda = cfg.wavelength();
    Array2::from_shape_fn((n, l), |(row, col)| {
        let lam = if wideband { cfg.wavelength_at(row) } else { lambda };
        Complex64::from_polar(1.0, TAU * col as f64 * t_sym * v / lam)
    })
}

/// Fast-time rotation diagonal; always at the carrier wavelength.
pub(crate) fn fast_time_doppler_diag(v: f64, cfg: &SystemConfig) -> Vec<Complex64> {
    let n = cfg.n_subcarriers;
    let t_o = cfg.symbol_duration();
    let lambda = cfg.wavelength();
    (0..n)
        .map(|row| Complex64::from_polar(1.0, TAU * t_o * row as f64 * v / (n as f64 * lambda)))
        .collect()
}

/// Applies the fast-time Doppler mix `F E(v) F^H` to `x` in place. Exact
/// identity (skipped) for `v == 0`.
pub(crate) fn apply_fast_time_mix(x: &mut Array2<Complex64>, v: f64, cfg: &SystemConfig) {
    if v == 0.0 {
        return;
    }
    let diag = fast_time_doppler_diag(v, cfg);
    spectrum::doppler_mix_columns(x, &diag);
}

/// Noiseless received signal `M = Y_b + Y_r` under the selected model.
pub fn synthesize(
    params: &ChannelParams,
    theta: AnglePair,
    profiles: &RisProfileSet,
    cfg: &SystemConfig,
    model: ChannelModel,
) -> Result<RxSignal> {
    cfg.validate()?;
    if profiles.n_symbols() != cfg.n_symbols || profiles.n_elements() != cfg.n_elements() {
        return Err(Error::DimensionMismatch(
            "profile set does not match the configuration".into(),
        ));
    }
    let (v_b, v_r, wideband) = match model {
        ChannelModel::StaticNb => (0.0, 0.0, false),
        ChannelModel::DynamicNb => (params.v_b, params.v_r, false),
        ChannelModel::DynamicWb => (params.v_b, params.v_r, true),
    };

    // Direct path: g_b F E(v_b) F^H (D(tau_b) o C(v_b)).
    let mut direct = delay_matrix(params.tau_b, cfg);
    if v_b != 0.0 {
        direct *= &slow_time_doppler(v_b, cfg, wideband);
    }
    apply_fast_time_mix(&mut direct, v_b, cfg);
    direct.mapv_inplace(|z| z * params.g_b);

    // Reflected path: g_r F E(v_r) F^H (D(tau_r) o A(phi) o C(v_r)).
    let mut reflected = delay_matrix(params.tau_r, cfg);
    reflected *= &ris_response_matrix(theta, params.phi, profiles, cfg, wideband)?;
    if v_r != 0.0 {
        reflected *= &slow_time_doppler(v_r, cfg, wideband);
    }
    apply_fast_time_mix(&mut reflected, v_r, cfg);
    reflected.mapv_inplace(|z| z * params.g_r);

    Ok(direct + reflected)
}

/// Adds circularly-symmetric complex Gaussian noise with per-element
/// variance `cfg.noise_variance()`. Deterministic for a fixed seed.
pub fn add_noise(m: &RxSignal, cfg: &SystemConfig, rng_seed: u64) -> RxSignal {
    let sigma2 = cfg.noise_variance();
    if sigma2 == 0.0 {
        return m.clone();
    }
    let std_per_part = (sigma2 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = m.clone();
    for v in out.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(re * std_per_part, im * std_per_part);
    }
    out
}

/// Complex path gains from the distance/aspect model: inverse-distance
/// amplitude for the direct path, double-bounce amplitude with
/// `cos^q` element patterns for the reflected path, and uniformly random
/// phases drawn from the seed (fixed over the L symbols).
pub fn path_gains(
    state: &UeState,
    anchors: &Anchors,
    cfg: &SystemConfig,
    rng_seed: u64,
) -> Result<(Complex64, Complex64)> {
    let lambda = cfg.wavelength();
    let sqrt_es = cfg.pilot_energy.sqrt();
    let d_bu = (anchors.bs - state.position).norm();
    let d_br = (anchors.bs - anchors.ris).norm();
    let d_ru = (anchors.ris - state.position).norm();
    if d_bu == 0.0 || d_ru == 0.0 {
        return Err(Error::CoincidentPoints("UE coincides with an anchor"));
    }

    let phi = crate::geometry::compute_aod(&state.position, anchors)?;
    let cos_alpha_phi = boresight_cosine(phi);
    let cos_alpha_theta = boresight_cosine(anchors.bs_aoa);
    for cos_a in [cos_alpha_phi, cos_alpha_theta] {
        if cos_a < 0.0 {
            return Err(Error::BehindRis(cos_a));
        }
    }

    let mag_b = lambda * sqrt_es / (4.0 * PI * d_bu);
    let pattern = cos_alpha_theta.clamp(0.0, 1.0).powf(GAIN_PATTERN_EXPONENT)
        * cos_alpha_phi.clamp(0.0, 1.0).powf(GAIN_PATTERN_EXPONENT);
    let mag_r = lambda * lambda * pattern * sqrt_es / (16.0 * PI * d_br * d_ru);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let phase_b: f64 = rng.gen_range(0.0..TAU);
    let phase_r: f64 = rng.gen_range(0.0..TAU);
    Ok((
        Complex64::from_polar(mag_b, phase_b),
        Complex64::from_polar(mag_r, phase_r),
    ))
}

/// Cosine of the angle between a direction and the RIS normal `[0, 1, 0]`.
pub(crate) fn boresight_cosine(psi: AnglePair) -> f64 {
    psi.el.sin() * psi.az.sin()
}

/// Left-hand sides of the narrowband validity conditions; both must be
/// much smaller than one for the narrowband approximation to hold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NbValidity {
    /// `max(|v_b|, |v_r|) L N / c` (slow-time Doppler dispersion).
    pub mobility_ratio: f64,
    /// `max(M1, M2) d sin(alpha) B / c` (aperture/beam-squint dispersion).
    pub aperture_ratio: f64,
}

pub fn nb_validity(cfg: &SystemConfig, params: &ChannelParams, anchors: &Anchors) -> NbValidity {
    let c = cfg.light_speed;
    let mobility_ratio = params.v_b.abs().max(params.v_r.abs())
        * cfg.n_symbols as f64
        * cfg.n_subcarriers as f64
        / c;
    let cos_min = boresight_cosine(params.phi)
        .min(boresight_cosine(anchors.bs_aoa))
        .clamp(-1.0, 1.0);
    let sin_alpha = (1.0 - cos_min * cos_min).sqrt();
    let aperture_ratio = cfg.ris_rows.max(cfg.ris_cols) as f64
        * cfg.element_spacing_m
        * sin_alpha
        * cfg.bandwidth()
        / c;
    NbValidity { mobility_ratio, aperture_ratio }
}
