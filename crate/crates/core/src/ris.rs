//! RIS phase-profile codebooks, the temporal orthogonal pairing with its
//! matched post-processing, the mobility leakage factor, and the candidate
//! AoD grid with its 2-D IFFT-accelerated correlations.
//!
//! Profiles come in pairs: `gamma_{2k} = b_k`, `gamma_{2k+1} = -b_k`. Sums
//! and differences of consecutive received symbols then separate the direct
//! and reflected paths exactly in the static case.

use nalgebra::Vector3;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::channel::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{compute_aod, Anchors, AnglePair};
use crate::spectrum;

/// How the beam set was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Random,
    Directional,
}

/// Prior position knowledge used by the directional codebook.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionPrior {
    /// Prior UE position estimate, meters.
    pub center: Vector3<f64>,
    /// Uncertainty radius, meters.
    pub radius: f64,
}

/// A set of L/2 unit-modulus beams `b_k` defining the L per-symbol phase
/// profiles through the orthogonal pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisProfileSet {
    beams: Vec<Vec<Complex64>>,
    kind: ProfileKind,
    prior: Option<PositionPrior>,
}

const PROFILE_MAGIC: &[u8; 4] = b"RISP";
const PROFILE_VERSION: u32 = 1;

impl RisProfileSet {
    /// Wraps explicit beams. Every entry must be unit modulus.
    pub fn from_beams(beams: Vec<Vec<Complex64>>, kind: ProfileKind) -> Result<Self> {
        if beams.is_empty() {
            return Err(Error::InvalidConfig("profile set needs at least one beam".into()));
        }
        let m = beams[0].len();
        for (k, beam) in beams.iter().enumerate() {
            if beam.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "beam {k} has {} elements, expected {m}",
                    beam.len()
                )));
            }
            for (i, z) in beam.iter().enumerate() {
                if (z.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "beam {k} entry {i} is not unit modulus (|z| = {})",
                        z.norm()
                    )));
                }
            }
        }
        Ok(Self { beams, kind, prior: None })
    }

    fn with_prior(mut self, prior: PositionPrior) -> Self {
        self.prior = Some(prior);
        self
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn prior(&self) -> Option<&PositionPrior> {
        self.prior.as_ref()
    }

    pub fn beams(&self) -> &[Vec<Complex64>] {
        &self.beams
    }

    pub fn beam(&self, k: usize) -> &[Complex64] {
        &self.beams[k]
    }

    /// Number of OFDM symbols covered: `L = 2 * (number of beams)`.
    pub fn n_symbols(&self) -> usize {
        2 * self.beams.len()
    }

    pub fn n_elements(&self) -> usize {
        self.beams[0].len()
    }

    /// Phase profile vector for symbol `l`: `b_{l/2}` for even `l`, its
    /// negation for odd `l`.
    pub fn gamma(&self, l: usize) -> Vec<Complex64> {
        let beam = &self.beams[l / 2];
        if l % 2 == 0 {
            beam.clone()
        } else {
            beam.iter().map(|z| -z).collect()
        }
    }

    /// Extends the set with additional beams (same element count), keeping
    /// kind and prior.
    pub fn extended(&self, extra: Vec<Vec<Complex64>>) -> Result<Self> {
        let mut beams = self.beams.clone();
        beams.extend(extra);
        let mut set = Self::from_beams(beams, self.kind)?;
        set.prior = self.prior;
        Ok(set)
    }

    /// Serializes to the binary container: magic `RISP`, version, kind,
    /// optional prior, element count M, beam count L/2, then the beam
    /// entries as interleaved little-endian f64 (re, im) pairs, beam-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.beams.len() * self.n_elements() * 16);
        out.extend_from_slice(PROFILE_MAGIC);
        out.extend_from_slice(&PROFILE_VERSION.to_le_bytes());
        out.push(match self.kind {
            ProfileKind::Random => 0,
            ProfileKind::Directional => 1,
        });
        match &self.prior {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                for v in [p.center.x, p.center.y, p.center.z, p.radius] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(self.n_elements() as u64).to_le_bytes());
        out.extend_from_slice(&(self.beams.len() as u64).to_le_bytes());
        for beam in &self.beams {
            for z in beam {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidConfig(format!("profile container: {msg}"));
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(bad("truncated"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != PROFILE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != PROFILE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = match take(&mut pos, 1)?[0] {
            0 => ProfileKind::Random,
            1 => ProfileKind::Directional,
            k => return Err(bad(&format!("unknown kind {k}"))),
        };
        let prior = match take(&mut pos, 1)?[0] {
            0 => None,
            1 => {
                let mut vals = [0.0f64; 4];
                for v in vals.iter_mut() {
                    *v = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                }
                Some(PositionPrior {
                    center: Vector3::new(vals[0], vals[1], vals[2]),
                    radius: vals[3],
                })
            }
            k => return Err(bad(&format!("bad prior flag {k}"))),
        };
        let m = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let half_l = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let mut beams = Vec::with_capacity(half_l);
        for _ in 0..half_l {
            let mut beam = Vec::with_capacity(m);
            for _ in 0..m {
                let re = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                let im = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                beam.push(Complex64::new(re, im));
            }
            beams.push(beam);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut set = Self::from_beams(beams, kind)?;
        set.prior = prior;
        Ok(set)
    }
}

/// Random codebook: i.i.d. uniform phases on `[0, 2 pi)`.
pub fn random_profiles(cfg: &SystemConfig, rng_seed: u64) -> Result<RisProfileSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let m = cfg.n_elements();
    let beams = (0..cfg.n_symbols / 2)
        .map(|_| {
            (0..m)
                .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..TAU)))
                .collect()
        })
        .collect();
    RisProfileSet::from_beams(beams, ProfileKind::Random)
}

/// Samples a point uniformly from the open ball of radius `sigma` around
/// `center`, by rejection from the bounding cube.
pub(crate) fn sample_ball(center: &Vector3<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let x = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if x.norm_squared() < 1.0 {
            return center + sigma * x;
        }
    }
}

/// Directional codebook: beams focus the reflection toward L/2 points drawn
/// uniformly from the uncertainty ball around the prior position `xi`.
///
/// Each beam is the conjugate match of the incident and outgoing steering
/// phases for its target point, which concentrates the reflected energy
/// toward that point.
pub fn directional_profiles(
    cfg: &SystemConfig,
    anchors: &Anchors,
    xi: Vector3<f64>,
    sigma: f64,
    rng_seed: u64,
) -> Result<RisProfileSet> {
    cfg.validate()?;
    if sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    if (xi - anchors.ris).norm() <= sigma {
        return Err(Error::SingularGeometry(
            "uncertainty ball touches the RIS center; beam directions undefined",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let theta_dots = crate::channel::direction_element_dots(anchors.bs_aoa, cfg);
    let lambda = cfg.wavelength();
    let beams = (0..cfg.n_symbols / 2)
        .map(|_| -> Result<Vec<Complex64>> {
            let target = sample_ball(&xi, sigma, &mut rng);
            let aim = compute_aod(&target, anchors)?;
            let aim_dots = crate::channel::direction_element_dots(aim, cfg);
            Ok(theta_dots
                .iter()
                .zip(aim_dots.iter())
                .map(|(t, a)| Complex64::from_polar(1.0, -TAU / lambda * (t + a)))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RisProfileSet::from_beams(beams, ProfileKind::Directional)?
        .with_prior(PositionPrior { center: xi, radius: sigma }))
}

/// Matched post-processing: `Z[:, k] = w_1 Y[:, 2k] + w_2 Y[:, 2k+1]`.
pub fn match_columns(y: &Array2<Complex64>, w: [Complex64; 2]) -> Result<Array2<Complex64>> {
    let (n, l) = y.dim();
    if l % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "match requires an even number of columns, got {l}"
        )));
    }
    let mut z = Array2::<Complex64>::zeros((n, l / 2));
    for k in 0..l / 2 {
        for row in 0..n {
            z[(row, k)] = w[0] * y[(row, 2 * k)] + w[1] * y[(row, 2 * k + 1)];
        }
    }
    Ok(z)
}

/// Mobility leakage factor `eps(v) = 1 - exp(j 2 pi T_sym v / lambda)`.
pub fn leakage_epsilon(v: f64, cfg: &SystemConfig) -> Complex64 {
    Complex64::new(1.0, 0.0)
        - Complex64::from_polar(1.0, TAU * cfg.total_symbol_duration() * v / cfg.wavelength())
}

/// How to pick candidate AoDs for the joint velocity/angle search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Angles toward points sampled in the prior uncertainty ball.
    Prior {
        center: Vector3<f64>,
        radius: f64,
        n_points: usize,
        seed: u64,
    },
    /// Uniform k-space grid aligned with 2-D IFFT bins.
    Full { n1: usize, n2: usize },
}

/// Candidate AoD set. For the full k-space grid the IFFT bin of each kept
/// candidate is recorded so correlations can be read out of a 2-D IFFT.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AodGrid {
    pub angles: Vec<AnglePair>,
    /// `(n1, n2)` IFFT bin per candidate (full grids only).
    pub bins: Option<Vec<(usize, usize)>>,
    /// IFFT dimensions `(N_phi1, N_phi2)` (full grids only).
    pub full_dims: Option<(usize, usize)>,
    /// Per-candidate refinement cell half-widths `(d_az, d_el)`.
    cells: Vec<(f64, f64)>,
}

const MIN_CELL: f64 = 1e-4;
const MAX_CELL: f64 = 0.5;

impl AodGrid {
    /// Grid over an explicit candidate list; refinement cells come from the
    /// nearest-neighbor spacing.
    pub fn from_angles(angles: Vec<AnglePair>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let cells = angles
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut best = f64::INFINITY;
                for (j, b) in angles.iter().enumerate() {
                    if i != j {
                        let d = wrap_pi(a.az - b.az).abs().max((a.el - b.el).abs());
                        best = best.min(d);
                    }
                }
                let c = best.clamp(MIN_CELL, MAX_CELL);
                (c, c)
            })
            .collect();
        Ok(Self { angles, bins: None, full_dims: None, cells })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.full_dims.is_some()
    }

    /// Half-width of the local grid cell around candidate `idx`, used to
    /// bound the angle refinement.
    pub fn local_cell(&self, idx: usize) -> (f64, f64) {
        self.cells[idx]
    }
}

/// Wraps `x` into `[-1, 1)`; the k-space alias compensation.
pub(crate) fn wrap_unit(x: f64) -> f64 {
    (x + 1.0).rem_euclid(2.0) - 1.0
}

fn angle_of_kappa(k1: f64, k3: f64) -> Option<AnglePair> {
    let k2_sq = 1.0 - k1 * k1 - k3 * k3;
    if k2_sq < 0.0 {
        return None;
    }
    let k2 = k2_sq.sqrt();
    let az = if k1 == 0.0 && k2 == 0.0 { 0.0 } else { k2.atan2(k1) };
    Some(AnglePair::new(az, k3.clamp(-1.0, 1.0).acos()))
}

fn wrap_pi(x: f64) -> f64 {
    (x + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI
}

/// Builds the candidate AoD set.
pub fn candidate_aod_grid(cfg: &SystemConfig, anchors: &Anchors, mode: &GridMode) -> Result<AodGrid> {
    match mode {
        GridMode::Prior { center, radius, n_points, seed } => {
            if *n_points < 2 {
                return Err(Error::InvalidConfig("prior grid needs at least 2 points".into()));
            }
            if *radius <= 0.0 {
                return Err(Error::InvalidConfig("prior grid radius must be positive".into()));
            }
            if (center - anchors.ris).norm() <= *radius {
                return Err(Error::SingularGeometry(
                    "prior ball touches the RIS center; candidate angles undefined",
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let angles: Vec<AnglePair> = (0..*n_points)
                .map(|_| compute_aod(&sample_ball(center, *radius, &mut rng), anchors))
                .collect::<Result<Vec<_>>>()?;
            // Nearest-neighbor spacing bounds the refinement cell.
            let cells = angles
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let mut best = f64::INFINITY;
                    for (j, b) in angles.iter().enumerate() {
                        if i == j {
                            continue;
                        }
                        let d = wrap_pi(a.az - b.az).abs().max((a.el - b.el).abs());
                        best = best.min(d);
                    }
                    let c = best.clamp(MIN_CELL, MAX_CELL);
                    (c, c)
                })
                .collect();
            Ok(AodGrid { angles, bins: None, full_dims: None, cells })
        }
        GridMode::Full { n1, n2 } => {
            if *n1 < 2 || *n2 < 2 {
                return Err(Error::InvalidConfig("full grid needs at least 2x2 bins".into()));
            }
            let ratio = cfg.wavelength() / cfg.element_spacing_m;
            let kappa = |i: usize, n: usize| wrap_unit(ratio * i as f64 / n as f64);
            let mut angles = Vec::new();
            let mut bins = Vec::new();
            let mut cells = Vec::new();
            // Candidate order follows the vectorized bin order, i1 fastest.
            for i2 in 0..*n2 {
                for i1 in 0..*n1 {
                    let k1 = kappa(i1, *n1);
                    let k3 = kappa(i2, *n2);
                    let Some(angle) = angle_of_kappa(k1, k3) else { continue };
                    // Cell size from the k-space step mapped through the
                    // angle parametrization at this bin.
                    let step1 = ratio / *n1 as f64;
                    let step2 = ratio / *n2 as f64;
                    let mut d_az: f64 = 0.0;
                    let mut d_el: f64 = 0.0;
                    for (nk1, nk3) in [
                        (k1 + step1, k3),
                        (k1 - step1, k3),
                        (k1, k3 + step2),
                        (k1, k3 - step2),
                    ] {
                        if let Some(nb) = angle_of_kappa(nk1, nk3) {
                            d_az = d_az.max(wrap_pi(nb.az - angle.az).abs());
                            d_el = d_el.max((nb.el - angle.el).abs());
                        }
                    }
                    cells.push((d_az.clamp(MIN_CELL, MAX_CELL), d_el.clamp(MIN_CELL, MAX_CELL)));
                    angles.push(angle);
                    bins.push((i1, i2));
                }
            }
            if angles.is_empty() {
                return Err(Error::EmptyGrid);
            }
            Ok(AodGrid {
                angles,
                bins: Some(bins),
                full_dims: Some((*n1, *n2)),
                cells,
            })
        }
    }
}

/// Correlation templates `[z_s]_k = a(theta)^T diag(b_k) a(phi_s)` for every
/// candidate `s`, as a (candidates x L/2) matrix.
///
/// With `use_fft2` on a full grid the templates are read out of per-beam
/// 2-D IFFTs, which matches the direct evaluation exactly when
/// `2 d / lambda` is an integer (the IFFT bins then coincide with the
/// aliased steering phases).
pub fn grid_correlations(
    profiles: &RisProfileSet,
    grid: &AodGrid,
    theta: AnglePair,
    cfg: &SystemConfig,
    use_fft2: bool,
) -> Result<Array2<Complex64>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if profiles.n_elements() != cfg.n_elements() {
        return Err(Error::DimensionMismatch(
            "profile set does not match the RIS dimensions".into(),
        ));
    }
    let half_l = profiles.beams().len();
    let n_cand = grid.len();

    if use_fft2 {
        let (Some(bins), Some((n1, n2))) = (&grid.bins, grid.full_dims) else {
            return Err(Error::InvalidConfig(
                "FFT-accelerated correlations require a full k-space grid".into(),
            ));
        };
        let ratio = 2.0 * cfg.element_spacing_m / cfg.wavelength();
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "FFT grid path requires 2d/lambda to be an integer, got {ratio}"
            )));
        }
        let m1 = cfg.ris_rows;
        let m2 = cfg.ris_cols;
        let a_theta = crate::channel::steering_vector(theta, None, cfg)?;
        // Candidate-angle prefactor: the steering phase of the element at
        // local index (0, 0) relative to the array center.
        let d = cfg.element_spacing_m;
        let lambda = cfg.wavelength();
        let prefactors: Vec<Complex64> = grid
            .angles
            .iter()
            .map(|a| {
                let u = a.unit_vector();
                let beta = TAU / lambda * d * (u.x * (m1 as f64 - 1.0) + u.z * (m2 as f64 - 1.0))
                    / 2.0;
                Complex64::from_polar(1.0, -beta)
            })
            .collect();

        let mut out = Array2::<Complex64>::zeros((n_cand, half_l));
        let mut c_k = Array2::<Complex64>::zeros((m1, m2));
        for (k, beam) in profiles.beams().iter().enumerate() {
            for s in 0..m2 {
                for r in 0..m1 {
                    let m = r + s * m1;
                    c_k[(r, s)] = a_theta[m] * beam[m];
                }
            }
            let full = spectrum::idft2(&c_k, n1, n2);
            for (cand, (i1, i2)) in bins.iter().enumerate() {
                out[(cand, k)] = prefactors[cand] * full[(*i1, *i2)];
            }
        }
        Ok(out)
    } else {
        let a_theta = crate::channel::steering_vector(theta, None, cfg)?;
        let mut out = Array2::<Complex64>::zeros((n_cand, half_l));
        for (cand, angle) in grid.angles.iter().enumerate() {
            let a_phi = crate::channel::steering_vector(*angle, None, cfg)?;
            let pair: Vec<Complex64> = a_theta
                .iter()
                .zip(a_phi.iter())
                .map(|(t, p)| t * p)
                .collect();
            for (k, beam) in profiles.beams().iter().enumerate() {
                out[(cand, k)] = pair.iter().zip(beam.iter()).map(|(p, b)| p * b).sum();
            }
        }
        Ok(out)
    }
}
