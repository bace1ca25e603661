//! Monte-Carlo experiment orchestration: spec loading/validation, sweep
//! expansion, trial execution (signal synthesis, noise, estimation, bounds),
//! aggregation into summary statistics, and deterministic result emission.
//!
//! Every trial derives its random seeds from the experiment seed and the
//! trial indices, never from execution order, so runs are byte-identical
//! across repeats and thread counts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use risloc_core::channel::{
    add_noise, nb_validity, path_gains, synthesize, ChannelModel, SystemConfig,
};
use risloc_core::estimator::{estimate, velocity_vector_est, EstimatorConfig};
use risloc_core::fim::{bounds_from_fim, fim_channel, fim_positional, FimResult};
use risloc_core::geometry::{
    geometric_jacobian, params_from_state, Anchors, PositionalParams, UeState,
};
use risloc_core::ris::{
    candidate_aod_grid, directional_profiles, random_profiles, AodGrid, GridMode, ProfileKind,
    RisProfileSet,
};

use risloc_core::nalgebra::{Matrix3, Vector3};

pub mod presets;

/// Harness-level error with the CLI exit-code split: invalid specs exit
/// with 2, runtime failures with 3.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl From<risloc_core::Error> for HarnessError {
    fn from(e: risloc_core::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

const SPEC_VERSION: u32 = 1;

/// Anchor geometry in plain arrays; validated into [`Anchors`] on use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub bs: [f64; 3],
    pub ris: [f64; 3],
    /// Rows of the global-to-RIS-local rotation matrix.
    pub rotation: [[f64; 3]; 3],
}

impl AnchorSpec {
    pub fn build(&self) -> Result<Anchors> {
        let rot = Matrix3::from_row_slice(&[
            self.rotation[0][0],
            self.rotation[0][1],
            self.rotation[0][2],
            self.rotation[1][0],
            self.rotation[1][1],
            self.rotation[1][2],
            self.rotation[2][0],
            self.rotation[2][1],
            self.rotation[2][2],
        ]);
        Anchors::new(Vector3::from(self.bs), Vector3::from(self.ris), rot)
            .map_err(|e| HarnessError::InvalidSpec(e.to_string()))
    }
}

/// Base UE state; sweeps may override position or velocity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UeSpec {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub clock_bias: f64,
}

impl UeSpec {
    fn state(&self) -> UeState {
        UeState {
            position: Vector3::from(self.position),
            velocity: Vector3::from(self.velocity),
            clock_bias: self.clock_bias,
        }
    }
}

/// The swept quantity. One record set per entry of the active list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sweep {
    /// UE placed at `xy_direction * r` (unit-normalized in the plane) with
    /// fixed height `z`, for each radius in `r_list`.
    PositionArc { r_list: Vec<f64>, xy_direction: [f64; 2], z: f64 },
    /// Signal bandwidth `B = N df`: the subcarrier count is set to
    /// `round(B / df)` for each entry (fixed transmit power).
    Bandwidth { b_list: Vec<f64> },
    /// UE velocity vectors.
    Velocity { v_list: Vec<[f64; 3]> },
    /// Uncertainty radius of the directional codebook / prior grid.
    Sigma { sigma_list: Vec<f64> },
    /// RIS dimensions `[M1, M2]`.
    RisSize { m_list: Vec<[usize; 2]> },
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Sweep::PositionArc { r_list, .. } => r_list.len(),
            Sweep::Bandwidth { b_list } => b_list.len(),
            Sweep::Velocity { v_list } => v_list.len(),
            Sweep::Sigma { sigma_list } => sigma_list.len(),
            Sweep::RisSize { m_list } => m_list.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, idx: usize) -> String {
        match self {
            Sweep::PositionArc { r_list, .. } => format!("r={}", r_list[idx]),
            Sweep::Bandwidth { b_list } => format!("B={}", b_list[idx]),
            Sweep::Velocity { v_list } => {
                let v = v_list[idx];
                format!("v=[{},{},{}]", v[0], v[1], v[2])
            }
            Sweep::Sigma { sigma_list } => format!("sigma={}", sigma_list[idx]),
            Sweep::RisSize { m_list } => format!("M={}x{}", m_list[idx][0], m_list[idx][1]),
        }
    }
}

/// RIS codebook selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    /// Uncertainty radius for the directional codebook; the prior center is
    /// the true UE position of the sweep point.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

/// Candidate-AoD grid selection for the estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GridSpec {
    /// Points in the prior ball (center = true position, radius = profile
    /// sigma), like the directional codebook but with its own seed.
    Prior { n_points: usize },
    /// Full k-space IFFT grid.
    Full { n1: usize, n2: usize },
}

/// Estimator knobs (the grid itself is built per sweep point).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub n_v: usize,
    pub n_tau: usize,
    pub n_nu: usize,
    pub grid: GridSpec,
    pub n_iter: usize,
    pub refine_tol: f64,
    pub refine_max_evals: usize,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            n_v: 256,
            n_tau: 4096,
            n_nu: 256,
            grid: GridSpec::Prior { n_points: 256 },
            n_iter: 3,
            refine_tol: 1e-12,
            refine_max_evals: 200,
        }
    }
}

/// Explicit seed block; all per-trial randomness derives from it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeedBlock {
    pub experiment: u64,
}

/// A complete experiment description (JSON schema version 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub version: u32,
    pub name: String,
    pub config: SystemConfig,
    /// Transmit power in dBm; per sweep point the per-subcarrier pilot
    /// energy is `P / (N df)`.
    pub tx_power_dbm: f64,
    pub anchors: AnchorSpec,
    pub ue: UeSpec,
    pub sweep: Sweep,
    pub profiles: ProfileSpec,
    pub channel_model: ChannelModel,
    /// Model used for the FIM/bounds; the spatial-wideband model unless
    /// overridden.
    #[serde(default = "default_fim_model")]
    pub fim_model: ChannelModel,
    pub n_profile_realizations: usize,
    pub n_noise_realizations: usize,
    pub seeds: SeedBlock,
    #[serde(default)]
    pub estimator: EstimatorSpec,
}

fn default_fim_model() -> ChannelModel {
    ChannelModel::DynamicWb
}

/// One sweep point expanded: the concrete config and true UE state.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub config: SystemConfig,
    pub state: UeState,
    pub sigma: f64,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)
            .map_err(|e| HarnessError::InvalidSpec(format!("JSON parse error: {e}")))?;
        if spec.version != SPEC_VERSION {
            return Err(HarnessError::InvalidSpec(format!(
                "unsupported spec version {} (expected {SPEC_VERSION})",
                spec.version
            )));
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    /// Expands the sweep into concrete (config, state) points.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        let base_state = self.ue.state();
        let tx_power_w = 10.0_f64.powf((self.tx_power_dbm - 30.0) / 10.0);
        let mut points = Vec::with_capacity(self.sweep.len());
        for idx in 0..self.sweep.len() {
            let mut config = self.config.clone();
            let mut state = base_state;
            let mut sigma = self.profiles.sigma;
            match &self.sweep {
                Sweep::PositionArc { r_list, xy_direction, z } => {
                    let r = r_list[idx];
                    let norm = (xy_direction[0].powi(2) + xy_direction[1].powi(2)).sqrt();
                    if norm == 0.0 {
                        return Err(HarnessError::InvalidSpec(
                            "position arc direction must be nonzero".into(),
                        ));
                    }
                    state.position = Vector3::new(
                        r * xy_direction[0] / norm,
                        r * xy_direction[1] / norm,
                        *z,
                    );
                }
                Sweep::Bandwidth { b_list } => {
                    let n = (b_list[idx] / config.subcarrier_spacing_hz).round() as usize;
                    if n == 0 {
                        return Err(HarnessError::InvalidSpec(format!(
                            "bandwidth {} below one subcarrier",
                            b_list[idx]
                        )));
                    }
                    config.n_subcarriers = n;
                }
                Sweep::Velocity { v_list } => {
                    state.velocity = Vector3::from(v_list[idx]);
                }
                Sweep::Sigma { sigma_list } => {
                    sigma = sigma_list[idx];
                }
                Sweep::RisSize { m_list } => {
                    config.ris_rows = m_list[idx][0];
                    config.ris_cols = m_list[idx][1];
                }
            }
            config.pilot_energy =
                tx_power_w / (config.n_subcarriers as f64 * config.subcarrier_spacing_hz);
            points.push(SweepPoint {
                index: idx,
                label: self.sweep.label(idx),
                config,
                state,
                sigma,
            });
        }
        Ok(points)
    }

    /// Structural and physical validation; returns soft warnings (narrowband
    /// validity ratios) on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.sweep.is_empty() {
            return Err(HarnessError::InvalidSpec("sweep list is empty".into()));
        }
        if self.n_profile_realizations == 0 || self.n_noise_realizations == 0 {
            return Err(HarnessError::InvalidSpec(
                "profile and noise realization counts must be >= 1".into(),
            ));
        }
        match &self.estimator.grid {
            GridSpec::Prior { n_points } if *n_points < 2 => {
                return Err(HarnessError::InvalidSpec(
                    "prior grid needs at least 2 points".into(),
                ))
            }
            GridSpec::Full { n1, n2 } if *n1 < 2 || *n2 < 2 => {
                return Err(HarnessError::InvalidSpec(
                    "full grid needs at least 2x2 bins".into(),
                ))
            }
            _ => {}
        }
        let anchors = self.anchors.build()?;
        let mut warnings = Vec::new();
        for point in self.sweep_points()? {
            point
                .config
                .validate()
                .map_err(|e| HarnessError::InvalidSpec(format!("{}: {e}", point.label)))?;
            // Delay-range check: the reflected delay must stay inside the
            // unambiguous DFT range [0, 1/df).
            let gains =
                (risloc_core::num_complex::Complex64::new(1.0, 0.0),
                 risloc_core::num_complex::Complex64::new(1.0, 0.0));
            let params = params_from_state(&point.state, &anchors, gains)
                .map_err(|e| HarnessError::InvalidSpec(format!("{}: {e}", point.label)))?;
            let range = 1.0 / point.config.subcarrier_spacing_hz;
            if params.tau_r < 0.0 || params.tau_r >= range {
                return Err(HarnessError::InvalidSpec(format!(
                    "{}: reflected delay tau_r = {:.3e} s outside the unambiguous range \
                     [0, {:.3e} s); reduce distances or the clock bias",
                    point.label, params.tau_r, range
                )));
            }
            let validity = nb_validity(&point.config, &params, &anchors);
            if validity.mobility_ratio > 0.1 {
                warnings.push(format!(
                    "{}: mobility ratio {:.3} is not << 1; narrowband Doppler model degrades",
                    point.label, validity.mobility_ratio
                ));
            }
            if validity.aperture_ratio > 0.1 {
                warnings.push(format!(
                    "{}: aperture ratio {:.3} is not << 1; spatial-wideband distortion expected",
                    point.label, validity.aperture_ratio
                ));
            }
        }
        Ok(warnings)
    }
}

/// Domain-separated deterministic seed derivation (splitmix64 over the
/// experiment seed and the index path).
pub fn derive_seed(experiment: u64, domain: u64, indices: &[u64]) -> u64 {
    let mut state = experiment ^ domain.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    for &idx in indices {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(idx);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

mod seed_domain {
    pub const PROFILES: u64 = 1;
    pub const GAINS: u64 = 2;
    pub const GRID: u64 = 3;
    pub const NOISE: u64 = 4;
}

/// Per-trial bound values shared across the noise realizations of one
/// (sweep point, profile realization) pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundRecord {
    pub peb: f64,
    pub crb_clock: f64,
    pub crb_v_b: f64,
    pub crb_v_r: f64,
}

impl From<&FimResult> for BoundRecord {
    fn from(f: &FimResult) -> Self {
        Self { peb: f.peb, crb_clock: f.crb_clock, crb_v_b: f.crb_v_b, crb_v_r: f.crb_v_r }
    }
}

/// Estimates and error figures for one noise realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_index: usize,
    pub sweep_value: String,
    pub profile_realization: usize,
    pub noise_realization: usize,
    pub failed: bool,
    pub failure: Option<String>,
    /// Truth: position, clock bias, radial velocities.
    pub truth_position: [f64; 3],
    pub truth_clock_bias: f64,
    pub truth_v_b: f64,
    pub truth_v_r: f64,
    pub est_position: Option<[f64; 3]>,
    pub est_clock_bias: Option<f64>,
    pub est_v_b: Option<f64>,
    pub est_v_r: Option<f64>,
    pub est_tau_b: Option<f64>,
    pub est_tau_r: Option<f64>,
    pub err_position: Option<f64>,
    pub err_clock: Option<f64>,
    pub err_v_b: Option<f64>,
    pub err_v_r: Option<f64>,
    /// Velocity-vector error under the planar-motion assumption; absent when
    /// the reconstruction is singular or the truth has vertical motion.
    pub err_velocity_vector: Option<f64>,
    pub bound: Option<BoundRecord>,
}

/// Everything shared by the noise trials of one (sweep, profile) pair.
struct PointRealization {
    sweep_index: usize,
    label: String,
    config: SystemConfig,
    state: UeState,
    truth: PositionalParams,
    profiles: RisProfileSet,
    grid: AodGrid,
    truth_signal: risloc_core::channel::RxSignal,
    bound: Option<BoundRecord>,
    bound_failure: Option<String>,
}

fn build_point(
    spec: &ExperimentSpec,
    anchors: &Anchors,
    point: &SweepPoint,
    profile_idx: usize,
) -> Result<PointRealization> {
    let exp = spec.seeds.experiment;
    let cfg = &point.config;
    let idx = &[point.index as u64, profile_idx as u64];

    let profiles = match spec.profiles.kind {
        ProfileKind::Random => {
            random_profiles(cfg, derive_seed(exp, seed_domain::PROFILES, idx))?
        }
        ProfileKind::Directional => directional_profiles(
            cfg,
            anchors,
            point.state.position,
            point.sigma,
            derive_seed(exp, seed_domain::PROFILES, idx),
        )?,
    };
    let grid = match &spec.estimator.grid {
        GridSpec::Prior { n_points } => candidate_aod_grid(
            cfg,
            anchors,
            &GridMode::Prior {
                center: point.state.position,
                radius: point.sigma,
                n_points: *n_points,
                seed: derive_seed(exp, seed_domain::GRID, idx),
            },
        )?,
        GridSpec::Full { n1, n2 } => {
            candidate_aod_grid(cfg, anchors, &GridMode::Full { n1: *n1, n2: *n2 })?
        }
    };

    let gains =
        path_gains(&point.state, anchors, cfg, derive_seed(exp, seed_domain::GAINS, idx))?;
    let truth = PositionalParams::from_state(&point.state, anchors, gains)?;
    let params = params_from_state(&point.state, anchors, gains)?;
    let truth_signal = synthesize(&params, anchors.bs_aoa, &profiles, cfg, spec.channel_model)?;

    // Bounds once per profile realization; independent of the noise trials.
    let (bound, bound_failure) = if cfg.noise_variance() > 0.0 {
        let result = fim_channel(
            &params,
            anchors.bs_aoa,
            &profiles,
            cfg,
            cfg.noise_variance(),
            spec.fim_model,
        )
        .and_then(|j_ch| {
            let jac = geometric_jacobian(&truth, anchors)?;
            let j_po = fim_positional(&j_ch, &jac);
            bounds_from_fim(&j_ch, &j_po)
        });
        match result {
            Ok(f) => (Some(BoundRecord::from(&f)), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("noiseless run: bounds undefined".into()))
    };

    Ok(PointRealization {
        sweep_index: point.index,
        label: point.label.clone(),
        config: cfg.clone(),
        state: point.state,
        truth,
        profiles,
        grid,
        truth_signal,
        bound,
        bound_failure,
    })
}

fn run_trial(
    spec: &ExperimentSpec,
    anchors: &Anchors,
    point: &PointRealization,
    profile_idx: usize,
    noise_idx: usize,
) -> TrialRecord {
    let exp = spec.seeds.experiment;
    let noise_seed = derive_seed(
        exp,
        seed_domain::NOISE,
        &[point.sweep_index as u64, profile_idx as u64, noise_idx as u64],
    );
    let y = add_noise(&point.truth_signal, &point.config, noise_seed);

    let ecfg = EstimatorConfig {
        n_v: spec.estimator.n_v,
        n_tau: spec.estimator.n_tau,
        n_nu: spec.estimator.n_nu,
        grid: point.grid.clone(),
        n_iter: spec.estimator.n_iter,
        refine_tol: spec.estimator.refine_tol,
        refine_max_evals: spec.estimator.refine_max_evals,
    };

    let truth = &point.truth;
    let mut record = TrialRecord {
        sweep_index: point.sweep_index,
        sweep_value: point.label.clone(),
        profile_realization: profile_idx,
        noise_realization: noise_idx,
        failed: false,
        failure: point.bound_failure.clone(),
        truth_position: [truth.position.x, truth.position.y, truth.position.z],
        truth_clock_bias: truth.clock_bias,
        truth_v_b: truth.v_b,
        truth_v_r: truth.v_r,
        est_position: None,
        est_clock_bias: None,
        est_v_b: None,
        est_v_r: None,
        est_tau_b: None,
        est_tau_r: None,
        err_position: None,
        err_clock: None,
        err_v_b: None,
        err_v_r: None,
        err_velocity_vector: None,
        bound: point.bound,
    };

    match estimate(&y, &point.profiles, anchors, &point.config, &ecfg) {
        Ok(est) => {
            record.est_position = Some([est.p_hat.x, est.p_hat.y, est.p_hat.z]);
            record.est_clock_bias = Some(est.clock_bias_hat);
            record.est_v_b = Some(est.v_b_hat);
            record.est_v_r = Some(est.v_r_hat);
            record.est_tau_b = Some(est.tau_b_hat);
            record.est_tau_r = Some(est.tau_r_hat);
            record.err_position = Some((est.p_hat - truth.position).norm());
            record.err_clock = Some((est.clock_bias_hat - truth.clock_bias).abs());
            record.err_v_b = Some((est.v_b_hat - truth.v_b).abs());
            record.err_v_r = Some((est.v_r_hat - truth.v_r).abs());
            if point.state.velocity.z == 0.0 {
                if let Ok(v) = velocity_vector_est(est.v_b_hat, est.v_r_hat, &est.p_hat, anchors)
                {
                    record.err_velocity_vector = Some((v - point.state.velocity).norm());
                }
            }
        }
        Err(e) => {
            record.failed = true;
            record.failure = Some(e.to_string());
        }
    }
    record
}

/// Runs the full experiment. The record order is
/// (sweep, profile realization, noise realization), independent of the
/// number of worker threads.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let anchors = spec.anchors.build()?;
    let points = spec.sweep_points()?;

    // Stage 1: per (sweep, profile) realizations in parallel.
    let jobs: Vec<(usize, usize)> = points
        .iter()
        .flat_map(|p| (0..spec.n_profile_realizations).map(move |k| (p.index, k)))
        .collect();
    let realizations: Vec<PointRealization> = jobs
        .par_iter()
        .map(|&(point_idx, profile_idx)| {
            build_point(spec, &anchors, &points[point_idx], profile_idx)
        })
        .collect::<Result<Vec<_>>>()?;

    // Stage 2: noise trials in parallel, order-preserving.
    let trial_jobs: Vec<(usize, usize)> = (0..realizations.len())
        .flat_map(|r| (0..spec.n_noise_realizations).map(move |n| (r, n)))
        .collect();
    let records: Vec<TrialRecord> = trial_jobs
        .par_iter()
        .map(|&(r, noise_idx)| {
            let point = &realizations[r];
            let profile_idx = r % spec.n_profile_realizations;
            run_trial(spec, &anchors, point, profile_idx, noise_idx)
        })
        .collect();
    Ok(records)
}

/// Bounds-only sweep: no estimator, no noise trials; one record per
/// (sweep point, profile realization) carrying only truth and bound fields.
pub fn run_bounds(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let anchors = spec.anchors.build()?;
    let points = spec.sweep_points()?;
    let jobs: Vec<(usize, usize)> = points
        .iter()
        .flat_map(|p| (0..spec.n_profile_realizations).map(move |k| (p.index, k)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(point_idx, profile_idx)| {
            let point = build_point(spec, &anchors, &points[point_idx], profile_idx)?;
            let truth = &point.truth;
            Ok(TrialRecord {
                sweep_index: point.sweep_index,
                sweep_value: point.label.clone(),
                profile_realization: profile_idx,
                noise_realization: 0,
                failed: point.bound.is_none(),
                failure: point.bound_failure.clone(),
                truth_position: [truth.position.x, truth.position.y, truth.position.z],
                truth_clock_bias: truth.clock_bias,
                truth_v_b: truth.v_b,
                truth_v_r: truth.v_r,
                est_position: None,
                est_clock_bias: None,
                est_v_b: None,
                est_v_r: None,
                est_tau_b: None,
                est_tau_r: None,
                err_position: None,
                err_clock: None,
                err_v_b: None,
                err_v_r: None,
                err_velocity_vector: None,
                bound: point.bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(records)
}

/// Aggregated statistics for one sweep value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub sweep_index: usize,
    pub sweep_value: String,
    pub n_trials: usize,
    pub n_failed: usize,
    pub rmse_position: Option<f64>,
    pub rmse_clock: Option<f64>,
    pub rmse_v_b: Option<f64>,
    pub rmse_v_r: Option<f64>,
    pub rmse_velocity_vector: Option<f64>,
    pub mean_position_error: Option<f64>,
    pub median_position_error: Option<f64>,
    pub p90_position_error: Option<f64>,
    pub mean_peb: Option<f64>,
    pub mean_crb_clock: Option<f64>,
    pub mean_crb_v_b: Option<f64>,
    pub mean_crb_v_r: Option<f64>,
    /// Empirical CDF of the position error: (error, fraction <= error).
    pub position_error_cdf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub experiment_seed: u64,
    pub per_sweep: Vec<SweepSummary>,
}

fn rmse(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some((values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt())
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

/// Reduces trial records to per-sweep-value statistics.
pub fn aggregate(name: &str, seed: u64, records: &[TrialRecord]) -> Summary {
    let mut indices: Vec<usize> = records.iter().map(|r| r.sweep_index).collect();
    indices.sort_unstable();
    indices.dedup();

    let per_sweep = indices
        .into_iter()
        .map(|idx| {
            let group: Vec<&TrialRecord> =
                records.iter().filter(|r| r.sweep_index == idx).collect();
            let ok: Vec<&&TrialRecord> = group.iter().filter(|r| !r.failed).collect();
            let collect = |f: fn(&TrialRecord) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|r| f(r)).collect()
            };
            let pos_errors = collect(|r| r.err_position);
            let mut sorted = pos_errors.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            let cdf: Vec<(f64, f64)> = sorted
                .iter()
                .enumerate()
                .map(|(i, &e)| (e, (i + 1) as f64 / n as f64))
                .collect();
            SweepSummary {
                sweep_index: idx,
                sweep_value: group[0].sweep_value.clone(),
                n_trials: group.len(),
                n_failed: group.iter().filter(|r| r.failed).count(),
                rmse_position: rmse(&pos_errors),
                rmse_clock: rmse(&collect(|r| r.err_clock)),
                rmse_v_b: rmse(&collect(|r| r.err_v_b)),
                rmse_v_r: rmse(&collect(|r| r.err_v_r)),
                rmse_velocity_vector: rmse(&collect(|r| r.err_velocity_vector)),
                mean_position_error: mean(&pos_errors),
                median_position_error: percentile(&sorted, 0.5),
                p90_position_error: percentile(&sorted, 0.9),
                mean_peb: mean(&collect(|r| r.bound.map(|b| b.peb))),
                mean_crb_clock: mean(&collect(|r| r.bound.map(|b| b.crb_clock))),
                mean_crb_v_b: mean(&collect(|r| r.bound.map(|b| b.crb_v_b))),
                mean_crb_v_r: mean(&collect(|r| r.bound.map(|b| b.crb_v_r))),
                position_error_cdf: cdf,
            }
        })
        .collect();

    Summary { name: name.to_string(), experiment_seed: seed, per_sweep }
}

/// Record output format for the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &[&str] = &[
    "sweep_index",
    "sweep_value",
    "profile_realization",
    "noise_realization",
    "failed",
    "failure",
    "truth_px",
    "truth_py",
    "truth_pz",
    "truth_clock_bias",
    "truth_v_b",
    "truth_v_r",
    "est_px",
    "est_py",
    "est_pz",
    "est_clock_bias",
    "est_v_b",
    "est_v_r",
    "est_tau_b",
    "est_tau_r",
    "err_position",
    "err_clock",
    "err_v_b",
    "err_v_r",
    "err_velocity_vector",
    "peb",
    "crb_clock",
    "crb_v_b",
    "crb_v_r",
];

fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").unwrap();
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl TrialRecord {
    pub fn csv_row(&self) -> Vec<String> {
        let pos = |i: usize| self.est_position.map(|p| p[i]);
        vec![
            self.sweep_index.to_string(),
            self.sweep_value.clone(),
            self.profile_realization.to_string(),
            self.noise_realization.to_string(),
            self.failed.to_string(),
            self.failure.clone().unwrap_or_default(),
            fmt_f64(self.truth_position[0]),
            fmt_f64(self.truth_position[1]),
            fmt_f64(self.truth_position[2]),
            fmt_f64(self.truth_clock_bias),
            fmt_f64(self.truth_v_b),
            fmt_f64(self.truth_v_r),
            fmt_opt(pos(0)),
            fmt_opt(pos(1)),
            fmt_opt(pos(2)),
            fmt_opt(self.est_clock_bias),
            fmt_opt(self.est_v_b),
            fmt_opt(self.est_v_r),
            fmt_opt(self.est_tau_b),
            fmt_opt(self.est_tau_r),
            fmt_opt(self.err_position),
            fmt_opt(self.err_clock),
            fmt_opt(self.err_v_b),
            fmt_opt(self.err_v_r),
            fmt_opt(self.err_velocity_vector),
            fmt_opt(self.bound.map(|b| b.peb)),
            fmt_opt(self.bound.map(|b| b.crb_clock)),
            fmt_opt(self.bound.map(|b| b.crb_v_b)),
            fmt_opt(self.bound.map(|b| b.crb_v_r)),
        ]
    }
}

/// Writes the record file and summary JSON into `dir`; file names embed the
/// experiment seed. Returns (records path, summary path).
pub fn write_outputs(
    dir: &Path,
    spec: &ExperimentSpec,
    records: &[TrialRecord],
    summary: &Summary,
    format: RecordFormat,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)
        .map_err(|e| HarnessError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let seed = spec.seeds.experiment;
    let records_path = match format {
        RecordFormat::Csv => {
            let path = dir.join(format!("records_{seed}.csv"));
            let mut writer =
                csv::Writer::from_path(&path).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            writer
                .write_record(CSV_HEADER)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            for record in records {
                writer
                    .write_record(record.csv_row())
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            }
            writer.flush().map_err(|e| HarnessError::Runtime(e.to_string()))?;
            path
        }
        RecordFormat::Json => {
            let path = dir.join(format!("records_{seed}.json"));
            let text = serde_json::to_string_pretty(records)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            std::fs::write(&path, text).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            path
        }
    };
    let summary_path = dir.join(format!("summary_{seed}.json"));
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    std::fs::write(&summary_path, text).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok((records_path, summary_path))
}
