//! The low-complexity estimation pipeline: DFT-grid coarse estimators with
//! quasi-Newton refinements, Doppler compensation, successive interference
//! cancellation of the direct path, and the geometric position/clock-bias
//! solve.
//!
//! The pipeline deliberately works with the narrowband signal model even
//! when the data came through the spatial-wideband channel; the resulting
//! mismatch is the object of the wideband-degradation experiments.

use nalgebra::Vector3;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::channel::{self, RxSignal, SystemConfig};
use crate::error::{Error, Result};
use crate::geometry::{Anchors, AnglePair};
use crate::optim;
use crate::ris::{self, AodGrid, RisProfileSet};
use crate::spectrum;

/// Search-grid sizes and refinement knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// DFT size for the coarse direct-path velocity search.
    pub n_v: usize,
    /// IDFT size for the coarse delay search.
    pub n_tau: usize,
    /// DFT size for the velocity axis of the joint angle/velocity search.
    pub n_nu: usize,
    /// Candidate AoD set for the joint search.
    pub grid: AodGrid,
    /// Number of compensate/re-estimate iterations on the reflected path.
    pub n_iter: usize,
    /// Relative objective-improvement stopping threshold for refinements.
    pub refine_tol: f64,
    /// Objective-evaluation budget per refinement.
    pub refine_max_evals: usize,
}

impl EstimatorConfig {
    pub fn new(grid: AodGrid) -> Self {
        Self {
            n_v: 256,
            n_tau: 4096,
            n_nu: 256,
            grid,
            n_iter: 3,
            refine_tol: 1e-12,
            refine_max_evals: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_v < 2 || self.n_tau < 2 || self.n_nu < 2 {
            return Err(Error::InvalidConfig("search grid sizes must be >= 2".into()));
        }
        if self.n_iter == 0 {
            return Err(Error::InvalidConfig("n_iter must be >= 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(())
    }
}

/// Objective value and effort bookkeeping for one pipeline stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageDiag {
    pub stage: String,
    pub objective_start: f64,
    pub objective_end: f64,
    pub evals: usize,
    pub improved: bool,
}

/// Full pipeline output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub p_hat: Vector3<f64>,
    pub clock_bias_hat: f64,
    pub v_b_hat: f64,
    pub v_r_hat: f64,
    pub g_b_hat: Complex64,
    pub tau_b_hat: f64,
    pub tau_r_hat: f64,
    pub phi_hat: AnglePair,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub diagnostics: Vec<StageDiag>,
}

impl EstimationResult {
    /// Copy with the per-stage diagnostics dropped, for compact
    /// serialization.
    pub fn without_diagnostics(&self) -> Self {
        Self { diagnostics: Vec::new(), ..self.clone() }
    }
}

/// Velocity grid step of an `n_bins`-point DFT search over matched columns
/// (spaced two symbols apart): `lambda / (2 T_sym n_bins)`.
pub fn velocity_step(cfg: &SystemConfig, n_bins: usize) -> f64 {
    cfg.wavelength() / (2.0 * cfg.total_symbol_duration() * n_bins as f64)
}

/// Delay grid step of an `n_bins`-point IDFT search: `1 / (df n_bins)`.
pub fn delay_step(cfg: &SystemConfig, n_bins: usize) -> f64 {
    1.0 / (cfg.subcarrier_spacing_hz * n_bins as f64)
}

fn argmax_energy(energy: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in energy.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Coarse direct-path velocity: DFT the matched columns along slow time,
/// pick the strongest bin, unwrap negative frequencies.
pub fn coarse_velocity(z_b: &Array2<Complex64>, cfg: &SystemConfig, ecfg: &EstimatorConfig) -> f64 {
    let n_v = ecfg.n_v;
    let mut energy = vec![0.0f64; n_v];
    let mut row_buf = Vec::with_capacity(z_b.ncols());
    for row in z_b.rows() {
        row_buf.clear();
        row_buf.extend(row.iter().copied());
        let spec = spectrum::rect_dft(&row_buf, n_v);
        for (e, z) in energy.iter_mut().zip(spec.iter()) {
            *e += z.norm_sqr();
        }
    }
    let mut i_m = argmax_energy(&energy) as i64;
    if i_m > (n_v / 2) as i64 {
        i_m -= n_v as i64;
    }
    i_m as f64 * velocity_step(cfg, n_v)
}

fn velocity_objective(z_b: &Array2<Complex64>, h_v: f64, v: f64) -> f64 {
    let half_l = z_b.ncols();
    let factors: Vec<Complex64> = (0..half_l)
        .map(|k| Complex64::from_polar(1.0, -2.0 * k as f64 * h_v * v))
        .collect();
    z_b.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(factors.iter())
                .map(|(z, f)| z * f)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .sum()
}

/// Quasi-Newton maximization of the slow-time correlation around `v0`,
/// bounded to one coarse grid step.
pub fn refine_velocity(
    z_b: &Array2<Complex64>,
    v0: f64,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> (f64, StageDiag) {
    let h_v = TAU * cfg.total_symbol_duration() / cfg.wavelength();
    let step = velocity_step(cfg, ecfg.n_v);
    let mut f = |x: &[f64]| -velocity_objective(z_b, h_v, x[0]);
    let out = optim::minimize_bounded(
        &mut f,
        &[v0],
        &[v0 - step],
        &[v0 + step],
        &[step],
        ecfg.refine_tol,
        ecfg.refine_max_evals,
    );
    let diag = StageDiag {
        stage: "refine_velocity".into(),
        objective_start: -out.initial_objective,
        objective_end: -out.objective,
        evals: out.evals,
        improved: out.improved,
    };
    (out.x[0], diag)
}

/// Coarse delay: IDFT each column over the subcarrier axis, pick the
/// strongest bin. The unambiguous range is `[0, 1/df)`.
pub fn coarse_delay(z_tau: &Array2<Complex64>, cfg: &SystemConfig, ecfg: &EstimatorConfig) -> f64 {
    let n_tau = ecfg.n_tau;
    let mut energy = vec![0.0f64; n_tau];
    let mut col_buf = Vec::with_capacity(z_tau.nrows());
    for col in z_tau.columns() {
        col_buf.clear();
        col_buf.extend(col.iter().copied());
        let spec = spectrum::rect_idft(&col_buf, n_tau);
        for (e, z) in energy.iter_mut().zip(spec.iter()) {
            *e += z.norm_sqr();
        }
    }
    argmax_energy(&energy) as f64 * delay_step(cfg, n_tau)
}

fn delay_objective(z_tau: &Array2<Complex64>, h_tau: f64, tau: f64) -> f64 {
    let n = z_tau.nrows();
    let probe: Vec<Complex64> = (0..n)
        .map(|row| Complex64::from_polar(1.0, row as f64 * h_tau * tau))
        .collect();
    z_tau
        .columns()
        .into_iter()
        .map(|col| {
            col.iter()
                .zip(probe.iter())
                .map(|(z, p)| p * z)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .sum()
}

/// Quasi-Newton maximization of the delay correlation around `tau0`,
/// bounded to one coarse grid step.
pub fn refine_delay(
    z_tau: &Array2<Complex64>,
    tau0: f64,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> (f64, StageDiag) {
    let h_tau = TAU * cfg.subcarrier_spacing_hz;
    let step = delay_step(cfg, ecfg.n_tau);
    let mut f = |x: &[f64]| -delay_objective(z_tau, h_tau, x[0]);
    let out = optim::minimize_bounded(
        &mut f,
        &[tau0],
        &[tau0 - step],
        &[tau0 + step],
        &[step],
        ecfg.refine_tol,
        ecfg.refine_max_evals,
    );
    let diag = StageDiag {
        stage: "refine_delay".into(),
        objective_start: -out.initial_objective,
        objective_end: -out.objective,
        evals: out.evals,
        improved: out.improved,
    };
    (out.x[0], diag)
}

/// Coarse joint angle/velocity estimate for the reflected path.
///
/// For every candidate AoD the normalized template demodulates `z_phi`; a
/// DFT over the result locates the residual Doppler; the global argmax over
/// (velocity bin, candidate) picks the pair. Ties break toward the smaller
/// (candidate, bin) pair.
pub fn coarse_velocity_angle(
    z_phi: &[Complex64],
    profiles: &RisProfileSet,
    theta: AnglePair,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> Result<(AnglePair, f64)> {
    let (phi, v, _) = coarse_velocity_angle_indexed(z_phi, profiles, theta, cfg, ecfg)?;
    Ok((phi, v))
}

pub(crate) fn coarse_velocity_angle_indexed(
    z_phi: &[Complex64],
    profiles: &RisProfileSet,
    theta: AnglePair,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> Result<(AnglePair, f64, usize)> {
    if ecfg.grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if z_phi.len() != profiles.beams().len() {
        return Err(Error::DimensionMismatch(format!(
            "z_phi has {} entries, profiles define {} matched symbols",
            z_phi.len(),
            profiles.beams().len()
        )));
    }
    let templates =
        ris::grid_correlations(profiles, &ecfg.grid, theta, cfg, ecfg.grid.is_full())?;
    let n_nu = ecfg.n_nu;
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    let mut g_s = vec![Complex64::default(); z_phi.len()];
    for (s, template) in templates.rows().into_iter().enumerate() {
        let norm = template.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < f64::MIN_POSITIVE {
            continue;
        }
        for (g, (t, z)) in g_s.iter_mut().zip(template.iter().zip(z_phi.iter())) {
            *g = (t / norm).conj() * z;
        }
        let h_s = spectrum::rect_dft(&g_s, n_nu);
        for (i, h) in h_s.iter().enumerate() {
            let mag = h.norm();
            if mag > best.2 {
                best = (s, i, mag);
            }
        }
    }
    let (s_m, mut i_m, _) = (best.0, best.1 as i64, best.2);
    if i_m > (n_nu / 2) as i64 {
        i_m -= n_nu as i64;
    }
    let v_r = i_m as f64 * velocity_step(cfg, n_nu);
    Ok((ecfg.grid.angles[s_m], v_r, s_m))
}

/// Projection-residual objective of the joint refinement:
/// `|z - (g^H z / g^H g) g|` with `g_k(v, phi) = exp(j 2 k h_v v) *
/// a(theta)^T diag(b_k) a(phi)`.
struct JointObjective<'a> {
    z_phi: &'a [Complex64],
    /// Rows: `a(theta) o b_k` per matched symbol.
    theta_beams: Vec<Vec<Complex64>>,
    cfg: &'a SystemConfig,
    h_v: f64,
}

impl<'a> JointObjective<'a> {
    fn new(
        z_phi: &'a [Complex64],
        profiles: &RisProfileSet,
        theta: AnglePair,
        cfg: &'a SystemConfig,
    ) -> Result<Self> {
        let a_theta = channel::steering_vector(theta, None, cfg)?;
        let theta_beams = profiles
            .beams()
            .iter()
            .map(|beam| {
                a_theta
                    .iter()
                    .zip(beam.iter())
                    .map(|(t, b)| t * b)
                    .collect()
            })
            .collect();
        Ok(Self {
            z_phi,
            theta_beams,
            cfg,
            h_v: TAU * cfg.total_symbol_duration() / cfg.wavelength(),
        })
    }

    fn residual(&self, v: f64, phi: AnglePair) -> f64 {
        let a_phi = match channel::steering_vector(phi, None, self.cfg) {
            Ok(a) => a,
            Err(_) => return f64::INFINITY,
        };
        let mut g = Vec::with_capacity(self.theta_beams.len());
        for (k, tb) in self.theta_beams.iter().enumerate() {
            let corr: Complex64 = tb.iter().zip(a_phi.iter()).map(|(t, a)| t * a).sum();
            g.push(Complex64::from_polar(1.0, 2.0 * k as f64 * self.h_v * v) * corr);
        }
        let gg: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        if gg < f64::MIN_POSITIVE {
            return self.z_phi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        }
        let gz: Complex64 = g
            .iter()
            .zip(self.z_phi.iter())
            .map(|(gk, zk)| gk.conj() * zk)
            .sum();
        let xi = gz / gg;
        self.z_phi
            .iter()
            .zip(g.iter())
            .map(|(zk, gk)| (zk - xi * gk).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Two consecutive quasi-Newton passes on the projection residual: first
/// 1-D in the velocity, then 2-D in the AoD. Returns the refined velocity
/// (an offset when `v0 = 0`) and angle.
pub fn refine_velocity_angle(
    z_phi: &[Complex64],
    v0: f64,
    phi0: AnglePair,
    profiles: &RisProfileSet,
    theta: AnglePair,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> Result<(f64, AnglePair, Vec<StageDiag>)> {
    let objective = JointObjective::new(z_phi, profiles, theta, cfg)?;
    let v_step = velocity_step(cfg, ecfg.n_nu);

    let mut f_v = |x: &[f64]| objective.residual(x[0], phi0);
    let v_out = optim::minimize_bounded(
        &mut f_v,
        &[v0],
        &[v0 - v_step],
        &[v0 + v_step],
        &[v_step],
        ecfg.refine_tol,
        ecfg.refine_max_evals,
    );
    let v_hat = v_out.x[0];

    // Trust region of one local grid cell around the nearest candidate.
    let (cell_az, cell_el) = nearest_cell(&ecfg.grid, phi0);
    let mut f_phi = |x: &[f64]| objective.residual(v_hat, AnglePair::new(x[0], x[1]));
    let phi_out = optim::minimize_bounded(
        &mut f_phi,
        &[phi0.az, phi0.el],
        &[phi0.az - cell_az, (phi0.el - cell_el).max(0.0)],
        &[phi0.az + cell_az, (phi0.el + cell_el).min(PI)],
        &[cell_az, cell_el],
        ecfg.refine_tol,
        ecfg.refine_max_evals,
    );
    // Normalize back into the canonical ranges; the objective is periodic
    // in the azimuth, so this does not change its value.
    let phi_hat = AnglePair::new(wrap_azimuth(phi_out.x[0]), phi_out.x[1].clamp(0.0, PI));

    let diags = vec![
        StageDiag {
            stage: "refine_joint_velocity".into(),
            objective_start: v_out.initial_objective,
            objective_end: v_out.objective,
            evals: v_out.evals,
            improved: v_out.improved,
        },
        StageDiag {
            stage: "refine_joint_angle".into(),
            objective_start: phi_out.initial_objective,
            objective_end: phi_out.objective,
            evals: phi_out.evals,
            improved: phi_out.improved,
        },
    ];
    Ok((v_hat, phi_hat, diags))
}

/// Wraps an azimuth into `(-pi, pi]`.
fn wrap_azimuth(az: f64) -> f64 {
    let wrapped = (-az + PI).rem_euclid(TAU);
    if wrapped == 0.0 { PI } else { PI - wrapped }
}

fn nearest_cell(grid: &AodGrid, phi: AnglePair) -> (f64, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, a) in grid.angles.iter().enumerate() {
        let daz = (a.az - phi.az + PI).rem_euclid(TAU) - PI;
        let d = daz.abs().max((a.el - phi.el).abs());
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    grid.local_cell(best)
}

/// Inverts the narrowband Doppler action at velocity `v`:
/// `(F E(v)^{-1} F^H Y) o C(v)^*`. Exact identity for `v = 0`.
pub fn doppler_compensate(y: &RxSignal, v: f64, cfg: &SystemConfig) -> RxSignal {
    if v == 0.0 {
        return y.clone();
    }
    let mut out = y.clone();
    // E(v)^{-1} = E(-v): unit-modulus diagonal.
    channel::apply_fast_time_mix(&mut out, -v, cfg);
    let c = channel::slow_time_doppler(v, cfg, false);
    out.zip_mut_with(&c, |o, c| *o *= c.conj());
    out
}

/// Divides out the delay phase of each subcarrier row.
fn derotate_delay(z: &Array2<Complex64>, tau: f64, cfg: &SystemConfig) -> Array2<Complex64> {
    let mut out = z.clone();
    let df = cfg.subcarrier_spacing_hz;
    for (row, mut r) in out.rows_mut().into_iter().enumerate() {
        let w = Complex64::from_polar(1.0, TAU * row as f64 * df * tau);
        for v in r.iter_mut() {
            *v *= w;
        }
    }
    out
}

fn column_sums(z: &Array2<Complex64>) -> Array2<Complex64> {
    let n = z.nrows();
    let mut out = Array2::<Complex64>::zeros((n, 1));
    for (row, r) in z.rows().into_iter().enumerate() {
        out[(row, 0)] = r.iter().sum();
    }
    out
}

fn row_sums(z: &Array2<Complex64>) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); z.ncols()];
    for row in z.rows() {
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    out
}

/// Direct-path estimates with per-stage diagnostics.
#[derive(Debug, Clone)]
pub struct DirectEstimate {
    pub g_b: Complex64,
    pub v_b: f64,
    pub tau_b: f64,
    pub stages: Vec<StageDiag>,
}

/// Direct-path parameter estimation: match with `[1, 1]`, estimate and
/// compensate the Doppler, collapse slow time, estimate the delay, and read
/// the gain off the matched correlation.
pub fn direct_par_est(
    y: &RxSignal,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> Result<DirectEstimate> {
    let one = Complex64::new(1.0, 0.0);
    let w_b = [one, one];
    let mut stages = Vec::new();

    let z_b = ris::match_columns(y, w_b)?;
    let v0 = coarse_velocity(&z_b, cfg, ecfg);
    let (v_b, diag) = refine_velocity(&z_b, v0, cfg, ecfg);
    stages.push(StageDiag {
        stage: "coarse_velocity_b".into(),
        objective_start: diag.objective_start,
        objective_end: diag.objective_start,
        evals: ecfg.n_v,
        improved: true,
    });
    stages.push(StageDiag { stage: "refine_velocity_b".into(), ..diag });

    let compensated = doppler_compensate(y, v_b, cfg);
    let z_b_hat = ris::match_columns(&compensated, w_b)?;
    let z_tau = column_sums(&z_b_hat);

    let tau0 = coarse_delay(&z_tau, cfg, ecfg);
    let (tau_b, diag) = refine_delay(&z_tau, tau0, cfg, ecfg);
    stages.push(StageDiag { stage: "refine_delay_b".into(), ..diag });

    // Closed-form gain: d(tau)^H z / (N L).
    let d = channel::delay_column(tau_b, cfg);
    let corr: Complex64 = d
        .iter()
        .zip(z_tau.column(0).iter())
        .map(|(dn, zn)| dn.conj() * zn)
        .sum();
    let g_b = corr / (cfg.n_subcarriers as f64 * cfg.n_symbols as f64);

    Ok(DirectEstimate { g_b, v_b, tau_b, stages })
}

/// Reflected-path estimates with per-stage diagnostics.
#[derive(Debug, Clone)]
pub struct ReflectedEstimate {
    pub phi: AnglePair,
    pub v_r: f64,
    pub tau_r: f64,
    pub stages: Vec<StageDiag>,
    /// Residual-velocity magnitude per iteration.
    pub residual_velocities: Vec<f64>,
}

/// Reflected-path estimation: match with `[1, -1]`, coarse delay and joint
/// angle/velocity, then `n_iter` compensate/re-match/refine rounds that
/// accumulate the residual Doppler.
pub fn reflected_par_est(
    y_r_hat: &RxSignal,
    profiles: &RisProfileSet,
    theta: AnglePair,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> Result<ReflectedEstimate> {
    let one = Complex64::new(1.0, 0.0);
    let w_r = [one, -one];
    let mut stages = Vec::new();
    let mut residual_velocities = Vec::new();

    let z_r = ris::match_columns(y_r_hat, w_r)?;
    let mut tau_r = coarse_delay(&z_r, cfg, ecfg);
    let t_r = derotate_delay(&z_r, tau_r, cfg);
    let z_phi = row_sums(&t_r);
    let (mut phi, mut v_r, _) =
        coarse_velocity_angle_indexed(&z_phi, profiles, theta, cfg, ecfg)?;
    stages.push(StageDiag {
        stage: "coarse_joint_r".into(),
        objective_start: 0.0,
        objective_end: 0.0,
        evals: ecfg.grid.len() * ecfg.n_nu,
        improved: true,
    });

    for iter in 0..ecfg.n_iter {
        let compensated = doppler_compensate(y_r_hat, v_r, cfg);
        let z_rs = ris::match_columns(&compensated, w_r)?;
        let (tau, diag) = refine_delay(&z_rs, tau_r, cfg, ecfg);
        tau_r = tau;
        stages.push(StageDiag { stage: format!("refine_delay_r[{iter}]"), ..diag });

        let t_rs = derotate_delay(&z_rs, tau_r, cfg);
        let z_phi = row_sums(&t_rs);
        let (dv, phi_new, diags) =
            refine_velocity_angle(&z_phi, 0.0, phi, profiles, theta, cfg, ecfg)?;
        for d in diags {
            stages.push(StageDiag { stage: format!("{}[{iter}]", d.stage), ..d });
        }
        phi = phi_new;
        v_r += dv;
        residual_velocities.push(dv.abs());
    }

    Ok(ReflectedEstimate { phi, v_r, tau_r, stages, residual_velocities })
}

/// Geometric position solve from the delay difference and the AoD.
///
/// Builds the local direction `k` from the AoD, then finds the RIS-UE
/// distance minimizing `(d + |p_b - p_r| - |p_b - p(d)| - Delta_r)^2` with
/// `p(d) = p_r + R^T (d k)` by a scan-plus-golden-section search on
/// `(0, 10 |p_b - p_r|]`.
pub fn position_est(
    tau_b_hat: f64,
    tau_r_hat: f64,
    phi_hat: AnglePair,
    anchors: &Anchors,
    cfg: &SystemConfig,
) -> Result<Vector3<f64>> {
    let c = cfg.light_speed;
    let delta_r = c * (tau_r_hat - tau_b_hat).abs();
    let k = phi_hat.unit_vector();
    let dir_global = anchors.rotation.transpose() * k;
    let bs_rel = anchors.bs - anchors.ris;
    let d_br = bs_rel.norm();
    let mut f = |d: f64| {
        let miss = d + d_br - (bs_rel - d * dir_global).norm() - delta_r;
        miss * miss
    };
    let d_max = 10.0 * d_br;
    let (d_m, _) = optim::minimize_scalar_scan(&mut f, d_max, 4096, 1e-9)?;
    Ok(anchors.ris + d_m * dir_global)
}

/// Reconstruction of the narrowband direct-path signal from its estimated
/// parameters, used for the interference cancellation step.
pub fn reconstruct_direct_nb(
    g_b: Complex64,
    tau_b: f64,
    v_b: f64,
    cfg: &SystemConfig,
) -> RxSignal {
    let mut y = channel::delay_matrix(tau_b, cfg);
    if v_b != 0.0 {
        y *= &channel::slow_time_doppler(v_b, cfg, false);
    }
    channel::apply_fast_time_mix(&mut y, v_b, cfg);
    y.mapv_inplace(|z| z * g_b);
    y
}

/// The full pipeline: direct-path estimation, direct-path cancellation,
/// reflected-path estimation, position solve, clock bias.
pub fn estimate(
    y: &RxSignal,
    profiles: &RisProfileSet,
    anchors: &Anchors,
    cfg: &SystemConfig,
    ecfg: &EstimatorConfig,
) -> Result<EstimationResult> {
    cfg.validate()?;
    ecfg.validate()?;
    if y.dim() != (cfg.n_subcarriers, cfg.n_symbols) {
        return Err(Error::DimensionMismatch(format!(
            "signal is {:?}, config wants ({}, {})",
            y.dim(),
            cfg.n_subcarriers,
            cfg.n_symbols
        )));
    }

    let direct = direct_par_est(y, cfg, ecfg)?;
    let y_r_hat = y - &reconstruct_direct_nb(direct.g_b, direct.tau_b, direct.v_b, cfg);
    let reflected = reflected_par_est(&y_r_hat, profiles, anchors.bs_aoa, cfg, ecfg)?;
    let p_hat = position_est(direct.tau_b, reflected.tau_r, reflected.phi, anchors, cfg)?;
    let clock_bias_hat = direct.tau_b - (p_hat - anchors.bs).norm() / cfg.light_speed;

    let mut diagnostics = direct.stages;
    diagnostics.extend(reflected.stages);
    Ok(EstimationResult {
        p_hat,
        clock_bias_hat,
        v_b_hat: direct.v_b,
        v_r_hat: reflected.v_r,
        g_b_hat: direct.g_b,
        tau_b_hat: direct.tau_b,
        tau_r_hat: reflected.tau_r,
        phi_hat: reflected.phi,
        diagnostics,
    })
}

/// Velocity vector from the two radial velocities under the flat-motion
/// assumption `v_z = 0`: solves the 2x2 system of projections onto the
/// horizontal components of the unit vectors toward the anchors.
pub fn velocity_vector_est(
    v_b_hat: f64,
    v_r_hat: f64,
    p_hat: &Vector3<f64>,
    anchors: &Anchors,
) -> Result<Vector3<f64>> {
    let to_bs = anchors.bs - p_hat;
    let to_ris = anchors.ris - p_hat;
    let (n_b, n_r) = (to_bs.norm(), to_ris.norm());
    if n_b == 0.0 || n_r == 0.0 {
        return Err(Error::CoincidentPoints("estimated position coincides with an anchor"));
    }
    let u_b = to_bs / n_b;
    let u_r = to_ris / n_r;
    let det = u_b.x * u_r.y - u_b.y * u_r.x;
    let scale = (u_b.x.hypot(u_b.y)) * (u_r.x.hypot(u_r.y));
    if det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::SingularSystem(
            "horizontal anchor directions are parallel; velocity vector unobservable",
        ));
    }
    let vx = (v_b_hat * u_r.y - v_r_hat * u_b.y) / det;
    let vy = (u_b.x * v_r_hat - u_r.x * v_b_hat) / det;
    Ok(Vector3::new(vx, vy, 0.0))
}
