//! Fisher information for the channel parameters, its transformation to the
//! positional parameters through the geometric Jacobian, and the derived
//! error bounds (PEB and per-parameter CRBs).
//!
//! Derivative matrices follow the analytic forms of the signal model; each
//! one is validated against central finite differences of the synthesizer
//! in the tests. Parameter order everywhere:
//! `[tau_b, tau_r, az, el, v_b, v_r, Re gb, Im gb, Re gr, Im gr]`.

use nalgebra::SMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::channel::{self, ChannelModel, SystemConfig};
use crate::error::{Error, Result};
use crate::geometry::{AnglePair, ChannelParams, Mat10};
use crate::ris::RisProfileSet;
use crate::spectrum;

/// Channel/positional FIMs with the bounds read off the inverse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FimResult {
    /// FIM over the channel parameters.
    pub j_ch: Mat10,
    /// FIM over the positional parameters.
    pub j_po: Mat10,
    /// Position error bound: sqrt of the trace of the 3x3 position block of
    /// the inverse positional FIM, meters.
    pub peb: f64,
    /// CRB of the clock bias, seconds^2.
    pub crb_clock: f64,
    /// CRB of the radial velocities, (m/s)^2.
    pub crb_v_b: f64,
    pub crb_v_r: f64,
    /// Condition numbers of (J_ch, J_po).
    pub condition_numbers: (f64, f64),
}

const MAX_CONDITION: f64 = 1e14;

/// Compensated (Kahan) accumulator for the long FIM sums.
#[derive(Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

fn require_dynamic(model: ChannelModel) -> Result<bool> {
    match model {
        ChannelModel::DynamicNb => Ok(false),
        ChannelModel::DynamicWb => Ok(true),
        ChannelModel::StaticNb => Err(Error::InvalidConfig(
            "FIM derivatives are defined for the dynamic models".into(),
        )),
    }
}

/// `dD/dtau`: elementwise derivative of the delay steering matrix.
fn delay_matrix_derivative(tau: f64, cfg: &SystemConfig) -> Array2<Complex64> {
    let df = cfg.subcarrier_spacing_hz;
    Array2::from_shape_fn((cfg.n_subcarriers, cfg.n_symbols), |(n, _)| {
        let w = TAU * n as f64 * df;
        Complex64::new(0.0, -w) * Complex64::from_polar(1.0, -w * tau)
    })
}

/// `dC/dv`: elementwise derivative of the slow-time Doppler matrix.
fn slow_time_derivative(v: f64, cfg: &SystemConfig, wideband: bool) -> Array2<Complex64> {
    let t_sym = cfg.total_symbol_duration();
    let lambda = cfg.wavelength();
    Array2::from_shape_fn((cfg.n_subcarriers, cfg.n_symbols), |(n, l)| {
        let lam = if wideband { cfg.wavelength_at(n) } else { lambda };
        let w = TAU * l as f64 * t_sym / lam;
        Complex64::new(0.0, w) * Complex64::from_polar(1.0, w * v)
    })
}

/// Diagonal of `dE/dv`.
fn fast_time_derivative_diag(v: f64, cfg: &SystemConfig) -> Vec<Complex64> {
    let n_sc = cfg.n_subcarriers;
    let t_o = cfg.symbol_duration();
    let lambda = cfg.wavelength();
    (0..n_sc)
        .map(|n| {
            let w = TAU * t_o * n as f64 / (n_sc as f64 * lambda);
            Complex64::new(0.0, w) * Complex64::from_polar(1.0, w * v)
        })
        .collect()
}

/// RIS response with one steering vector replaced by its angle derivative:
/// `[Ad]_{n,l} = a_n(theta)^T diag(gamma_l) (a_n(phi) o (j dk_n/daxis . q))`.
fn ris_response_angle_derivative(
    theta: AnglePair,
    phi: AnglePair,
    azimuth_axis: bool,
    profiles: &RisProfileSet,
    cfg: &SystemConfig,
    wideband: bool,
) -> Array2<Complex64> {
    let n = cfg.n_subcarriers;
    let l = cfg.n_symbols;
    let dots_theta = channel::direction_element_dots(theta, cfg);
    let dots_phi = channel::direction_element_dots(phi, cfg);
    let combined: Vec<f64> = dots_theta
        .iter()
        .zip(dots_phi.iter())
        .map(|(a, b)| a + b)
        .collect();

    // Direction derivative of the unit wavenumber direction of phi.
    let (az, el) = (phi.az, phi.el);
    let u = if azimuth_axis {
        [-el.sin() * az.sin(), el.sin() * az.cos(), 0.0]
    } else {
        [el.cos() * az.cos(), el.cos() * az.sin(), -el.sin()]
    };
    let q = cfg.element_positions();
    let weights: Vec<f64> = (0..cfg.n_elements())
        .map(|m| u[0] * q[(0, m)] + u[1] * q[(1, m)] + u[2] * q[(2, m)])
        .collect();

    let row_for_lambda = |lambda: f64, row: &mut [Complex64]| {
        let scale = Complex64::new(0.0, TAU / lambda);
        let weighted: Vec<Complex64> = combined
            .iter()
            .zip(weights.iter())
            .map(|(&dd, &w)| Complex64::from_polar(1.0, TAU / lambda * dd) * w)
            .collect();
        for (k, beam) in profiles.beams().iter().enumerate() {
            let val: Complex64 =
                weighted.iter().zip(beam.iter()).map(|(p, g)| p * g).sum::<Complex64>() * scale;
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
    a
}

fn mixed(mut x: Array2<Complex64>, v: f64, cfg: &SystemConfig) -> Array2<Complex64> {
    channel::apply_fast_time_mix(&mut x, v, cfg);
    x
}

fn mixed_derivative(mut x: Array2<Complex64>, v: f64, cfg: &SystemConfig) -> Array2<Complex64> {
    let diag = fast_time_derivative_diag(v, cfg);
    spectrum::doppler_mix_columns(&mut x, &diag);
    x
}

/// The ten derivative matrices `dM/dzeta` of the noiseless signal, in the
/// canonical parameter order.
pub fn channel_derivatives(
    params: &ChannelParams,
    theta: AnglePair,
    profiles: &RisProfileSet,
    cfg: &SystemConfig,
    model: ChannelModel,
) -> Result<Vec<Array2<Complex64>>> {
    let wideband = require_dynamic(model)?;
    cfg.validate()?;
    let (g_b, g_r) = (params.g_b, params.g_r);
    let (v_b, v_r) = (params.v_b, params.v_r);

    let d_b = channel::delay_matrix(params.tau_b, cfg);
    let d_r = channel::delay_matrix(params.tau_r, cfg);
    let c_b = channel::slow_time_doppler(v_b, cfg, wideband);
    let c_r = channel::slow_time_doppler(v_r, cfg, wideband);
    let a = channel::ris_response_matrix(theta, params.phi, profiles, cfg, wideband)?;

    // Direct-path base factor D(tau_b) o C(v_b) and the reflected
    // counterpart D(tau_r) o A o C(v_r).
    let base_b = &d_b * &c_b;
    let base_r = &(&d_r * &a) * &c_r;

    let j = Complex64::new(0.0, 1.0);
    let mut out = Vec::with_capacity(10);

    // tau_b
    let dd_b = delay_matrix_derivative(params.tau_b, cfg);
    out.push(mixed(&dd_b * &c_b, v_b, cfg).mapv(|z| z * g_b));
    // tau_r
    let dd_r = delay_matrix_derivative(params.tau_r, cfg);
    out.push(mixed(&(&dd_r * &a) * &c_r, v_r, cfg).mapv(|z| z * g_r));
    // azimuth, elevation
    for azimuth_axis in [true, false] {
        let a_deriv =
            ris_response_angle_derivative(theta, params.phi, azimuth_axis, profiles, cfg, wideband);
        out.push(mixed(&(&d_r * &a_deriv) * &c_r, v_r, cfg).mapv(|z| z * g_r));
    }
    // v_b: product rule over E(v) and C(v).
    let cdot_b = slow_time_derivative(v_b, cfg, wideband);
    let term1 = mixed_derivative(base_b.clone(), v_b, cfg);
    let term2 = mixed(&d_b * &cdot_b, v_b, cfg);
    out.push((term1 + term2).mapv(|z| z * g_b));
    // v_r
    let cdot_r = slow_time_derivative(v_r, cfg, wideband);
    let term1 = mixed_derivative(base_r.clone(), v_r, cfg);
    let term2 = mixed(&(&d_r * &a) * &cdot_r, v_r, cfg);
    out.push((term1 + term2).mapv(|z| z * g_r));
    // gains
    let re_gb = mixed(base_b, v_b, cfg);
    out.push(re_gb.clone());
    out.push(re_gb.mapv(|z| z * j));
    let re_gr = mixed(base_r, v_r, cfg);
    out.push(re_gr.clone());
    out.push(re_gr.mapv(|z| z * j));

    Ok(out)
}

/// Channel-parameter FIM:
/// `J[i][k] = (2 / sigma^2) sum_{n,l} Re(dM_i o conj(dM_k))`, accumulated
/// with compensated summation.
pub fn fim_channel(
    params: &ChannelParams,
    theta: AnglePair,
    profiles: &RisProfileSet,
    cfg: &SystemConfig,
    noise_var: f64,
    model: ChannelModel,
) -> Result<Mat10> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    let derivs = channel_derivatives(params, theta, profiles, cfg, model)?;
    Ok(fim_from_derivatives(&derivs, noise_var))
}

/// FIM assembly from precomputed derivative matrices.
pub fn fim_from_derivatives(derivs: &[Array2<Complex64>], noise_var: f64) -> Mat10 {
    let scale = 2.0 / noise_var;
    let mut j = Mat10::zeros();
    for i in 0..10 {
        for k in i..10 {
            let mut acc = KahanSum::default();
            for (a, b) in derivs[i].iter().zip(derivs[k].iter()) {
                acc.add(a.re * b.re + a.im * b.im);
            }
            let val = scale * acc.sum;
            j[(i, k)] = val;
            j[(k, i)] = val;
        }
    }
    j
}

/// Positional FIM by congruence with the geometric Jacobian:
/// `J_po = J^T J_ch J`.
pub fn fim_positional(j_ch: &Mat10, jacobian: &Mat10) -> Mat10 {
    jacobian.transpose() * j_ch * jacobian
}

/// Jacobi-normalizes an SPD candidate to unit diagonal and inverts it
/// through its eigendecomposition. SI-unit FIMs mix delays in seconds with
/// angles in radians, which makes the raw condition number astronomical for
/// purely dimensional reasons; after normalization the condition number
/// measures actual parameter coupling. Returns the inverse of the original
/// matrix and the normalized condition number.
fn normalized_inverse(m: &Mat10) -> Result<(Mat10, f64)> {
    let mut scale = [0.0f64; 10];
    for i in 0..10 {
        let d = m[(i, i)];
        if !(d > 0.0) {
            return Err(Error::SingularFim(f64::INFINITY));
        }
        scale[i] = d.sqrt();
    }
    let mut normalized = *m;
    for i in 0..10 {
        for k in 0..10 {
            normalized[(i, k)] /= scale[i] * scale[k];
        }
    }
    let eig = normalized.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let cond = if min_eig <= 0.0 { f64::INFINITY } else { max_eig / min_eig };
    if !(min_eig > 0.0) || cond > MAX_CONDITION {
        return Err(Error::SingularFim(cond));
    }
    let inv_diag = SMatrix::<f64, 10, 10>::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e));
    let mut inverse = eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    for i in 0..10 {
        for k in 0..10 {
            inverse[(i, k)] /= scale[i] * scale[k];
        }
    }
    Ok((inverse, cond))
}

fn condition_number(m: &Mat10) -> f64 {
    match normalized_inverse(m) {
        Ok((_, cond)) => cond,
        Err(_) => f64::INFINITY,
    }
}

/// Inverts the positional FIM and reads off the bounds. Refuses matrices
/// that are not numerically positive definite or whose normalized condition
/// number exceeds 1e14.
pub fn bounds_from_fim(j_ch: &Mat10, j_po: &Mat10) -> Result<FimResult> {
    let (inverse, cond) = normalized_inverse(j_po)?;
    let peb = (inverse[(0, 0)] + inverse[(1, 1)] + inverse[(2, 2)]).sqrt();
    Ok(FimResult {
        j_ch: *j_ch,
        j_po: *j_po,
        peb,
        crb_clock: inverse[(3, 3)],
        crb_v_b: inverse[(4, 4)],
        crb_v_r: inverse[(5, 5)],
        condition_numbers: (condition_number(j_ch), cond),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize, SystemConfig, SPEED_OF_LIGHT};
    use crate::geometry::{
        compute_aod, geometric_jacobian, positional_to_channel, Anchors, PositionalParams,
    };
    use crate::ris::{directional_profiles, random_profiles};
    use nalgebra::{Matrix3, Vector3};

    fn tiny_config() -> SystemConfig {
        SystemConfig {
            carrier_hz: 30.0e9,
            n_subcarriers: 8,
            subcarrier_spacing_hz: 120.0e3,
            n_symbols: 4,
            cp_duration_s: 0.58e-6,
            ris_rows: 2,
            ris_cols: 2,
            element_spacing_m: 0.005,
            pilot_energy: 1.0,
            noise_psd: 0.0,
            light_speed: SPEED_OF_LIGHT,
        }
    }

    fn identity_anchors() -> Anchors {
        Anchors::new(Vector3::new(5.0, 5.0, 0.0), Vector3::zeros(), Matrix3::identity()).unwrap()
    }

    fn test_params() -> ChannelParams {
        ChannelParams {
            tau_b: 62.36e-9,
            tau_r: 95.4e-9,
            phi: AnglePair::new(2.356194490192345, 2.186276035465284),
            v_b: -32.07,
            v_r: -17.5,
            g_b: Complex64::new(0.8, -0.3),
            g_r: Complex64::new(0.12, 0.21),
        }
    }

    /// Central finite differences of the synthesizer along one channel
    /// parameter.
    fn fd_derivative(
        params: &ChannelParams,
        theta: AnglePair,
        profiles: &RisProfileSet,
        cfg: &SystemConfig,
        model: ChannelModel,
        index: usize,
    ) -> Array2<Complex64> {
        let scales = [1e-9, 1e-9, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let x0 = params.to_vector();
        let h = 1e-6 * x0[index].abs().max(scales[index]);
        let mut hi = x0;
        let mut lo = x0;
        hi[index] += h;
        lo[index] -= h;
        let y_hi = synthesize(&ChannelParams::from_vector(&hi), theta, profiles, cfg, model)
            .unwrap();
        let y_lo = synthesize(&ChannelParams::from_vector(&lo), theta, profiles, cfg, model)
            .unwrap();
        (y_hi - y_lo).mapv(|z| z / (2.0 * h))
    }

    fn max_rel_error(analytic: &Array2<Complex64>, numeric: &Array2<Complex64>) -> f64 {
        let scale = numeric
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max)
            .max(analytic.iter().map(|z| z.norm()).fold(0.0f64, f64::max));
        if scale == 0.0 {
            return 0.0;
        }
        analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, b)| (a - b).norm() / scale)
            .fold(0.0f64, f64::max)
    }

    #[test]
    fn derivatives_match_finite_differences_both_models() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 31).unwrap();
        let theta = identity_anchors().bs_aoa;
        let params = test_params();
        for model in [ChannelModel::DynamicNb, ChannelModel::DynamicWb] {
            let analytic = channel_derivatives(&params, theta, &profiles, &cfg, model).unwrap();
            for (idx, a) in analytic.iter().enumerate() {
                let numeric = fd_derivative(&params, theta, &profiles, &cfg, model, idx);
                let err = max_rel_error(a, &numeric);
                assert!(err < 1e-5, "model {model:?} param {idx}: rel error {err}");
            }
        }
    }

    #[test]
    fn imaginary_gain_derivative_is_j_times_real_one() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 3).unwrap();
        let theta = identity_anchors().bs_aoa;
        let derivs =
            channel_derivatives(&test_params(), theta, &profiles, &cfg, ChannelModel::DynamicWb)
                .unwrap();
        let j = Complex64::new(0.0, 1.0);
        for (re_idx, im_idx) in [(6, 7), (8, 9)] {
            for (a, b) in derivs[re_idx].iter().zip(derivs[im_idx].iter()) {
                assert_eq!(a * j, *b);
            }
        }
    }

    #[test]
    fn delay_derivative_first_row_is_zero() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 3).unwrap();
        let theta = identity_anchors().bs_aoa;
        let derivs =
            channel_derivatives(&test_params(), theta, &profiles, &cfg, ChannelModel::DynamicNb)
                .unwrap();
        // The n = 0 factor of dD/dtau vanishes; with v_b = 0 (no fast-time
        // mixing) the first row of dM/dtau_b is exactly zero.
        let mut static_params = test_params();
        static_params.v_b = 0.0;
        let derivs0 =
            channel_derivatives(&static_params, theta, &profiles, &cfg, ChannelModel::DynamicNb)
                .unwrap();
        for l in 0..cfg.n_symbols {
            assert_eq!(derivs0[0][(0, l)], Complex64::default());
        }
        // With mixing the row is no longer zero but stays finite.
        assert!(derivs[0].iter().all(|z| z.is_finite()));
    }

    #[test]
    fn fim_scales_inversely_with_noise_variance() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 5).unwrap();
        let theta = identity_anchors().bs_aoa;
        let params = test_params();
        let j1 =
            fim_channel(&params, theta, &profiles, &cfg, 1.0e-3, ChannelModel::DynamicWb).unwrap();
        let j4 =
            fim_channel(&params, theta, &profiles, &cfg, 4.0e-3, ChannelModel::DynamicWb).unwrap();
        for i in 0..10 {
            for k in 0..10 {
                assert!((j1[(i, k)] - 4.0 * j4[(i, k)]).abs() <= 1e-9 * j1[(i, k)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_gains_kill_information_rows() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 5).unwrap();
        let theta = identity_anchors().bs_aoa;
        let mut params = test_params();
        params.g_b = Complex64::default();
        params.g_r = Complex64::default();
        let j = fim_channel(&params, theta, &profiles, &cfg, 1e-3, ChannelModel::DynamicWb)
            .unwrap();
        // Delay, angle, velocity rows are proportional to the gains.
        for idx in 0..6 {
            for k in 0..10 {
                assert_eq!(j[(idx, k)], 0.0);
            }
        }
        assert!(bounds_from_fim(&j, &j).is_err());
    }

    #[test]
    fn fim_matches_numerical_fim_on_tiny_instance() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 7).unwrap();
        let theta = identity_anchors().bs_aoa;
        let params = test_params();
        let noise_var = 2.3e-3;
        let model = ChannelModel::DynamicWb;
        let analytic = fim_channel(&params, theta, &profiles, &cfg, noise_var, model).unwrap();
        let fd: Vec<Array2<Complex64>> = (0..10)
            .map(|i| fd_derivative(&params, theta, &profiles, &cfg, model, i))
            .collect();
        let numeric = fim_from_derivatives(&fd, noise_var);
        let num = (analytic - numeric).norm();
        let den = analytic.norm();
        assert!(num / den < 1e-4, "relative Frobenius error {}", num / den);
    }

    #[test]
    fn fim_positional_identity_and_psd() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 7).unwrap();
        let theta = identity_anchors().bs_aoa;
        let j_ch =
            fim_channel(&test_params(), theta, &profiles, &cfg, 1e-3, ChannelModel::DynamicWb)
                .unwrap();
        let identity = Mat10::identity();
        assert_eq!(fim_positional(&j_ch, &identity), j_ch);

        // Congruence preserves symmetry and positive semidefiniteness.
        let mut jac = Mat10::zeros();
        for i in 0..10 {
            for k in 0..10 {
                jac[(i, k)] = ((i * 17 + k * 3) % 7) as f64 / 7.0 - 0.4;
            }
        }
        let j_po = fim_positional(&j_ch, &jac);
        let sym_err = (j_po - j_po.transpose()).norm() / j_po.norm();
        assert!(sym_err < 1e-9);
        let eigs = j_po.symmetric_eigenvalues();
        let max_eig = eigs.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(eigs.iter().all(|&e| e >= -1e-9 * max_eig));
    }

    /// Positional parameters and anchors used by the positional-FIM and
    /// regression tests.
    fn positional_setup() -> (Anchors, PositionalParams) {
        let anchors = identity_anchors();
        let po = PositionalParams {
            position: Vector3::new(-10.0, 10.0, -10.0),
            clock_bias: 3.3e-8,
            v_b: -32.07,
            v_r: -17.5,
            g_b: Complex64::new(0.8, -0.3),
            g_r: Complex64::new(0.12, 0.21),
        };
        (anchors, po)
    }

    #[test]
    fn positional_fim_matches_direct_finite_difference_chain() {
        // Bypass the chain rule: differentiate the synthesizer directly with
        // respect to the positional parameters and assemble the FIM.
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 9).unwrap();
        let (anchors, po) = positional_setup();
        let theta = anchors.bs_aoa;
        let model = ChannelModel::DynamicWb;
        let noise_var = 1.7e-3;

        let params = positional_to_channel(&po, &anchors).unwrap();
        let j_ch = fim_channel(&params, theta, &profiles, &cfg, noise_var, model).unwrap();
        let jac = geometric_jacobian(&po, &anchors).unwrap();
        let j_po = fim_positional(&j_ch, &jac);

        let scales = [1.0, 1.0, 1.0, 1e-9, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let x0 = po.to_vector();
        let fd: Vec<Array2<Complex64>> = (0..10)
            .map(|i| {
                let h = 1e-5 * x0[i].abs().max(scales[i]);
                let mut hi = x0;
                let mut lo = x0;
                hi[i] += h;
                lo[i] -= h;
                let p_hi =
                    positional_to_channel(&PositionalParams::from_vector(&hi), &anchors).unwrap();
                let p_lo =
                    positional_to_channel(&PositionalParams::from_vector(&lo), &anchors).unwrap();
                let y_hi = synthesize(&p_hi, theta, &profiles, &cfg, model).unwrap();
                let y_lo = synthesize(&p_lo, theta, &profiles, &cfg, model).unwrap();
                (y_hi - y_lo).mapv(|z| z / (2.0 * h))
            })
            .collect();
        let numeric = fim_from_derivatives(&fd, noise_var);
        let num = (j_po - numeric).norm();
        let den = j_po.norm();
        assert!(num / den < 1e-4, "relative error {}", num / den);
    }

    #[test]
    fn bounds_closed_forms() {
        // Diagonal positional FIM diag(a, a, a, ...) gives peb = sqrt(3/a).
        let a = 2.5e4;
        let j_po = Mat10::from_diagonal_element(a);
        let result = bounds_from_fim(&j_po, &j_po).unwrap();
        assert!((result.peb - (3.0 / a).sqrt()).abs() < 1e-12);
        assert!((result.crb_clock - 1.0 / a).abs() < 1e-12);

        // Quadrupling the noise variance doubles the PEB through the chain.
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 9).unwrap();
        let (anchors, po) = positional_setup();
        let params = positional_to_channel(&po, &anchors).unwrap();
        let jac = geometric_jacobian(&po, &anchors).unwrap();
        let mut pebs = Vec::new();
        for noise_var in [1e-3, 4e-3] {
            let j_ch = fim_channel(
                &params,
                anchors.bs_aoa,
                &profiles,
                &cfg,
                noise_var,
                ChannelModel::DynamicWb,
            )
            .unwrap();
            let j_po = fim_positional(&j_ch, &jac);
            pebs.push(bounds_from_fim(&j_ch, &j_po).unwrap().peb);
        }
        assert!((pebs[1] / pebs[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn desk_scale_peb_regression_anchor() {
        // Directional profiles at the reference geometry; the value pins the
        // full derivative/FIM/Jacobian/inversion chain once computed.
        let mut cfg = tiny_config();
        cfg.n_subcarriers = 64;
        cfg.n_symbols = 16;
        cfg.ris_rows = 8;
        cfg.ris_cols = 8;
        cfg.pilot_energy = 1.0e3;
        cfg.noise_psd = 10f64.powf((-166.0 - 30.0) / 10.0);
        let anchors = identity_anchors();
        let ue = Vector3::new(-10.0, 10.0, -10.0);
        let profiles = directional_profiles(&cfg, &anchors, ue, 1.0, 77).unwrap();
        let state = crate::geometry::UeState {
            position: ue,
            velocity: Vector3::new(-30.0, 30.0, 0.0),
            clock_bias: 3.3e-8,
        };
        let gains = crate::channel::path_gains(&state, &anchors, &cfg, 5).unwrap();
        let po = PositionalParams::from_state(&state, &anchors, gains).unwrap();
        let params = positional_to_channel(&po, &anchors).unwrap();
        let j_ch = fim_channel(
            &params,
            anchors.bs_aoa,
            &profiles,
            &cfg,
            cfg.noise_variance(),
            ChannelModel::DynamicWb,
        )
        .unwrap();
        let jac = geometric_jacobian(&po, &anchors).unwrap();
        let j_po = fim_positional(&j_ch, &jac);
        let result = bounds_from_fim(&j_ch, &j_po).unwrap();

        // Symmetry and PSD invariants.
        let sym = (result.j_ch - result.j_ch.transpose()).norm() / result.j_ch.norm();
        assert!(sym < 1e-9);
        let eigs = result.j_po.symmetric_eigenvalues();
        let max_eig = eigs.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(eigs.iter().all(|&e| e >= -1e-9 * max_eig));

        // Regression anchor (frozen from the first run of this chain).
        let reference = 2.235260972791898e-2;
        assert!(
            (result.peb - reference).abs() / reference < 1e-6,
            "peb {} drifted from anchor {reference}",
            result.peb
        );
    }

    #[test]
    fn peb_never_increases_with_more_symbols() {
        let mut cfg = tiny_config();
        cfg.n_subcarriers = 16;
        cfg.n_symbols = 8;
        let (anchors, po) = positional_setup();
        let params = positional_to_channel(&po, &anchors).unwrap();
        let jac = geometric_jacobian(&po, &anchors).unwrap();
        let profiles = random_profiles(&cfg, 41).unwrap();

        let mut prev_peb = f64::INFINITY;
        let mut current = profiles;
        for step in 0..3 {
            let j_ch = fim_channel(
                &params,
                anchors.bs_aoa,
                &profiles_for(&cfg, &current),
                &cfg,
                1e-6,
                ChannelModel::DynamicWb,
            )
            .unwrap();
            let j_po = fim_positional(&j_ch, &jac);
            let peb = bounds_from_fim(&j_ch, &j_po).unwrap().peb;
            assert!(peb <= prev_peb * (1.0 + 1e-12), "step {step}: {peb} > {prev_peb}");
            prev_peb = peb;

            // Append one more beam pair (two symbols) for the next round.
            let extra = vec![vec![Complex64::new(1.0, 0.0); cfg.n_elements()]];
            current = current.extended(extra).unwrap();
            cfg.n_symbols += 2;
        }
    }

    fn profiles_for(cfg: &SystemConfig, set: &RisProfileSet) -> RisProfileSet {
        assert_eq!(set.n_symbols(), cfg.n_symbols);
        set.clone()
    }

    #[test]
    fn wideband_fim_converges_to_narrowband_with_bandwidth() {
        let mut cfg = tiny_config();
        cfg.n_subcarriers = 16;
        let (anchors, po) = positional_setup();
        let params = positional_to_channel(&po, &anchors).unwrap();
        let mut prev = f64::INFINITY;
        for df in [120.0e3, 12.0e3, 1.2e3] {
            cfg.subcarrier_spacing_hz = df;
            let profiles = random_profiles(&cfg, 13).unwrap();
            let j_wb = fim_channel(
                &params,
                anchors.bs_aoa,
                &profiles,
                &cfg,
                1e-6,
                ChannelModel::DynamicWb,
            )
            .unwrap();
            let j_nb = fim_channel(
                &params,
                anchors.bs_aoa,
                &profiles,
                &cfg,
                1e-6,
                ChannelModel::DynamicNb,
            )
            .unwrap();
            let rel = (j_wb - j_nb).norm() / j_nb.norm();
            assert!(rel < prev, "not decreasing: {rel} after {prev}");
            prev = rel;
        }
    }

    #[test]
    fn static_model_is_rejected() {
        let cfg = tiny_config();
        let profiles = random_profiles(&cfg, 3).unwrap();
        let theta = identity_anchors().bs_aoa;
        assert!(channel_derivatives(
            &test_params(),
            theta,
            &profiles,
            &cfg,
            ChannelModel::StaticNb
        )
        .is_err());
    }

    #[test]
    fn ill_conditioned_fim_is_refused_with_condition_number() {
        // Two almost perfectly correlated parameters survive the diagonal
        // normalization and must still be refused.
        let mut j = Mat10::identity();
        j[(0, 1)] = 1.0 - 1e-16;
        j[(1, 0)] = 1.0 - 1e-16;
        match bounds_from_fim(&j, &j) {
            Err(Error::SingularFim(cond)) => assert!(cond > MAX_CONDITION),
            other => panic!("expected SingularFim, got {other:?}"),
        }
        let _ = compute_aod; // keep the import used in all cfgs
    }
}
