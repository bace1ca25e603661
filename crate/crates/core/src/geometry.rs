//! Anchor geometry and the maps between positional and channel parameters.
//!
//! The positional parameter vector is `[p, dt, v_b, v_r, Re(g_b), Im(g_b),
//! Re(g_r), Im(g_r)]` (10 real entries) and the channel parameter vector is
//! `[tau_b, tau_r, az, el, v_b, v_r, Re(g_b), Im(g_b), Re(g_r), Im(g_r)]`.
//! All positions are in meters, velocities in m/s, delays and clock bias in
//! seconds, angles in radians.

use nalgebra::{Matrix3, SMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 10x10 real matrix used for the Jacobian and both FIMs.
pub type Mat10 = SMatrix<f64, 10, 10>;

/// Azimuth/elevation pair in radians. Elevation is measured from the local
/// +z axis (`el` in `[0, pi]`), azimuth in the local xy-plane (`(-pi, pi]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePair {
    pub az: f64,
    pub el: f64,
}

impl AnglePair {
    pub fn new(az: f64, el: f64) -> Self {
        Self { az, el }
    }

    /// Unit direction vector for these angles:
    /// `[sin(el)cos(az), sin(el)sin(az), cos(el)]`.
    pub fn unit_vector(&self) -> Vector3<f64> {
        Vector3::new(
            self.el.sin() * self.az.cos(),
            self.el.sin() * self.az.sin(),
            self.el.cos(),
        )
    }
}

/// Known infrastructure: BS position, RIS position and orientation.
///
/// The AoA from the BS to the RIS (`bs_aoa`) is derived from the geometry at
/// construction, which keeps it consistent with [`compute_aod`] by
/// construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Anchors {
    pub bs: Vector3<f64>,
    pub ris: Vector3<f64>,
    /// Global-to-RIS-local rotation.
    pub rotation: Matrix3<f64>,
    /// AoA of the BS as seen from the RIS, in the RIS local frame.
    pub bs_aoa: AnglePair,
}

const ROTATION_TOL: f64 = 1e-12;

impl Anchors {
    /// Builds the anchor set, validating the rotation matrix and deriving
    /// the BS AoA.
    pub fn new(bs: Vector3<f64>, ris: Vector3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        let gram = rotation * rotation.transpose() - Matrix3::identity();
        let dev = gram.norm();
        if dev > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "R*R^T deviates from identity by {dev:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRotation(format!("det(R) = {det}, expected +1")));
        }
        let bs_aoa = aod_of_point(&bs, &ris, &rotation)?;
        Ok(Self { bs, ris, rotation, bs_aoa })
    }
}

/// Unknown UE state: position, velocity vector, and clock bias.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UeState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Clock bias of the UE with respect to the BS, in seconds.
    pub clock_bias: f64,
}

/// The 10-entry channel parameter vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Delay of the direct path (includes clock bias), seconds.
    pub tau_b: f64,
    /// Delay of the reflected path (includes clock bias), seconds.
    pub tau_r: f64,
    /// AoD from the RIS toward the UE, in the RIS local frame.
    pub phi: AnglePair,
    /// Radial velocity toward the BS, m/s.
    pub v_b: f64,
    /// Radial velocity toward the RIS, m/s.
    pub v_r: f64,
    /// Complex gain of the direct path.
    pub g_b: Complex64,
    /// Complex gain of the reflected path.
    pub g_r: Complex64,
}

impl ChannelParams {
    /// Packs the parameters in the canonical estimation order
    /// `[tau_b, tau_r, az, el, v_b, v_r, Re gb, Im gb, Re gr, Im gr]`.
    pub fn to_vector(&self) -> [f64; 10] {
        [
            self.tau_b,
            self.tau_r,
            self.phi.az,
            self.phi.el,
            self.v_b,
            self.v_r,
            self.g_b.re,
            self.g_b.im,
            self.g_r.re,
            self.g_r.im,
        ]
    }

    pub fn from_vector(v: &[f64; 10]) -> Self {
        Self {
            tau_b: v[0],
            tau_r: v[1],
            phi: AnglePair::new(v[2], v[3]),
            v_b: v[4],
            v_r: v[5],
            g_b: Complex64::new(v[6], v[7]),
            g_r: Complex64::new(v[8], v[9]),
        }
    }
}

/// Positional parameter vector: position, clock bias, the two radial
/// velocities as free coordinates, and the complex gains.
///
/// This is the coordinate system in which the positional FIM is expressed;
/// the radial velocities are independent coordinates here, not functions of
/// a velocity vector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PositionalParams {
    pub position: Vector3<f64>,
    pub clock_bias: f64,
    pub v_b: f64,
    pub v_r: f64,
    pub g_b: Complex64,
    pub g_r: Complex64,
}

impl PositionalParams {
    pub fn to_vector(&self) -> [f64; 10] {
        [
            self.position.x,
            self.position.y,
            self.position.z,
            self.clock_bias,
            self.v_b,
            self.v_r,
            self.g_b.re,
            self.g_b.im,
            self.g_r.re,
            self.g_r.im,
        ]
    }

    pub fn from_vector(v: &[f64; 10]) -> Self {
        Self {
            position: Vector3::new(v[0], v[1], v[2]),
            clock_bias: v[3],
            v_b: v[4],
            v_r: v[5],
            g_b: Complex64::new(v[6], v[7]),
            g_r: Complex64::new(v[8], v[9]),
        }
    }

    /// Derives the positional parameters of a UE state (radial velocities
    /// computed from the velocity vector).
    pub fn from_state(
        state: &UeState,
        anchors: &Anchors,
        gains: (Complex64, Complex64),
    ) -> Result<Self> {
        Ok(Self {
            position: state.position,
            clock_bias: state.clock_bias,
            v_b: radial_velocity(&state.velocity, &state.position, &anchors.bs)?,
            v_r: radial_velocity(&state.velocity, &state.position, &anchors.ris)?,
            g_b: gains.0,
            g_r: gains.1,
        })
    }
}

fn aod_of_point(p: &Vector3<f64>, ris: &Vector3<f64>, rotation: &Matrix3<f64>) -> Result<AnglePair> {
    let diff = p - ris;
    let norm = diff.norm();
    if norm == 0.0 {
        return Err(Error::CoincidentPoints("point coincides with RIS center"));
    }
    let s = rotation * diff;
    // atan2(0, 0) is defined as 0 so the pole case stays deterministic.
    let az = if s.x == 0.0 && s.y == 0.0 { 0.0 } else { s.y.atan2(s.x) };
    let el = (s.z / norm).clamp(-1.0, 1.0).acos();
    Ok(AnglePair::new(az, el))
}

/// AoD from the RIS toward `p`, in the RIS local frame:
/// `s = R (p - p_r)`, `az = atan2(s_2, s_1)`, `el = acos(s_3 / |s|)`.
pub fn compute_aod(p: &Vector3<f64>, anchors: &Anchors) -> Result<AnglePair> {
    aod_of_point(p, &anchors.ris, &anchors.rotation)
}

/// Radial velocity of a UE at `p` moving with velocity `v`, along the
/// direction toward `target`. Positive when the UE approaches the target.
pub fn radial_velocity(v: &Vector3<f64>, p: &Vector3<f64>, target: &Vector3<f64>) -> Result<f64> {
    let diff = target - p;
    let norm = diff.norm();
    if norm == 0.0 {
        return Err(Error::CoincidentPoints("UE coincides with target"));
    }
    Ok(v.dot(&diff) / norm)
}

/// Channel parameters generated by a UE state: delays from path lengths plus
/// clock bias, AoD from geometry, radial velocities from the velocity
/// vector, gains passed through.
pub fn params_from_state(
    state: &UeState,
    anchors: &Anchors,
    gains: (Complex64, Complex64),
) -> Result<ChannelParams> {
    let po = PositionalParams::from_state(state, anchors, gains)?;
    positional_to_channel(&po, anchors)
}

/// The map from positional to channel parameters underlying the Jacobian of
/// [`geometric_jacobian`]: delays and AoD from the position and clock bias,
/// radial velocities and gains passing through unchanged.
pub fn positional_to_channel(po: &PositionalParams, anchors: &Anchors) -> Result<ChannelParams> {
    let d_bu = (anchors.bs - po.position).norm();
    let d_ru = (anchors.ris - po.position).norm();
    if d_bu == 0.0 || d_ru == 0.0 {
        return Err(Error::CoincidentPoints("UE coincides with an anchor"));
    }
    let c = crate::channel::SPEED_OF_LIGHT;
    let d_br = (anchors.bs - anchors.ris).norm();
    Ok(ChannelParams {
        tau_b: d_bu / c + po.clock_bias,
        tau_r: (d_br + d_ru) / c + po.clock_bias,
        phi: compute_aod(&po.position, anchors)?,
        v_b: po.v_b,
        v_r: po.v_r,
        g_b: po.g_b,
        g_r: po.g_r,
    })
}

/// Jacobian `J[l][s] = d(channel param l) / d(positional param s)`.
///
/// Closed forms: delay rows from the unit vectors away from the anchors,
/// unit clock-bias sensitivity for both delays, AoD rows from the quotient
/// formulas in the RIS local frame, and an identity sub-block for the radial
/// velocities and gain components.
pub fn geometric_jacobian(po: &PositionalParams, anchors: &Anchors) -> Result<Mat10> {
    let p = po.position;
    let d_bu = (p - anchors.bs).norm();
    let d_ru = (p - anchors.ris).norm();
    if d_bu == 0.0 || d_ru == 0.0 {
        return Err(Error::CoincidentPoints("UE coincides with an anchor"));
    }
    let c = crate::channel::SPEED_OF_LIGHT;
    let r = &anchors.rotation;
    let s = r * (p - anchors.ris);
    let s12_sq = s.x * s.x + s.y * s.y;
    if s12_sq == 0.0 {
        return Err(Error::SingularGeometry(
            "UE on the RIS pole axis; azimuth derivative undefined",
        ));
    }

    let mut j = Mat10::zeros();

    // tau_b row: d tau_b / dp = (p - p_b) / (c |p - p_b|), d tau_b / d dt = 1.
    let grad_tau_b = (p - anchors.bs) / (c * d_bu);
    // tau_r row: d tau_r / dp = (p - p_r) / (c |p - p_r|), d tau_r / d dt = 1.
    let grad_tau_r = (p - anchors.ris) / (c * d_ru);
    for k in 0..3 {
        j[(0, k)] = grad_tau_b[k];
        j[(1, k)] = grad_tau_r[k];
    }
    j[(0, 3)] = 1.0;
    j[(1, 3)] = 1.0;

    // Azimuth row: (-s_2 R_1,: + s_1 R_2,:) / (s_1^2 + s_2^2).
    for k in 0..3 {
        j[(2, k)] = (-s.y * r[(0, k)] + s.x * r[(1, k)]) / s12_sq;
    }

    // Elevation row: (s_3 (p - p_r)^T - |s|^2 R_3,:) / (|s|^2 sqrt(s_1^2 + s_2^2)).
    let s_norm_sq = s.norm_squared();
    let denom = s_norm_sq * s12_sq.sqrt();
    let p_rel = p - anchors.ris;
    for k in 0..3 {
        j[(3, k)] = (s.z * p_rel[k] - s_norm_sq * r[(2, k)]) / denom;
    }

    // Radial velocities and gain components map to themselves.
    for k in 4..10 {
        j[(k, k)] = 1.0;
    }
    Ok(j)
}
