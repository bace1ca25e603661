//! Built-in experiment presets: the full-scale reference configuration and
//! the desk-scale variants used by the test suite and the `demo` command.
//!
//! Desk scale shrinks the RIS to 16x16 elements, the band to 256
//! subcarriers, and the burst to 64 symbols. The element count costs about
//! 24 dB of reflected beamforming gain against the full-scale array, so the
//! desk presets raise the transmit power from 20 dBm to 55-65 dBm to keep
//! the estimator in the same high-SNR regime relative to its bounds.

use risloc_core::channel::{ChannelModel, SystemConfig, SPEED_OF_LIGHT};
use risloc_core::ris::ProfileKind;

use crate::{
    AnchorSpec, EstimatorSpec, ExperimentSpec, ProfileSpec, SeedBlock, Sweep, UeSpec,
};

/// Noise PSD including the receiver noise figure: -166 dBm/Hz.
pub fn reference_noise_psd() -> f64 {
    10.0_f64.powf((-166.0 - 30.0) / 10.0)
}

/// Full-scale waveform/RIS constants: 1 cm wavelength, 64x64 half-wavelength
/// RIS, 3000 subcarriers at 120 kHz, 256 symbols with a 0.58 us CP.
pub fn full_scale_config() -> SystemConfig {
    let carrier = SPEED_OF_LIGHT / 0.01;
    SystemConfig {
        carrier_hz: carrier,
        n_subcarriers: 3000,
        subcarrier_spacing_hz: 120.0e3,
        n_symbols: 256,
        cp_duration_s: 0.58e-6,
        ris_rows: 64,
        ris_cols: 64,
        element_spacing_m: 0.005,
        pilot_energy: 0.1 / (3000.0 * 120.0e3),
        noise_psd: reference_noise_psd(),
        light_speed: SPEED_OF_LIGHT,
    }
}

/// Desk-scale waveform/RIS constants: 16x16 RIS, 256 subcarriers, 64
/// symbols; pilot energy is filled in by the harness from the transmit
/// power.
pub fn desk_scale_config() -> SystemConfig {
    let carrier = SPEED_OF_LIGHT / 0.01;
    SystemConfig {
        carrier_hz: carrier,
        n_subcarriers: 256,
        subcarrier_spacing_hz: 120.0e3,
        n_symbols: 64,
        cp_duration_s: 0.58e-6,
        ris_rows: 16,
        ris_cols: 16,
        element_spacing_m: 0.005,
        pilot_energy: 1.0,
        noise_psd: reference_noise_psd(),
        light_speed: SPEED_OF_LIGHT,
    }
}

pub fn reference_anchors() -> AnchorSpec {
    AnchorSpec {
        bs: [5.0, 5.0, 0.0],
        ris: [0.0, 0.0, 0.0],
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    }
}

fn reference_ue() -> UeSpec {
    UeSpec { position: [-10.0, 10.0, -10.0], velocity: [0.0, 0.0, 0.0], clock_bias: 0.0 }
}

/// Full-scale position-arc experiment matching the reference table values;
/// heavy, intended for documentation and spot runs rather than tests.
pub fn full_scale_arc() -> ExperimentSpec {
    ExperimentSpec {
        version: 1,
        name: "full_scale_arc".into(),
        config: full_scale_config(),
        tx_power_dbm: 20.0,
        anchors: reference_anchors(),
        ue: reference_ue(),
        sweep: Sweep::PositionArc {
            r_list: vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            xy_direction: [-1.0, 1.0],
            z: -10.0,
        },
        profiles: ProfileSpec { kind: ProfileKind::Directional, sigma: 1.0 },
        channel_model: ChannelModel::DynamicWb,
        fim_model: ChannelModel::DynamicWb,
        n_profile_realizations: 20,
        n_noise_realizations: 20,
        seeds: SeedBlock { experiment: 1 },
        estimator: EstimatorSpec::default(),
    }
}

/// Desk-scale arc: narrowband channel, directional profiles, high SNR.
pub fn desk_arc() -> ExperimentSpec {
    ExperimentSpec {
        version: 1,
        name: "desk_arc".into(),
        config: desk_scale_config(),
        tx_power_dbm: 60.0,
        anchors: reference_anchors(),
        ue: reference_ue(),
        sweep: Sweep::PositionArc {
            r_list: vec![2.0, 3.5, 5.0, 7.5, 10.0],
            xy_direction: [-1.0, 1.0],
            z: -10.0,
        },
        profiles: ProfileSpec { kind: ProfileKind::Directional, sigma: 1.0 },
        channel_model: ChannelModel::DynamicNb,
        fim_model: ChannelModel::DynamicNb,
        n_profile_realizations: 20,
        n_noise_realizations: 5,
        seeds: SeedBlock { experiment: 7},
        estimator: EstimatorSpec::default(),
    }
}

/// Desk-scale mobility comparison: static UE against a fast diagonal mover.
pub fn desk_mobility() -> ExperimentSpec {
    let mut config = desk_scale_config();
    config.n_symbols = 128;
    ExperimentSpec {
        version: 1,
        name: "desk_mobility".into(),
        config,
        tx_power_dbm: 65.0,
        anchors: reference_anchors(),
        ue: reference_ue(),
        sweep: Sweep::Velocity { v_list: vec![[0.0, 0.0, 0.0], [-30.0, 30.0, 0.0]] },
        profiles: ProfileSpec { kind: ProfileKind::Directional, sigma: 1.0 },
        channel_model: ChannelModel::DynamicNb,
        fim_model: ChannelModel::DynamicNb,
        n_profile_realizations: 20,
        n_noise_realizations: 5,
        seeds: SeedBlock { experiment: 11 },
        estimator: EstimatorSpec::default(),
    }
}

/// Desk-scale bandwidth sweep through the wideband channel with the
/// narrowband estimator; the geometry keeps the aspect angle large so the
/// beam-squint mismatch grows with bandwidth.
pub fn desk_bandwidth() -> ExperimentSpec {
    let mut config = desk_scale_config();
    config.n_symbols = 64;
    ExperimentSpec {
        version: 1,
        name: "desk_bandwidth".into(),
        config,
        // High power so the bandwidth-independent noise error sits well
        // below the beam-squint mismatch bias at the upper sweep points.
        tx_power_dbm: 70.0,
        anchors: reference_anchors(),
        ue: UeSpec {
            position: [-5.0 / std::f64::consts::SQRT_2, 5.0 / std::f64::consts::SQRT_2, -10.0],
            velocity: [0.0, 0.0, 0.0],
            clock_bias: 0.0,
        },
        sweep: Sweep::Bandwidth {
            b_list: vec![92.16e6, 245.76e6, 491.52e6, 983.04e6],
        },
        profiles: ProfileSpec { kind: ProfileKind::Directional, sigma: 1.0 },
        channel_model: ChannelModel::DynamicWb,
        fim_model: ChannelModel::DynamicWb,
        n_profile_realizations: 8,
        n_noise_realizations: 5,
        seeds: SeedBlock { experiment: 13 },
        estimator: EstimatorSpec::default(),
    }
}

/// The `demo` preset: a three-radius desk arc small enough to finish in
/// well under two minutes.
pub fn demo() -> ExperimentSpec {
    let mut spec = desk_arc();
    spec.name = "demo".into();
    spec.sweep = Sweep::PositionArc {
        r_list: vec![2.0, 5.0, 10.0],
        xy_direction: [-1.0, 1.0],
        z: -10.0,
    };
    spec.n_profile_realizations = 3;
    spec.n_noise_realizations = 3;
    spec
}
