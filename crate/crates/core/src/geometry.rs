//! Scene geometry, array steering, beamforming and the mapping between
//! physical targets and their channel-domain parameters.
//!
//! Angles are measured from the array boresight (+y axis) towards +x, so a
//! target at range `r` and angle `θ` sits at `q_BS + r·(sin θ, cos θ)`.
//! Delays and Dopplers are round-trip quantities of a mono-static radar.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::expj_cycles;
use crate::error::{Error, Result};
use crate::waveform::WaveformParams;
use crate::ComplexVector;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform linear transmit/receive arrays of a co-located base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayParams {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Carrier frequency in Hz.
    pub carrier_frequency: f64,
    /// Transmit beamformer power.
    pub power: f64,
}

impl Default for ArrayParams {
    /// 16 + 16 half-wavelength elements at 60 GHz, unit power.
    fn default() -> Self {
        Self::half_wavelength(16, 16, 60e9, 1.0)
    }
}

impl ArrayParams {
    pub fn half_wavelength(tx: usize, rx: usize, carrier_frequency: f64, power: f64) -> Self {
        Self {
            tx_antennas: tx,
            rx_antennas: rx,
            spacing: 0.5 * SPEED_OF_LIGHT / carrier_frequency,
            carrier_frequency,
            power,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Inter-element phase step in cycles per unit `sin θ`.
    fn spacing_cycles(&self) -> f64 {
        self.spacing / self.wavelength()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_antennas == 0 || self.rx_antennas == 0 {
            return Err(Error::InvalidParameter("antenna counts must be >= 1".into()));
        }
        for (name, v) in [
            ("element spacing", self.spacing),
            ("carrier frequency", self.carrier_frequency),
            ("beamformer power", self.power),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

fn steering(theta: f64, len: usize, spacing_cycles: f64) -> ComplexVector {
    let step = -spacing_cycles * theta.sin();
    ComplexVector::from_fn(len, |k, _| expj_cycles(step * k as f64))
}

/// Receive steering vector `b(θ)[k] = e^{-j2π(d/λ)k·sin θ}`.
pub fn steering_rx(theta: f64, array: &ArrayParams) -> ComplexVector {
    steering(theta, array.rx_antennas, array.spacing_cycles())
}

/// Receive steering vector truncated to the first `len` elements.
pub fn steering_rx_len(theta: f64, len: usize, array: &ArrayParams) -> ComplexVector {
    steering(theta, len, array.spacing_cycles())
}

/// Transmit steering vector `a(θ)`.
pub fn steering_tx(theta: f64, array: &ArrayParams) -> ComplexVector {
    steering(theta, array.tx_antennas, array.spacing_cycles())
}

/// `∂b(θ)/∂θ`, entrywise `-j2π(d/λ)k·cos θ · b[k]`.
pub fn steering_rx_derivative(theta: f64, array: &ArrayParams) -> ComplexVector {
    let slope = -std::f64::consts::TAU * array.spacing_cycles() * theta.cos();
    let b = steering_rx(theta, array);
    ComplexVector::from_fn(b.len(), |k, _| b[k] * Complex64::new(0.0, slope * k as f64))
}

/// Beamformer `f_T = √(p/N_t)·a(θ̃)`.
pub fn beamformer(theta_tilde: f64, array: &ArrayParams) -> ComplexVector {
    let scale = (array.power / array.tx_antennas as f64).sqrt();
    steering_tx(theta_tilde, array) * Complex64::new(scale, 0.0)
}

/// A point reflector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Position in meters.
    pub position: [f64; 2],
    /// Velocity in m/s.
    pub velocity: [f64; 2],
    /// Complex reflection coefficient.
    pub beta: Complex64,
}

impl Target {
    /// Target at `range` and `angle` from `bs`, moving purely radially with
    /// `radial_speed` (positive = receding).
    pub fn from_polar(bs: [f64; 2], range: f64, angle: f64, radial_speed: f64, beta: Complex64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            position: [bs[0] + range * s, bs[1] + range * c],
            velocity: [radial_speed * s, radial_speed * c],
            beta,
        }
    }
}

/// Channel-domain image of one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// Composite gain `h = α·γ`.
    pub gain: Complex64,
    /// Angle of arrival (= departure), radians from boresight.
    pub theta: f64,
    /// Round-trip delay, seconds.
    pub tau: f64,
    /// Round-trip Doppler shift, Hz.
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bs_position: [f64; 2],
    pub targets: Vec<Target>,
    /// Transmit beam direction `θ̃`, radians.
    pub beam_direction: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::InvalidParameter("scene needs at least one target".into()));
        }
        for t in &self.targets {
            let r = range_of(t.position, self.bs_position);
            if r == 0.0 {
                return Err(Error::TargetAtBaseStation);
            }
            if !r.is_finite() {
                return Err(Error::NonFinite("target position"));
            }
        }
        Ok(())
    }

    /// Midpoint of the true target angles, the default beam direction.
    pub fn midpoint_direction(bs: [f64; 2], targets: &[Target]) -> f64 {
        if targets.is_empty() {
            return 0.0;
        }
        let sum: f64 = targets.iter().map(|t| bearing(t.position, bs)).sum();
        sum / targets.len() as f64
    }
}

fn range_of(q: [f64; 2], bs: [f64; 2]) -> f64 {
    (q[0] - bs[0]).hypot(q[1] - bs[1])
}

fn bearing(q: [f64; 2], bs: [f64; 2]) -> f64 {
    (q[0] - bs[0]).atan2(q[1] - bs[1])
}

/// Angle, delay and Doppler of a target, without the gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub range: f64,
    pub theta: f64,
    pub tau: f64,
    pub nu: f64,
}

/// Geometric channel parameters of `target` seen from `bs`.
///
/// `ν = (2f_c/c0)·(v·u)` with `u` the unit vector from the base station to the
/// target, so a receding target has a positive Doppler shift.
pub fn kinematics(target: &Target, bs: [f64; 2], carrier_frequency: f64) -> Result<Kinematics> {
    let range = range_of(target.position, bs);
    if range == 0.0 {
        return Err(Error::TargetAtBaseStation);
    }
    let theta = bearing(target.position, bs);
    let (s, c) = theta.sin_cos();
    let radial = target.velocity[0] * s + target.velocity[1] * c;
    Ok(Kinematics {
        range,
        theta,
        tau: 2.0 * range / SPEED_OF_LIGHT,
        nu: 2.0 * carrier_frequency / SPEED_OF_LIGHT * radial,
    })
}

/// Two-way beam gain `α = β·a^H(θ)·f_T`.
pub fn path_amplitude(beta: Complex64, theta: f64, scene: &Scene, array: &ArrayParams) -> Complex64 {
    let a = steering_tx(theta, array);
    let f = beamformer(scene.beam_direction, array);
    beta * a.dotc(&f)
}

/// Maps a physical target to its channel parameters, including the
/// delay-dependent chirp phase `γ = e^{j2π c1 M² τ²/T²}` folded into the gain.
pub fn target_to_path(
    target: &Target,
    scene: &Scene,
    array: &ArrayParams,
    waveform: &WaveformParams,
) -> Result<PathParams> {
    let k = kinematics(target, scene.bs_position, array.carrier_frequency)?;
    let max_tau = waveform.cpp_duration();
    if k.tau >= max_tau {
        return Err(Error::TargetOutOfRange {
            range: k.range,
            max_range: SPEED_OF_LIGHT * max_tau / 2.0,
        });
    }
    let alpha = path_amplitude(target.beta, k.theta, scene, array);
    let mf = waveform.subcarriers as f64;
    let u = k.tau / waveform.symbol_duration;
    let gamma = expj_cycles(waveform.c1 * mf * mf * u * u);
    Ok(PathParams {
        gain: alpha * gamma,
        theta: k.theta,
        tau: k.tau,
        nu: k.nu,
    })
}

/// Position from angle and round-trip delay.
pub fn path_to_position(theta: f64, tau: f64, bs: [f64; 2]) -> [f64; 2] {
    let r = SPEED_OF_LIGHT * tau / 2.0;
    let (s, c) = theta.sin_cos();
    [bs[0] + r * s, bs[1] + r * c]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn array() -> ArrayParams {
        ArrayParams::half_wavelength(4, 4, 60e9, 1.0)
    }

    fn scene_with(targets: Vec<Target>) -> Scene {
        Scene {
            bs_position: [0.0, 0.0],
            beam_direction: 0.0,
            targets,
        }
    }

    #[test]
    fn steering_at_boresight_is_all_ones() {
        let b = steering_rx(0.0, &array());
        assert!(b.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn steering_thirty_degrees_half_wavelength() {
        let arr = array();
        for b in [steering_rx(PI / 6.0, &arr), steering_tx(PI / 6.0, &arr)] {
            for k in 0..4 {
                let expected = Complex64::from_polar(1.0, -PI * k as f64 / 2.0);
                assert!((b[k] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn steering_is_odd_under_angle_flip() {
        let arr = ArrayParams::half_wavelength(7, 9, 60e9, 1.0);
        for theta in [0.1, 0.7, -1.2] {
            let (b, bn) = (steering_rx(theta, &arr), steering_rx(-theta, &arr));
            assert!((b.conjugate() - bn).norm() < 1e-13);
            let (a, an) = (steering_tx(theta, &arr), steering_tx(-theta, &arr));
            assert!((a.conjugate() - an).norm() < 1e-13);
            assert_eq!(b[0], Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn beamformer_power() {
        let arr = ArrayParams::half_wavelength(16, 16, 60e9, 1.0);
        let f = beamformer(0.3, &arr);
        assert!(f.iter().all(|v| (v.norm() - 0.25).abs() < 1e-15));
        let arr = ArrayParams { power: 2.5, ..arr };
        for t in [-1.0, 0.0, 0.2, 1.3] {
            assert!((beamformer(t, &arr).norm_squared() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_gain_peaks_at_steered_angle() {
        let arr = ArrayParams::half_wavelength(16, 16, 60e9, 1.0);
        let steer = 40f64.to_radians();
        let f = beamformer(steer, &arr);
        let (best, _) = (0..=1800)
            .map(|i| (-90.0 + 0.1 * i as f64).to_radians())
            .map(|t| (t, steering_tx(t, &arr).dotc(&f).norm()))
            .fold((0.0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        assert!((best - steer).abs() < 0.1f64.to_radians());
    }

    #[test]
    fn delay_and_doppler_of_reference_target() {
        let arr = ArrayParams::default();
        let wf = WaveformParams::default();
        let t = Target::from_polar([0.0, 0.0], 50.0, 30f64.to_radians(), 50.0, Complex64::new(1.0, 0.0));
        let p = target_to_path(&t, &scene_with(vec![t]), &arr, &wf).unwrap();
        assert!((p.tau - 333.564e-9).abs() < 1e-12);
        assert!((p.nu - 20_013.8).abs() < 0.05);
        assert!((p.theta - 30f64.to_radians()).abs() < 1e-14);
    }

    #[test]
    fn doppler_sign_convention() {
        let bs = [0.0, 0.0];
        let beta = Complex64::new(1.0, 0.0);
        let mut receding = Target::from_polar(bs, 40.0, 0.3, 10.0, beta);
        assert!(kinematics(&receding, bs, 60e9).unwrap().nu > 0.0);
        receding.velocity = [-receding.velocity[0], -receding.velocity[1]];
        assert!(kinematics(&receding, bs, 60e9).unwrap().nu < 0.0);
        let crossing = Target {
            position: [0.0, 30.0],
            velocity: [25.0, 0.0],
            beta,
        };
        assert!(kinematics(&crossing, bs, 60e9).unwrap().nu.abs() < 1e-12);
    }

    #[test]
    fn position_from_path() {
        let tau = 2.0 * 50.0 / SPEED_OF_LIGHT;
        let q = path_to_position(30f64.to_radians(), tau, [0.0, 0.0]);
        assert!((q[0] - 25.0).abs() < 1e-12 && (q[1] - 43.30127018922193).abs() < 1e-12);
        let q = path_to_position(0.0, tau, [1.0, 2.0]);
        assert!((q[0] - 1.0).abs() < 1e-15 && (q[1] - 52.0).abs() < 1e-12);
    }

    #[test]
    fn target_beyond_prefix_is_rejected() {
        let arr = ArrayParams::default();
        let wf = WaveformParams::default();
        let t = Target::from_polar([0.0, 0.0], 3000.0, 0.1, 0.0, Complex64::new(1.0, 0.0));
        assert!(matches!(
            target_to_path(&t, &scene_with(vec![t]), &arr, &wf),
            Err(Error::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn gain_carries_chirp_phase() {
        let arr = ArrayParams::default();
        let wf = WaveformParams::default().with_chirp(0.03, 0.0);
        let t = Target::from_polar([0.0, 0.0], 80.0, 0.2, 0.0, Complex64::new(1.0, 0.0));
        let scene = Scene {
            bs_position: [0.0, 0.0],
            beam_direction: 0.2,
            targets: vec![t],
        };
        let p = target_to_path(&t, &scene, &arr, &wf).unwrap();
        // steered straight at the target: α = √(p·N_t)
        assert!((p.gain.norm() - 4.0).abs() < 1e-12);
        let u = p.tau / wf.symbol_duration;
        let gamma = 2.0 * PI * 0.03 * 64.0 * 64.0 * u * u;
        assert!((p.gain.arg() - gamma).abs() < 1e-9);
    }
}
