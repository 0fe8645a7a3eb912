#![allow(dead_code)]

use aftmc::geometry::{ArrayParams, PathParams, Scene, Target};
use aftmc::waveform::WaveformParams;
use num_complex::Complex64;
use rand::{Rng, RngExt};

pub const TAU: f64 = std::f64::consts::TAU;

/// Two moving targets at (50 m, 30°, 50 m/s) and (100 m, 50°, 100 m/s), beam at 40°.
pub fn reference_scene(beta: [Complex64; 2]) -> Scene {
    let bs = [0.0, 0.0];
    Scene {
        bs_position: bs,
        targets: vec![
            Target::from_polar(bs, 50.0, 30f64.to_radians(), 50.0, beta[0]),
            Target::from_polar(bs, 100.0, 50f64.to_radians(), 100.0, beta[1]),
        ],
        beam_direction: 40f64.to_radians(),
    }
}

pub fn unit_betas() -> [Complex64; 2] {
    [Complex64::new(1.0, 0.0); 2]
}

pub fn random_phasor<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::from_polar(rng.random_range(0.5..1.5), TAU * rng.random_range(0.0..1.0))
}

/// Random waveform chirp parameters on the reference 64-subcarrier symbol.
pub fn random_waveform<R: Rng>(rng: &mut R) -> WaveformParams {
    WaveformParams::default().with_chirp(rng.random_range(0.0..0.1), rng.random_range(0.0..1.0))
}

/// Paths with fractional delays inside the prefix and Doppler up to two subcarrier spacings.
pub fn random_paths<R: Rng>(rng: &mut R, count: usize, wf: &WaveformParams) -> Vec<PathParams> {
    let df = wf.subcarrier_spacing();
    (0..count)
        .map(|_| PathParams {
            gain: random_phasor(rng),
            theta: rng.random_range(-70f64..70.0).to_radians(),
            tau: rng.random_range(0.0..0.95) * wf.cpp_duration(),
            nu: rng.random_range(-2.0..2.0) * df,
        })
        .collect()
}

/// Targets within prefix range, with arbitrary (not only radial) velocities
/// giving Doppler shifts up to two subcarrier spacings.
pub fn random_scene<R: Rng>(rng: &mut R, count: usize, wf: &WaveformParams, array: &ArrayParams) -> Scene {
    let bs = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    let max_range = 0.45 * aftmc::geometry::SPEED_OF_LIGHT * wf.cpp_duration();
    let v_max = 2.0 * wf.subcarrier_spacing() * aftmc::geometry::SPEED_OF_LIGHT / (2.0 * array.carrier_frequency);
    let targets: Vec<Target> = (0..count)
        .map(|_| {
            let range = rng.random_range(5.0..max_range);
            let angle = rng.random_range(-70f64..70.0).to_radians();
            let mut t = Target::from_polar(bs, range, angle, 0.0, random_phasor(rng));
            let speed = rng.random_range(0.0..v_max);
            let heading = TAU * rng.random_range(0.0..1.0);
            t.velocity = [speed * heading.cos(), speed * heading.sin()];
            t
        })
        .collect();
    Scene {
        bs_position: bs,
        beam_direction: rng.random_range(-30f64..30.0).to_radians(),
        targets,
    }
}

pub fn max_abs(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
