//! Received-signal synthesis for the continuous delay/Doppler MIMO channel.
//!
//! Two independent constructions are provided. The matrix model builds
//! `Y = Σ h_i·H_i·x·b^T(θ_i) + W̃` from the closed-form subcarrier-domain
//! channel `H_i = Λ(c2)·F·Δ(ν_i)·c(τ_i)·F^H·d(τ_i)·Λ(c2)^H`. The oracle samples
//! the delayed, Doppler-shifted analog signal directly and then demodulates.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{dft_matrix, expj_cycles, UnitaryDft};
use crate::error::{Error, Result};
use crate::geometry::{self, ArrayParams, PathParams, Scene};
use crate::waveform::{self, chirp_diagonal, SymbolVector, WaveformParams};
use crate::{ComplexMatrix, ComplexVector};

/// Diagonal delay factors of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayOperators {
    /// `c(τ)[n] = e^{-j2π·2M·c1·τ·n/T}` (time domain).
    pub chirp: ComplexVector,
    /// `d(τ)[m] = e^{-j2π·m·τ/T}` (subcarrier domain).
    pub phase_ramp: ComplexVector,
    /// `γ = e^{j2π·c1·M²·τ²/T²}`.
    pub gamma: Complex64,
}

fn check_delay(tau: f64, waveform: &WaveformParams) -> Result<()> {
    let max = waveform.cpp_duration();
    if !(tau >= 0.0 && tau < max) {
        // a zero-length prefix still admits the zero-delay path
        if !(tau == 0.0 && max == 0.0) {
            return Err(Error::DelayOutOfRange { tau, max });
        }
    }
    Ok(())
}

/// Cycles per time sample contributed by delay through the chirp term and by
/// Doppler: the time-domain factor is `Δ(ν)·c(τ) = diag(e^{j2π·κ·n})`.
#[inline]
pub fn ramp_rate(tau: f64, nu: f64, waveform: &WaveformParams) -> f64 {
    let m = waveform.subcarriers as f64;
    let t = waveform.symbol_duration;
    nu * t / m - 2.0 * m * waveform.c1 * tau / t
}

pub fn delay_operators(tau: f64, waveform: &WaveformParams) -> Result<DelayOperators> {
    check_delay(tau, waveform)?;
    let m = waveform.subcarriers;
    let mf = m as f64;
    let u = tau / waveform.symbol_duration;
    Ok(DelayOperators {
        chirp: ComplexVector::from_fn(m, |n, _| expj_cycles(-2.0 * mf * waveform.c1 * u * n as f64)),
        phase_ramp: ComplexVector::from_fn(m, |k, _| expj_cycles(-u * k as f64)),
        gamma: expj_cycles(waveform.c1 * mf * mf * u * u),
    })
}

/// Diagonal of `Δ(ν)`, `e^{+j2π·ν·nT/M}`.
pub fn doppler_matrix(nu: f64, waveform: &WaveformParams) -> ComplexVector {
    let step = nu * waveform.sample_period();
    ComplexVector::from_fn(waveform.subcarriers, |n, _| expj_cycles(step * n as f64))
}

/// Dense `M×M` subcarrier-domain channel of one path.
pub fn subcarrier_channel(tau: f64, nu: f64, waveform: &WaveformParams) -> Result<ComplexMatrix> {
    let ops = delay_operators(tau, waveform)?;
    let m = waveform.subcarriers;
    let f = dft_matrix(m);
    let l2 = chirp_diagonal(waveform.c2, m);
    let doppler = doppler_matrix(nu, waveform);
    let left = DMatrix::from_fn(m, m, |r, c| l2[r] * f[(r, c)] * doppler[c] * ops.chirp[c]);
    let right = DMatrix::from_fn(m, m, |r, c| f[(c, r)].conj() * ops.phase_ramp[c] * l2[c].conj());
    Ok(left * right)
}

/// FFT-based application of `H(τ, ν)` and its parameter derivatives to a
/// fixed symbol vector. Used by the estimator and the bound computations.
#[derive(Debug, Clone)]
pub struct ChannelKernel {
    params: WaveformParams,
    dft: UnitaryDft,
    chirp2: Vec<Complex64>,
}

/// `H·x` together with `∂(H·x)/∂τ` and `∂(H·x)/∂ν`.
#[derive(Debug, Clone)]
pub struct ChannelResponse {
    pub value: Vec<Complex64>,
    pub d_tau: Vec<Complex64>,
    pub d_nu: Vec<Complex64>,
}

impl ChannelKernel {
    pub fn new(params: &WaveformParams) -> Self {
        Self {
            params: *params,
            dft: UnitaryDft::new(params.subcarriers),
            chirp2: chirp_diagonal(params.c2, params.subcarriers),
        }
    }

    pub fn params(&self) -> &WaveformParams {
        &self.params
    }

    /// `Λ(c2)^H·x`.
    pub fn dechirp(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter().zip(&self.chirp2).map(|(v, l)| v * l.conj()).collect()
    }

    /// `u(τ) = F^H·d(τ)·Λ(c2)^H·x` given the dechirped symbols.
    pub fn delayed_time_signal(&self, dechirped: &[Complex64], tau: f64) -> Vec<Complex64> {
        let u = tau / self.params.symbol_duration;
        let mut buf: Vec<Complex64> = dechirped
            .iter()
            .enumerate()
            .map(|(k, v)| v * expj_cycles(-u * k as f64))
            .collect();
        self.dft.inverse(&mut buf);
        buf
    }

    /// `F^H·Λ(c2)^H·z`, the time-domain image of a subcarrier-domain vector.
    pub fn to_time(&self, z: &[Complex64]) -> Vec<Complex64> {
        let mut buf = self.dechirp(z);
        self.dft.inverse(&mut buf);
        buf
    }

    fn to_subcarriers(&self, mut buf: Vec<Complex64>) -> Vec<Complex64> {
        self.dft.forward(&mut buf);
        buf.iter_mut().zip(&self.chirp2).for_each(|(v, l)| *v *= l);
        buf
    }

    /// `H(τ, ν)·x`.
    pub fn apply(&self, x: &[Complex64], tau: f64, nu: f64) -> Vec<Complex64> {
        let u = self.delayed_time_signal(&self.dechirp(x), tau);
        let rate = ramp_rate(tau, nu, &self.params);
        let shifted = u
            .iter()
            .enumerate()
            .map(|(n, v)| v * expj_cycles(rate * n as f64))
            .collect();
        self.to_subcarriers(shifted)
    }

    /// `H·x` and its analytic derivatives in delay and Doppler.
    pub fn apply_with_derivatives(&self, x: &[Complex64], tau: f64, nu: f64) -> ChannelResponse {
        let p = &self.params;
        let m = p.subcarriers;
        let period = p.symbol_duration;
        let tau_u = tau / period;
        let dechirped = self.dechirp(x);
        let mut u = Vec::with_capacity(m);
        let mut du = Vec::with_capacity(m);
        for (k, v) in dechirped.iter().enumerate() {
            let d = v * expj_cycles(-tau_u * k as f64);
            u.push(d);
            du.push(d * Complex64::new(0.0, -std::f64::consts::TAU * k as f64 / period));
        }
        self.dft.inverse(&mut u);
        self.dft.inverse(&mut du);

        let rate = ramp_rate(tau, nu, p);
        let chirp_slope = -std::f64::consts::TAU * 2.0 * m as f64 * p.c1 / period;
        let doppler_slope = std::f64::consts::TAU * p.sample_period();
        let mut value = Vec::with_capacity(m);
        let mut d_tau = Vec::with_capacity(m);
        let mut d_nu = Vec::with_capacity(m);
        for n in 0..m {
            let nf = n as f64;
            let ramp = expj_cycles(rate * nf);
            let v = u[n] * ramp;
            value.push(v);
            d_tau.push(v * Complex64::new(0.0, chirp_slope * nf) + du[n] * ramp);
            d_nu.push(v * Complex64::new(0.0, doppler_slope * nf));
        }
        ChannelResponse {
            value: self.to_subcarriers(value),
            d_tau: self.to_subcarriers(d_tau),
            d_nu: self.to_subcarriers(d_nu),
        }
    }
}

/// Per-path parameters and noise level of one channel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<PathParams>,
    pub sigma2: f64,
    pub seed: u64,
}

/// Demodulated (and optionally pre-demodulation) receive block, `M×N_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub y: ComplexMatrix,
    pub r: Option<ComplexMatrix>,
}

/// Adds circularly-symmetric complex Gaussian noise of variance `sigma2` per entry.
pub fn add_noise<R: Rng + ?Sized>(y: &mut ComplexMatrix, sigma2: f64, rng: &mut R) {
    if sigma2 <= 0.0 {
        return;
    }
    let scale = (sigma2 / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(re, im) * scale;
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance {sigma2} must be >= 0")));
    }
    Ok(())
}

/// Noiseless `Σ h_i·H_i·x·b^T(θ_i)`.
pub fn noiseless_matrix_model(
    x: &SymbolVector,
    paths: &[PathParams],
    waveform: &WaveformParams,
    array: &ArrayParams,
) -> Result<ComplexMatrix> {
    if x.len() != waveform.subcarriers {
        return Err(Error::DimensionMismatch {
            expected: waveform.subcarriers,
            actual: x.len(),
        });
    }
    if paths.is_empty() {
        return Err(Error::InvalidParameter("at least one path is required".into()));
    }
    let kernel = ChannelKernel::new(waveform);
    let mut y = ComplexMatrix::zeros(waveform.subcarriers, array.rx_antennas);
    for path in paths {
        check_delay(path.tau, waveform)?;
        let hx = ComplexVector::from_vec(kernel.apply(x.as_slice(), path.tau, path.nu));
        let b = geometry::steering_rx(path.theta, array);
        y += (hx * path.gain) * b.transpose();
    }
    Ok(y)
}

/// Closed-form synthesis of the demodulated block with additive noise drawn from `seed`.
pub fn synthesize_matrix_model(
    x: &SymbolVector,
    paths: &[PathParams],
    waveform: &WaveformParams,
    array: &ArrayParams,
    sigma2: f64,
    seed: u64,
) -> Result<ReceivedSignal> {
    check_sigma2(sigma2)?;
    let mut y = noiseless_matrix_model(x, paths, waveform, array)?;
    add_noise(&mut y, sigma2, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ReceivedSignal { y, r: None })
}

/// Time-domain synthesis: samples `Σ α_i·b(θ_i)·s_cpp(t − τ_i)·e^{j2πν_i t}` at
/// `t = nT/M` after prefix removal, adds noise, then demodulates.
///
/// Uses only [`waveform::continuous_signal`] and scalar arithmetic, so it is
/// independent of the closed-form channel algebra.
pub fn synthesize_oracle(
    x: &SymbolVector,
    scene: &Scene,
    waveform: &WaveformParams,
    array: &ArrayParams,
    sigma2: f64,
    seed: u64,
) -> Result<ReceivedSignal> {
    check_sigma2(sigma2)?;
    if scene.targets.is_empty() {
        return Err(Error::InvalidParameter("at least one target is required".into()));
    }
    let m = waveform.subcarriers;
    let ts = waveform.sample_period();
    let mut r = ComplexMatrix::zeros(m, array.rx_antennas);
    for target in &scene.targets {
        let k = geometry::kinematics(target, scene.bs_position, array.carrier_frequency)?;
        check_delay(k.tau, waveform)?;
        let alpha = geometry::path_amplitude(target.beta, k.theta, scene, array);
        let b = geometry::steering_rx(k.theta, array);
        for n in 0..m {
            let t = n as f64 * ts;
            let sample = waveform::continuous_signal(x, waveform, t - k.tau)?
                * Complex64::from_polar(1.0, std::f64::consts::TAU * k.nu * t)
                * alpha;
            for (col, bk) in b.iter().enumerate() {
                r[(n, col)] += sample * bk;
            }
        }
    }
    add_noise(&mut r, sigma2, &mut ChaCha8Rng::seed_from_u64(seed));
    let y = waveform::demodulate(&r, waveform)?;
    Ok(ReceivedSignal { y, r: Some(r) })
}

/// Noise variance giving `snr_db` relative to the mean per-sample power of `noiseless`.
pub fn snr_to_sigma2(snr_db: f64, noiseless: &ComplexMatrix) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter("SNR must be finite".into()));
    }
    if noiseless.is_empty() {
        return Err(Error::ZeroEnergy);
    }
    let power = noiseless.norm_squared() / noiseless.len() as f64;
    if power == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}
