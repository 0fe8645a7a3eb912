//! Two-step channel-parameter estimation.
//!
//! 1. Angles of arrival from the spatially smoothed MUSIC pseudo-spectrum.
//! 2. For each target, delay and Doppler from the approximate maximum
//!    likelihood objective `|D^H y_i|² / ‖D‖²` with `D = b(θ̂)⊗H(τ,ν)x`,
//!    where `y_i` has the other targets' reconstructed echoes cancelled. The
//!    gain then follows by least squares. The per-target pass is repeated a
//!    fixed number of times so later passes cancel with refined estimates.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ramp_rate, ChannelKernel};
use crate::error::{Error, Result};
use crate::geometry::{self, ArrayParams, PathParams};
use crate::waveform::{SymbolVector, WaveformParams};
use crate::{ComplexMatrix, ComplexVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MusicConfig {
    /// Number of overlapping subarrays `K`.
    pub subarrays: usize,
    /// Pseudo-spectrum grid step in degrees.
    pub grid_deg: f64,
    /// Average the forward and backward (conjugate-reversed) covariances.
    pub fb_averaging: bool,
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            subarrays: 4,
            grid_deg: 0.1,
            fb_averaging: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdSearchConfig {
    /// Delay grid step is `T/(M·tau_oversample)`.
    pub tau_oversample: usize,
    /// Doppler grid step is `1/(T·nu_oversample)`.
    pub nu_oversample: usize,
    /// Doppler search half-width in Hz.
    pub nu_max: f64,
    /// Number of interference-cancellation passes.
    pub outer_iterations: usize,
    /// Refinement stops once every coordinate step is below this fraction of its grid step.
    pub refine_tol: f64,
    /// Cap on refinement rounds.
    pub refine_max_steps: usize,
    /// Stop the outer loop early when the relative residual change drops below this.
    pub early_exit_tol: f64,
}

impl Default for DdSearchConfig {
    fn default() -> Self {
        Self {
            tau_oversample: 4,
            nu_oversample: 4,
            nu_max: 60e3,
            outer_iterations: 3,
            refine_tol: 1e-4,
            refine_max_steps: 60,
            early_exit_tol: 1e-6,
        }
    }
}

impl DdSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_oversample == 0 || self.nu_oversample == 0 {
            return Err(Error::EmptyGrid("oversampling factors must be >= 1".into()));
        }
        if !(self.nu_max.is_finite() && self.nu_max > 0.0) {
            return Err(Error::EmptyGrid("nu_max must be positive".into()));
        }
        if self.outer_iterations == 0 {
            return Err(Error::InvalidParameter("outer_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sampled MUSIC pseudo-spectrum over `[-90°, 90°]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicSpectrum {
    pub angles_deg: Vec<f64>,
    pub values: Vec<f64>,
}

impl MusicSpectrum {
    pub fn values_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| 10.0 * v.log10()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakPick {
    /// Grid indices of the selected maxima, in the same order as `angles`.
    pub indices: Vec<usize>,
    /// Refined peak locations, ascending.
    pub angles: Vec<f64>,
    /// Fewer local maxima than requested were found.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    /// One entry per target, ordered by ascending angle.
    pub paths: Vec<PathParams>,
    pub spectrum: MusicSpectrum,
    /// `‖y − Σ ĥ_i D_i‖²` after the last pass.
    pub residual_energy: f64,
    /// Residual energy after each outer pass.
    pub residual_history: Vec<f64>,
}

/// Averaged subarray covariance `(1/K)·Σ_k (1/M)·Y_k^H·Y_k`, where `Y_k` holds
/// columns `k..k+L_sub` of `Y` and `L_sub = N_r − K + 1`.
pub fn spatial_smooth_covariance(y: &ComplexMatrix, subarrays: usize, targets: usize) -> Result<ComplexMatrix> {
    let nr = y.ncols();
    if subarrays == 0 || subarrays > nr {
        return Err(Error::InvalidParameter(format!(
            "subarray count {subarrays} must be in 1..={nr}"
        )));
    }
    let len = nr - subarrays + 1;
    if len <= targets {
        return Err(Error::SubarrayTooShort {
            subarray_len: len,
            targets,
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("received block"));
    }
    let mut r = ComplexMatrix::zeros(len, len);
    for k in 0..subarrays {
        let block = y.columns(k, len);
        r += block.adjoint() * block;
    }
    r /= Complex64::new((subarrays * y.nrows()) as f64, 0.0);
    Ok(r)
}

/// `(R + J·R*·J)/2` with `J` the exchange matrix.
pub fn forward_backward(r: &ComplexMatrix) -> ComplexMatrix {
    let n = r.nrows();
    ComplexMatrix::from_fn(n, n, |i, j| 0.5 * (r[(i, j)] + r[(n - 1 - i, n - 1 - j)].conj()))
}

/// Eigenvectors of a Hermitian matrix split into signal (largest `targets`)
/// and noise subspaces, plus the eigenvalues in descending order.
pub fn signal_noise_subspaces(
    r: &ComplexMatrix,
    targets: usize,
) -> Result<(ComplexMatrix, ComplexMatrix, Vec<f64>)> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let n = r.nrows();
    if targets >= n {
        return Err(Error::SubarrayTooShort {
            subarray_len: n,
            targets,
        });
    }
    let eig = SymmetricEigen::new(r.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let pick = |idx: &[usize]| {
        ComplexMatrix::from_fn(n, idx.len(), |row, col| eig.eigenvectors[(row, idx[col])])
    };
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok((pick(&order[..targets]), pick(&order[targets..]), values))
}

/// MUSIC pseudo-spectrum `1/‖U_n^H·b*(θ)‖²` on a `grid_deg` grid over `[-90°, 90°]`,
/// with `b` truncated to the subarray length.
pub fn music_spectrum(
    r_ss: &ComplexMatrix,
    targets: usize,
    config: &MusicConfig,
    array: &ArrayParams,
) -> Result<MusicSpectrum> {
    if !(config.grid_deg.is_finite() && config.grid_deg > 0.0) {
        return Err(Error::EmptyGrid("grid_deg must be positive".into()));
    }
    let (_, noise, _) = signal_noise_subspaces(r_ss, targets)?;
    let len = r_ss.nrows();
    let count = (180.0 / config.grid_deg).round() as usize + 1;
    let mut angles_deg = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let deg = -90.0 + i as f64 * config.grid_deg;
        let b = geometry::steering_rx_len(deg.to_radians(), len, array).conjugate();
        let proj = noise.adjoint() * b;
        let denom = proj.norm_squared().max(f64::MIN_POSITIVE);
        angles_deg.push(deg);
        values.push(1.0 / denom);
    }
    Ok(MusicSpectrum { angles_deg, values })
}

/// Vertex offset (in grid steps, within ±0.5) of the parabola through three samples.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// The `count` largest interior local maxima of a uniformly sampled curve,
/// each refined by three-point parabolic interpolation and returned in
/// ascending order. On a plateau the leftmost sample of the tie is the peak.
pub fn pick_peaks(angles: &[f64], values: &[f64], count: usize) -> PeakPick {
    let n = values.len().min(angles.len());
    let mut candidates = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                candidates.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    candidates.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    candidates.truncate(count);
    let degenerate = candidates.len() < count;
    let mut peaks: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|i| {
            let step = angles[i + 1] - angles[i];
            let offset = parabolic_offset(values[i - 1], values[i], values[i + 1]);
            (i, angles[i] + offset * step)
        })
        .collect();
    peaks.sort_by(|a, b| a.1.total_cmp(&b.1));
    PeakPick {
        indices: peaks.iter().map(|p| p.0).collect(),
        angles: peaks.iter().map(|p| p.1).collect(),
        degenerate,
    }
}

fn check_stacked(y: &ComplexVector, waveform: &WaveformParams, array: &ArrayParams) -> Result<()> {
    let expected = waveform.subcarriers * array.rx_antennas;
    if y.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: y.len(),
        });
    }
    Ok(())
}

/// `b(θ)⊗(H(τ,ν)·x)`, one column of the model matrix.
pub fn model_column(
    theta: f64,
    tau: f64,
    nu: f64,
    x: &SymbolVector,
    waveform: &WaveformParams,
    array: &ArrayParams,
) -> ComplexVector {
    let hx = ComplexVector::from_vec(ChannelKernel::new(waveform).apply(x.as_slice(), tau, nu));
    geometry::steering_rx(theta, array).kronecker(&hx)
}

/// Concentrated likelihood `|D^H y_i|² / ‖D‖²` evaluated by explicit Kronecker construction.
pub fn aml_objective(
    tau: f64,
    nu: f64,
    theta_hat: f64,
    y_i: &ComplexVector,
    x: &SymbolVector,
    waveform: &WaveformParams,
    array: &ArrayParams,
) -> Result<f64> {
    check_stacked(y_i, waveform, array)?;
    let d = model_column(theta_hat, tau, nu, x, waveform, array);
    let energy = d.norm_squared();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(d.dotc(y_i).norm_sqr() / energy)
}

/// Least-squares gain `D^H y_i / ‖D‖²`.
pub fn estimate_gain(
    theta_hat: f64,
    tau_hat: f64,
    nu_hat: f64,
    y_i: &ComplexVector,
    x: &SymbolVector,
    waveform: &WaveformParams,
    array: &ArrayParams,
) -> Result<Complex64> {
    check_stacked(y_i, waveform, array)?;
    let d = model_column(theta_hat, tau_hat, nu_hat, x, waveform, array);
    let energy = d.norm_squared();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(d.dotc(y_i) / energy)
}

/// Fast evaluator of the concentrated objective for one beamformed residual.
///
/// With `z = Y_i·b*(θ̂)` and `w = F^H·Λ(c2)^H·z`, the correlation reduces to
/// `Σ_n conj(u_τ[n])·e^{-j2πκn}·w[n]` where `u_τ = F^H·d(τ)·Λ(c2)^H·x` and
/// `κ` is the combined delay/Doppler ramp rate. Each evaluation is `O(M)`
/// once `u_τ` is known.
struct AmlSearch<'a> {
    kernel: &'a ChannelKernel,
    dechirped: Vec<Complex64>,
    w: Vec<Complex64>,
    norm: f64,
}

impl<'a> AmlSearch<'a> {
    fn new(kernel: &'a ChannelKernel, x: &SymbolVector, residual: &ComplexMatrix, b: &ComplexVector) -> Result<Self> {
        let norm = b.norm_squared() * x.norm_squared();
        if norm == 0.0 {
            return Err(Error::ZeroEnergy);
        }
        let z = residual * b.conjugate();
        Ok(Self {
            kernel,
            dechirped: kernel.dechirp(x.as_slice()),
            w: kernel.to_time(z.as_slice()),
            norm,
        })
    }

    /// `conj(u_τ[n])·w[n]`.
    fn weights(&self, tau: f64) -> Vec<Complex64> {
        let u = self.kernel.delayed_time_signal(&self.dechirped, tau);
        u.iter().zip(&self.w).map(|(a, b)| a.conj() * b).collect()
    }

    fn correlate(weights: &[Complex64], rate: f64) -> f64 {
        let rot = Complex64::from_polar(1.0, -std::f64::consts::TAU * rate);
        let acc = weights.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, q| acc * rot + q);
        acc.norm_sqr()
    }

    fn eval_rate(&self, tau: f64, rate: f64) -> f64 {
        Self::correlate(&self.weights(tau), rate) / self.norm
    }

    /// `D^H·y_i / ‖D‖²` at the given parameters.
    fn gain(&self, tau: f64, rate: f64) -> Complex64 {
        let weights = self.weights(tau);
        let rot = Complex64::from_polar(1.0, -std::f64::consts::TAU * rate);
        let acc = weights.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, q| acc * rot + q);
        acc / self.norm
    }
}

/// Maps the (delay, ramp-rate) search coordinates back to Doppler.
fn rate_to_nu(tau: f64, rate: f64, waveform: &WaveformParams) -> f64 {
    (rate - ramp_rate(tau, 0.0, waveform)) / waveform.sample_period()
}

fn grid_search(search: &AmlSearch<'_>, waveform: &WaveformParams, config: &DdSearchConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let m = waveform.subcarriers as f64;
    let period = waveform.symbol_duration;
    let tau_step = period / (m * config.tau_oversample as f64);
    let tau_count = (waveform.cpp_len * config.tau_oversample).max(1);
    let nu_step = 1.0 / (period * config.nu_oversample as f64);
    let half = (config.nu_max / nu_step + 1e-9).floor() as i64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for j in 0..tau_count {
        let tau = j as f64 * tau_step;
        let weights = search.weights(tau);
        for k in -half..=half {
            let nu = k as f64 * nu_step;
            let v = AmlSearch::correlate(&weights, ramp_rate(tau, nu, waveform));
            if v > best.0 {
                best = (v, tau, nu);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NonFinite("delay-Doppler objective"));
    }
    Ok((best.1, best.2))
}

/// Alternating per-coordinate parabolic ascent in (delay, ramp-rate)
/// coordinates, in which delay and Doppler decouple.
fn refine(
    search: &AmlSearch<'_>,
    waveform: &WaveformParams,
    config: &DdSearchConfig,
    start: (f64, f64),
) -> (f64, f64) {
    let m = waveform.subcarriers as f64;
    let period = waveform.symbol_duration;
    let tau_max = waveform.cpp_duration();
    // the ramp-rate grid step (cycles/sample) is the Doppler step times T/M
    let grid = [
        period / (m * config.tau_oversample as f64),
        1.0 / (m * config.nu_oversample as f64),
    ];
    let clamp_tau = |t: f64| {
        if tau_max > 0.0 {
            t.clamp(0.0, tau_max * (1.0 - 1e-12))
        } else {
            0.0
        }
    };
    let mut point = [start.0, ramp_rate(start.0, start.1, waveform)];
    let mut step = grid;
    let eval = |p: [f64; 2]| search.eval_rate(p[0], p[1]);
    let mut current = eval(point);
    for _ in 0..config.refine_max_steps {
        if step.iter().zip(&grid).all(|(s, g)| *s < config.refine_tol * g) {
            break;
        }
        for c in 0..2 {
            let h = step[c];
            let shifted = |delta: f64| {
                let mut p = point;
                p[c] += delta;
                if c == 0 {
                    p[0] = clamp_tau(p[0]);
                }
                p
            };
            let (pm, pp) = (shifted(-h), shifted(h));
            let (fm, fp) = (eval(pm), eval(pp));
            if fp > current && fp >= fm {
                point = pp;
                current = fp;
            } else if fm > current {
                point = pm;
                current = fm;
            } else {
                let offset = parabolic_offset(fm, current, fp) * 2.0 * h;
                let candidate = shifted(offset);
                let fc = eval(candidate);
                if fc >= current {
                    point = candidate;
                    current = fc;
                }
                step[c] *= 0.5;
            }
        }
    }
    (point[0], rate_to_nu(point[0], point[1], waveform))
}

fn search_delay_doppler(search: &AmlSearch<'_>, waveform: &WaveformParams, config: &DdSearchConfig) -> Result<(f64, f64)> {
    let coarse = grid_search(search, waveform, config)?;
    Ok(refine(search, waveform, config, coarse))
}

/// Coarse grid plus local refinement of the concentrated objective for one
/// target, given its estimated angle and interference-cancelled stacked signal.
pub fn estimate_delay_doppler(
    theta_hat: f64,
    y_i: &ComplexVector,
    x: &SymbolVector,
    waveform: &WaveformParams,
    array: &ArrayParams,
    config: &DdSearchConfig,
) -> Result<(f64, f64)> {
    check_stacked(y_i, waveform, array)?;
    let residual = ComplexMatrix::from_column_slice(waveform.subcarriers, array.rx_antennas, y_i.as_slice());
    let kernel = ChannelKernel::new(waveform);
    let b = geometry::steering_rx(theta_hat, array);
    let search = AmlSearch::new(&kernel, x, &residual, &b)?;
    search_delay_doppler(&search, waveform, config)
}

/// Full two-step estimation of `targets` paths from the demodulated block `y`.
pub fn estimate_all(
    y: &ComplexMatrix,
    x: &SymbolVector,
    targets: usize,
    waveform: &WaveformParams,
    array: &ArrayParams,
    music: &MusicConfig,
    dd: &DdSearchConfig,
) -> Result<EstimationResult> {
    if targets == 0 {
        return Err(Error::InvalidParameter("target count must be >= 1".into()));
    }
    if y.nrows() != waveform.subcarriers || y.ncols() != array.rx_antennas {
        return Err(Error::DimensionMismatch {
            expected: waveform.subcarriers * array.rx_antennas,
            actual: y.len(),
        });
    }
    dd.validate()?;

    let mut r_ss = spatial_smooth_covariance(y, music.subarrays, targets)?;
    if music.fb_averaging {
        r_ss = forward_backward(&r_ss);
    }
    let spectrum = music_spectrum(&r_ss, targets, music, array)?;
    let peaks = pick_peaks(&spectrum.angles_deg, &spectrum.values_db(), targets);
    if peaks.degenerate {
        return Err(Error::MusicDegenerate {
            found: peaks.angles.len(),
            expected: targets,
        });
    }
    let thetas: Vec<f64> = peaks.angles.iter().map(|d| d.to_radians()).collect();
    let steering: Vec<ComplexVector> = thetas.iter().map(|&t| geometry::steering_rx(t, array)).collect();

    // strongest beamformed echo first
    let mut order: Vec<usize> = (0..targets).collect();
    let energy: Vec<f64> = steering.iter().map(|b| (y * b.conjugate()).norm_squared()).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]));

    let kernel = ChannelKernel::new(waveform);
    let mut paths: Vec<PathParams> = thetas
        .iter()
        .map(|&theta| PathParams {
            gain: Complex64::new(0.0, 0.0),
            theta,
            tau: 0.0,
            nu: 0.0,
        })
        .collect();
    let mut echoes = vec![ComplexMatrix::zeros(y.nrows(), y.ncols()); targets];
    let mut history: Vec<f64> = Vec::with_capacity(dd.outer_iterations);

    for _ in 0..dd.outer_iterations {
        for &i in &order {
            let mut residual = y.clone();
            for (j, echo) in echoes.iter().enumerate() {
                if j != i {
                    residual -= echo;
                }
            }
            let search = AmlSearch::new(&kernel, x, &residual, &steering[i])?;
            let (tau, nu) = search_delay_doppler(&search, waveform, dd)?;
            let gain = search.gain(tau, ramp_rate(tau, nu, waveform));
            let hx = ComplexVector::from_vec(kernel.apply(x.as_slice(), tau, nu));
            echoes[i] = (hx * gain) * steering[i].transpose();
            paths[i] = PathParams {
                gain,
                theta: thetas[i],
                tau,
                nu,
            };
        }
        let mut residual = y.clone();
        echoes.iter().for_each(|e| residual -= e);
        let energy = residual.norm_squared();
        let converged = history
            .last()
            .is_some_and(|&prev| (prev - energy).abs() <= dd.early_exit_tol * prev.max(f64::MIN_POSITIVE));
        history.push(energy);
        if converged {
            break;
        }
    }

    Ok(EstimationResult {
        paths,
        spectrum,
        residual_energy: *history.last().unwrap_or(&y.norm_squared()),
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::noiseless_matrix_model;
    use crate::waveform::qam_symbols;

    fn path(theta_deg: f64, tau: f64, nu: f64, gain: Complex64) -> PathParams {
        PathParams {
            gain,
            theta: theta_deg.to_radians(),
            tau,
            nu,
        }
    }

    fn stacked(y: &ComplexMatrix) -> ComplexVector {
        ComplexVector::from_column_slice(y.as_slice())
    }

    #[test]
    fn single_subarray_is_plain_covariance() {
        let x = qam_symbols(16, 64, 1).unwrap();
        let wf = WaveformParams::default();
        let arr = ArrayParams::default();
        let y = noiseless_matrix_model(&x, &[path(20.0, 1e-7, 1e3, Complex64::new(1.0, 0.5))], &wf, &arr).unwrap();
        let r = spatial_smooth_covariance(&y, 1, 1).unwrap();
        let plain = y.adjoint() * &y / Complex64::new(64.0, 0.0);
        assert!((r - plain).norm() < 1e-12);
    }

    #[test]
    fn smoothed_covariance_is_hermitian() {
        let x = qam_symbols(16, 64, 2).unwrap();
        let wf = WaveformParams::default().with_chirp(0.03, 0.0);
        let arr = ArrayParams::default();
        let paths = [
            path(30.0, 3e-7, 2e4, Complex64::new(1.0, 0.0)),
            path(50.0, 6e-7, 4e4, Complex64::new(0.2, 0.3)),
        ];
        let y = noiseless_matrix_model(&x, &paths, &wf, &arr).unwrap();
        let r = spatial_smooth_covariance(&y, 4, 2).unwrap();
        let asym = (&r - r.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(asym < 1e-14);
        assert!(matches!(
            spatial_smooth_covariance(&y, 15, 2),
            Err(Error::SubarrayTooShort { .. })
        ));
    }

    #[test]
    fn smoothing_restores_rank_of_coherent_paths() {
        let x = qam_symbols(16, 64, 3).unwrap();
        let wf = WaveformParams::default();
        let arr = ArrayParams::default();
        // identical delay and Doppler: fully coherent echoes
        let paths = [
            path(-10.0, 2e-7, 0.0, Complex64::new(1.0, 0.0)),
            path(25.0, 2e-7, 0.0, Complex64::new(0.0, 1.0)),
        ];
        let y = noiseless_matrix_model(&x, &paths, &wf, &arr).unwrap();
        let (_, _, plain) = signal_noise_subspaces(&spatial_smooth_covariance(&y, 1, 2).unwrap(), 2).unwrap();
        assert!(plain[1] < 1e-10 * plain[0]);
        let (_, _, smooth) = signal_noise_subspaces(&spatial_smooth_covariance(&y, 4, 2).unwrap(), 2).unwrap();
        assert!(smooth[1] > 100.0 * smooth[2].abs().max(1e-300));
        assert!(smooth[1] > 1e-3 * smooth[0]);
    }

    #[test]
    fn subspaces_are_orthogonal() {
        let x = qam_symbols(16, 64, 4).unwrap();
        let wf = WaveformParams::default();
        let arr = ArrayParams::default();
        let y = noiseless_matrix_model(&x, &[path(5.0, 1e-7, 0.0, Complex64::new(1.0, 0.0))], &wf, &arr).unwrap();
        let r = spatial_smooth_covariance(&y, 4, 1).unwrap();
        let (us, un, vals) = signal_noise_subspaces(&r, 1).unwrap();
        let cross = (us.adjoint() * un).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(cross < 1e-10);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn music_peak_at_boresight() {
        let x = qam_symbols(16, 64, 5).unwrap();
        let wf = WaveformParams::default();
        let arr = ArrayParams::default();
        let y = noiseless_matrix_model(&x, &[path(0.0, 0.0, 0.0, Complex64::new(1.0, 0.0))], &wf, &arr).unwrap();
        let cfg = MusicConfig::default();
        let r = spatial_smooth_covariance(&y, cfg.subarrays, 1).unwrap();
        let spec = music_spectrum(&r, 1, &cfg, &arr).unwrap();
        assert_eq!(spec.angles_deg.len(), 1801);
        let peak = pick_peaks(&spec.angles_deg, &spec.values_db(), 1);
        assert!(peak.angles[0].abs() <= cfg.grid_deg);
        assert!(spec.values.iter().all(|v| *v > 0.0 && v.is_finite()));
    }

    #[test]
    fn music_peaks_survive_scaling() {
        let x = qam_symbols(16, 64, 6).unwrap();
        let wf = WaveformParams::default().with_chirp(0.03, 0.0);
        let arr = ArrayParams::default();
        let paths = [
            path(-20.0, 3e-7, 1e4, Complex64::new(1.0, 0.0)),
            path(35.0, 5e-7, -2e4, Complex64::new(0.5, 0.5)),
        ];
        let mut y = noiseless_matrix_model(&x, &paths, &wf, &arr).unwrap();
        crate::channel::add_noise(&mut y, 1e-3, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1));
        let cfg = MusicConfig::default();
        let peaks_of = |y: &ComplexMatrix| {
            let r = spatial_smooth_covariance(y, 4, 2).unwrap();
            let s = music_spectrum(&r, 2, &cfg, &arr).unwrap();
            pick_peaks(&s.angles_deg, &s.values_db(), 2).indices
        };
        let scaled = &y * Complex64::new(-3.0, 7.5);
        assert_eq!(peaks_of(&y), peaks_of(&scaled));
    }

    #[test]
    fn peaks_of_two_bumps() {
        let angles: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let values = [0.0, 1.0, 3.0, 1.0, 0.0, 0.5, 2.0, 5.0, 2.0, 0.5, 0.0];
        let p = pick_peaks(&angles, &values, 2);
        assert_eq!(p.indices, vec![2, 7]);
        assert!(!p.degenerate);
        assert!((p.angles[0] - 2.0).abs() < 1e-12 && (p.angles[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_takes_leftmost_index() {
        let angles: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let values = [0.0, 1.0, 4.0, 4.0, 4.0, 1.0, 0.0];
        let p = pick_peaks(&angles, &values, 1);
        assert_eq!(p.indices, vec![2]);
        // rising into a higher value is not a peak
        let p = pick_peaks(&angles, &[0.0, 2.0, 2.0, 3.0, 1.0, 0.0, 0.0], 2);
        assert_eq!(p.indices, vec![3]);
        assert!(p.degenerate);
    }

    #[test]
    fn parabolic_refinement_recovers_vertex() {
        let vertex = 3.3721;
        let angles: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let values: Vec<f64> = angles.iter().map(|a| 2.0 - 1.7 * (a - vertex).powi(2)).collect();
        let p = pick_peaks(&angles, &values, 1);
        assert!(((p.angles[0] - vertex) / 0.5).abs() < 1e-9);
    }

    fn single_path_setup(c1: f64, tau: f64, nu: f64) -> (WaveformParams, ArrayParams, SymbolVector, PathParams, ComplexMatrix) {
        let wf = WaveformParams::default().with_chirp(c1, 0.0);
        let arr = ArrayParams::default();
        let x = qam_symbols(16, 64, 42).unwrap();
        let p = path(30.0, tau, nu, Complex64::from_polar(0.8, 1.1));
        let y = noiseless_matrix_model(&x, &[p], &wf, &arr).unwrap();
        (wf, arr, x, p, y)
    }

    #[test]
    fn objective_peaks_at_truth() {
        let (wf, arr, x, p, y) = single_path_setup(0.03, 3.0 * 1e-6 / 0.96, 3.75e3 * 5.0);
        let ys = stacked(&y);
        let at_truth = aml_objective(p.tau, p.nu, p.theta, &ys, &x, &wf, &arr).unwrap();
        assert!((at_truth - ys.norm_squared()).abs() < 1e-9 * at_truth);
        for (dt, dn) in [(1e-8, 0.0), (0.0, 500.0), (-2e-7, 3e3)] {
            let off = aml_objective(p.tau + dt, p.nu + dn, p.theta, &ys, &x, &wf, &arr).unwrap();
            assert!(off < at_truth);
        }
    }

    #[test]
    fn ofdm_objective_has_symbol_period_ambiguity() {
        let (wf, arr, x, p, y) = single_path_setup(0.0, 4e-7, 1e4);
        let ys = stacked(&y);
        let a = aml_objective(2e-7, 8e3, p.theta, &ys, &x, &wf, &arr).unwrap();
        let b = aml_objective(2e-7 + wf.symbol_duration, 8e3, p.theta, &ys, &x, &wf, &arr).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn objective_ignores_gain_phase() {
        let (wf, arr, x, p, y) = single_path_setup(0.03, 4e-7, 1e4);
        let ys = stacked(&y);
        let rotated = &ys * Complex64::from_polar(1.0, 2.2);
        let a = aml_objective(3e-7, 9e3, p.theta, &ys, &x, &wf, &arr).unwrap();
        let b = aml_objective(3e-7, 9e3, p.theta, &rotated, &x, &wf, &arr).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn on_grid_path_is_recovered_exactly() {
        let wf = WaveformParams::default();
        let tau = 5.0 * wf.symbol_duration / (64.0 * 4.0);
        let nu = 6.0 / (wf.symbol_duration * 4.0);
        let (wf, arr, x, p, y) = single_path_setup(0.03, tau, nu);
        let (t, n) = estimate_delay_doppler(p.theta, &stacked(&y), &x, &wf, &arr, &DdSearchConfig::default()).unwrap();
        assert!((t - tau).abs() < 1e-6 * wf.sample_period());
        assert!((n - nu).abs() < 1e-6 * wf.subcarrier_spacing());
    }

    #[test]
    fn off_grid_path_is_refined() {
        let wf = WaveformParams::default();
        for c1 in [0.0, 0.03, 0.08] {
            let tau = 2.37 * wf.sample_period();
            let nu = 23_456.7;
            let (wf, arr, x, p, y) = single_path_setup(c1, tau, nu);
            let (t, n) = estimate_delay_doppler(p.theta, &stacked(&y), &x, &wf, &arr, &DdSearchConfig::default()).unwrap();
            assert!((t - tau).abs() < wf.sample_period() / 10.0, "c1={c1} tau err {}", t - tau);
            assert!((n - nu).abs() < 0.05 * wf.subcarrier_spacing(), "c1={c1} nu err {}", n - nu);
        }
    }

    #[test]
    fn gain_estimates() {
        let (wf, arr, x, p, _) = single_path_setup(0.03, 4e-7, 1e4);
        let d = model_column(p.theta, p.tau, p.nu, &x, &wf, &arr);
        let h = Complex64::from_polar(3.7, std::f64::consts::PI / 5.0);
        let y = &d * h;
        let est = estimate_gain(p.theta, p.tau, p.nu, &y, &x, &wf, &arr).unwrap();
        assert!((est - h).norm() < 1e-12);
        let doubled = estimate_gain(p.theta, p.tau, p.nu, &(&y * Complex64::new(2.0, 0.0)), &x, &wf, &arr).unwrap();
        assert!((doubled - 2.0 * h).norm() < 1e-12);
        // a vector orthogonal to D
        let mut other = ComplexVector::from_fn(d.len(), |i, _| Complex64::new((i % 7) as f64, 1.0));
        let proj = d.dotc(&other) / d.norm_squared();
        other -= &d * proj;
        let est = estimate_gain(p.theta, p.tau, p.nu, &other, &x, &wf, &arr).unwrap();
        assert!(est.norm() < 1e-12);
        let residual = &y - &d * estimate_gain(p.theta, p.tau, p.nu, &y, &x, &wf, &arr).unwrap();
        assert!(d.dotc(&residual).norm() < 1e-10 * d.norm() * y.norm());
        let zeros = SymbolVector::from_slice(&vec![Complex64::new(0.0, 0.0); 64]);
        assert!(matches!(
            estimate_gain(p.theta, p.tau, p.nu, &y, &zeros, &wf, &arr),
            Err(Error::ZeroEnergy)
        ));
    }

    #[test]
    fn bad_grid_config_is_rejected() {
        let (wf, arr, x, p, y) = single_path_setup(0.03, 4e-7, 1e4);
        let cfg = DdSearchConfig {
            tau_oversample: 0,
            ..Default::default()
        };
        assert!(matches!(
            estimate_delay_doppler(p.theta, &stacked(&y), &x, &wf, &arr, &cfg),
            Err(Error::EmptyGrid(_))
        ));
    }

    #[test]
    fn single_path_end_to_end() {
        let (wf, arr, x, p, y) = single_path_setup(0.03, 3.1e-7, 2.2e4);
        let res = estimate_all(&y, &x, 1, &wf, &arr, &MusicConfig::default(), &DdSearchConfig::default()).unwrap();
        let e = res.paths[0];
        assert!((e.theta - p.theta).abs() < 1e-3f64.to_radians());
        assert!((e.tau - p.tau).abs() < 1e-3 * wf.sample_period());
        assert!((e.nu - p.nu).abs() < 1e-3 * wf.subcarrier_spacing());
        assert!((e.gain - p.gain).norm() < 1e-3 * p.gain.norm());
    }

    #[test]
    fn two_paths_end_to_end() {
        let wf = WaveformParams::default().with_chirp(0.03, 0.0);
        let arr = ArrayParams::default();
        let x = qam_symbols(16, 64, 77).unwrap();
        let truth = [
            path(-25.0, 3.3e-7, 2.0e4, Complex64::from_polar(1.0, 0.3)),
            path(40.0, 6.7e-7, -3.1e4, Complex64::from_polar(0.6, -1.9)),
        ];
        let y = noiseless_matrix_model(&x, &truth, &wf, &arr).unwrap();
        let res = estimate_all(&y, &x, 2, &wf, &arr, &MusicConfig::default(), &DdSearchConfig::default()).unwrap();
        for (e, t) in res.paths.iter().zip(&truth) {
            assert!((e.theta - t.theta).abs() < 0.05f64.to_radians(), "theta {e:?} vs {t:?}");
            assert!((e.tau - t.tau).abs() < 0.01 * wf.sample_period(), "tau {e:?} vs {t:?}");
            assert!((e.nu - t.nu).abs() < 0.01 * wf.subcarrier_spacing(), "nu {e:?} vs {t:?}");
        }
        assert!(res.residual_energy < 1e-4 * y.norm_squared());
    }
}
