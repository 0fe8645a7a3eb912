//! Fisher information of the channel parameters `ρ = [θ; τ; ν]`, its
//! transformation to target positions, the position CRLB, and the search for
//! the symbol-phase parameter `c2` that minimizes it.
//!
//! The complex gains are concentrated out through the projector onto the
//! orthogonal complement of the model matrix `D`, giving
//! `J(ρ) = (2/σ²)·Re{(E^H·P⊥_D·E) ⊙ (h̃*·h̃^T)}` with `h̃ = [h; h; h]`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelKernel;
use crate::error::{Error, Result};
use crate::geometry::{self, ArrayParams, PathParams, Scene, SPEED_OF_LIGHT};
use crate::waveform::{SymbolVector, WaveformParams};
use crate::ComplexMatrix;

/// Largest condition number accepted when inverting a Fisher matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FimReport {
    /// `3P×3P` channel-parameter FIM over `[θ; τ; ν]`.
    pub j_rho: DMatrix<f64>,
    /// `2P×2P` position FIM over `[q_1; …; q_P]`.
    pub j_eta: DMatrix<f64>,
    /// `J_eta^{-1}`, in m².
    pub crlb: DMatrix<f64>,
    /// `2P×3P` Jacobian `∂ρ^T/∂η`.
    pub t_jac: DMatrix<f64>,
}

impl FimReport {
    pub fn targets(&self) -> usize {
        self.crlb.nrows() / 2
    }

    pub fn trace(&self) -> f64 {
        self.crlb.trace()
    }

    /// `√(CRLB[2i,2i] + CRLB[2i+1,2i+1])`, the position error bound of target `i`.
    pub fn target_bound(&self, i: usize) -> f64 {
        (self.crlb[(2 * i, 2 * i)] + self.crlb[(2 * i + 1, 2 * i + 1)]).sqrt()
    }

    /// `√(trace/P)`, comparable to a per-target position RMSE.
    pub fn rms_position(&self) -> f64 {
        (self.trace() / self.targets() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrlbOptions {
    /// Keep the `∂ν/∂q` block of the position Jacobian. When false, Doppler
    /// sharpens `J(ρ)` but carries no position information.
    pub doppler_position_info: bool,
}

impl Default for CrlbOptions {
    fn default() -> Self {
        Self {
            doppler_position_info: true,
        }
    }
}

/// Model matrix `D`, column `i` = `b(θ_i)⊗(H_i·x)`.
pub fn build_d(paths: &[PathParams], x: &SymbolVector, waveform: &WaveformParams, array: &ArrayParams) -> ComplexMatrix {
    let kernel = ChannelKernel::new(waveform);
    let m = waveform.subcarriers;
    let nr = array.rx_antennas;
    let mut d = ComplexMatrix::zeros(m * nr, paths.len());
    for (i, p) in paths.iter().enumerate() {
        let hx = kernel.apply(x.as_slice(), p.tau, p.nu);
        let b = geometry::steering_rx(p.theta, array);
        fill_kron(&mut d, i, &b, &hx);
    }
    d
}

fn fill_kron(dst: &mut ComplexMatrix, col: usize, outer: &crate::ComplexVector, inner: &[Complex64]) {
    let m = inner.len();
    for (k, bk) in outer.iter().enumerate() {
        for (n, v) in inner.iter().enumerate() {
            dst[(k * m + n, col)] = bk * v;
        }
    }
}

/// `E = [∂D_i/∂θ_i …, ∂D_i/∂τ_i …, ∂D_i/∂ν_i …]`, `M·N_r × 3P`.
pub fn jacobian_e(paths: &[PathParams], x: &SymbolVector, waveform: &WaveformParams, array: &ArrayParams) -> ComplexMatrix {
    let kernel = ChannelKernel::new(waveform);
    let m = waveform.subcarriers;
    let nr = array.rx_antennas;
    let p = paths.len();
    let mut e = ComplexMatrix::zeros(m * nr, 3 * p);
    for (i, path) in paths.iter().enumerate() {
        let resp = kernel.apply_with_derivatives(x.as_slice(), path.tau, path.nu);
        let b = geometry::steering_rx(path.theta, array);
        let db = geometry::steering_rx_derivative(path.theta, array);
        fill_kron(&mut e, i, &db, &resp.value);
        fill_kron(&mut e, p + i, &b, &resp.d_tau);
        fill_kron(&mut e, 2 * p + i, &b, &resp.d_nu);
    }
    e
}

fn check_full_rank(gram: &ComplexMatrix) -> Result<()> {
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0 && min > 1e-12 * max) {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Channel-parameter FIM with gains concentrated out.
pub fn fim_channel(e: &ComplexMatrix, d: &ComplexMatrix, gains: &[Complex64], sigma2: f64) -> Result<DMatrix<f64>> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidParameter("noise variance must be positive".into()));
    }
    let p = d.ncols();
    if gains.len() != p || e.ncols() != 3 * p || e.nrows() != d.nrows() {
        return Err(Error::DimensionMismatch {
            expected: 3 * p,
            actual: e.ncols(),
        });
    }
    let gram = d.adjoint() * d;
    check_full_rank(&gram)?;
    let ed = e.adjoint() * d;
    let solved = gram.clone().lu().solve(&ed.adjoint()).ok_or(Error::RankDeficient)?;
    let g = e.adjoint() * e - &ed * solved;
    let scale = 2.0 / sigma2;
    let n = 3 * p;
    let mut j = DMatrix::from_fn(n, n, |a, b| {
        (g[(a, b)] * gains[a % p].conj() * gains[b % p]).re * scale
    });
    symmetrize(&mut j);
    Ok(j)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Position-to-channel-parameter Jacobian `∂ρ^T/∂η`, block-structured per target.
pub fn jacobian_t(scene: &Scene, array: &ArrayParams, options: &CrlbOptions) -> Result<DMatrix<f64>> {
    let p = scene.targets.len();
    let mut t = DMatrix::zeros(2 * p, 3 * p);
    let doppler_scale = 2.0 * array.carrier_frequency / SPEED_OF_LIGHT;
    for (i, target) in scene.targets.iter().enumerate() {
        let k = geometry::kinematics(target, scene.bs_position, array.carrier_frequency)?;
        let (s, c) = k.theta.sin_cos();
        let u = [s, c];
        let u_perp = [c, -s];
        let v_perp = target.velocity[0] * u_perp[0] + target.velocity[1] * u_perp[1];
        for axis in 0..2 {
            let row = 2 * i + axis;
            t[(row, i)] = u_perp[axis] / k.range;
            t[(row, p + i)] = 2.0 / SPEED_OF_LIGHT * u[axis];
            if options.doppler_position_info {
                t[(row, 2 * p + i)] = doppler_scale * v_perp * u_perp[axis] / k.range;
            }
        }
    }
    Ok(t)
}

/// Inverse of a symmetric positive definite matrix after diagonal
/// equilibration; fails when the equilibrated condition number exceeds
/// [`MAX_CONDITION`].
pub fn invert_fisher(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = j.nrows();
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Fisher information"));
    }
    let diag: Vec<f64> = (0..n).map(|i| j[(i, i)]).collect();
    if diag.iter().any(|d| *d <= 0.0) {
        return Err(Error::Unobservable { condition: f64::INFINITY });
    }
    let s: Vec<f64> = diag.iter().map(|d| d.sqrt().recip()).collect();
    let mut scaled = DMatrix::from_fn(n, n, |a, b| j[(a, b)] * s[a] * s[b]);
    symmetrize(&mut scaled);
    let eig = SymmetricEigen::new(scaled.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::Unobservable { condition });
    }
    let inv = scaled
        .cholesky()
        .ok_or(Error::Unobservable { condition })?
        .inverse();
    let mut out = DMatrix::from_fn(n, n, |a, b| inv[(a, b)] * s[a] * s[b]);
    symmetrize(&mut out);
    Ok(out)
}

fn scene_paths(scene: &Scene, waveform: &WaveformParams, array: &ArrayParams) -> Result<Vec<PathParams>> {
    scene
        .targets
        .iter()
        .map(|t| geometry::target_to_path(t, scene, array, waveform))
        .collect()
}

/// Position CRLB of all targets for known symbols and true channel parameters.
pub fn crlb_position(
    scene: &Scene,
    x: &SymbolVector,
    waveform: &WaveformParams,
    array: &ArrayParams,
    sigma2: f64,
    options: &CrlbOptions,
) -> Result<FimReport> {
    scene.validate()?;
    let paths = scene_paths(scene, waveform, array)?;
    let d = build_d(&paths, x, waveform, array);
    let e = jacobian_e(&paths, x, waveform, array);
    let gains: Vec<Complex64> = paths.iter().map(|p| p.gain).collect();
    let j_rho = fim_channel(&e, &d, &gains, sigma2)?;
    let t_jac = jacobian_t(scene, array, options)?;
    let mut j_eta = &t_jac * &j_rho * t_jac.transpose();
    symmetrize(&mut j_eta);
    let crlb = invert_fisher(&j_eta)?;
    Ok(FimReport {
        j_rho,
        j_eta,
        crlb,
        t_jac,
    })
}

/// Position CRLB when angle, delay and Doppler are all unknown nuisance-free
/// parameters: the full channel CRLB `J(ρ)^{-1}` mapped through the
/// angle/delay-to-position Jacobian. Unlike [`crlb_position`], Doppler
/// uncertainty is marginalized rather than tied to position.
pub fn crlb_position_unknown_doppler(
    scene: &Scene,
    x: &SymbolVector,
    waveform: &WaveformParams,
    array: &ArrayParams,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    scene.validate()?;
    let paths = scene_paths(scene, waveform, array)?;
    let d = build_d(&paths, x, waveform, array);
    let e = jacobian_e(&paths, x, waveform, array);
    let gains: Vec<Complex64> = paths.iter().map(|p| p.gain).collect();
    let cov = invert_fisher(&fim_channel(&e, &d, &gains, sigma2)?)?;
    let p = paths.len();
    let mut g = DMatrix::zeros(2 * p, 3 * p);
    for (i, path) in paths.iter().enumerate() {
        let (s, c) = path.theta.sin_cos();
        let r = SPEED_OF_LIGHT * path.tau / 2.0;
        g[(2 * i, i)] = r * c;
        g[(2 * i + 1, i)] = -r * s;
        g[(2 * i, p + i)] = SPEED_OF_LIGHT / 2.0 * s;
        g[(2 * i + 1, p + i)] = SPEED_OF_LIGHT / 2.0 * c;
    }
    let mut out = &g * cov * g.transpose();
    symmetrize(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct C2Search {
    /// Lower end of the coarse grid (included).
    pub lo: f64,
    /// Upper end of the coarse grid (excluded).
    pub hi: f64,
    /// Coarse grid step; `None` uses `1/(2M²)`.
    pub resolution: Option<f64>,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Golden-section evaluations spent polishing the best grid point.
    pub polish_evaluations: usize,
}

impl Default for C2Search {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            resolution: None,
            budget: 8192 + 40,
            polish_evaluations: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Optimum {
    pub c2: f64,
    /// Trace of the position CRLB at `c2`, m².
    pub objective: f64,
    /// Trace of the position CRLB at `c2 = 0`.
    pub baseline: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Chooses `c2` to minimize the trace of the position CRLB for fixed symbols
/// and known channel parameters: a coarse grid (which contains `lo`) followed
/// by golden-section polishing around the best grid point.
pub fn optimize_c2(
    scene: &Scene,
    x: &SymbolVector,
    waveform: &WaveformParams,
    array: &ArrayParams,
    sigma2: f64,
    search: &C2Search,
    options: &CrlbOptions,
) -> Result<C2Optimum> {
    let m = waveform.subcarriers as f64;
    let step = search.resolution.unwrap_or(1.0 / (2.0 * m * m));
    if !(step > 0.0 && search.hi > search.lo) || search.budget == 0 {
        return Err(Error::EmptyGrid("c2 search range is empty".into()));
    }
    let objective = |c2: f64| -> f64 {
        let wf = WaveformParams { c2, ..*waveform };
        match crlb_position(scene, x, &wf, array, sigma2, options) {
            Ok(r) => r.trace(),
            Err(_) => f64::INFINITY,
        }
    };
    let baseline = {
        let wf = WaveformParams { c2: 0.0, ..*waveform };
        crlb_position(scene, x, &wf, array, sigma2, options)?.trace()
    };

    let full_grid = ((search.hi - search.lo) / step - 1e-9).ceil().max(1.0) as usize;
    let grid_len = full_grid.min(search.budget);
    let mut exhausted = grid_len < full_grid;
    let values: Vec<f64> = (0..grid_len)
        .into_par_iter()
        .map(|k| objective(search.lo + k as f64 * step))
        .collect();
    let mut evaluations = grid_len;
    let (best_k, mut best) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, v)| if *v < acc.1 { (k, *v) } else { acc });
    let mut best_c2 = search.lo + best_k as f64 * step;

    // golden-section polish on [best - step, best + step]
    let polish = search.polish_evaluations.min(search.budget - evaluations);
    if polish < search.polish_evaluations {
        exhausted = true;
    }
    if polish >= 2 && best.is_finite() {
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (best_c2 - step, best_c2 + step);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (objective(c), objective(d));
        evaluations += 2;
        for _ in 2..polish {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = objective(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = objective(d);
            }
            evaluations += 1;
        }
        for (x_c, f_c) in [(c, fc), (d, fd)] {
            if f_c < best {
                best = f_c;
                best_c2 = x_c;
            }
        }
    }
    Ok(C2Optimum {
        c2: best_c2,
        objective: best,
        baseline,
        evaluations,
        budget_exhausted: exhausted,
    })
}
