//! AFT-MC modulation: the discrete affine Fourier transform (DAFT), the
//! chirp-periodic prefix, and a direct-summation model of the continuous
//! transmit signal.
//!
//! The DAFT matrix is `A = Λ(c2)·F·Λ(c1)` with `Λ(c) = diag(e^{-j2πc·m²})`
//! and `F` the unitary DFT. Modulation is `s = A^H x`, demodulation `x = A s`.
//! With `c1 = c2 = 0` the waveform is plain OFDM.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{dft_matrix, expj_cycles};
use crate::error::{Error, Result};
use crate::{ComplexMatrix, ComplexVector};

/// Parameters of one AFT-MC symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformParams {
    /// Number of chirp subcarriers `M`.
    pub subcarriers: usize,
    /// Chirp-slope parameter (dimensionless).
    pub c1: f64,
    /// Symbol-phase parameter (dimensionless).
    pub c2: f64,
    /// Symbol duration `T` in seconds.
    pub symbol_duration: f64,
    /// Prefix length `L` in samples.
    pub cpp_len: usize,
    /// QAM constellation size.
    pub qam_order: u32,
}

impl Default for WaveformParams {
    /// 64 subcarriers at 15 kHz spacing with a 16-sample prefix, 16-QAM, OFDM chirp settings.
    fn default() -> Self {
        Self {
            subcarriers: 64,
            c1: 0.0,
            c2: 0.0,
            symbol_duration: 1.0 / 15e3,
            cpp_len: 16,
            qam_order: 16,
        }
    }
}

impl WaveformParams {
    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 {
            return Err(Error::InvalidParameter("subcarrier count must be >= 1".into()));
        }
        if !(self.symbol_duration.is_finite() && self.symbol_duration > 0.0) {
            return Err(Error::InvalidParameter("symbol duration must be positive".into()));
        }
        if self.cpp_len >= self.subcarriers {
            return Err(Error::InvalidParameter(format!(
                "prefix length {} must be shorter than the symbol ({} samples)",
                self.cpp_len, self.subcarriers
            )));
        }
        if !(self.c1.is_finite() && self.c2.is_finite()) {
            return Err(Error::InvalidParameter("chirp parameters must be finite".into()));
        }
        if !matches!(self.qam_order, 4 | 16 | 64) {
            return Err(Error::UnsupportedQamOrder(self.qam_order));
        }
        Ok(())
    }

    pub fn with_chirp(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    /// `Δf = 1/T`.
    pub fn subcarrier_spacing(&self) -> f64 {
        1.0 / self.symbol_duration
    }

    /// `T/M`.
    pub fn sample_period(&self) -> f64 {
        self.symbol_duration / self.subcarriers as f64
    }

    /// `T_cpp = L·T/M`.
    pub fn cpp_duration(&self) -> f64 {
        self.cpp_len as f64 * self.sample_period()
    }
}

/// Unit-average-energy QAM symbols, one per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector(ComplexVector);

impl SymbolVector {
    pub fn new(symbols: ComplexVector) -> Self {
        Self(symbols)
    }

    pub fn from_slice(symbols: &[Complex64]) -> Self {
        Self(DVector::from_column_slice(symbols))
    }

    /// Unit impulse on subcarrier `index`.
    pub fn impulse(len: usize, index: usize) -> Self {
        let mut v = DVector::zeros(len);
        v[index] = Complex64::new(1.0, 0.0);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &ComplexVector {
        &self.0
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> ComplexVector {
        self.0
    }
}

impl std::ops::Deref for SymbolVector {
    type Target = ComplexVector;

    fn deref(&self) -> &ComplexVector {
        &self.0
    }
}

/// Diagonal of `Λ(c) = diag(e^{-j2πc·m²})`, `m = 0..M`.
pub fn chirp_diagonal(c: f64, m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|k| {
            let k = k as f64;
            expj_cycles(-c * k * k)
        })
        .collect()
}

/// The `M×M` DAFT matrix `A = Λ(c2)·F·Λ(c1)`.
pub fn daft_matrix(params: &WaveformParams) -> ComplexMatrix {
    let m = params.subcarriers;
    let l1 = chirp_diagonal(params.c1, m);
    let l2 = chirp_diagonal(params.c2, m);
    let mut a = dft_matrix(m);
    for ((r, c), v) in a.iter_mut().enumerate().map(|(i, v)| ((i % m, i / m), v)) {
        *v *= l2[r] * l1[c];
    }
    a
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Time-domain symbol `s = A^H x` (no prefix).
pub fn modulate(x: &SymbolVector, params: &WaveformParams) -> Result<ComplexVector> {
    check_len(params.subcarriers, x.len())?;
    Ok(daft_matrix(params).adjoint() * x.as_vector())
}

/// `x = A s` for a single prefix-free symbol.
pub fn demodulate_vector(s: &ComplexVector, params: &WaveformParams) -> Result<ComplexVector> {
    check_len(params.subcarriers, s.len())?;
    Ok(daft_matrix(params) * s)
}

/// Column-wise DAFT of a prefix-free receive block, `Y = A·R`.
pub fn demodulate(r: &ComplexMatrix, params: &WaveformParams) -> Result<ComplexMatrix> {
    check_len(params.subcarriers, r.nrows())?;
    Ok(daft_matrix(params) * r)
}

/// Prepends the chirp-periodic prefix.
///
/// Prefix sample `k` (for `k < L`) is the tail sample `s[M-L+k]` rotated by
/// `e^{-j2πc1(M² + 2M(k-L))}`, so the extended block keeps chirp periodicity.
pub fn add_cpp(s: &ComplexVector, params: &WaveformParams) -> Result<ComplexVector> {
    let m = params.subcarriers;
    let l = params.cpp_len;
    check_len(m, s.len())?;
    if l >= m {
        return Err(Error::InvalidParameter(format!("prefix length {l} >= symbol length {m}")));
    }
    let mf = m as f64;
    let mut out = DVector::zeros(m + l);
    for k in 0..l {
        let offset = k as f64 - l as f64;
        let phase = expj_cycles(-params.c1 * (mf * mf + 2.0 * mf * offset));
        out[k] = s[m - l + k] * phase;
    }
    out.rows_mut(l, m).copy_from(s);
    Ok(out)
}

/// Direct evaluation of the prefix-extended analog symbol at time `t`.
///
/// On `[0, T]` this is the chirp-subcarrier sum; on `[-T_cpp, 0)` it is the
/// tail value `s(t+T)` times `e^{-j2πc1(M² + 2M·t·M/T)}`, the continuous-time
/// form of the discrete prefix rotation.
pub fn continuous_signal(x: &SymbolVector, params: &WaveformParams, t: f64) -> Result<Complex64> {
    check_len(params.subcarriers, x.len())?;
    let period = params.symbol_duration;
    let lo = -params.cpp_duration();
    if !(t >= lo && t <= period) {
        return Err(Error::TimeOutOfRange { t, lo, hi: period });
    }
    if t >= 0.0 {
        return Ok(chirp_sum(x, params, t));
    }
    let mf = params.subcarriers as f64;
    let t_samples = t * mf / period;
    let phase = expj_cycles(-params.c1 * (mf * mf + 2.0 * mf * t_samples));
    Ok(chirp_sum(x, params, t + period) * phase)
}

fn chirp_sum(x: &SymbolVector, params: &WaveformParams, t: f64) -> Complex64 {
    let m = params.subcarriers;
    let mf = m as f64;
    let u = t / params.symbol_duration;
    let sweep = params.c1 * mf * mf * u * u;
    let acc: Complex64 = x
        .iter()
        .enumerate()
        .map(|(k, xk)| {
            let kf = k as f64;
            xk * expj_cycles(params.c2 * kf * kf + kf * u + sweep)
        })
        .sum();
    acc / mf.sqrt()
}

/// Normalized square QAM alphabet of the given order.
pub fn qam_alphabet(order: u32) -> Result<Vec<Complex64>> {
    let side = match order {
        4 => 2,
        16 => 4,
        64 => 8,
        other => return Err(Error::UnsupportedQamOrder(other)),
    };
    // mean energy of a side×side grid with levels ±1, ±3, ... is 2(side²-1)/3
    let scale = (2.0 * ((side * side - 1) as f64) / 3.0).sqrt().recip();
    let level = |i: usize| (2 * i) as f64 - (side - 1) as f64;
    Ok((0..side)
        .flat_map(|i| (0..side).map(move |q| (i, q)))
        .map(|(i, q)| Complex64::new(level(i), level(q)) * scale)
        .collect())
}

/// Draws `count` symbols uniformly from the QAM alphabet using a seeded generator.
pub fn qam_symbols(order: u32, count: usize, seed: u64) -> Result<SymbolVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    qam_symbols_from(order, count, &mut rng)
}

pub fn qam_symbols_from<R: Rng + ?Sized>(
    order: u32,
    count: usize,
    rng: &mut R,
) -> Result<SymbolVector> {
    let alphabet = qam_alphabet(order)?;
    let symbols = (0..count)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect::<Vec<_>>();
    Ok(SymbolVector::from_slice(&symbols))
}
