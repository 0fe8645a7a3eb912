//! Small numeric helpers shared by the signal-domain modules.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::ComplexMatrix;

/// `exp(j 2π cycles)`, with the integer part removed first so that large
/// arguments (e.g. `c·m²` for big `m`) keep full phase precision.
#[inline]
pub fn expj_cycles(cycles: f64) -> Complex64 {
    let frac = cycles - cycles.round();
    Complex64::from_polar(1.0, TAU * frac)
}

/// Unitary `M`-point DFT matrix, `F[k, n] = e^{-j2πkn/M} / √M`.
pub fn dft_matrix(m: usize) -> ComplexMatrix {
    let scale = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, m, |k, n| {
        let kn = (k * n) % m;
        expj_cycles(-(kn as f64) / m as f64) * scale
    })
}

/// Unitary FFT pair of a fixed length.
#[derive(Clone)]
pub struct UnitaryDft {
    len: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for UnitaryDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryDft").field("len", &self.len).finish()
    }
}

impl UnitaryDft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            scale: 1.0 / (len as f64).sqrt(),
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place `F·v`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    /// In-place `F^H·v`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_matches_matrix() {
        let m = 16;
        let f = dft_matrix(m);
        let dft = UnitaryDft::new(m);
        let v: Vec<Complex64> = (0..m)
            .map(|i| Complex64::new(i as f64 * 0.3 - 1.0, (i * i) as f64 * 0.01))
            .collect();
        let expected = &f * nalgebra::DVector::from_column_slice(&v);
        let mut got = v.clone();
        dft.forward(&mut got);
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        dft.inverse(&mut got);
        for (a, b) in got.iter().zip(v.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn expj_reduces_large_arguments() {
        let z = expj_cycles(1e6 + 0.25);
        assert!((z - Complex64::new(0.0, 1.0)).norm() < 1e-9);
    }
}
