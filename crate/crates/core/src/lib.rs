//! Localization with AFT-MC (affine Fourier transform multicarrier) chirp
//! waveforms over a continuous delay/Doppler MIMO channel.

pub mod channel;
pub mod cli;
pub mod config;
pub mod crlb;
pub mod dsp;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod waveform;

pub use error::{Error, Result};

// The book's Rust snippets run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/waveform.md")]
    mod waveform {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/limitations.md")]
    mod limitations {}
}

/// Dense complex matrix, the signal-domain currency of the crate.
pub type ComplexMatrix = nalgebra::DMatrix<num_complex::Complex64>;
/// Dense complex column vector.
pub type ComplexVector = nalgebra::DVector<num_complex::Complex64>;
