//! Deterministic signal-processing primitives shared by all front-ends:
//! FFT, Hilbert transform, framing, window functions and mel-scale
//! conversions. Everything runs at 64-bit precision and is a pure function,
//! so concurrent use is safe.

mod fft;
mod frame;
mod hilbert;
mod mel;

pub use fft::{fft, fft_real, ifft, next_pow2};
pub use frame::{frame, hamming};
pub use hilbert::hilbert;
pub use mel::{hz_to_mel, mel_band_edges, mel_center_frequencies, mel_filterbank_matrix, mel_to_hz};

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// A real-valued sample sequence at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Canonical sample rate for this toolkit.
    pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidArgument(String::from(
                "sample_rate must be positive",
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(DspError::InvalidArgument(String::from(
                "waveform samples must be finite",
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DspError {
    InvalidArgument(String),
}

impl fmt::Display for DspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DspError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for DspError {}
