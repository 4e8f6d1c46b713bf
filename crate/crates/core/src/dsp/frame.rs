//! Framing and window functions for the spectral baseline path.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{DspError, Waveform};
use crate::fmath;

/// Split a waveform into frames of `frame_len` samples spaced `hop` apart.
/// Frame `i` covers samples `[i*hop, i*hop + frame_len)`; a trailing partial
/// frame is dropped. A signal shorter than one frame yields no frames.
pub fn frame(signal: &Waveform, frame_len: usize, hop: usize) -> Result<Vec<Vec<f64>>, DspError> {
    if frame_len == 0 || hop == 0 {
        return Err(DspError::InvalidArgument(String::from(
            "frame_len and hop must be at least 1",
        )));
    }
    let n = signal.samples.len();
    if n < frame_len {
        return Ok(Vec::new());
    }
    let n_frames = (n - frame_len) / hop + 1;
    let mut out = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * hop;
        out.push(signal.samples[start..start + frame_len].to_vec());
    }
    Ok(out)
}

/// Periodic-symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![1.0];
    }
    (0..n)
        .map(|k| 0.54 - 0.46 * fmath::cos(2.0 * PI * k as f64 / (n - 1) as f64))
        .collect()
}
