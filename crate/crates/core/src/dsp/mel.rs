//! Mel-scale conversions (HTK 2595/700 form) and triangular filterbank
//! matrix construction.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::DspError;
use crate::fmath;

/// Hz -> mel, m = 2595 * log10(1 + f / 700).
pub fn hz_to_mel(f: f64) -> Result<f64, DspError> {
    if !(f >= 0.0) {
        return Err(DspError::InvalidArgument(String::from(
            "frequency must be non-negative",
        )));
    }
    Ok(2595.0 * fmath::log10(1.0 + f / 700.0))
}

/// Mel -> Hz, inverse of [`hz_to_mel`].
pub fn mel_to_hz(m: f64) -> Result<f64, DspError> {
    if !(m >= 0.0) {
        return Err(DspError::InvalidArgument(String::from(
            "mel value must be non-negative",
        )));
    }
    Ok(700.0 * (fmath::powf(10.0, m / 2595.0) - 1.0))
}

/// Center frequencies (Hz) of `n_mels` triangles spanning [f_min, f_max]:
/// the interior points of a uniform grid of `n_mels + 2` mel values.
pub fn mel_center_frequencies(
    n_mels: usize,
    f_min: f64,
    f_max: f64,
) -> Result<Vec<f64>, DspError> {
    Ok(mel_band_edges(n_mels, f_min, f_max)?[1..=n_mels].to_vec())
}

/// All `n_mels + 2` band-edge frequencies (Hz) of the triangle grid.
/// Triangle `i` spans `[edges[i], edges[i+2]]` with its peak at
/// `edges[i+1]`.
pub fn mel_band_edges(n_mels: usize, f_min: f64, f_max: f64) -> Result<Vec<f64>, DspError> {
    if n_mels == 0 {
        return Err(DspError::InvalidArgument(String::from(
            "n_mels must be at least 1",
        )));
    }
    if !(f_min >= 0.0 && f_min < f_max) {
        return Err(DspError::InvalidArgument(String::from(
            "need 0 <= f_min < f_max",
        )));
    }
    let m_lo = hz_to_mel(f_min)?;
    let m_hi = hz_to_mel(f_max)?;
    (0..n_mels + 2)
        .map(|i| {
            // Pin the outer edges exactly so grids built from [f_min, f_max]
            // reproduce those bounds without roundtrip error.
            if i == 0 {
                Ok(f_min)
            } else if i == n_mels + 1 {
                Ok(f_max)
            } else {
                let m = m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64;
                mel_to_hz(m)
            }
        })
        .collect()
}

/// Triangular mel filterbank matrix, `n_mels` rows by `n_fft/2 + 1`
/// columns; row peaks are at mel-uniform centers, weights outside each
/// triangle's support are exactly zero.
pub fn mel_filterbank_matrix(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<Vec<Vec<f64>>, DspError> {
    if f_max > sample_rate as f64 / 2.0 {
        return Err(DspError::InvalidArgument(String::from(
            "f_max must not exceed the Nyquist frequency",
        )));
    }
    if n_fft < 2 {
        return Err(DspError::InvalidArgument(String::from(
            "n_fft must be at least 2",
        )));
    }
    let edges = mel_band_edges(n_mels, f_min, f_max)?;
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut mat = vec![vec![0.0; n_bins]; n_mels];
    for (i, row) in mat.iter_mut().enumerate() {
        let (left, center, right) = (edges[i], edges[i + 1], edges[i + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > left && f < right {
                *w = if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
            }
        }
    }
    Ok(mat)
}
