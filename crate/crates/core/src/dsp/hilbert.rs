//! Discrete Hilbert transform via the FFT analytic-signal construction:
//! double the strictly positive frequency bins, zero the strictly negative
//! ones, keep DC and Nyquist untouched, inverse-transform and take the
//! imaginary part. The result `h_hat` makes `h + j*h_hat` analytic in the
//! DFT sense: its spectrum is exactly zero on negative-frequency bins.

use alloc::string::String;
use alloc::vec::Vec;
use num_complex::Complex64;

use super::fft::{fft_real, ifft};
use super::DspError;

/// Hilbert transform of a real sequence (length >= 2).
///
/// The transform is linear and anti-self-adjoint: `<hilbert(a), b> =
/// -<a, hilbert(b)>`, which is what backpropagation through analytic
/// filter pairs relies on.
pub fn hilbert(h: &[f64]) -> Result<Vec<f64>, DspError> {
    let n = h.len();
    if n < 2 {
        return Err(DspError::InvalidArgument(String::from(
            "hilbert transform needs at least 2 samples",
        )));
    }
    let mut spec = fft_real(h)?;
    apply_analytic_mask(&mut spec);
    let analytic = ifft(&spec)?;
    Ok(analytic.iter().map(|c| c.im).collect())
}

/// In-place analytic-signal mask: bins (0, n/2) doubled, DC and Nyquist
/// kept, negative-frequency bins zeroed.
pub(crate) fn apply_analytic_mask(spec: &mut [Complex64]) {
    let n = spec.len();
    let half = n / 2;
    let upper = if n % 2 == 0 { half } else { half + 1 };
    for bin in spec.iter_mut().take(upper).skip(1) {
        *bin *= 2.0;
    }
    for bin in spec.iter_mut().skip(if n % 2 == 0 { half + 1 } else { upper }) {
        *bin = Complex64::new(0.0, 0.0);
    }
}
