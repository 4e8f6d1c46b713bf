//! Complex FFT for arbitrary transform sizes: iterative radix-2 for powers
//! of two, Bluestein's chirp-z algorithm for everything else (400, the
//! canonical filter length, is not a power of two).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;

use super::DspError;
use crate::fmath;

/// Smallest power of two >= n.
pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Forward DFT of a complex sequence. Supports any length >= 1.
pub fn fft(input: &[Complex64]) -> Result<Vec<Complex64>, DspError> {
    if input.is_empty() {
        return Err(DspError::InvalidArgument(String::from(
            "fft input must be non-empty",
        )));
    }
    let n = input.len();
    let mut buf = input.to_vec();
    if n.is_power_of_two() {
        radix2_in_place(&mut buf, false);
    } else {
        buf = bluestein(&buf, false);
    }
    Ok(buf)
}

/// Inverse DFT, normalized so that `ifft(fft(x)) == x`.
pub fn ifft(input: &[Complex64]) -> Result<Vec<Complex64>, DspError> {
    if input.is_empty() {
        return Err(DspError::InvalidArgument(String::from(
            "ifft input must be non-empty",
        )));
    }
    let n = input.len();
    let mut buf = input.to_vec();
    if n.is_power_of_two() {
        radix2_in_place(&mut buf, true);
    } else {
        buf = bluestein(&buf, true);
    }
    let scale = 1.0 / n as f64;
    for v in &mut buf {
        *v *= scale;
    }
    Ok(buf)
}

/// Forward DFT of a real sequence.
pub fn fft_real(input: &[f64]) -> Result<Vec<Complex64>, DspError> {
    let buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft(&buf)
}

fn radix2_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let wlen = Complex64::new(fmath::cos(ang), fmath::sin(ang));
        let half = len / 2;
        let mut i = 0;
        while i < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..half {
                let u = buf[i + k];
                let v = buf[i + k + half] * w;
                buf[i + k] = u + v;
                buf[i + k + half] = u - v;
                w *= wlen;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Chirp-z transform: expresses a length-n DFT as a circular convolution of
/// size m = next_pow2(2n - 1), evaluated with the radix-2 kernel. Chirp
/// phases are reduced modulo 2n before the trig call so large indices do not
/// lose precision.
fn bluestein(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let m = next_pow2(2 * n - 1);
    let sign = if inverse { 1.0 } else { -1.0 };

    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k = k as u64;
            let q = (k * k) % (2 * n as u64);
            let ang = sign * PI * q as f64 / n as f64;
            Complex64::new(fmath::cos(ang), fmath::sin(ang))
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = input[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        let c = chirp[k].conj();
        b[k] = c;
        b[m - k] = c;
    }

    radix2_in_place(&mut a, false);
    radix2_in_place(&mut b, false);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x *= *y;
    }
    radix2_in_place(&mut a, true);
    let scale = 1.0 / m as f64;

    (0..n).map(|k| a[k] * scale * chirp[k]).collect()
}
