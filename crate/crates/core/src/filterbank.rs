//! Learnable waveform front-ends: non-parametric (Gabor-initialized) and
//! parametric sinc filterbanks, their analytic (Hilbert-pair) extension, the
//! fixed mel-spectrum baseline, and magnitude-response computation for
//! export.
//!
//! The forward pass is written once, on autodiff tensors; the plain numeric
//! API routes through the same graph with constant inputs, so training and
//! inference cannot drift apart.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::autodiff::{Tensor, TensorError};
use crate::dsp::{self, DspError, Waveform};
use crate::fmath;

/// Stabilizer inside the log compression and L2 pooling.
pub const EPSILON: f64 = 1e-6;

/// Canonical front-end geometry: 30 filters of 400 samples (25 ms at
/// 16 kHz), stride 5.
pub const DEFAULT_N_FILTERS: usize = 30;
pub const DEFAULT_FILTER_LEN: usize = 400;
pub const DEFAULT_STRIDE: usize = 5;

/// Floor applied to |f_low| and |bandwidth| of sinc filters (Hz).
pub const SINC_MIN_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Real filters; features are log(|y| + eps).
    Real,
    /// Analytic pairs: imaginary parts are recomputed from the real parts by
    /// the Hilbert transform on every forward pass, and features are
    /// log(sqrt(y_re^2 + y_im^2 + eps^2)).
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    NonParametric,
    Sinc,
}

/// Per-filter sinc parameters (trained values may be any real number; the
/// clamping rule makes every state valid).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SincParams {
    pub f_low: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone)]
pub struct FilterBank {
    /// Learnable real parts, row-major [n_filters * filter_len]. For sinc
    /// banks this is a cache materialized from `sinc_params`.
    pub weights: Vec<f64>,
    pub n_filters: usize,
    pub filter_len: usize,
    pub mode: FilterMode,
    pub parameterization: Parameterization,
    pub sinc_params: Option<Vec<SincParams>>,
    pub stride: usize,
    pub sample_rate: u32,
}

/// Log-magnitude feature map produced by a waveform front-end, row-major
/// [n_filters * n_frames].
#[derive(Debug, Clone)]
pub struct Wavegram {
    pub features: Vec<f64>,
    pub n_filters: usize,
    pub n_frames: usize,
    /// Samples advanced per output frame.
    pub hop_equivalent: usize,
}

impl Wavegram {
    pub fn row(&self, filter: usize) -> &[f64] {
        &self.features[filter * self.n_frames..(filter + 1) * self.n_frames]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterbankError {
    InvalidArgument(String),
}

impl fmt::Display for FilterbankError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterbankError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for FilterbankError {}

impl From<DspError> for FilterbankError {
    fn from(e: DspError) -> Self {
        FilterbankError::InvalidArgument(format!("{e}"))
    }
}

impl From<TensorError> for FilterbankError {
    fn from(e: TensorError) -> Self {
        FilterbankError::InvalidArgument(format!("{e}"))
    }
}

impl FilterBank {
    /// Non-parametric bank initialized with Gabor wavelets: filter `i` is a
    /// Gaussian-windowed cosine centered (in time) at `filter_len / 2`,
    /// peak-normalized, with center frequency equal to the i-th mel
    /// filterbank center and the Gaussian width chosen so the -3 dB
    /// bandwidth of the amplitude response equals the i-th mel triangle's
    /// width at half maximum (half its base).
    pub fn gabor_init(
        n_filters: usize,
        filter_len: usize,
        sample_rate: u32,
    ) -> Result<FilterBank, FilterbankError> {
        check_geometry(n_filters, filter_len)?;
        let nyquist = sample_rate as f64 / 2.0;
        let edges = dsp::mel_band_edges(n_filters, 0.0, nyquist)?;
        let center_samples = (filter_len / 2) as f64;
        let mut weights = vec![0.0; n_filters * filter_len];
        for i in 0..n_filters {
            let center_hz = edges[i + 1];
            let width_hz = (edges[i + 2] - edges[i]) / 2.0;
            let sigma_s = fmath::sqrt(core::f64::consts::LN_2) / (PI * width_hz)
                * sample_rate as f64;
            let row = &mut weights[i * filter_len..(i + 1) * filter_len];
            let omega = 2.0 * PI * center_hz / sample_rate as f64;
            for (k, w) in row.iter_mut().enumerate() {
                let t = k as f64 - center_samples;
                *w = fmath::exp(-t * t / (2.0 * sigma_s * sigma_s)) * fmath::cos(omega * t);
            }
            let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 {
                for w in row.iter_mut() {
                    *w /= peak;
                }
            }
        }
        Ok(FilterBank {
            weights,
            n_filters,
            filter_len,
            mode: FilterMode::Real,
            parameterization: Parameterization::NonParametric,
            sinc_params: None,
            stride: DEFAULT_STRIDE,
            sample_rate,
        })
    }

    /// Parametric sinc bank with (f_low, bandwidth) initialized to the mel
    /// triangle band edges of `n_filters` bands spanning 50 Hz to Nyquist.
    pub fn sinc_init(
        n_filters: usize,
        filter_len: usize,
        sample_rate: u32,
    ) -> Result<FilterBank, FilterbankError> {
        check_geometry(n_filters, filter_len)?;
        let nyquist = sample_rate as f64 / 2.0;
        let edges = dsp::mel_band_edges(n_filters, SINC_MIN_HZ, nyquist)?;
        let params: Vec<SincParams> = (0..n_filters)
            .map(|i| SincParams {
                f_low: edges[i],
                bandwidth: edges[i + 2] - edges[i],
            })
            .collect();
        FilterBank::from_sinc_params(params, filter_len, sample_rate, DEFAULT_STRIDE)
    }

    /// Rebuild a non-parametric bank from trained weights.
    pub fn from_weights(
        weights: Vec<f64>,
        n_filters: usize,
        filter_len: usize,
        sample_rate: u32,
        stride: usize,
    ) -> Result<FilterBank, FilterbankError> {
        check_geometry(n_filters, filter_len)?;
        if weights.len() != n_filters * filter_len {
            return Err(FilterbankError::InvalidArgument(format!(
                "weight buffer has {} values, expected {}",
                weights.len(),
                n_filters * filter_len
            )));
        }
        Ok(FilterBank {
            weights,
            n_filters,
            filter_len,
            mode: FilterMode::Real,
            parameterization: Parameterization::NonParametric,
            sinc_params: None,
            stride,
            sample_rate,
        })
    }

    /// Rebuild a sinc bank from trained parameters; weights are materialized
    /// through the clamping rule.
    pub fn from_sinc_params(
        params: Vec<SincParams>,
        filter_len: usize,
        sample_rate: u32,
        stride: usize,
    ) -> Result<FilterBank, FilterbankError> {
        let n_filters = params.len();
        check_geometry(n_filters, filter_len)?;
        let mut bank = FilterBank {
            weights: Vec::new(),
            n_filters,
            filter_len,
            mode: FilterMode::Real,
            parameterization: Parameterization::Sinc,
            sinc_params: Some(params),
            stride,
            sample_rate,
        };
        bank.weights = bank.materialized_weights()?;
        Ok(bank)
    }

    pub fn with_mode(mut self, mode: FilterMode) -> FilterBank {
        self.mode = mode;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> FilterBank {
        self.stride = stride;
        self
    }

    pub fn filter(&self, i: usize) -> &[f64] {
        &self.weights[i * self.filter_len..(i + 1) * self.filter_len]
    }

    /// Number of learnable parameters. Analytic mode stores no imaginary
    /// parts (they are inferred by the Hilbert transform), so the count does
    /// not depend on the mode.
    pub fn learnable_parameter_count(&self) -> usize {
        match self.parameterization {
            Parameterization::NonParametric => self.n_filters * self.filter_len,
            Parameterization::Sinc => self.n_filters * 2,
        }
    }

    /// Effective real filter weights: stored weights for non-parametric
    /// banks, clamped windowed-sinc construction for sinc banks.
    pub fn materialized_weights(&self) -> Result<Vec<f64>, FilterbankError> {
        match self.parameterization {
            Parameterization::NonParametric => Ok(self.weights.clone()),
            Parameterization::Sinc => {
                let params = self.sinc_params.as_ref().ok_or_else(|| {
                    FilterbankError::InvalidArgument(String::from(
                        "sinc bank has no parameters",
                    ))
                })?;
                let f_low: Vec<f64> = params.iter().map(|p| p.f_low).collect();
                let bw: Vec<f64> = params.iter().map(|p| p.bandwidth).collect();
                let w = sinc_weights_graph(
                    &Tensor::constant(&[self.n_filters, 1], f_low)?,
                    &Tensor::constant(&[self.n_filters, 1], bw)?,
                    self.filter_len,
                    self.sample_rate,
                )?;
                Ok(w.data())
            }
        }
    }

    /// The per-filter (real, imaginary) pairs of an analytic bank. The
    /// imaginary parts are recomputed from the current real parts, never
    /// stored.
    pub fn analytic_extend(&self) -> Result<Vec<(Vec<f64>, Vec<f64>)>, FilterbankError> {
        if self.mode != FilterMode::Analytic {
            return Err(FilterbankError::InvalidArgument(String::from(
                "analytic_extend requires an analytic-mode bank",
            )));
        }
        let weights = self.materialized_weights()?;
        (0..self.n_filters)
            .map(|i| {
                let re = weights[i * self.filter_len..(i + 1) * self.filter_len].to_vec();
                let im = dsp::hilbert(&re)?;
                Ok((re, im))
            })
            .collect()
    }
}

fn check_geometry(n_filters: usize, filter_len: usize) -> Result<(), FilterbankError> {
    if n_filters == 0 {
        return Err(FilterbankError::InvalidArgument(String::from(
            "need at least one filter",
        )));
    }
    if filter_len < 2 || filter_len % 2 != 0 {
        return Err(FilterbankError::InvalidArgument(format!(
            "filter_len must be even and at least 2, got {filter_len}"
        )));
    }
    Ok(())
}

/// One windowed-sinc band-pass filter with the clamping rule applied:
/// f_low <- max(|f_low|, 50), bandwidth <- max(|bandwidth|, 50),
/// f_low + bandwidth capped at Nyquist.
pub fn sinc_filter(
    f_low: f64,
    bandwidth: f64,
    filter_len: usize,
    sample_rate: u32,
) -> Result<Vec<f64>, FilterbankError> {
    check_geometry(1, filter_len)?;
    let w = sinc_weights_graph(
        &Tensor::constant(&[1, 1], vec![f_low])?,
        &Tensor::constant(&[1, 1], vec![bandwidth])?,
        filter_len,
        sample_rate,
    )?;
    Ok(w.data())
}

/// Differentiable windowed-sinc construction: `f_low` and `bw` are [n, 1]
/// tensors, the result is the [n, filter_len] weight matrix. Gradients flow
/// into both parameter tensors (zero where a clamp is active).
pub fn sinc_weights_graph(
    f_low: &Tensor,
    bw: &Tensor,
    filter_len: usize,
    sample_rate: u32,
) -> Result<Tensor, TensorError> {
    let sr = sample_rate as f64;
    let nyquist = sr / 2.0;
    let n = f_low.shape()[0];

    let f1 = f_low.abs().clamp(SINC_MIN_HZ, f64::INFINITY);
    let b = bw.abs().clamp(SINC_MIN_HZ, f64::INFINITY);
    let f2 = f1.add(&b)?.clamp(f64::NEG_INFINITY, nyquist);

    // Time axis centered on (filter_len - 1) / 2: for even lengths no sample
    // sits at t = 0, so (sin a - sin b) / (pi t) stays finite.
    let t_axis: Vec<f64> = (0..filter_len)
        .map(|k| (k as f64 - (filter_len as f64 - 1.0) / 2.0) / sr)
        .collect();
    let t_row = Tensor::constant(&[1, filter_len], t_axis.clone())?;

    let arg1 = f1.matmul(&t_row)?.mul_scalar(2.0 * PI);
    let arg2 = f2.matmul(&t_row)?.mul_scalar(2.0 * PI);
    let diff = arg2.sin().sub(&arg1.sin())?;

    // Per-tap gain hamming[k] / (pi * m_k) with m_k the half-integer sample
    // offset; the difference of the two sine terms then has unit passband
    // gain like the ideal windowed-sinc low-pass pair it comes from.
    let window = dsp::hamming(filter_len);
    let mut gain = Vec::with_capacity(n * filter_len);
    for _ in 0..n {
        for k in 0..filter_len {
            gain.push(window[k] / (PI * t_axis[k] * sr));
        }
    }
    let gain = Tensor::constant(&[n, filter_len], gain)?;
    diff.mul(&gain)
}

/// Differentiable front-end feature map: `x` is [1, L], `w_re` the [n, len]
/// real filter weights. Real mode computes log(|y| + eps); analytic mode
/// infers the imaginary filters with the Hilbert transform and L2-pools the
/// pair before the log.
pub fn frontend_graph(
    x: &Tensor,
    w_re: &Tensor,
    mode: FilterMode,
    stride: usize,
) -> Result<Tensor, TensorError> {
    let n = w_re.shape()[0];
    let len = w_re.shape()[1];
    let w3 = w_re.reshape(&[n, 1, len])?;
    let y_re = x.conv1d(&w3, stride, 1)?;
    match mode {
        FilterMode::Real => Ok(y_re.abs().add_scalar(EPSILON).log()),
        FilterMode::Analytic => {
            let w_im = w_re.hilbert_rows()?.reshape(&[n, 1, len])?;
            let y_im = x.conv1d(&w_im, stride, 1)?;
            Ok(y_re
                .square()
                .add(&y_im.square())?
                .add_scalar(EPSILON * EPSILON)
                .sqrt()
                .log())
        }
    }
}

/// Apply a filterbank to a waveform: valid strided cross-correlation with
/// every filter, then log-magnitude (real) or L2-pooled log-magnitude
/// (analytic) compression. Output frames: (len - filter_len) / stride + 1.
pub fn frontend_forward(x: &Waveform, bank: &FilterBank) -> Result<Wavegram, FilterbankError> {
    if x.len() < bank.filter_len {
        return Err(FilterbankError::InvalidArgument(format!(
            "input of {} samples is shorter than the filter length {}",
            x.len(),
            bank.filter_len
        )));
    }
    let weights = bank.materialized_weights()?;
    let x_t = Tensor::constant(&[1, x.len()], x.samples.clone())?;
    let w_t = Tensor::constant(&[bank.n_filters, bank.filter_len], weights)?;
    let features = frontend_graph(&x_t, &w_t, bank.mode, bank.stride)?;
    let n_frames = features.shape()[1];
    Ok(Wavegram {
        features: features.data(),
        n_filters: bank.n_filters,
        n_frames,
        hop_equivalent: bank.stride,
    })
}

/// Fixed mel-spectrum baseline: 400-sample Hamming frames at hop 5 (matching
/// the learnable front-end's rate), 512-point power spectrum, `n_mels`
/// triangular bands, log(. + eps). A signal shorter than one frame yields an
/// empty wavegram.
pub fn mel_frontend(x: &Waveform, n_mels: usize) -> Result<Wavegram, FilterbankError> {
    const FRAME_LEN: usize = 400;
    const HOP: usize = 5;
    const N_FFT: usize = 512;
    let frames = dsp::frame(x, FRAME_LEN, HOP)?;
    let n_frames = frames.len();
    let mat = dsp::mel_filterbank_matrix(
        n_mels,
        N_FFT,
        x.sample_rate,
        0.0,
        x.sample_rate as f64 / 2.0,
    )?;
    let window = dsp::hamming(FRAME_LEN);
    let mut features = vec![0.0; n_mels * n_frames];
    let n_bins = N_FFT / 2 + 1;
    for (t, fr) in frames.iter().enumerate() {
        let mut padded = vec![0.0; N_FFT];
        for (p, (s, w)) in padded.iter_mut().zip(fr.iter().zip(&window)) {
            *p = s * w;
        }
        let spec = dsp::fft_real(&padded)?;
        let power: Vec<f64> = spec[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for (m, row) in mat.iter().enumerate() {
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            features[m * n_frames + t] = fmath::ln(e + EPSILON);
        }
    }
    Ok(Wavegram {
        features,
        n_filters: n_mels,
        n_frames,
        hop_equivalent: HOP,
    })
}

/// Magnitude response of one filter on a uniform frequency grid of
/// `n_fft/2 + 1` points from DC to Nyquist.
#[derive(Debug, Clone)]
pub struct FilterResponse {
    pub index: usize,
    /// Frequency of maximum response in Hz (0 for an all-zero filter),
    /// measured on a fine zero-padded grid independent of the export grid.
    pub peak_hz: f64,
    /// Response magnitudes normalized by the global maximum across all
    /// filters of the bank.
    pub magnitudes: Vec<f64>,
}

/// Per-filter magnitude responses of a bank. In analytic mode the response
/// of the complex pair (real + j * Hilbert(real)) is used.
pub fn filter_responses(
    bank: &FilterBank,
    n_fft: usize,
) -> Result<Vec<FilterResponse>, FilterbankError> {
    if n_fft < bank.filter_len {
        return Err(FilterbankError::InvalidArgument(format!(
            "n_fft {n_fft} smaller than filter length {}",
            bank.filter_len
        )));
    }
    const PEAK_N_FFT: usize = 16_384;
    let peak_fft = PEAK_N_FFT.max(dsp::next_pow2(bank.filter_len));
    let weights = bank.materialized_weights()?;
    let n_bins = n_fft / 2 + 1;
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::with_capacity(bank.n_filters);
    let mut global_max = 0.0f64;
    for i in 0..bank.n_filters {
        let re = &weights[i * bank.filter_len..(i + 1) * bank.filter_len];
        let im = match bank.mode {
            FilterMode::Real => None,
            FilterMode::Analytic => Some(dsp::hilbert(re)?),
        };
        let mags = complex_magnitude_spectrum(re, im.as_deref(), n_fft, n_bins)?;
        let fine = complex_magnitude_spectrum(re, im.as_deref(), peak_fft, peak_fft / 2 + 1)?;
        let (argmax, peak_val) = fine
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(ai, av), (bi, &bv)| {
                if bv > av { (bi, bv) } else { (ai, av) }
            });
        let peak_hz = if peak_val == 0.0 {
            0.0
        } else {
            argmax as f64 * bank.sample_rate as f64 / peak_fft as f64
        };
        global_max = global_max.max(mags.iter().cloned().fold(0.0, f64::max));
        rows.push((peak_hz, mags));
    }
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(index, (peak_hz, mut magnitudes))| {
            if global_max > 0.0 {
                for m in &mut magnitudes {
                    *m /= global_max;
                }
            }
            FilterResponse {
                index,
                peak_hz,
                magnitudes,
            }
        })
        .collect())
}

fn complex_magnitude_spectrum(
    re: &[f64],
    im: Option<&[f64]>,
    n_fft: usize,
    n_bins: usize,
) -> Result<Vec<f64>, FilterbankError> {
    let mut buf = vec![num_complex::Complex64::new(0.0, 0.0); n_fft];
    for (k, b) in buf.iter_mut().enumerate().take(re.len()) {
        b.re = re[k];
        if let Some(im) = im {
            b.im = im[k];
        }
    }
    let spec = dsp::fft(&buf)?;
    Ok(spec[..n_bins].iter().map(|c| c.norm()).collect())
}
