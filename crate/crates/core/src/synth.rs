//! Desk-scale synthetic corpus: parametric source-filter speakers, clean and
//! degraded (pink noise + synthetic reverberation) utterances, and
//! train/eval protocol generation with balanced verification trials.
//!
//! Every generator is a pure function of its seeds, so corpora are
//! reproducible byte for byte.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use num_complex::Complex64;

use crate::dsp::{self, Waveform};
use crate::fmath;
use crate::rng;
use crate::scoring::Trial;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SynthError {
    InvalidArgument(String),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for SynthError {}

pub const SAMPLE_RATE: u32 = 16_000;

/// Parametric speaker: pitch statistics, three formant resonators and a
/// spectral tilt.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeaker {
    pub f0_mean: f64,
    /// Relative depth of the per-utterance pitch drift.
    pub f0_jitter: f64,
    /// (center Hz, bandwidth Hz), strictly increasing centers below Nyquist.
    pub formants: [(f64, f64); 3],
    /// dB per octave applied above the 100 Hz reference (negative tilts
    /// attenuate high frequencies).
    pub spectral_tilt: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    Clean,
    Noisy,
    Reverberant,
    NoisyReverberant,
}

/// Acoustic condition of an utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub kind: ConditionKind,
    pub snr_db: f64,
    pub rt60_s: f64,
}

impl Condition {
    pub fn clean() -> Condition {
        Condition {
            kind: ConditionKind::Clean,
            snr_db: f64::INFINITY,
            rt60_s: 0.0,
        }
    }

    pub fn noisy(snr_db: f64) -> Result<Condition, SynthError> {
        if !snr_db.is_finite() {
            return Err(SynthError::InvalidArgument(String::from(
                "snr must be finite",
            )));
        }
        Ok(Condition {
            kind: ConditionKind::Noisy,
            snr_db,
            rt60_s: 0.0,
        })
    }

    pub fn reverberant(rt60_s: f64) -> Result<Condition, SynthError> {
        check_rt60(rt60_s)?;
        Ok(Condition {
            kind: ConditionKind::Reverberant,
            snr_db: f64::INFINITY,
            rt60_s,
        })
    }

    pub fn noisy_reverberant(snr_db: f64, rt60_s: f64) -> Result<Condition, SynthError> {
        if !snr_db.is_finite() {
            return Err(SynthError::InvalidArgument(String::from(
                "snr must be finite",
            )));
        }
        check_rt60(rt60_s)?;
        Ok(Condition {
            kind: ConditionKind::NoisyReverberant,
            snr_db,
            rt60_s,
        })
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ConditionKind::Clean => "clean",
            ConditionKind::Noisy => "noisy",
            ConditionKind::Reverberant => "reverberant",
            ConditionKind::NoisyReverberant => "noisy_reverberant",
        }
    }
}

fn check_rt60(rt60_s: f64) -> Result<(), SynthError> {
    if !(0.0..=1.0).contains(&rt60_s) {
        return Err(SynthError::InvalidArgument(format!(
            "rt60 must lie in [0, 1] seconds, got {rt60_s}"
        )));
    }
    Ok(())
}

/// Deterministically draw `n` speakers from documented uniform ranges:
/// f0 in [70, 390] Hz with any pair at least 5 Hz apart (one uniform draw
/// per stratum of a shuffled grid, so the separation holds by
/// construction), jitter in [0.5%, 2%], formants F1 [300, 850] /
/// F2 [950, 2400] / F3 [2500, 3400] Hz with bandwidths [50, 180] Hz,
/// tilt [-12, -4] dB/oct.
pub fn gen_speakers(n: usize, master_seed: u64) -> Result<Vec<SynthSpeaker>, SynthError> {
    if n < 2 {
        return Err(SynthError::InvalidArgument(String::from(
            "need at least 2 speakers",
        )));
    }
    let (f0_lo, f0_hi, min_gap) = (70.0, 390.0, 5.0);
    let stride = (f0_hi - f0_lo) / n as f64;
    if stride < min_gap {
        return Err(SynthError::InvalidArgument(format!(
            "cannot place {n} speakers at least {min_gap} Hz apart in [{f0_lo}, {f0_hi}] Hz"
        )));
    }
    let mut r = rng::from_seed(rng::derive_seed(master_seed, 0xF0));
    let mut f0s: Vec<f64> = (0..n)
        .map(|i| {
            f0_lo + i as f64 * stride + min_gap / 2.0
                + rng::uniform_in(&mut r, 0.0, stride - min_gap)
        })
        .collect();
    rng::shuffle(&mut r, &mut f0s);
    Ok((0..n)
        .map(|i| {
            let mut sr = rng::from_seed(rng::derive_seed(master_seed, 1000 + i as u64));
            SynthSpeaker {
                f0_mean: f0s[i],
                f0_jitter: rng::uniform_in(&mut sr, 0.005, 0.02),
                formants: [
                    (
                        rng::uniform_in(&mut sr, 300.0, 800.0),
                        rng::uniform_in(&mut sr, 50.0, 110.0),
                    ),
                    (
                        rng::uniform_in(&mut sr, 1200.0, 2100.0),
                        rng::uniform_in(&mut sr, 60.0, 140.0),
                    ),
                    (
                        rng::uniform_in(&mut sr, 2500.0, 3400.0),
                        rng::uniform_in(&mut sr, 80.0, 180.0),
                    ),
                ],
                spectral_tilt: rng::uniform_in(&mut sr, -12.0, -4.0),
                seed: rng::derive_seed(master_seed, 2000 + i as u64),
            }
        })
        .collect())
}

/// Synthesize one utterance: a jittered impulse train (with a slow
/// sinusoidal f0 drift randomized per utterance) through the speaker's three
/// formant resonators, spectral tilt, peak-normalized to 0.5.
pub fn synth_utterance(
    speaker: &SynthSpeaker,
    duration_s: f64,
    utt_seed: u64,
) -> Result<Waveform, SynthError> {
    if !(0.5..=10.0).contains(&duration_s) {
        return Err(SynthError::InvalidArgument(format!(
            "duration must lie in [0.5, 10] seconds, got {duration_s}"
        )));
    }
    let sr = SAMPLE_RATE as f64;
    let n = fmath::round(duration_s * sr) as usize;
    let mut r = rng::from_seed(rng::derive_seed(speaker.seed, utt_seed));

    // Per-utterance pitch contour.
    let drift_hz = rng::uniform_in(&mut r, 0.3, 1.2);
    let drift_phase = rng::uniform_in(&mut r, 0.0, 2.0 * PI);

    // Glottal impulse train via phase accumulation, plus faint aspiration
    // noise so the excitation is not exactly sparse.
    let mut source = vec![0.0; n];
    let mut phase = rng::uniform(&mut r); // random initial phase
    for (t, s) in source.iter_mut().enumerate() {
        let secs = t as f64 / sr;
        let f0 = speaker.f0_mean
            * (1.0 + speaker.f0_jitter * fmath::sin(2.0 * PI * drift_hz * secs + drift_phase));
        phase += f0 / sr;
        if phase >= 1.0 {
            phase -= 1.0;
            *s = 1.0;
        }
        *s += 1e-3 * rng::normal(&mut r);
    }

    // Cascade of three two-pole resonators.
    let mut y = source;
    for &(center, bw) in &speaker.formants {
        let rr = fmath::exp(-PI * bw / sr);
        let theta = 2.0 * PI * center / sr;
        let a1 = 2.0 * rr * fmath::cos(theta);
        let a2 = -rr * rr;
        let g = 1.0 - rr;
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in &mut y {
            let out = g * *v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = out;
            *v = out;
        }
    }

    // Spectral tilt in the frequency domain, relative to 100 Hz.
    let m = dsp::next_pow2(n);
    let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(m, Complex64::new(0.0, 0.0));
    let mut spec = dsp::fft(&buf).map_err(|e| SynthError::InvalidArgument(format!("{e}")))?;
    let oct = speaker.spectral_tilt / (20.0 * fmath::log10(2.0));
    for (k, bin) in spec.iter_mut().enumerate() {
        let freq = if k <= m / 2 {
            k as f64 * sr / m as f64
        } else {
            (m - k) as f64 * sr / m as f64
        };
        let gain = if freq <= 100.0 {
            1.0
        } else {
            fmath::powf(freq / 100.0, oct)
        };
        *bin *= gain;
    }
    let back = dsp::ifft(&spec).map_err(|e| SynthError::InvalidArgument(format!("{e}")))?;
    let mut out: Vec<f64> = back[..n].iter().map(|c| c.re).collect();

    let peak = out.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
    let scale = 0.5 / peak;
    for v in &mut out {
        *v *= scale;
    }
    Waveform::new(out, SAMPLE_RATE).map_err(|e| SynthError::InvalidArgument(format!("{e}")))
}

/// Synthetic room impulse response: exponentially decaying white noise whose
/// energy envelope falls 60 dB at `rt60_s`, normalized to unit energy.
pub fn synth_rir(rt60_s: f64, sample_rate: u32, seed: u64) -> Result<Vec<f64>, SynthError> {
    check_rt60(rt60_s)?;
    if rt60_s == 0.0 {
        return Ok(vec![1.0]);
    }
    let sr = sample_rate as f64;
    let n = (1.2 * rt60_s * sr) as usize + 1;
    let mut r = rng::from_seed(seed);
    // Amplitude decay alpha with 20*log10(exp(-alpha*rt60)) = -60.
    let alpha = 3.0 * fmath::ln(10.0) / rt60_s;
    let mut rir: Vec<f64> = (0..n)
        .map(|t| fmath::exp(-alpha * t as f64 / sr) * rng::normal(&mut r))
        .collect();
    let energy: f64 = rir.iter().map(|v| v * v).sum();
    let scale = 1.0 / fmath::sqrt(energy);
    for v in &mut rir {
        *v *= scale;
    }
    Ok(rir)
}

/// Pink (1/f) noise of length `n` with approximately unit power, generated
/// by spectral shaping of white Gaussian noise.
pub fn pink_noise(n: usize, seed: u64) -> Vec<f64> {
    let m = dsp::next_pow2(n.max(2));
    let mut r = rng::from_seed(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); m];
    for k in 1..=m / 2 {
        let mag = 1.0 / fmath::sqrt(k as f64);
        let c = Complex64::new(rng::normal(&mut r) * mag, rng::normal(&mut r) * mag);
        spec[k] = c;
        if k != m / 2 {
            spec[m - k] = c.conj();
        } else {
            spec[k] = Complex64::new(c.re, 0.0);
        }
    }
    let time = dsp::ifft(&spec).expect("non-empty");
    let mut out: Vec<f64> = time[..n].iter().map(|c| c.re).collect();
    let power = out.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let scale = 1.0 / fmath::sqrt(power.max(1e-300));
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Degrade a waveform: reverberation first (convolution with a synthetic
/// RIR of the requested rt60), then additive pink noise scaled so the
/// whole-utterance SNR matches, then peak renormalization to 0.5. The clean
/// condition returns the input unchanged.
pub fn degrade(x: &Waveform, condition: &Condition, seed: u64) -> Result<Waveform, SynthError> {
    if condition.kind == ConditionKind::Clean {
        return Ok(x.clone());
    }
    let mut y = x.samples.clone();
    if matches!(
        condition.kind,
        ConditionKind::Reverberant | ConditionKind::NoisyReverberant
    ) {
        let rir = synth_rir(condition.rt60_s, x.sample_rate, rng::derive_seed(seed, 1))?;
        y = convolve_truncated(&y, &rir);
    }
    if matches!(
        condition.kind,
        ConditionKind::Noisy | ConditionKind::NoisyReverberant
    ) {
        let noise = pink_noise(y.len(), rng::derive_seed(seed, 2));
        let p_sig = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        let target = p_sig / fmath::powf(10.0, condition.snr_db / 10.0);
        let scale = fmath::sqrt(target / p_noise);
        for (s, nz) in y.iter_mut().zip(&noise) {
            *s += scale * nz;
        }
    }
    let peak = y.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.5 / peak;
        for v in &mut y {
            *v *= scale;
        }
    }
    Waveform::new(y, x.sample_rate).map_err(|e| SynthError::InvalidArgument(format!("{e}")))
}

/// FFT convolution truncated to the length of `x`.
fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = dsp::next_pow2(n + h.len() - 1);
    let mut fx = vec![Complex64::new(0.0, 0.0); m];
    for (b, &v) in fx.iter_mut().zip(x) {
        b.re = v;
    }
    let mut fh = vec![Complex64::new(0.0, 0.0); m];
    for (b, &v) in fh.iter_mut().zip(h) {
        b.re = v;
    }
    let sx = dsp::fft(&fx).expect("non-empty");
    let sh = dsp::fft(&fh).expect("non-empty");
    let prod: Vec<Complex64> = sx.iter().zip(&sh).map(|(a, b)| a * b).collect();
    let back = dsp::ifft(&prod).expect("non-empty");
    back[..n].iter().map(|c| c.re).collect()
}

/// One utterance to materialize: which speaker, which synthesis seed, and
/// which acoustic condition to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct UttSpec {
    pub utt_id: String,
    pub speaker_id: String,
    pub speaker_idx: usize,
    pub utt_seed: u64,
    pub condition: Condition,
    pub degrade_seed: u64,
    pub duration_s: f64,
}

/// Complete experimental protocol: disjoint train/eval speakers, a training
/// set of clean plus noise-augmented utterances, and matched (clean) /
/// mismatched (degraded) evaluation sets sharing one balanced trial list.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub speakers: Vec<SynthSpeaker>,
    pub train_speaker_idx: Vec<usize>,
    pub eval_speaker_idx: Vec<usize>,
    pub train: Vec<UttSpec>,
    pub eval_matched: Vec<UttSpec>,
    pub eval_mismatched: Vec<UttSpec>,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub train_fraction: f64,
    pub duration_s: f64,
    /// Condition applied to the augmented copies of the training set.
    pub train_aug: Condition,
    /// Condition of the mismatched evaluation set.
    pub eval_mismatch: Condition,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_speakers: 20,
            utts_per_speaker: 10,
            train_fraction: 0.5,
            duration_s: 1.0,
            train_aug: Condition::noisy(10.0).expect("finite"),
            eval_mismatch: Condition::noisy_reverberant(5.0, 0.4).expect("valid"),
            seed: 1,
        }
    }
}

fn speaker_id(idx: usize) -> String {
    format!("s{idx:03}")
}

/// Build the experimental protocol. Train and eval speakers are disjoint
/// (open-set verification); target and nontarget trial counts are balanced
/// within one; everything is deterministic under the seed.
pub fn build_protocol(cfg: &ProtocolConfig) -> Result<Protocol, SynthError> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(SynthError::InvalidArgument(String::from(
            "train_fraction must lie in (0, 1)",
        )));
    }
    let speakers = gen_speakers(cfg.n_speakers, cfg.seed)?;
    let n_train = (cfg.n_speakers as f64 * cfg.train_fraction + 0.5) as usize;
    let n_eval = cfg.n_speakers - n_train;
    if n_train < 1 || n_eval < 2 || cfg.utts_per_speaker < 2 {
        return Err(SynthError::InvalidArgument(format!(
            "infeasible split: {n_train} train / {n_eval} eval speakers with {} utts each",
            cfg.utts_per_speaker
        )));
    }

    let mut order: Vec<usize> = (0..cfg.n_speakers).collect();
    let mut r = rng::from_seed(rng::derive_seed(cfg.seed, 0x5E11));
    rng::shuffle(&mut r, &mut order);
    let train_speaker_idx: Vec<usize> = {
        let mut v = order[..n_train].to_vec();
        v.sort_unstable();
        v
    };
    let eval_speaker_idx: Vec<usize> = {
        let mut v = order[n_train..].to_vec();
        v.sort_unstable();
        v
    };

    let utt_seed_of = |spk: usize, u: usize| rng::derive_seed(cfg.seed, (spk * 1000 + u) as u64);

    let mut train = Vec::new();
    for &spk in &train_speaker_idx {
        for u in 0..cfg.utts_per_speaker {
            let base = UttSpec {
                utt_id: format!("{}_u{:02}", speaker_id(spk), u),
                speaker_id: speaker_id(spk),
                speaker_idx: spk,
                utt_seed: utt_seed_of(spk, u),
                condition: Condition::clean(),
                degrade_seed: 0,
                duration_s: cfg.duration_s,
            };
            let mut aug = base.clone();
            aug.utt_id = format!("{}_aug", base.utt_id);
            aug.condition = cfg.train_aug;
            aug.degrade_seed = rng::derive_seed(cfg.seed, 7_000_000 + (spk * 1000 + u) as u64);
            train.push(base);
            train.push(aug);
        }
    }

    let mut eval_matched = Vec::new();
    let mut eval_mismatched = Vec::new();
    for &spk in &eval_speaker_idx {
        for u in 0..cfg.utts_per_speaker {
            let clean = UttSpec {
                utt_id: format!("{}_u{:02}", speaker_id(spk), u),
                speaker_id: speaker_id(spk),
                speaker_idx: spk,
                utt_seed: utt_seed_of(spk, u),
                condition: Condition::clean(),
                degrade_seed: 0,
                duration_s: cfg.duration_s,
            };
            let mut degraded = clean.clone();
            degraded.condition = cfg.eval_mismatch;
            degraded.degrade_seed =
                rng::derive_seed(cfg.seed, 9_000_000 + (spk * 1000 + u) as u64);
            eval_matched.push(clean);
            eval_mismatched.push(degraded);
        }
    }

    // Balanced trial list over the eval utterances (ids are shared between
    // the matched and mismatched variants).
    let mut targets: Vec<Trial> = Vec::new();
    for &spk in &eval_speaker_idx {
        for a in 0..cfg.utts_per_speaker {
            for b in a + 1..cfg.utts_per_speaker {
                targets.push(Trial {
                    enroll: format!("{}_u{:02}", speaker_id(spk), a),
                    test: format!("{}_u{:02}", speaker_id(spk), b),
                    target: true,
                });
            }
        }
    }
    let mut nontargets: Vec<Trial> = Vec::new();
    let mut seen: BTreeSet<(usize, usize, usize, usize)> = BTreeSet::new();
    let mut tr = rng::from_seed(rng::derive_seed(cfg.seed, 0x7514));
    let max_cross = eval_speaker_idx.len() * (eval_speaker_idx.len() - 1) / 2
        * cfg.utts_per_speaker
        * cfg.utts_per_speaker;
    let want = targets.len().min(max_cross);
    while nontargets.len() < want {
        let si = rng::below(&mut tr, eval_speaker_idx.len());
        let sj = rng::below(&mut tr, eval_speaker_idx.len());
        if si == sj {
            continue;
        }
        let (si, sj) = if si < sj { (si, sj) } else { (sj, si) };
        let a = rng::below(&mut tr, cfg.utts_per_speaker);
        let b = rng::below(&mut tr, cfg.utts_per_speaker);
        if !seen.insert((si, sj, a, b)) {
            continue;
        }
        nontargets.push(Trial {
            enroll: format!("{}_u{:02}", speaker_id(eval_speaker_idx[si]), a),
            test: format!("{}_u{:02}", speaker_id(eval_speaker_idx[sj]), b),
            target: false,
        });
    }
    let mut trials = targets;
    trials.extend(nontargets);

    Ok(Protocol {
        speakers,
        train_speaker_idx,
        eval_speaker_idx,
        train,
        eval_matched,
        eval_mismatched,
        trials,
    })
}

/// Materialize one utterance spec into audio.
pub fn realize(spec: &UttSpec, speakers: &[SynthSpeaker]) -> Result<Waveform, SynthError> {
    let clean = synth_utterance(&speakers[spec.speaker_idx], spec.duration_s, spec.utt_seed)?;
    degrade(&clean, &spec.condition, spec.degrade_seed)
}
