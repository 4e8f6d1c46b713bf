//! Raw-waveform speaker embedding front-ends with analytic (Hilbert-constrained)
//! learnable filterbanks and sparse variational dropout, plus the desk-scale
//! verification pipeline around them: a reverse-mode autodiff engine, a
//! depthwise-separable encoder with TDNN embedding layers, cosine and PLDA
//! scoring backends, EER/min-DCF/bootstrap metrics, and a synthetic corpus
//! generator for matched/mismatched evaluation.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation.
//! File formats, WAV IO and the command-line driver live in the companion
//! `wavespk` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub use num_complex;

pub mod autodiff;
pub mod dsp;
pub mod filterbank;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod vd;

mod fmath;

pub use dsp::Waveform;
