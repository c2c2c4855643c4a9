//! Outer-ear acoustic authentication pipeline.
//!
//! A smartphone plays a short ultrasonic chirp sequence into the ear; the
//! echo it records is shaped by the ear's geometry and can be used as a
//! biometric. This crate implements the full chain as a library:
//!
//! - [`signals`]: chirp/pilot/sequence generation on the transmit side.
//! - [`earsim`]: a synthetic acoustic channel (ear reflections, device
//!   reverb, noise) used to render labelled datasets.
//! - [`preprocess`]: pilot synchronization, per-frame matched-filter
//!   alignment, Butterworth bandpass denoising, and reference spectrum
//!   subtraction.
//! - [`spectro`]: cropping and normalizing difference spectrograms into
//!   fixed-size tensors.
//! - [`neuralnet`]: a small from-scratch CNN trained on those tensors; its
//!   penultimate layer serves as a 128-d feature extractor.
//! - [`oneclass`]: one-class enrollment and verification (one-class SVM or
//!   local outlier factor) on extracted features.
//! - [`evalharness`]: biometric metrics, ROC/EER, cross-validated studies,
//!   attack evaluation, score densities, and latency measurement.
//! - [`pipeline`]: configuration plus end-to-end flows tying it together.

pub mod earsim;
pub mod error;
pub mod evalharness;
pub mod io;
pub mod neuralnet;
pub mod oneclass;
pub mod pipeline;
pub mod preprocess;
pub mod signals;
pub mod spectro;

pub use error::{Error, Result};
pub use signals::{
    assemble_sensing_sequence, generate_chirp, generate_pilot, ChirpSpec, FrameLayout, PilotSpec,
    SensingWaveform,
};

#[cfg(test)]
pub(crate) mod testutil {
    //! Slow, obviously-correct reference implementations used as oracles.

    /// Naive O(n^2) DFT magnitude spectrum (bins 0..n), no window.
    pub fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut mags = Vec::with_capacity(n);
        for k in 0..n {
            let (mut re, mut im) = (0.0_f64, 0.0_f64);
            for (i, &s) in x.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += s * angle.cos();
                im += s * angle.sin();
            }
            mags.push(re.hypot(im));
        }
        mags
    }
}
