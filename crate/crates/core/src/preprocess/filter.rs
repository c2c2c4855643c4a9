//! Butterworth bandpass design and second-order-section filtering.
//!
//! The filter is designed from scratch: analog lowpass prototype poles,
//! lowpass-to-bandpass transform, bilinear mapping with frequency
//! pre-warping, then grouping into biquad sections with the band edges'
//! zeros split as one zero at z = +1 and one at z = -1 per section. Gain is
//! normalized so the response is exactly 1 at the (warped) band center.
//!
//! Filtering runs forward only (causal). The group-delay distortion this
//! leaves in is identical for every segment of a recording, so it cancels
//! in the downstream reference subtraction.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One second-order section, `H(z) = (b0 + b1 z^-1 + b2 z^-2) /
/// (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    /// Numerator coefficients `[b0, b1, b2]`.
    pub b: [f64; 3],
    /// Denominator coefficients `[a1, a2]` (a0 is fixed at 1).
    pub a: [f64; 2],
}

impl Biquad {
    /// Complex response at angular frequency `theta` (radians/sample).
    fn response(&self, theta: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -theta);
        let z2 = z1 * z1;
        let num = Complex64::new(self.b[0], 0.0) + self.b[1] * z1 + self.b[2] * z2;
        let den = Complex64::new(1.0, 0.0) + self.a[0] * z1 + self.a[1] * z2;
        num / den
    }
}

/// A cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    sections: Vec<Biquad>,
}

impl SosFilter {
    /// The sections of the cascade.
    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Filters `x` forward with zero initial state (direct form II
    /// transposed per section).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for sec in &self.sections {
            let (mut s1, mut s2) = (0.0_f64, 0.0_f64);
            for v in y.iter_mut() {
                let xin = *v;
                let out = sec.b[0] * xin + s1;
                s1 = sec.b[1] * xin - sec.a[0] * out + s2;
                s2 = sec.b[2] * xin - sec.a[1] * out;
                *v = out;
            }
        }
        y
    }

    /// Magnitude response at `freq_hz` for sample rate `fs`.
    pub fn magnitude_at(&self, freq_hz: f64, fs: f64) -> f64 {
        let theta = 2.0 * std::f64::consts::PI * freq_hz / fs;
        self.sections
            .iter()
            .map(|s| s.response(theta).norm())
            .product()
    }
}

/// Designs a Butterworth bandpass of the given analog prototype `order`
/// (the digital filter has `2 * order` poles, i.e. `order` biquads).
///
/// `low_hz`/`high_hz` are the -3 dB edges; both must lie in (0, fs/2).
pub fn butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs: f64,
) -> Result<SosFilter> {
    if order == 0 || order > 12 {
        return Err(Error::InvalidParameter(format!(
            "bandpass order {order} outside supported range 1..=12"
        )));
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "band edges ({low_hz}, {high_hz}) must satisfy 0 < low < high < fs/2 = {}",
            fs / 2.0
        )));
    }

    // Pre-warp the band edges so the bilinear transform lands the -3 dB
    // points exactly on the requested digital frequencies.
    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let (wl, wh) = (warp(low_hz), warp(high_hz));
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;

    // Analog lowpass prototype poles on the unit circle's left half.
    let prototype: Vec<Complex64> = (0..order)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    // Lowpass -> bandpass: each prototype pole p yields the two roots of
    // s^2 - (bw p) s + w0^2 = 0.
    let mut analog_poles = Vec::with_capacity(2 * order);
    for p in prototype {
        let half = p * (bw / 2.0);
        let disc = (half * half - Complex64::new(w0 * w0, 0.0)).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }

    // Bilinear transform, z = (2 fs + s) / (2 fs - s).
    let two_fs = Complex64::new(2.0 * fs, 0.0);
    let digital_poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|&s| (two_fs + s) / (two_fs - s))
        .collect();

    // Group into conjugate pairs. Complex poles keep their upper-half
    // representative; real poles (a wide band can produce them) are sorted
    // and paired consecutively.
    let mut complex_reps: Vec<Complex64> = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for z in &digital_poles {
        if z.im.abs() <= 1e-10 * z.norm().max(1.0) {
            reals.push(z.re);
        } else if z.im > 0.0 {
            complex_reps.push(*z);
        }
    }
    complex_reps.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    reals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    debug_assert_eq!(complex_reps.len() * 2 + reals.len(), 2 * order);
    debug_assert_eq!(reals.len() % 2, 0, "real poles must pair up");

    let mut sections = Vec::with_capacity(order);
    for z in &complex_reps {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * z.re, z.norm_sqr()],
        });
    }
    for pair in reals.chunks_exact(2) {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }

    for sec in &sections {
        // Bilinear images of left-half-plane poles stay inside the unit
        // circle; |a2| < 1 is the cheap necessary check.
        debug_assert!(sec.a[1].abs() < 1.0, "unstable section {sec:?}");
    }

    // Normalize the passband: unit gain at the digital image of the analog
    // center frequency w0.
    let theta_c = 2.0 * (w0 / (2.0 * fs)).atan();
    let mut filter = SosFilter { sections };
    let gain: f64 = filter
        .sections
        .iter()
        .map(|s| s.response(theta_c).norm())
        .product();
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "degenerate design: center-frequency gain {gain}"
        )));
    }
    let scale = gain.powf(-1.0 / filter.sections.len() as f64);
    for sec in &mut filter.sections {
        for b in &mut sec.b {
            *b *= scale;
        }
    }
    Ok(filter)
}

/// The pipeline's denoising filter: order-5 Butterworth bandpass over the
/// 17-23 kHz sensing band at 48 kHz.
pub fn sensing_bandpass() -> SosFilter {
    butterworth_bandpass(5, 17_000.0, 23_000.0, 48_000.0)
        .expect("fixed sensing band parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tone(freq: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    /// RMS of the tail of a filtered signal, skipping the start-up
    /// transient.
    fn steady_rms(x: &[f64]) -> f64 {
        let tail = &x[x.len() / 4..];
        (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt()
    }

    #[test]
    fn stopband_tone_is_strongly_attenuated() {
        let filt = sensing_bandpass();
        let x = tone(10_000.0, 4800, 48_000.0);
        let y = filt.apply(&x);
        let db = 20.0 * (steady_rms(&y) / steady_rms(&x)).log10();
        assert!(db <= -40.0, "10 kHz attenuation only {db:.1} dB");
    }

    #[test]
    fn passband_tone_is_preserved() {
        let filt = sensing_bandpass();
        let x = tone(20_000.0, 4800, 48_000.0);
        let y = filt.apply(&x);
        let db = 20.0 * (steady_rms(&y) / steady_rms(&x)).log10();
        assert!(db.abs() <= 3.0, "20 kHz deviation {db:.2} dB");
    }

    #[test]
    fn band_edges_sit_near_minus_three_db() {
        let filt = sensing_bandpass();
        for edge in [17_000.0, 23_000.0] {
            let db = 20.0 * filt.magnitude_at(edge, 48_000.0).log10();
            assert!((-3.5..=-2.5).contains(&db), "{edge} Hz edge at {db:.2} dB");
        }
    }

    #[test]
    fn stopband_rolls_off_monotonically_below_the_band() {
        let filt = sensing_bandpass();
        let mags: Vec<f64> = [6_000.0, 8_000.0, 10_000.0, 12_000.0, 14_000.0, 16_000.0]
            .iter()
            .map(|&f| filt.magnitude_at(f, 48_000.0))
            .collect();
        for w in mags.windows(2) {
            assert!(w[0] < w[1], "magnitudes not increasing toward the band: {mags:?}");
        }
    }

    #[test]
    fn filtering_is_linear() {
        let filt = sensing_bandpass();
        let x = tone(18_000.0, 1200, 48_000.0);
        let y = tone(21_000.0, 1200, 48_000.0);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.7 * a - 1.3 * b).collect();
        let fx = filt.apply(&x);
        let fy = filt.apply(&y);
        let fc = filt.apply(&combo);
        for i in 0..combo.len() {
            assert_abs_diff_eq!(fc[i], 0.7 * fx[i] - 1.3 * fy[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn filtering_is_time_invariant() {
        let filt = sensing_bandpass();
        let x = tone(19_000.0, 600, 48_000.0);
        let mut shifted = vec![0.0; 37];
        shifted.extend_from_slice(&x);
        let y = filt.apply(&x);
        let ys = filt.apply(&shifted);
        for i in 0..y.len() {
            assert_abs_diff_eq!(ys[i + 37], y[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn impulse_response_decays() {
        let filt = sensing_bandpass();
        let mut impulse = vec![0.0; 48_000];
        impulse[0] = 1.0;
        let h = filt.apply(&impulse);
        let tail_peak = h[40_000..].iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        assert!(tail_peak < 1e-8, "tail peak {tail_peak:e}");
    }

    #[test]
    fn higher_order_gives_steeper_rolloff() {
        let f3 = butterworth_bandpass(3, 17_000.0, 23_000.0, 48_000.0).unwrap();
        let f5 = butterworth_bandpass(5, 17_000.0, 23_000.0, 48_000.0).unwrap();
        assert!(f5.magnitude_at(10_000.0, 48_000.0) < f3.magnitude_at(10_000.0, 48_000.0));
        assert!(f5.magnitude_at(14_000.0, 48_000.0) < f3.magnitude_at(14_000.0, 48_000.0));
    }

    #[test]
    fn invalid_band_edges_are_rejected() {
        assert!(butterworth_bandpass(5, 23_000.0, 17_000.0, 48_000.0).is_err());
        assert!(butterworth_bandpass(5, 17_000.0, 24_000.0, 48_000.0).is_err());
        assert!(butterworth_bandpass(5, 0.0, 23_000.0, 48_000.0).is_err());
        assert!(butterworth_bandpass(0, 17_000.0, 23_000.0, 48_000.0).is_err());
    }

    #[test]
    fn section_count_matches_order() {
        let filt = butterworth_bandpass(5, 17_000.0, 23_000.0, 48_000.0).unwrap();
        assert_eq!(filt.sections().len(), 5);
        for sec in filt.sections() {
            assert!(sec.a[1].abs() < 1.0, "pole radius check failed: {sec:?}");
        }
    }
}
