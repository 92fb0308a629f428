//! Signal conditioning: analytic-signal envelopes, band-limited resampling,
//! zero-phase band-pass filtering and trial segmentation.
//!
//! The fixed chain for speech is envelope -> resample -> band-pass; EEG skips
//! the envelope stage. All functions are pure and allocate their output.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{AadError, Result};

/// A sampled real signal, e.g. a speech recording or one EEG channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    rate_hz: f64,
}

/// Speech envelope. Non-negative until it has been band-pass filtered.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    samples: Vec<f64>,
    rate_hz: f64,
    band_limited: bool,
}

/// Consecutive, non-overlapping fixed-length trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSequence {
    pub trials: Vec<Vec<f64>>,
    pub trial_len_samples: usize,
    pub rate_hz: f64,
}

fn check_rate(rate_hz: f64) -> Result<()> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(AadError::InvalidInput(format!(
            "sample rate must be positive, got {rate_hz}"
        )));
    }
    Ok(())
}

fn check_finite(samples: &[f64]) -> Result<()> {
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(AadError::InvalidInput(format!(
            "non-finite sample at index {i}"
        )));
    }
    Ok(())
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate_hz: f64) -> Result<Self> {
        check_rate(rate_hz)?;
        check_finite(&samples)?;
        Ok(Self { samples, rate_hz })
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

impl Envelope {
    pub fn new(samples: Vec<f64>, rate_hz: f64) -> Result<Self> {
        check_rate(rate_hz)?;
        check_finite(&samples)?;
        if let Some(i) = samples.iter().position(|&v| v < 0.0) {
            return Err(AadError::InvalidInput(format!(
                "envelope sample {i} is negative"
            )));
        }
        Ok(Self {
            samples,
            rate_hz,
            band_limited: false,
        })
    }

    /// Wraps samples that have already been band-pass filtered (may be negative).
    pub fn band_limited(samples: Vec<f64>, rate_hz: f64) -> Result<Self> {
        check_rate(rate_hz)?;
        check_finite(&samples)?;
        Ok(Self {
            samples,
            rate_hz,
            band_limited: true,
        })
    }

    pub fn is_band_limited(&self) -> bool {
        self.band_limited
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Common view over [`Waveform`] and [`Envelope`].
pub trait Sampled: Sized {
    fn samples(&self) -> &[f64];
    fn rate_hz(&self) -> f64;
    #[doc(hidden)]
    fn with_resampled(&self, samples: Vec<f64>, rate_hz: f64) -> Self;
    #[doc(hidden)]
    fn with_filtered(&self, samples: Vec<f64>) -> Self;

    fn len(&self) -> usize {
        self.samples().len()
    }

    fn is_empty(&self) -> bool {
        self.samples().is_empty()
    }
}

impl Sampled for Waveform {
    fn samples(&self) -> &[f64] {
        &self.samples
    }
    fn rate_hz(&self) -> f64 {
        self.rate_hz
    }
    fn with_resampled(&self, samples: Vec<f64>, rate_hz: f64) -> Self {
        Self { samples, rate_hz }
    }
    fn with_filtered(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            rate_hz: self.rate_hz,
        }
    }
}

impl Sampled for Envelope {
    fn samples(&self) -> &[f64] {
        &self.samples
    }
    fn rate_hz(&self) -> f64 {
        self.rate_hz
    }
    fn with_resampled(&self, mut samples: Vec<f64>, rate_hz: f64) -> Self {
        // Band-limited interpolation rings slightly below zero near sharp onsets.
        if !self.band_limited {
            samples.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Self {
            samples,
            rate_hz,
            band_limited: self.band_limited,
        }
    }
    fn with_filtered(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            rate_hz: self.rate_hz,
            band_limited: true,
        }
    }
}

/// Magnitude of the analytic signal, computed over the whole input at once.
pub fn hilbert_envelope(x: &Waveform) -> Result<Envelope> {
    let n = x.samples.len();
    if n == 0 {
        return Err(AadError::InvalidInput("empty waveform".into()));
    }
    let mut buf: Vec<Complex64> = x.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);

    // One-sided spectrum: keep DC (and Nyquist for even n), double positive
    // frequencies, zero the negative half.
    let half = n / 2;
    for (k, bin) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *bin *= gain;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let samples = buf.iter().map(|c| c.norm() * scale).collect();
    Ok(Envelope {
        samples,
        rate_hz: x.rate_hz,
        band_limited: false,
    })
}

/// Band-limited downsampling to `target_hz`.
///
/// The anti-alias filter is applied in the frequency domain: bins below 80%
/// of the output Nyquist pass unchanged, a raised-cosine taper reaches zero
/// at the output Nyquist, and everything above is discarded.
pub fn resample<T: Sampled>(x: &T, target_hz: f64) -> Result<T> {
    check_rate(target_hz)?;
    let rate = x.rate_hz();
    if target_hz > rate {
        return Err(AadError::Unsupported(format!(
            "upsampling from {rate} Hz to {target_hz} Hz"
        )));
    }
    if x.is_empty() {
        return Err(AadError::InvalidInput("empty signal".into()));
    }
    if target_hz == rate {
        return Ok(x.with_resampled(x.samples().to_vec(), rate));
    }
    let n_in = x.len();
    let n_out = ((n_in as f64) * target_hz / rate).round() as usize;
    if n_out == 0 {
        return Err(AadError::InvalidInput(
            "signal too short to resample to the target rate".into(),
        ));
    }

    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex64> = x.samples().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n_in).process(&mut spec);

    let nyq_out = target_hz / 2.0;
    let taper_start = 0.8 * nyq_out;
    let taper = |f: f64| -> f64 {
        if f <= taper_start {
            1.0
        } else if f >= nyq_out {
            0.0
        } else {
            0.5 * (1.0 + (PI * (f - taper_start) / (nyq_out - taper_start)).cos())
        }
    };

    let mut out = vec![Complex64::new(0.0, 0.0); n_out];
    let df = rate / n_in as f64;
    let max_k = (n_out / 2).min(n_in / 2);
    for k in 0..=max_k {
        let g = taper(k as f64 * df);
        if g == 0.0 {
            continue;
        }
        if k == 0 {
            out[0] = spec[0] * g;
        } else {
            out[k] = spec[k] * g;
            out[n_out - k] = spec[n_in - k] * g;
        }
    }
    planner.plan_fft_inverse(n_out).process(&mut out);
    let scale = 1.0 / n_in as f64;
    let samples = out.iter().map(|c| c.re * scale).collect();
    Ok(x.with_resampled(samples, target_hz))
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Per-pass Kaiser design attenuation; the forward-backward pass doubles it.
const FIR_ATTEN_DB: f64 = 40.0;
const MAX_TRANSITION_HZ: f64 = 0.5;

/// Linear-phase Kaiser-windowed band-pass FIR.
///
/// Transition bands sit just outside `[lo_hz, hi_hz]`, so the band edges
/// themselves are in the passband.
pub fn design_bandpass(lo_hz: f64, hi_hz: f64, rate_hz: f64) -> Result<Vec<f64>> {
    check_band(lo_hz, hi_hz, rate_hz)?;
    let nyq = rate_hz / 2.0;
    let tw = MAX_TRANSITION_HZ.min(lo_hz).min(nyq - hi_hz);
    let dw = 2.0 * PI * tw / rate_hz;
    let mut ntaps = ((FIR_ATTEN_DB - 8.0) / (2.285 * dw)).ceil() as usize + 1;
    if ntaps % 2 == 0 {
        ntaps += 1;
    }
    let beta = 0.5842 * (FIR_ATTEN_DB - 21.0).powf(0.4) + 0.07886 * (FIR_ATTEN_DB - 21.0);
    let f1 = (lo_hz - tw / 2.0) / rate_hz;
    let f2 = (hi_hz + tw / 2.0) / rate_hz;
    let mid = (ntaps - 1) as f64 / 2.0;
    let i0_beta = bessel_i0(beta);
    let h = (0..ntaps)
        .map(|i| {
            let m = i as f64 - mid;
            let ideal = if m == 0.0 {
                2.0 * (f2 - f1)
            } else {
                ((2.0 * PI * f2 * m).sin() - (2.0 * PI * f1 * m).sin()) / (PI * m)
            };
            let r = m / mid;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            ideal * w
        })
        .collect();
    Ok(h)
}

fn check_band(lo_hz: f64, hi_hz: f64, rate_hz: f64) -> Result<()> {
    check_rate(rate_hz)?;
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < rate_hz / 2.0) {
        return Err(AadError::InvalidInput(format!(
            "band edges must satisfy 0 < lo < hi < rate/2; got lo={lo_hz}, hi={hi_hz}, rate={rate_hz}"
        )));
    }
    Ok(())
}

fn fir_causal(h: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let kmax = h.len().min(n + 1);
        let mut acc = 0.0;
        for k in 0..kmax {
            acc += h[k] * x[n - k];
        }
        *out = acc;
    }
    y
}

/// Forward-backward FIR filtering with odd-reflection padding at both ends.
pub fn filtfilt(h: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * h.len().saturating_sub(1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let mut y = fir_causal(h, &ext);
    y.reverse();
    let mut y = fir_causal(h, &y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Zero-phase band-pass between `lo_hz` and `hi_hz`.
pub fn bandpass<T: Sampled>(x: &T, lo_hz: f64, hi_hz: f64) -> Result<T> {
    let h = design_bandpass(lo_hz, hi_hz, x.rate_hz())?;
    Ok(x.with_filtered(filtfilt(&h, x.samples())))
}

/// Splits into consecutive trials of `round(trial_sec * rate)` samples,
/// dropping the trailing remainder.
pub fn segment_trials<T: Sampled>(x: &T, trial_sec: f64) -> Result<TrialSequence> {
    if !(trial_sec.is_finite() && trial_sec > 0.0) {
        return Err(AadError::InvalidInput(format!(
            "trial length must be positive, got {trial_sec}"
        )));
    }
    let len = (trial_sec * x.rate_hz()).round() as usize;
    if len == 0 || x.len() < len {
        return Err(AadError::InvalidInput(format!(
            "signal of {} samples is shorter than one trial of {len} samples",
            x.len()
        )));
    }
    let trials = x.samples().chunks_exact(len).map(<[f64]>::to_vec).collect();
    Ok(TrialSequence {
        trials,
        trial_len_samples: len,
        rate_hz: x.rate_hz(),
    })
}

/// Drops `edge_sec` from both ends.
pub fn trim_edges<T: Sampled>(x: &T, edge_sec: f64) -> Result<T> {
    let k = (edge_sec * x.rate_hz()).round() as usize;
    if 2 * k >= x.len() {
        return Err(AadError::InvalidInput(format!(
            "cannot trim {edge_sec} s from each end of a {}-sample signal",
            x.len()
        )));
    }
    // Same rate, so this only re-wraps the slice and keeps the envelope stage.
    Ok(x.with_resampled(x.samples()[k..x.len() - k].to_vec(), x.rate_hz()))
}

/// Analysis-domain settings for the conditioning chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub analysis_rate_hz: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub trial_sec: f64,
    pub edge_trim_sec: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            analysis_rate_hz: 64.0,
            band_lo_hz: 1.0,
            band_hi_hz: 9.0,
            trial_sec: 2.0,
            edge_trim_sec: 0.5,
        }
    }
}

/// Speech recording -> band-limited envelope at the analysis rate.
pub fn prepare_speech(speech: &Waveform, cfg: &PreprocessConfig) -> Result<Envelope> {
    let env = hilbert_envelope(speech)?;
    let env = resample(&env, cfg.analysis_rate_hz)?;
    bandpass(&env, cfg.band_lo_hz, cfg.band_hi_hz)
}

/// Raw EEG channel -> band-limited signal at the analysis rate.
pub fn prepare_eeg(eeg: &Waveform, cfg: &PreprocessConfig) -> Result<Waveform> {
    let x = resample(eeg, cfg.analysis_rate_hz)?;
    bandpass(&x, cfg.band_lo_hz, cfg.band_hi_hz)
}
