//! Synthetic dual-speaker scenes with known TRFs and calibrated SNR.
//!
//! Everything lives in the 64 Hz analysis domain: envelopes are rectified
//! band-pass noise, the EEG channel is the attended and unattended template
//! responses plus white (or optionally 1/f) Gaussian noise.


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::classify::Speaker;
use crate::error::{AadError, Result};
use crate::preprocess::{design_bandpass, filtfilt, Envelope, Sampled, Waveform};

pub const SNR_RANGE_DB: (f64, f64) = (-17.0, -9.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Attended,
    Unattended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrfTemplate {
    pub theta: Vec<f64>,
    pub kind: TemplateKind,
}

/// One Gaussian deflection of a template: amplitude, latency and width in seconds.
#[derive(Debug, Clone, Copy)]
struct Bump {
    amp: f64,
    at: f64,
    width: f64,
}

fn render(bumps: &[Bump], p: usize, rate_hz: f64) -> Vec<f64> {
    (0..p)
        .map(|j| {
            let t = j as f64 / rate_hz;
            bumps
                .iter()
                .map(|b| b.amp * (-(t - b.at).powi(2) / (2.0 * b.width * b.width)).exp())
                .sum()
        })
        .collect()
}

/// Attended N1 and P2 peak magnitude. Lags the 1-9 Hz envelope barely
/// excites keep an error of the order of the standard prior's unit std, so
/// templates must stand well above it to be recoverable.
const PEAK_AMPLITUDE: f64 = 3.0;

/// Attended/unattended templates with an N1-P2 marker ratio of about 2.
pub fn gen_trf_templates(p: usize, rate_hz: f64) -> Result<(TrfTemplate, TrfTemplate)> {
    gen_trf_templates_with_ratio(p, rate_hz, 2.0)
}

/// Templates whose N1 and P2 deflections differ by `marker_ratio` between
/// attended and unattended; the early (< 50 ms) deflection is slightly
/// larger for the unattended one.
pub fn gen_trf_templates_with_ratio(
    p: usize,
    rate_hz: f64,
    marker_ratio: f64,
) -> Result<(TrfTemplate, TrfTemplate)> {
    if !(rate_hz > 0.0) || (p as f64) / rate_hz < 0.3 {
        return Err(AadError::Config(format!(
            "TRF span of {p} lags at {rate_hz} Hz is shorter than the 0.3 s needed for the P2 window"
        )));
    }
    if !(marker_ratio > 1.0 && marker_ratio.is_finite()) {
        return Err(AadError::Config(format!(
            "marker ratio must exceed 1, got {marker_ratio}"
        )));
    }
    let early = |amp: f64| Bump { amp: amp * PEAK_AMPLITUDE, at: 0.030, width: 0.015 };
    let n1 = |amp: f64| Bump { amp: amp * PEAK_AMPLITUDE, at: 0.105, width: 0.025 };
    let p2 = |amp: f64| Bump { amp: amp * PEAK_AMPLITUDE, at: 0.200, width: 0.035 };
    let attended = render(&[early(0.6), n1(-1.0), p2(1.0)], p, rate_hz);
    let s = 1.0 / marker_ratio;
    let unattended = render(&[early(0.7), n1(-s), p2(s)], p, rate_hz);
    Ok((
        TrfTemplate {
            theta: attended,
            kind: TemplateKind::Attended,
        },
        TrfTemplate {
            theta: unattended,
            kind: TemplateKind::Unattended,
        },
    ))
}

/// Rectified 1-9 Hz noise, scaled so its band-passed version has unit RMS.
pub fn gen_envelope(duration_sec: f64, rate_hz: f64, seed: u64) -> Result<Envelope> {
    let n = (duration_sec * rate_hz).round() as usize;
    if !(duration_sec > 0.0) || n == 0 {
        return Err(AadError::InvalidInput(format!(
            "envelope duration must be positive, got {duration_sec}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let h = design_bandpass(1.0, 9.0, rate_hz)?;
    let rectified: Vec<f64> = filtfilt(&h, &white).into_iter().map(f64::abs).collect();
    let banded = filtfilt(&h, &rectified);
    let rms = (banded.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if !(rms > 0.0) {
        return Err(AadError::InvalidInput(
            "envelope too short to carry any 1-9 Hz content".into(),
        ));
    }
    Envelope::new(rectified.into_iter().map(|v| v / rms).collect(), rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttendEpoch {
    pub t_start: f64,
    pub speaker: Speaker,
}

/// Speaker of the last epoch starting at or before `t`.
pub fn schedule_at(schedule: &[AttendEpoch], t: f64) -> Speaker {
    schedule
        .iter()
        .rev()
        .find(|e| e.t_start <= t)
        .or(schedule.first())
        .map_or(Speaker::One, |e| e.speaker)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub duration_sec: f64,
    pub rate_hz: f64,
    pub p: usize,
    pub snr_db: f64,
    pub attend_schedule: Vec<AttendEpoch>,
    pub seed: u64,
    pub marker_ratio: f64,
    /// Diagnostic: EEG is the noiseless response sum.
    pub zero_noise: bool,
    /// Diagnostic: permits SNRs outside the supported range.
    pub allow_any_snr: bool,
    /// Shape the noise with a 1/f power spectrum instead of white.
    pub pink_noise: bool,
}

impl Default for SceneConfig {
    /// 30 minutes, attention on speaker 1 for the first four 5-minute
    /// segments and on speaker 2 for the last two.
    fn default() -> Self {
        Self {
            duration_sec: 1800.0,
            rate_hz: 64.0,
            p: 24,
            snr_db: -12.0,
            attend_schedule: vec![
                AttendEpoch {
                    t_start: 0.0,
                    speaker: Speaker::One,
                },
                AttendEpoch {
                    t_start: 1200.0,
                    speaker: Speaker::Two,
                },
            ],
            seed: 0,
            marker_ratio: 2.0,
            zero_noise: false,
            allow_any_snr: false,
            pink_noise: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_sec > 0.0 && self.duration_sec.is_finite()) {
            return Err(AadError::Config(format!(
                "duration_sec must be positive, got {}",
                self.duration_sec
            )));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(AadError::Config(format!(
                "rate_hz must be positive, got {}",
                self.rate_hz
            )));
        }
        if !self.snr_db.is_finite() {
            return Err(AadError::Config("snr_db must be finite".into()));
        }
        let (lo, hi) = SNR_RANGE_DB;
        if !self.allow_any_snr && !(lo..=hi).contains(&self.snr_db) {
            return Err(AadError::Config(format!(
                "snr_db {} outside the supported range [{lo}, {hi}] dB",
                self.snr_db
            )));
        }
        let sched = &self.attend_schedule;
        if sched.is_empty() || sched[0].t_start != 0.0 {
            return Err(AadError::Config(
                "attend_schedule must start with an epoch at t_start = 0".into(),
            ));
        }
        if sched.windows(2).any(|w| !(w[1].t_start > w[0].t_start)) {
            return Err(AadError::Config(
                "attend_schedule times must be strictly increasing".into(),
            ));
        }
        if let Some(e) = sched.iter().find(|e| e.t_start >= self.duration_sec) {
            return Err(AadError::Config(format!(
                "attend_schedule entry at {} s lies outside the {} s scene",
                e.t_start, self.duration_sec
            )));
        }
        Ok(())
    }

    /// Attended speaker at time `t` seconds.
    pub fn attended_at(&self, t: f64) -> Speaker {
        schedule_at(&self.attend_schedule, t)
    }

    /// Times at which the attended speaker changes.
    pub fn switch_times(&self) -> Vec<f64> {
        self.attend_schedule
            .windows(2)
            .filter(|w| w[0].speaker != w[1].speaker)
            .map(|w| w[1].t_start)
            .collect()
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_sec * self.rate_hz).round() as usize
    }
}

/// Record written next to a synthesized scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub snr_db: f64,
    pub measured_snr_db: Option<f64>,
    pub rate_hz: f64,
    pub duration_sec: f64,
    pub attended_template: Vec<f64>,
    pub unattended_template: Vec<f64>,
    pub attend_schedule: Vec<AttendEpoch>,
    pub marker_ratio: f64,
    pub zero_noise: bool,
    pub pink_noise: bool,
}

impl GroundTruth {
    /// Per-sample attention labels for `n` samples at `rate_hz`.
    pub fn labels(&self, n: usize, rate_hz: f64) -> Vec<Speaker> {
        (0..n)
            .map(|i| schedule_at(&self.attend_schedule, i as f64 / rate_hz))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DualSpeakerScene {
    /// Band-passed speaker envelopes.
    pub env_1: Envelope,
    pub env_2: Envelope,
    pub eeg: Waveform,
    /// Independent noise channel of the same variance as the EEG noise.
    pub noise_ref: Waveform,
    /// Noiseless part of `eeg`.
    pub response: Vec<f64>,
    /// Additive noise part of `eeg`.
    pub noise: Vec<f64>,
    /// Attended speaker per sample.
    pub attended: Vec<Speaker>,
    pub truth: GroundTruth,
}

fn causal_conv(theta: &[f64], s: &[f64]) -> Vec<f64> {
    (0..s.len())
        .map(|t| {
            theta
                .iter()
                .enumerate()
                .take(t + 1)
                .map(|(j, th)| th * s[t - j])
                .sum()
        })
        .collect()
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Zero-mean Gaussian noise with a 1/f power spectrum, unit sample variance.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k);
        *v = if f == 0 { Complex64::new(0.0, 0.0) } else { *v / (f as f64).sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = mean_square(&x).sqrt();
    x.into_iter().map(|v| v / rms).collect()
}

fn draw_noise(rng: &mut ChaCha8Rng, n: usize, pink_noise: bool) -> Vec<f64> {
    if pink_noise {
        pink(rng, n)
    } else {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// `r = θ_a * s_a + θ_u * s_u + w` with the roles of the two envelopes
/// following the attend schedule.
pub fn gen_scene(
    cfg: &SceneConfig,
    templates: &(TrfTemplate, TrfTemplate),
) -> Result<DualSpeakerScene> {
    cfg.validate()?;
    let (att, unatt) = templates;
    if att.kind != TemplateKind::Attended || unatt.kind != TemplateKind::Unattended {
        return Err(AadError::InvalidInput(
            "templates must be given as (attended, unattended)".into(),
        ));
    }
    let n = cfg.n_samples();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: [u64; 2] = [master.random(), master.random()];

    let h = design_bandpass(1.0, 9.0, cfg.rate_hz)?;
    let env = |seed| -> Result<Vec<f64>> {
        let e = gen_envelope(cfg.duration_sec, cfg.rate_hz, seed)?;
        Ok(filtfilt(&h, e.samples()))
    };
    let s1 = env(seeds[0])?;
    let s2 = env(seeds[1])?;

    let (c1a, c1u) = (causal_conv(&att.theta, &s1), causal_conv(&unatt.theta, &s1));
    let (c2a, c2u) = (causal_conv(&att.theta, &s2), causal_conv(&unatt.theta, &s2));
    let attended: Vec<Speaker> = (0..n)
        .map(|t| cfg.attended_at(t as f64 / cfg.rate_hz))
        .collect();
    let response: Vec<f64> = (0..n)
        .map(|t| match attended[t] {
            Speaker::One => c1a[t] + c2u[t],
            Speaker::Two => c2a[t] + c1u[t],
        })
        .collect();

    let p_signal = mean_square(&response);
    if !(p_signal > 0.0) {
        return Err(AadError::InvalidInput("scene response has zero power".into()));
    }
    let p_noise = p_signal / 10f64.powf(cfg.snr_db / 10.0);
    let scale_to = |x: Vec<f64>| -> Vec<f64> {
        let k = (p_noise / mean_square(&x)).sqrt();
        x.into_iter().map(|v| v * k).collect()
    };
    let noise_draw = scale_to(draw_noise(&mut master, n, cfg.pink_noise));
    let noise_ref = scale_to(draw_noise(&mut master, n, cfg.pink_noise));
    let noise = if cfg.zero_noise { vec![0.0; n] } else { noise_draw };
    let eeg: Vec<f64> = response.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let measured = (!cfg.zero_noise).then(|| measure_snr_db(&response, &noise)).transpose()?;

    let truth = GroundTruth {
        seed: cfg.seed,
        snr_db: cfg.snr_db,
        measured_snr_db: measured,
        rate_hz: cfg.rate_hz,
        duration_sec: cfg.duration_sec,
        attended_template: att.theta.clone(),
        unattended_template: unatt.theta.clone(),
        attend_schedule: cfg.attend_schedule.clone(),
        marker_ratio: cfg.marker_ratio,
        zero_noise: cfg.zero_noise,
        pink_noise: cfg.pink_noise,
    };
    Ok(DualSpeakerScene {
        env_1: Envelope::band_limited(s1, cfg.rate_hz)?,
        env_2: Envelope::band_limited(s2, cfg.rate_hz)?,
        eeg: Waveform::new(eeg, cfg.rate_hz)?,
        noise_ref: Waveform::new(noise_ref, cfg.rate_hz)?,
        response,
        noise,
        attended,
        truth,
    })
}

/// Templates from the config's span and marker ratio, then the scene.
pub fn gen_default_scene(cfg: &SceneConfig) -> Result<DualSpeakerScene> {
    let templates = gen_trf_templates_with_ratio(cfg.p, cfg.rate_hz, cfg.marker_ratio)?;
    gen_scene(cfg, &templates)
}

/// `10·log10(mean(signal²) / mean(noise²))`.
pub fn measure_snr_db(signal: &[f64], noise: &[f64]) -> Result<f64> {
    if signal.len() != noise.len() {
        return Err(AadError::Dimension(format!(
            "signal has {} samples, noise has {}",
            signal.len(),
            noise.len()
        )));
    }
    if signal.is_empty() {
        return Err(AadError::InvalidInput("empty signal".into()));
    }
    let pn = mean_square(noise);
    if pn == 0.0 {
        return Err(AadError::DegenerateNoise(
            "zero noise power, SNR is +inf".into(),
        ));
    }
    Ok(10.0 * (mean_square(signal) / pn).log10())
}

/// Periodogram centroid in Hz, mean removed.
pub fn spectral_centroid_hz(x: &[f64], rate_hz: f64) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * rate_hz / n as f64;
        num += f * c.norm_sqr();
        den += c.norm_sqr();
    }
    num / den
}
