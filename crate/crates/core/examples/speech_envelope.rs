//! Condition a speech-like recording into a 1–9 Hz envelope at 64 Hz and
//! cut it into 2 s trials.
//!
//!     cargo run --release --example speech_envelope [input.wav]
//!
//! Without an argument a 16 kHz amplitude-modulated noise is synthesized,
//! written to a temporary WAV file and read back.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trf_aad::io::{read_wav, write_wav};
use trf_aad::preprocess::{prepare_speech, segment_trials, PreprocessConfig, Sampled, Waveform};
use trf_aad::synth::spectral_centroid_hz;

fn main() -> trf_aad::Result<()> {
    let cfg = PreprocessConfig::default();
    let _tmp;
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            // 4 Hz syllabic rhythm on a 16 kHz noise carrier.
            let rate = 16_000.0;
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let speech: Vec<f64> = (0..(20.0 * rate) as usize)
                .map(|i| {
                    let t = i as f64 / rate;
                    let am = 0.5 * (1.0 + (2.0 * PI * 4.0 * t).sin());
                    0.3 * am * rng.random_range(-1.0..1.0)
                })
                .collect();
            _tmp = tempfile::tempdir()?;
            let p = _tmp.path().join("speech.wav");
            write_wav(&p, &Waveform::new(speech, rate)?)?;
            p
        }
    };

    let channels = read_wav(&path)?;
    let speech = &channels[0];
    println!(
        "{}: {} channel(s), {:.1} s at {} Hz",
        path.display(),
        channels.len(),
        speech.duration_sec(),
        speech.rate_hz()
    );

    let env = prepare_speech(speech, &cfg)?;
    println!(
        "envelope: {} samples at {} Hz, spectral centroid {:.2} Hz",
        env.len(),
        env.rate_hz(),
        spectral_centroid_hz(env.samples(), env.rate_hz())
    );

    let trials = segment_trials(&env, cfg.trial_sec)?;
    println!(
        "{} trials of {} samples",
        trials.trials.len(),
        trials.trial_len_samples
    );
    for (i, t) in trials.trials.iter().take(4).enumerate() {
        let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        println!("  trial {i}: rms {rms:.4}");
    }
    Ok(())
}
