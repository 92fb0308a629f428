//! Synthesize a dual-speaker EEG scene and save it as a matrix file with
//! its ground-truth sidecar.
//!
//!     cargo run --release --example synth_scene [out_dir] [seed] [snr_db]

use std::path::PathBuf;

use trf_aad::cli::cmd_synth;
use trf_aad::io::{MatrixFile, RunConfig};
use trf_aad::synth::{gen_default_scene, measure_snr_db};

fn main() -> trf_aad::Result<()> {
    let mut args = std::env::args().skip(1);
    let out_dir = args.next().map_or_else(|| std::env::temp_dir().join("aad-scene"), PathBuf::from);
    let mut cfg = RunConfig::default();
    if let Some(seed) = args.next().and_then(|s| s.parse().ok()) {
        cfg.scene.seed = seed;
    }
    if let Some(snr) = args.next().and_then(|s| s.parse().ok()) {
        cfg.scene.snr_db = snr;
    }

    let scene = gen_default_scene(&cfg.scene)?;
    println!(
        "{} s at {} Hz, target SNR {} dB, measured {:.3} dB",
        cfg.scene.duration_sec,
        cfg.scene.rate_hz,
        cfg.scene.snr_db,
        measure_snr_db(&scene.response, &scene.noise)?
    );
    println!("attention switches at {:?} s", cfg.scene.switch_times());
    println!("attended TRF template: {:?}", &scene.truth.attended_template[..8]);

    let out = cmd_synth(&cfg, &out_dir)?;
    let m = MatrixFile::load(&out.scene)?;
    println!(
        "wrote {} ({} rows, channels {:?}) and {}",
        out.scene.display(),
        m.rows(),
        m.channels(),
        out.truth.display()
    );
    Ok(())
}
