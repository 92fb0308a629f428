//! Decode several synthetic scenes with all three estimators on identical
//! splits and print the mean accuracy table.
//!
//!     cargo run --release --example compare_estimators [n_seeds] [relaxation]

use trf_aad::cli::{cmd_compare, cmd_synth};
use trf_aad::io::RunConfig;

fn main() -> trf_aad::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut cfg = RunConfig::default();
    if let Some(tau) = args.next().and_then(|s| s.parse().ok()) {
        cfg.protocol.relaxation = tau;
    }

    let root = std::env::temp_dir().join("aad-compare");
    let mut scenes = Vec::new();
    for seed in 0..n_seeds {
        let mut scene_cfg = cfg.clone();
        scene_cfg.scene.seed = seed;
        scenes.push(cmd_synth(&scene_cfg, &root.join(format!("seed-{seed}")))?.scene);
    }

    let table = cmd_compare(&scenes, &cfg, &root)?;
    println!("{:<18} {:>10} {:>10} {:>8}", "estimator", "accuracy", "lag std", "> chance");
    for row in &table.rows {
        println!(
            "{:<18} {:>9.2}% {:>10.4} {:>5}/{}",
            row.estimator.name(),
            row.mean_accuracy,
            row.mean_trf_lag_std,
            row.n_above_chance,
            row.n_scenes
        );
    }
    println!("\nper-run table: {}", root.join("compare_runs.csv").display());
    Ok(())
}
