//! Track a temporal response function trial by trial with the sequential
//! LMMSE estimator and compare it with per-trial least squares.
//!
//!     cargo run --release --example sequential_trf [snr_db]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trf_aad::estimation::{lagged_matrix, ls_estimate, noise_cov_single, SequentialLmmse, TrfPrior};
use trf_aad::preprocess::Sampled;
use trf_aad::synth::{gen_envelope, gen_trf_templates};

const RATE: f64 = 64.0;
const P: usize = 24;
const TRIAL: usize = 128;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn main() -> trf_aad::Result<()> {
    let snr_db: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(-12.0);
    let (truth, _) = gen_trf_templates(P, RATE)?;
    let n_trials = 150;
    let env = gen_envelope(n_trials as f64 * TRIAL as f64 / RATE, RATE, 3)?;

    // r = S θ + w, one 2 s trial at a time.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut trials = Vec::new();
    let mut signal_power = 0.0;
    for k in 0..n_trials {
        let s = &env.samples()[k * TRIAL..(k + 1) * TRIAL];
        let design = lagged_matrix(s, P, RATE)?;
        let clean: Vec<f64> = (design.matrix() * nalgebra::DVector::from_column_slice(&truth.theta))
            .iter()
            .copied()
            .collect();
        signal_power += clean.iter().map(|v| v * v).sum::<f64>();
        trials.push((design, clean));
    }
    let sigma = (signal_power / (n_trials * TRIAL) as f64 / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");

    let mut seq = SequentialLmmse::new(&TrfPrior::standard(P), RATE);
    println!("SNR {snr_db} dB, noise sigma {sigma:.3}");
    println!("{:>5} {:>12} {:>12} {:>12}", "trial", "r(seq)", "r(ls)", "trace(M)");
    for (k, (design, clean)) in trials.iter().enumerate() {
        let r: Vec<f64> = clean.iter().map(|v| v + normal.sample(&mut rng)).collect();
        let reference: Vec<f64> = (0..TRIAL).map(|_| normal.sample(&mut rng)).collect();
        let noise = noise_cov_single(&reference)?;
        let est = seq.step(design, &r, &noise)?.clone();
        let ls = ls_estimate(design, &r, 1e-2)?;
        if (k + 1) % 15 == 0 || k == 0 {
            println!(
                "{:>5} {:>12.3} {:>12.3} {:>12.4}",
                k + 1,
                pearson(est.theta.as_slice(), &truth.theta),
                pearson(ls.theta.as_slice(), &truth.theta),
                est.mse.trace()
            );
        }
    }
    Ok(())
}
