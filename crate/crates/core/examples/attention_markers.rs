//! Read N1–P2 attention markers off the attended and unattended TRF
//! templates and off a noisy copy of each.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use nalgebra::{DMatrix, DVector};
use trf_aad::estimation::TrfEstimate;
use trf_aad::markers::{attention_marker, find_n1_peak, find_p2_peak, PeakWindows};
use trf_aad::synth::gen_trf_templates;

fn estimate(theta: Vec<f64>) -> TrfEstimate {
    let p = theta.len();
    TrfEstimate {
        theta: DVector::from_vec(theta),
        mse: DMatrix::zeros(p, p),
        lag_rate_hz: 64.0,
        mse_valid: false,
    }
}

fn main() -> trf_aad::Result<()> {
    let win = PeakWindows::default();
    let (n1, p2) = win.lag_ranges(64.0, 24)?;
    println!("N1 lags {n1:?}, P2 lags {p2:?}");

    let (att, unatt) = gen_trf_templates(24, 64.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let jitter = Normal::new(0.0, 0.15).expect("valid sigma");
    for (name, theta) in [("attended", &att.theta), ("unattended", &unatt.theta)] {
        let clean = estimate(theta.clone());
        let noisy = estimate(theta.iter().map(|v| v + jitter.sample(&mut rng)).collect());
        for (kind, trf) in [("clean", &clean), ("noisy", &noisy)] {
            let m = attention_marker(trf, &win)?;
            let n = find_n1_peak(trf, &win)?;
            let p = find_p2_peak(trf, &win)?;
            println!(
                "{name:>10} {kind}: N1 {:+.3} at lag {:?}, P2 {:+.3} at lag {:?}, marker {:.3}",
                m.n1, n.lag, m.p2, p.lag, m.value
            );
        }
    }

    // No negative sample inside the N1 window: the N1 amplitude falls back to zero.
    let flat = estimate(vec![0.5; 24]);
    println!("all-positive TRF marker: {:?}", attention_marker(&flat, &win)?);
    Ok(())
}
