//! Chance-level accuracy thresholds from the exact binomial tail, and
//! switch latency on a hand-made probability trace.

use trf_aad::classify::Speaker;
use trf_aad::pipeline::{significance_level, switch_latency, LatencyRule, Switch};

fn main() {
    println!("{:>6} {:>10}", "trials", "threshold");
    for n in [10, 20, 50, 100, 200, 298, 300, 500, 1000] {
        println!("{n:>6} {:>9.2}%", significance_level(n, 0.95));
    }

    // Attention moves to speaker 2 at trial 10; the probability follows
    // with a short lag and one spurious dip back.
    let probs = [
        0.9, 0.92, 0.88, 0.95, 0.9, 0.91, 0.87, 0.93, 0.9, 0.94, // speaker 1
        0.8, 0.6, 0.45, 0.3, 0.55, 0.2, 0.1, 0.15, 0.05, 0.1,
    ];
    let switches = [Switch { trial: 10, to: Speaker::Two }];
    let latency = switch_latency(&probs, &switches, 2.0, &LatencyRule::default());
    println!("\nswitch at trial 10 detected after {:?} s", latency[0]);
}
