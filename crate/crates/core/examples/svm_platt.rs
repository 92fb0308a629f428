//! Train the linear SVM on two marker clouds, calibrate it with Platt
//! scaling and save the model in its text format.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trf_aad::classify::{attend_probability, AttentionClassifier, MarkerSample, Speaker};

fn main() -> trf_aad::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spread = Normal::new(0.0, 0.25).expect("valid sigma");
    let mut samples = Vec::new();
    for (y, centre) in [(Speaker::One, [1.6, 0.9]), (Speaker::Two, [0.9, 1.5])] {
        for _ in 0..100 {
            let x = [centre[0] + spread.sample(&mut rng), centre[1] + spread.sample(&mut rng)];
            samples.push(MarkerSample { x, y });
        }
    }

    let model = AttentionClassifier::fit(&samples, 1.0)?;
    let platt = model.platt.expect("fit calibrates");
    println!("w = [{:.4}, {:.4}], b = {:.4}", model.weights[0], model.weights[1], model.bias);
    println!(
        "{} support vectors, duality gap {:.2e}",
        model.support_indices.len(),
        model.duality_gap
    );
    println!("Platt A = {:.4}, B = {:.4}", platt.a, platt.b);

    let correct = samples.iter().filter(|s| model.predict(s.x) == s.y).count();
    println!("training accuracy {:.1}%", 100.0 * correct as f64 / samples.len() as f64);

    for x in [[2.0, 0.5], [1.25, 1.2], [0.6, 1.9]] {
        println!(
            "P(speaker 1 | {x:?}) = {:.3}, margin {:+.3}",
            attend_probability(&model, x)?,
            model.margin(x)
        );
    }

    let text = model.to_text();
    let back = AttentionClassifier::from_text(&text)?;
    assert_eq!(back.weights, model.weights);
    println!("\n{text}");
    Ok(())
}
