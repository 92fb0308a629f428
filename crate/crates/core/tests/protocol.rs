use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use trf_aad::classify::Speaker;
use trf_aad::estimation::{
    init_prior_from_block, lagged_matrix, lmmse_batch, noise_cov_single, NoiseModel, NoiseSchedule,
    SequentialLmmse, TrfPrior,
};
use trf_aad::pipeline::{
    run_protocol, significance_level, split_blocks, BlockSplit, Estimator, ProtocolConfig, Recording,
};
use trf_aad::preprocess::{Sampled, TrialSequence};
use trf_aad::synth::{gen_default_scene, gen_envelope, AttendEpoch, DualSpeakerScene, SceneConfig};

const N: usize = 128;
const P: usize = 24;
const RATE: f64 = 64.0;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn attend_one(duration_sec: f64, snr_db: f64, seed: u64) -> SceneConfig {
    SceneConfig {
        duration_sec,
        snr_db,
        seed,
        allow_any_snr: true,
        attend_schedule: vec![AttendEpoch {
            t_start: 0.0,
            speaker: Speaker::One,
        }],
        ..SceneConfig::default()
    }
}

fn trials(x: &[f64]) -> TrialSequence {
    TrialSequence {
        trials: x.chunks_exact(N).map(<[f64]>::to_vec).collect(),
        trial_len_samples: N,
        rate_hz: RATE,
    }
}

#[test]
fn posterior_mse_is_below_prior_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = DMatrix::<f64>::from_fn(P, P, |_, _| rng.sample(StandardNormal));
    let cov = &a * a.transpose() / P as f64 + DMatrix::identity(P, P) * 0.05;
    let prior = TrfPrior::new(DVector::zeros(P), cov.clone()).unwrap();
    let chol = cov.clone().cholesky().unwrap().l();
    let env = gen_envelope(N as f64 / RATE, RATE, 4).unwrap();
    let design = lagged_matrix(env.samples(), P, RATE).unwrap();
    let s = design.matrix().clone();
    // -12 dB against the prior-averaged response power
    let signal_power = (&s * &cov * s.transpose()).trace() / N as f64;
    let var = signal_power * 10f64.powf(1.2);
    let noise = NoiseModel::scaled_identity(var).unwrap();

    // dense-solve reference, LU instead of the library's Cholesky
    let gain = {
        let inner = &s * &cov * s.transpose() + DMatrix::identity(N, N) * var;
        let inv = inner.lu().try_inverse().unwrap();
        &cov * s.transpose() * inv
    };
    let m_ref = &cov - &gain * &s * &cov;

    let draws = 2000;
    let mut sq_err = 0.0;
    for _ in 0..draws {
        let theta = &chol * DVector::from_fn(P, |_, _| rng.sample(StandardNormal));
        let r: Vec<f64> = (&s * &theta)
            .iter()
            .map(|v| v + var.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let est = lmmse_batch(&design, &r, &prior, &noise).unwrap();
        let reference = &gain * DVector::from_column_slice(&r);
        assert!((&est.theta - &reference).norm() <= 1e-9 * reference.norm().max(1.0));
        sq_err += (&est.theta - &theta).norm_squared();
    }
    let mse = sq_err / draws as f64;
    let predicted = m_ref.trace();
    assert!(mse < cov.trace(), "empirical MSE {mse} vs prior trace {}", cov.trace());
    assert!((mse / predicted - 1.0).abs() < 0.1, "empirical {mse} vs predicted {predicted}");
}

#[test]
fn initial_prior_follows_the_attended_template() {
    let scene = gen_default_scene(&attend_one(600.0, -12.0, 21)).unwrap();
    let noise = NoiseSchedule::PerTrial(
        trials(scene.noise_ref.samples())
            .trials
            .iter()
            .map(|w| noise_cov_single(w).unwrap())
            .collect(),
    );
    let prior = init_prior_from_block(
        &trials(scene.env_1.samples()),
        &trials(scene.env_2.samples()),
        &trials(scene.eeg.samples()),
        &noise,
        P,
    )
    .unwrap();
    let r = pearson(prior.mean.as_slice(), &scene.truth.attended_template);
    assert!(r > 0.5, "prior mean vs attended template r = {r}");
}

#[test]
fn sequential_estimate_recovers_template_at_zero_db() {
    let scene = gen_default_scene(&attend_one(120.0, 0.0, 5)).unwrap();
    let env = trials(scene.env_1.samples());
    let eeg = trials(scene.eeg.samples());
    let noise = trials(scene.noise_ref.samples());
    let mut chain = SequentialLmmse::new(&TrfPrior::standard(P), RATE);
    for i in 0..60 {
        let d = lagged_matrix(&env.trials[i], P, RATE).unwrap();
        chain.step(&d, &eeg.trials[i], &noise_cov_single(&noise.trials[i]).unwrap()).unwrap();
    }
    let r = pearson(chain.state().theta.as_slice(), &scene.truth.attended_template);
    assert!(r > 0.9, "r = {r}");
}

fn default_split(seed: u64) -> (DualSpeakerScene, BlockSplit) {
    let scene = gen_default_scene(&SceneConfig {
        seed,
        ..SceneConfig::default()
    })
    .unwrap();
    let split = split_blocks(&Recording::from_scene(&scene), &ProtocolConfig::default()).unwrap();
    (scene, split)
}

#[test]
fn shuffled_training_labels_decode_at_chance() {
    let cfg = ProtocolConfig::default();
    let (_, split) = default_split(2);
    let n = split.test.len();
    // two-sided 95% band around 50%
    let hi = significance_level(n, 0.975);
    let lo = 100.0 - hi;
    // Markers form two well separated clusters, so a single shuffle lands
    // near 0% or 100%. The training labels are balanced, which makes the
    // flip of a shuffle another shuffle; pairing them cancels that spread.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pairs = 8;
    let mut mean = 0.0;
    for _ in 0..pairs {
        let mut labels: Vec<Speaker> = split.train.iter().map(|t| t.attended).collect();
        labels.shuffle(&mut rng);
        for flip in [false, true] {
            let mut shuffled = split.clone();
            for (t, l) in shuffled.train.iter_mut().zip(&labels) {
                t.attended = if flip { l.other() } else { *l };
            }
            let res = run_protocol(&shuffled, &cfg, Estimator::Ls60Overlap).unwrap();
            mean += res.accuracy / (2 * pairs) as f64;
        }
    }
    let intact = run_protocol(&split, &cfg, Estimator::Ls60Overlap).unwrap();
    assert!(intact.above_chance, "intact accuracy {}", intact.accuracy);
    assert!((lo..=hi).contains(&mean), "shuffled mean accuracy {mean} outside [{lo}, {hi}]");
}

#[test]
fn relaxed_sequential_chain_decodes_above_chance() {
    let cfg = ProtocolConfig {
        relaxation: 0.03,
        ..ProtocolConfig::default()
    };
    for seed in 1..=5 {
        let (_, split) = default_split(seed);
        let res = run_protocol(&split, &cfg, Estimator::SeqLmmse).unwrap();
        assert!(
            res.above_chance,
            "seed {seed}: accuracy {} vs level {}",
            res.accuracy, res.significance_level
        );
    }
}

/// Attention alternating every 150 s, so the test block holds three switches.
fn alternating(seed: u64) -> BlockSplit {
    let schedule = (0..12)
        .map(|k| AttendEpoch {
            t_start: 150.0 * k as f64,
            speaker: if k % 2 == 0 { Speaker::One } else { Speaker::Two },
        })
        .collect();
    let scene = gen_default_scene(&SceneConfig {
        seed,
        attend_schedule: schedule,
        ..SceneConfig::default()
    })
    .unwrap();
    split_blocks(&Recording::from_scene(&scene), &ProtocolConfig::default()).unwrap()
}

#[test]
fn switch_latency_reflects_estimator_inertia() {
    let relaxed = ProtocolConfig {
        relaxation: 0.03,
        ..ProtocolConfig::default()
    };
    for seed in 1..=3 {
        let split = alternating(seed);
        for (cfg, est) in [(&relaxed, Estimator::SeqLmmse), (&ProtocolConfig::default(), Estimator::Ls60Overlap)] {
            let res = run_protocol(&split, cfg, est).unwrap();
            assert_eq!(res.switch_latencies_sec.len(), 3);
            let median = res.median_latency_sec.expect("a switch is detected");
            assert!(
                median.is_finite() && median > 2.0,
                "seed {seed}, {}: median latency {median}",
                est.name()
            );
        }
    }
}

#[test]
fn ls_window_baseline_is_above_chance() {
    let (_, split) = default_split(4);
    let res = run_protocol(&split, &ProtocolConfig::default(), Estimator::Ls60Overlap).unwrap();
    assert!(res.above_chance, "accuracy {}", res.accuracy);
    assert!(res.ridge.is_some());
}
