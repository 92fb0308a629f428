//! The four commands behind the `aad` binary, usable as library calls.
//!
//! A scene on disk is a matrix file (`*.aadm`, or `*.csv`) with the
//! channels `env_1`, `env_2`, `eeg` and one or more `noise_ref*`, plus a
//! ground-truth sidecar named `<stem>.truth.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{debug, info};
use serde::Serialize;

use crate::error::{AadError, Result};
use crate::io::{MatrixFile, RunConfig};
use crate::pipeline::{run_protocol, split_blocks, BlockSplit, DecodingResult, Estimator, Recording};
use crate::plot;
use crate::preprocess::{bandpass, prepare_eeg, resample, Envelope, Sampled, Waveform};
use crate::synth::{gen_default_scene, GroundTruth};

pub const SCENE_FILE: &str = "scene.aadm";

/// `<dir>/<stem>.truth.json` for a scene file `<dir>/<stem>.<ext>`.
pub fn sidecar_path(scene: &Path) -> PathBuf {
    scene.with_extension("truth.json")
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents)?;
    debug!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scene: PathBuf,
    pub truth: PathBuf,
    pub ground_truth: GroundTruth,
}

/// Synthesizes the configured scene into `out_dir`.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let scene = gen_default_scene(&cfg.scene)?;
    let rate = cfg.scene.rate_hz;
    let matrix = MatrixFile::from_columns(
        rate,
        vec![
            ("env_1".into(), scene.env_1.samples().to_vec()),
            ("env_2".into(), scene.env_2.samples().to_vec()),
            ("eeg".into(), scene.eeg.samples().to_vec()),
            ("noise_ref".into(), scene.noise_ref.samples().to_vec()),
        ],
    )?;
    fs::create_dir_all(out_dir)?;
    let scene_path = out_dir.join(SCENE_FILE);
    let truth_path = sidecar_path(&scene_path);
    matrix.save(&scene_path)?;
    let mut truth_json = serde_json::to_string_pretty(&scene.truth)
        .map_err(|e| AadError::Format(e.to_string()))?;
    truth_json.push('\n');
    write_file(&truth_path, truth_json.as_bytes())?;
    info!(
        "synthesized {} rows x {} channels at {rate} Hz (seed {}, {} dB)",
        matrix.rows(),
        matrix.cols(),
        cfg.scene.seed,
        cfg.scene.snr_db
    );
    Ok(SynthOutput {
        scene: scene_path,
        truth: truth_path,
        ground_truth: scene.truth,
    })
}

fn required(m: &MatrixFile, name: &str) -> Result<Vec<f64>> {
    m.column(name).ok_or_else(|| {
        AadError::InvalidInput(format!(
            "scene is missing channel {name:?} (has {})",
            m.channels().join(", ")
        ))
    })
}

/// Loads a scene and its sidecar and brings every channel to the analysis
/// rate. Channels already at that rate are taken as conditioned.
pub fn load_recording(scene: &Path, cfg: &RunConfig) -> Result<Recording> {
    let m = MatrixFile::load(scene)?;
    let truth_path = sidecar_path(scene);
    let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(&truth_path)?)
        .map_err(|e| AadError::Format(format!("{}: {e}", truth_path.display())))?;
    let rate = m.rate_hz();
    if truth.rate_hz != rate {
        return Err(AadError::Dimension(format!(
            "sidecar says {} Hz, matrix header says {rate} Hz",
            truth.rate_hz
        )));
    }
    let expected = (truth.duration_sec * rate).round() as usize;
    if m.rows() != expected {
        return Err(AadError::Dimension(format!(
            "matrix has {} rows, sidecar implies {expected} ({} s at {rate} Hz)",
            m.rows(),
            truth.duration_sec
        )));
    }
    let env_1 = required(&m, "env_1")?;
    let env_2 = required(&m, "env_2")?;
    let eeg = required(&m, "eeg")?;
    let noise: Vec<Vec<f64>> = m
        .channels()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("noise_ref"))
        .map(|(j, _)| m.column_at(j))
        .collect();
    if noise.is_empty() {
        return Err(AadError::InvalidInput(format!(
            "scene is missing channel \"noise_ref\" (has {})",
            m.channels().join(", ")
        )));
    }

    let pre = &cfg.protocol.preprocess;
    let target = pre.analysis_rate_hz;
    if rate == target {
        let labels = truth.labels(m.rows(), rate);
        return Recording::new(env_1, env_2, eeg, noise, labels, rate);
    }
    info!("conditioning scene from {rate} Hz to {target} Hz");
    let env = |x: Vec<f64>| -> Result<Vec<f64>> {
        let e = resample(&Envelope::band_limited(x, rate)?, target)?;
        Ok(bandpass(&e, pre.band_lo_hz, pre.band_hi_hz)?.into_samples())
    };
    let wave = |x: Vec<f64>| -> Result<Vec<f64>> {
        Ok(prepare_eeg(&Waveform::new(x, rate)?, pre)?.into_samples())
    };
    let eeg = wave(eeg)?;
    let labels = truth.labels(eeg.len(), target);
    Recording::new(
        env(env_1)?,
        env(env_2)?,
        eeg,
        noise.into_iter().map(wave).collect::<Result<_>>()?,
        labels,
        target,
    )
}

fn load_split(scene: &Path, cfg: &RunConfig) -> Result<BlockSplit> {
    let rec = load_recording(scene, cfg)?;
    split_blocks(&rec, &cfg.protocol)
}

/// Runs the protocol with `cfg.estimator` and writes `result.json`,
/// `trials.csv` and the three SVG panels into `out_dir`.
pub fn cmd_decode(scene: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<DecodingResult> {
    cfg.validate()?;
    let split = load_split(scene, cfg)?;
    let res = run_protocol(&split, &cfg.protocol, cfg.estimator)?;
    fs::create_dir_all(out_dir)?;
    let mut json = res.to_json()?;
    json.push('\n');
    write_file(&out_dir.join("result.json"), json.as_bytes())?;
    write_file(&out_dir.join("trials.csv"), res.to_csv().as_bytes())?;
    write_file(&out_dir.join("markers.svg"), plot::markers_svg(&res, split.trial_sec).as_bytes())?;
    write_file(
        &out_dir.join("probability.svg"),
        plot::probability_svg(&res, split.trial_sec).as_bytes(),
    )?;
    write_file(&out_dir.join("scatter.svg"), plot::scatter_svg(&res).as_bytes())?;
    info!(
        "{}: accuracy {:.2}% over {} test trials (chance threshold {:.2}%)",
        res.estimator.name(),
        res.accuracy,
        res.n_test_trials,
        res.significance_level
    );
    Ok(res)
}

/// One estimator on one scene.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRun {
    pub scene: String,
    pub estimator: Estimator,
    pub accuracy: f64,
    pub significance_level: f64,
    pub trf_lag_std: f64,
    pub median_latency_sec: Option<f64>,
}

/// One estimator averaged over all scenes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub estimator: Estimator,
    pub n_scenes: usize,
    pub mean_accuracy: f64,
    pub mean_trf_lag_std: f64,
    pub n_above_chance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    pub runs: Vec<CompareRun>,
}

impl CompareTable {
    pub fn row(&self, estimator: Estimator) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimator,n_scenes,mean_accuracy,mean_trf_lag_std,n_above_chance\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.estimator.name(),
                r.n_scenes,
                r.mean_accuracy,
                r.mean_trf_lag_std,
                r.n_above_chance
            ));
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s =
            String::from("scene,estimator,accuracy,significance_level,trf_lag_std,median_latency_sec\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.scene,
                r.estimator.name(),
                r.accuracy,
                r.significance_level,
                r.trf_lag_std,
                r.median_latency_sec.map_or(String::new(), |v| v.to_string())
            ));
        }
        s
    }
}

fn scene_label(path: &Path) -> String {
    let s = path.display().to_string();
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Runs every estimator on every scene with identical splits, in parallel,
/// and writes `compare.csv` (one row per estimator) and `compare_runs.csv`.
pub fn cmd_compare(scenes: &[PathBuf], cfg: &RunConfig, out_dir: &Path) -> Result<CompareTable> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(AadError::InvalidInput("compare needs at least one scene".into()));
    }
    let splits = scenes
        .iter()
        .map(|s| load_split(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Estimator)> = (0..scenes.len())
        .flat_map(|i| Estimator::ALL.into_iter().map(move |e| (i, e)))
        .collect();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<(usize, Result<DecodingResult>)>> = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, est)) = jobs.get(k) else { break };
                debug!("compare: {} on {}", est.name(), scenes[i].display());
                let r = run_protocol(&splits[i], &cfg.protocol, est);
                done.lock().expect("no worker panicked").push((k, r));
            });
        }
    });
    let mut done = done.into_inner().expect("no worker panicked");
    done.sort_by_key(|(k, _)| *k);

    let mut runs = Vec::with_capacity(jobs.len());
    for ((i, est), (_, r)) in jobs.iter().zip(done) {
        let r = r?;
        runs.push(CompareRun {
            scene: scene_label(&scenes[*i]),
            estimator: *est,
            accuracy: r.accuracy,
            significance_level: r.significance_level,
            trf_lag_std: r.trf_lag_std,
            median_latency_sec: r.median_latency_sec,
        });
    }
    let rows = Estimator::ALL
        .into_iter()
        .map(|est| {
            let mine: Vec<&CompareRun> = runs.iter().filter(|r| r.estimator == est).collect();
            let n = mine.len();
            CompareRow {
                estimator: est,
                n_scenes: n,
                mean_accuracy: mine.iter().map(|r| r.accuracy).sum::<f64>() / n as f64,
                mean_trf_lag_std: mine.iter().map(|r| r.trf_lag_std).sum::<f64>() / n as f64,
                n_above_chance: mine.iter().filter(|r| r.accuracy > r.significance_level).count(),
            }
        })
        .collect();
    let table = CompareTable { rows, runs };
    fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("compare.csv"), table.to_csv().as_bytes())?;
    write_file(&out_dir.join("compare_runs.csv"), table.runs_csv().as_bytes())?;
    for r in &table.rows {
        info!(
            "{:>18}: mean accuracy {:.2}% over {} scenes, TRF lag std {:.4}",
            r.estimator.name(),
            r.mean_accuracy,
            r.n_scenes,
            r.mean_trf_lag_std
        );
    }
    Ok(table)
}

/// Parses and validates a config file. An empty list means the config is
/// usable; parse failures are reported as a single diagnostic.
pub fn cmd_validate(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(match RunConfig::from_json(&text) {
        Ok(cfg) => cfg.diagnostics(),
        Err(AadError::Config(m)) => vec![format!("parse: {m}")],
        Err(e) => return Err(e),
    })
}
