//! The three-block decoding protocol and its evaluation metrics.
//!
//! A recording is cut into equal segments; by default six (A-F) with
//! blocks init = (A, B), train = (C, E), test = (D, F). Each segment is
//! edge-trimmed and cut into trials. Per-speaker TRF chains run through the
//! training block, whose labelled marker pairs train the classifier, and
//! continue through the test block where every trial is classified.

use serde::{Deserialize, Serialize};

use crate::classify::{AttentionClassifier, MarkerSample, Speaker};
use crate::error::{AadError, Result};
use crate::estimation::{
    init_prior_from_block, lagged_matrix, noise_cov_multi, noise_cov_single, Loading, NoiseModel,
    NoiseSchedule, NormalEquations, SequentialLmmse, TrfEstimate,
};
use crate::markers::{attention_marker, PeakWindows};
use crate::preprocess::{PreprocessConfig, Sampled, TrialSequence};
use crate::synth::DualSpeakerScene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    SeqLmmse,
    #[serde(rename = "ls_2sec")]
    Ls2sec,
    #[serde(rename = "ls_60sec_overlap")]
    Ls60Overlap,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::SeqLmmse, Estimator::Ls60Overlap, Estimator::Ls2sec];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::SeqLmmse => "seq_lmmse",
            Estimator::Ls2sec => "ls_2sec",
            Estimator::Ls60Overlap => "ls_60sec_overlap",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = AadError;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                AadError::Config(format!(
                    "unknown estimator {s:?}; expected seq_lmmse, ls_2sec or ls_60sec_overlap"
                ))
            })
    }
}

/// How the per-trial noise covariance is obtained from the reference channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseEstimation {
    /// From the concurrent reference trial: its sample variance, or the
    /// loaded sample covariance when several reference channels exist.
    PerTrial,
    /// One pooled variance per block.
    BlockFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyRule {
    pub threshold: f64,
    pub hold_trials: usize,
}

impl Default for LatencyRule {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            hold_trials: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub preprocess: PreprocessConfig,
    pub n_lags: usize,
    pub windows: PeakWindows,
    pub svm_c: f64,
    /// Ridge multipliers of `trace(SᵀS)/p`, searched for the LS baselines.
    pub ridge_grid: Vec<f64>,
    pub noise: NoiseEstimation,
    /// Diagonal loading, as a fraction of the mean sample variance, for
    /// multi-channel noise covariances.
    pub noise_loading: f64,
    /// Covariance relaxation of the sequential chains in blocks 2 and 3;
    /// 0 keeps the plain recursion.
    pub relaxation: f64,
    pub n_segments: usize,
    pub init_segments: Vec<usize>,
    pub train_segments: Vec<usize>,
    pub test_segments: Vec<usize>,
    pub ls_window_sec: f64,
    pub latency: LatencyRule,
    pub confidence: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            n_lags: 24,
            windows: PeakWindows::default(),
            svm_c: 1.0,
            ridge_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2],
            noise: NoiseEstimation::PerTrial,
            noise_loading: 0.01,
            relaxation: 0.0,
            n_segments: 6,
            init_segments: vec![0, 1],
            train_segments: vec![2, 4],
            test_segments: vec![3, 5],
            ls_window_sec: 60.0,
            latency: LatencyRule::default(),
            confidence: 0.95,
        }
    }
}

impl ProtocolConfig {
    pub fn trial_sec(&self) -> f64 {
        self.preprocess.trial_sec
    }

    pub fn rate_hz(&self) -> f64 {
        self.preprocess.analysis_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(AadError::Config(msg));
        let pre = &self.preprocess;
        let rate_hz = pre.analysis_rate_hz;
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return cfg(format!("analysis_rate_hz must be positive, got {rate_hz}"));
        }
        if !(pre.band_lo_hz > 0.0 && pre.band_lo_hz < pre.band_hi_hz && pre.band_hi_hz < rate_hz / 2.0) {
            return cfg(format!(
                "band edges must satisfy 0 < band_lo_hz < band_hi_hz < {} Hz, got {} and {}",
                rate_hz / 2.0,
                pre.band_lo_hz,
                pre.band_hi_hz
            ));
        }
        if !(pre.trial_sec > 0.0 && pre.trial_sec.is_finite()) {
            return cfg(format!("trial_sec must be positive, got {}", pre.trial_sec));
        }
        if !(pre.edge_trim_sec >= 0.0 && pre.edge_trim_sec.is_finite()) {
            return cfg(format!("edge_trim_sec must be non-negative, got {}", pre.edge_trim_sec));
        }
        if self.n_lags == 0 {
            return cfg("n_lags must be positive".into());
        }
        let trial_len = (self.trial_sec() * rate_hz).round() as usize;
        if trial_len <= self.n_lags {
            return cfg(format!(
                "a {} s trial at {rate_hz} Hz has {trial_len} samples, not more than n_lags = {}",
                pre.trial_sec, self.n_lags
            ));
        }
        self.windows.validate(self.n_lags as f64 / rate_hz)?;
        self.windows.lag_ranges(rate_hz, self.n_lags)?;
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return cfg(format!("svm_c must be positive, got {}", self.svm_c));
        }
        if self.ridge_grid.is_empty() || self.ridge_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return cfg("ridge_grid must be a non-empty list of positive multipliers".into());
        }
        if !(self.noise_loading > 0.0 && self.noise_loading.is_finite()) {
            return cfg(format!("noise_loading must be positive, got {}", self.noise_loading));
        }
        if !(0.0..1.0).contains(&self.relaxation) {
            return cfg(format!("relaxation must lie in [0, 1), got {}", self.relaxation));
        }
        if !(self.ls_window_sec >= pre.trial_sec) {
            return cfg(format!(
                "ls_window_sec ({}) must be at least trial_sec ({})",
                self.ls_window_sec, pre.trial_sec
            ));
        }
        if !(self.latency.threshold > 0.0 && self.latency.threshold < 1.0) || self.latency.hold_trials == 0 {
            return cfg("latency rule needs 0 < threshold < 1 and hold_trials >= 1".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return cfg(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.n_segments < 3 {
            return cfg(format!("n_segments must be at least 3, got {}", self.n_segments));
        }
        let mut seen = vec![false; self.n_segments];
        for (name, segs) in [
            ("init_segments", &self.init_segments),
            ("train_segments", &self.train_segments),
            ("test_segments", &self.test_segments),
        ] {
            if segs.is_empty() {
                return cfg(format!("{name} is empty"));
            }
            for &s in segs {
                if s >= self.n_segments {
                    return cfg(format!("{name} refers to segment {s} of {}", self.n_segments));
                }
                if std::mem::replace(&mut seen[s], true) {
                    return cfg(format!("segment {s} is assigned to more than one block"));
                }
            }
        }
        Ok(())
    }
}

/// Aligned channels in the analysis domain with per-sample attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub env_1: Vec<f64>,
    pub env_2: Vec<f64>,
    pub eeg: Vec<f64>,
    /// One or more noise reference channels.
    pub noise_ref: Vec<Vec<f64>>,
    pub attended: Vec<Speaker>,
    pub rate_hz: f64,
}

impl Recording {
    pub fn new(
        env_1: Vec<f64>,
        env_2: Vec<f64>,
        eeg: Vec<f64>,
        noise_ref: Vec<Vec<f64>>,
        attended: Vec<Speaker>,
        rate_hz: f64,
    ) -> Result<Self> {
        let n = eeg.len();
        if noise_ref.is_empty() {
            return Err(AadError::InvalidInput("no noise reference channel".into()));
        }
        let lens = [
            ("env_1", env_1.len()),
            ("env_2", env_2.len()),
            ("attention labels", attended.len()),
        ];
        let noise_lens = noise_ref.iter().map(|c| ("noise_ref", c.len()));
        for (name, len) in lens.into_iter().chain(noise_lens) {
            if len != n {
                return Err(AadError::Dimension(format!(
                    "{name} has {len} samples but the EEG has {n}"
                )));
            }
        }
        if !(rate_hz > 0.0) {
            return Err(AadError::InvalidInput(format!("bad sample rate {rate_hz}")));
        }
        Ok(Self {
            env_1,
            env_2,
            eeg,
            noise_ref,
            attended,
            rate_hz,
        })
    }

    pub fn from_scene(scene: &DualSpeakerScene) -> Self {
        Self {
            env_1: scene.env_1.samples().to_vec(),
            env_2: scene.env_2.samples().to_vec(),
            eeg: scene.eeg.samples().to_vec(),
            noise_ref: vec![scene.noise_ref.samples().to_vec()],
            attended: scene.attended.clone(),
            rate_hz: scene.eeg.rate_hz(),
        }
    }

    pub fn len(&self) -> usize {
        self.eeg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eeg.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTrial {
    pub env_1: Vec<f64>,
    pub env_2: Vec<f64>,
    pub eeg: Vec<f64>,
    pub noise_ref: Vec<Vec<f64>>,
    /// Seconds from the start of the recording.
    pub t_start: f64,
    pub segment: usize,
    pub attended: Speaker,
}

impl AlignedTrial {
    pub fn env(&self, who: Speaker) -> &[f64] {
        match who {
            Speaker::One => &self.env_1,
            Speaker::Two => &self.env_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSplit {
    pub init: Vec<AlignedTrial>,
    pub train: Vec<AlignedTrial>,
    pub test: Vec<AlignedTrial>,
    pub rate_hz: f64,
    pub trial_sec: f64,
}

fn segment_trials_of(
    rec: &Recording,
    seg: usize,
    seg_len: usize,
    trim: usize,
    trial_len: usize,
) -> Vec<AlignedTrial> {
    let start = seg * seg_len + trim;
    let end = (seg + 1) * seg_len - trim;
    let mut out = Vec::new();
    let mut t = start;
    while t + trial_len <= end {
        let r = t..t + trial_len;
        out.push(AlignedTrial {
            env_1: rec.env_1[r.clone()].to_vec(),
            env_2: rec.env_2[r.clone()].to_vec(),
            eeg: rec.eeg[r.clone()].to_vec(),
            noise_ref: rec.noise_ref.iter().map(|c| c[r.clone()].to_vec()).collect(),
            t_start: t as f64 / rec.rate_hz,
            segment: seg,
            attended: rec.attended[t + trial_len / 2],
        });
        t += trial_len;
    }
    out
}

/// Cuts the recording into `n_segments` equal segments, trims each and
/// groups their trials into the three blocks in recording order.
pub fn split_blocks(rec: &Recording, cfg: &ProtocolConfig) -> Result<BlockSplit> {
    cfg.validate()?;
    if rec.rate_hz != cfg.rate_hz() {
        return Err(AadError::InvalidInput(format!(
            "recording is sampled at {} Hz but the analysis rate is {} Hz",
            rec.rate_hz,
            cfg.rate_hz()
        )));
    }
    let seg_len = rec.len() / cfg.n_segments;
    let trim = (cfg.preprocess.edge_trim_sec * rec.rate_hz).round() as usize;
    let trial_len = (cfg.trial_sec() * rec.rate_hz).round() as usize;
    if seg_len < 2 * trim + trial_len {
        return Err(AadError::InvalidInput(format!(
            "recording of {:.1} s is too short for {} segments of at least one trial",
            rec.len() as f64 / rec.rate_hz,
            cfg.n_segments
        )));
    }
    let collect = |segs: &[usize]| -> Vec<AlignedTrial> {
        let mut segs = segs.to_vec();
        segs.sort_unstable();
        segs.iter()
            .flat_map(|&s| segment_trials_of(rec, s, seg_len, trim, trial_len))
            .collect()
    };
    let split = BlockSplit {
        init: collect(&cfg.init_segments),
        train: collect(&cfg.train_segments),
        test: collect(&cfg.test_segments),
        rate_hz: rec.rate_hz,
        trial_sec: trial_len as f64 / rec.rate_hz,
    };
    let has_switch = split.test.windows(2).any(|w| w[0].attended != w[1].attended);
    if !has_switch {
        log::warn!("test block contains no attention switch; switch latency is undefined");
    }
    Ok(split)
}

/// Result for one classified (or training) trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub t_start: f64,
    pub segment: usize,
    pub markers: [f64; 2],
    pub predicted: Speaker,
    pub attended: Speaker,
    /// Probability that speaker 1 is attended.
    pub probability: f64,
    /// Both markers zero; classified by the bias alone.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingResult {
    pub estimator: Estimator,
    pub accuracy: f64,
    pub n_test_trials: usize,
    pub significance_level: f64,
    pub above_chance: bool,
    /// One entry per true switch in the test block; `None` if never detected.
    pub switch_latencies_sec: Vec<Option<f64>>,
    pub median_latency_sec: Option<f64>,
    /// Mean over lags and speakers of the per-lag standard deviation of the
    /// test-block TRFs.
    pub trf_lag_std: f64,
    pub ridge: Option<f64>,
    pub svm_weights: [f64; 2],
    pub svm_bias: f64,
    pub platt: [f64; 2],
    pub train: Vec<TrialRecord>,
    pub test: Vec<TrialRecord>,
}

impl DecodingResult {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AadError::Format(e.to_string()))
    }

    /// Flat per-trial table of the test block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "index,t_start,segment,marker_1,marker_2,predicted,attended,probability,degenerate\n",
        );
        let label = |sp: Speaker| match sp {
            Speaker::One => 1,
            Speaker::Two => 2,
        };
        for t in &self.test {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                t.index,
                t.t_start,
                t.segment,
                t.markers[0],
                t.markers[1],
                label(t.predicted),
                label(t.attended),
                t.probability,
                t.degenerate
            ));
        }
        s
    }
}

fn trial_noise(trials: &[AlignedTrial], cfg: &ProtocolConfig) -> Result<NoiseSchedule> {
    match cfg.noise {
        NoiseEstimation::PerTrial => Ok(NoiseSchedule::PerTrial(
            trials
                .iter()
                .map(|t| match t.noise_ref.as_slice() {
                    [single] => noise_cov_single(single),
                    many => noise_cov_multi(many, Loading::Relative(cfg.noise_loading)),
                })
                .collect::<Result<_>>()?,
        )),
        NoiseEstimation::BlockFixed => {
            let pooled: Vec<f64> = trials
                .iter()
                .flat_map(|t| t.noise_ref.iter().flatten().copied())
                .collect();
            Ok(NoiseSchedule::Fixed(noise_cov_single(&pooled)?))
        }
    }
}

fn sequence(trials: &[AlignedTrial], rate_hz: f64, pick: impl Fn(&AlignedTrial) -> &[f64]) -> TrialSequence {
    TrialSequence {
        trials: trials.iter().map(|t| pick(t).to_vec()).collect(),
        trial_len_samples: trials.first().map_or(0, |t| t.eeg.len()),
        rate_hz,
    }
}

/// Per-trial TRF pairs `(speaker 1, speaker 2)` for the training and test
/// blocks.
struct TrfTracks {
    train: Vec<[TrfEstimate; 2]>,
    test: Vec<[TrfEstimate; 2]>,
}

fn seq_lmmse_tracks(split: &BlockSplit, cfg: &ProtocolConfig) -> Result<TrfTracks> {
    let rate = split.rate_hz;
    let p = cfg.n_lags;
    let init_noise = trial_noise(&split.init, cfg)?;
    let prior = init_prior_from_block(
        &sequence(&split.init, rate, |t| &t.env_1),
        &sequence(&split.init, rate, |t| &t.env_2),
        &sequence(&split.init, rate, |t| &t.eeg),
        &init_noise,
        p,
    )?;
    let chain = || SequentialLmmse::new(&prior, rate).with_relaxation(cfg.relaxation);
    let mut chains = [chain()?, chain()?];
    let mut run = |trials: &[AlignedTrial]| -> Result<Vec<[TrfEstimate; 2]>> {
        let noise = trial_noise(trials, cfg)?;
        let mut out = Vec::with_capacity(trials.len());
        for (i, t) in trials.iter().enumerate() {
            let w: &NoiseModel = noise.for_trial(i)?;
            for (chain, who) in chains.iter_mut().zip([Speaker::One, Speaker::Two]) {
                let design = lagged_matrix(t.env(who), p, rate)?;
                chain.step(&design, &t.eeg, w)?;
            }
            out.push([chains[0].state().clone(), chains[1].state().clone()]);
        }
        Ok(out)
    };
    let train = run(&split.train)?;
    let test = run(&split.test)?;
    Ok(TrfTracks { train, test })
}

fn normal_terms(trials: &[AlignedTrial], p: usize, rate: f64) -> Result<Vec<[NormalEquations; 2]>> {
    trials
        .iter()
        .map(|t| {
            let one = NormalEquations::from_trial(&lagged_matrix(&t.env_1, p, rate)?, &t.eeg)?;
            let two = NormalEquations::from_trial(&lagged_matrix(&t.env_2, p, rate)?, &t.eeg)?;
            Ok([one, two])
        })
        .collect()
}

/// Estimates per trial: either from the trial alone or from the trailing
/// window of `per_window` trials (growing at the start of the block).
fn ls_track(terms: &[[NormalEquations; 2]], per_window: usize, ridge: f64, rate: f64) -> Result<Vec<[TrfEstimate; 2]>> {
    (0..terms.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(per_window);
            let est = |k: usize| -> Result<TrfEstimate> {
                let window: Vec<NormalEquations> = terms[lo..=i].iter().map(|t| t[k].clone()).collect();
                NormalEquations::mean(&window)?.solve(ridge, rate)
            };
            Ok([est(0)?, est(1)?])
        })
        .collect()
}

fn markers_of(tracks: &[[TrfEstimate; 2]], win: &PeakWindows) -> Result<Vec<[f64; 2]>> {
    tracks
        .iter()
        .map(|[a, b]| Ok([attention_marker(a, win)?.value, attention_marker(b, win)?.value]))
        .collect()
}

fn samples_of(markers: &[[f64; 2]], trials: &[AlignedTrial]) -> Vec<MarkerSample> {
    markers
        .iter()
        .zip(trials)
        .map(|(x, t)| MarkerSample { x: *x, y: t.attended })
        .collect()
}

fn training_accuracy(model: &AttentionClassifier, samples: &[MarkerSample]) -> f64 {
    let ok = samples.iter().filter(|s| model.predict(s.x) == s.y).count();
    ok as f64 / samples.len() as f64
}

fn ls_tracks(split: &BlockSplit, cfg: &ProtocolConfig, per_window: usize) -> Result<(TrfTracks, f64)> {
    let rate = split.rate_hz;
    let train_terms = normal_terms(&split.train, cfg.n_lags, rate)?;
    let test_terms = normal_terms(&split.test, cfg.n_lags, rate)?;
    let scale = train_terms
        .iter()
        .flat_map(|t| t.iter().map(|ne| ne.gram.trace()))
        .sum::<f64>()
        / (2 * train_terms.len() * cfg.n_lags) as f64;

    let mut best: Option<(f64, f64, Vec<[TrfEstimate; 2]>)> = None;
    for &mult in &cfg.ridge_grid {
        let ridge = mult * scale;
        let train = ls_track(&train_terms, per_window, ridge, rate)?;
        let samples = samples_of(&markers_of(&train, &cfg.windows)?, &split.train);
        let acc = match crate::classify::svm_train(&samples, cfg.svm_c) {
            Ok(m) => training_accuracy(&m, &samples),
            Err(e) => {
                log::debug!("ridge {ridge:.3e} skipped: {e}");
                continue;
            }
        };
        log::debug!("ridge {ridge:.3e}: block-2 accuracy {:.1}%", 100.0 * acc);
        if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
            best = Some((acc, ridge, train));
        }
    }
    let (_, ridge, train) = best.ok_or(AadError::NoConvergence {
        what: "ridge selection",
        iterations: cfg.ridge_grid.len(),
        residual: f64::NAN,
    })?;
    let test = ls_track(&test_terms, per_window, ridge, rate)?;
    Ok((TrfTracks { train, test }, ridge))
}

fn lag_std(tracks: &[[TrfEstimate; 2]]) -> f64 {
    let n = tracks.len() as f64;
    if tracks.len() < 2 {
        return 0.0;
    }
    let p = tracks[0][0].n_lags();
    let mut total = 0.0;
    for k in 0..2 {
        for j in 0..p {
            let mean = tracks.iter().map(|t| t[k].theta[j]).sum::<f64>() / n;
            let var = tracks.iter().map(|t| (t[k].theta[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            total += var.sqrt();
        }
    }
    total / (2 * p) as f64
}

fn records(
    markers: &[[f64; 2]],
    trials: &[AlignedTrial],
    model: &AttentionClassifier,
) -> Result<Vec<TrialRecord>> {
    markers
        .iter()
        .zip(trials)
        .enumerate()
        .map(|(index, (x, t))| {
            Ok(TrialRecord {
                index,
                t_start: t.t_start,
                segment: t.segment,
                markers: *x,
                predicted: model.predict(*x),
                attended: t.attended,
                probability: crate::classify::attend_probability(model, *x)?,
                degenerate: x[0] == 0.0 && x[1] == 0.0,
            })
        })
        .collect()
}

/// Runs the full protocol with the chosen estimator.
pub fn run_protocol(split: &BlockSplit, cfg: &ProtocolConfig, estimator: Estimator) -> Result<DecodingResult> {
    cfg.validate()?;
    for (name, block) in [("init", &split.init), ("train", &split.train), ("test", &split.test)] {
        if block.is_empty() {
            return Err(AadError::InvalidInput(format!("{name} block holds no trials")));
        }
    }
    let per_window = (cfg.ls_window_sec / split.trial_sec).round().max(1.0) as usize;
    let (tracks, ridge) = match estimator {
        Estimator::SeqLmmse => (seq_lmmse_tracks(split, cfg)?, None),
        Estimator::Ls2sec => {
            let (t, r) = ls_tracks(split, cfg, 1)?;
            (t, Some(r))
        }
        Estimator::Ls60Overlap => {
            let (t, r) = ls_tracks(split, cfg, per_window)?;
            (t, Some(r))
        }
    };
    let train_markers = markers_of(&tracks.train, &cfg.windows)?;
    let test_markers = markers_of(&tracks.test, &cfg.windows)?;
    let model = AttentionClassifier::fit(&samples_of(&train_markers, &split.train), cfg.svm_c)?;

    let train = records(&train_markers, &split.train, &model)?;
    let test = records(&test_markers, &split.test, &model)?;
    let preds: Vec<Speaker> = test.iter().map(|r| r.predicted).collect();
    let truth: Vec<Speaker> = test.iter().map(|r| r.attended).collect();
    let accuracy = decoding_accuracy(&preds, &truth)?;
    let significance = significance_level(test.len(), cfg.confidence);

    // Test trials form one concatenated timeline, so the switch sits at the
    // boundary between segments of opposite attention.
    let probs: Vec<f64> = test.iter().map(|r| r.probability).collect();
    let switches: Vec<Switch> = (1..test.len())
        .filter(|&i| test[i].attended != test[i - 1].attended)
        .map(|i| Switch {
            trial: i,
            to: test[i].attended,
        })
        .collect();
    let latencies = switch_latency(&probs, &switches, split.trial_sec, &cfg.latency);
    let platt = model.platt.ok_or(AadError::Uncalibrated)?;

    Ok(DecodingResult {
        estimator,
        accuracy,
        n_test_trials: test.len(),
        significance_level: significance,
        above_chance: accuracy > significance,
        median_latency_sec: median_latency(&latencies),
        switch_latencies_sec: latencies,
        trf_lag_std: lag_std(&tracks.test),
        ridge,
        svm_weights: model.weights,
        svm_bias: model.bias,
        platt: [platt.a, platt.b],
        train,
        test,
    })
}

/// Percentage of trials where the prediction matches the truth.
pub fn decoding_accuracy(preds: &[Speaker], truth: &[Speaker]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(AadError::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(AadError::InvalidInput("no trials to score".into()));
    }
    let ok = preds.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(100.0 * ok as f64 / preds.len() as f64)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Smallest `100·k/n` with `P[Binomial(n, ½) ≥ k] ≤ 1 − confidence`, by
/// exact tail summation in log space; 100 when no `k` qualifies.
pub fn significance_level(n_trials: usize, confidence: f64) -> f64 {
    let n = n_trials.max(1);
    let alpha_ln = (1.0 - confidence).ln();
    let nf = n as f64;
    // log pmf via the ratio pmf(i+1)/pmf(i) = (n−i)/(i+1)
    let mut lp = Vec::with_capacity(n + 1);
    let mut cur = -nf * std::f64::consts::LN_2;
    for i in 0..=n {
        lp.push(cur);
        cur += ((nf - i as f64) / (i as f64 + 1.0)).ln();
    }
    let mut tail = f64::NEG_INFINITY;
    let mut k_min = None;
    for k in (0..=n).rev() {
        tail = log_add(tail, lp[k]);
        if tail <= alpha_ln {
            k_min = Some(k);
        } else {
            break;
        }
    }
    match k_min {
        Some(k) => 100.0 * k as f64 / nf,
        None => 100.0,
    }
}

/// A true attention change at test trial index `trial`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Switch {
    pub trial: usize,
    pub to: Speaker,
}

/// Time from each switch until the probability of speaker 1 first sits on
/// the new target's side of the threshold for `hold_trials` consecutive
/// trials, measured to the end of the first of those trials.
pub fn switch_latency(
    prob_speaker1: &[f64],
    switches: &[Switch],
    trial_sec: f64,
    rule: &LatencyRule,
) -> Vec<Option<f64>> {
    let correct = |p: f64, to: Speaker| match to {
        Speaker::One => p > rule.threshold,
        Speaker::Two => p < rule.threshold,
    };
    switches
        .iter()
        .map(|sw| {
            let end = switches
                .iter()
                .map(|s| s.trial)
                .filter(|&t| t > sw.trial)
                .min()
                .unwrap_or(prob_speaker1.len())
                .min(prob_speaker1.len());
            let hold = rule.hold_trials.max(1);
            (sw.trial..end)
                .find(|&j| {
                    j + hold <= end && (j..j + hold).all(|k| correct(prob_speaker1[k], sw.to))
                })
                .map(|j| (j - sw.trial + 1) as f64 * trial_sec)
        })
        .collect()
}

pub fn median_latency(latencies: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = latencies.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
