//! TRF estimation: lagged design matrices, batch and sequential LMMSE,
//! ridge least squares baselines, and noise covariance models.
//!
//! Observation model for one trial: `r = S θ + w`, with `S` the causal
//! lagged envelope, `θ ~ N(μ, C)` and `w ~ N(0, C_w)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{AadError, Result};
use crate::preprocess::TrialSequence;

/// Causal time-lagged design matrix for one trial.
///
/// Column `j` holds the envelope delayed by `j` samples with zeros shifted
/// in at the head, so row `i` only depends on samples `0..=i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDesign {
    matrix: DMatrix<f64>,
    rate_hz: f64,
}

impl LaggedDesign {
    /// Wraps an arbitrary `N x p` design (used by tests and custom features).
    pub fn from_matrix(matrix: DMatrix<f64>, rate_hz: f64) -> Result<Self> {
        if matrix.nrows() <= matrix.ncols() || matrix.ncols() == 0 {
            return Err(AadError::Dimension(format!(
                "design must have N > p > 0, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, rate_hz })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_lags(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    /// Vertically stacks several trial designs into one.
    pub fn stack(designs: &[LaggedDesign]) -> Result<Self> {
        let first = designs
            .first()
            .ok_or_else(|| AadError::InvalidInput("nothing to stack".into()))?;
        let p = first.n_lags();
        if designs.iter().any(|d| d.n_lags() != p) {
            return Err(AadError::Dimension("designs differ in lag count".into()));
        }
        let rows: usize = designs.iter().map(LaggedDesign::n_samples).sum();
        let mut m = DMatrix::zeros(rows, p);
        let mut at = 0;
        for d in designs {
            m.rows_mut(at, d.n_samples()).copy_from(&d.matrix);
            at += d.n_samples();
        }
        Ok(Self {
            matrix: m,
            rate_hz: first.rate_hz,
        })
    }
}

pub fn lagged_matrix(env: &[f64], n_lags: usize, rate_hz: f64) -> Result<LaggedDesign> {
    let n = env.len();
    if n_lags == 0 || n <= n_lags {
        return Err(AadError::Dimension(format!(
            "need more samples than lags, got N={n}, p={n_lags}"
        )));
    }
    let matrix = DMatrix::from_fn(n, n_lags, |i, j| if i >= j { env[i - j] } else { 0.0 });
    Ok(LaggedDesign { matrix, rate_hz })
}

/// Gaussian prior on the TRF.
#[derive(Debug, Clone, PartialEq)]
pub struct TrfPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl TrfPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(AadError::Dimension(format!(
                "prior mean has {} entries but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_psd(&cov, "prior covariance")?;
        Ok(Self { mean, cov })
    }

    /// Zero mean, identity covariance.
    pub fn standard(n_lags: usize) -> Self {
        Self {
            mean: DVector::zeros(n_lags),
            cov: DMatrix::identity(n_lags, n_lags),
        }
    }

    pub fn n_lags(&self) -> usize {
        self.mean.len()
    }
}

/// Posterior mean and MSE matrix of a TRF.
#[derive(Debug, Clone, PartialEq)]
pub struct TrfEstimate {
    pub theta: DVector<f64>,
    pub mse: DMatrix<f64>,
    pub lag_rate_hz: f64,
    /// False for least-squares estimates, whose `mse` is only a placeholder.
    pub mse_valid: bool,
}

impl TrfEstimate {
    pub fn from_prior(prior: &TrfPrior, lag_rate_hz: f64) -> Self {
        Self {
            theta: prior.mean.clone(),
            mse: prior.cov.clone(),
            lag_rate_hz,
            mse_valid: true,
        }
    }

    pub fn n_lags(&self) -> usize {
        self.theta.len()
    }

    /// Time covered by the filter, `p / rate`.
    pub fn span_sec(&self) -> f64 {
        self.n_lags() as f64 / self.lag_rate_hz
    }

    pub fn as_prior(&self) -> TrfPrior {
        TrfPrior {
            mean: self.theta.clone(),
            cov: self.mse.clone(),
        }
    }
}

/// Observation noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// `C_w = variance * I`.
    ScaledIdentity { variance: f64 },
    /// Dense `C_w`, already including `loading` on its diagonal.
    Full { cov: DMatrix<f64>, loading: f64 },
}

impl NoiseModel {
    pub fn scaled_identity(variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(AadError::DegenerateNoise(format!(
                "noise variance must be positive, got {variance}"
            )));
        }
        Ok(NoiseModel::ScaledIdentity { variance })
    }

    /// Dense `N x N` covariance.
    pub fn dense(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            NoiseModel::ScaledIdentity { variance } => Ok(DMatrix::identity(n, n) * *variance),
            NoiseModel::Full { cov, .. } => {
                if cov.nrows() != n {
                    return Err(AadError::Dimension(format!(
                        "noise covariance is {}x{} but trial has {n} samples",
                        cov.nrows(),
                        cov.ncols()
                    )));
                }
                Ok(cov.clone())
            }
        }
    }

    /// Mean diagonal entry, i.e. the per-sample noise variance.
    pub fn mean_variance(&self) -> f64 {
        match self {
            NoiseModel::ScaledIdentity { variance } => *variance,
            NoiseModel::Full { cov, .. } => cov.trace() / cov.nrows() as f64,
        }
    }
}

/// Noise model used for each trial of a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSchedule {
    Fixed(NoiseModel),
    PerTrial(Vec<NoiseModel>),
}

impl NoiseSchedule {
    pub fn for_trial(&self, i: usize) -> Result<&NoiseModel> {
        match self {
            NoiseSchedule::Fixed(m) => Ok(m),
            NoiseSchedule::PerTrial(v) => v.get(i).ok_or_else(|| {
                AadError::Dimension(format!("no noise model for trial {i} (have {})", v.len()))
            }),
        }
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    let ev = s.symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Symmetric with minimum eigenvalue >= -1e-10 * trace.
pub fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(AadError::NotPsd(format!("{what} has non-finite entries")));
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(AadError::NotPsd(format!(
            "{what} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let tr = m.trace().abs();
    let lo = min_eigenvalue(m);
    if lo < -1e-10 * tr {
        return Err(AadError::NotPsd(format!(
            "{what} has eigenvalue {lo:.3e} (trace {tr:.3e})"
        )));
    }
    Ok(())
}

fn check_trial(design: &LaggedDesign, r: &[f64], p: usize) -> Result<()> {
    if design.n_samples() != r.len() {
        return Err(AadError::Dimension(format!(
            "design has {} rows but trial has {} samples",
            design.n_samples(),
            r.len()
        )));
    }
    if design.n_lags() != p {
        return Err(AadError::Dimension(format!(
            "design has {} lags but estimate has {p}",
            design.n_lags()
        )));
    }
    Ok(())
}

/// Batch LMMSE: `θ̂ = μ + C Sᵀ (S C Sᵀ + C_w)⁻¹ (r − S μ)`.
///
/// The returned `mse` is the posterior covariance
/// `C − C Sᵀ (S C Sᵀ + C_w)⁻¹ S C`.
pub fn lmmse_batch(
    design: &LaggedDesign,
    r: &[f64],
    prior: &TrfPrior,
    noise: &NoiseModel,
) -> Result<TrfEstimate> {
    check_trial(design, r, prior.n_lags())?;
    let s = design.matrix();
    let r = DVector::from_column_slice(r);
    let cs_t = &prior.cov * s.transpose();
    let inner = s * &cs_t + noise.dense(s.nrows())?;
    let chol = inner.clone().cholesky().ok_or_else(|| AadError::Singular {
        context: "innovation covariance",
        condition: condition_estimate(&inner),
    })?;
    let innovation = &r - s * &prior.mean;
    let theta = &prior.mean + &cs_t * chol.solve(&innovation);
    let mut mse = &prior.cov - &cs_t * chol.solve(&cs_t.transpose());
    symmetrize(&mut mse);
    Ok(TrfEstimate {
        theta,
        mse,
        lag_rate_hz: design.rate_hz(),
        mse_valid: true,
    })
}

/// One sequential LMMSE update.
///
/// `K = M Sᵀ (C_w + S M Sᵀ)⁻¹`, `θ̂ += K (r − S θ̂)`, `M = (I − K S) M`.
/// For a scaled-identity noise model the gain is formed through the
/// equivalent `p x p` system `M (σ²I + SᵀS M)⁻¹ Sᵀ`; dense noise models use a
/// Cholesky factorization of the `N x N` innovation covariance.
pub fn seq_lmmse_step(
    state: &TrfEstimate,
    design: &LaggedDesign,
    r: &[f64],
    noise: &NoiseModel,
) -> Result<TrfEstimate> {
    let p = state.n_lags();
    check_trial(design, r, p)?;
    check_psd(&state.mse, "incoming MSE matrix")?;
    let s = design.matrix();
    let m = &state.mse;
    let r = DVector::from_column_slice(r);
    let innovation = &r - s * &state.theta;

    let (k_innov, k_s) = match noise {
        NoiseModel::ScaledIdentity { variance } => {
            let sts = s.transpose() * s;
            let a = DMatrix::identity(p, p) * *variance + &sts * m;
            let lu = a.clone().lu();
            let sol_innov = lu
                .solve(&(s.transpose() * &innovation))
                .ok_or_else(|| AadError::Singular {
                    context: "innovation covariance",
                    condition: condition_estimate(&a),
                })?;
            let sol_sts = lu.solve(&sts).ok_or_else(|| AadError::Singular {
                context: "innovation covariance",
                condition: condition_estimate(&a),
            })?;
            (m * sol_innov, m * sol_sts)
        }
        NoiseModel::Full { .. } => {
            let sm = s * m;
            let inner = &sm * s.transpose() + noise.dense(s.nrows())?;
            let chol = inner.clone().cholesky().ok_or_else(|| AadError::Singular {
                context: "innovation covariance",
                condition: condition_estimate(&inner),
            })?;
            // Kᵀ = (C_w + S M Sᵀ)⁻¹ S M since M is symmetric.
            let k = chol.solve(&sm).transpose();
            (&k * &innovation, &k * s)
        }
    };

    let theta = &state.theta + k_innov;
    let mut mse = (DMatrix::identity(p, p) - k_s) * m;
    symmetrize(&mut mse);
    Ok(TrfEstimate {
        theta,
        mse,
        lag_rate_hz: state.lag_rate_hz,
        mse_valid: true,
    })
}

/// A sequential LMMSE chain; steps must be applied in trial order.
///
/// By default this is the plain recursion, whose MSE matrix shrinks roughly
/// like `1/n`. A relaxation `τ > 0` replaces `M` by `(1 − τ) M + τ I` before
/// every update (a bounded random-walk model of the TRF), so that old trials
/// fade and the chain can follow a changing response.
#[derive(Debug, Clone)]
pub struct SequentialLmmse {
    state: TrfEstimate,
    steps: usize,
    relaxation: f64,
}

impl SequentialLmmse {
    pub fn new(prior: &TrfPrior, lag_rate_hz: f64) -> Self {
        Self {
            state: TrfEstimate::from_prior(prior, lag_rate_hz),
            steps: 0,
            relaxation: 0.0,
        }
    }

    pub fn from_state(state: TrfEstimate) -> Self {
        Self {
            state,
            steps: 0,
            relaxation: 0.0,
        }
    }

    pub fn with_relaxation(mut self, tau: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(AadError::Config(format!(
                "relaxation must lie in [0, 1), got {tau}"
            )));
        }
        self.relaxation = tau;
        Ok(self)
    }

    pub fn state(&self) -> &TrfEstimate {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self, design: &LaggedDesign, r: &[f64], noise: &NoiseModel) -> Result<&TrfEstimate> {
        if self.relaxation > 0.0 {
            let tau = self.relaxation;
            self.state.mse *= 1.0 - tau;
            for i in 0..self.state.mse.nrows() {
                self.state.mse[(i, i)] += tau;
            }
        }
        self.state = seq_lmmse_step(&self.state, design, r, noise)?;
        self.steps += 1;
        Ok(&self.state)
    }
}

/// Ridge least squares `(SᵀS + λI)⁻¹ Sᵀ r`. The MSE matrix is an identity
/// placeholder flagged invalid.
pub fn ls_estimate(design: &LaggedDesign, r: &[f64], ridge: f64) -> Result<TrfEstimate> {
    check_trial(design, r, design.n_lags())?;
    let mut ne = NormalEquations::new(design.n_lags());
    ne.add_trial(design, r)?;
    ne.solve(ridge, design.rate_hz())
}

/// Accumulated `SᵀS` and `Sᵀr` over one or more trials.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub count: usize,
}

impl NormalEquations {
    pub fn new(n_lags: usize) -> Self {
        Self {
            gram: DMatrix::zeros(n_lags, n_lags),
            cross: DVector::zeros(n_lags),
            count: 0,
        }
    }

    pub fn from_trial(design: &LaggedDesign, r: &[f64]) -> Result<Self> {
        let mut ne = Self::new(design.n_lags());
        ne.add_trial(design, r)?;
        Ok(ne)
    }

    pub fn add_trial(&mut self, design: &LaggedDesign, r: &[f64]) -> Result<()> {
        check_trial(design, r, self.cross.len())?;
        let s = design.matrix();
        self.gram += s.transpose() * s;
        self.cross += s.transpose() * DVector::from_column_slice(r);
        self.count += 1;
        Ok(())
    }

    /// Per-trial average of the accumulated terms.
    pub fn mean(terms: &[NormalEquations]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| AadError::InvalidInput("no trials to average".into()))?;
        let mut acc = Self::new(first.cross.len());
        for t in terms {
            acc.gram += &t.gram;
            acc.cross += &t.cross;
            acc.count += t.count;
        }
        let k = acc.count as f64;
        acc.gram /= k;
        acc.cross /= k;
        acc.count = 1;
        Ok(acc)
    }

    pub fn solve(&self, ridge: f64, lag_rate_hz: f64) -> Result<TrfEstimate> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(AadError::InvalidInput(format!(
                "ridge must be non-negative, got {ridge}"
            )));
        }
        let p = self.cross.len();
        let a = &self.gram + DMatrix::identity(p, p) * ridge;
        let chol = match a.clone().cholesky() {
            Some(c) => c,
            None if ridge == 0.0 => {
                return Err(AadError::Singular {
                    context: "normal equations (use a ridge > 0)",
                    condition: condition_estimate(&a),
                })
            }
            None => {
                return Err(AadError::Singular {
                    context: "normal equations",
                    condition: condition_estimate(&a),
                })
            }
        };
        Ok(TrfEstimate {
            theta: chol.solve(&self.cross),
            mse: DMatrix::identity(p, p),
            lag_rate_hz,
            mse_valid: false,
        })
    }
}

/// Sliding-window least squares: one estimate per hop, each from the
/// trailing window's averaged normal equations.
///
/// The recording is cut into hop-length trials; a window spans
/// `round(window_sec / hop_sec)` of them.
#[allow(clippy::too_many_arguments)]
pub fn ls_overlap_estimate(
    envelope: &[f64],
    eeg: &[f64],
    rate_hz: f64,
    n_lags: usize,
    window_sec: f64,
    hop_sec: f64,
    ridge: f64,
) -> Result<Vec<TrfEstimate>> {
    if envelope.len() != eeg.len() {
        return Err(AadError::Dimension(format!(
            "envelope has {} samples, EEG has {}",
            envelope.len(),
            eeg.len()
        )));
    }
    if !(hop_sec > 0.0 && window_sec > 0.0) || hop_sec > window_sec {
        return Err(AadError::InvalidInput(format!(
            "need 0 < hop <= window, got hop={hop_sec} s, window={window_sec} s"
        )));
    }
    let window_samples = (window_sec * rate_hz).round() as usize;
    if envelope.len() < window_samples {
        return Err(AadError::InvalidInput(format!(
            "recording of {:.3} s is shorter than the {window_sec} s window",
            envelope.len() as f64 / rate_hz
        )));
    }
    let hop = (hop_sec * rate_hz).round() as usize;
    let per_window = (window_sec / hop_sec).round() as usize;
    let terms = envelope
        .chunks_exact(hop)
        .zip(eeg.chunks_exact(hop))
        .map(|(e, r)| NormalEquations::from_trial(&lagged_matrix(e, n_lags, rate_hz)?, r))
        .collect::<Result<Vec<_>>>()?;
    sliding_ls(&terms, per_window, ridge, rate_hz)
}

/// Estimates from every full trailing window of `per_window` trials.
pub fn sliding_ls(
    terms: &[NormalEquations],
    per_window: usize,
    ridge: f64,
    lag_rate_hz: f64,
) -> Result<Vec<TrfEstimate>> {
    if per_window == 0 || terms.len() < per_window {
        return Err(AadError::InvalidInput(format!(
            "{} trials cannot fill a {per_window}-trial window",
            terms.len()
        )));
    }
    terms
        .windows(per_window)
        .map(|w| NormalEquations::mean(w)?.solve(ridge, lag_rate_hz))
        .collect()
}

/// Unbiased sample variance of one noise-electrode trial, as `σ² I`.
pub fn noise_cov_single(w: &[f64]) -> Result<NoiseModel> {
    if w.len() < 2 {
        return Err(AadError::InvalidInput(
            "noise estimate needs at least two samples".into(),
        ));
    }
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_sq = w.iter().map(|v| v * v).sum::<f64>() / n;
    if !(var > 1e-20 * mean_sq) || var == 0.0 {
        return Err(AadError::DegenerateNoise(
            "noise trial is constant (zero variance)".into(),
        ));
    }
    NoiseModel::scaled_identity(var)
}

/// Diagonal loading added to a multi-electrode covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loading {
    /// Fraction of the mean diagonal of the sample term.
    Relative(f64),
    /// Absolute value added to every diagonal entry.
    Absolute(f64),
}

impl Default for Loading {
    fn default() -> Self {
        Loading::Relative(0.01)
    }
}

/// Covariance from `L > 1` noise electrodes plus diagonal loading:
/// `C_w = 1/(L−1) Σ_k (w_k − w̄)(w_k − w̄)ᵀ + εI`, with `w̄` the mean
/// across electrodes.
pub fn noise_cov_multi(ws: &[Vec<f64>], loading: Loading) -> Result<NoiseModel> {
    if ws.len() < 2 {
        return Err(AadError::InvalidInput(format!(
            "need at least two noise electrodes, got {}",
            ws.len()
        )));
    }
    let n = ws[0].len();
    if n == 0 || ws.iter().any(|w| w.len() != n) {
        return Err(AadError::Dimension(
            "noise electrode trials differ in length".into(),
        ));
    }
    let l = ws.len() as f64;
    let mean = ws.iter().fold(DVector::zeros(n), |acc, w| acc + DVector::from_column_slice(w)) / l;
    let mut cov = DMatrix::zeros(n, n);
    for w in ws {
        let d = DVector::from_column_slice(w) - &mean;
        cov.ger(1.0 / (l - 1.0), &d, &d, 1.0);
    }
    symmetrize(&mut cov);
    let eps = match loading {
        Loading::Relative(f) => f * cov.trace() / n as f64,
        Loading::Absolute(e) => e,
    };
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(AadError::DegenerateNoise(format!(
            "diagonal loading must be positive, got {eps:.3e}"
        )));
    }
    for i in 0..n {
        cov[(i, i)] += eps;
    }
    Ok(NoiseModel::Full { cov, loading: eps })
}

/// Runs a sequential chain per speaker from the standard prior over every
/// block trial and averages the two final states.
pub fn init_prior_from_block(
    env_1: &TrialSequence,
    env_2: &TrialSequence,
    eeg: &TrialSequence,
    noise: &NoiseSchedule,
    n_lags: usize,
) -> Result<TrfPrior> {
    let n = eeg.trials.len();
    if n == 0 {
        return Err(AadError::InvalidInput(
            "initialization block holds no trials".into(),
        ));
    }
    if env_1.trials.len() != n || env_2.trials.len() != n {
        return Err(AadError::Dimension(format!(
            "block trial counts differ: env1 {}, env2 {}, eeg {n}",
            env_1.trials.len(),
            env_2.trials.len()
        )));
    }
    let rate = eeg.rate_hz;
    let start = TrfPrior::standard(n_lags);
    let mut chains = [
        SequentialLmmse::new(&start, rate),
        SequentialLmmse::new(&start, rate),
    ];
    for i in 0..n {
        let w = noise.for_trial(i)?;
        for (chain, env) in chains.iter_mut().zip([env_1, env_2]) {
            let design = lagged_matrix(&env.trials[i], n_lags, rate)?;
            chain.step(&design, &eeg.trials[i], w)?;
        }
    }
    let [a, b] = chains;
    let mut cov = (&a.state().mse + &b.state().mse) * 0.5;
    symmetrize(&mut cov);
    Ok(TrfPrior {
        mean: (&a.state().theta + &b.state().theta) * 0.5,
        cov,
    })
}
