//! Linear soft-margin SVM on 2-D marker features, with Platt-scaled
//! posterior probabilities.
//!
//! The dual
//!
//! ```text
//! min ½ αᵀQα − Σα   s.t.  0 ≤ α_i ≤ C,  Σ y_i α_i = 0,   Q_ij = y_i y_j ⟨x_i, x_j⟩
//! ```
//!
//! is solved by SMO with second-order working-set selection. With a linear
//! kernel in two dimensions the weight vector `a = Σ α_i y_i x_i` is kept
//! explicitly, so no kernel cache is needed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{AadError, Result};

/// Which speaker is attended. Speaker 1 is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Speaker {
    pub fn sign(self) -> f64 {
        match self {
            Speaker::One => 1.0,
            Speaker::Two => -1.0,
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::One => Speaker::Two,
            Speaker::Two => Speaker::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Speaker::One => 0,
            Speaker::Two => 1,
        }
    }

    /// Non-negative margins vote for speaker 1.
    pub fn from_margin(m: f64) -> Speaker {
        if m >= 0.0 {
            Speaker::One
        } else {
            Speaker::Two
        }
    }
}

/// Marker pair `(speaker 1, speaker 2)` with the attended speaker as label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerSample {
    pub x: [f64; 2],
    pub y: Speaker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattCoefficients {
    pub a: f64,
    pub b: f64,
}

impl PlattCoefficients {
    /// `1 / (1 + exp(a·m + b))`, evaluated without overflow.
    pub fn probability(&self, margin: f64) -> f64 {
        let z = self.a * margin + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionClassifier {
    pub weights: [f64; 2],
    pub bias: f64,
    pub c: f64,
    /// One multiplier per training sample.
    pub alphas: Vec<f64>,
    pub support_indices: Vec<usize>,
    pub duality_gap: f64,
    pub platt: Option<PlattCoefficients>,
}

#[derive(Debug, Clone, Copy)]
pub struct SmoParams {
    /// Stop when the maximal KKT violation pair falls below this.
    pub tolerance: f64,
    /// Early stop once the duality gap falls below this times `C·n`.
    pub gap_fraction: f64,
    pub max_iterations: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            gap_fraction: 1e-8,
            max_iterations: 10_000_000,
        }
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

const TAU: f64 = 1e-12;

pub fn svm_train(samples: &[MarkerSample], c: f64) -> Result<AttentionClassifier> {
    svm_train_with(samples, c, SmoParams::default())
}

pub fn svm_train_with(
    samples: &[MarkerSample],
    c: f64,
    params: SmoParams,
) -> Result<AttentionClassifier> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(AadError::Config(format!("SVM C must be positive, got {c}")));
    }
    if samples.len() < 2 {
        return Err(AadError::InvalidInput(
            "SVM training needs at least two samples".into(),
        ));
    }
    if samples.iter().any(|s| !(s.x[0].is_finite() && s.x[1].is_finite())) {
        return Err(AadError::InvalidInput("non-finite marker feature".into()));
    }
    let has = |who| samples.iter().any(|s| s.y == who);
    if !(has(Speaker::One) && has(Speaker::Two)) {
        return Err(AadError::InvalidInput(
            "SVM training needs samples from both classes".into(),
        ));
    }

    let n = samples.len();
    let x: Vec<[f64; 2]> = samples.iter().map(|s| s.x).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.y.sign()).collect();
    let kd: Vec<f64> = x.iter().map(|&xi| dot(xi, xi)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = [0.0; 2];
    let grad = |w: [f64; 2], t: usize| y[t] * dot(w, x[t]) - 1.0;
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    // With a linear kernel the gradient is G_t = y_t w·x_t − 1, so it is
    // recomputed from w on demand and never goes stale for shrunk indices.
    let yg = |w: [f64; 2], t: usize| dot(w, x[t]) - y[t];
    let mut active: Vec<usize> = (0..n).collect();
    let mut unshrunk = false;
    let period = n.min(1000);
    let mut countdown = period;
    let mut iter = 0;
    let mut gap_pair;
    loop {
        countdown -= 1;
        if countdown == 0 {
            countdown = period;
            reduce_free_set(&mut alpha, &x, &y, c, &mut w);
            // Bound variables that cannot join a violating pair are set
            // aside; they are restored before convergence is declared.
            let (mut up, mut low) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &t in &active {
                let v = yg(w, t);
                if in_up(alpha[t], y[t]) {
                    up = up.max(-v);
                }
                if in_low(alpha[t], y[t]) {
                    low = low.max(v);
                }
            }
            if !unshrunk && up + low <= 10.0 * params.tolerance {
                unshrunk = true;
                active = (0..n).collect();
            }
            active.retain(|&t| {
                let v = yg(w, t);
                match (in_up(alpha[t], y[t]), in_low(alpha[t], y[t])) {
                    (true, false) => v <= low,
                    (false, true) => -v <= up,
                    _ => true,
                }
            });
        }

        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for &t in &active {
            let v = -yg(w, t);
            if in_up(alpha[t], y[t]) && v >= gmax {
                gmax = v;
                i = t;
            }
        }
        let mut j = usize::MAX;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        for &t in &active {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = yg(w, t);
            gmax2 = gmax2.max(v);
            let b = gmax + v;
            if b > 0.0 && i != usize::MAX {
                let mut quad = kd[i] + kd[t] - 2.0 * dot(x[i], x[t]);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(b * b) / quad;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap_pair = gmax + gmax2;
        if gap_pair < params.tolerance || j == usize::MAX || i == usize::MAX {
            if active.len() < n {
                // Re-check optimality on the full set before shrinking again.
                active = (0..n).collect();
                countdown = period + 1;
                continue;
            }
            break;
        }
        // Badly conditioned problems approach the pair tolerance slowly; the
        // duality gap is checked periodically against a far stricter bound
        // than the one enforced below.
        if iter > 0 && iter % n.max(1000) == 0 {
            let g: Vec<f64> = (0..n).map(|t| grad(w, t)).collect();
            let b = -offset(&alpha, &y, &g, c);
            let gap = duality_gap(&x, &y, &alpha, w, b, c);
            log::trace!(
                "SMO iteration {iter}: gap {gap:.3e}, pair violation {gap_pair:.3e}, {} active",
                active.len()
            );
            if gap < params.gap_fraction * c * n as f64 {
                break;
            }
        }
        if iter >= params.max_iterations {
            return Err(AadError::NoConvergence {
                what: "SMO",
                iterations: iter,
                residual: gap_pair,
            });
        }
        iter += 1;
        let (gi, gj) = (grad(w, i), grad(w, j));

        let (ai, aj) = (alpha[i], alpha[j]);
        let kij = dot(x[i], x[j]);
        if y[i] != y[j] {
            let mut quad = kd[i] + kd[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            let (mut ni, mut nj) = (ai + delta, aj + delta);
            if diff > 0.0 {
                if nj < 0.0 {
                    nj = 0.0;
                    ni = diff;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = -diff;
            }
            if diff > 0.0 {
                if ni > c {
                    ni = c;
                    nj = c - diff;
                }
            } else if nj > c {
                nj = c;
                ni = c + diff;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        } else {
            let mut quad = kd[i] + kd[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            let (mut ni, mut nj) = (ai - delta, aj + delta);
            if sum > c {
                if ni > c {
                    ni = c;
                    nj = sum - c;
                }
            } else if nj < 0.0 {
                nj = 0.0;
                ni = sum;
            }
            if sum > c {
                if nj > c {
                    nj = c;
                    ni = sum - c;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = sum;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        }
        for (t, old) in [(i, ai), (j, aj)] {
            let d = (alpha[t] - old) * y[t];
            w[0] += d * x[t][0];
            w[1] += d * x[t][1];
        }
    }

    // Rebuild the weights from the multipliers so they satisfy
    // a = Σ α_i y_i x_i to rounding.
    let mut w = [0.0; 2];
    for t in 0..n {
        w[0] += alpha[t] * y[t] * x[t][0];
        w[1] += alpha[t] * y[t] * x[t][1];
    }
    let g: Vec<f64> = (0..n).map(|t| grad(w, t)).collect();
    let bias = -offset(&alpha, &y, &g, c);

    let support_indices: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let duality_gap = duality_gap(&x, &y, &alpha, w, bias, c);
    let limit = 1e-6 * c * n as f64;
    if !(duality_gap <= limit) {
        return Err(AadError::NoConvergence {
            what: "SMO duality gap",
            iterations: iter,
            residual: duality_gap,
        });
    }
    log::debug!("SMO converged after {iter} iterations, gap {duality_gap:.3e}, pair violation {gap_pair:.3e}");

    Ok(AttentionClassifier {
        weights: w,
        bias,
        c,
        alphas: alpha,
        support_indices,
        duality_gap,
        platt: None,
    })
}

/// Pushes free multipliers to a bound while more than three are free.
///
/// Four free vectors give a direction `d` with `Σ d_t y_t x_t = 0` and
/// `Σ d_t y_t = 0`. Along it `w` is fixed and the dual objective is linear,
/// so stepping uphill to the first bound never lowers it. Plain pairwise
/// updates crawl through this flat subspace.
fn reduce_free_set(alpha: &mut [f64], x: &[[f64; 2]], y: &[f64], c: f64, w: &mut [f64; 2]) {
    let det3 = |a: [f64; 3], b: [f64; 3], d: [f64; 3]| {
        a[0] * (b[1] * d[2] - b[2] * d[1]) - a[1] * (b[0] * d[2] - b[2] * d[0])
            + a[2] * (b[0] * d[1] - b[1] * d[0])
    };
    let is_free = |a: f64| a > 0.0 && a < c;
    for _ in 0..alpha.len() {
        let free: Vec<usize> = (0..alpha.len()).filter(|&t| is_free(alpha[t])).take(4).collect();
        if free.len() < 4 {
            return;
        }
        let col = |t: usize| [y[t] * x[t][0], y[t] * x[t][1], y[t]];
        let m: Vec<[f64; 3]> = free.iter().map(|&t| col(t)).collect();
        // Cofactor expansion: the null vector of a 3x4 matrix.
        let d = [
            det3(m[1], m[2], m[3]),
            -det3(m[0], m[2], m[3]),
            det3(m[0], m[1], m[3]),
            -det3(m[0], m[1], m[2]),
        ];
        let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs())).powi(3);
        let dmax = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !(dmax > 1e-12 * scale) {
            return;
        }
        let slope: f64 = free
            .iter()
            .zip(&d)
            .map(|(&t, dt)| (1.0 - y[t] * dot(*w, x[t])) * dt)
            .sum();
        let sign = if slope < 0.0 { -1.0 } else { 1.0 };
        let dir: Vec<f64> = d.iter().map(|v| sign * v / dmax).collect();
        let (mut step, mut hit) = (f64::INFINITY, 0);
        for (k, (&t, &dk)) in free.iter().zip(&dir).enumerate() {
            let room = if dk > 0.0 {
                (c - alpha[t]) / dk
            } else if dk < 0.0 {
                -alpha[t] / dk
            } else {
                f64::INFINITY
            };
            if room < step {
                step = room;
                hit = k;
            }
        }
        for (k, (&t, &dk)) in free.iter().zip(&dir).enumerate() {
            let old = alpha[t];
            alpha[t] = if k == hit {
                if dk > 0.0 { c } else { 0.0 }
            } else {
                (old + step * dk).clamp(0.0, c)
            };
            let delta = (alpha[t] - old) * y[t];
            w[0] += delta * x[t][0];
            w[1] += delta * x[t][1];
        }
    }
}

/// `ρ` with `f(x) = aᵀx − ρ`: mean of `y G` over free vectors, or the
/// midpoint of the feasible interval when none are free.
fn offset(alpha: &[f64], y: &[f64], g: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut nfree) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nfree += 1;
            sum += yg;
        }
    }
    if nfree > 0 {
        sum / nfree as f64
    } else {
        (ub + lb) / 2.0
    }
}

fn duality_gap(x: &[[f64; 2]], y: &[f64], alpha: &[f64], w: [f64; 2], b: f64, c: f64) -> f64 {
    let ww = dot(w, w);
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (1.0 - yi * (dot(w, xi) + b)).max(0.0))
        .sum();
    let primal = 0.5 * ww + c * hinge;
    let dual = alpha.iter().sum::<f64>() - 0.5 * ww;
    primal - dual
}

/// Dual objective `Σα − ½‖Σ α_i y_i x_i‖²` (to be maximized).
pub fn dual_objective(samples: &[MarkerSample], alphas: &[f64]) -> f64 {
    let mut w = [0.0; 2];
    for (s, &a) in samples.iter().zip(alphas) {
        w[0] += a * s.y.sign() * s.x[0];
        w[1] += a * s.y.sign() * s.x[1];
    }
    alphas.iter().sum::<f64>() - 0.5 * dot(w, w)
}

pub fn svm_margin(model: &AttentionClassifier, x: [f64; 2]) -> f64 {
    dot(model.weights, x) + model.bias
}

#[derive(Debug, Clone, Copy)]
pub struct PlattParams {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub min_step: f64,
}

impl Default for PlattParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            min_step: 1e-10,
        }
    }
}

pub fn platt_fit(margins: &[f64], labels: &[Speaker]) -> Result<PlattCoefficients> {
    platt_fit_with(margins, labels, PlattParams::default())
}

/// Newton's method with backtracking on the smoothed-target cross entropy.
pub fn platt_fit_with(
    margins: &[f64],
    labels: &[Speaker],
    params: PlattParams,
) -> Result<PlattCoefficients> {
    if margins.len() != labels.len() {
        return Err(AadError::Dimension(format!(
            "{} margins but {} labels",
            margins.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == Speaker::One).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(AadError::InvalidInput(
            "Platt fitting needs both labels".into(),
        ));
    }
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = labels
        .iter()
        .map(|&l| if l == Speaker::One { hi } else { lo })
        .collect();

    let objective = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&t)
            .map(|(&m, &ti)| {
                let z = a * m + b;
                // t·z + log(1 + exp(−z)), stable in both tails
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(a, b);
    let sigma = 1e-12;
    for _ in 0..params.max_iterations {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&m, &ti) in margins.iter().zip(&t) {
            let coef = PlattCoefficients { a, b };
            let p = coef.probability(m);
            let q = 1.0 - p;
            let d2 = p * q;
            h11 += m * m * d2;
            h22 += d2;
            h21 += m * d2;
            let d1 = ti - p;
            g1 += m * d1;
            g2 += d1;
        }
        let gnorm = g1.hypot(g2);
        if gnorm < params.gradient_tolerance {
            return Ok(PlattCoefficients { a, b });
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
            if step < params.min_step {
                // Converged to rounding: accept if the gradient is tiny relative
                // to the sample count.
                if gnorm < params.gradient_tolerance * margins.len() as f64 {
                    return Ok(PlattCoefficients { a, b });
                }
                return Err(AadError::NoConvergence {
                    what: "Platt line search",
                    iterations: 0,
                    residual: gnorm,
                });
            }
        }
    }
    Err(AadError::NoConvergence {
        what: "Platt scaling",
        iterations: params.max_iterations,
        residual: f64::NAN,
    })
}

/// Probability that speaker 1 is attended.
pub fn attend_probability(model: &AttentionClassifier, x: [f64; 2]) -> Result<f64> {
    let platt = model.platt.ok_or(AadError::Uncalibrated)?;
    Ok(platt.probability(svm_margin(model, x)))
}

impl AttentionClassifier {
    /// SVM training followed by Platt calibration on the training margins.
    pub fn fit(samples: &[MarkerSample], c: f64) -> Result<Self> {
        let mut model = svm_train(samples, c)?;
        let margins: Vec<f64> = samples.iter().map(|s| svm_margin(&model, s.x)).collect();
        let labels: Vec<Speaker> = samples.iter().map(|s| s.y).collect();
        model.platt = Some(platt_fit(&margins, &labels)?);
        Ok(model)
    }

    pub fn margin(&self, x: [f64; 2]) -> f64 {
        svm_margin(self, x)
    }

    pub fn predict(&self, x: [f64; 2]) -> Speaker {
        Speaker::from_margin(self.margin(x))
    }

    /// `field:value` lines; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let _ = writeln!(s, "format:aad-svm-v1");
        let _ = writeln!(s, "c:{}", self.c);
        let _ = writeln!(s, "weights:{},{}", self.weights[0], self.weights[1]);
        let _ = writeln!(s, "bias:{}", self.bias);
        let _ = writeln!(s, "duality_gap:{}", self.duality_gap);
        let _ = writeln!(s, "alphas:{}", join(&self.alphas));
        let _ = writeln!(s, "support_indices:{}", join(&self.support_indices));
        match self.platt {
            Some(p) => {
                let _ = writeln!(s, "platt_a:{}", p.a);
                let _ = writeln!(s, "platt_b:{}", p.b);
            }
            None => {
                let _ = writeln!(s, "platt_a:none");
                let _ = writeln!(s, "platt_b:none");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| AadError::Format(format!("line without ':' separator: {line}")))?;
            if fields.insert(k.trim(), v.trim()).is_some() {
                return Err(AadError::Format(format!("duplicate field {k}")));
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| AadError::Format(format!("missing field {k}")))
        };
        if get("format")? != "aad-svm-v1" {
            return Err(AadError::Format("unknown model format".into()));
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| AadError::Format(format!("bad number {s:?}")))
        }
        fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(num).collect()
        }
        let weights: Vec<f64> = list(get("weights")?)?;
        if weights.len() != 2 {
            return Err(AadError::Format("weights must have two entries".into()));
        }
        let platt = match (get("platt_a")?, get("platt_b")?) {
            ("none", "none") => None,
            (a, b) => Some(PlattCoefficients {
                a: num(a)?,
                b: num(b)?,
            }),
        };
        Ok(Self {
            weights: [weights[0], weights[1]],
            bias: num(get("bias")?)?,
            c: num(get("c")?)?,
            alphas: list(get("alphas")?)?,
            support_indices: list(get("support_indices")?)?,
            duality_gap: num(get("duality_gap")?)?,
            platt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample(x0: f64, x1: f64, y: Speaker) -> MarkerSample {
        MarkerSample { x: [x0, x1], y }
    }

    #[test]
    fn two_point_symmetry() {
        let s = [sample(1.0, 0.0, Speaker::One), sample(0.0, 1.0, Speaker::Two)];
        let m = svm_train(&s, 1e3).unwrap();
        assert!((m.weights[0] + m.weights[1]).abs() < 1e-9);
        assert!(m.weights[0] > 0.0);
        assert!(m.bias.abs() < 1e-9);
        for t in [-3.0, 0.0, 0.5, 7.0] {
            assert!(svm_margin(&m, [t, t]).abs() < 1e-9);
        }
        assert!((svm_margin(&m, [1.0, 0.0]) - 1.0).abs() < 1e-4);
        assert!((svm_margin(&m, [0.0, 1.0]) + 1.0).abs() < 1e-4);
    }

    #[test]
    fn separable_cloud_has_no_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = Vec::new();
        for _ in 0..60 {
            let u: f64 = rng.random_range(0.0..1.0);
            let v: f64 = rng.random_range(0.0..1.0);
            s.push(sample(2.0 + u, v, Speaker::One));
            s.push(sample(v, 2.0 + u, Speaker::Two));
        }
        let m = svm_train(&s, 1e4).unwrap();
        for x in &s {
            let yf = x.y.sign() * svm_margin(&m, x.x);
            assert!(yf >= 1.0 - 1e-6, "{yf}");
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let s = [sample(1.0, 0.0, Speaker::One), sample(2.0, 0.0, Speaker::One)];
        assert!(svm_train(&s, 1.0).is_err());
    }

    #[test]
    fn weights_reconstruct_from_alphas() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s: Vec<MarkerSample> = (0..150)
            .map(|i| {
                let y = if i % 2 == 0 { Speaker::One } else { Speaker::Two };
                let shift = 0.6 * y.sign();
                sample(
                    1.0 + shift + rng.sample::<f64, _>(StandardNormal),
                    1.0 - shift + rng.sample::<f64, _>(StandardNormal),
                    y,
                )
            })
            .collect();
        let m = svm_train(&s, 1.0).unwrap();
        let mut a = [0.0; 2];
        for (x, &al) in s.iter().zip(&m.alphas) {
            a[0] += al * x.y.sign() * x.x[0];
            a[1] += al * x.y.sign() * x.x[1];
        }
        let err = ((a[0] - m.weights[0]).powi(2) + (a[1] - m.weights[1]).powi(2)).sqrt();
        assert!(err < 1e-8 * dot(m.weights, m.weights).sqrt());
        assert!(m.alphas.iter().all(|&al| (0.0..=m.c).contains(&al)));
        for (i, &al) in m.alphas.iter().enumerate() {
            assert_eq!(al > 0.0, m.support_indices.contains(&i));
        }
    }

    #[test]
    fn platt_orientation_and_symmetry() {
        let margins = [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        let labels = [
            Speaker::Two,
            Speaker::Two,
            Speaker::Two,
            Speaker::One,
            Speaker::One,
            Speaker::One,
        ];
        let p = platt_fit(&margins, &labels).unwrap();
        assert!(p.a < 0.0);
        assert!((p.probability(0.0) - 0.5).abs() < 1e-6);
        assert!(p.probability(2.0) > p.probability(1.0));
    }

    fn overlapping_clouds(seed: u64, n: usize) -> Vec<MarkerSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let y = if i % 3 == 0 { Speaker::One } else { Speaker::Two };
                let shift = 0.5 * y.sign();
                sample(
                    0.8 + shift + 0.7 * rng.sample::<f64, _>(StandardNormal),
                    0.8 - shift + 0.7 * rng.sample::<f64, _>(StandardNormal),
                    y,
                )
            })
            .collect()
    }

    #[test]
    fn badly_scaled_overlap_converges() {
        // Large features and heavy overlap leave many multipliers free at
        // once, the regime where plain pairwise updates stall.
        let s: Vec<MarkerSample> = overlapping_clouds(21, 300)
            .into_iter()
            .map(|m| sample(100.0 * m.x[0], 100.0 * m.x[1], m.y))
            .collect();
        let params = SmoParams {
            max_iterations: 200_000,
            ..SmoParams::default()
        };
        let m = svm_train_with(&s, 1.0, params).unwrap();
        // The primal/dual gap certifies optimality on its own.
        assert!(m.duality_gap < 1e-8 * 300.0, "{}", m.duality_gap);
        let free = m.alphas.iter().filter(|&&a| a > 0.0 && a < 1.0).count();
        assert!(free <= 3, "{free} free multipliers");
    }

    /// Euclidean projection onto {0 <= a <= c, yᵀa = 0}, by bisection on the
    /// multiplier of the equality constraint.
    fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
        let at = |nu: f64| -> Vec<f64> {
            v.iter().zip(y).map(|(&vi, &yi)| (vi - nu * yi).clamp(0.0, c)).collect()
        };
        let h = |nu: f64| at(nu).iter().zip(y).map(|(a, yi)| a * yi).sum::<f64>();
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }

    /// Accelerated projected gradient on the dual, independent of SMO.
    fn qp_oracle(s: &[MarkerSample], c: f64) -> [f64; 2] {
        let y: Vec<f64> = s.iter().map(|x| x.y.sign()).collect();
        let n = s.len();
        let wof = |a: &[f64]| {
            let mut w = [0.0; 2];
            for t in 0..n {
                w[0] += a[t] * y[t] * s[t].x[0];
                w[1] += a[t] * y[t] * s[t].x[1];
            }
            w
        };
        let lip: f64 = s.iter().map(|x| dot(x.x, x.x)).sum();
        let mut a = vec![0.0; n];
        let mut z = a.clone();
        let mut tk = 1.0f64;
        for _ in 0..200_000 {
            let w = wof(&z);
            let v: Vec<f64> = (0..n)
                .map(|t| z[t] - (y[t] * dot(w, s[t].x) - 1.0) / lip)
                .collect();
            let next = project(&v, &y, c);
            let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            z = (0..n)
                .map(|t| next[t] + (tk - 1.0) / tn * (next[t] - a[t]))
                .collect();
            a = next;
            tk = tn;
        }
        wof(&a)
    }

    #[test]
    fn smo_matches_independent_qp_solver() {
        let s = overlapping_clouds(21, 60);
        let m = svm_train(&s, 1.0).unwrap();
        let w = qp_oracle(&s, 1.0);
        for k in 0..2 {
            assert!((m.weights[k] - w[k]).abs() < 1e-4, "{:?} vs {w:?}", m.weights);
        }
        assert!(m.duality_gap < 1e-6 * s.len() as f64);
    }

    #[test]
    fn kkt_conditions_hold() {
        let s = overlapping_clouds(22, 200);
        let c = 0.5;
        let m = svm_train(&s, c).unwrap();
        let tol = 1e-6;
        for (x, &a) in s.iter().zip(&m.alphas) {
            let yf = x.y.sign() * svm_margin(&m, x.x);
            if a <= 0.0 {
                assert!(yf >= 1.0 - tol, "a=0 but yf={yf}");
            } else if a >= c {
                assert!(yf <= 1.0 + tol, "a=C but yf={yf}");
            } else {
                assert!((yf - 1.0).abs() <= tol, "free but yf={yf}");
            }
        }
        let ys: f64 = s.iter().zip(&m.alphas).map(|(x, a)| a * x.y.sign()).sum();
        assert!(ys.abs() < 1e-9);
    }

    #[test]
    fn platt_matches_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (mut margins, mut labels) = (Vec::new(), Vec::new());
        for i in 0..120 {
            let y = if i % 2 == 0 { Speaker::One } else { Speaker::Two };
            margins.push(0.8 * y.sign() + rng.sample::<f64, _>(StandardNormal));
            labels.push(y);
        }
        let fit = platt_fit(&margins, &labels).unwrap();

        let np = labels.iter().filter(|&&l| l == Speaker::One).count() as f64;
        let nn = labels.len() as f64 - np;
        let t: Vec<f64> = labels
            .iter()
            .map(|&l| if l == Speaker::One { (np + 1.0) / (np + 2.0) } else { 1.0 / (nn + 2.0) })
            .collect();
        let (mut a, mut b) = (0.0, 0.0);
        let lr = 1.0 / (labels.len() as f64 * (1.0 + margins.iter().map(|m| m * m).sum::<f64>() / labels.len() as f64));
        for _ in 0..400_000 {
            let (mut ga, mut gb) = (0.0, 0.0);
            for (&m, &ti) in margins.iter().zip(&t) {
                let p = 1.0 / (1.0 + (a * m + b).exp());
                ga += m * (ti - p);
                gb += ti - p;
            }
            a -= lr * 4.0 * ga;
            b -= lr * 4.0 * gb;
        }
        assert!((fit.a - a).abs() < 1e-5 && (fit.b - b).abs() < 1e-5, "{fit:?} vs ({a}, {b})");
    }

    #[test]
    fn platt_needs_both_labels() {
        assert!(platt_fit(&[0.1, 0.2], &[Speaker::One, Speaker::One]).is_err());
    }

    #[test]
    fn probability_limits() {
        let s = [sample(1.0, 0.0, Speaker::One), sample(0.0, 1.0, Speaker::Two)];
        let mut m = svm_train(&s, 10.0).unwrap();
        assert!(matches!(attend_probability(&m, [1.0, 0.0]), Err(AadError::Uncalibrated)));
        m.platt = Some(platt_fit(&[1.0, -1.0], &[Speaker::One, Speaker::Two]).unwrap());
        assert!((attend_probability(&m, [0.3, 0.3]).unwrap() - 0.5).abs() < 1e-9);
        assert!(attend_probability(&m, [1e6, 0.0]).unwrap() > 1.0 - 1e-9);
        assert!(attend_probability(&m, [0.0, 1e6]).unwrap() < 1e-9);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s: Vec<MarkerSample> = (0..40)
            .map(|i| {
                let y = if i < 20 { Speaker::One } else { Speaker::Two };
                sample(rng.random::<f64>() + y.sign() * 0.2, rng.random::<f64>(), y)
            })
            .collect();
        let m = AttentionClassifier::fit(&s, 0.7).unwrap();
        let back = AttentionClassifier::from_text(&m.to_text()).unwrap();
        assert_eq!(back.weights.map(f64::to_bits), m.weights.map(f64::to_bits));
        assert_eq!(back.bias.to_bits(), m.bias.to_bits());
        assert_eq!(back, m);
        assert!(AttentionClassifier::from_text("format:aad-svm-v1\nc:1").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn scaling_features_keeps_labels(seed in any::<u64>(), scale in 0.1f64..10.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s: Vec<MarkerSample> = (0..30)
                    .map(|i| {
                        let y = if i % 2 == 0 { Speaker::One } else { Speaker::Two };
                        sample(rng.random::<f64>() + 0.8 * y.sign(), rng.random::<f64>(), y)
                    })
                    .collect();
                // Separable data with a large C: hard-margin solution scales exactly.
                let m = svm_train(&s, 1e6).unwrap();
                let scaled: Vec<MarkerSample> = s
                    .iter()
                    .map(|x| sample(x.x[0] * scale, x.x[1] * scale, x.y))
                    .collect();
                let ms = svm_train(&scaled, 1e6).unwrap();
                for (a, b) in s.iter().zip(&scaled) {
                    prop_assert_eq!(m.predict(a.x), ms.predict(b.x));
                }
            }

            #[test]
            fn probability_monotone_in_margin(m1 in -20.0f64..20.0, d in 1e-3f64..5.0) {
                let p = PlattCoefficients { a: -1.3, b: 0.2 };
                prop_assert!(p.probability(m1 + d) > p.probability(m1));
            }
        }
    }
}
