//! N1–P2 attention markers from an estimated TRF.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{AadError, Result};
use crate::estimation::TrfEstimate;

/// Latency windows (seconds) searched for the N1 and P2 deflections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakWindows {
    pub n1_lo: f64,
    pub n1_hi: f64,
    pub p2_lo: f64,
    pub p2_hi: f64,
}

impl Default for PeakWindows {
    fn default() -> Self {
        Self {
            n1_lo: 0.075,
            n1_hi: 0.135,
            p2_lo: 0.175,
            p2_hi: 0.250,
        }
    }
}

// Latency products such as 0.25 * 64 must land on exact integers.
const INDEX_SLACK: f64 = 1e-9;

fn latency_range(lo: f64, hi: f64, rate_hz: f64) -> RangeInclusive<usize> {
    let first = (lo * rate_hz - INDEX_SLACK).ceil().max(0.0) as usize;
    let last = (hi * rate_hz + INDEX_SLACK).floor().max(0.0) as usize;
    first..=last
}

impl PeakWindows {
    /// Ordering checks against a TRF of `span_sec` seconds.
    pub fn validate(&self, span_sec: f64) -> Result<()> {
        let ordered = 0.0 <= self.n1_lo
            && self.n1_lo < self.n1_hi
            && self.n1_hi < self.p2_lo
            && self.p2_lo < self.p2_hi;
        if !ordered {
            return Err(AadError::Config(format!(
                "peak windows must satisfy 0 <= n1_lo < n1_hi < p2_lo < p2_hi, got {self:?}"
            )));
        }
        if self.n1_hi > span_sec + INDEX_SLACK {
            return Err(AadError::Config(format!(
                "n1 window ends at {} s, beyond the {span_sec} s TRF span",
                self.n1_hi
            )));
        }
        if self.p2_hi > span_sec + INDEX_SLACK {
            return Err(AadError::Config(format!(
                "p2 window ends at {} s, beyond the {span_sec} s TRF span",
                self.p2_hi
            )));
        }
        Ok(())
    }

    /// Lag indices `[ceil(lo * rate), floor(hi * rate)]` for both windows.
    pub fn lag_ranges(
        &self,
        rate_hz: f64,
        n_lags: usize,
    ) -> Result<(RangeInclusive<usize>, RangeInclusive<usize>)> {
        let n1 = latency_range(self.n1_lo, self.n1_hi, rate_hz);
        let p2 = latency_range(self.p2_lo, self.p2_hi, rate_hz);
        for (name, r) in [("N1", &n1), ("P2", &p2)] {
            if r.is_empty() {
                return Err(AadError::Config(format!(
                    "{name} window contains no lag at {rate_hz} Hz"
                )));
            }
            if *r.end() >= n_lags {
                return Err(AadError::Config(format!(
                    "{name} window reaches lag {} but the TRF has {n_lags} lags",
                    r.end()
                )));
            }
        }
        Ok((n1, p2))
    }
}

/// A located deflection; `lag` is `None` when the zero fallback applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub value: f64,
    pub lag: Option<usize>,
}

/// Most extreme local extremum of the given sign inside `range`.
///
/// Neighbours outside the window are ignored, so a monotone run makes the
/// boundary sample the peak. Ties go to the earlier lag.
fn window_peak(theta: &[f64], range: RangeInclusive<usize>, sign: f64) -> Peak {
    let (lo, hi) = (*range.start(), *range.end());
    let mut best = Peak { value: 0.0, lag: None };
    for i in range {
        let v = sign * theta[i];
        if v <= 0.0 {
            continue;
        }
        let left_ok = i == lo || v >= sign * theta[i - 1];
        let right_ok = i == hi || v >= sign * theta[i + 1];
        if left_ok && right_ok && best.lag.is_none_or(|_| v > sign * best.value) {
            best = Peak {
                value: theta[i],
                lag: Some(i),
            };
        }
    }
    best
}

pub fn find_n1_peak(trf: &TrfEstimate, win: &PeakWindows) -> Result<Peak> {
    let (n1, _) = win.lag_ranges(trf.lag_rate_hz, trf.n_lags())?;
    Ok(window_peak(trf.theta.as_slice(), n1, -1.0))
}

pub fn find_p2_peak(trf: &TrfEstimate, win: &PeakWindows) -> Result<Peak> {
    let (_, p2) = win.lag_ranges(trf.lag_rate_hz, trf.n_lags())?;
    Ok(window_peak(trf.theta.as_slice(), p2, 1.0))
}

/// N1 amplitude (≤ 0); zero when the window holds no negative peak.
pub fn find_n1(trf: &TrfEstimate, win: &PeakWindows) -> Result<f64> {
    find_n1_peak(trf, win).map(|p| p.value)
}

/// P2 amplitude (≥ 0); zero when the window holds no positive peak.
pub fn find_p2(trf: &TrfEstimate, win: &PeakWindows) -> Result<f64> {
    find_p2_peak(trf, win).map(|p| p.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionMarker {
    pub value: f64,
    pub n1: f64,
    pub p2: f64,
}

pub fn attention_marker(trf: &TrfEstimate, win: &PeakWindows) -> Result<AttentionMarker> {
    let n1 = find_n1(trf, win)?;
    let p2 = find_p2(trf, win)?;
    Ok(AttentionMarker {
        value: (n1 - p2).abs(),
        n1,
        p2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn trf(theta: Vec<f64>) -> TrfEstimate {
        let p = theta.len();
        TrfEstimate {
            theta: DVector::from_vec(theta),
            mse: DMatrix::identity(p, p),
            lag_rate_hz: 64.0,
            mse_valid: true,
        }
    }

    fn lat(j: usize) -> f64 {
        j as f64 / 64.0
    }

    #[test]
    fn default_windows_map_to_expected_lags() {
        let (n1, p2) = PeakWindows::default().lag_ranges(64.0, 24).unwrap();
        assert_eq!(n1, 5..=8);
        assert_eq!(p2, 12..=16);
    }

    #[test]
    fn window_past_span_is_rejected() {
        let win = PeakWindows {
            p2_hi: 0.40,
            ..PeakWindows::default()
        };
        assert!(find_p2(&trf(vec![0.0; 24]), &win).is_err());
        assert!(win.validate(0.375).is_err());
    }

    #[test]
    fn constructed_n1_bump() {
        let theta: Vec<f64> = (0..24)
            .map(|j| {
                let t = lat(j);
                if (0.075..=0.135).contains(&t) {
                    -(std::f64::consts::PI * (t - 0.075) / 0.06).sin()
                } else {
                    0.0
                }
            })
            .collect();
        let min = theta[5..=8].iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min < 0.0);
        assert_eq!(find_n1(&trf(theta), &PeakWindows::default()).unwrap(), min);
    }

    #[test]
    fn n1_zero_when_window_positive() {
        let mut theta = vec![-1.0; 24];
        theta[5..=8].copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(find_n1(&trf(theta), &PeakWindows::default()).unwrap(), 0.0);
    }

    #[test]
    fn n1_monotone_window_takes_edge() {
        let mut theta = vec![0.0; 24];
        theta[5..=8].copy_from_slice(&[-0.1, -0.2, -0.3, -0.4]);
        theta[9] = -5.0;
        let got = find_n1_peak(&trf(theta.clone()), &PeakWindows::default()).unwrap();
        // Brute force over the window samples.
        let brute = theta[5..=8].iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(got.value, brute);
        assert_eq!(got.lag, Some(8));
    }

    #[test]
    fn p2_bump_and_zero_rule() {
        let theta: Vec<f64> = (0..24)
            .map(|j| (-(lat(j) - 0.21).powi(2) / (2.0 * 0.02f64.powi(2))).exp())
            .collect();
        let max = theta[12..=16].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(find_p2(&trf(theta), &PeakWindows::default()).unwrap(), max);

        let mut theta = vec![1.0; 24];
        theta[12..=16].iter_mut().for_each(|v| *v = -0.5);
        assert_eq!(find_p2(&trf(theta), &PeakWindows::default()).unwrap(), 0.0);
    }

    #[test]
    fn p2_tie_goes_to_earlier_lag() {
        let mut theta = vec![0.0; 24];
        theta[12..=16].copy_from_slice(&[0.1, 0.7, 0.2, 0.7, 0.1]);
        let p = find_p2_peak(&trf(theta), &PeakWindows::default()).unwrap();
        assert_eq!((p.value, p.lag), (0.7, Some(13)));
    }

    #[test]
    fn marker_arithmetic() {
        let mut theta = vec![0.0; 24];
        theta[6] = -0.4;
        theta[14] = 0.6;
        let m = attention_marker(&trf(theta), &PeakWindows::default()).unwrap();
        assert_eq!((m.n1, m.p2), (-0.4, 0.6));
        assert!((m.value - 1.0).abs() < 1e-15);
        let flat = attention_marker(&trf(vec![0.0; 24]), &PeakWindows::default()).unwrap();
        assert_eq!(flat.value, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn brute_force_window_extrema(theta in prop::collection::vec(-3.0f64..3.0, 24)) {
                let t = trf(theta.clone());
                let win = PeakWindows::default();
                let min = theta[5..=8].iter().copied().fold(f64::INFINITY, f64::min);
                let max = theta[12..=16].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(find_n1(&t, &win).unwrap(), min.min(0.0));
                prop_assert_eq!(find_p2(&t, &win).unwrap(), max.max(0.0));
            }

            #[test]
            fn positive_scaling(theta in prop::collection::vec(-3.0f64..3.0, 24), c in 0.01f64..100.0) {
                let win = PeakWindows::default();
                let a = attention_marker(&trf(theta.clone()), &win).unwrap().value;
                let b = attention_marker(&trf(theta.iter().map(|v| v * c).collect()), &win).unwrap().value;
                prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs()));
            }

            #[test]
            fn outside_windows_do_not_matter(theta in prop::collection::vec(-3.0f64..3.0, 24), k in -5.0f64..5.0) {
                let win = PeakWindows::default();
                let a = attention_marker(&trf(theta.clone()), &win).unwrap();
                let shifted: Vec<f64> = theta
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if (5..=8).contains(&j) || (12..=16).contains(&j) { *v } else { v + k })
                    .collect();
                prop_assert_eq!(a, attention_marker(&trf(shifted), &win).unwrap());
            }
        }
    }
}
