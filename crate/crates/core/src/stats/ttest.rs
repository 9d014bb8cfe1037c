use serde::{Deserialize, Serialize};

use super::{is_zero_ss, max_abs, mean, tail_prob, zero_tolerance, Distribution, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTResult {
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
    /// Mean difference over the SD of differences, equal to `t / sqrt(n)`.
    pub d_z: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
}

/// Paired t-test on `a - b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedTResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Ragged {
            row: 0,
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooSmall {
            what: "pairs",
            need: 2,
            got: n,
        });
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(StatsError::NonFinite {
                row: i,
                col: usize::from(x.is_finite()),
            });
        }
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let ss: f64 = d.iter().map(|x| (x - md).powi(2)).sum();
    let tol = zero_tolerance(max_abs(a.iter().chain(b)), n);
    let df = (n - 1) as f64;
    if is_zero_ss(n as f64 * md * md, tol) {
        let sd_diff = (ss / df).sqrt();
        return Ok(PairedTResult {
            t: 0.0,
            df,
            p: 1.0,
            d_z: 0.0,
            mean_diff: md,
            sd_diff,
        });
    }
    if is_zero_ss(ss, tol) {
        return Err(StatsError::DegenerateData);
    }
    let sd_diff = (ss / df).sqrt();
    let t = md / (sd_diff / (n as f64).sqrt());
    Ok(PairedTResult {
        t,
        df,
        p: tail_prob(t, Distribution::T { df }),
        d_z: t / (n as f64).sqrt(),
        mean_diff: md,
        sd_diff,
    })
}
