//! Repeated-measures statistics for the within-subject study.
//!
//! Matrices are `n` subjects by `k` conditions, one `Vec<f64>` per subject.
//! No sphericity correction is applied and all t-tests are two-tailed.
//!
//! When the condition effect is zero up to rounding a kernel reports a statistic of
//! 0 with p = 1, even if the error term is also zero. A non-zero effect over
//! a zero error term has no defined ratio and returns
//! [`StatsError::DegenerateData`].

mod anova;
mod report;
pub mod special;
mod ttest;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anova::{eta_sq_from_f, mixed_anova, rm_anova, MixedAnovaResult, RmAnovaResult};
pub use report::{
    analysis_report, format_p, stars, AnalysisReport, ContrastRow, DimensionRow, ItemRow, MeanSd, OrderRow, CONTRASTS,
};
pub use ttest::{paired_t, PairedTResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("error variance is zero while the effect is not; the ratio is undefined")]
    DegenerateData,
    #[error("order group {0} has no subjects")]
    EmptyGroup(usize),
    #[error("need at least {need} {what}, got {got}")]
    TooSmall {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("missing data: {0}")]
    MissingCell(String),
}

/// Reference distribution for [`tail_prob`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Distribution {
    F { df1: f64, df2: f64 },
    T { df: f64 },
}

/// Upper-tail probability for F, two-tailed probability for t.
///
/// Returns NaN when a degree of freedom is not positive or the statistic is
/// NaN.
pub fn tail_prob(statistic: f64, dist: Distribution) -> f64 {
    if statistic.is_nan() {
        return f64::NAN;
    }
    match dist {
        Distribution::T { df } => {
            if df.is_nan() || df <= 0.0 {
                return f64::NAN;
            }
            if statistic.is_infinite() {
                return 0.0;
            }
            let t2 = statistic * statistic;
            special::betai(df / 2.0, 0.5, df / (df + t2))
        }
        Distribution::F { df1, df2 } => {
            if !(df1 > 0.0 && df2 > 0.0) {
                return f64::NAN;
            }
            if statistic <= 0.0 {
                return 1.0;
            }
            if statistic.is_infinite() {
                return 0.0;
            }
            special::betai(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * statistic))
        }
    }
}

/// Sum of squares indistinguishable from rounding noise for `count` values
/// whose largest magnitude is `max_abs`.
fn zero_tolerance(max_abs: f64, count: usize) -> f64 {
    count as f64 * (64.0 * f64::EPSILON * max_abs).powi(2)
}

fn max_abs<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    values.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn is_zero_ss(ss: f64, tolerance: f64) -> bool {
    ss <= tolerance
}

/// Checks shape and finiteness, returning `(n, k)`.
fn check_matrix(m: &[Vec<f64>], min_rows: usize) -> Result<(usize, usize), StatsError> {
    let n = m.len();
    if n < min_rows {
        return Err(StatsError::TooSmall {
            what: "subjects",
            need: min_rows,
            got: n,
        });
    }
    let k = m[0].len();
    if k < 2 {
        return Err(StatsError::TooSmall {
            what: "conditions",
            need: 2,
            got: k,
        });
    }
    for (row, values) in m.iter().enumerate() {
        if values.len() != k {
            return Err(StatsError::Ragged {
                row,
                expected: k,
                got: values.len(),
            });
        }
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite { row, col });
        }
    }
    Ok((n, k))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
