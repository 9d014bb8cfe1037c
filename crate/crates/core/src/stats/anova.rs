use serde::{Deserialize, Serialize};

use super::{check_matrix, is_zero_ss, max_abs, mean, tail_prob, zero_tolerance, Distribution, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmAnovaResult {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub partial_eta_sq: f64,
    pub ss_condition: f64,
    pub ss_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedAnovaResult {
    pub interaction_f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub ss_interaction: f64,
    pub ss_error: f64,
}

/// Partial eta squared from an F ratio: `F*df1 / (F*df1 + df2)`.
pub fn eta_sq_from_f(f: f64, df1: f64, df2: f64) -> f64 {
    let num = f * df1;
    if num == 0.0 {
        0.0
    } else {
        num / (num + df2)
    }
}

/// Resolves the ratio, applying the zero-effect and zero-error rules.
fn ratio(ss_effect: f64, ss_error: f64, df1: f64, df2: f64, tol: f64) -> Result<(f64, f64), StatsError> {
    if is_zero_ss(ss_effect, tol) {
        return Ok((0.0, 1.0));
    }
    if is_zero_ss(ss_error, tol) {
        return Err(StatsError::DegenerateData);
    }
    let f = (ss_effect / df1) / (ss_error / df2);
    Ok((f, tail_prob(f, Distribution::F { df1, df2 })))
}

fn tolerance(m: &[Vec<f64>]) -> f64 {
    zero_tolerance(max_abs(m.iter().flatten()), m.len() * m[0].len())
}

fn col_means(m: &[Vec<f64>], rows: impl Iterator<Item = usize> + Clone, k: usize) -> Vec<f64> {
    (0..k)
        .map(|j| {
            let vals: Vec<f64> = rows.clone().map(|i| m[i][j]).collect();
            mean(&vals)
        })
        .collect()
}

/// One-way repeated-measures ANOVA over an `n x k` matrix.
pub fn rm_anova(m: &[Vec<f64>]) -> Result<RmAnovaResult, StatsError> {
    let (n, k) = check_matrix(m, 2)?;
    let grand = mean(&m.iter().flatten().copied().collect::<Vec<_>>());
    let row_means: Vec<f64> = m.iter().map(|r| mean(r)).collect();
    let cols = col_means(m, 0..n, k);

    let ss_condition = n as f64 * cols.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
    let ss_error: f64 = m
        .iter()
        .zip(&row_means)
        .flat_map(|(row, rm)| row.iter().zip(&cols).map(move |(x, cm)| (x - rm - cm + grand).powi(2)))
        .sum();
    let df1 = (k - 1) as f64;
    let df2 = ((k - 1) * (n - 1)) as f64;
    let (f, p) = ratio(ss_condition, ss_error, df1, df2, tolerance(m))?;
    Ok(RmAnovaResult {
        f,
        df1,
        df2,
        p,
        partial_eta_sq: eta_sq_from_f(f, df1, df2),
        ss_condition,
        ss_error,
    })
}

/// Condition x group interaction for a split-plot design: `groups[i]` is the
/// between-subjects group of row `i`, labelled `0..g`.
pub fn mixed_anova(m: &[Vec<f64>], groups: &[usize]) -> Result<MixedAnovaResult, StatsError> {
    let (n, k) = check_matrix(m, 2)?;
    if groups.len() != n {
        return Err(StatsError::Ragged {
            row: n,
            expected: n,
            got: groups.len(),
        });
    }
    let g = groups.iter().max().map_or(0, |&x| x + 1).max(2);
    let members: Vec<Vec<usize>> = (0..g)
        .map(|label| (0..n).filter(|&i| groups[i] == label).collect())
        .collect();
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(StatsError::EmptyGroup(empty));
    }
    if n <= g {
        return Err(StatsError::TooSmall {
            what: "subjects",
            need: g + 1,
            got: n,
        });
    }

    let grand = mean(&m.iter().flatten().copied().collect::<Vec<_>>());
    let cols = col_means(m, 0..n, k);
    let row_means: Vec<f64> = m.iter().map(|r| mean(r)).collect();
    let cell: Vec<Vec<f64>> = members
        .iter()
        .map(|rows| col_means(m, rows.iter().copied(), k))
        .collect();
    let group_means: Vec<f64> = cell.iter().map(|c| mean(c)).collect();

    let mut ss_interaction = 0.0;
    for (gi, rows) in members.iter().enumerate() {
        let ng = rows.len() as f64;
        for j in 0..k {
            ss_interaction += ng * (cell[gi][j] - group_means[gi] - cols[j] + grand).powi(2);
        }
    }
    let mut ss_error = 0.0;
    for i in 0..n {
        let gi = groups[i];
        for j in 0..k {
            ss_error += (m[i][j] - row_means[i] - cell[gi][j] + group_means[gi]).powi(2);
        }
    }
    let df1 = ((k - 1) * (g - 1)) as f64;
    let df2 = ((k - 1) * (n - g)) as f64;
    let (f, p) = ratio(ss_interaction, ss_error, df1, df2, tolerance(m))?;
    Ok(MixedAnovaResult {
        interaction_f: f,
        df1,
        df2,
        p,
        ss_interaction,
        ss_error,
    })
}
