//! Rank tests for comparing trial outcomes.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Smallest sample size accepted by [`mann_whitney_u`].
pub const MIN_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {MIN_SAMPLES} values per sample, got {0} and {1}")]
    InsufficientData(usize, usize),
    #[error("sample contains a NaN")]
    NaN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    TwoSided,
    /// The first sample tends to be smaller.
    Less,
    /// The first sample tends to be larger.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
}

/// Mann-Whitney U test, normal approximation with tie and continuity
/// correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alt: Alternative) -> Result<MannWhitney, StatsError> {
    if a.len() < MIN_SAMPLES || b.len() < MIN_SAMPLES {
        return Err(StatsError::InsufficientData(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(StatsError::NaN);
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += rank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, p_value: 1.0 });
    }
    let sd = var.sqrt();
    let normal = Normal::standard();
    let p_value = match alt {
        Alternative::TwoSided => {
            let z = ((u - mu).abs() - 0.5) / sd;
            2.0 * normal.sf(z)
        }
        Alternative::Greater => normal.sf((u - mu - 0.5) / sd),
        Alternative::Less => normal.cdf((u - mu + 0.5) / sd),
    };
    Ok(MannWhitney {
        u,
        p_value: p_value.min(1.0),
    })
}

/// Bonferroni-adjusted p-value for `m` comparisons.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}
