//! Report tables and the trial summaries they are built from.

use serde::Serialize;
use srevo_core::evolve::GenerationRecord;
use srevo_core::metrics::{mean, median, TestRecord};
use srevo_core::stats::{bonferroni, mann_whitney_u, Alternative, StatsError};

/// Header of `table.csv`.
pub const TABLE_HEADER: &str = "method,n,valid_fraction,ce_mean,ted_mean,nmse_median,one_minus_r2_median";
/// Header of `stats.csv`.
pub const STATS_HEADER: &str = "comparison,sample_a,sample_b,n_a,n_b,alternative,u,p_value,p_bonferroni";

/// One method's test scores. Symbolic metrics are averaged, numeric ones
/// take the median so a few wild predictions do not dominate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub n: usize,
    pub valid_fraction: f64,
    pub ce_mean: f64,
    pub ted_mean: f64,
    pub nmse_median: f64,
    pub one_minus_r2_median: f64,
}

impl ReportRow {
    pub fn from_records(method: &str, records: &[TestRecord]) -> ReportRow {
        let col = |f: fn(&TestRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
        ReportRow {
            method: method.to_string(),
            n: records.len(),
            valid_fraction: records.iter().filter(|r| r.valid).count() as f64 / records.len().max(1) as f64,
            ce_mean: mean(&col(|r| r.ce)),
            ted_mean: mean(&col(|r| r.ted)),
            nmse_median: median(&col(|r| r.nmse)),
            one_minus_r2_median: median(&col(|r| r.one_minus_r2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

/// Best values at the two ends of each trial.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Endpoints {
    pub first_ce: Vec<f64>,
    pub final_ce: Vec<f64>,
    /// Best MSE at the first generation where every member is valid, for
    /// trials that get there.
    pub first_valid_mse: Vec<f64>,
    /// Final best MSE of the same trials.
    pub final_mse: Vec<f64>,
}

impl Endpoints {
    pub fn from_histories(histories: &[Vec<GenerationRecord>]) -> Endpoints {
        let mut e = Endpoints::default();
        for h in histories {
            let (Some(first), Some(last)) = (h.first(), h.last()) else {
                continue;
            };
            e.first_ce.push(first.best_ce);
            e.final_ce.push(last.best_ce);
            let full = h.iter().find(|r| r.valid_fraction == 1.0).and_then(|r| r.best_mse);
            if let (Some(a), Some(b)) = (full, last.best_mse) {
                e.first_valid_mse.push(a);
                e.final_mse.push(b);
            }
        }
        e
    }

    /// Trials whose final best CE is below their generation-0 best CE.
    pub fn ce_improved(&self) -> usize {
        self.first_ce.iter().zip(&self.final_ce).filter(|(a, b)| b < a).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub comparison: String,
    pub sample_a: String,
    pub sample_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub alternative: String,
    pub u: f64,
    pub p_value: f64,
    pub p_bonferroni: f64,
}

fn alternative_name(alt: Alternative) -> &'static str {
    match alt {
        Alternative::TwoSided => "two-sided",
        Alternative::Less => "less",
        Alternative::Greater => "greater",
    }
}

/// Start-versus-end comparisons for CE and MSE, Bonferroni-corrected over
/// the tests that could be run. A comparison with too few samples is
/// reported through the returned errors and left out.
pub fn endpoint_tests(e: &Endpoints, alt: Alternative) -> (Vec<StatsRow>, Vec<(String, StatsError)>) {
    let cases = [
        ("best_ce", "generation_0", "final", &e.first_ce, &e.final_ce),
        (
            "best_mse",
            "first_full_validity",
            "final",
            &e.first_valid_mse,
            &e.final_mse,
        ),
    ];
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (name, a_label, b_label, a, b) in cases {
        // Ordered so that `less` reads "the later sample is smaller".
        match mann_whitney_u(b, a, alt) {
            Ok(t) => rows.push(StatsRow {
                comparison: name.to_string(),
                sample_a: b_label.to_string(),
                sample_b: a_label.to_string(),
                n_a: b.len(),
                n_b: a.len(),
                alternative: alternative_name(alt).to_string(),
                u: t.u,
                p_value: t.p_value,
                p_bonferroni: 0.0,
            }),
            Err(err) => skipped.push((name.to_string(), err)),
        }
    }
    let m = rows.len();
    for r in &mut rows {
        r.p_bonferroni = bonferroni(r.p_value, m);
    }
    (rows, skipped)
}

/// Mean of each consecutive block of `width` values; a short final block
/// is averaged over what it has.
pub fn block_means(values: &[f64], width: usize) -> Vec<f64> {
    values.chunks(width.max(1)).map(mean).collect()
}

/// Per-generation mean over trials, up to the shortest history.
pub fn mean_curve(histories: &[Vec<GenerationRecord>], f: fn(&GenerationRecord) -> f64) -> Vec<f64> {
    let len = histories.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|g| mean(&histories.iter().map(|h| f(&h[g])).collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(generation: usize, ce: f64, mse: Option<f64>, valid: f64) -> GenerationRecord {
        GenerationRecord {
            generation,
            best_ce: ce,
            best_mse: mse,
            valid_fraction: valid,
        }
    }

    fn test_record(valid: bool, ce: f64, ted: f64, nmse: f64) -> TestRecord {
        TestRecord {
            target: "x".into(),
            predicted: valid.then(|| "x".into()),
            valid,
            ce,
            ted,
            nmse,
            one_minus_r2: nmse,
        }
    }

    #[test]
    fn rows_average_symbolic_and_take_median_of_numeric() {
        let recs = [
            test_record(true, 1.0, 0.0, 0.0),
            test_record(true, 2.0, 2.0, 1.0),
            test_record(false, 3.0, 4.0, f64::INFINITY),
        ];
        let row = ReportRow::from_records("m", &recs);
        assert_eq!(row.n, 3);
        assert_eq!(row.ce_mean, 2.0);
        assert_eq!(row.ted_mean, 2.0);
        assert_eq!(row.nmse_median, 1.0);
        assert_eq!(row.one_minus_r2_median, 1.0);
        assert!((row.valid_fraction - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn endpoints_use_first_full_validity() {
        let h = vec![
            rec(0, 3.0, None, 0.5),
            rec(1, 2.0, Some(9.0), 1.0),
            rec(2, 1.0, Some(4.0), 0.875),
        ];
        let never = vec![rec(0, 3.0, None, 0.5), rec(1, 3.0, None, 0.5)];
        let e = Endpoints::from_histories(&[h, never]);
        assert_eq!(e.first_ce, vec![3.0, 3.0]);
        assert_eq!(e.final_ce, vec![1.0, 3.0]);
        assert_eq!(e.first_valid_mse, vec![9.0]);
        assert_eq!(e.final_mse, vec![4.0]);
        assert_eq!(e.ce_improved(), 1);
    }

    #[test]
    fn endpoint_tests_skip_small_samples() {
        let e = Endpoints {
            first_ce: vec![5.0, 6.0, 7.0],
            final_ce: vec![1.0, 2.0, 3.0],
            first_valid_mse: vec![1.0],
            final_mse: vec![0.5],
        };
        let (rows, skipped) = endpoint_tests(&e, Alternative::Less);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].u, 0.0);
        assert_eq!(rows[0].p_bonferroni, rows[0].p_value);
        assert_eq!(skipped.len(), 1);
        assert!(matches!(skipped[0].1, StatsError::InsufficientData(..)));
    }

    #[test]
    fn blocks_and_curves() {
        assert_eq!(block_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0, 9.0]);
        let a = vec![rec(0, 1.0, None, 0.0), rec(1, 1.0, None, 1.0)];
        let b = vec![rec(0, 1.0, None, 1.0)];
        assert_eq!(mean_curve(&[a, b], |r| r.valid_fraction), vec![0.5]);
    }
}
