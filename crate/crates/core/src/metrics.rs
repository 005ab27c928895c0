//! Symbolic and numeric losses used for selection and testing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Corpus, DataEquationPair};
use crate::expr::{self, evaluate, EvalResult, ExprError, Expression};
use crate::model::{self, NetworkGenome};
use crate::tensor::{self, Tensor, TensorError};

/// Small term keeping the NMSE denominator away from zero.
pub const NMSE_EPS: f64 = 1e-8;

/// CE assigned when a forward pass cannot be completed (non-finite
/// activations). Keeps the record finite while ranking it last.
pub const FAILED_CE: f64 = f64::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("target values have zero variance")]
    ZeroVariance,
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Fitness of one network on one corpus. `mse` is present exactly when
/// every predicted equation could be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub ce: f64,
    pub mse: Option<f64>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_minus_r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ted: Option<f64>,
}

impl FitnessRecord {
    pub fn new(ce: f64, mse: Option<f64>) -> FitnessRecord {
        FitnessRecord {
            ce,
            valid: mse.is_some(),
            mse,
            nmse: None,
            one_minus_r2: None,
            ted: None,
        }
    }

    /// `(ce, mse)` for valid records.
    pub fn objectives(&self) -> Option<(f64, f64)> {
        self.mse.map(|m| (self.ce, m))
    }
}

/// Teacher-forced token cross-entropy; the same routine the training tape
/// uses for its loss value.
pub fn symbolic_ce(logits: &Tensor, target: &[u32]) -> Result<f64, MetricsError> {
    if logits.rows() != target.len() {
        return Err(MetricsError::LengthMismatch(logits.rows(), target.len()));
    }
    Ok(tensor::cross_entropy(logits, target)?)
}

/// Mean squared error; `None` if any prediction is non-finite or the mean
/// overflows.
pub fn numeric_mse(ys: &[f64], yhat: &[EvalResult]) -> Result<Option<f64>, MetricsError> {
    if ys.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(ys.len(), yhat.len()));
    }
    if ys.is_empty() {
        return Err(MetricsError::TooFewSamples(1));
    }
    if yhat.iter().any(|r| !r.finite) {
        return Ok(None);
    }
    let sum: f64 = ys.iter().zip(yhat).map(|(y, r)| (y - r.value).powi(2)).sum();
    let mse = sum / ys.len() as f64;
    Ok(mse.is_finite().then_some(mse))
}

/// Mean of `(y - ŷ)² / |y + ε|`.
pub fn nmse(ys: &[f64], yhats: &[f64]) -> Result<f64, MetricsError> {
    if ys.len() != yhats.len() {
        return Err(MetricsError::LengthMismatch(ys.len(), yhats.len()));
    }
    if ys.is_empty() {
        return Err(MetricsError::TooFewSamples(1));
    }
    let sum: f64 = ys
        .iter()
        .zip(yhats)
        .map(|(y, yh)| (y - yh).powi(2) / (y + NMSE_EPS).abs())
        .sum();
    Ok(sum / ys.len() as f64)
}

/// `1 - R²` = residual sum of squares over total sum of squares.
pub fn one_minus_r2(ys: &[f64], yhats: &[f64]) -> Result<f64, MetricsError> {
    if ys.len() != yhats.len() {
        return Err(MetricsError::LengthMismatch(ys.len(), yhats.len()));
    }
    if ys.len() < 2 {
        return Err(MetricsError::TooFewSamples(2));
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let ss_res: f64 = ys.iter().zip(yhats).map(|(y, yh)| (y - yh).powi(2)).sum();
    Ok(ss_res / ss_tot)
}

/// Everything computed for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub ce: f64,
    pub tokens: Vec<u32>,
    pub prediction: Result<Expression, ExprError>,
    /// Predicted values, present when the prediction parses.
    pub yhat: Option<Vec<EvalResult>>,
    pub mse: Option<f64>,
}

impl PairOutcome {
    pub fn is_valid(&self) -> bool {
        self.mse.is_some()
    }
}

/// Teacher-forced CE on the target, then greedy decode and numeric check.
pub fn evaluate_pair(g: &NetworkGenome, pair: &DataEquationPair) -> PairOutcome {
    let ce = match model::forward_logits(g, &pair.xs, &pair.ys, &pair.tokens) {
        Ok(logits) => symbolic_ce(&logits, &pair.tokens).unwrap_or(FAILED_CE),
        Err(_) => FAILED_CE,
    };
    let tokens = model::decode_greedy(g, &pair.xs, &pair.ys, g.config().max_seq - 1).unwrap_or_default();
    let prediction = if tokens.is_empty() {
        Err(ExprError::IncompleteTree { missing: 1 })
    } else {
        expr::detokenize(&tokens)
    };
    let (yhat, mse) = match &prediction {
        Ok(e) => {
            let yhat: Vec<EvalResult> = pair.xs.iter().map(|&x| evaluate(e, x)).collect();
            let mse = numeric_mse(&pair.ys, &yhat).ok().flatten();
            (Some(yhat), mse)
        }
        Err(_) => (None, None),
    };
    PairOutcome {
        ce,
        tokens,
        prediction,
        yhat,
        mse,
    }
}

/// Mean CE and mean MSE over the corpus. One invalid pair makes the whole
/// record invalid.
pub fn evaluate_individual(g: &NetworkGenome, corpus: &Corpus) -> FitnessRecord {
    let n = corpus.pairs.len().max(1) as f64;
    let mut ce_sum = 0.0;
    let mut mse_sum = Some(0.0);
    let mut failed = false;
    for pair in &corpus.pairs {
        let out = evaluate_pair(g, pair);
        if out.ce == FAILED_CE {
            failed = true;
        } else {
            ce_sum += out.ce;
        }
        mse_sum = match (mse_sum, out.mse) {
            (Some(s), Some(m)) => Some(s + m),
            _ => None,
        };
    }
    let ce = if failed { FAILED_CE } else { ce_sum / n };
    let mse = mse_sum.map(|s| s / n).filter(|m| m.is_finite());
    FitnessRecord::new(ce, mse)
}

/// Per-pair test scores. Predictions that do not parse or evaluate get
/// infinite NMSE and 1-R², and a TED equal to the canonical target size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestRecord {
    pub target: String,
    pub predicted: Option<String>,
    pub valid: bool,
    pub ce: f64,
    pub ted: f64,
    pub nmse: f64,
    pub one_minus_r2: f64,
}

pub fn score_test_pair(g: &NetworkGenome, pair: &DataEquationPair) -> TestRecord {
    let out = evaluate_pair(g, pair);
    score_outcome(pair, &out)
}

pub fn score_outcome(pair: &DataEquationPair, out: &PairOutcome) -> TestRecord {
    let target_size = expr::simplify(&pair.equation).len() as f64;
    let (ted, predicted) = match &out.prediction {
        Ok(p) => (expr::tree_edit_distance(p, &pair.equation) as f64, Some(p.infix())),
        Err(_) => (target_size, None),
    };
    let (nmse_v, r2) = match (&out.yhat, out.is_valid()) {
        (Some(yhat), true) => {
            let values: Vec<f64> = yhat.iter().map(|r| r.value).collect();
            (
                nmse(&pair.ys, &values).unwrap_or(f64::INFINITY),
                one_minus_r2(&pair.ys, &values).unwrap_or(f64::INFINITY),
            )
        }
        _ => (f64::INFINITY, f64::INFINITY),
    };
    TestRecord {
        target: pair.equation.infix(),
        predicted,
        valid: out.is_valid(),
        ce: out.ce,
        ted,
        nmse: nmse_v,
        one_minus_r2: r2,
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a == b {
            a
        } else {
            a / 2.0 + b / 2.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{benchmark_corpus, GenParams};
    use crate::expr::{tokenize, VOCAB_SIZE};
    use crate::model::ModelConfig;

    fn ok(vals: &[f64]) -> Vec<EvalResult> {
        vals.iter().map(|&value| EvalResult { value, finite: true }).collect()
    }

    #[test]
    fn mse_values() {
        assert_eq!(numeric_mse(&[1.0, 2.0], &ok(&[1.0, 2.0])).unwrap(), Some(0.0));
        assert_eq!(numeric_mse(&[0.0, 2.0], &ok(&[1.0, 3.0])).unwrap(), Some(1.0));
        let mut bad = ok(&[1.0, 3.0]);
        bad[1].finite = false;
        assert_eq!(numeric_mse(&[0.0, 2.0], &bad).unwrap(), None);
        assert!(numeric_mse(&[0.0], &bad).is_err());
    }

    #[test]
    fn nmse_values() {
        assert_eq!(nmse(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        let v = nmse(&[1.0], &[2.0]).unwrap();
        assert!((v - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn r2_values() {
        let ys = [0.0, 1.0, 2.0];
        assert_eq!(one_minus_r2(&ys, &ys).unwrap(), 0.0);
        assert!((one_minus_r2(&ys, &[1.0, 1.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((one_minus_r2(&ys, &[0.0, 1.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(one_minus_r2(&[2.0, 2.0], &[1.0, 2.0]), Err(MetricsError::ZeroVariance));
        assert_eq!(one_minus_r2(&[2.0], &[1.0]), Err(MetricsError::TooFewSamples(2)));
    }

    #[test]
    fn ce_values() {
        let uniform = Tensor::zeros(&[4, VOCAB_SIZE]);
        let ce = symbolic_ce(&uniform, &[1, 3, 10, 2]).unwrap();
        assert!((ce - 14f64.ln()).abs() < 1e-12);
        assert!(matches!(
            symbolic_ce(&uniform, &[1, 2]),
            Err(MetricsError::LengthMismatch(4, 2))
        ));
    }

    #[test]
    fn oracle_genome_is_perfect_on_its_equation() {
        let corpus = benchmark_corpus(3, &GenParams::default(), true);
        let target = corpus.pairs[0].equation.clone();
        let single = corpus.subset(|p| p.equation == target);
        let g = NetworkGenome::fixed_output(ModelConfig::desk(), &tokenize(&target)).unwrap();
        let fit = evaluate_individual(&g, &single);
        assert!(fit.valid);
        assert_eq!(fit.mse, Some(0.0));
        assert!(fit.ce >= 0.0 && fit.ce < 1e-6);
        let rec = score_test_pair(&g, &single.pairs[0]);
        assert_eq!((rec.ted, rec.nmse, rec.one_minus_r2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn garbage_genome_is_invalid() {
        // START add END never parses.
        let g = NetworkGenome::fixed_output(ModelConfig::desk(), &[1, 3, 2]).unwrap();
        let corpus = benchmark_corpus(3, &GenParams::default(), false);
        let fit = evaluate_individual(&g, &corpus.subset(|p| p.xs[0] < 1.0));
        assert!(!fit.valid);
        assert_eq!(fit.mse, None);
        assert!(fit.ce > 0.0);
        let rec = score_test_pair(&g, &corpus.pairs[0]);
        assert!(!rec.valid);
        assert_eq!(rec.ted, 9.0);
        assert!(rec.nmse.is_infinite());
    }

    #[test]
    fn evaluation_is_repeatable() {
        let g = NetworkGenome::random(ModelConfig::desk(), 9).unwrap();
        let corpus = benchmark_corpus(1, &GenParams::default(), false).subset(|p| p.xs[1] > 2.0);
        assert_eq!(evaluate_individual(&g, &corpus), evaluate_individual(&g, &corpus));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[0.0, f64::INFINITY, 0.0]), 0.0);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
    }
}
