//! Random equations, paired X/Y samples and corpus files.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, evaluate, tokenize, Exponent, ExprError, Expression, Primitive};
use crate::seed::derive_seed;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
const MAX_EQUATION_ATTEMPTS: usize = 1000;
const MAX_SAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("no valid equation after {0} attempts")]
    GenerationExhausted(usize),
    #[error("equation {0} has no finite sample on the x range")]
    DomainRejected(String),
    #[error("corpus record {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Sampling parameters shared by every corpus kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_len: usize,
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_cap: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_len: expr::MAX_PRIMITIVES,
            n_points: 30,
            x_min: 0.1,
            x_max: 4.0,
            y_cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    Pretrain,
    Evolve,
    Test,
    UnseenTest,
}

impl CorpusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::Pretrain => "pretrain",
            CorpusKind::Evolve => "evolve",
            CorpusKind::Test => "test",
            CorpusKind::UnseenTest => "unseen-test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            CorpusKind::Pretrain => 1,
            CorpusKind::Evolve => 2,
            CorpusKind::Test => 3,
            CorpusKind::UnseenTest => 3,
        }
    }
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretrain" => Ok(CorpusKind::Pretrain),
            "evolve" => Ok(CorpusKind::Evolve),
            "test" => Ok(CorpusKind::Test),
            "unseen-test" | "unseen" => Ok(CorpusKind::UnseenTest),
            other => Err(format!(
                "unknown corpus kind {other:?} (expected pretrain, evolve, test or unseen-test)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataEquationPair {
    pub equation: Expression,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub kind: CorpusKind,
    pub seed: u64,
    pub params: GenParams,
    pub pairs: Vec<DataEquationPair>,
}

/// Grows a random tree, leaf probability `0.3 + 0.1 * depth` capped at 0.9.
/// Operators are drawn uniformly; a `pow` exponent is 2, 3, 4 or `x` with
/// equal probability. Trees longer than `max_len` are discarded and regrown.
pub fn random_equation<R: Rng + ?Sized>(rng: &mut R, max_len: usize) -> Result<Expression, DatagenError> {
    const OPS: [Primitive; 7] = [
        Primitive::Sin,
        Primitive::Cos,
        Primitive::Exp,
        Primitive::Log,
        Primitive::Add,
        Primitive::Mul,
        Primitive::Pow,
    ];

    fn grow<R: Rng + ?Sized>(rng: &mut R, depth: usize, out: &mut Vec<Primitive>, cap: usize) {
        if out.len() > cap {
            return;
        }
        let p_leaf = (0.3 + 0.1 * depth as f64).min(0.9);
        if rng.gen::<f64>() < p_leaf {
            out.push(Primitive::X);
            return;
        }
        let op = OPS[rng.gen_range(0..OPS.len())];
        out.push(op);
        match op {
            Primitive::Pow => {
                grow(rng, depth + 1, out, cap);
                let slot = rng.gen_range(0..4);
                out.push(match slot {
                    0..=2 => Primitive::Const(Exponent::ALL[slot]),
                    _ => Primitive::X,
                });
            }
            _ => {
                for _ in 0..op.arity() {
                    grow(rng, depth + 1, out, cap);
                }
            }
        }
    }

    let mut prims = Vec::new();
    for _ in 0..MAX_EQUATION_ATTEMPTS {
        prims.clear();
        grow(rng, 0, &mut prims, max_len);
        if prims.len() <= max_len {
            if let Ok(e) = expr::parse_preorder(&prims) {
                return Ok(e);
            }
        }
    }
    Err(DatagenError::GenerationExhausted(MAX_EQUATION_ATTEMPTS))
}

/// Draws `params.n_points` x values uniformly from the x range and evaluates
/// `e` on them. A draw with any non-finite value or `|y| > y_cap` is redrawn,
/// up to 100 times.
pub fn sample_pair<R: Rng + ?Sized>(
    rng: &mut R,
    e: &Expression,
    params: &GenParams,
) -> Result<DataEquationPair, DatagenError> {
    let n = params.n_points;
    let mut xs = vec![0.0; n];
    let mut ys = vec![0.0; n];
    'draw: for _ in 0..MAX_SAMPLE_ATTEMPTS {
        for i in 0..n {
            let x = rng.gen_range(params.x_min..params.x_max);
            let r = evaluate(e, x);
            if !r.finite || r.value.abs() > params.y_cap {
                continue 'draw;
            }
            xs[i] = x;
            ys[i] = r.value;
        }
        return Ok(DataEquationPair {
            equation: e.clone(),
            xs,
            ys,
            tokens: tokenize(e),
        });
    }
    Err(DatagenError::DomainRejected(e.infix()))
}

/// Builds a reproducible corpus. `Test` and `UnseenTest` ignore `size` and
/// return the benchmark sets.
pub fn build_corpus(seed: u64, kind: CorpusKind, size: usize, params: &GenParams) -> Result<Corpus, DatagenError> {
    match kind {
        CorpusKind::Test => return Ok(benchmark_corpus(seed, params, false)),
        CorpusKind::UnseenTest => return Ok(benchmark_corpus(seed, params, true)),
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, kind.salt()));
    let mut pairs = Vec::with_capacity(size);
    while pairs.len() < size {
        let e = random_equation(&mut rng, params.max_len)?;
        match sample_pair(&mut rng, &e, params) {
            Ok(pair) => pairs.push(pair),
            Err(DatagenError::DomainRejected(_)) => continue,
            Err(err) => return Err(err),
        }
    }
    Ok(Corpus {
        kind,
        seed,
        params: params.clone(),
        pairs,
    })
}

/// Benchmark equations in pre-order: x³+x²+x, x⁴+x³+x²+x, sin(x)+sin(x+x²),
/// sin(x·eˣ), x+log(x⁴).
pub const BENCHMARK_EQUATIONS: [&str; 5] = [
    "add pow x 3 add pow x 2 x",
    "add pow x 4 add pow x 3 add pow x 2 x",
    "add sin x sin add x pow x 2",
    "sin mul x exp x",
    "add x log pow x 4",
];

/// Index of sin(x·eˣ), left out of the unseen set.
pub const SEEN_BENCHMARK: usize = 3;
pub const SAMPLES_PER_BENCHMARK: usize = 20;

pub fn benchmark_equations(unseen_only: bool) -> Vec<Expression> {
    BENCHMARK_EQUATIONS
        .iter()
        .enumerate()
        .filter(|(i, _)| !(unseen_only && *i == SEEN_BENCHMARK))
        .map(|(_, s)| Expression::from_preorder_str(s).expect("benchmark equation is in grammar"))
        .collect()
}

/// Twenty X sets per benchmark equation. The X draws are the same for the
/// full and unseen variants so their shared records agree.
pub fn benchmark_corpus(seed: u64, params: &GenParams, unseen_only: bool) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, CorpusKind::Test.salt()));
    let mut pairs = Vec::new();
    for (i, e) in benchmark_equations(false).into_iter().enumerate() {
        for _ in 0..SAMPLES_PER_BENCHMARK {
            let pair =
                sample_pair(&mut rng, &e, params).expect("benchmark equations are finite on the default x range");
            if !(unseen_only && i == SEEN_BENCHMARK) {
                pairs.push(pair);
            }
        }
    }
    Corpus {
        kind: if unseen_only {
            CorpusKind::UnseenTest
        } else {
            CorpusKind::Test
        },
        seed,
        params: params.clone(),
        pairs,
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    seed: u64,
    kind: CorpusKind,
    size: usize,
    params: GenParams,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    preorder: Vec<String>,
    tokens: Vec<u32>,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// A corpus holding only the given pairs, e.g. one benchmark equation.
    pub fn subset(&self, keep: impl Fn(&DataEquationPair) -> bool) -> Corpus {
        Corpus {
            pairs: self.pairs.iter().filter(|p| keep(p)).cloned().collect(),
            ..self.clone()
        }
    }

    /// JSON lines: one header line, then one record per pair.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), DatagenError> {
        let header = CorpusHeader {
            format: "srevo-corpus".into(),
            version: CORPUS_FORMAT_VERSION,
            seed: self.seed,
            kind: self.kind,
            size: self.pairs.len(),
            params: self.params.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for p in &self.pairs {
            let rec = PairRecord {
                preorder: p.equation.primitives().iter().map(|q| q.name().to_string()).collect(),
                tokens: p.tokens.clone(),
                xs: p.xs.clone(),
                ys: p.ys.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatagenError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a corpus and re-checks every record: tokens must match the
    /// pre-order list and every y must equal the evaluated equation.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Corpus, DatagenError> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| DatagenError::InvalidRecord {
            line: 1,
            reason: "missing header".into(),
        })??;
        let header: CorpusHeader = serde_json::from_str(&header_line)?;
        if header.version != CORPUS_FORMAT_VERSION {
            return Err(DatagenError::InvalidRecord {
                line: 1,
                reason: format!("unsupported format version {}", header.version),
            });
        }
        let mut pairs = Vec::with_capacity(header.size);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PairRecord = serde_json::from_str(&line)?;
            let pair = validate_record(rec, &header.params)
                .map_err(|reason| DatagenError::InvalidRecord { line: line_no, reason })?;
            pairs.push(pair);
        }
        if pairs.len() != header.size {
            return Err(DatagenError::InvalidRecord {
                line: 1,
                reason: format!("header size {} but {} records", header.size, pairs.len()),
            });
        }
        Ok(Corpus {
            kind: header.kind,
            seed: header.seed,
            params: header.params,
            pairs,
        })
    }

    pub fn load(path: &Path) -> Result<Corpus, DatagenError> {
        Corpus::read_jsonl(BufReader::new(File::open(path)?))
    }
}

fn validate_record(rec: PairRecord, params: &GenParams) -> Result<DataEquationPair, String> {
    let prims = rec
        .preorder
        .iter()
        .map(|s| s.parse::<Primitive>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let equation = expr::parse_preorder(&prims).map_err(|e| e.to_string())?;
    if tokenize(&equation) != rec.tokens {
        return Err("tokens do not match pre-order list".into());
    }
    if rec.xs.len() != rec.ys.len() || rec.xs.is_empty() {
        return Err(format!("{} xs but {} ys", rec.xs.len(), rec.ys.len()));
    }
    for (x, y) in rec.xs.iter().zip(&rec.ys) {
        let r = evaluate(&equation, *x);
        if !r.finite || r.value != *y || y.abs() > params.y_cap {
            return Err(format!("y = {y} does not match equation at x = {x}"));
        }
    }
    Ok(DataEquationPair {
        equation,
        xs: rec.xs,
        ys: rec.ys,
        tokens: rec.tokens,
    })
}
