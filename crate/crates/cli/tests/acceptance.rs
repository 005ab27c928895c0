//! One check per acceptance criterion. Each prints a PASS or FAIL line;
//! the test fails if any check fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srevo_cli::tables::{block_means, mean_curve, Endpoints};
use srevo_core::datagen::{build_corpus, random_equation, Corpus, CorpusKind, GenParams};
use srevo_core::evolve::{
    advance, crossover, dominates, finish, init_trial, meta_front, mutate, pareto_front, select, EvolveConfig,
    FrontPoint, Individual, SelectionMode, TrialResult,
};
use srevo_core::expr::{detokenize, simplify, tokenize, tree_edit_distance, EvalResult};
use srevo_core::metrics::{nmse, numeric_mse, one_minus_r2, symbolic_ce, FitnessRecord};
use srevo_core::model::{decode_greedy, encode, permute_points, ModelConfig, NetworkGenome};
use srevo_core::pretrain::{pretrain_pool, PretrainConfig};
use srevo_core::stats::{mann_whitney_u, Alternative};
use srevo_core::tensor::{Tape, Tensor, Var};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(f64::MIN_POSITIVE)
}

fn tokenizer_round_trip() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let e = random_equation(&mut rng, 30).map_err(|e| e.to_string())?;
        if detokenize(&tokenize(&e)).as_ref() != Ok(&e) {
            bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        bad == 0 && secs < 5.0,
        format!("1000 equations, {bad} mismatches, {secs:.3} s"),
    )
}

fn ted_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut compared, mut bad) = (0, 0);
    for _ in 0..200 {
        let a = random_equation(&mut rng, 7).map_err(|e| e.to_string())?;
        let b = random_equation(&mut rng, 7).map_err(|e| e.to_string())?;
        let (sa, sb) = (simplify(&a), simplify(&b));
        if sa.len() > 7 || sb.len() > 7 {
            continue;
        }
        compared += 1;
        if tree_edit_distance(&a, &b) != support::tai::brute_force_ted(&sa.tree(), &sb.tree()) {
            bad += 1;
        }
    }
    ensure(
        bad == 0 && compared > 0,
        format!("{compared} of 200 pairs within 7 nodes, {bad} mismatches"),
    )
}

fn metric_formulas() -> Check {
    let ev = |v: &[f64]| {
        v.iter()
            .map(|&value| EvalResult { value, finite: true })
            .collect::<Vec<_>>()
    };
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let mut fails = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if !close(got, want) {
            fails.push(format!("{name}: {got} vs {want}"));
        }
    };
    check(
        "mse",
        numeric_mse(&[0.0, 2.0], &ev(&[1.0, 3.0]))
            .map_err(|e| err(&e))?
            .unwrap_or(f64::NAN),
        1.0,
    );
    check("nmse", nmse(&[1.0], &[2.0]).map_err(|e| err(&e))?, 1.0 / (1.0 + 1e-8));
    check(
        "1-r2",
        one_minus_r2(&[0.0, 1.0, 2.0], &[0.0, 1.0, 3.0]).map_err(|e| err(&e))?,
        0.5,
    );
    check(
        "mean predictor",
        one_minus_r2(&[1.0, 2.0, 6.0], &[3.0, 3.0, 3.0]).map_err(|e| err(&e))?,
        1.0,
    );
    let target = tokenize(&simplify(&srevo_core::Expression::x()));
    let uniform = Tensor::zeros(&[target.len(), 14]);
    check(
        "uniform ce",
        symbolic_ce(&uniform, &target).map_err(|e| err(&e))?,
        14f64.ln(),
    );
    let mut peaked = Tensor::zeros(&[target.len(), 14]);
    for (i, &t) in target.iter().enumerate() {
        peaked.data_mut()[i * 14 + t as usize] = 50.0;
    }
    let ce = symbolic_ce(&peaked, &target).map_err(|e| err(&e))?;
    if !(ce > 0.0 && ce < 1e-6) {
        fails.push(format!("peaked ce {ce}"));
    }
    let bad = numeric_mse(
        &[1.0],
        &[EvalResult {
            value: f64::INFINITY,
            finite: false,
        }],
    )
    .map_err(|e| err(&e))?;
    if bad.is_some() {
        fails.push("non-finite prediction accepted".into());
    }
    ensure(
        fails.is_empty(),
        if fails.is_empty() {
            "7 hand-derived values".into()
        } else {
            fails.join("; ")
        },
    )
}

/// Scalar probe `sum(out * r)` with fixed random `r`, so every output
/// element carries a distinct weight.
fn probe(t: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = t.value(out).shape().to_vec();
    let r = Tensor::uniform(&shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = t.leaf(r);
    let p = t.mul(out, r).unwrap();
    t.sum(p).unwrap()
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut u = |shape: &[usize]| Tensor::uniform(shape, -1.0, 1.0, &mut rng);
    let (a, b, c, v) = (u(&[3, 4]), u(&[4, 5]), u(&[3, 4]), u(&[4]));
    let table = u(&[6, 4]);
    fn gc(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        support::gradcheck::op_grad_check(inputs, f)
    }
    let ops: Vec<(&str, f64)> = vec![
        (
            "matmul",
            gc(&[a.clone(), b.clone()], |t, x| {
                let o = t.matmul(x[0], x[1]).unwrap();
                probe(t, o, 1)
            }),
        ),
        (
            "add",
            gc(&[a.clone(), c.clone()], |t, x| {
                let o = t.add(x[0], x[1]).unwrap();
                probe(t, o, 2)
            }),
        ),
        (
            "mul",
            gc(&[a.clone(), c.clone()], |t, x| {
                let o = t.mul(x[0], x[1]).unwrap();
                probe(t, o, 3)
            }),
        ),
        (
            "scale",
            gc(std::slice::from_ref(&a), |t, x| {
                let o = t.scale(x[0], -1.7).unwrap();
                probe(t, o, 4)
            }),
        ),
        (
            "transpose",
            gc(std::slice::from_ref(&a), |t, x| {
                let o = t.transpose(x[0]).unwrap();
                probe(t, o, 5)
            }),
        ),
        (
            "add_bias",
            gc(&[a.clone(), v.clone()], |t, x| {
                let o = t.add_bias(x[0], x[1]).unwrap();
                probe(t, o, 6)
            }),
        ),
        (
            "linear",
            gc(&[a.clone(), b.clone()], |t, x| {
                let o = t.linear(x[0], x[1], None).unwrap();
                probe(t, o, 7)
            }),
        ),
        (
            "max_over_set",
            gc(std::slice::from_ref(&a), |t, x| {
                let o = t.max_over_set(x[0]).unwrap();
                probe(t, o, 8)
            }),
        ),
        (
            "gelu",
            gc(std::slice::from_ref(&a), |t, x| {
                let o = t.gelu(x[0]).unwrap();
                probe(t, o, 9)
            }),
        ),
        (
            "softmax",
            gc(std::slice::from_ref(&a), |t, x| {
                let o = t.softmax_rows(x[0], false).unwrap();
                probe(t, o, 10)
            }),
        ),
        (
            "causal softmax",
            gc(&[u4(&a)], |t, x| {
                let o = t.softmax_rows(x[0], true).unwrap();
                probe(t, o, 11)
            }),
        ),
        (
            "gather",
            gc(&[table], |t, x| {
                let o = t.gather(x[0], &[0, 3, 3, 5]).unwrap();
                probe(t, o, 12)
            }),
        ),
        (
            "concat_rows",
            gc(&[a.clone(), c.clone()], |t, x| {
                let o = t.concat_rows(&[x[0], x[1]]).unwrap();
                probe(t, o, 13)
            }),
        ),
        (
            "concat_cols",
            gc(&[a.clone(), c.clone()], |t, x| {
                let o = t.concat_cols(&[x[0], x[1]]).unwrap();
                probe(t, o, 14)
            }),
        ),
        (
            "slice_rows",
            gc(std::slice::from_ref(&a), |t, x| {
                let o = t.slice_rows(x[0], 1, 2).unwrap();
                probe(t, o, 15)
            }),
        ),
        (
            "slice_cols",
            gc(std::slice::from_ref(&a), |t, x| {
                let o = t.slice_cols(x[0], 1, 2).unwrap();
                probe(t, o, 16)
            }),
        ),
        (
            "cross_entropy",
            gc(&[a], |t, x| t.cross_entropy(x[0], &[1, 0, 3]).unwrap()),
        ),
    ];
    let worst_op = ops.iter().map(|o| o.1).fold(0.0, f64::max);
    let failing: Vec<&str> = ops.iter().filter(|o| o.1.is_nan() || o.1 >= 1e-4).map(|o| o.0).collect();

    let corpus = build_corpus(11, CorpusKind::Pretrain, 4, &GenParams::default()).map_err(|e| e.to_string())?;
    let pair = corpus.pairs.iter().max_by_key(|p| p.tokens.len()).unwrap();
    let g = NetworkGenome::random(ModelConfig::desk(), 17).map_err(|e| e.to_string())?;
    let worst_model = support::gradcheck::model_grad_check(&g, pair, 50, &mut ChaCha8Rng::seed_from_u64(5));
    let secs = start.elapsed().as_secs_f64();
    ensure(
        failing.is_empty() && worst_model < 1e-3 && secs < 60.0,
        format!(
            "model: 50 params, max rel err {worst_model:.2e}; {} ops, max {worst_op:.2e}{}; {secs:.1} s",
            ops.len(),
            if failing.is_empty() {
                String::new()
            } else {
                format!(", failing {failing:?}")
            }
        ),
    )
}

/// A square input for the causal softmax.
fn u4(a: &Tensor) -> Tensor {
    Tensor::new(vec![3, 3], a.data()[..9].to_vec()).unwrap()
}

fn permutation_invariance() -> Check {
    let corpus = build_corpus(5, CorpusKind::Pretrain, 100, &GenParams::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for (k, pair) in corpus.pairs.iter().enumerate() {
        let g = NetworkGenome::random(ModelConfig::desk(), 100 + k as u64).map_err(|e| e.to_string())?;
        let (px, py) = permute_points(&pair.xs, &pair.ys, &mut rng);
        let a = encode(&g, &pair.xs, &pair.ys).map_err(|e| e.to_string())?;
        let b = encode(&g, &px, &py).map_err(|e| e.to_string())?;
        for (x, y) in a.0.data().iter().zip(b.0.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(
        worst <= 1e-9,
        format!("100 triples, max embedding difference {worst:e}"),
    )
}

fn selection_rules() -> Check {
    let g = NetworkGenome::random(ModelConfig::desk(), 0).map_err(|e| e.to_string())?;
    let ind = |ce: f64, mse: Option<f64>, age: u32| Individual {
        genome: g.clone(),
        fitness: Some(FitnessRecord::new(ce, mse)),
        age,
    };
    let summary =
        |ms: &[Individual]| -> Vec<(f64, u32)> { ms.iter().map(|m| (m.fitness.as_ref().unwrap().ce, m.age)).collect() };
    let mut fails = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // (a) exactly one invalid member: CE truncation.
        let members = vec![
            ind(3.0, Some(0.1), 0),
            ind(1.0, Some(9.0), 1),
            ind(2.0, None, 2),
            ind(0.5, Some(5.0), 3),
        ];
        let (kept, mode) = select(members, 2, &mut rng);
        if mode != SelectionMode::SymbolicOnly || summary(&kept) != vec![(0.5, 3), (1.0, 1)] {
            fails.push(format!("mode A, seed {seed}"));
        }
        // (b) a dominated member always goes.
        let members = vec![ind(1.0, Some(3.0), 0), ind(2.0, Some(1.0), 0), ind(2.5, Some(3.5), 0)];
        let (kept, mode) = select(members, 2, &mut rng);
        if mode != SelectionMode::Pareto || summary(&kept) != vec![(1.0, 0), (2.0, 0)] {
            fails.push(format!("mode B, seed {seed}"));
        }
        // (c) exact tie: the younger stays, in either draw order.
        for ages in [[4, 1], [1, 4]] {
            let members = vec![ind(1.0, Some(1.0), ages[0]), ind(1.0, Some(1.0), ages[1])];
            let (kept, _) = select(members, 1, &mut rng);
            if kept[0].age != 1 {
                fails.push(format!("tie, seed {seed}"));
            }
        }
    }
    let run = |seed| {
        let members: Vec<Individual> = (0..8)
            .map(|k| ind((k * 7 % 5) as f64, Some((k * 3 % 4) as f64), k))
            .collect();
        summary(&select(members, 4, &mut ChaCha8Rng::seed_from_u64(seed)).0)
    };
    if run(9) != run(9) {
        fails.push("not deterministic".into());
    }
    ensure(
        fails.is_empty(),
        if fails.is_empty() {
            "fixtures over 20 seeds".into()
        } else {
            fails.join("; ")
        },
    )
}

fn constant_like(g: &NetworkGenome, v: f64) -> NetworkGenome {
    let mut out = g.clone();
    for k in 0..g.layers().len() {
        let w = &g.layers()[k].weight;
        out.replace_weight(k, Tensor::new(w.shape().to_vec(), vec![v; w.len()]).unwrap())
            .unwrap();
    }
    out
}

/// Mutation and crossover on fixtures. Bias freeze over a desk trial is
/// checked on the shared experiment.
fn variation_operators(bias_frozen: Result<usize, String>) -> Check {
    let g = NetworkGenome::random(ModelConfig::desk(), 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fails = Vec::new();
    let m = mutate(&g, &mut rng, 1.0, 0.01);
    let mut max_delta: f64 = 0.0;
    for (a, b) in m.layers().iter().zip(g.layers()) {
        if a.weight == b.weight {
            fails.push(format!("layer {} untouched", a.name));
        }
        if a.bias != b.bias {
            fails.push(format!("bias of {} changed", a.name));
        }
        for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
            max_delta = max_delta.max((x - y).abs());
        }
    }
    if max_delta > 0.01 {
        fails.push(format!("weight moved {max_delta}"));
    }
    let (p, q) = (constant_like(&g, 1.0), constant_like(&g, 2.0));
    let mut counted = 0;
    for rate in [1.0, 0.5] {
        let child = crossover(&p, &q, &mut rng, rate).map_err(|e| e.to_string())?;
        for (a, c) in p.layers().iter().zip(child.layers()) {
            let changed = a
                .weight
                .data()
                .iter()
                .zip(c.weight.data())
                .filter(|(x, y)| x != y)
                .count();
            let ok = changed == a.weight.len() / 2 || (rate < 1.0 && changed == 0);
            if !ok {
                fails.push(format!(
                    "crossover changed {changed} of {} in {}",
                    a.weight.len(),
                    a.name
                ));
            }
            counted += usize::from(changed > 0);
        }
    }
    match bias_frozen {
        Ok(n) => {
            if fails.is_empty() {
                return Ok(format!(
                    "mutation max |dw| {max_delta:.4} over {} layers; {counted} crossed layers at floor(n/2); biases frozen in {n} member checks",
                    g.layers().len()
                ));
            }
        }
        Err(e) => fails.push(e),
    }
    Err(fails.join("; "))
}

struct DeskRun {
    pool: Vec<NetworkGenome>,
    results: Vec<TrialResult>,
    bias_checks: Result<usize, String>,
    secs: f64,
}

fn biases(g: &NetworkGenome) -> Vec<&Option<Arc<Tensor>>> {
    g.layers().iter().map(|l| &l.bias).collect()
}

/// Pool of 3 desk models, then 10 desk trials on one 20-pair corpus.
fn desk_run() -> Result<DeskRun, String> {
    let start = Instant::now();
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let pcfg = PretrainConfig::desk();
    let pcorpus =
        build_corpus(0, CorpusKind::Pretrain, pcfg.corpus_size, &GenParams::default()).map_err(|e| err(&e))?;
    let dir = tempfile::tempdir().map_err(|e| err(&e))?;
    let (_, pool) = pretrain_pool(&pcfg, &ModelConfig::desk(), &pcorpus, dir.path()).map_err(|e| err(&e))?;
    let corpus: Corpus = build_corpus(0, CorpusKind::Evolve, 20, &GenParams::default()).map_err(|e| err(&e))?;
    let cfg = EvolveConfig::desk();
    let pool_biases: Vec<Vec<&Option<Arc<Tensor>>>> = pool.iter().map(biases).collect();
    let mut checks = 0usize;
    let mut moved = None;
    let mut results = Vec::new();
    for t in 0..10 {
        let mut state = init_trial(&cfg, &pool, t).map_err(|e| err(&e))?;
        advance(&mut state, &corpus, &cfg, |s| {
            for m in &s.population.members {
                checks += 1;
                // Crossover copies layers, so each bias must match some pool member's.
                let frozen = biases(&m.genome)
                    .iter()
                    .enumerate()
                    .all(|(k, b)| pool_biases.iter().any(|p| p[k] == *b));
                if !frozen && moved.is_none() {
                    moved = Some(format!(
                        "bias moved in trial {t} at generation {}",
                        s.population.generation
                    ));
                }
            }
            Ok(())
        })
        .map_err(|e| err(&e))?;
        results.push(finish(state, &corpus));
    }
    Ok(DeskRun {
        pool,
        results,
        bias_checks: moved.map_or(Ok(checks), Err),
        secs: start.elapsed().as_secs_f64(),
    })
}

fn histories(run: &DeskRun) -> Vec<Vec<srevo_core::evolve::GenerationRecord>> {
    run.results.iter().map(|r| r.history.clone()).collect()
}

fn evolution_improves(run: &DeskRun) -> Check {
    let e = Endpoints::from_histories(&histories(run));
    let ce = mann_whitney_u(&e.final_ce, &e.first_ce, Alternative::Less).map_err(|e| e.to_string())?;
    let mse = mann_whitney_u(&e.final_mse, &e.first_valid_mse, Alternative::Less).map_err(|e| e.to_string())?;
    let improved = e.ce_improved();
    ensure(
        improved >= 9 && ce.p_value < 0.05 && mse.p_value < 0.05 && run.secs < 1800.0,
        format!(
            "CE lower in {improved}/10 trials, p = {:.2e}; MSE p = {:.2e} over {} trials; {:.0} s",
            ce.p_value,
            mse.p_value,
            e.final_mse.len(),
            run.secs
        ),
    )
}

fn valid_emergence(run: &DeskRun) -> Check {
    let h = histories(run);
    let blocks = block_means(&mean_curve(&h, |r| r.valid_fraction), 10);
    let drops: Vec<(usize, f64)> = blocks
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0])
        .map(|(i, w)| ((i + 1) * 10, w[0] - w[1]))
        .collect();
    let reached = h
        .iter()
        .filter(|h| h.iter().take(100).any(|r| r.valid_fraction == 1.0))
        .count();
    let curve: Vec<String> = blocks.iter().map(|b| format!("{b:.3}")).collect();
    ensure(
        drops.is_empty() && reached >= 8,
        format!(
            "{reached}/10 trials fully valid within 100 generations; block means [{}]; drops {drops:?}",
            curve.join(" ")
        ),
    )
}

fn pareto_machinery(run: &DeskRun) -> Check {
    let mut fails = Vec::new();
    for r in &run.results {
        let points: Vec<FrontPoint> = r
            .members
            .iter()
            .enumerate()
            .filter_map(|(index, m)| {
                let (ce, mse) = m.fitness.as_ref()?.objectives()?;
                Some(FrontPoint {
                    ce,
                    mse,
                    trial: r.trial,
                    age: m.age,
                    index,
                })
            })
            .collect();
        let front = pareto_front(&points);
        for p in &points {
            let kept = front.points.contains(p);
            let beaten = points.iter().any(|q| dominates(q.objectives(), p.objectives()));
            if kept == beaten {
                fails.push(format!("trial {}: front membership wrong", r.trial));
            }
        }
        if front != r.front {
            fails.push(format!("trial {}: stored front differs", r.trial));
        }
    }
    let fronts: Vec<_> = run.results.iter().map(|r| r.front.clone()).collect();
    let meta = meta_front(&fronts);
    for p in &meta.points {
        if meta.points.iter().any(|q| dominates(q.objectives(), p.objectives())) {
            fails.push("meta front has a dominated point".into());
        }
    }
    let total: usize = fronts.iter().map(|f| f.points.len()).sum();
    for p in fronts.iter().flat_map(|f| &f.points) {
        let covered = meta
            .points
            .iter()
            .any(|q| q.objectives() == p.objectives() || dominates(q.objectives(), p.objectives()));
        if !covered {
            fails.push(format!("front point {:?} not covered", p.objectives()));
        }
    }
    ensure(
        fails.is_empty() && total > 0,
        if fails.is_empty() {
            format!("{total} per-trial front points, meta front of {}", meta.points.len())
        } else {
            fails.join("; ")
        },
    )
}

fn inference_speed(run: &DeskRun) -> Check {
    let corpus = build_corpus(0, CorpusKind::Test, 0, &GenParams::default()).map_err(|e| e.to_string())?;
    let g = &run.pool[0];
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    for pair in &corpus.pairs {
        let t0 = Instant::now();
        let _ = decode_greedy(g, &pair.xs, &pair.ys, g.config().max_seq - 1);
        let s = t0.elapsed().as_secs_f64();
        worst = worst.max(s);
        total += s;
    }
    let n = corpus.len();
    ensure(
        worst <= 0.5 && n == 100,
        format!("{n} equations, mean {:.4} s, max {worst:.4} s", total / n as f64),
    )
}

const TINY: &str = "trials = 3\nevolve_corpus_size = 4\ncheckpoint_every = 3\n\
[pretrain]\nepochs = 2\ncorpus_size = 24\nn_models = 2\n[evolve]\ngenerations = 7\n";

fn srevo(out: &Path, config: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_srevo"))
        .args(args)
        .args(["--seed", "7", "--threads", "1", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("srevo {args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn pipeline(out: &Path, config: &Path) -> Result<(), String> {
    for kind in ["pretrain", "evolve", "test"] {
        srevo(out, config, &["gen-data", "--kind", kind])?;
    }
    for verb in ["pretrain", "evolve", "test", "report"] {
        srevo(out, config, &[verb])?;
    }
    Ok(())
}

/// Relative paths of every file under `dir` except wall-clock records.
fn outputs(dir: &Path) -> Vec<std::path::PathBuf> {
    fn walk(dir: &Path, root: &Path, acc: &mut Vec<std::path::PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, acc);
            } else {
                let name = p.file_name().unwrap().to_string_lossy();
                if name != srevo_cli::commands::TIMING_FILE && name != srevo_cli::commands::INFERENCE_TIME_FILE {
                    acc.push(p.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc);
    acc.sort();
    acc
}

fn reproducibility() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("tiny.toml");
    std::fs::write(&config, TINY).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a, &config)?;
    pipeline(&b, &config)?;
    let (fa, fb) = (outputs(&a), outputs(&b));
    if fa != fb {
        return Err("runs wrote different file sets".into());
    }
    let differ: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    ensure(
        differ.is_empty() && fa.len() > 20,
        format!(
            "{} files compared across two full pipelines, differing: {differ:?}",
            fa.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let run = desk_run();
    let with_run =
        |f: fn(&DeskRun) -> Check| -> Check { run.as_ref().map_err(|e| format!("desk run failed: {e}")).and_then(f) };
    let bias = run.as_ref().map_err(|e| e.clone()).and_then(|r| r.bias_checks.clone());
    let results: Vec<(u32, &str, Check)> = vec![
        (1, "tokenizer round-trip", tokenizer_round_trip()),
        (2, "TED oracle equivalence", ted_oracle()),
        (3, "metric formula conformance", metric_formulas()),
        (4, "gradient correctness", gradients()),
        (5, "encoder permutation invariance", permutation_invariance()),
        (6, "selection rules", selection_rules()),
        (7, "variation operators", variation_operators(bias)),
        (
            8,
            "desk evolution improves both objectives",
            with_run(evolution_improves),
        ),
        (9, "valid-equation emergence", with_run(valid_emergence)),
        (10, "Pareto machinery", with_run(pareto_machinery)),
        (11, "inference speed", with_run(inference_speed)),
        (12, "reproducibility", reproducibility()),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (n, name, r) in &results {
        let (tag, detail) = match r {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(*n);
                ("FAIL", d)
            }
        };
        writeln!(out, "criterion {n:>2} {tag}: {name}: {detail}").unwrap();
    }
    out.flush().unwrap();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
