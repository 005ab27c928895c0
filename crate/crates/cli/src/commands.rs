//! The five verbs. Each writes its outputs and a manifest under the run
//! directory; wall-clock times go to separate `timing` files so every
//! other file is reproducible.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use srevo_core::datagen::{build_corpus, Corpus, CorpusKind};
use srevo_core::evolve::{
    self, advance, evaluate_population, finish, init_trial, meta_front, trial_seed, GenerationRecord, ParetoFront,
    TrialState, TRIAL_STATE_FILE,
};
use srevo_core::metrics::{score_test_pair, TestRecord};
use srevo_core::model::{self, NetworkGenome};
use srevo_core::pretrain::{pretrain_pool, PoolManifest, POOL_MANIFEST};
use srevo_core::stats::Alternative;

use crate::config::RunConfig;
use crate::tables::{self, Endpoints, ReportRow, ReportTable};

pub const MANIFEST_VERSION: u32 = 1;
pub const TIMING_FILE: &str = "timing.json";
/// Header of the per-equation test records.
pub const RECORDS_HEADER: &str = "method,index,target,predicted,valid,ce,ted,nmse,one_minus_r2";
pub const INFERENCE_TIME_FILE: &str = "inference_time.csv";
pub const INFERENCE_TIME_HEADER: &str = "method,index,decode_seconds";
/// Width of the generation blocks in `valid_fraction_blocks.csv`.
pub const BLOCK: usize = 10;

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn corpus(&self, kind: CorpusKind) -> PathBuf {
        self.0.join(format!("corpus-{kind}.jsonl"))
    }

    pub fn pool(&self) -> PathBuf {
        self.0.join("pool")
    }

    pub fn trials(&self) -> PathBuf {
        self.0.join("trials")
    }

    pub fn trial(&self, t: usize) -> PathBuf {
        self.trials().join(format!("trial-{t:03}"))
    }

    pub fn test(&self, kind: CorpusKind) -> PathBuf {
        self.0.join(format!("test-{kind}"))
    }

    pub fn report(&self) -> PathBuf {
        self.0.join("report")
    }
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    format_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    #[serde(flatten)]
    details: T,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest<T: Serialize>(path: &Path, command: &str, cfg: &RunConfig, details: T) -> Result<()> {
    let m = Manifest {
        format_version: MANIFEST_VERSION,
        command,
        config: cfg,
        details,
    };
    write_json(path, &m)
}

fn write_timing(dir: &Path, command: &str, start: Instant) -> Result<()> {
    #[derive(Serialize)]
    struct Timing<'a> {
        command: &'a str,
        wall_seconds: f64,
        threads: usize,
    }
    write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            command,
            wall_seconds: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    )
}

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn corpus_size(cfg: &RunConfig, kind: CorpusKind) -> usize {
    match kind {
        CorpusKind::Pretrain => cfg.pretrain.corpus_size,
        CorpusKind::Evolve => cfg.evolve_corpus_size,
        CorpusKind::Test | CorpusKind::UnseenTest => 0,
    }
}

/// Writes the corpus of `kind` and its manifest.
pub fn gen_data(cfg: &RunConfig, run: &RunDir, kind: CorpusKind) -> Result<Corpus> {
    std::fs::create_dir_all(&run.0)?;
    let corpus = build_corpus(cfg.seed, kind, corpus_size(cfg, kind), &cfg.data)?;
    let path = run.corpus(kind);
    corpus.save(&path)?;
    #[derive(Serialize)]
    struct Details {
        kind: CorpusKind,
        seed: u64,
        size: usize,
        file: String,
    }
    let file = path.file_name().unwrap().to_string_lossy().into_owned();
    let details = Details {
        kind,
        seed: cfg.seed,
        size: corpus.len(),
        file,
    };
    write_manifest(
        &run.0.join(format!("corpus-{kind}.manifest.json")),
        "gen-data",
        cfg,
        details,
    )?;
    eprintln!("wrote {} pairs to {}", corpus.len(), path.display());
    Ok(corpus)
}

/// Loads the run's corpus of `kind`, generating it if it is missing.
pub fn ensure_corpus(cfg: &RunConfig, run: &RunDir, kind: CorpusKind) -> Result<Corpus> {
    let path = run.corpus(kind);
    if !path.exists() {
        return gen_data(cfg, run, kind);
    }
    let c = Corpus::load(&path).with_context(|| format!("reading {}", path.display()))?;
    let size = corpus_size(cfg, kind);
    if c.seed != cfg.seed || c.params != cfg.data || (size > 0 && c.len() != size) {
        bail!(
            "{} was generated with another seed, size or data settings; use a fresh --out",
            path.display()
        );
    }
    Ok(c)
}

pub fn pretrain(cfg: &RunConfig, run: &RunDir) -> Result<PoolManifest> {
    let start = Instant::now();
    let corpus = ensure_corpus(cfg, run, CorpusKind::Pretrain)?;
    let dir = run.pool();
    let (manifest, _) = pretrain_pool(&cfg.pretrain, &cfg.model, &corpus, &dir)?;
    #[derive(Serialize)]
    struct Details {
        pool_manifest: String,
        requested: usize,
        survivors: usize,
        checkpoints: Vec<String>,
    }
    let details = Details {
        pool_manifest: format!("pool/{POOL_MANIFEST}"),
        requested: cfg.pretrain.n_models,
        survivors: manifest.survivors(),
        checkpoints: manifest.entries.iter().filter_map(|e| e.checkpoint.clone()).collect(),
    };
    write_manifest(&run.0.join("pretrain.manifest.json"), "pretrain", cfg, details)?;
    write_timing(&dir, "pretrain", start)?;
    for e in &manifest.entries {
        match e.final_ce {
            Some(ce) => eprintln!("model {}: final training CE {ce:.4}", e.index),
            None => eprintln!("model {}: diverged", e.index),
        }
    }
    if manifest.survivors() == 0 {
        bail!("every pretraining run diverged");
    }
    Ok(manifest)
}

fn load_pool(run: &RunDir) -> Result<(PoolManifest, Vec<NetworkGenome>)> {
    let dir = run.pool();
    let manifest = PoolManifest::read(&dir)
        .with_context(|| format!("no pool at {}; run `srevo pretrain` first", dir.display()))?;
    let genomes = manifest.load_genomes(&dir)?;
    if genomes.is_empty() {
        bail!("the pool at {} has no surviving models", dir.display());
    }
    Ok((manifest, genomes))
}

/// Runs or resumes one trial. Returns false if it was already complete.
fn run_trial_dir(cfg: &RunConfig, corpus: &Corpus, pool: &[NetworkGenome], t: usize, dir: &Path) -> Result<bool> {
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        return Ok(false);
    }
    let start = Instant::now();
    let state_dir = dir.join("state");
    let ecfg = &cfg.evolve;
    let mut state = if state_dir.join(TRIAL_STATE_FILE).exists() {
        let s = TrialState::load(&state_dir)?;
        if s.trial != t || s.trial_seed != trial_seed(ecfg.seed, t) || s.population.size != ecfg.pop_size {
            bail!("{} belongs to another configuration", state_dir.display());
        }
        eprintln!("trial {t}: resuming at generation {}", s.population.generation);
        s
    } else {
        init_trial(ecfg, pool, t)?
    };
    let resumed_from = state.population.generation;
    advance(&mut state, corpus, ecfg, |s| {
        let g = s.population.generation;
        if g % cfg.checkpoint_every == 0 && g < ecfg.generations {
            s.save(&state_dir)?;
        }
        Ok(())
    })?;

    let (trial, seed, generation) = (state.trial, state.trial_seed, state.population.generation);
    let (parent_count, size) = (state.population.parent_count, state.population.size);
    let result = finish(state, corpus);
    // The final state keeps the evaluated population for `test`.
    let final_state = TrialState {
        trial,
        trial_seed: seed,
        population: evolve::Population {
            members: result.members.clone(),
            generation,
            parent_count,
            size,
        },
        history: result.history.clone(),
    };
    final_state.save(&state_dir)?;
    evolve::write_history_csv(&dir.join("history.csv"), &result.history)?;
    evolve::write_front_csv(&dir.join("front.csv"), &result.front)?;

    #[derive(Serialize)]
    struct Details {
        trial: usize,
        trial_seed: u64,
        corpus_seed: u64,
        corpus_size: usize,
        final_best_ce: Option<f64>,
        final_best_mse: Option<f64>,
        front_size: usize,
    }
    let last = result.history.last();
    let details = Details {
        trial,
        trial_seed: seed,
        corpus_seed: corpus.seed,
        corpus_size: corpus.len(),
        final_best_ce: last.map(|r| r.best_ce),
        final_best_mse: last.and_then(|r| r.best_mse),
        front_size: result.front.points.len(),
    };
    #[derive(Serialize)]
    struct Timing {
        wall_seconds: f64,
        resumed_from_generation: usize,
    }
    write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
            resumed_from_generation: resumed_from,
        },
    )?;
    write_manifest(&manifest_path, "evolve", cfg, details)?;
    let best = last.map_or(f64::NAN, |r| r.best_ce);
    eprintln!("trial {t}: done, final best CE {best:.4}");
    Ok(true)
}

pub fn evolve(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let start = Instant::now();
    let (pool_manifest, pool) = load_pool(run)?;
    let corpus = ensure_corpus(cfg, run, CorpusKind::Evolve)?;
    std::fs::create_dir_all(run.trials())?;
    let ran: Vec<bool> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let dir = run.trial(t);
            std::fs::create_dir_all(&dir)?;
            run_trial_dir(cfg, &corpus, &pool, t, &dir).with_context(|| format!("trial {t}"))
        })
        .collect::<Result<_>>()?;
    #[derive(Serialize)]
    struct Details {
        trials: Vec<String>,
        trial_seeds: Vec<u64>,
        pool_seeds: Vec<u64>,
    }
    let details = Details {
        trials: (0..cfg.trials).map(|t| format!("trials/trial-{t:03}")).collect(),
        trial_seeds: (0..cfg.trials).map(|t| trial_seed(cfg.evolve.seed, t)).collect(),
        pool_seeds: pool_manifest
            .entries
            .iter()
            .filter(|e| !e.diverged)
            .map(|e| e.seed)
            .collect(),
    };
    write_manifest(&run.trials().join("manifest.json"), "evolve", cfg, details)?;
    write_timing(&run.trials(), "evolve", start)?;
    let skipped = ran.iter().filter(|r| !**r).count();
    if skipped > 0 {
        eprintln!("{skipped} trial(s) were already complete");
    }
    Ok(())
}

/// Completed trial directories, in trial order.
fn completed_trials(run: &RunDir) -> Result<Vec<(String, PathBuf)>> {
    let dir = run.trials();
    let mut found = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            if name.starts_with("trial-") && path.join("manifest.json").exists() {
                found.push((name, path));
            }
        }
    }
    found.sort();
    Ok(found)
}

/// The final member of a trial with the lowest CE, preferring valid ones.
fn trial_champion(dir: &Path, corpus: &Corpus) -> Result<NetworkGenome> {
    let mut state = TrialState::load(&dir.join("state"))?;
    evaluate_population(&mut state.population.members, corpus);
    let key = |m: &evolve::Individual| {
        let f = m.fitness.as_ref().expect("evaluated");
        (!f.valid, f.ce)
    };
    state
        .population
        .members
        .into_iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).expect("CE is never NaN"))
        .map(|m| m.genome)
        .ok_or_else(|| anyhow!("{} has an empty population", dir.display()))
}

/// Networks to test: explicit checkpoints, else each trial's champion,
/// else the pretrained pool.
fn test_subjects(cfg: &RunConfig, run: &RunDir, checkpoints: &[PathBuf]) -> Result<Vec<(String, NetworkGenome)>> {
    if !checkpoints.is_empty() {
        return checkpoints
            .iter()
            .map(|p| {
                let g = NetworkGenome::load(p).with_context(|| format!("loading {}", p.display()))?;
                let label = p
                    .file_stem()
                    .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                Ok((label, g))
            })
            .collect();
    }
    let trials = completed_trials(run)?;
    if !trials.is_empty() {
        let corpus = ensure_corpus(cfg, run, CorpusKind::Evolve)?;
        return trials
            .into_iter()
            .map(|(name, dir)| Ok((name, trial_champion(&dir, &corpus)?)))
            .collect();
    }
    let (manifest, genomes) = load_pool(run)?;
    let names = manifest.entries.iter().filter_map(|e| e.checkpoint.as_ref());
    Ok(names
        .map(|c| c.trim_end_matches(".ckpt").to_string())
        .zip(genomes)
        .collect())
}

#[derive(Serialize)]
struct RecordRow<'a> {
    method: &'a str,
    index: usize,
    target: &'a str,
    predicted: Option<&'a str>,
    valid: bool,
    ce: f64,
    ted: f64,
    nmse: f64,
    one_minus_r2: f64,
}

/// Scores every subject on the benchmark corpus of `kind`.
pub fn test(cfg: &RunConfig, run: &RunDir, kind: CorpusKind, checkpoints: &[PathBuf]) -> Result<ReportTable> {
    if !matches!(kind, CorpusKind::Test | CorpusKind::UnseenTest) {
        bail!("test runs on the `test` or `unseen-test` corpus, not `{kind}`");
    }
    let start = Instant::now();
    let corpus = ensure_corpus(cfg, run, kind)?;
    let subjects = test_subjects(cfg, run, checkpoints)?;
    let out = run.test(kind);
    std::fs::create_dir_all(&out)?;

    let mut table = ReportTable::default();
    let mut all: Vec<(String, Vec<TestRecord>, Vec<f64>)> = Vec::new();
    for (label, g) in &subjects {
        let mut records = Vec::with_capacity(corpus.len());
        let mut seconds = Vec::with_capacity(corpus.len());
        for pair in &corpus.pairs {
            let t0 = Instant::now();
            // Timed separately from scoring, which repeats the decode.
            let _ = model::decode_greedy(g, &pair.xs, &pair.ys, g.config().max_seq - 1);
            seconds.push(t0.elapsed().as_secs_f64());
            records.push(score_test_pair(g, pair));
        }
        let row = ReportRow::from_records(label, &records);
        eprintln!(
            "{label}: valid {:.2}, CE {:.4}, TED {:.2}, NMSE {:.3e}, 1-R2 {:.3e}",
            row.valid_fraction, row.ce_mean, row.ted_mean, row.nmse_median, row.one_minus_r2_median
        );
        table.rows.push(row);
        all.push((label.clone(), records, seconds));
    }

    let rows = all.iter().flat_map(|(label, recs, _)| {
        recs.iter().enumerate().map(move |(index, r)| RecordRow {
            method: label,
            index,
            target: &r.target,
            predicted: r.predicted.as_deref(),
            valid: r.valid,
            ce: r.ce,
            ted: r.ted,
            nmse: r.nmse,
            one_minus_r2: r.one_minus_r2,
        })
    });
    write_csv(&out.join("records.csv"), RECORDS_HEADER, rows)?;
    write_csv(&out.join("table.csv"), tables::TABLE_HEADER, &table.rows)?;
    let times = all
        .iter()
        .flat_map(|(label, _, secs)| secs.iter().enumerate().map(move |(i, s)| (label.as_str(), i, *s)));
    write_csv(&out.join(INFERENCE_TIME_FILE), INFERENCE_TIME_HEADER, times)?;

    #[derive(Serialize)]
    struct Details {
        corpus: CorpusKind,
        pairs: usize,
        methods: Vec<String>,
        table: ReportTable,
    }
    let details = Details {
        corpus: kind,
        pairs: corpus.len(),
        methods: subjects.iter().map(|(l, _)| l.clone()).collect(),
        table: table.clone(),
    };
    write_manifest(&out.join("manifest.json"), "test", cfg, details)?;
    write_timing(&out, "test", start)?;
    let max = all.iter().flat_map(|a| a.2.iter().copied()).fold(0.0, f64::max);
    eprintln!("slowest decode {max:.4} s per equation");
    Ok(table)
}

#[derive(Serialize)]
struct FitnessRow {
    trial: usize,
    generation: usize,
    best_ce: f64,
    best_mse: Option<f64>,
    valid_fraction: f64,
}

#[derive(Serialize)]
struct ValidRow {
    generation: usize,
    mean: f64,
    min: f64,
    max: f64,
}

/// Plot-ready bundles over all completed trials, plus start-versus-end
/// rank tests.
pub fn report(cfg: &RunConfig, run: &RunDir, alt: Alternative) -> Result<()> {
    let trials = completed_trials(run)?;
    if trials.is_empty() {
        bail!(
            "no completed trials under {}; run `srevo evolve` first",
            run.trials().display()
        );
    }
    let out = run.report();
    std::fs::create_dir_all(&out)?;
    let mut histories = Vec::new();
    let mut fronts = Vec::new();
    for (_, dir) in &trials {
        histories.push(evolve::read_history_csv(&dir.join("history.csv"))?);
        fronts.push(evolve::read_front_csv(&dir.join("front.csv"))?);
    }

    let numbers: Vec<usize> = trials
        .iter()
        .map(|(n, _)| n.trim_start_matches("trial-").parse().unwrap_or(0))
        .collect();
    let rows = numbers.iter().zip(&histories).flat_map(|(&trial, h)| {
        h.iter().map(move |r: &GenerationRecord| FitnessRow {
            trial,
            generation: r.generation,
            best_ce: r.best_ce,
            best_mse: r.best_mse,
            valid_fraction: r.valid_fraction,
        })
    });
    write_csv(
        &out.join("fitness.csv"),
        "trial,generation,best_ce,best_mse,valid_fraction",
        rows,
    )?;

    let len = histories.iter().map(Vec::len).min().unwrap_or(0);
    let valid_rows = (0..len).map(|g| {
        let v: Vec<f64> = histories.iter().map(|h| h[g].valid_fraction).collect();
        ValidRow {
            generation: g,
            mean: srevo_core::metrics::mean(&v),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    });
    write_csv(&out.join("valid_fraction.csv"), "generation,mean,min,max", valid_rows)?;
    let curve = tables::mean_curve(&histories, |r| r.valid_fraction);
    let blocks = tables::block_means(&curve, BLOCK)
        .into_iter()
        .enumerate()
        .map(|(b, m)| (b * BLOCK, ((b + 1) * BLOCK).min(curve.len()) - 1, m));
    write_csv(
        &out.join("valid_fraction_blocks.csv"),
        "first_generation,last_generation,mean",
        blocks,
    )?;

    let all = ParetoFront {
        points: fronts.iter().flat_map(|f| f.points.iter().cloned()).collect(),
    };
    evolve::write_front_csv(&out.join("fronts.csv"), &all)?;
    let meta = meta_front(&fronts);
    evolve::write_front_csv(&out.join("meta_front.csv"), &meta)?;

    let endpoints = Endpoints::from_histories(&histories);
    let (stats, skipped) = tables::endpoint_tests(&endpoints, alt);
    for (name, err) in &skipped {
        eprintln!("{name}: test skipped ({err})");
    }
    write_csv(&out.join("stats.csv"), tables::STATS_HEADER, &stats)?;

    #[derive(Serialize)]
    struct Details {
        trials: Vec<String>,
        ce_improved: usize,
        meta_front_size: usize,
        files: [&'static str; 7],
    }
    let details = Details {
        trials: trials.iter().map(|(n, _)| n.clone()).collect(),
        ce_improved: endpoints.ce_improved(),
        meta_front_size: meta.points.len(),
        files: [
            "fitness.csv",
            "valid_fraction.csv",
            "valid_fraction_blocks.csv",
            "fronts.csv",
            "meta_front.csv",
            "stats.csv",
            "manifest.json",
        ],
    };
    write_manifest(&out.join("manifest.json"), "report", cfg, details)?;
    eprintln!(
        "{} trials: CE improved in {}, meta front of {} points",
        trials.len(),
        endpoints.ce_improved(),
        meta.points.len()
    );
    for s in &stats {
        eprintln!(
            "{} {} vs {}: U = {}, p = {:.3e}",
            s.comparison, s.sample_a, s.sample_b, s.u, s.p_value
        );
    }
    Ok(())
}
