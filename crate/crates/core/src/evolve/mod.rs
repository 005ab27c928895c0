//! Evolution of pretrained networks against symbolic and numeric loss.
//!
//! A generation evaluates every new member, selects `parent_count` parents
//! and breeds the same number of children by layer-wise crossover and
//! mutation. Selection ranks by CE alone while any member fails to produce
//! a valid equation, and by pairwise Pareto tournaments once all do.

mod io;
mod pareto;

pub use io::{read_front_csv, read_history_csv, write_front_csv, write_history_csv, TRIAL_STATE_FILE};
pub use pareto::{dominates, front_of, meta_front, pareto_front, FrontPoint, ParetoFront};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Corpus;
use crate::metrics::{evaluate_individual, FitnessRecord};
use crate::model::{ModelError, NetworkGenome};
use crate::pretrain::{seed_population, PretrainError};
use crate::seed::derive_seed;

const STREAM_INIT: u64 = 0x494e_4954;
const STREAM_GENERATION: u64 = 0x4745_4e53;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolve config: {0}")]
    InvalidConfig(&'static str),
    #[error("parents have different model configs")]
    ConfigMismatch,
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, EvolveError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub generations: usize,
    pub pop_size: usize,
    pub parent_count: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub mutation_range: f64,
    pub seed: u64,
}

impl EvolveConfig {
    pub fn desk() -> EvolveConfig {
        EvolveConfig {
            generations: 200,
            pop_size: 8,
            parent_count: 4,
            mutation_rate: 0.5,
            crossover_rate: 0.5,
            mutation_range: 0.01,
            seed: 0,
        }
    }

    pub fn paper() -> EvolveConfig {
        EvolveConfig {
            generations: 10_000,
            pop_size: 30,
            parent_count: 15,
            ..EvolveConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parent_count == 0 || self.pop_size != 2 * self.parent_count {
            return Err(EvolveError::InvalidConfig(
                "pop_size must be twice a positive parent_count",
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(EvolveError::InvalidConfig("rates must lie in [0, 1]"));
        }
        if !(self.mutation_range > 0.0 && self.mutation_range.is_finite()) {
            return Err(EvolveError::InvalidConfig("mutation_range must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: NetworkGenome,
    /// `None` until evaluated.
    pub fitness: Option<FitnessRecord>,
    /// Generations survived since creation.
    pub age: u32,
}

impl Individual {
    pub fn new(genome: NetworkGenome) -> Individual {
        Individual {
            genome,
            fitness: None,
            age: 0,
        }
    }

    fn fit(&self) -> &FitnessRecord {
        self.fitness.as_ref().expect("selection requires evaluated members")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Individual>,
    pub generation: usize,
    pub parent_count: usize,
    pub size: usize,
}

/// Which selection rule a generation used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Some member is invalid: truncate by CE.
    SymbolicOnly,
    /// Every member is valid: Pareto tournaments.
    Pareto,
}

/// Per-generation summary, taken over the evaluated population before
/// selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_ce: f64,
    pub best_mse: Option<f64>,
    pub valid_fraction: f64,
}

/// Reduces `members` to `parent_count` survivors.
pub fn select<R: Rng + ?Sized>(
    mut members: Vec<Individual>,
    parent_count: usize,
    rng: &mut R,
) -> (Vec<Individual>, SelectionMode) {
    if members.len() <= parent_count {
        let mode = if members.iter().all(|m| m.fit().valid) {
            SelectionMode::Pareto
        } else {
            SelectionMode::SymbolicOnly
        };
        return (members, mode);
    }
    if members.iter().any(|m| !m.fit().valid) {
        members.sort_by(|a, b| a.fit().ce.total_cmp(&b.fit().ce).then(a.age.cmp(&b.age)));
        members.truncate(parent_count);
        return (members, SelectionMode::SymbolicOnly);
    }
    tournament(&mut members, parent_count, rng);
    (members, SelectionMode::Pareto)
}

/// Loser of a tournament between `i` and `j`, if any.
fn loser(members: &[Individual], i: usize, j: usize) -> Option<usize> {
    let (a, b) = (members[i].fit(), members[j].fit());
    let (pa, pb) = (a.objectives()?, b.objectives()?);
    if dominates(pa, pb) {
        Some(j)
    } else if dominates(pb, pa) {
        Some(i)
    } else if pa == pb {
        // Exact tie: the younger survives; on equal age the second drawn goes.
        Some(if members[i].age > members[j].age { i } else { j })
    } else {
        None
    }
}

fn tournament<R: Rng + ?Sized>(members: &mut Vec<Individual>, parent_count: usize, rng: &mut R) {
    let mut stale = 0usize;
    while members.len() > parent_count {
        let n = members.len();
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        match loser(members, i, j) {
            Some(k) => {
                members.remove(k);
                stale = 0;
            }
            None => {
                stale += 1;
                if stale >= n * n {
                    let resolvable = (0..n).any(|a| (a + 1..n).any(|b| loser(members, a, b).is_some()));
                    if resolvable {
                        stale = 0;
                    } else {
                        crowding_truncate(members, parent_count);
                    }
                }
            }
        }
    }
}

/// Keeps the `keep` members with the largest crowding distance in
/// objective space. Extremes of each objective are always kept; ties go to
/// the younger member, then to the earlier one.
fn crowding_truncate(members: &mut Vec<Individual>, keep: usize) {
    let n = members.len();
    let objs: Vec<(f64, f64)> = members
        .iter()
        .map(|m| m.fit().objectives().expect("all valid"))
        .collect();
    let mut dist = vec![0.0f64; n];
    for axis in 0..2 {
        let val = |k: usize| if axis == 0 { objs[k].0 } else { objs[k].1 };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| val(a).total_cmp(&val(b)));
        let span = val(order[n - 1]) - val(order[0]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if span > 0.0 && span.is_finite() {
            for w in order.windows(3) {
                dist[w[1]] += (val(w[2]) - val(w[0])) / span;
            }
        }
    }
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| {
        dist[b]
            .total_cmp(&dist[a])
            .then(members[a].age.cmp(&members[b].age))
            .then(a.cmp(&b))
    });
    let mut kept = vec![false; n];
    for &k in rank.iter().take(keep) {
        kept[k] = true;
    }
    let mut k = 0;
    members.retain(|_| {
        k += 1;
        kept[k - 1]
    });
}

fn layer_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.gen_bool(rate)).collect()
}

/// Adds a uniform perturbation in `[-range, range]` to every weight of each
/// layer selected with probability `rate`. Biases are left alone.
pub fn mutate<R: Rng + ?Sized>(g: &NetworkGenome, rng: &mut R, rate: f64, range: f64) -> NetworkGenome {
    let mut child = g.clone();
    let mask = layer_mask(g.layers().len(), rate, rng);
    for (k, selected) in mask.into_iter().enumerate() {
        if !selected {
            continue;
        }
        let mut w = (*g.layers()[k].weight).clone();
        for v in w.data_mut() {
            *v += rng.gen_range(-range..=range);
        }
        child.replace_weight(k, w).expect("shape unchanged");
    }
    child
}

fn crossover_masked<R: Rng + ?Sized>(
    a: &NetworkGenome,
    b: &NetworkGenome,
    mask: &[bool],
    rng: &mut R,
) -> Result<NetworkGenome> {
    if !a.is_aligned_with(b) {
        return Err(EvolveError::ConfigMismatch);
    }
    let mut child = a.clone();
    for (k, &selected) in mask.iter().enumerate() {
        if !selected {
            continue;
        }
        let src = b.layers()[k].weight.data();
        let mut w = (*a.layers()[k].weight).clone();
        let n = w.len();
        let data = w.data_mut();
        for pos in index::sample(rng, n, n / 2) {
            data[pos] = src[pos];
        }
        child.replace_weight(k, w)?;
    }
    Ok(child)
}

/// Copy of `a` where each layer, with probability `rate`, has exactly
/// `floor(n/2)` random weight positions taken from `b`.
pub fn crossover<R: Rng + ?Sized>(
    a: &NetworkGenome,
    b: &NetworkGenome,
    rng: &mut R,
    rate: f64,
) -> Result<NetworkGenome> {
    if !a.is_aligned_with(b) {
        return Err(EvolveError::ConfigMismatch);
    }
    let mask = layer_mask(a.layers().len(), rate, rng);
    crossover_masked(a, b, &mask, rng)
}

/// One child per parent: a uniformly chosen first parent, crossed with a
/// distinct second parent if any layer is selected, then mutated.
pub fn make_children<R: Rng + ?Sized>(parents: &[Individual], rng: &mut R, cfg: &EvolveConfig) -> Vec<Individual> {
    let n = parents.len();
    (0..n)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let first = &parents[i].genome;
            let mask = layer_mask(first.layers().len(), cfg.crossover_rate, rng);
            let crossed = if n > 1 && mask.iter().any(|&m| m) {
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                crossover_masked(first, &parents[j].genome, &mask, rng).expect("population shares one config")
            } else {
                first.clone()
            };
            Individual::new(mutate(&crossed, rng, cfg.mutation_rate, cfg.mutation_range))
        })
        .collect()
}

/// Evaluates members that have no fitness yet, in parallel.
pub fn evaluate_population(members: &mut [Individual], corpus: &Corpus) {
    members
        .par_iter_mut()
        .filter(|m| m.fitness.is_none())
        .for_each(|m| m.fitness = Some(evaluate_individual(&m.genome, corpus)));
}

/// Summary of an evaluated population.
pub fn summarize(members: &[Individual], generation: usize) -> GenerationRecord {
    let fits: Vec<&FitnessRecord> = members.iter().filter_map(|m| m.fitness.as_ref()).collect();
    let best_ce = fits.iter().map(|f| f.ce).fold(f64::INFINITY, f64::min);
    let best_mse = fits.iter().filter_map(|f| f.mse).reduce(f64::min);
    let valid = fits.iter().filter(|f| f.valid).count();
    GenerationRecord {
        generation,
        best_ce,
        best_mse,
        valid_fraction: valid as f64 / members.len().max(1) as f64,
    }
}

/// Evaluate, select, breed. Survivors age by one; children start at zero.
pub fn step<R: Rng + ?Sized>(
    pop: &mut Population,
    corpus: &Corpus,
    rng: &mut R,
    cfg: &EvolveConfig,
) -> (GenerationRecord, SelectionMode) {
    evaluate_population(&mut pop.members, corpus);
    let record = summarize(&pop.members, pop.generation);
    let members = std::mem::take(&mut pop.members);
    let (mut parents, mode) = select(members, pop.parent_count, rng);
    let children = make_children(&parents, rng, cfg);
    for p in &mut parents {
        p.age += 1;
    }
    parents.extend(children);
    pop.members = parents;
    pop.generation += 1;
    (record, mode)
}

/// Everything needed to continue a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialState {
    pub trial: usize,
    pub trial_seed: u64,
    pub population: Population,
    pub history: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub history: Vec<GenerationRecord>,
    /// Final population, evaluated.
    pub members: Vec<Individual>,
    pub front: ParetoFront,
}

/// Seed of trial `trial` under a run seed.
pub fn trial_seed(run_seed: u64, trial: usize) -> u64 {
    derive_seed(run_seed, trial as u64)
}

fn generation_rng(trial_seed: u64, generation: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(
        derive_seed(trial_seed, STREAM_GENERATION),
        generation as u64,
    ))
}

/// Generation 0: genomes drawn from the pretrained pool.
pub fn init_trial(cfg: &EvolveConfig, pool: &[NetworkGenome], trial: usize) -> Result<TrialState> {
    cfg.validate()?;
    let seed = trial_seed(cfg.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT));
    let genomes = seed_population(pool, cfg.pop_size, &mut rng)?;
    Ok(TrialState {
        trial,
        trial_seed: seed,
        population: Population {
            members: genomes.into_iter().map(Individual::new).collect(),
            generation: 0,
            parent_count: cfg.parent_count,
            size: cfg.pop_size,
        },
        history: Vec::new(),
    })
}

/// Runs generations until `cfg.generations`, calling `after_generation`
/// after each one. Each generation draws from its own seeded stream, so a
/// trial resumed from a saved state continues identically.
pub fn advance<F>(state: &mut TrialState, corpus: &Corpus, cfg: &EvolveConfig, mut after_generation: F) -> Result<()>
where
    F: FnMut(&TrialState) -> Result<()>,
{
    while state.population.generation < cfg.generations {
        let mut rng = generation_rng(state.trial_seed, state.population.generation);
        let (record, _) = step(&mut state.population, corpus, &mut rng, cfg);
        state.history.push(record);
        after_generation(state)?;
    }
    Ok(())
}

/// Evaluates the final population and extracts its front.
pub fn finish(mut state: TrialState, corpus: &Corpus) -> TrialResult {
    evaluate_population(&mut state.population.members, corpus);
    let front = front_of(&state.population.members, state.trial);
    TrialResult {
        trial: state.trial,
        history: state.history,
        members: state.population.members,
        front,
    }
}

pub fn run_trial(cfg: &EvolveConfig, pool: &[NetworkGenome], corpus: &Corpus, trial: usize) -> Result<TrialResult> {
    let mut state = init_trial(cfg, pool, trial)?;
    advance(&mut state, corpus, cfg, |_| Ok(()))?;
    Ok(finish(state, corpus))
}
