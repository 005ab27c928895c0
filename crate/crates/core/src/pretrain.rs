//! Gradient-descent pretraining on token cross-entropy, and the pool of
//! pretrained networks that seeds evolution.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Corpus, CorpusKind};
use crate::model::{self, BoundParams, CheckpointMeta, Mode, ModelConfig, ModelError, NetworkGenome};
use crate::seed::derive_seed;
use crate::tensor::{self, Tape, TensorError};

pub const POOL_FORMAT_VERSION: u32 = 1;
pub const POOL_MANIFEST: &str = "pool.json";

const STREAM_SHUFFLE: u64 = 0x5348_5546;
const STREAM_MEMBER: u64 = 0x504f_4f4c;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("invalid pretrain config: {0}")]
    InvalidConfig(&'static str),
    #[error("expected a pretrain corpus, got {0}")]
    WrongCorpus(CorpusKind),
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    DivergenceDetected { epoch: usize, history: Vec<f64> },
    #[error("cannot seed a population from an empty pool")]
    EmptyPool,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PretrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub corpus_size: usize,
    pub n_models: usize,
    pub lr: f64,
    pub batch: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn desk() -> PretrainConfig {
        PretrainConfig {
            epochs: 40,
            corpus_size: 200,
            n_models: 3,
            lr: 0.1,
            batch: 16,
            grad_clip: 1.0,
            seed: 0,
        }
    }

    pub fn paper() -> PretrainConfig {
        PretrainConfig {
            epochs: 50,
            corpus_size: 5000,
            n_models: 25,
            lr: 0.01,
            ..PretrainConfig::desk()
        }
    }

    /// `lr = 0` is accepted so a run can be checked for being a no-op.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.corpus_size == 0 || self.n_models == 0 || self.batch == 0 {
            return Err(PretrainError::InvalidConfig("counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.lr) {
            return Err(PretrainError::InvalidConfig("lr must be in [0, 1)"));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(PretrainError::InvalidConfig("grad_clip must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub genome: NetworkGenome,
    /// Token-weighted mean training CE of each epoch.
    pub history: Vec<f64>,
}

fn diverged(e: ModelError, epoch: usize, history: &[f64]) -> PretrainError {
    match e {
        ModelError::NonFiniteActivation(_) | ModelError::Tensor(TensorError::NonFiniteGradient) => {
            PretrainError::DivergenceDetected {
                epoch,
                history: history.to_vec(),
            }
        }
        other => PretrainError::Model(other),
    }
}

/// Trains one network from a random init. Minibatch SGD on teacher-forced
/// CE with global gradient-norm clipping.
pub fn pretrain_one(
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    corpus: &Corpus,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if corpus.kind != CorpusKind::Pretrain {
        return Err(PretrainError::WrongCorpus(corpus.kind));
    }
    let mut genome = NetworkGenome::random(model_cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE));
    let mut order: Vec<usize> = (0..corpus.pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let (loss, n) =
                train_batch(&mut genome, corpus, chunk, cfg, &mut rng).map_err(|e| diverged(e, epoch, &history))?;
            if !loss.is_finite() {
                return Err(PretrainError::DivergenceDetected { epoch, history });
            }
            loss_sum += loss * n as f64;
            tokens += n;
        }
        history.push(loss_sum / tokens.max(1) as f64);
    }
    Ok(PretrainOutcome { genome, history })
}

/// One SGD step; returns the batch loss and its token count.
fn train_batch(
    genome: &mut NetworkGenome,
    corpus: &Corpus,
    idx: &[usize],
    cfg: &PretrainConfig,
    rng: &mut ChaCha8Rng,
) -> model::Result<(f64, usize)> {
    let mcfg = genome.config().clone();
    let mut tape = Tape::new();
    let params = BoundParams::bind(&mut tape, genome);
    let mut logits = Vec::with_capacity(idx.len());
    let mut targets = Vec::new();
    for &i in idx {
        let pair = &corpus.pairs[i];
        let mut mode = Mode::Training(&mut *rng);
        logits.push(model::teacher_forced_on(
            &mut tape,
            &params,
            &mcfg,
            &pair.xs,
            &pair.ys,
            &pair.tokens,
            &mut mode,
        )?);
        targets.extend_from_slice(&pair.tokens);
    }
    let all = tape.concat_rows(&logits)?;
    let loss_var = tape.cross_entropy(all, &targets)?;
    let loss = tape.value(loss_var).item();
    let n = targets.iter().filter(|&&t| t != 0).count();
    if !loss.is_finite() {
        return Ok((loss, n));
    }
    let mut grads = tape.backward(loss_var)?;

    let layers = genome.layers().to_vec();
    let mut w_grads = Vec::with_capacity(layers.len());
    let mut b_grads = Vec::with_capacity(layers.len());
    for (k, l) in layers.iter().enumerate() {
        w_grads.push(grads.take_or_zeros(params.weights[k], &l.weight));
        b_grads.push(match (&l.bias, params.biases[k]) {
            (Some(b), Some(v)) => Some(grads.take_or_zeros(v, b)),
            _ => None,
        });
    }
    tensor::clip_global_norm(w_grads.iter_mut().chain(b_grads.iter_mut().flatten()), cfg.grad_clip);
    for (k, l) in layers.into_iter().enumerate() {
        let mut w = (*l.weight).clone();
        tensor::sgd_step(&mut w, &w_grads[k], cfg.lr)?;
        genome.replace_weight(k, w)?;
        if let (Some(b), Some(g)) = (l.bias, &b_grads[k]) {
            let mut b = (*b).clone();
            tensor::sgd_step(&mut b, g, cfg.lr)?;
            genome.replace_bias(k, b)?;
        }
    }
    Ok((loss, n))
}

/// Seed of pool member `index`.
pub fn member_seed(pool_seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(pool_seed, STREAM_MEMBER), index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub index: usize,
    pub seed: u64,
    /// Checkpoint file name relative to the pool directory; absent for
    /// members that diverged.
    pub checkpoint: Option<String>,
    pub final_ce: Option<f64>,
    pub history: Vec<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub format_version: u32,
    pub pretrain: PretrainConfig,
    pub model: ModelConfig,
    pub corpus_seed: u64,
    pub entries: Vec<PoolEntry>,
}

impl PoolManifest {
    pub fn survivors(&self) -> usize {
        self.entries.iter().filter(|e| !e.diverged).count()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(dir.join(POOL_MANIFEST), s)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<PoolManifest> {
        let text = std::fs::read_to_string(dir.join(POOL_MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads every surviving checkpoint, in index order.
    pub fn load_genomes(&self, dir: &Path) -> Result<Vec<NetworkGenome>> {
        self.entries
            .iter()
            .filter_map(|e| e.checkpoint.as_ref())
            .map(|c| Ok(NetworkGenome::load(&dir.join(c))?))
            .collect()
    }
}

pub fn checkpoint_name(index: usize) -> String {
    format!("model-{index:03}.ckpt")
}

/// One pool member, trained and saved under `dir`.
fn train_member(
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    corpus: &Corpus,
    index: usize,
    dir: &Path,
) -> Result<(PoolEntry, Option<NetworkGenome>)> {
    let seed = member_seed(cfg.seed, index);
    match pretrain_one(cfg, model_cfg, corpus, seed) {
        Ok(out) => {
            let name = checkpoint_name(index);
            let meta = CheckpointMeta {
                format_version: model::CHECKPOINT_VERSION,
                seed,
                provenance: format!("pretrain member {index}, pool seed {}", cfg.seed),
            };
            out.genome.save(&dir.join(&name), &meta)?;
            let entry = PoolEntry {
                index,
                seed,
                checkpoint: Some(name),
                final_ce: out.history.last().copied(),
                history: out.history,
                diverged: false,
            };
            Ok((entry, Some(out.genome)))
        }
        Err(PretrainError::DivergenceDetected { history, .. }) => Ok((
            PoolEntry {
                index,
                seed,
                checkpoint: None,
                final_ce: None,
                history,
                diverged: true,
            },
            None,
        )),
        Err(e) => Err(e),
    }
}

/// Trains `n_models` networks that differ only in their derived seeds and
/// writes their checkpoints plus a manifest into `dir`. Members already
/// listed in an existing manifest with the same configuration are kept.
pub fn pretrain_pool(
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    corpus: &Corpus,
    dir: &Path,
) -> Result<(PoolManifest, Vec<NetworkGenome>)> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let previous = PoolManifest::read(dir)
        .ok()
        .filter(|m| &m.pretrain == cfg && &m.model == model_cfg && m.corpus_seed == corpus.seed);
    let done = |i: usize| -> Option<PoolEntry> {
        previous
            .as_ref()
            .and_then(|m| m.entries.iter().find(|e| e.index == i))
            .filter(|e| e.diverged || e.checkpoint.as_ref().is_some_and(|c| dir.join(c).exists()))
            .cloned()
    };

    let mut manifest = PoolManifest {
        format_version: POOL_FORMAT_VERSION,
        pretrain: cfg.clone(),
        model: model_cfg.clone(),
        corpus_seed: corpus.seed,
        entries: (0..cfg.n_models).filter_map(done).collect(),
    };
    let todo: Vec<usize> = (0..cfg.n_models).filter(|&i| done(i).is_none()).collect();
    let trained: Vec<PoolEntry> = todo
        .par_iter()
        .map(|&i| train_member(cfg, model_cfg, corpus, i, dir).map(|(e, _)| e))
        .collect::<Result<_>>()?;
    manifest.entries.extend(trained);
    manifest.entries.sort_by_key(|e| e.index);
    manifest.write(dir)?;
    let genomes = manifest.load_genomes(dir)?;
    Ok((manifest, genomes))
}

/// Initial population: each genome drawn uniformly, with replacement.
pub fn seed_population<R: Rng + ?Sized>(
    pool: &[NetworkGenome],
    pop_size: usize,
    rng: &mut R,
) -> Result<Vec<NetworkGenome>> {
    if pool.is_empty() {
        return Err(PretrainError::EmptyPool);
    }
    Ok((0..pop_size)
        .map(|_| pool[rng.gen_range(0..pool.len())].clone())
        .collect())
}

/// Where a pool's checkpoints live.
pub fn checkpoint_paths(manifest: &PoolManifest, dir: &Path) -> Vec<PathBuf> {
    manifest
        .entries
        .iter()
        .filter_map(|e| e.checkpoint.as_ref().map(|c| dir.join(c)))
        .collect()
}
