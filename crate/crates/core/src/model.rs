//! The data-to-equation network.
//!
//! A point-set encoder (width-1 convolutions, GELU, max over points, one
//! fully connected layer) turns the XY data into one embedding vector. That
//! vector is prepended as a pseudo-token to a decoder-only transformer which
//! predicts equation tokens. There are no normalization layers anywhere.
//!
//! Row `k` of the decoder output predicts token `k` of the target from the
//! embedding and tokens `0..k`; row 0 therefore predicts `START`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{END, START, VOCAB_SIZE};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRVOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("xs and ys differ in length ({0} vs {1})")]
    DataLength(usize, usize),
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("layer {name}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error(transparent)]
    Tensor(TensorError),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { op } => ModelError::NonFiniteActivation(op),
            other => ModelError::Tensor(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Longest token sequence, `START` and `END` included.
    pub max_seq: usize,
    pub vocab: usize,
    pub dropout_p: f64,
    pub encoder_channels: Vec<usize>,
}

impl ModelConfig {
    pub fn desk() -> ModelConfig {
        ModelConfig {
            n_blocks: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            max_seq: 32,
            vocab: VOCAB_SIZE,
            dropout_p: 0.0,
            encoder_channels: vec![16, 32, 32],
        }
    }

    /// Eight transformer blocks; the remaining sizes are not published and
    /// are chosen here.
    pub fn paper() -> ModelConfig {
        ModelConfig {
            n_blocks: 8,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            max_seq: 32,
            vocab: VOCAB_SIZE,
            dropout_p: 0.1,
            encoder_channels: vec![64, 128, 128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.max_seq < crate::expr::MAX_PRIMITIVES + 2 {
            return bad("max_seq must hold 30 primitives plus START and END");
        }
        if self.vocab != VOCAB_SIZE {
            return bad("vocab must be 14");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must be in [0, 1)");
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return bad("encoder needs at least one non-empty conv layer");
        }
        if self.d_ff == 0 || self.n_blocks == 0 {
            return bad("d_ff and n_blocks must be positive");
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// One named weight tensor with its optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weight: Arc<Tensor>,
    pub bias: Option<Arc<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGenome {
    config: ModelConfig,
    layers: Vec<Layer>,
}

/// Data summary produced by the encoder, shape `(1, d_model)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Tensor);

struct LayerSpec {
    name: String,
    weight: Vec<usize>,
    bias: Option<usize>,
}

fn layer_specs(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let spec = |name: String, weight: Vec<usize>, bias: Option<usize>| LayerSpec { name, weight, bias };
    let d = cfg.d_model;
    let mut out = Vec::new();
    let mut c_in = 2;
    for (i, &c) in cfg.encoder_channels.iter().enumerate() {
        out.push(spec(format!("enc.conv{i}"), vec![1, c_in, c], Some(c)));
        c_in = c;
    }
    out.push(spec("enc.fc".into(), vec![c_in, d], Some(d)));
    out.push(spec("dec.tok_emb".into(), vec![cfg.vocab, d], None));
    out.push(spec("dec.pos_emb".into(), vec![cfg.max_seq, d], None));
    for b in 0..cfg.n_blocks {
        for part in ["attn.q", "attn.k", "attn.v", "attn.o"] {
            out.push(spec(format!("block{b}.{part}"), vec![d, d], Some(d)));
        }
        out.push(spec(format!("block{b}.mlp.fc1"), vec![d, cfg.d_ff], Some(cfg.d_ff)));
        out.push(spec(format!("block{b}.mlp.fc2"), vec![cfg.d_ff, d], Some(d)));
    }
    out.push(spec("head".into(), vec![d, cfg.vocab], Some(cfg.vocab)));
    out
}

fn init_bound(s: &LayerSpec) -> f64 {
    if s.name.ends_with("_emb") {
        return 1.0;
    }
    let fan_in: usize = s.weight[..s.weight.len() - 1].iter().product();
    1.0 / (fan_in as f64).sqrt()
}

/// Layer indices in genome order.
struct Layout {
    n_conv: usize,
}

const BLOCK_LAYERS: usize = 6;

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        Layout {
            n_conv: cfg.encoder_channels.len(),
        }
    }
    fn conv(&self, i: usize) -> usize {
        i
    }
    fn enc_fc(&self) -> usize {
        self.n_conv
    }
    fn tok_emb(&self) -> usize {
        self.n_conv + 1
    }
    fn pos_emb(&self) -> usize {
        self.n_conv + 2
    }
    fn block(&self, b: usize, part: usize) -> usize {
        self.n_conv + 3 + BLOCK_LAYERS * b + part
    }
    fn head(&self, n_blocks: usize) -> usize {
        self.n_conv + 3 + BLOCK_LAYERS * n_blocks
    }
}

impl NetworkGenome {
    /// Weights uniform in `±1/sqrt(fan_in)` (`±1` for embedding tables),
    /// biases zero.
    pub fn random(config: ModelConfig, seed: u64) -> Result<NetworkGenome> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_specs(&config)
            .into_iter()
            .map(|s| Layer {
                weight: Arc::new({
                    let r = init_bound(&s);
                    Tensor::uniform(&s.weight, -r, r, &mut rng)
                }),
                bias: s.bias.map(|n| Arc::new(Tensor::zeros(&[n]))),
                name: s.name,
            })
            .collect();
        Ok(NetworkGenome { config, layers })
    }

    /// Builds a genome from explicit layers, checking names and shapes
    /// against the config.
    pub fn from_layers(config: ModelConfig, layers: Vec<Layer>) -> Result<NetworkGenome> {
        config.validate()?;
        let specs = layer_specs(&config);
        if specs.len() != layers.len() {
            return Err(ModelError::Format(format!(
                "expected {} layers, found {}",
                specs.len(),
                layers.len()
            )));
        }
        for (s, l) in specs.iter().zip(&layers) {
            if s.name != l.name {
                return Err(ModelError::UnknownLayer(l.name.clone()));
            }
            if s.weight != l.weight.shape() {
                return Err(ModelError::ShapeMismatch {
                    name: l.name.clone(),
                    expected: s.weight.clone(),
                    got: l.weight.shape().to_vec(),
                });
            }
            let bias_shape = l.bias.as_ref().map(|b| b.shape().to_vec());
            if s.bias.map(|n| vec![n]) != bias_shape {
                return Err(ModelError::ShapeMismatch {
                    name: format!("{}.bias", l.name),
                    expected: s.bias.map(|n| vec![n]).unwrap_or_default(),
                    got: bias_shape.unwrap_or_default(),
                });
            }
        }
        Ok(NetworkGenome { config, layers })
    }

    /// A genome that ignores its input and always emits `tokens`
    /// (`START ... END`). Uses one-hot positional embeddings routed straight
    /// to the output head; every other weight is zero. Needs
    /// `tokens.len() <= d_model`.
    pub fn fixed_output(config: ModelConfig, tokens: &[u32]) -> Result<NetworkGenome> {
        config.validate()?;
        if tokens.len() > config.d_model || tokens.len() > config.max_seq {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max: config.d_model.min(config.max_seq),
            });
        }
        let d = config.d_model;
        let layout = Layout::new(&config);
        let mut layers: Vec<Layer> = layer_specs(&config)
            .into_iter()
            .map(|s| Layer {
                weight: Arc::new(Tensor::zeros(&s.weight)),
                bias: s.bias.map(|n| Arc::new(Tensor::zeros(&[n]))),
                name: s.name,
            })
            .collect();
        let mut pos = Tensor::zeros(&[config.max_seq, d]);
        let mut head = Tensor::zeros(&[d, config.vocab]);
        for (p, &t) in tokens.iter().enumerate() {
            pos.data_mut()[p * d + p] = 1.0;
            head.data_mut()[p * config.vocab + t as usize] = 40.0;
        }
        layers[layout.pos_emb()].weight = Arc::new(pos);
        layers[layout.head(config.n_blocks)].weight = Arc::new(head);
        Ok(NetworkGenome { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::UnknownLayer(name.to_string()))
    }

    pub fn get_layer(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.layers[self.index_of(name)?].weight)
    }

    /// New genome with the weights of `name` replaced. Other layers and all
    /// biases are shared with `self`.
    pub fn set_layer(&self, name: &str, w: Tensor) -> Result<NetworkGenome> {
        let i = self.index_of(name)?;
        let mut out = self.clone();
        out.replace_weight(i, w)?;
        Ok(out)
    }

    /// In-place weight replacement by layer index.
    pub fn replace_weight(&mut self, index: usize, w: Tensor) -> Result<()> {
        let layer = &mut self.layers[index];
        if layer.weight.shape() != w.shape() {
            return Err(ModelError::ShapeMismatch {
                name: layer.name.clone(),
                expected: layer.weight.shape().to_vec(),
                got: w.shape().to_vec(),
            });
        }
        layer.weight = Arc::new(w);
        Ok(())
    }

    /// In-place bias replacement; used by gradient training only.
    pub fn replace_bias(&mut self, index: usize, b: Tensor) -> Result<()> {
        let layer = &mut self.layers[index];
        match &layer.bias {
            Some(old) if old.shape() == b.shape() => {
                layer.bias = Some(Arc::new(b));
                Ok(())
            }
            _ => Err(ModelError::ShapeMismatch {
                name: format!("{}.bias", layer.name),
                expected: layer.bias.as_ref().map(|t| t.shape().to_vec()).unwrap_or_default(),
                got: b.shape().to_vec(),
            }),
        }
    }

    /// Same config, so layer lists align one to one.
    pub fn is_aligned_with(&self, other: &NetworkGenome) -> bool {
        self.config == other.config
    }
}

/// Tape handles for every parameter of a genome.
pub struct BoundParams {
    pub weights: Vec<Var>,
    pub biases: Vec<Option<Var>>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, g: &NetworkGenome) -> BoundParams {
        let mut weights = Vec::with_capacity(g.layers.len());
        let mut biases = Vec::with_capacity(g.layers.len());
        for l in &g.layers {
            weights.push(tape.leaf_shared(l.weight.clone()));
            biases.push(l.bias.as_ref().map(|b| tape.leaf_shared(b.clone())));
        }
        BoundParams { weights, biases }
    }

    fn linear(&self, tape: &mut Tape, x: Var, layer: usize) -> Result<Var> {
        Ok(tape.linear(x, self.weights[layer], self.biases[layer])?)
    }
}

/// Dropout policy for one forward pass.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var> {
        match self {
            Mode::Inference => Ok(x),
            Mode::Training(rng) => Ok(tape.dropout(x, p, true, &mut **rng)?),
        }
    }
}

/// Encoder input: one row per point, `(x, asinh y)`.
fn point_rows(xs: &[f64], ys: &[f64]) -> Result<Tensor> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(ModelError::DataLength(xs.len(), ys.len()));
    }
    let data = xs.iter().zip(ys).flat_map(|(x, y)| [*x, y.asinh()]).collect();
    Ok(Tensor::matrix(xs.len(), 2, data)?)
}

/// Encoder on a tape. Returns a `(1, d_model)` var.
pub fn encode_on(tape: &mut Tape, p: &BoundParams, cfg: &ModelConfig, xs: &[f64], ys: &[f64]) -> Result<Var> {
    let layout = Layout::new(cfg);
    let mut h = tape.leaf(point_rows(xs, ys)?);
    for i in 0..cfg.encoder_channels.len() {
        let li = layout.conv(i);
        let b = p.biases[li].expect("conv layers carry a bias");
        h = tape.conv1d(h, p.weights[li], b)?;
        h = tape.gelu(h)?;
    }
    let pooled = tape.max_over_set(h)?;
    p.linear(tape, pooled, layout.enc_fc())
}

/// Decoder on a tape: rows `0..=inputs.len()` of next-token logits given the
/// embedding and the input tokens.
pub fn decode_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    emb: Var,
    inputs: &[u32],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let rows = inputs.len() + 1;
    if rows > cfg.max_seq {
        return Err(ModelError::SequenceTooLong {
            len: rows,
            max: cfg.max_seq,
        });
    }
    let layout = Layout::new(cfg);
    let ids: Vec<usize> = inputs.iter().map(|&t| t as usize).collect();
    let mut h = if ids.is_empty() {
        emb
    } else {
        let tok = tape.gather(p.weights[layout.tok_emb()], &ids)?;
        tape.concat_rows(&[emb, tok])?
    };
    let positions: Vec<usize> = (0..rows).collect();
    let pos = tape.gather(p.weights[layout.pos_emb()], &positions)?;
    h = tape.add(h, pos)?;

    let dh = cfg.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for b in 0..cfg.n_blocks {
        let q = p.linear(tape, h, layout.block(b, 0))?;
        let k = p.linear(tape, h, layout.block(b, 1))?;
        let v = p.linear(tape, h, layout.block(b, 2))?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, inv_sqrt)?;
            let att = tape.softmax_rows(scores, true)?;
            heads.push(tape.matmul(att, vh)?);
        }
        let ctx = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let attn = p.linear(tape, ctx, layout.block(b, 3))?;
        let attn = mode.dropout(tape, attn, cfg.dropout_p)?;
        h = tape.add(h, attn)?;

        let m = p.linear(tape, h, layout.block(b, 4))?;
        let m = tape.gelu(m)?;
        let m = p.linear(tape, m, layout.block(b, 5))?;
        let m = mode.dropout(tape, m, cfg.dropout_p)?;
        h = tape.add(h, m)?;
    }
    p.linear(tape, h, layout.head(cfg.n_blocks))
}

/// Teacher-forced logits for `target` on a tape, shape `(len, vocab)`.
pub fn teacher_forced_on(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &ModelConfig,
    xs: &[f64],
    ys: &[f64],
    target: &[u32],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    if target.len() > cfg.max_seq {
        return Err(ModelError::SequenceTooLong {
            len: target.len(),
            max: cfg.max_seq,
        });
    }
    let emb = encode_on(tape, p, cfg, xs, ys)?;
    decode_on(tape, p, cfg, emb, &target[..target.len().saturating_sub(1)], mode)
}

/// Order-invariant summary of the XY data.
pub fn encode(g: &NetworkGenome, xs: &[f64], ys: &[f64]) -> Result<Embedding> {
    let mut tape = Tape::inference();
    let p = BoundParams::bind(&mut tape, g);
    let e = encode_on(&mut tape, &p, &g.config, xs, ys)?;
    Ok(Embedding(tape.value(e).clone()))
}

/// Teacher-forced next-token logits, dropout off. Row `k` predicts
/// `target[k]`.
pub fn forward_logits(g: &NetworkGenome, xs: &[f64], ys: &[f64], target: &[u32]) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let p = BoundParams::bind(&mut tape, g);
    let out = teacher_forced_on(&mut tape, &p, &g.config, xs, ys, target, &mut Mode::Inference)?;
    Ok(tape.value(out).clone())
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding from `START` until `END` or `max_steps` generated tokens.
/// Returns `START` followed by the generated tokens. Ties go to the lowest id.
pub fn decode_greedy(g: &NetworkGenome, xs: &[f64], ys: &[f64], max_steps: usize) -> Result<Vec<u32>> {
    let cfg = &g.config;
    let steps = max_steps.min(cfg.max_seq - 1);
    let mut tape = Tape::inference();
    let p = BoundParams::bind(&mut tape, g);
    let emb = encode_on(&mut tape, &p, cfg, xs, ys)?;
    let checkpoint = tape.len();
    let mut seq = vec![START];
    for _ in 0..steps {
        let logits = decode_on(&mut tape, &p, cfg, emb, &seq, &mut Mode::Inference)?;
        let out = tape.value(logits);
        let next = argmax(out.row(out.rows() - 1));
        tape.truncate(checkpoint);
        seq.push(next);
        if next == END {
            break;
        }
    }
    Ok(seq)
}

// ---------------------------------------------------------------------------
// Checkpoints

/// Sidecar metadata written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub seed: u64,
    pub provenance: String,
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&[t.shape().len() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4, _>(r)?))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let ndim = read_exact::<1, _>(r)?[0] as usize;
    let shape = (0..ndim)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| read_exact::<8, _>(r).map(f64::from_le_bytes))
        .collect::<std::io::Result<Vec<_>>>()?;
    Tensor::new(shape, data).map_err(|e| ModelError::Format(e.to_string()))
}

impl NetworkGenome {
    /// Binary checkpoint: magic, version, config JSON, then per layer the
    /// name, weight tensor and optional bias tensor. All numbers are
    /// little-endian; values are raw f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.name.len() as u32).to_le_bytes())?;
            w.write_all(l.name.as_bytes())?;
            write_tensor(&mut w, &l.weight)?;
            match &l.bias {
                Some(b) => {
                    w.write_all(&[1])?;
                    write_tensor(&mut w, b)?;
                }
                None => w.write_all(&[0])?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<NetworkGenome> {
        let magic = read_exact::<8, _>(&mut r)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config: ModelConfig = serde_json::from_slice(&cfg)?;
        let n = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| ModelError::Format(e.to_string()))?;
            let weight = Arc::new(read_tensor(&mut r)?);
            let bias = match read_exact::<1, _>(&mut r)?[0] {
                0 => None,
                1 => Some(Arc::new(read_tensor(&mut r)?)),
                other => return Err(ModelError::Format(format!("bad bias flag {other}"))),
            };
            layers.push(Layer { name, weight, bias });
        }
        NetworkGenome::from_layers(config, layers)
    }

    /// Writes `path` and a `path.json` metadata sidecar.
    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        let sidecar = sidecar_path(path);
        let mut s = serde_json::to_string_pretty(meta)?;
        s.push('\n');
        std::fs::write(sidecar, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NetworkGenome> {
        NetworkGenome::read_from(BufReader::new(File::open(path)?))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// A random permutation helper for tests and checks.
pub fn permute_points<R: Rng + ?Sized>(xs: &[f64], ys: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.shuffle(rng);
    (
        idx.iter().map(|&i| xs[i]).collect(),
        idx.iter().map(|&i| ys[i]).collect(),
    )
}
