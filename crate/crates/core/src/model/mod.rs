//! The multi-stage occupancy-code predictor: configuration, parameter
//! storage, deterministic forward passes for coding, and training with
//! hand-derived gradients.
//!
//! An 8-bit occupancy code is predicted as a chain of segments (stages).
//! Stage j sees the voxel's prior feature (embeddings of the parent's code
//! and the voxel's own octant) plus an embedding of the bits already fixed
//! by earlier stages, runs Conv-ReLU-Conv blocks over occupied neighbors
//! (or a per-voxel linear stack when the neighbor prior is disabled), and a
//! linear head + softmax yields the segment distribution.
//!
//! Parameters live in one flat vector; [`ParamLayout`] names the tensor
//! ranges in their canonical (checkpoint) order. Training and inference run
//! in f32; gradient checking re-instantiates the model at f64.

mod forward;
mod train;

pub use forward::{
    code_bit_cost, hierarchy_bits, kernel_offsets, neighbor_table, prior_features, sparse_conv,
    stage_forward, NeighborTable,
};
pub(crate) use forward::stage_forward_acts;
pub use train::{grad_check, loss_and_grad, train_step, AdamState, Hyper};

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, Range, SubAssign};
use std::path::Path;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Voxel;
use crate::hash::fnv1a64;

/// Numeric type the model runs in: f32 in production, f64 for checking.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Additive constant inside every -log2(p + EPS) bit cost.
pub const COST_EPS: f64 = 1e-10;

/// How the 8 code bits are split into sequentially predicted segments,
/// most significant bits first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// 4 + 4 bits.
    TwoStage,
    /// 2 + 2 + 2 + 2 bits.
    FourStageUniform,
    /// 1 + 1 + 2 + 4 bits.
    FourStageNonUniform,
}

impl Grouping {
    pub fn widths(self) -> &'static [usize] {
        match self {
            Grouping::TwoStage => &[4, 4],
            Grouping::FourStageUniform => &[2, 2, 2, 2],
            Grouping::FourStageNonUniform => &[1, 1, 2, 4],
        }
    }

    pub fn num_stages(self) -> usize {
        self.widths().len()
    }

    /// Bits fixed before stage `stage` begins.
    pub fn prefix_bits(self, stage: usize) -> usize {
        self.widths()[..stage].iter().sum()
    }

    /// Value of the bits fixed before stage `stage` (the embedding index).
    pub fn prefix(self, code: u8, stage: usize) -> u16 {
        let b = self.prefix_bits(stage);
        if b == 0 {
            0
        } else {
            (code >> (8 - b)) as u16
        }
    }

    /// The segment stage `stage` predicts, as an integer < 2^width.
    pub fn segment(self, code: u8, stage: usize) -> u8 {
        let w = self.widths()[stage];
        let consumed = self.prefix_bits(stage) + w;
        (code >> (8 - consumed)) & ((1u16 << w) - 1) as u8
    }

    pub fn flag(self) -> u8 {
        match self {
            Grouping::TwoStage => 0,
            Grouping::FourStageUniform => 1,
            Grouping::FourStageNonUniform => 2,
        }
    }

    pub fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(Grouping::TwoStage),
            1 => Ok(Grouping::FourStageUniform),
            2 => Ok(Grouping::FourStageNonUniform),
            _ => Err(Error::ParseError(format!("unknown grouping flag {}", flag))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Grouping::TwoStage => "2stage",
            Grouping::FourStageUniform => "4stage",
            Grouping::FourStageNonUniform => "4stage+ue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channel dimension C.
    pub channels: usize,
    /// Spatial kernel size k (odd).
    pub kernel_size: usize,
    pub grouping: Grouping,
    /// Neighbor prior: spatial convolutions when true, per-voxel linear
    /// layers of the same depth when false.
    pub neighbor_prior: bool,
    /// Conv-ReLU-Conv blocks per stage.
    pub conv_blocks_per_stage: usize,
    /// When true (default), each stage's convolution runs on the features
    /// re-embedded with that stage's decoded bits, so neighbors' earlier
    /// segments flow through the kernel. When false the convolution sees
    /// only the scale prior and the bit embedding is added after it.
    pub stage_refresh: bool,
}

impl ModelConfig {
    /// Small preset for tests and CPU experiments.
    pub fn desk() -> Self {
        ModelConfig {
            channels: 8,
            kernel_size: 3,
            grouping: Grouping::FourStageNonUniform,
            neighbor_prior: true,
            conv_blocks_per_stage: 1,
            stage_refresh: true,
        }
    }

    /// Full-size preset (C=32, k=5).
    pub fn full() -> Self {
        ModelConfig { channels: 32, kernel_size: 5, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::ConfigMismatch("channels must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::ConfigMismatch(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if self.conv_blocks_per_stage == 0 {
            return Err(Error::ConfigMismatch("conv blocks per stage must be positive".into()));
        }
        debug_assert_eq!(self.grouping.widths().iter().sum::<usize>(), 8);
        Ok(())
    }
}

/// One Conv-ReLU-Conv block's parameter ranges.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct StageLayout {
    pub width: usize,
    pub prefix_bits: usize,
    /// Bit-embedding table, 2^prefix_bits rows; empty range for stage 1
    /// (nothing is decoded yet, the embedding is identically zero).
    pub bit_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

/// Names the tensor ranges inside the flat parameter vector, in the
/// canonical declaration order used by checkpoints and the digest:
/// prior-code embedding, octant embedding, root embedding, then per stage
/// bit embedding, blocks (w1, b1, w2, b2 each), head weights, head bias.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub prior_code_emb: Range<usize>,
    pub octant_emb: Range<usize>,
    pub root_emb: Range<usize>,
    pub stages: Vec<StageLayout>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let mix_len = if cfg.neighbor_prior {
            cfg.kernel_size.pow(3) * c * c
        } else {
            c * c
        };
        let mut off = 0usize;
        let mut take = |n: usize| -> Range<usize> {
            let r = off..off + n;
            off += n;
            r
        };
        let prior_code_emb = take(256 * c);
        let octant_emb = take(8 * c);
        let root_emb = take(c);
        let mut stages = Vec::with_capacity(cfg.grouping.num_stages());
        let mut prefix = 0usize;
        for &w in cfg.grouping.widths() {
            let bit_emb = if prefix == 0 { 0..0 } else { take((1 << prefix) * c) };
            let mut blocks = Vec::with_capacity(cfg.conv_blocks_per_stage);
            for _ in 0..cfg.conv_blocks_per_stage {
                blocks.push(BlockLayout {
                    w1: take(mix_len),
                    b1: take(c),
                    w2: take(mix_len),
                    b2: take(c),
                });
            }
            let head_w = take(c * (1 << w));
            let head_b = take(1 << w);
            stages.push(StageLayout { width: w, prefix_bits: prefix, bit_emb, blocks, head_w, head_b });
            prefix += w;
        }
        let total = off;
        ParamLayout { prior_code_emb, octant_emb, root_emb, stages, total }
    }
}

/// The predictor: configuration plus one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Fop<T> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
}

/// Production model type.
pub type FopModel = Fop<f32>;

impl<T: Scalar> Fop<T> {
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = vec![T::zero(); layout.total];
        Ok(Fop { config, layout, params })
    }

    /// Random initialization: embeddings and heads uniform in +-1/sqrt(C),
    /// convolution kernels uniform in +-1/sqrt(C*k^3) (plain +-1/sqrt(C)
    /// for the linear layers of the neighbor-prior-off variant), biases
    /// zero. Tensors are drawn in declaration order from a seeded stream.
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels as f64;
        let emb_bound = 1.0 / c.sqrt();
        let mix_bound = if config.neighbor_prior {
            1.0 / (c * config.kernel_size.pow(3) as f64).sqrt()
        } else {
            emb_bound
        };
        let ranges_emb = [
            model.layout.prior_code_emb.clone(),
            model.layout.octant_emb.clone(),
            model.layout.root_emb.clone(),
        ];
        for r in ranges_emb {
            fill_uniform(&mut model.params, r, emb_bound, &mut rng);
        }
        let stages = model.layout.stages.clone();
        for st in &stages {
            fill_uniform(&mut model.params, st.bit_emb.clone(), emb_bound, &mut rng);
            for bl in &st.blocks {
                fill_uniform(&mut model.params, bl.w1.clone(), mix_bound, &mut rng);
                fill_uniform(&mut model.params, bl.w2.clone(), mix_bound, &mut rng);
            }
            fill_uniform(&mut model.params, st.head_w.clone(), emb_bound, &mut rng);
        }
        Ok(model)
    }

    /// Slice of the parameter vector for a layout range.
    #[inline]
    pub fn p(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    pub fn num_stages(&self) -> usize {
        self.config.grouping.num_stages()
    }

    pub fn to_f64(&self) -> Fop<f64> {
        Fop {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.iter().map(|&x| x.to_f64()).collect(),
        }
    }
}

fn fill_uniform<T: Scalar>(
    params: &mut [T],
    range: Range<usize>,
    bound: f64,
    rng: &mut ChaCha8Rng,
) {
    for p in &mut params[range] {
        *p = T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound);
    }
}

/// Per-voxel feature rows aligned with one scale's sorted coordinates.
#[derive(Debug, Clone)]
pub struct FeatureMap<T> {
    pub coords: Vec<Voxel>,
    /// Row-major |coords| x channels.
    pub features: Vec<T>,
    pub channels: usize,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.channels..][..self.channels]
    }

    pub fn rows(&self) -> usize {
        self.coords.len()
    }
}

/// Per-voxel probability rows for one stage's segment alphabet.
#[derive(Debug, Clone)]
pub struct StageDistribution<T> {
    /// Row-major |coords| x alphabet.
    pub probs: Vec<T>,
    pub alphabet: usize,
}

impl<T: Scalar> StageDistribution<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.probs[i * self.alphabet..][..self.alphabet]
    }

    pub fn rows(&self) -> usize {
        self.probs.len() / self.alphabet
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"GPCM";
pub const MODEL_VERSION: u16 = 1;

impl Fop<f32> {
    /// Little-endian concatenation of all parameters in declaration order.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.len() * 4);
        for &p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Model identity: FNV-1a 64 of the parameter bytes.
    pub fn digest(&self) -> u64 {
        fnv1a64(&self.param_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.kernel_size as u32).to_le_bytes());
        out.push(self.config.grouping.flag());
        out.push(self.config.neighbor_prior as u8);
        out.extend_from_slice(&(self.config.conv_blocks_per_stage as u32).to_le_bytes());
        out.push(self.config.stage_refresh as u8);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.param_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Error::ParseError(format!("model checkpoint: {}", msg));
        if bytes.len() < 29 {
            return Err(fail("file too short"));
        }
        if &bytes[0..4] != MODEL_MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MODEL_VERSION {
            return Err(fail(&format!("unsupported version {}", version)));
        }
        let rd_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let channels = rd_u32(6) as usize;
        let kernel_size = rd_u32(10) as usize;
        let grouping = Grouping::from_flag(bytes[14])?;
        let neighbor_prior = match bytes[15] {
            0 => false,
            1 => true,
            v => return Err(fail(&format!("bad neighbor-prior flag {}", v))),
        };
        let conv_blocks_per_stage = rd_u32(16) as usize;
        let stage_refresh = match bytes[20] {
            0 => false,
            1 => true,
            v => return Err(fail(&format!("bad stage-refresh flag {}", v))),
        };
        let count = u64::from_le_bytes(bytes[21..29].try_into().unwrap()) as usize;
        let config = ModelConfig {
            channels,
            kernel_size,
            grouping,
            neighbor_prior,
            conv_blocks_per_stage,
            stage_refresh,
        };
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if count != layout.total {
            return Err(fail(&format!(
                "parameter count {} does not match configuration ({} expected)",
                count, layout.total
            )));
        }
        if bytes.len() != 29 + count * 4 {
            return Err(fail("truncated parameter block"));
        }
        let mut params = Vec::with_capacity(count);
        for i in 0..count {
            let o = 29 + i * 4;
            let v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(fail("non-finite parameter"));
            }
            params.push(v);
        }
        Ok(Fop { config, layout, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
