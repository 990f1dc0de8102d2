//! Frozen feature extractors: a small pre-norm vision transformer over
//! square patches, or a table of precomputed features.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::head::{snap, Linear};
use crate::error::{Error, Result};
use crate::imaging::ModelInput;
use crate::rng::SplitMix64;

const MLP_RATIO: usize = 4;
const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    ToyViT,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    /// Token grid concatenated, `tokens * width` features.
    Flatten,
    /// Mean over tokens, `width` features.
    MeanPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub image_side: u32,
    pub patch_size: u32,
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub pooling: Pooling,
    /// Seed for the randomly initialised toy transformer weights.
    #[serde(default)]
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::ToyViT,
            image_side: 384,
            patch_size: 16,
            depth: 2,
            width: 32,
            heads: 4,
            pooling: Pooling::Flatten,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_side == 0 || !self.image_side.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(format!(
                "image side {} is not divisible by patch size {}",
                self.image_side, self.patch_size
            )));
        }
        if self.heads == 0 || self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "width {} is not divisible by head count {}",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let per_side = (self.image_side / self.patch_size) as usize;
        per_side * per_side
    }

    pub fn patch_dim(&self) -> usize {
        (self.patch_size * self.patch_size * 3) as usize
    }

    pub fn feature_dim(&self) -> usize {
        match self.pooling {
            Pooling::Flatten => self.tokens() * self.width,
            Pooling::MeanPool => self.width,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    fn identity(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(self.gamma.iter().zip(&self.beta))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct ToyVit {
    pub config: BackboneConfig,
    pub patch_embed: Linear,
    /// `tokens * width`, row per token.
    pub position: Vec<f64>,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl ToyVit {
    /// Random frozen weights from SplitMix64(`config.seed`).
    pub fn init(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        if config.kind != BackboneKind::ToyViT {
            return Err(Error::invalid("ToyVit::init needs a ToyViT config"));
        }
        let mut rng = SplitMix64::new(config.seed);
        let w = config.width;
        let patch_embed = Linear::fan_in_uniform(w, config.patch_dim(), &mut rng);
        let position = (0..config.tokens() * w)
            .map(|_| snap(rng.uniform(-0.02, 0.02)))
            .collect();
        let blocks = (0..config.depth)
            .map(|_| Block {
                norm1: LayerNorm::identity(w),
                qkv: Linear::fan_in_uniform(3 * w, w, &mut rng),
                proj: Linear::fan_in_uniform(w, w, &mut rng),
                norm2: LayerNorm::identity(w),
                fc1: Linear::fan_in_uniform(MLP_RATIO * w, w, &mut rng),
                fc2: Linear::fan_in_uniform(w, MLP_RATIO * w, &mut rng),
            })
            .collect();
        Ok(Self {
            config,
            patch_embed,
            position,
            blocks,
            norm: LayerNorm::identity(w),
        })
    }

    /// Patch vectors in raster order; each patch is row-major, channels last.
    pub fn patchify(&self, input: &ModelInput) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.config;
        let side = cfg.image_side as usize;
        if input.side != cfg.image_side || input.values.len() != side * side * 3 {
            return Err(Error::Dimension {
                expected: side * side * 3,
                actual: input.values.len(),
                context: "backbone input",
            });
        }
        let p = cfg.patch_size as usize;
        let per_side = side / p;
        let mut patches = Vec::with_capacity(cfg.tokens());
        for py in 0..per_side {
            for px in 0..per_side {
                let mut patch = Vec::with_capacity(cfg.patch_dim());
                for y in 0..p {
                    let row = (py * p + y) * side + px * p;
                    patch.extend_from_slice(&input.values[row * 3..(row + p) * 3]);
                }
                patches.push(patch);
            }
        }
        Ok(patches)
    }

    /// Token embeddings after the final norm.
    pub fn tokens(&self, input: &ModelInput) -> Result<Vec<Vec<f64>>> {
        let w = self.config.width;
        let mut x: Vec<Vec<f64>> = self
            .patchify(input)?
            .iter()
            .enumerate()
            .map(|(t, patch)| {
                let mut e = self.patch_embed.forward(patch);
                for (v, p) in e.iter_mut().zip(&self.position[t * w..(t + 1) * w]) {
                    *v += p;
                }
                e
            })
            .collect();
        for block in &self.blocks {
            let normed: Vec<Vec<f64>> = x.iter().map(|t| block.norm1.forward(t)).collect();
            let (attended, _) = self.attention(block, &normed);
            for (t, a) in x.iter_mut().zip(attended) {
                t.iter_mut().zip(a).for_each(|(v, d)| *v += d);
            }
            for t in x.iter_mut() {
                let h: Vec<f64> = block.fc1.forward(&block.norm2.forward(t)).into_iter().map(gelu).collect();
                t.iter_mut().zip(block.fc2.forward(&h)).for_each(|(v, d)| *v += d);
            }
        }
        let out: Vec<Vec<f64>> = x.iter().map(|t| self.norm.forward(t)).collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "backbone".to_owned(),
            });
        }
        Ok(out)
    }

    /// Multi-head self-attention. Returns the projected output and the
    /// attention matrices, one `tokens x tokens` row-major matrix per head.
    pub fn attention(&self, block: &Block, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let w = self.config.width;
        let heads = self.config.heads;
        let hd = w / heads;
        let n = x.len();
        let qkv: Vec<Vec<f64>> = x.iter().map(|t| block.qkv.forward(t)).collect();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut mixed = vec![vec![0.0; w]; n];
        let mut maps = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = |i: usize| &qkv[i][h * hd..(h + 1) * hd];
            let k = |i: usize| &qkv[i][w + h * hd..w + (h + 1) * hd];
            let v = |i: usize| &qkv[i][2 * w + h * hd..2 * w + (h + 1) * hd];
            let mut map = vec![0.0; n * n];
            for i in 0..n {
                let row = &mut map[i * n..(i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = q(i).iter().zip(k(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(row);
                for (j, &a) in row.iter().enumerate() {
                    for (o, vv) in mixed[i][h * hd..(h + 1) * hd].iter_mut().zip(v(j)) {
                        *o += a * vv;
                    }
                }
            }
            maps.push(map);
        }
        let out = mixed.iter().map(|m| block.proj.forward(m)).collect();
        (out, maps)
    }

    pub fn forward(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let tokens = self.tokens(input)?;
        Ok(match self.config.pooling {
            Pooling::Flatten => tokens.into_iter().flatten().collect(),
            Pooling::MeanPool => {
                let n = tokens.len() as f64;
                let mut acc = vec![0.0; self.config.width];
                for t in &tokens {
                    acc.iter_mut().zip(t).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            }
        })
    }

    /// Every parameter in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.patch_embed.weight, &self.patch_embed.bias, &self.position];
        for b in &self.blocks {
            out.extend([
                &b.norm1.gamma[..],
                &b.norm1.beta,
                &b.qkv.weight,
                &b.qkv.bias,
                &b.proj.weight,
                &b.proj.bias,
                &b.norm2.gamma,
                &b.norm2.beta,
                &b.fc1.weight,
                &b.fc1.bias,
                &b.fc2.weight,
                &b.fc2.bias,
            ]);
        }
        out.extend([&self.norm.gamma[..], &self.norm.beta]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.patch_embed.weight,
            &mut self.patch_embed.bias,
            &mut self.position,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.norm1.gamma[..],
                &mut b.norm1.beta,
                &mut b.qkv.weight,
                &mut b.qkv.bias,
                &mut b.proj.weight,
                &mut b.proj.bias,
                &mut b.norm2.gamma,
                &mut b.norm2.beta,
                &mut b.fc1.weight,
                &mut b.fc1.bias,
                &mut b.fc2.weight,
                &mut b.fc2.bias,
            ]);
        }
        out.extend([&mut self.norm.gamma[..], &mut self.norm.beta]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bitwise_eq(&self, other: &ToyVit) -> bool {
        self.config == other.config
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

/// Features keyed by image id, for externally computed embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    features: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, feature: Vec<f64>) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: feature.len(),
                context: "precomputed feature",
            });
        }
        self.features.insert(id.into(), feature);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.features
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    }
}

/// Frozen feature extractor in front of the head.
#[derive(Debug, Clone)]
pub enum Backbone {
    ToyVit(Box<ToyVit>),
    Precomputed(FeatureTable),
}

impl Backbone {
    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::ToyVit(vit) => vit.config.feature_dim(),
            Backbone::Precomputed(table) => table.dim(),
        }
    }

    pub fn image_side(&self) -> Option<u32> {
        match self {
            Backbone::ToyVit(vit) => Some(vit.config.image_side),
            Backbone::Precomputed(_) => None,
        }
    }

    /// Toy transformer forward pass on raster input.
    pub fn forward_input(&self, input: &ModelInput) -> Result<Vec<f64>> {
        match self {
            Backbone::ToyVit(vit) => vit.forward(input),
            Backbone::Precomputed(_) => Err(Error::Unsupported(
                "a precomputed backbone cannot process raw images".to_owned(),
            )),
        }
    }

    /// Precomputed lookup by image id.
    pub fn lookup(&self, image_id: &str) -> Result<&[f64]> {
        match self {
            Backbone::Precomputed(table) => table.get(image_id),
            Backbone::ToyVit(_) => Err(Error::Unsupported(
                "the toy transformer computes features from images, not ids".to_owned(),
            )),
        }
    }
}
