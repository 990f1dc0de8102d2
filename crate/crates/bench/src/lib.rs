//! Fixtures shared by the benchmarks.

use petreid_core::model::{BackboneConfig, FeaturePair, HeadParams, Pooling, ToyVit};
use petreid_core::{ImageTensor, Label, SplitMix64};

pub fn random_image(side: u32, seed: u64) -> ImageTensor {
    let mut rng = SplitMix64::new(seed);
    let data = (0..side * side * 3).map(|_| rng.below(256) as u8).collect();
    ImageTensor::new(side, side, data).expect("sized buffer")
}

/// Toy transformer at the synthetic-experiment scale.
pub fn toy_vit() -> ToyVit {
    ToyVit::init(BackboneConfig {
        image_side: 64,
        patch_size: 8,
        depth: 2,
        width: 32,
        pooling: Pooling::MeanPool,
        ..Default::default()
    })
    .expect("valid config")
}

pub fn features(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect()
}

pub fn batch(feats: &[Vec<f64>]) -> Vec<FeaturePair<'_>> {
    feats
        .chunks_exact(2)
        .enumerate()
        .map(|(i, c)| FeaturePair {
            a: &c[0],
            b: &c[1],
            label: if i % 2 == 0 { Label::Same } else { Label::Different },
        })
        .collect()
}

pub fn head(dim: usize, latent: usize) -> HeadParams {
    HeadParams::init(dim, latent, 1)
}
