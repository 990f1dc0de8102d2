//! Three-layer projection head: feature -> 2L -> 2L -> L, ELU between
//! layers and no activation on the output.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

use super::loss::{elu, elu_derivative};

/// Rounds to the nearest value representable in the 32-bit checkpoint format.
pub(crate) fn snap(x: f64) -> f64 {
    x as f32 as f64
}

/// Dense layer, row-major `weight[out][in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Weights uniform in +-sqrt(1/fan_in), zero bias.
    pub fn fan_in_uniform(rows: usize, cols: usize, rng: &mut SplitMix64) -> Self {
        let bound = (1.0 / cols as f64).sqrt();
        let weight = (0..rows * cols)
            .map(|_| snap(rng.uniform(-bound, bound)))
            .collect();
        Self {
            rows,
            cols,
            weight,
            bias: vec![0.0; rows],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.weight
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns d/dx.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.weight[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += g * x[c];
                dx[c] += g * row[c];
            }
        }
        dx
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }

    fn same_bits(&self, other: &Linear) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.values().count() == other.values().count()
            && self.values().zip(other.values()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub layers: [Linear; 3],
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    pub output: Vec<f64>,
}

pub(crate) const LAYER_NAMES: [&str; 3] = ["head.layer1", "head.layer2", "head.layer3"];

impl HeadParams {
    pub fn zeros(feature_dim: usize, latent: usize) -> Self {
        Self {
            layers: [
                Linear::zeros(2 * latent, feature_dim),
                Linear::zeros(2 * latent, 2 * latent),
                Linear::zeros(latent, 2 * latent),
            ],
        }
    }

    /// Fan-in scaled uniform init, zero biases, drawn from SplitMix64(seed).
    pub fn init(feature_dim: usize, latent: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self {
            layers: [
                Linear::fan_in_uniform(2 * latent, feature_dim, &mut rng),
                Linear::fan_in_uniform(2 * latent, 2 * latent, &mut rng),
                Linear::fan_in_uniform(latent, 2 * latent, &mut rng),
            ],
        }
    }

    /// Checks that the layer shapes chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let [l1, l2, l3] = &self.layers;
        if l1.rows != l2.cols || l2.rows != l3.cols || l1.rows != 2 * l3.rows || l2.rows != l1.rows {
            return Err(Error::invalid(format!(
                "head layer shapes do not chain: {}x{}, {}x{}, {}x{}",
                l1.rows, l1.cols, l2.rows, l2.cols, l3.rows, l3.cols
            )));
        }
        for (layer, name) in self.layers.iter().zip(LAYER_NAMES) {
            if layer.weight.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(Error::Format(format!("{name}: storage does not match shape")));
            }
            if !layer.values().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: name.to_owned(),
                });
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn latent_size(&self) -> usize {
        self.layers[2].rows
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat views over every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        let [l1, l2, l3] = &self.layers;
        [&l1.weight, &l1.bias, &l2.weight, &l2.bias, &l3.weight, &l3.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        let [l1, l2, l3] = &mut self.layers;
        [
            &mut l1.weight,
            &mut l1.bias,
            &mut l2.weight,
            &mut l2.bias,
            &mut l3.weight,
            &mut l3.bias,
        ]
    }

    /// Bitwise equality of all shapes and values.
    pub fn bitwise_eq(&self, other: &HeadParams) -> bool {
        self.layers
            .iter()
            .zip(&other.layers)
            .all(|(a, b)| a.same_bits(b))
    }

    pub fn forward(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(feature)?.output)
    }

    pub fn trace(&self, feature: &[f64]) -> Result<HeadTrace> {
        if feature.len() != self.feature_dim() {
            return Err(Error::Dimension {
                expected: self.feature_dim(),
                actual: feature.len(),
                context: "head input feature",
            });
        }
        let [l1, l2, l3] = &self.layers;
        let z1 = finite(l1.forward(feature), LAYER_NAMES[0])?;
        let a1: Vec<f64> = z1.iter().map(|&v| elu(v)).collect();
        let z2 = finite(l2.forward(&a1), LAYER_NAMES[1])?;
        let a2: Vec<f64> = z2.iter().map(|&v| elu(v)).collect();
        let output = finite(l3.forward(&a2), LAYER_NAMES[2])?;
        Ok(HeadTrace {
            input: feature.to_vec(),
            z1,
            a1,
            z2,
            a2,
            output,
        })
    }

    /// Backpropagates `d_output` through a traced pass, accumulating into
    /// `grads` (same shapes as `self`).
    pub fn backward(&self, trace: &HeadTrace, d_output: &[f64], grads: &mut HeadParams) {
        let [l1, l2, l3] = &self.layers;
        let [g1, g2, g3] = &mut grads.layers;
        let mut d = l3.backward(&trace.a2, d_output, g3);
        for (dv, &z) in d.iter_mut().zip(&trace.z2) {
            *dv *= elu_derivative(z);
        }
        let mut d = l2.backward(&trace.a1, &d, g2);
        for (dv, &z) in d.iter_mut().zip(&trace.z1) {
            *dv *= elu_derivative(z);
        }
        l1.backward(&trace.input, &d, g1);
    }
}

fn finite(v: Vec<f64>, layer: &str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            layer: layer.to_owned(),
        })
    }
}
