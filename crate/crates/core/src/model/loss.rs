//! Distance, contrastive loss, decision rule and exact head gradients.

use serde::{Deserialize, Serialize};

use super::head::{HeadParams, HeadTrace, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::pairs::Label;

/// Contrastive margin; distances beyond it cost nothing for different pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin(f64);

impl Margin {
    pub const DEFAULT: Margin = Margin(1.66);

    pub fn new(m: f64) -> Result<Self> {
        if m > 0.0 && m.is_finite() {
            Ok(Self(m))
        } else {
            Err(Error::invalid(format!("margin must be positive, got {m}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Pairs closer than `tau` are declared the same pet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThreshold(f64);

impl DecisionThreshold {
    /// Any `tau >= 0`; `tau = 0` declares nothing Same.
    pub fn new(tau: f64) -> Result<Self> {
        if tau >= 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(Error::invalid(format!("threshold must be non-negative, got {tau}")))
        }
    }

    /// Half the margin.
    pub fn for_margin(m: Margin) -> Self {
        Self(m.value() / 2.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for DecisionThreshold {
    fn default() -> Self {
        Self::for_margin(Margin::DEFAULT)
    }
}

/// ELU with alpha = 1.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Euclidean distance.
pub fn distance(x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::Dimension {
            expected: x1.len(),
            actual: x2.len(),
            context: "latent vectors",
        });
    }
    Ok(x1
        .iter()
        .zip(x2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

fn pair_term(d: f64, label: Label, m: f64) -> f64 {
    match label {
        Label::Same => d * d,
        Label::Different => (m - d).max(0.0).powi(2),
    }
}

/// Half the batch mean of `d^2` (same) or `max(m - d, 0)^2` (different).
pub fn contrastive_loss(pairs: &[(f64, Label)], margin: Margin) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("contrastive loss of an empty batch"));
    }
    if let Some((d, _)) = pairs.iter().find(|(d, _)| d.is_nan() || *d < 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {d}")));
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(d, label)| pair_term(d, label, margin.value()))
        .sum();
    Ok(0.5 * sum / pairs.len() as f64)
}

pub fn decide(d: f64, tau: DecisionThreshold) -> Label {
    if d < tau.value() {
        Label::Same
    } else {
        Label::Different
    }
}

/// One training pair in feature space.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePair<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub distances: Vec<f64>,
    /// Same shapes as the head.
    pub grads: HeadParams,
}

/// Loss and exact gradients with respect to every head parameter. Both
/// pair members go through the same `params`.
pub fn loss_gradients(params: &HeadParams, batch: &[FeaturePair<'_>], margin: Margin) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient of an empty batch"));
    }
    let n = batch.len() as f64;
    let m = margin.value();
    let mut grads = HeadParams::zeros(params.feature_dim(), params.latent_size());
    let mut distances = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    for pair in batch {
        let ta: HeadTrace = params.trace(pair.a)?;
        let tb: HeadTrace = params.trace(pair.b)?;
        let d = distance(&ta.output, &tb.output)?;
        loss += pair_term(d, pair.label, m);
        distances.push(d);
        // dL/dz_a = coef * (z_a - z_b), dL/dz_b = -dL/dz_a
        let coef = match pair.label {
            Label::Same => 1.0 / n,
            Label::Different if d > 0.0 && d < m => -(m - d) / (n * d),
            Label::Different => 0.0,
        };
        if coef == 0.0 {
            continue;
        }
        let da: Vec<f64> = ta.output.iter().zip(&tb.output).map(|(a, b)| coef * (a - b)).collect();
        let db: Vec<f64> = da.iter().map(|v| -v).collect();
        params.backward(&ta, &da, &mut grads);
        params.backward(&tb, &db, &mut grads);
    }
    let loss = 0.5 * loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: "loss".to_owned(),
        });
    }
    for (layer, name) in grads.layers.iter().zip(LAYER_NAMES) {
        if !layer.weight.iter().chain(&layer.bias).all(|g| g.is_finite()) {
            return Err(Error::NonFinite {
                layer: format!("{name} gradient"),
            });
        }
    }
    Ok(BatchGradients {
        loss,
        distances,
        grads,
    })
}
