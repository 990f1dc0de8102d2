//! AdamW with decoupled weight decay.
//!
//! ```text
//! m     <- b1 m + (1 - b1) g
//! v     <- b2 v + (1 - b2) g^2
//! theta <- theta - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * theta )
//! ```
//! with `m_hat = m / (1 - b1^t)` and `v_hat = v / (1 - b2^t)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments mirror the parameter tensors one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamWHyper,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(shapes: &[usize]) -> Self {
        Self::with_hyper(shapes, AdamWHyper::default())
    }

    pub fn with_hyper(shapes: &[usize], hyper: AdamWHyper) -> Self {
        Self {
            hyper,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One AdamW update over every tensor. On a non-finite result nothing is
/// modified and the offending tensor/element is reported.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Dimension {
            expected: state.first.len(),
            actual: params.len(),
            context: "optimizer tensor count",
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(Error::Dimension {
                expected: state.first[i].len(),
                actual: p.len(),
                context: "optimizer tensor shape",
            });
        }
    }
    let AdamWHyper { beta1, beta2, eps } = state.hyper;
    let t = state.step + 1;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);

    let mut updates = Vec::with_capacity(params.len());
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let mut new_p = Vec::with_capacity(p.len());
        let mut new_m = Vec::with_capacity(p.len());
        let mut new_v = Vec::with_capacity(p.len());
        for j in 0..p.len() {
            let m = beta1 * state.first[i][j] + (1.0 - beta1) * g[j];
            let v = beta2 * state.second[i][j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m / c1;
            let v_hat = v / c2;
            let theta = p[j] - lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[j]);
            if !theta.is_finite() || !m.is_finite() || !v.is_finite() {
                return Err(Error::NonFinite {
                    layer: format!(
                        "optimizer step {t}, tensor {i}, element {j} (param {}, grad {})",
                        p[j], g[j]
                    ),
                });
            }
            new_p.push(theta);
            new_m.push(m);
            new_v.push(v);
        }
        updates.push((new_p, new_m, new_v));
    }
    for (i, (new_p, new_m, new_v)) in updates.into_iter().enumerate() {
        params[i].copy_from_slice(&new_p);
        state.first[i] = new_m;
        state.second[i] = new_v;
    }
    state.step = t;
    Ok(())
}
