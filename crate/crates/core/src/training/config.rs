use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters. Defaults are the reference run: 350 epochs of
/// 128 batches of 8 pairs, latent size 512, AdamW at 5e-5 with decay 2e-4,
/// margin 1.66.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub latent_size: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub test_batch_size: usize,
    pub test_batch_count: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub seed: u64,
    pub freeze_backbone: bool,
    pub p_same: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 350,
            latent_size: 512,
            batch_size: 8,
            batches_per_epoch: 128,
            test_batch_size: 8,
            test_batch_count: 128,
            learning_rate: 5.0e-5,
            weight_decay: 2.0e-4,
            margin: 1.66,
            seed: 0,
            freeze_backbone: true,
            p_same: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("latent_size", self.latent_size),
            ("batch_size", self.batch_size),
            ("batches_per_epoch", self.batches_per_epoch),
            ("test_batch_size", self.test_batch_size),
            ("test_batch_count", self.test_batch_count),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        // lr = 0 is accepted: it freezes the head, which tests rely on.
        // Written so that NaN fails every comparison.
        let in_range = self.learning_rate >= 0.0 && self.weight_decay >= 0.0 && self.margin > 0.0;
        if !in_range {
            return Err(Error::invalid(
                "learning_rate and weight_decay must be non-negative, margin positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.p_same) {
            return Err(Error::invalid(format!("p_same {} outside [0, 1]", self.p_same)));
        }
        Ok(())
    }

    pub fn train_pairs_per_epoch(&self) -> usize {
        self.batch_size * self.batches_per_epoch
    }

    pub fn test_pairs_per_epoch(&self) -> usize {
        self.test_batch_size * self.test_batch_count
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
