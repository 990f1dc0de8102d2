use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{fit_square, to_model_input, ImageTensor};
use crate::ingest::Manifest;
use crate::model::Backbone;

/// Backbone features for every image in a manifest. The backbone is frozen,
/// so each image is pushed through it once and reused by every epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    features: HashMap<String, Vec<f64>>,
}

impl FeatureStore {
    pub fn compute(manifest: &Manifest, backbone: &Backbone) -> Result<Self> {
        let dim = backbone.feature_dim();
        let rows: Vec<(String, Vec<f64>)> = match backbone {
            Backbone::Precomputed(table) => manifest
                .records()
                .iter()
                .map(|r| Ok((r.image_id.clone(), table.get(&r.image_id)?.to_vec())))
                .collect::<Result<_>>()?,
            Backbone::ToyVit(_) => {
                let side = backbone.image_side().expect("image backbone has a side");
                // Each image is independent, so the parallel map is still deterministic.
                manifest
                    .records()
                    .par_iter()
                    .map(|r| {
                        let img = ImageTensor::load(&manifest.resolve(r))?;
                        let img = if img.width() == side && img.height() == side {
                            img
                        } else {
                            fit_square(&img, side)?
                        };
                        Ok((r.image_id.clone(), backbone.forward_input(&to_model_input(&img)?)?))
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(Self {
            dim,
            features: rows.into_iter().collect(),
        })
    }

    pub fn from_map(dim: usize, features: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some(f) = features.values().find(|f| f.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: f.len(),
                context: "cached feature",
            });
        }
        Ok(Self { dim, features })
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

    pub fn get(&self, image_id: &str) -> Result<&[f64]> {
        self.features
            .get(image_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(image_id.to_owned()))
    }
}
