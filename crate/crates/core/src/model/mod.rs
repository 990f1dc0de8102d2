//! The Siamese network: a frozen backbone feeding a trainable projection
//! head, compared by Euclidean distance under a contrastive loss.

mod backbone;
mod checkpoint;
mod codec;
mod embeddings;
mod head;
mod loss;

pub use backbone::{
    Backbone, BackboneConfig, BackboneKind, Block, FeatureTable, LayerNorm, Pooling, ToyVit,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use embeddings::{
    append_embedding, decode_embeddings, decode_embeddings_lenient, encode_embeddings,
    read_embeddings, write_embeddings, EmbeddingFile, EmbeddingRecord, EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
};
pub use head::{HeadParams, HeadTrace, Linear};
pub(crate) use head::snap as head_snap;
pub use loss::{
    contrastive_loss, decide, distance, elu, loss_gradients, BatchGradients, DecisionThreshold,
    FeaturePair, Margin,
};

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{to_model_input, ImageTensor};

/// Output of the projection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "latent".to_owned(),
            });
        }
        Ok(Self(values))
    }

    /// Rounded to 32-bit precision, the resolution of stored embeddings.
    pub fn snapped(&self) -> Self {
        Self(self.0.iter().map(|&v| head::snap(v)).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for LatentVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Backbone and head; both branches of a pair run through this one value.
#[derive(Debug, Clone)]
pub struct SiameseModel {
    pub backbone: Backbone,
    pub head: HeadParams,
}

impl SiameseModel {
    pub fn new(backbone: Backbone, head: HeadParams) -> Result<Self> {
        if backbone.feature_dim() != head.feature_dim() {
            return Err(Error::Dimension {
                expected: head.feature_dim(),
                actual: backbone.feature_dim(),
                context: "backbone features vs head input",
            });
        }
        Ok(Self { backbone, head })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let backbone = ckpt
            .backbone
            .map(|vit| Backbone::ToyVit(Box::new(vit)))
            .ok_or_else(|| Error::Unsupported("checkpoint has no image backbone".to_owned()))?;
        Self::new(backbone, ckpt.head)
    }

    pub fn latent_size(&self) -> usize {
        self.head.latent_size()
    }

    /// Backbone features for a model-sized square image.
    pub fn features(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        self.backbone.forward_input(&to_model_input(img)?)
    }

    /// model input -> backbone -> head.
    pub fn embed(&self, img: &ImageTensor) -> Result<LatentVector> {
        LatentVector::new(self.head.forward(&self.features(img)?)?)
    }

    /// Head applied to a precomputed feature looked up by image id.
    pub fn embed_id(&self, image_id: &str) -> Result<LatentVector> {
        LatentVector::new(self.head.forward(self.backbone.lookup(image_id)?)?)
    }
}
