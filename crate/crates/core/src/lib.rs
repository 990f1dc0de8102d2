//! Pet re-identification with a contrastive Siamese network.
//!
//! The pipeline: [`ingest`] builds a cropped, padded and augmented image
//! corpus; [`pairs`] draws seeded same/different pairs and assigns folds;
//! [`model`] holds the frozen backbone, the projection head and the loss;
//! [`training`] runs AdamW over the head; [`evaluation`] tallies confusion
//! counts and runs k-fold cross-validation; [`matchd`] stores sightings and
//! answers similarity queries.

pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod ingest;
pub mod matchd;
pub mod model;
pub mod pairs;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use imaging::ImageTensor;
pub use ingest::{BoundingBox, ImageRecord, Manifest, Split};
pub use model::{DecisionThreshold, HeadParams, LatentVector, Margin, SiameseModel};
pub use pairs::{Label, PairSample};
pub use rng::SplitMix64;
