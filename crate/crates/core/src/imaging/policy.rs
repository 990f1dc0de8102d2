use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentOp, ImageTensor};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyName {
    CIFAR10,
    ImageNet,
    SVHN,
}

/// Ordered sub-policies of exactly two ops each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub name: PolicyName,
    pub sub_policies: Vec<[AugmentOp; 2]>,
}

impl AugmentPolicy {
    pub fn new(name: PolicyName, sub_policies: Vec<[AugmentOp; 2]>) -> Result<Self> {
        let policy = Self { name, sub_policies };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sub_policies.is_empty() {
            return Err(Error::invalid(format!("policy {:?} has no sub-policies", self.name)));
        }
        self.sub_policies
            .iter()
            .flatten()
            .try_for_each(AugmentOp::validate)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: Self = serde_json::from_str(text)?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn bundled(name: PolicyName) -> Self {
        let text = match name {
            PolicyName::CIFAR10 => include_str!("../../policies/cifar10.json"),
            PolicyName::ImageNet => include_str!("../../policies/imagenet.json"),
            PolicyName::SVHN => include_str!("../../policies/svhn.json"),
        };
        Self::from_json(text).expect("bundled policy files are valid")
    }
}

/// The three shipped policies, in CIFAR10, ImageNet, SVHN order.
pub fn bundled_policies() -> Vec<AugmentPolicy> {
    [PolicyName::CIFAR10, PolicyName::ImageNet, PolicyName::SVHN]
        .into_iter()
        .map(AugmentPolicy::bundled)
        .collect()
}

/// Picks one sub-policy uniformly and applies its two ops in order, each
/// firing independently with its own probability.
pub fn apply_policy(img: &ImageTensor, policy: &AugmentPolicy, rng: &mut SplitMix64) -> ImageTensor {
    let mut out = img.clone();
    let sub = &policy.sub_policies[rng.below(policy.sub_policies.len())];
    for op in sub {
        op.maybe_apply(&mut out, rng);
    }
    out
}
