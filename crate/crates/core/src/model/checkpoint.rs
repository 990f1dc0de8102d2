//! Model checkpoint file.
//!
//! ```text
//! "LPAW" | u32 version = 1 | u32 latent | u32 feature_dim
//! 3 x ( u32 rows | u32 cols | rows*cols f32 weights | rows f32 bias )
//! u32 backbone tag: 0 = none (precomputed features), 1 = toy transformer
//! tag 1: u32 image_side | u32 patch_size | u32 depth | u32 width | u32 heads
//!        | u32 pooling (0 flatten, 1 mean) | u32 seed low | u32 seed high
//!        | u32 value count | f32 values
//! ```
//!
//! All integers and reals are little-endian; weights are row-major.

use std::path::Path;

use super::backbone::{BackboneConfig, BackboneKind, Pooling, ToyVit};
use super::codec::{Reader, Writer};
use super::head::{HeadParams, Linear};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LPAW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub head: HeadParams,
    pub backbone: Option<ToyVit>,
}

impl Checkpoint {
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.head.bitwise_eq(&other.head)
            && match (&self.backbone, &other.backbone) {
                (None, None) => true,
                (Some(a), Some(b)) => a.bitwise_eq(b),
                _ => false,
            }
    }
}

pub fn encode_checkpoint(head: &HeadParams, backbone: Option<&ToyVit>) -> Result<Vec<u8>> {
    head.validate()?;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.len(head.latent_size())?;
    w.len(head.feature_dim())?;
    for layer in &head.layers {
        w.len(layer.rows)?;
        w.len(layer.cols)?;
        w.f32s(&layer.weight);
        w.f32s(&layer.bias);
    }
    match backbone {
        None => w.u32(0),
        Some(vit) => {
            let cfg = &vit.config;
            w.u32(1);
            w.u32(cfg.image_side);
            w.u32(cfg.patch_size);
            w.len(cfg.depth)?;
            w.len(cfg.width)?;
            w.len(cfg.heads)?;
            w.u32(match cfg.pooling {
                Pooling::Flatten => 0,
                Pooling::MeanPool => 1,
            });
            w.u32(cfg.seed as u32);
            w.u32((cfg.seed >> 32) as u32);
            w.len(vit.parameter_count())?;
            for t in vit.tensors() {
                w.f32s(t);
            }
        }
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let latent = r.len("latent size")?;
    let feature_dim = r.len("feature dim")?;
    let expected = [
        (2 * latent, feature_dim),
        (2 * latent, 2 * latent),
        (latent, 2 * latent),
    ];
    let mut layers = Vec::with_capacity(3);
    for (i, (rows, cols)) in expected.into_iter().enumerate() {
        let (r_rows, r_cols) = (r.len("layer rows")?, r.len("layer cols")?);
        if (r_rows, r_cols) != (rows, cols) {
            return Err(Error::Format(format!(
                "layer {} is {r_rows}x{r_cols}, header implies {rows}x{cols}",
                i + 1
            )));
        }
        let weight = r.f32s(rows * cols, "layer weights")?;
        let bias = r.f32s(rows, "layer bias")?;
        layers.push(Linear {
            rows,
            cols,
            weight,
            bias,
        });
    }
    let head = HeadParams {
        layers: layers.try_into().expect("three layers"),
    };

    let backbone = match r.u32("backbone tag")? {
        0 => None,
        1 => {
            let image_side = r.u32("image side")?;
            let patch_size = r.u32("patch size")?;
            let depth = r.len("depth")?;
            let width = r.len("width")?;
            let heads = r.len("heads")?;
            let pooling = match r.u32("pooling")? {
                0 => Pooling::Flatten,
                1 => Pooling::MeanPool,
                other => return Err(Error::Format(format!("unknown pooling tag {other}"))),
            };
            let seed_lo = r.u32("backbone seed")? as u64;
            let seed = seed_lo | (r.u32("backbone seed")? as u64) << 32;
            let config = BackboneConfig {
                kind: BackboneKind::ToyViT,
                image_side,
                patch_size,
                depth,
                width,
                heads,
                pooling,
                seed,
            };
            config.validate().map_err(|e| Error::Format(e.to_string()))?;
            let mut vit = ToyVit::init(config)?;
            let count = r.len("backbone value count")?;
            if count != vit.parameter_count() {
                return Err(Error::Format(format!(
                    "backbone stores {count} values, config needs {}",
                    vit.parameter_count()
                )));
            }
            for t in vit.tensors_mut() {
                let values = r.f32s(t.len(), "backbone values")?;
                t.copy_from_slice(&values);
            }
            Some(vit)
        }
        other => return Err(Error::Format(format!("unknown backbone tag {other}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after offset {}",
            r.remaining(),
            r.position()
        )));
    }
    head.validate().map_err(|e| Error::Format(e.to_string()))?;
    if let Some(vit) = &backbone {
        if vit.config.feature_dim() != head.feature_dim() {
            return Err(Error::Format(format!(
                "backbone emits {} features, head expects {}",
                vit.config.feature_dim(),
                head.feature_dim()
            )));
        }
    }
    Ok(Checkpoint { head, backbone })
}

pub fn write_checkpoint(path: &Path, head: &HeadParams, backbone: Option<&ToyVit>) -> Result<()> {
    let bytes = encode_checkpoint(head, backbone)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vit() -> ToyVit {
        ToyVit::init(BackboneConfig {
            image_side: 32,
            patch_size: 16,
            width: 8,
            heads: 2,
            depth: 1,
            pooling: Pooling::MeanPool,
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_bitwise() {
        let head = HeadParams::init(8, 4, 17);
        let backbone = vit();
        let bytes = encode_checkpoint(&head, Some(&backbone)).unwrap();
        assert_eq!(&bytes[..4], b"LPAW");
        let back = decode_checkpoint(&bytes).unwrap();
        assert!(back.head.bitwise_eq(&head));
        assert!(back.backbone.unwrap().bitwise_eq(&backbone));
        assert_eq!(encode_checkpoint(&back.head, None).unwrap(), encode_checkpoint(&head, None).unwrap());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_checkpoint(&HeadParams::init(8, 4, 1), Some(&vit())).unwrap();
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn version_and_magic() {
        let mut bytes = encode_checkpoint(&HeadParams::init(4, 2, 1), None).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_checkpoint(&HeadParams::init(4, 2, 1), None).unwrap();
        bytes.push(0);
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
