//! Individual augmentation operations and their magnitude scales.
//!
//! Level-to-physical mapping (level 0..=9, linear unless noted):
//!
//! | kind                              | level 9            |
//! |-----------------------------------|--------------------|
//! | ShearX, ShearY                    | shear factor 0.3   |
//! | TranslateX, TranslateY            | 150/331 of side    |
//! | Rotate                            | 30 degrees         |
//! | Color, Brightness, Contrast, Sharpness | factor 1 +- 0.9 |
//! | Posterize                         | 4 bits (level 0 = 8 bits) |
//! | Solarize                          | threshold 0 (level 0 = 255) |
//!
//! AutoContrast, Equalize and Invert ignore the level. Signed kinds flip
//! their magnitude with probability 1/2.

use serde::{Deserialize, Serialize};

use super::ImageTensor;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const MAX_LEVEL: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentKind {
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    Color,
    Brightness,
    Sharpness,
    Contrast,
    Posterize,
    Solarize,
    AutoContrast,
    Equalize,
    Invert,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 14] = [
        AugmentKind::ShearX,
        AugmentKind::ShearY,
        AugmentKind::TranslateX,
        AugmentKind::TranslateY,
        AugmentKind::Rotate,
        AugmentKind::Color,
        AugmentKind::Brightness,
        AugmentKind::Sharpness,
        AugmentKind::Contrast,
        AugmentKind::Posterize,
        AugmentKind::Solarize,
        AugmentKind::AutoContrast,
        AugmentKind::Equalize,
        AugmentKind::Invert,
    ];

    fn signed(self) -> bool {
        use AugmentKind::*;
        matches!(
            self,
            ShearX | ShearY | TranslateX | TranslateY | Rotate | Color | Brightness | Sharpness | Contrast
        )
    }
}

/// Physical magnitude for `level`, before any random sign flip.
pub fn magnitude_value(kind: AugmentKind, level: u8) -> f64 {
    use AugmentKind::*;
    let t = level.min(MAX_LEVEL) as f64 / MAX_LEVEL as f64;
    match kind {
        ShearX | ShearY => 0.3 * t,
        TranslateX | TranslateY => 150.0 / 331.0 * t,
        Rotate => 30.0 * t,
        Color | Brightness | Sharpness | Contrast => 0.9 * t,
        Posterize => 8.0 - (level.min(MAX_LEVEL) as f64 / 2.25).round(),
        Solarize => 255.0 * (1.0 - t),
        AutoContrast | Equalize | Invert => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOp {
    pub kind: AugmentKind,
    pub probability: f64,
    pub magnitude: u8,
}

impl AugmentOp {
    pub fn new(kind: AugmentKind, probability: f64, magnitude: u8) -> Result<Self> {
        let op = Self {
            kind,
            probability,
            magnitude,
        };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::invalid(format!(
                "{:?}: probability {} outside [0, 1]",
                self.kind, self.probability
            )));
        }
        if self.magnitude > MAX_LEVEL {
            return Err(Error::invalid(format!(
                "{:?}: magnitude level {} outside 0..={MAX_LEVEL}",
                self.kind, self.magnitude
            )));
        }
        Ok(())
    }

    /// Fires with `probability`; returns whether the op was applied.
    pub fn maybe_apply(&self, img: &mut ImageTensor, rng: &mut SplitMix64) -> bool {
        if !rng.bernoulli(self.probability) {
            return false;
        }
        let mut value = magnitude_value(self.kind, self.magnitude);
        if self.kind.signed() && rng.bernoulli(0.5) {
            value = -value;
        }
        apply_kind(img, self.kind, value);
        true
    }
}

/// Applies `kind` with an already-resolved physical magnitude.
pub fn apply_kind(img: &mut ImageTensor, kind: AugmentKind, value: f64) {
    use AugmentKind::*;
    match kind {
        ShearX => affine(img, |x, y| (x + value * y, y)),
        ShearY => affine(img, |x, y| (x, y + value * x)),
        TranslateX => {
            let shift = (value * img.width() as f64).trunc();
            affine(img, |x, y| (x - shift, y))
        }
        TranslateY => {
            let shift = (value * img.height() as f64).trunc();
            affine(img, |x, y| (x, y - shift))
        }
        Rotate => rotate(img, value),
        Color => {
            let gray = grayscale(img);
            blend_with(img, |i, _| gray[i / 3], 1.0 + value)
        }
        Brightness => blend_with(img, |_, _| 0, 1.0 + value),
        Contrast => {
            let gray = grayscale(img);
            let mean = gray.iter().map(|&g| g as f64).sum::<f64>() / gray.len() as f64;
            let level = (mean + 0.5) as u8;
            blend_with(img, |_, _| level, 1.0 + value)
        }
        Sharpness => {
            let smooth = smoothed(img);
            blend_with(img, |i, _| smooth[i], 1.0 + value)
        }
        Posterize => {
            let bits = value as u32;
            let mask = !((1u16 << (8 - bits)) - 1) as u8;
            img.data_mut().iter_mut().for_each(|p| *p &= mask);
        }
        Solarize => img
            .data_mut()
            .iter_mut()
            .for_each(|p| {
                if *p as f64 >= value {
                    *p = 255 - *p
                }
            }),
        AutoContrast => per_channel_lut(img, autocontrast_lut),
        Equalize => per_channel_lut(img, equalize_lut),
        Invert => img.data_mut().iter_mut().for_each(|p| *p = 255 - *p),
    }
}

/// Inverse-mapped geometric transform, nearest neighbour, black fill.
/// `src` maps output pixel-centre coordinates to source coordinates.
fn affine(img: &mut ImageTensor, src: impl Fn(f64, f64) -> (f64, f64)) {
    let (w, h) = (img.width(), img.height());
    let source = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f64 + 0.5, y as f64 + 0.5);
            let (sx, sy) = (sx.floor(), sy.floor());
            let rgb = if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
                source.pixel(sx as u32, sy as u32)
            } else {
                [0, 0, 0]
            };
            img.set_pixel(x, y, rgb);
        }
    }
}

/// Counter-clockwise rotation about the image centre.
fn rotate(img: &mut ImageTensor, degrees: f64) {
    let (cx, cy) = (img.width() as f64 / 2.0, img.height() as f64 / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    affine(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cos * dx - sin * dy + cx, sin * dx + cos * dy + cy)
    })
}

/// ITU-R 601-2 luma, fixed point, one value per pixel.
fn grayscale(img: &ImageTensor) -> Vec<u8> {
    img.data()
        .chunks_exact(3)
        .map(|p| {
            ((p[0] as u32 * 19595 + p[1] as u32 * 38470 + p[2] as u32 * 7471 + 0x8000) >> 16) as u8
        })
        .collect()
}

/// `out = degenerate + factor * (img - degenerate)`, truncated and clipped.
fn blend_with(img: &mut ImageTensor, degenerate: impl Fn(usize, u8) -> u8, factor: f64) {
    for (i, p) in img.data_mut().iter_mut().enumerate() {
        let d = degenerate(i, *p) as f64;
        let v = d + factor * (*p as f64 - d);
        *p = v.trunc().clamp(0.0, 255.0) as u8;
    }
}

/// 3x3 smoothing kernel [[1,1,1],[1,5,1],[1,1,1]]/13; border pixels are kept.
fn smoothed(img: &ImageTensor) -> Vec<u8> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.data();
    let mut out = src.to_vec();
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut acc = 0u32;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let weight = if dx == 1 && dy == 1 { 5 } else { 1 };
                        acc += weight * src[((y + dy - 1) * w + x + dx - 1) * 3 + c] as u32;
                    }
                }
                out[(y * w + x) * 3 + c] = ((acc + 6) / 13) as u8;
            }
        }
    }
    out
}

fn per_channel_lut(img: &mut ImageTensor, build: fn(&[u64; 256]) -> Option<[u8; 256]>) {
    for c in 0..3 {
        let mut hist = [0u64; 256];
        for p in img.data().chunks_exact(3) {
            hist[p[c] as usize] += 1;
        }
        if let Some(lut) = build(&hist) {
            for p in img.data_mut().chunks_exact_mut(3) {
                p[c] = lut[p[c] as usize];
            }
        }
    }
}

/// Linear stretch of `[min, max]` onto `[0, 255]`; `None` when flat.
pub(crate) fn autocontrast_lut(hist: &[u64; 256]) -> Option<[u8; 256]> {
    let lo = hist.iter().position(|&h| h > 0)?;
    let hi = hist.iter().rposition(|&h| h > 0)?;
    if hi <= lo {
        return None;
    }
    let scale = 255.0 / (hi - lo) as f64;
    let offset = -(lo as f64) * scale;
    let mut lut = [0u8; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = (i as f64 * scale + offset).trunc().clamp(0.0, 255.0) as u8;
    }
    Some(lut)
}

/// Cumulative-histogram equalisation; `None` when the channel has a single
/// populated level (nothing to spread).
pub(crate) fn equalize_lut(hist: &[u64; 256]) -> Option<[u8; 256]> {
    let populated: Vec<u64> = hist.iter().copied().filter(|&h| h > 0).collect();
    if populated.len() <= 1 {
        return None;
    }
    let total: u64 = populated.iter().sum();
    let step = (total - populated[populated.len() - 1]) / 255;
    if step == 0 {
        return None;
    }
    let mut lut = [0u8; 256];
    let mut n = step / 2;
    for (i, v) in lut.iter_mut().enumerate() {
        *v = (n / step).min(255) as u8;
        n += hist[i];
    }
    Some(lut)
}
