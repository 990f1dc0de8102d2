//! Procedural pet identities for desk-scale experiments.
//!
//! An identity is a coat: each colour channel carries a full-range triangle
//! wave stripe field with its own orientation and frequency. The coat fills
//! the frame. Every photo of the identity re-draws the stripe phases and
//! turns the coat by a few degrees.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub images_per_identity: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 32,
            images_per_identity: 4,
            width: 64,
            height: 64,
            seed: 0,
        }
    }
}

/// Stripe frequencies are log-uniform between these, in cycles per 64 pixels.
pub const MIN_CYCLES: f64 = 2.0;
pub const MAX_CYCLES: f64 = 16.0;

/// Stripe field of one colour channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stripes {
    pub angle: f64,
    /// Cycles per 64 pixels.
    pub cycles: f64,
}

/// Each RGB channel carries its own full-range stripe field.
#[derive(Debug, Clone, PartialEq)]
pub struct Coat {
    pub channels: [Stripes; 3],
}

impl Coat {
    pub fn for_identity(seed: u64, identity: usize) -> Self {
        let mut rng = SplitMix64::derive(seed, identity as u64);
        let mut draw = || Stripes {
            angle: rng.uniform(0.0, PI),
            cycles: rng.uniform(MIN_CYCLES.ln(), MAX_CYCLES.ln()).exp(),
        };
        Self {
            channels: [draw(), draw(), draw()],
        }
    }
}

/// Triangle wave with period 2 pi, ranging over [0, 1].
fn triangle(t: f64) -> f64 {
    let u = (t / (2.0 * PI)).rem_euclid(1.0);
    1.0 - (2.0 * u - 1.0).abs()
}

/// One photo of `coat`, drawn with `rng`: the coat fills the frame, with
/// fresh stripe phases and a slight turn each time.
pub fn render(coat: &Coat, width: u32, height: u32, rng: &mut SplitMix64) -> Result<ImageTensor> {
    let turn = rng.uniform(-0.06, 0.06);
    let waves: Vec<(f64, f64, f64)> = coat
        .channels
        .iter()
        .map(|s| {
            let (sin, cos) = (s.angle + turn).sin_cos();
            let k = 2.0 * PI * s.cycles / 64.0;
            (k * cos, k * sin, rng.uniform(0.0, 2.0 * PI))
        })
        .collect();
    let mut data = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            for &(kx, ky, phase) in &waves {
                let v = triangle(kx * x as f64 + ky * y as f64 + phase);
                data.push((v * 255.0).round() as u8);
            }
        }
    }
    ImageTensor::new(width, height, data)
}

/// Writes `dir/pet_NN/img_M.png` for every identity and photo, in the layout
/// corpus construction reads.
pub fn write_synthetic_input(dir: &Path, spec: &SyntheticSpec) -> Result<Vec<PathBuf>> {
    if spec.identities == 0 || spec.images_per_identity == 0 || spec.width == 0 || spec.height == 0 {
        return Err(Error::invalid("synthetic corpus needs identities, photos and a frame"));
    }
    let mut written = Vec::new();
    for id in 0..spec.identities {
        let coat = Coat::for_identity(spec.seed, id);
        let pet_dir = dir.join(format!("pet_{id:02}"));
        std::fs::create_dir_all(&pet_dir).map_err(|e| Error::io(&pet_dir, e))?;
        let mut rng = SplitMix64::derive(spec.seed ^ 0x70_686f_746f, id as u64);
        for n in 0..spec.images_per_identity {
            let path = pet_dir.join(format!("img_{n}.png"));
            render(&coat, spec.width, spec.height, &mut rng)?.save_png(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
