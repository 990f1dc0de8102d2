//! Pure raster operations on 8-bit RGB images.
//!
//! Everything here is a function of its inputs; randomness enters only
//! through an explicit [`SplitMix64`](crate::rng::SplitMix64).

mod augment;
mod policy;

pub use augment::{magnitude_value, AugmentKind, AugmentOp};
pub use policy::{apply_policy, bundled_policies, AugmentPolicy, PolicyName};

use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{Error, Result};
use crate::ingest::BoundingBox;

/// Default square side of the model input raster.
pub const DEFAULT_SIDE: u32 = 384;

/// Row-major RGB raster, three 8-bit samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTensor {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl ImageTensor {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: data.len(),
                context: "image sample count",
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image with every pixel set to `rgb`.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let data = rgb.iter().copied().cycle().take(n * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self::from_rgb(img))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb()
            .write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    fn from_rgb(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            data: img.into_raw(),
        }
    }

    fn to_rgb(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("length invariant holds")
    }
}

/// Copies the pixels inside `bbox` verbatim.
pub fn crop(img: &ImageTensor, bbox: &BoundingBox) -> Result<ImageTensor> {
    let out_of_bounds = bbox.w == 0
        || bbox.h == 0
        || bbox.x as u64 + bbox.w as u64 > img.width as u64
        || bbox.y as u64 + bbox.h as u64 > img.height as u64;
    if out_of_bounds {
        return Err(Error::Bounds {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
            width: img.width,
            height: img.height,
        });
    }
    let row_len = bbox.w as usize * 3;
    let mut data = Vec::with_capacity(row_len * bbox.h as usize);
    for y in bbox.y..bbox.y + bbox.h {
        let start = img.offset(bbox.x, y);
        data.extend_from_slice(&img.data[start..start + row_len]);
    }
    ImageTensor::new(bbox.w, bbox.h, data)
}

/// Size of the content area once the longest side is scaled to `side`.
pub fn fitted_dims(width: u32, height: u32, side: u32) -> (u32, u32) {
    let scale_short = |short: u32, long: u32| -> u32 {
        let v = (short as f64 * side as f64 / long as f64).round() as u32;
        v.clamp(1, side)
    };
    if width >= height {
        (side, scale_short(height, width))
    } else {
        (scale_short(width, height), side)
    }
}

/// Scales the longest side to `side` (bilinear) and centres the result on a
/// black `side`x`side` canvas. Odd padding puts the extra pixel bottom/right.
pub fn fit_square(img: &ImageTensor, side: u32) -> Result<ImageTensor> {
    if side == 0 {
        return Err(Error::invalid("fit_square side must be at least 1"));
    }
    let (new_w, new_h) = fitted_dims(img.width, img.height, side);
    let content = if (new_w, new_h) == (img.width, img.height) {
        img.clone()
    } else {
        let resized = image::imageops::resize(&img.to_rgb(), new_w, new_h, FilterType::Triangle);
        ImageTensor::from_rgb(resized)
    };
    if new_w == side && new_h == side {
        return Ok(content);
    }
    let left = (side - new_w) / 2;
    let top = (side - new_h) / 2;
    let mut canvas = ImageTensor::filled(side, side, [0, 0, 0])?;
    let row_len = new_w as usize * 3;
    for y in 0..new_h {
        let src = content.offset(0, y);
        let dst = canvas.offset(left, top + y);
        canvas.data[dst..dst + row_len].copy_from_slice(&content.data[src..src + row_len]);
    }
    Ok(canvas)
}

/// Optional per-channel standardisation applied after scaling to `[0, 1]`.
/// The default is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for InputNorm {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Real-valued model input, `side * side * 3` values in HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub side: u32,
    pub values: Vec<f64>,
}

pub fn to_model_input(img: &ImageTensor) -> Result<ModelInput> {
    to_model_input_with(img, &InputNorm::default())
}

pub fn to_model_input_with(img: &ImageTensor, norm: &InputNorm) -> Result<ModelInput> {
    if img.width != img.height {
        return Err(Error::invalid(format!(
            "model input must be square, got {}x{}",
            img.width, img.height
        )));
    }
    let values = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % 3;
            (v as f64 / 255.0 - norm.mean[c]) / norm.std[c]
        })
        .collect();
    Ok(ModelInput {
        side: img.width,
        values,
    })
}
