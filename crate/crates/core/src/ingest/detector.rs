//! Object detector adapters. Detection itself happens elsewhere; this module
//! only defines the box type, the adapters and the acceptance rule.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Label accepted by [`select_detection`].
pub const TARGET_LABEL: &str = "dog";
/// Minimum confidence accepted by [`select_detection`].
pub const MIN_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub label: String,
    pub confidence: f64,
}

impl BoundingBox {
    /// Unlabelled box, confidence 1.
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self {
            x,
            y,
            w,
            h,
            label: TARGET_LABEL.to_owned(),
            confidence: 1.0,
        }
    }

    pub fn whole(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    /// Intersection with a `width`x`height` frame, `None` if empty.
    pub fn clamped(&self, width: u32, height: u32) -> Option<Self> {
        let x0 = self.x.min(width);
        let y0 = self.y.min(height);
        let x1 = self.x.saturating_add(self.w).min(width);
        let y1 = self.y.saturating_add(self.h).min(height);
        (x1 > x0 && y1 > y0).then(|| Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            ..self.clone()
        })
    }
}

pub trait Detector: Send + Sync {
    fn detect(&self, img: &ImageTensor) -> Result<Vec<BoundingBox>>;

    fn describe(&self) -> String;
}

/// Reports the whole frame as a single confident dog.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubDetector;

impl Detector for StubDetector {
    fn detect(&self, img: &ImageTensor) -> Result<Vec<BoundingBox>> {
        Ok(vec![BoundingBox::whole(img.width(), img.height())])
    }

    fn describe(&self) -> String {
        "stub".to_owned()
    }
}

/// Box as sent by a remote detector; coordinates may be fractional.
#[derive(Debug, Deserialize)]
struct WireBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    label: String,
    confidence: f64,
}

/// Parses a remote detector response body: `[{x,y,w,h,label,confidence}]`.
pub fn parse_detections(body: &str) -> Result<Vec<BoundingBox>> {
    let wire: Vec<WireBox> = serde_json::from_str(body)?;
    wire.into_iter()
        .map(|b| {
            let finite = [b.x, b.y, b.w, b.h, b.confidence].iter().all(|v| v.is_finite());
            if !finite || b.w < 0.0 || b.h < 0.0 {
                return Err(Error::Detector(format!("malformed box {b:?}")));
            }
            Ok(BoundingBox {
                x: b.x.max(0.0).round() as u32,
                y: b.y.max(0.0).round() as u32,
                w: b.w.round() as u32,
                h: b.h.round() as u32,
                label: b.label,
                confidence: b.confidence.clamp(0.0, 1.0),
            })
        })
        .collect()
}

/// POSTs the PNG-encoded image to `url` and parses the JSON box list.
#[derive(Debug, Clone)]
pub struct RemoteDetector {
    url: String,
    agent: ureq::Agent,
}

impl RemoteDetector {
    pub fn new(url: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        Self {
            url: url.into(),
            agent: config.into(),
        }
    }
}

impl Detector for RemoteDetector {
    fn detect(&self, img: &ImageTensor) -> Result<Vec<BoundingBox>> {
        let png = img.encode_png()?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "image/png")
            .send(&png[..])
            .map_err(|e| Error::Detector(format!("{}: {e}", self.url)))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Detector(format!("{}: {e}", self.url)))?;
        parse_detections(&body)
    }

    fn describe(&self) -> String {
        self.url.clone()
    }
}

/// Keeps the single most confident `dog` box with confidence >= 0.9.
pub fn select_detection(boxes: &[BoundingBox]) -> Option<&BoundingBox> {
    boxes
        .iter()
        .filter(|b| b.label == TARGET_LABEL && b.confidence >= MIN_CONFIDENCE)
        .fold(None, |best: Option<&BoundingBox>, b| match best {
            Some(cur) if cur.confidence >= b.confidence => Some(cur),
            _ => Some(b),
        })
}
