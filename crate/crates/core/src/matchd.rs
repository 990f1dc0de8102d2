//! Sighting store and similarity search.
//!
//! Layout of a store directory:
//!
//! ```text
//! sightings.jsonl   one metadata line per sighting; a line is the commit point
//! latents.bin       embedding file, one record per sighting id
//! images/<id>.png   the uploaded image as received after decoding
//! ```
//!
//! A registration writes the image, then appends the latent, then appends the
//! metadata line. Replay trusts only committed lines, so a crash at any point
//! leaves at worst an orphan image or latent that a later write overwrites.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{crop, fit_square, ImageTensor};
use crate::ingest::{select_detection, Detector};
use crate::model::{
    append_embedding, decode_embeddings_lenient, distance, EmbeddingRecord, LatentVector, Margin,
    SiameseModel,
};

pub const SIGHTINGS_FILE: &str = "sightings.jsonl";
pub const LATENTS_FILE: &str = "latents.bin";
pub const IMAGES_DIR: &str = "images";
pub const DEFAULT_TOP_K: usize = 10;

/// Sighting metadata as stored on one log line and listed by the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SightingMeta {
    pub sighting_id: String,
    /// Relative to the store directory.
    pub image_ref: String,
    pub lat: f64,
    pub lon: f64,
    pub observed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SightingRecord {
    pub meta: SightingMeta,
    pub latent: LatentVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub sighting_id: String,
    pub distance: f64,
    pub similarity: f64,
}

/// max(0, 1 - d/m): 1 for identical latents, 0.5 at the decision threshold.
pub fn similarity(distance: f64, margin: Margin) -> f64 {
    (1.0 - distance / margin.value()).max(0.0)
}

pub fn check_coordinates(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::invalid(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::invalid(format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

/// Inclusive latitude/longitude box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl GeoBox {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self> {
        check_coordinates(min_lat, min_lon)?;
        check_coordinates(max_lat, max_lon)?;
        if min_lat > max_lat || min_lon > max_lon {
            return Err(Error::invalid("box minimum exceeds maximum"));
        }
        Ok(Self {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: String,
    pub model_checkpoint: String,
    pub latent_size: usize,
}

#[derive(Default)]
struct Index {
    records: Vec<SightingRecord>,
    by_id: HashMap<String, usize>,
}

/// The matching service over one store directory. Reads share a lock;
/// registrations are serialized by a writer mutex and become visible only
/// once fully persisted.
pub struct MatchService {
    model: SiameseModel,
    detector: Box<dyn Detector>,
    margin: Margin,
    dir: PathBuf,
    checkpoint_name: String,
    index: RwLock<Index>,
    next_id: Mutex<u64>,
}

impl std::fmt::Debug for MatchService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MatchService")
            .field("dir", &self.dir)
            .field("checkpoint", &self.checkpoint_name)
            .field("detector", &self.detector.describe())
            .finish()
    }
}

impl MatchService {
    /// Opens (or creates) the store and rebuilds the index from it. Refuses a
    /// store whose latents have a different length than the model's.
    pub fn open(
        dir: &Path,
        model: SiameseModel,
        detector: Box<dyn Detector>,
        margin: Margin,
        checkpoint_name: impl Into<String>,
    ) -> Result<Self> {
        if model.backbone.image_side().is_none() {
            return Err(Error::Unsupported("matching needs an image backbone".to_owned()));
        }
        std::fs::create_dir_all(dir.join(IMAGES_DIR)).map_err(|e| Error::io(dir, e))?;
        let (records, next) = replay(dir, model.latent_size())?;
        let by_id = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.meta.sighting_id.clone(), i))
            .collect();
        log::info!("store {}: {} sightings", dir.display(), records.len());
        Ok(Self {
            model,
            detector,
            margin,
            dir: dir.to_path_buf(),
            checkpoint_name: checkpoint_name.into(),
            index: RwLock::new(Index { records, by_id }),
            next_id: Mutex::new(next),
        })
    }

    pub fn latent_size(&self) -> usize {
        self.model.latent_size()
    }

    pub fn len(&self) -> usize {
        self.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".to_owned(),
            model_checkpoint: self.checkpoint_name.clone(),
            latent_size: self.latent_size(),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Index> {
        self.index.read().unwrap_or_else(|e| e.into_inner())
    }

    /// decode -> detect -> crop -> fit_square -> embed, snapped to the stored
    /// precision so live and replayed latents agree.
    pub fn embed_bytes(&self, bytes: &[u8]) -> Result<(ImageTensor, LatentVector)> {
        let img = ImageTensor::decode(bytes)
            .map_err(|e| Error::invalid(format!("undecodable image: {e}")))?;
        let boxes = self.detector.detect(&img)?;
        let bbox = select_detection(&boxes)
            .and_then(|b| b.clamped(img.width(), img.height()))
            .ok_or(Error::NoPetFound)?;
        let side = self.model.backbone.image_side().expect("checked at open");
        let fitted = fit_square(&crop(&img, &bbox)?, side)?;
        let latent = self.model.embed(&fitted)?.snapped();
        Ok((img, latent))
    }

    pub fn register_sighting(
        &self,
        image: &[u8],
        lat: f64,
        lon: f64,
        observed_at: DateTime<Utc>,
    ) -> Result<String> {
        check_coordinates(lat, lon)?;
        let (img, latent) = self.embed_bytes(image)?;

        let mut next = self.next_id.lock().unwrap_or_else(|e| e.into_inner());
        let id = format!("s{:08}", *next);
        let image_ref = format!("{IMAGES_DIR}/{id}.png");
        img.save_png(&self.dir.join(&image_ref))?;
        append_embedding(
            &self.dir.join(LATENTS_FILE),
            self.latent_size(),
            &EmbeddingRecord {
                id: id.clone(),
                values: latent.to_vec(),
            },
        )?;
        let meta = SightingMeta {
            sighting_id: id.clone(),
            image_ref,
            lat,
            lon,
            observed_at,
        };
        append_line(&self.dir.join(SIGHTINGS_FILE), &serde_json::to_string(&meta)?)?;
        *next += 1;

        let mut index = self.index.write().unwrap_or_else(|e| e.into_inner());
        let pos = index.records.len();
        index.by_id.insert(id.clone(), pos);
        index.records.push(SightingRecord { meta, latent });
        Ok(id)
    }

    /// Exact scan; ascending distance, ties broken by id.
    pub fn match_image(&self, image: &[u8], top_k: usize) -> Result<Vec<MatchResult>> {
        if top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        let (_, query) = self.embed_bytes(image)?;
        self.match_latent(&query, top_k)
    }

    pub fn match_latent(&self, query: &[f64], top_k: usize) -> Result<Vec<MatchResult>> {
        let index = self.read();
        let mut scored = index
            .records
            .iter()
            .map(|r| Ok((distance(query, &r.latent)?, r.meta.sighting_id.as_str())))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        Ok(scored
            .into_iter()
            .take(top_k)
            .map(|(d, id)| MatchResult {
                sighting_id: id.to_owned(),
                distance: d,
                similarity: similarity(d, self.margin),
            })
            .collect())
    }

    /// Newest first by observation time, then by id descending.
    pub fn list_sightings(&self, area: Option<&GeoBox>) -> Vec<SightingMeta> {
        let index = self.read();
        let mut out: Vec<SightingMeta> = index
            .records
            .iter()
            .filter(|r| area.is_none_or(|b| b.contains(r.meta.lat, r.meta.lon)))
            .map(|r| r.meta.clone())
            .collect();
        out.sort_by(|a, b| {
            b.observed_at
                .cmp(&a.observed_at)
                .then_with(|| b.sighting_id.cmp(&a.sighting_id))
        });
        out
    }

    pub fn get(&self, id: &str) -> Result<SightingRecord> {
        let index = self.read();
        index
            .by_id
            .get(id)
            .map(|&i| index.records[i].clone())
            .ok_or_else(|| Error::NotFound(format!("sighting {id}")))
    }

    pub fn image_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let rec = self.get(id)?;
        let path = self.dir.join(&rec.meta.image_ref);
        std::fs::read(&path).map_err(|e| Error::io(path, e))
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(format!("{line}\n").as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

fn truncate(path: &Path, len: u64) -> Result<()> {
    let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
    f.set_len(len).map_err(|e| Error::io(path, e))
}

/// Rebuilds the records in log order and returns the next free id number.
/// Torn tails of either file are cut off so later appends start clean.
fn replay(dir: &Path, latent_size: usize) -> Result<(Vec<SightingRecord>, u64)> {
    let latents_path = dir.join(LATENTS_FILE);
    let mut latents: HashMap<String, Vec<f64>> = HashMap::new();
    if latents_path.exists() {
        let bytes = std::fs::read(&latents_path).map_err(|e| Error::io(&latents_path, e))?;
        let file = if bytes.len() < 12 {
            None
        } else {
            Some(decode_embeddings_lenient(&bytes)?)
        };
        match file {
            Some(file) => {
                if file.dim != latent_size {
                    return Err(Error::Dimension {
                        expected: latent_size,
                        actual: file.dim,
                        context: "stored latents vs checkpoint latent size",
                    });
                }
                if file.torn_tail > 0 {
                    log::warn!("{}: dropping {} torn bytes", latents_path.display(), file.torn_tail);
                    truncate(&latents_path, (bytes.len() - file.torn_tail) as u64)?;
                }
                for r in file.records {
                    latents.insert(r.id, r.values);
                }
            }
            None => truncate(&latents_path, 0)?,
        }
    }

    let log_path = dir.join(SIGHTINGS_FILE);
    let mut records = Vec::new();
    let mut next = 0;
    if !log_path.exists() {
        return Ok((records, next));
    }
    let f = std::fs::File::open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut committed = 0u64;
    let mut reader = BufReader::new(f);
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| Error::io(&log_path, e))?;
        if read == 0 {
            break;
        }
        n += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: ignoring torn line {n}", log_path.display());
            truncate(&log_path, committed)?;
            break;
        }
        committed += read as u64;
        if line.trim().is_empty() {
            continue;
        }
        let meta: SightingMeta = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{n}: {e}", log_path.display())))?;
        let values = latents
            .get(&meta.sighting_id)
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(meta.sighting_id.clone()))?;
        if let Some(num) = meta.sighting_id.strip_prefix('s').and_then(|s| s.parse::<u64>().ok()) {
            next = next.max(num + 1);
        }
        records.push(SightingRecord {
            meta,
            latent: LatentVector::new(values)?,
        });
    }
    Ok((records, next))
}
