//! Corpus construction: detect, crop, pad to a square, augment twice, and
//! record everything in a JSON-lines manifest.

mod detector;
mod manifest;

pub use detector::{
    parse_detections, select_detection, BoundingBox, Detector, RemoteDetector, StubDetector,
    MIN_CONFIDENCE, TARGET_LABEL,
};
pub use manifest::{CorpusStats, ImageRecord, Manifest, Split, MANIFEST_FILE};

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{self, apply_policy, AugmentPolicy, ImageTensor};
use crate::rng::SplitMix64;

/// Stored variants per accepted source image: the original plus two
/// augmentations.
pub const VARIANTS_PER_SOURCE: usize = 3;

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub seed: u64,
    pub heldout_fraction: f64,
    pub side: u32,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            heldout_fraction: 0.0,
            side: imaging::DEFAULT_SIDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedImage {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug)]
pub struct CorpusOutcome {
    pub manifest: Manifest,
    pub skipped: Vec<SkippedImage>,
}

struct Source {
    pet_id: String,
    file_name: String,
    path: PathBuf,
}

/// Builds the corpus under `out_dir` from `input_dir` (one sub-directory per
/// pet) and writes `out_dir/manifest.jsonl`.
pub fn build_corpus(
    input_dir: &Path,
    out_dir: &Path,
    detector: &dyn Detector,
    policies: &[AugmentPolicy],
    opts: &CorpusOptions,
) -> Result<CorpusOutcome> {
    if policies.is_empty() {
        return Err(Error::invalid("policy set is empty"));
    }
    if !(0.0..1.0).contains(&opts.heldout_fraction) {
        return Err(Error::invalid(format!(
            "heldout fraction {} outside [0, 1)",
            opts.heldout_fraction
        )));
    }
    let sources = list_sources(input_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let results: Vec<Result<Vec<ImageRecord>, SkippedImage>> = sources
        .par_iter()
        .enumerate()
        .map(|(index, src)| {
            process_source(src, index as u64, out_dir, detector, policies, opts).map_err(|e| {
                SkippedImage {
                    path: src.path.clone(),
                    reason: e.to_string(),
                }
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(recs) => records.extend(recs),
            Err(s) => {
                log::warn!("skipping {}: {}", s.path.display(), s.reason);
                skipped.push(s);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut pets: Vec<String> = records.iter().map(|r| r.pet_id.clone()).collect();
    pets.sort();
    pets.dedup();
    let heldout = heldout_pets(&pets, opts.heldout_fraction, opts.seed);
    for r in &mut records {
        if heldout.binary_search(&r.pet_id).is_ok() {
            r.split = Split::Heldout;
        }
    }

    let manifest = Manifest::new(out_dir.to_path_buf(), records)?;
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(CorpusOutcome { manifest, skipped })
}

/// Pets assigned to the held-out split, sorted. The count is
/// `round(fraction * pets)`; which pets is decided by a seeded shuffle.
pub fn heldout_pets(pets: &[String], fraction: f64, seed: u64) -> Vec<String> {
    let count = (fraction * pets.len() as f64).round() as usize;
    let mut order: Vec<String> = pets.to_vec();
    SplitMix64::derive(seed, u64::MAX).shuffle(&mut order);
    let mut held: Vec<String> = order.into_iter().take(count).collect();
    held.sort();
    held
}

fn list_sources(input_dir: &Path) -> Result<Vec<Source>> {
    let mut pets = sorted_entries(input_dir)?;
    pets.retain(|p| p.is_dir());
    let mut sources = Vec::new();
    for pet_dir in pets {
        let pet_id = file_name(&pet_dir);
        for path in sorted_entries(&pet_dir)? {
            if path.is_file() && !file_name(&path).starts_with('.') {
                sources.push(Source {
                    pet_id: pet_id.clone(),
                    file_name: file_name(&path),
                    path,
                });
            }
        }
    }
    Ok(sources)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn process_source(
    src: &Source,
    index: u64,
    out_dir: &Path,
    detector: &dyn Detector,
    policies: &[AugmentPolicy],
    opts: &CorpusOptions,
) -> Result<Vec<ImageRecord>> {
    let img = ImageTensor::load(&src.path)?;
    let boxes = detector.detect(&img)?;
    let bbox = select_detection(&boxes)
        .and_then(|b| b.clamped(img.width(), img.height()))
        .ok_or(Error::NoPetFound)?;
    let base = imaging::fit_square(&imaging::crop(&img, &bbox)?, opts.side)?;

    let mut rng = SplitMix64::derive(opts.seed, index);
    let mut variants = vec![base.clone()];
    for _ in 1..VARIANTS_PER_SOURCE {
        let policy = &policies[rng.below(policies.len())];
        variants.push(apply_policy(&base, policy, &mut rng));
    }

    let rel_dir = PathBuf::from("images").join(&src.pet_id);
    std::fs::create_dir_all(out_dir.join(&rel_dir)).map_err(|e| Error::io(out_dir.join(&rel_dir), e))?;
    let source_id = format!("{}/{}", src.pet_id, src.file_name);
    let stem = src.file_name.replace('.', "_");
    variants
        .iter()
        .enumerate()
        .map(|(variant, img)| {
            let rel = rel_dir.join(format!("{stem}_v{variant}.png"));
            img.save_png(&out_dir.join(&rel))?;
            Ok(ImageRecord {
                pet_id: src.pet_id.clone(),
                image_id: format!("{source_id}#{variant}"),
                source_id: source_id.clone(),
                variant: variant as u8,
                path: rel.to_string_lossy().replace('\\', "/"),
                split: Split::Train,
            })
        })
        .collect()
}
