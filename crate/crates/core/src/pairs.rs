//! Seeded same/different pair generation and sequential fold assignment.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ImageRecord, Manifest, Split};
pub use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Same,
    Different,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub a: String,
    pub b: String,
    pub label: Label,
}

struct PetImages {
    /// Record indices grouped by source image.
    by_source: Vec<Vec<usize>>,
    images: Vec<usize>,
}

/// Per-pet image index of one split, ready for sampling.
pub struct PairPool<'m> {
    records: Vec<&'m ImageRecord>,
    pets: Vec<PetImages>,
    eligible_same: usize,
}

impl<'m> PairPool<'m> {
    pub fn new(manifest: &'m Manifest, split: Split) -> Self {
        let records: Vec<&ImageRecord> = manifest.split_records(split).collect();
        let mut grouped: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            grouped
                .entry(r.pet_id.as_str())
                .or_default()
                .entry(r.source_id.as_str())
                .or_default()
                .push(i);
        }
        let pets: Vec<PetImages> = grouped
            .into_values()
            .map(|sources| {
                let by_source: Vec<Vec<usize>> = sources.into_values().collect();
                let images = by_source.iter().flatten().copied().collect();
                PetImages { by_source, images }
            })
            .collect();
        let eligible_same = pets.iter().filter(|p| p.by_source.len() >= 2).count();
        Self {
            records,
            pets,
            eligible_same,
        }
    }

    pub fn pet_count(&self) -> usize {
        self.pets.len()
    }

    pub fn image_count(&self) -> usize {
        self.records.len()
    }

    /// Checks that pairs with this `p_same` can be drawn at all.
    pub fn check(&self, p_same: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p_same) {
            return Err(Error::invalid(format!("p_same {p_same} outside [0, 1]")));
        }
        if p_same < 1.0 && self.pets.len() < 2 {
            return Err(Error::invalid(format!(
                "different pairs need at least 2 pets, split has {}",
                self.pets.len()
            )));
        }
        if p_same > 0.0 && self.eligible_same == 0 {
            return Err(Error::invalid(
                "same pairs need a pet with at least 2 source images; none exists",
            ));
        }
        Ok(())
    }

    /// Draws one pair. Callers should [`check`](Self::check) first; an
    /// impossible request is reported as an error here too.
    pub fn sample(&self, p_same: f64, rng: &mut SplitMix64) -> Result<PairSample> {
        self.check(p_same)?;
        let (a, b, label) = if rng.bernoulli(p_same) {
            let pet = loop {
                let candidate = &self.pets[rng.below(self.pets.len())];
                if candidate.by_source.len() >= 2 {
                    break candidate;
                }
            };
            let a = pet.images[rng.below(pet.images.len())];
            let a_source = &self.records[a].source_id;
            let others: Vec<usize> = pet
                .images
                .iter()
                .copied()
                .filter(|&i| &self.records[i].source_id != a_source)
                .collect();
            let b = others[rng.below(others.len())];
            (a, b, Label::Same)
        } else {
            let first = rng.below(self.pets.len());
            let mut second = rng.below(self.pets.len() - 1);
            if second >= first {
                second += 1;
            }
            let pa = &self.pets[first];
            let pb = &self.pets[second];
            let a = pa.images[rng.below(pa.images.len())];
            let b = pb.images[rng.below(pb.images.len())];
            (a, b, Label::Different)
        };
        Ok(PairSample {
            a: self.records[a].image_id.clone(),
            b: self.records[b].image_id.clone(),
            label,
        })
    }
}

/// Endless deterministic pair sequence from one seeded generator.
pub struct PairStream<'m> {
    pool: PairPool<'m>,
    p_same: f64,
    rng: SplitMix64,
}

impl<'m> PairStream<'m> {
    pub fn new(manifest: &'m Manifest, split: Split, p_same: f64, seed: u64) -> Result<Self> {
        let pool = PairPool::new(manifest, split);
        pool.check(p_same)?;
        Ok(Self {
            pool,
            p_same,
            rng: SplitMix64::new(seed),
        })
    }

    pub fn next_pair(&mut self) -> PairSample {
        self.pool
            .sample(self.p_same, &mut self.rng)
            .expect("pool checked at construction")
    }
}

impl Iterator for PairStream<'_> {
    type Item = PairSample;

    fn next(&mut self) -> Option<PairSample> {
        Some(self.next_pair())
    }
}

/// Exactly `count` pairs from a generator seeded with `seed`.
pub fn pair_stream(
    manifest: &Manifest,
    split: Split,
    p_same: f64,
    seed: u64,
    count: usize,
) -> Result<Vec<PairSample>> {
    if count == 0 {
        return Err(Error::invalid("pair count must be at least 1"));
    }
    Ok(PairStream::new(manifest, split, p_same, seed)?
        .take(count)
        .collect())
}

/// Writes `{a, b, label}` JSON lines.
pub fn write_pairs_jsonl(pairs: &[PairSample], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for p in pairs {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Pair `i` belongs to fold `i mod k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    pair_count: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn fold_of(&self, pair_index: usize) -> usize {
        pair_index % self.k
    }

    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for i in 0..self.pair_count {
            folds[self.fold_of(i)].push(i);
        }
        folds
    }
}

pub fn assign_folds(pair_count: usize, k: usize) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("fold count must be at least 2, got {k}")));
    }
    if pair_count < k {
        return Err(Error::invalid(format!(
            "{pair_count} pairs cannot fill {k} folds"
        )));
    }
    Ok(FoldAssignment { k, pair_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    pub(crate) fn toy_manifest(pets: &[(&str, usize)], split: Split) -> Manifest {
        let mut records = Vec::new();
        for (pet, sources) in pets {
            for s in 0..*sources {
                for v in 0..3u8 {
                    records.push(ImageRecord {
                        pet_id: pet.to_string(),
                        image_id: format!("{pet}/{s}#{v}"),
                        source_id: format!("{pet}/{s}"),
                        variant: v,
                        path: String::new(),
                        split,
                    });
                }
            }
        }
        Manifest::new(PathBuf::new(), records).unwrap()
    }

    #[test]
    fn forced_same() {
        let m = toy_manifest(&[("rex", 2)], Split::Train);
        let pool = PairPool::new(&m, Split::Train);
        let mut rng = SplitMix64::new(1);
        for _ in 0..50 {
            let p = pool.sample(1.0, &mut rng).unwrap();
            assert_eq!(p.label, Label::Same);
            assert_ne!(p.a.split('#').next(), p.b.split('#').next());
        }
    }

    #[test]
    fn forced_different() {
        let m = toy_manifest(&[("a", 1), ("b", 1), ("c", 3)], Split::Train);
        let pool = PairPool::new(&m, Split::Train);
        let mut rng = SplitMix64::new(2);
        for _ in 0..50 {
            let p = pool.sample(0.0, &mut rng).unwrap();
            assert_eq!(p.label, Label::Different);
            assert_ne!(p.a.split('/').next(), p.b.split('/').next());
        }
    }

    #[test]
    fn impossible_requests() {
        let single_sources = toy_manifest(&[("a", 1), ("b", 1)], Split::Train);
        assert!(PairStream::new(&single_sources, Split::Train, 0.5, 0).is_err());
        assert!(PairStream::new(&single_sources, Split::Train, 0.0, 0).is_ok());
        let one_pet = toy_manifest(&[("a", 3)], Split::Train);
        assert!(PairStream::new(&one_pet, Split::Train, 0.5, 0).is_err());
        assert!(PairStream::new(&one_pet, Split::Train, 1.0, 0).is_ok());
        assert!(PairStream::new(&one_pet, Split::Train, 1.5, 0).is_err());
    }

    #[test]
    fn same_resamples_past_single_image_pets() {
        let m = toy_manifest(&[("a", 1), ("b", 1), ("c", 2)], Split::Train);
        for p in pair_stream(&m, Split::Train, 1.0, 11, 100).unwrap() {
            assert!(p.a.starts_with("c/") && p.b.starts_with("c/"));
        }
    }

    #[test]
    fn golden_pairs_seed_42() {
        // Recorded once from the SplitMix64 stream and cross-checked against
        // an independent re-implementation of the sampling rules.
        let m = toy_manifest(&[("a", 2), ("b", 3), ("c", 1)], Split::Train);
        let pairs = pair_stream(&m, Split::Train, 0.5, 42, 4).unwrap();
        let rendered: Vec<String> = pairs
            .iter()
            .map(|p| format!("{} {} {:?}", p.a, p.b, p.label))
            .collect();
        assert_eq!(rendered, GOLDEN_42);
    }

    const GOLDEN_42: [&str; 4] = [
        "a/0#2 b/0#0 Different",
        "a/0#2 c/0#1 Different",
        "b/1#1 b/2#0 Same",
        "a/0#2 b/0#0 Different",
    ];

    #[test]
    fn zero_count_rejected() {
        let m = toy_manifest(&[("a", 2), ("b", 2)], Split::Train);
        assert!(pair_stream(&m, Split::Train, 0.5, 1, 0).is_err());
    }

    #[test]
    fn one_epoch_of_pairs() {
        let m = toy_manifest(&[("a", 2), ("b", 2)], Split::Train);
        assert_eq!(pair_stream(&m, Split::Train, 0.5, 1, 8 * 128).unwrap().len(), 1024);
    }

    #[test]
    fn split_filtering() {
        let mut m = toy_manifest(&[("a", 2), ("b", 2)], Split::Train).records().to_vec();
        m.extend(toy_manifest(&[("h1", 2), ("h2", 2)], Split::Heldout).records().to_vec());
        let m = Manifest::new(PathBuf::new(), m).unwrap();
        for p in pair_stream(&m, Split::Heldout, 0.5, 5, 200).unwrap() {
            assert!(p.a.starts_with('h') && p.b.starts_with('h'));
        }
    }

    #[test]
    fn sequential_folds() {
        let f = assign_folds(9, 3).unwrap();
        assert_eq!(f.folds(), vec![vec![0, 3, 6], vec![1, 4, 7], vec![2, 5, 8]]);
        let sizes: Vec<usize> = assign_folds(10, 3).unwrap().folds().iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 3, 3]);
        assert!(assign_folds(10, 1).is_err());
        assert!(assign_folds(2, 3).is_err());
    }

    #[test]
    fn jsonl_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs = vec![PairSample {
            a: "x".into(),
            b: "y".into(),
            label: Label::Same,
        }];
        write_pairs_jsonl(&pairs, &path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "{\"a\":\"x\",\"b\":\"y\",\"label\":\"same\"}\n");
    }
}
