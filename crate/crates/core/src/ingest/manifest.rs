use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// One stored image. Field order is the manifest line key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub pet_id: String,
    pub image_id: String,
    pub source_id: String,
    pub variant: u8,
    /// Relative to the manifest directory.
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub pets: usize,
    pub source_images: usize,
    pub records: usize,
    /// Source (pre-augmentation) images per pet.
    pub mean_images_per_pet: f64,
}

/// Ordered image records plus the directory their paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    root: PathBuf,
    records: Vec<ImageRecord>,
}

impl Manifest {
    /// Sorts by (pet_id, source_id, variant) and checks the invariants.
    pub fn new(root: PathBuf, mut records: Vec<ImageRecord>) -> Result<Self> {
        records.sort_by(|a, b| {
            (&a.pet_id, &a.source_id, a.variant).cmp(&(&b.pet_id, &b.source_id, b.variant))
        });
        let mut seen = HashSet::new();
        let mut ids = HashSet::new();
        let mut pet_split = BTreeMap::new();
        for r in &records {
            if r.variant > 2 {
                return Err(Error::Format(format!("{}: variant {} > 2", r.image_id, r.variant)));
            }
            if !seen.insert((r.source_id.as_str(), r.variant)) {
                return Err(Error::Format(format!(
                    "duplicate (source_id, variant) = ({}, {})",
                    r.source_id, r.variant
                )));
            }
            if !ids.insert(r.image_id.as_str()) {
                return Err(Error::Format(format!("duplicate image_id {}", r.image_id)));
            }
            if *pet_split.entry(r.pet_id.as_str()).or_insert(r.split) != r.split {
                return Err(Error::Format(format!("pet {} appears in both splits", r.pet_id)));
            }
        }
        Ok(Self { root, records })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn stats(&self) -> CorpusStats {
        let pets: HashSet<&str> = self.records.iter().map(|r| r.pet_id.as_str()).collect();
        let sources: HashSet<&str> = self.records.iter().map(|r| r.source_id.as_str()).collect();
        CorpusStats {
            pets: pets.len(),
            source_images: sources.len(),
            records: self.records.len(),
            mean_images_per_pet: if pets.is_empty() {
                0.0
            } else {
                sources.len() as f64 / pets.len() as f64
            },
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; record paths resolve against the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ImageRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pet: &str, src: &str, variant: u8, split: Split) -> ImageRecord {
        ImageRecord {
            pet_id: pet.into(),
            image_id: format!("{pet}/{src}#{variant}"),
            source_id: format!("{pet}/{src}"),
            variant,
            path: format!("images/{pet}/{src}_v{variant}.png"),
            split,
        }
    }

    #[test]
    fn line_keys_in_order() {
        let m = Manifest::new(PathBuf::new(), vec![rec("a", "1.png", 0, Split::Train)]).unwrap();
        assert_eq!(
            m.to_jsonl(),
            "{\"pet_id\":\"a\",\"image_id\":\"a/1.png#0\",\"source_id\":\"a/1.png\",\"variant\":0,\"path\":\"images/a/1.png_v0.png\",\"split\":\"train\"}\n"
        );
    }

    #[test]
    fn sorted_and_stats() {
        let m = Manifest::new(
            PathBuf::new(),
            vec![
                rec("b", "1", 1, Split::Train),
                rec("a", "2", 0, Split::Train),
                rec("a", "1", 2, Split::Train),
                rec("b", "1", 0, Split::Train),
            ],
        )
        .unwrap();
        let ids: Vec<_> = m.records().iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ["a/1#2", "a/2#0", "b/1#0", "b/1#1"]);
        let s = m.stats();
        assert_eq!((s.pets, s.source_images, s.records), (2, 3, 4));
        assert_eq!(s.mean_images_per_pet, 1.5);
    }

    #[test]
    fn rejects_invariant_violations() {
        let dup = vec![rec("a", "1", 0, Split::Train), rec("a", "1", 0, Split::Train)];
        assert!(Manifest::new(PathBuf::new(), dup).is_err());
        let split = vec![rec("a", "1", 0, Split::Train), rec("a", "2", 0, Split::Heldout)];
        assert!(Manifest::new(PathBuf::new(), split).is_err());
        assert!(Manifest::new(PathBuf::new(), vec![rec("a", "1", 3, Split::Train)]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(
            dir.path().to_path_buf(),
            vec![rec("a", "1", 0, Split::Heldout), rec("b", "1", 0, Split::Train)],
        )
        .unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        std::fs::write(&path, "{\"pet_id\":\"a\",\"image_id\":\"x\",\"source_id\":\"s\",\"variant\":0,\"path\":\"p\",\"split\":\"train\",\"extra\":1}\n").unwrap();
        assert!(matches!(Manifest::read(&path), Err(Error::Format(_))));
    }
}
