//! Embedding file: named real vectors of one fixed dimension.
//!
//! ```text
//! "LPAE" | u32 version = 1 | u32 dim
//! repeated: u32 id_len | id_len bytes UTF-8 id | dim f32 values
//! ```
//!
//! There is no record count, so files can be appended to.

use std::io::Write;
use std::path::Path;

use super::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"LPAE";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub values: Vec<f64>,
}

pub fn encode_header(dim: usize) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(EMBEDDING_MAGIC);
    w.u32(EMBEDDING_VERSION);
    w.len(dim)?;
    Ok(w.buf)
}

pub fn encode_record(record: &EmbeddingRecord, dim: usize) -> Result<Vec<u8>> {
    if record.values.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: record.values.len(),
            context: "embedding record",
        });
    }
    let mut w = Writer::new();
    w.len(record.id.len())?;
    w.bytes(record.id.as_bytes());
    w.f32s(&record.values);
    Ok(w.buf)
}

pub fn encode_embeddings(dim: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let mut out = encode_header(dim)?;
    for r in records {
        out.extend(encode_record(r, dim)?);
    }
    Ok(out)
}

/// Parsed file plus the byte length of the complete records.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
    /// Bytes after the last complete record (a torn append).
    pub torn_tail: usize,
}

fn decode(bytes: &[u8], allow_torn_tail: bool) -> Result<EmbeddingFile> {
    let mut r = Reader::new(bytes);
    r.header(EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
    let dim = r.len("dimension")?;
    let mut records = Vec::new();
    while r.remaining() > 0 {
        let start = r.position();
        let record = (|| -> Result<EmbeddingRecord> {
            let len = r.len("id length")?;
            let id = std::str::from_utf8(r.take(len, "id")?)
                .map_err(|e| Error::Format(format!("id is not UTF-8: {e}")))?
                .to_owned();
            let values = r.f32s(dim, "values")?;
            Ok(EmbeddingRecord { id, values })
        })();
        match record {
            Ok(rec) => records.push(rec),
            Err(Error::Format(_)) if allow_torn_tail => {
                return Ok(EmbeddingFile {
                    dim,
                    records,
                    torn_tail: bytes.len() - start,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EmbeddingFile {
        dim,
        records,
        torn_tail: 0,
    })
}

/// Strict decode: any incomplete record is an error.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingFile> {
    decode(bytes, false)
}

/// Decode that stops at an incomplete trailing record instead of failing.
pub fn decode_embeddings_lenient(bytes: &[u8]) -> Result<EmbeddingFile> {
    decode(bytes, true)
}

pub fn write_embeddings(path: &Path, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    let bytes = encode_embeddings(dim, records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

/// Appends one record, creating the file with a header if needed.
pub fn append_embedding(path: &Path, dim: usize, record: &EmbeddingRecord) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() < HEADER_LEN as u64).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut bytes = if fresh { encode_header(dim)? } else { Vec::new() };
    bytes.extend(encode_record(record, dim)?);
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, v: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            values: v.iter().map(|&x| x as f64).collect(),
        }
    }

    #[test]
    fn round_trip() {
        let records = vec![rec("a", &[1.5, -2.25]), rec("ünï", &[0.1, 1e-30])];
        let bytes = encode_embeddings(2, &records).unwrap();
        let back = decode_embeddings(&bytes).unwrap();
        assert_eq!(back.records, records);
        assert_eq!(encode_embeddings(2, &back.records).unwrap(), bytes);
    }

    #[test]
    fn strict_vs_lenient_tail() {
        let bytes = encode_embeddings(3, &[rec("a", &[1.0, 2.0, 3.0]), rec("b", &[4.0, 5.0, 6.0])]).unwrap();
        let torn = &bytes[..bytes.len() - 2];
        assert!(matches!(decode_embeddings(torn), Err(Error::Format(_))));
        let lenient = decode_embeddings_lenient(torn).unwrap();
        assert_eq!(lenient.records.len(), 1);
        assert_eq!(lenient.torn_tail, 4 + 1 + 12 - 2);
    }

    #[test]
    fn header_violations() {
        let mut bytes = encode_embeddings(1, &[]).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_embeddings(&bytes), Err(Error::UnsupportedVersion { found: 9, .. })));
        assert!(matches!(decode_embeddings(b"LPAWxxxxxxxx"), Err(Error::Format(_))));
        assert!(decode_embeddings(&encode_embeddings(1, &[]).unwrap()[..10]).is_err());
    }

    #[test]
    fn append_creates_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        append_embedding(&path, 2, &rec("x", &[1.0, 2.0])).unwrap();
        append_embedding(&path, 2, &rec("y", &[3.0, 4.0])).unwrap();
        let f = read_embeddings(&path).unwrap();
        assert_eq!(f.records, vec![rec("x", &[1.0, 2.0]), rec("y", &[3.0, 4.0])]);
        assert!(append_embedding(&path, 2, &rec("z", &[1.0])).is_err());
    }
}
