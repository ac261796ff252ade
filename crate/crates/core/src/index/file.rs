//! Versioned binary index file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HR4IDX" <version byte '1'> <0x00>
//! u32 manifest length, manifest JSON (UTF-8)
//! per record: u32 id length, id bytes, d × f32 full view, d × f32 metadata view
//! ```
//!
//! The manifest checksum is the hex SHA-256 of the record section.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DualEmbeddingRecord, DualIndex, IndexError, IndexManifest};

pub const MAGIC: &[u8; 8] = b"HR4IDX1\0";
pub const FORMAT_VERSION: u8 = b'1';
const MAGIC_PREFIX: &[u8] = b"HR4IDX";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexWarning {
    EmbedderMismatch { stored: String, configured: String },
}

impl std::fmt::Display for IndexWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IndexWarning::EmbedderMismatch { stored, configured } => write!(
                f,
                "index was built with embedder {stored} but {configured} is configured; query vectors may not be comparable"
            ),
        }
    }
}

pub(super) fn encode_records(records: &[DualEmbeddingRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in records {
        buf.extend_from_slice(&(r.model_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(r.model_id.as_bytes());
        for x in r.v_full.iter().chain(&r.v_meta) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn persist_index(index: &DualIndex, path: &Path) -> Result<(), IndexError> {
    let manifest = serde_json::to_vec(index.manifest()).expect("manifest serializes");
    let records = encode_records(index.records());
    let mut buf = Vec::with_capacity(MAGIC.len() + 4 + manifest.len() + records.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    buf.extend_from_slice(&manifest);
    buf.extend_from_slice(&records);
    fs::write(path, buf).map_err(|source| IndexError::Io { path: path.display().to_string(), source })
}

/// Loads and verifies an index file. When `configured_embedder` differs from
/// the stored embedder id the load still succeeds, with a warning.
pub fn load_index(
    path: &Path,
    configured_embedder: Option<&str>,
) -> Result<(DualIndex, Vec<IndexWarning>), IndexError> {
    let bytes = fs::read(path).map_err(|source| IndexError::Io { path: path.display().to_string(), source })?;
    let index = decode(&bytes)?;
    let mut warnings = Vec::new();
    if let Some(configured) = configured_embedder {
        if configured != index.manifest().embedder_id {
            let w = IndexWarning::EmbedderMismatch {
                stored: index.manifest().embedder_id.clone(),
                configured: configured.to_string(),
            };
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    Ok((index, warnings))
}

fn decode(bytes: &[u8]) -> Result<DualIndex, IndexError> {
    if bytes.len() < MAGIC.len() {
        if bytes.starts_with(&MAGIC[..bytes.len()]) {
            return Err(IndexError::ChecksumMismatch("file truncated inside the header".into()));
        }
        return Err(IndexError::BadMagic("file too short".into()));
    }
    if &bytes[..MAGIC_PREFIX.len()] != MAGIC_PREFIX {
        return Err(IndexError::BadMagic(format!("leading bytes {:?}", &bytes[..MAGIC_PREFIX.len()])));
    }
    if bytes[6] != FORMAT_VERSION || bytes[7] != 0 {
        return Err(IndexError::VersionMismatch { found: bytes[6], expected: FORMAT_VERSION });
    }
    let mut cursor = Cursor { bytes, pos: MAGIC.len() };
    let manifest_len = cursor.u32()? as usize;
    let manifest_bytes = cursor.take(manifest_len)?;
    let manifest: IndexManifest =
        serde_json::from_slice(manifest_bytes).map_err(|e| IndexError::MalformedManifest(e.to_string()))?;
    let record_section = &bytes[cursor.pos..];
    let actual = hex::encode(Sha256::digest(record_section));
    if actual != manifest.checksum {
        return Err(IndexError::ChecksumMismatch(format!(
            "manifest says {}, records hash to {actual}",
            manifest.checksum
        )));
    }
    let d = manifest.dimension;
    let mut records = Vec::with_capacity(manifest.card_count);
    while cursor.pos < bytes.len() {
        let id_len = cursor.u32()? as usize;
        let id = std::str::from_utf8(cursor.take(id_len)?)
            .map_err(|e| IndexError::MalformedManifest(format!("record id is not UTF-8: {e}")))?
            .to_string();
        let v_full = cursor.f32s(d)?;
        let v_meta = cursor.f32s(d)?;
        records.push(DualEmbeddingRecord { model_id: id, v_full, v_meta });
    }
    if records.len() != manifest.card_count {
        return Err(IndexError::MalformedManifest(format!(
            "manifest declares {} records, file holds {}",
            manifest.card_count,
            records.len()
        )));
    }
    let mut index = DualIndex::from_records(records, d, manifest.embedder_id.clone())?;
    index.set_corpus_path(manifest.corpus_path);
    Ok(index)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IndexError::ChecksumMismatch(format!("file truncated at byte {}", self.bytes.len())))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IndexError> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::card_store::{CardCorpus, ProcessedModelCard, Provenance};
    use crate::index::build_index;
    use crate::providers::HashEmbedder;

    fn sample() -> DualIndex {
        let cards = ["a/one", "b/two", "c/three"].map(|id| ProcessedModelCard {
            id: id.into(),
            task: "text-classification".into(),
            downloads: 1,
            likes: 1,
            languages: vec!["en".into()],
            datasets: vec![],
            simplified_description: format!("model {id}"),
            provenance: Provenance::Passthrough,
        });
        build_index(&CardCorpus::new(cards), &HashEmbedder::new(8)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let mut index = sample();
        index.set_corpus_path(Some("cards.jsonl".into()));
        persist_index(&index, &path).unwrap();
        let (loaded, warnings) = load_index(&path, Some("hash-mock:8")).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(loaded, index);
        assert_eq!(&fs::read(&path).unwrap()[..8], MAGIC);
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        persist_index(&sample(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [bytes.len() - 1, bytes.len() - 40, 20, 5] {
            fs::write(&path, &bytes[..cut]).unwrap();
            let err = load_index(&path, None).unwrap_err();
            assert!(matches!(err, IndexError::ChecksumMismatch(_)), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn flipped_vector_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        persist_index(&sample(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 2;
        bytes[last] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_index(&path, None), Err(IndexError::ChecksumMismatch(_))));
    }

    #[test]
    fn version_byte_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        persist_index(&sample(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[6] = b'2';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_index(&path, None), Err(IndexError::VersionMismatch { found: b'2', expected: b'1' })));
        fs::write(&path, b"PK\x03\x04garbage").unwrap();
        assert!(matches!(load_index(&path, None), Err(IndexError::BadMagic(_))));
    }

    #[test]
    fn embedder_mismatch_warns_but_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        persist_index(&sample(), &path).unwrap();
        let (loaded, warnings) = load_index(&path, Some("live:text-embedding-3-large")).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(
            warnings,
            vec![IndexWarning::EmbedderMismatch {
                stored: "hash-mock:8".into(),
                configured: "live:text-embedding-3-large".into()
            }]
        );
    }
}
