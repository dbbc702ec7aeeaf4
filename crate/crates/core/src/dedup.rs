//! Content-digest deduplication of corpus images.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::error::DedupError;
use crate::exec::{map_ordered, Execution};

/// Lowercase hex MD5 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Md5::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes each file; an unreadable file yields an error string for that entry only.
pub fn hash_files(paths: &[PathBuf], exec: Execution) -> Vec<Result<String, String>> {
    map_ordered(paths, exec, |_, p| hash_file(p))
}

fn hash_file(path: &Path) -> Result<String, String> {
    std::fs::read(path)
        .map(|bytes| content_hash(&bytes))
        .map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupEntry {
    pub id: String,
    pub digest: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DedupManifest {
    pub entries: Vec<DedupEntry>,
    /// Retained ids in input order.
    pub unique_ids: Vec<String>,
    /// Dropped id -> the retained id it duplicates.
    pub dropped: Vec<(String, String)>,
}

impl DedupManifest {
    pub fn is_kept(&self, id: &str) -> bool {
        self.unique_ids.iter().any(|u| u == id)
    }

    /// Manifest rows in entry order.
    pub fn records(&self) -> Vec<ManifestRecord> {
        let dup: HashMap<&str, &str> = self
            .dropped
            .iter()
            .map(|(d, k)| (d.as_str(), k.as_str()))
            .collect();
        self.entries
            .iter()
            .map(|e| ManifestRecord {
                id: e.id.clone(),
                digest: Some(e.digest.clone()),
                image: e.image_ref.clone(),
                kept: !dup.contains_key(e.id.as_str()),
                duplicate_of: dup.get(e.id.as_str()).map(|s| s.to_string()),
                error: None,
            })
            .collect()
    }
}

/// One line of the emitted dedup manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub digest: Option<String>,
    pub image: String,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn write_manifest<W: Write>(records: &[ManifestRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Keeps the first id seen for each digest.
pub fn dedup(entries: Vec<DedupEntry>) -> Result<DedupManifest, DedupError> {
    let mut ids = HashSet::new();
    let mut first_by_digest: HashMap<&str, &str> = HashMap::new();
    let mut unique_ids = Vec::new();
    let mut dropped = Vec::new();
    for e in &entries {
        if !ids.insert(e.id.as_str()) {
            return Err(DedupError::DuplicateId(e.id.clone()));
        }
        match first_by_digest.get(e.digest.as_str()) {
            Some(keeper) => dropped.push((e.id.clone(), keeper.to_string())),
            None => {
                first_by_digest.insert(&e.digest, &e.id);
                unique_ids.push(e.id.clone());
            }
        }
    }
    Ok(DedupManifest {
        entries,
        unique_ids,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, digest: &str) -> DedupEntry {
        DedupEntry {
            id: id.into(),
            digest: digest.into(),
            image_ref: format!("{id}.png"),
        }
    }

    #[test]
    fn rfc1321_vectors() {
        assert_eq!(content_hash(b""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(content_hash(b"abc"), "900150983cd24fb0d6963f7d28e17f72");
        assert_eq!(
            content_hash(b"message digest"),
            "f96b697d7cb7938d525a2f31aaf161d0"
        );
    }

    #[test]
    fn first_occurrence_wins() {
        let m = dedup(vec![entry("a", "h1"), entry("b", "h1"), entry("c", "h2")]).unwrap();
        assert_eq!(m.unique_ids, ["a", "c"]);
        assert_eq!(m.dropped, [("b".to_string(), "a".to_string())]);
        let recs = m.records();
        assert!(recs[0].kept && !recs[1].kept && recs[2].kept);
        assert_eq!(recs[1].duplicate_of.as_deref(), Some("a"));
    }

    #[test]
    fn distinct_digests_all_kept_and_idempotent() {
        let input = vec![entry("a", "1"), entry("b", "2"), entry("c", "3")];
        let m = dedup(input.clone()).unwrap();
        assert_eq!(m.unique_ids.len(), 3);
        let kept: Vec<_> = input.into_iter().filter(|e| m.is_kept(&e.id)).collect();
        assert_eq!(dedup(kept).unwrap().unique_ids, m.unique_ids);
    }

    #[test]
    fn duplicate_id_is_an_error() {
        assert_eq!(
            dedup(vec![entry("a", "1"), entry("a", "2")]).unwrap_err(),
            DedupError::DuplicateId("a".into())
        );
    }

    #[test]
    fn unreadable_file_does_not_stop_hashing() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("x.bin");
        std::fs::write(&good, b"abc").unwrap();
        let out = hash_files(&[dir.path().join("missing.bin"), good], Execution::Parallel);
        assert!(out[0].is_err());
        assert_eq!(out[1].as_deref(), Ok("900150983cd24fb0d6963f7d28e17f72"));
    }
}
