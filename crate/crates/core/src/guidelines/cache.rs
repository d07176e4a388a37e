//! On-disk summary cache, keyed by (code, guideline version, backend
//! fingerprint) so repeated runs skip the expensive summarisation step.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::summary::GuidelineSummary;
use crate::code::IcdCode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub code: IcdCode,
    pub version: String,
    pub backend_fingerprint: String,
}

impl CacheKey {
    pub fn new(code: &IcdCode, version: &str, backend_fingerprint: &str) -> Self {
        CacheKey {
            code: code.clone(),
            version: version.to_string(),
            backend_fingerprint: backend_fingerprint.to_string(),
        }
    }

    fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.code.as_str().as_bytes());
        hasher.update([0x1f]);
        hasher.update(self.version.as_bytes());
        hasher.update([0x1f]);
        hasher.update(self.backend_fingerprint.as_bytes());
        hex(&hasher.finalize())
    }
}

#[derive(Debug)]
pub enum CacheGet {
    Hit(Box<GuidelineSummary>),
    Miss,
    /// Unreadable entry: treated as a miss, with the reason surfaced.
    Corrupt(String),
}

impl CacheGet {
    pub fn into_option(self) -> Option<GuidelineSummary> {
        match self {
            CacheGet::Hit(summary) => Some(*summary),
            _ => None,
        }
    }
}

/// A directory of JSON files named by key hash. Writes go through a temp
/// file and an atomic rename, so concurrent putters are last-writer-wins.
#[derive(Debug, Clone)]
pub struct SummaryCache {
    dir: PathBuf,
}

impl SummaryCache {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(SummaryCache { dir: dir.to_path_buf() })
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.hash()))
    }

    pub fn get(&self, key: &CacheKey) -> CacheGet {
        let path = self.entry_path(key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return CacheGet::Miss,
            Err(e) => return CacheGet::Corrupt(format!("{}: {e}", path.display())),
        };
        match serde_json::from_str::<GuidelineSummary>(&raw) {
            Ok(summary) => CacheGet::Hit(Box::new(summary)),
            Err(e) => CacheGet::Corrupt(format!("{}: {e}", path.display())),
        }
    }

    pub fn put(&self, key: &CacheKey, summary: &GuidelineSummary) -> std::io::Result<()> {
        let path = self.entry_path(key);
        let tmp = self.dir.join(format!(".{}.tmp-{}", key.hash(), std::process::id()));
        std::fs::write(&tmp, serde_json::to_string_pretty(summary)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// All cached summaries, sorted by code, for JSONL export.
    pub fn export(&self) -> std::io::Result<Vec<GuidelineSummary>> {
        let mut summaries = Vec::new();
        for dirent in std::fs::read_dir(&self.dir)? {
            let path = dirent?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            if let Ok(raw) = std::fs::read_to_string(&path) {
                if let Ok(summary) = serde_json::from_str::<GuidelineSummary>(&raw) {
                    summaries.push(summary);
                }
            }
        }
        summaries.sort_by(|a, b| {
            (a.code.as_str(), &a.version, &a.backend_fingerprint)
                .cmp(&(b.code.as_str(), &b.version, &b.backend_fingerprint))
        });
        Ok(summaries)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
