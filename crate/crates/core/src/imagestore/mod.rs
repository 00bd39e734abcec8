//! Image corpus handling: BMP decoding, normalization to the model grid,
//! labeling by directory name, content-hash deduplication, and the JSON Lines
//! manifest that makes a corpus reproducible.

mod bmp;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub use bmp::{decode_bmp, encode_bmp, RawImage};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, MODEL_SIDE};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const HASH_ALGORITHM: &str = "sha256";

/// A decoded, normalized, labeled corpus image.
#[derive(Debug, Clone)]
pub struct CellImage {
    pub pixels: ImageTensor,
    pub label: u8,
    pub id: String,
    pub source_path: PathBuf,
    pub digest: String,
}

/// Scales 8-bit samples into `[0,1]` and bilinearly resamples to 299×299.
pub fn normalize_resize(raw: &RawImage) -> ImageTensor {
    let data = raw.data().iter().map(|&v| v as f32 / 255.0).collect();
    let unit = ImageTensor::new(raw.height(), raw.width(), data)
        .expect("RawImage dimensions are validated at construction");
    unit.resize_bilinear(MODEL_SIDE, MODEL_SIDE)
}

pub fn content_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps directory names (case-insensitive) to class labels. The nearest
/// ancestor directory with a known name decides a file's label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRule {
    names: BTreeMap<String, u8>,
}

impl LabelRule {
    pub fn new<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u8)>,
        S: AsRef<str>,
    {
        let mut names = BTreeMap::new();
        for (name, label) in pairs {
            if label > 1 {
                return Err(Error::InvalidArgument(format!(
                    "label for directory `{}` must be 0 or 1, got {label}",
                    name.as_ref()
                )));
            }
            names.insert(name.as_ref().to_ascii_lowercase(), label);
        }
        if names.is_empty() {
            return Err(Error::InvalidArgument("label rule is empty".into()));
        }
        Ok(Self { names })
    }

    /// Lowercased directory name to label.
    pub fn names(&self) -> &BTreeMap<String, u8> {
        &self.names
    }

    pub fn label_for(&self, relative: &Path) -> Option<u8> {
        relative
            .parent()?
            .components()
            .rev()
            .filter_map(|c| c.as_os_str().to_str())
            .find_map(|name| self.names.get(&name.to_ascii_lowercase()).copied())
    }
}

impl Default for LabelRule {
    /// `all` → 1, `hem`/`normal` → 0, matching the public leukemia cell
    /// dataset layout.
    fn default() -> Self {
        Self::new([("all", 1), ("hem", 0), ("normal", 0)]).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub hash_algorithm: String,
    /// RFC 3339 UTC time of the newest ingested source file.
    pub created_at: String,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Path relative to the ingest root, `/`-separated.
    pub path: String,
    pub label: u8,
    pub digest: String,
    pub patient_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label as usize).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Ingest(format!("{} is empty", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line)?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Ingest(format!(
                "unsupported manifest schema version {}",
                header.schema_version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<ManifestRecord>(&line)?);
        }
        let manifest = Manifest { header, records };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut digests = std::collections::HashSet::new();
        let mut ids = std::collections::HashSet::new();
        for r in &self.records {
            if r.label > 1 {
                return Err(Error::Ingest(format!("record {} has label {}", r.id, r.label)));
            }
            if !digests.insert(&r.digest) {
                return Err(Error::Ingest(format!("duplicate digest {}", r.digest)));
            }
            if !ids.insert(&r.id) {
                return Err(Error::Ingest(format!("duplicate id {}", r.id)));
            }
        }
        Ok(())
    }

    /// Loads and normalizes one record's image relative to `root`.
    pub fn load(&self, root: &Path, index: usize) -> Result<CellImage> {
        let record = &self.records[index];
        let path = root.join(&record.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let raw = decode_bmp(&bytes)?;
        Ok(CellImage {
            pixels: normalize_resize(&raw),
            label: record.label,
            id: record.id.clone(),
            source_path: path,
            digest: record.digest.clone(),
        })
    }
}

#[derive(Debug)]
pub struct IngestReport {
    pub manifest: Manifest,
    /// Files whose content duplicated an earlier (by digest, then path) file.
    pub duplicates: usize,
    pub warnings: Vec<String>,
}

struct Candidate {
    path: String,
    label: u8,
    digest: String,
    mtime: u64,
}

/// Scans `root` for `.bmp` files, labels them, and builds a deduplicated
/// manifest ordered by content digest.
pub fn ingest(root: &Path, rule: &LabelRule) -> Result<IngestReport> {
    if !root.is_dir() {
        return Err(Error::Ingest(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let files: Vec<PathBuf> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("bmp"))
        })
        .collect();

    let results: Vec<std::result::Result<Candidate, String>> = files
        .par_iter()
        .map(|path| examine(root, path, rule))
        .collect();

    let mut warnings = Vec::new();
    let mut candidates = Vec::new();
    for r in results {
        match r {
            Ok(c) => candidates.push(c),
            Err(w) => {
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Ingest("no images found".into()));
    }

    candidates.sort_by(|a, b| a.digest.cmp(&b.digest).then_with(|| a.path.cmp(&b.path)));
    let mut records: Vec<ManifestRecord> = Vec::with_capacity(candidates.len());
    let mut duplicates = 0;
    let mut newest = 0;
    for c in candidates {
        newest = newest.max(c.mtime);
        if let Some(prev) = records.last() {
            if prev.digest == c.digest {
                duplicates += 1;
                let w = format!("{} duplicates {}; skipped", c.path, prev.path);
                log::warn!("{w}");
                warnings.push(w);
                continue;
            }
        }
        records.push(ManifestRecord {
            id: c.digest[..16].to_string(),
            patient_id: patient_id(&c.path),
            path: c.path,
            label: c.label,
            digest: c.digest,
        });
    }

    let manifest = Manifest {
        header: ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            hash_algorithm: HASH_ALGORITHM.into(),
            created_at: rfc3339(newest),
            record_count: records.len(),
        },
        records,
    };
    manifest.validate()?;
    Ok(IngestReport {
        manifest,
        duplicates,
        warnings,
    })
}

fn examine(root: &Path, path: &Path, rule: &LabelRule) -> std::result::Result<Candidate, String> {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let rel_str = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/");
    let label = rule
        .label_for(rel)
        .ok_or_else(|| format!("{rel_str}: no label rule matches; skipped"))?;
    let bytes = fs::read(path).map_err(|e| format!("{rel_str}: unreadable ({e}); skipped"))?;
    decode_bmp(&bytes).map_err(|e| format!("{rel_str}: {e}; skipped"))?;
    let mtime = fs::metadata(path)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map_or(0, |d| d.as_secs());
    Ok(Candidate {
        path: rel_str,
        label,
        digest: content_digest(&bytes),
        mtime,
    })
}

/// Extracts the subject token from dataset file names of the form
/// `UID_<subject>_...`.
fn patient_id(path: &str) -> Option<String> {
    let stem = Path::new(path).file_stem()?.to_str()?;
    let rest = stem.strip_prefix("UID_")?;
    let id = rest.split('_').next()?;
    (!id.is_empty()).then(|| id.to_string())
}

fn rfc3339(secs: u64) -> String {
    chrono::DateTime::from_timestamp(secs as i64, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
