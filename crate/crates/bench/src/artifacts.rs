//! Output-directory layout, JSON Lines helpers and the artifact manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CORPORA_DIR: &str = "corpora";
pub const BANKS_DIR: &str = "banks";
pub const PLANS: &str = "plans.jsonl";
pub const EXPLANATIONS: &str = "explanations.jsonl";
pub const ANSWER_FAILURES: &str = "answer_failures.jsonl";
pub const ITEMS: &str = "items.jsonl";
pub const EVALUATE_FAILURES: &str = "evaluate_failures.jsonl";
pub const ANALYSIS: &str = "analysis.json";
pub const AGGREGATE: &str = "aggregate.csv";
pub const PLOTS_DIR: &str = "plots";
pub const MANIFEST: &str = "manifest.json";

pub fn chunks_path(out: &Path, tag: &str) -> PathBuf {
    out.join(CORPORA_DIR).join(tag).join("chunks.jsonl")
}

pub fn bank_dir(out: &Path, tag: &str) -> PathBuf {
    out.join(BANKS_DIR).join(tag)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {} (run the earlier stage first)", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(rows)
}

/// Like [`read_jsonl`], with a missing file read as empty.
pub fn read_jsonl_or_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.strip_prefix(root)? != Path::new(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `out` (except the manifest itself) and writes
/// `manifest.json`, sorted by relative path.
pub fn write_manifest(out: &Path) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    let mut entries: Vec<ManifestEntry> = files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(out)?.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>();
            Ok(ManifestEntry {
                path: rel.join("/"),
                bytes: fs::metadata(p)?.len(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    write_json(&out.join(MANIFEST), &entries)?;
    Ok(entries)
}
