//! Question dataset loading.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use coi_core::prompting::QuestionRecord;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: duplicate question id {id}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: invalid tag {tag:?}")]
    InvalidTag { path: PathBuf, line: usize, tag: String },
}

fn valid_tag(tag: &str) -> bool {
    !tag.is_empty()
        && tag
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '-' | '_' | '.' | '+' | '#'))
}

/// Reads JSON Lines question records, sorted by tag and then by views,
/// most viewed first. Blank lines are skipped.
pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>, QuestionError> {
    let io = |source| QuestionError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut seen = BTreeSet::new();
    let mut out: Vec<QuestionRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionRecord = serde_json::from_str(&line).map_err(|e| QuestionError::Malformed {
            path: path.to_path_buf(),
            line: n,
            message: e.to_string(),
        })?;
        if !valid_tag(&q.tag) {
            return Err(QuestionError::InvalidTag {
                path: path.to_path_buf(),
                line: n,
                tag: q.tag,
            });
        }
        if !seen.insert(q.id.clone()) {
            return Err(QuestionError::DuplicateId {
                path: path.to_path_buf(),
                line: n,
                id: q.id,
            });
        }
        out.push(q);
    }
    out.sort_by(|a, b| a.tag.cmp(&b.tag).then(b.views.cmp(&a.views)));
    Ok(out)
}
