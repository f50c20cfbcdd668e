//! Source documents and overlapping token-window chunking.
//!
//! Documents are plain UTF-8 text. Page boundaries may be marked with sentinel
//! lines of the form `\x0c@@PAGE n@@`; the sentinels are removed before
//! tokenization and recorded as `(page, token_index)` markers.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid chunk parameters: size={size}, overlap={overlap}, min_tokens={min_tokens}")]
    InvalidParams {
        size: usize,
        overlap: usize,
        min_tokens: usize,
    },
    #[error("page markers must strictly increase: page {page} at token {token_index} follows page {prev_page}")]
    NonMonotonicPages {
        prev_page: u32,
        page: u32,
        token_index: usize,
    },
    #[error("page numbers start at 1, got {0}")]
    ZeroPage(u32),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Splits on runs of whitespace. Original spacing is not preserved.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageMarker {
    pub page: u32,
    pub token_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub page_offsets: Vec<PageMarker>,
}

fn parse_page_sentinel(line: &str) -> Option<u32> {
    let inner = line
        .trim()
        .trim_start_matches('\x0c')
        .strip_prefix("@@PAGE ")?
        .strip_suffix("@@")?;
    inner.trim().parse().ok()
}

impl Document {
    /// Builds a document from raw text, extracting page sentinel lines.
    ///
    /// Text before the first sentinel is attributed to the first marked page.
    /// Consecutive sentinels with no text between them collapse onto the
    /// later one, and sentinels after the last token are dropped.
    pub fn parse(id: impl Into<String>, title: impl Into<String>, raw: &str) -> Result<Self, CorpusError> {
        let mut text = String::with_capacity(raw.len());
        let mut markers: Vec<PageMarker> = Vec::new();
        let mut tokens_so_far = 0usize;

        for line in raw.lines() {
            if let Some(page) = parse_page_sentinel(line) {
                if page == 0 {
                    return Err(CorpusError::ZeroPage(page));
                }
                let marker = PageMarker {
                    page,
                    token_index: tokens_so_far,
                };
                match markers.last_mut() {
                    Some(last) if last.token_index == tokens_so_far => {
                        if page <= last.page {
                            return Err(CorpusError::NonMonotonicPages {
                                prev_page: last.page,
                                page,
                                token_index: tokens_so_far,
                            });
                        }
                        *last = marker;
                    }
                    Some(last) if page <= last.page => {
                        return Err(CorpusError::NonMonotonicPages {
                            prev_page: last.page,
                            page,
                            token_index: tokens_so_far,
                        });
                    }
                    _ => markers.push(marker),
                }
                continue;
            }
            tokens_so_far += line.split_whitespace().count();
            text.push_str(line);
            text.push('\n');
        }

        markers.retain(|m| m.token_index < tokens_so_far);
        if let Some(first) = markers.first_mut() {
            first.token_index = 0;
        }

        Ok(Self {
            id: id.into(),
            title: title.into(),
            text,
            page_offsets: markers,
        })
    }

    /// Page number of the token at `token_index`; (1) when the document
    /// carries no page markers.
    pub fn page_of(&self, token_index: usize) -> u32 {
        let pos = self
            .page_offsets
            .partition_point(|m| m.token_index <= token_index);
        match pos {
            0 => self.page_offsets.first().map_or(1, |m| m.page),
            p => self.page_offsets[p - 1].page,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
    pub page_span: (u32, u32),
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.token_end - self.token_start
    }

    pub fn is_empty(&self) -> bool {
        self.token_end == self.token_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkParams {
    pub size: usize,
    pub overlap: usize,
    pub min_tokens: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            size: 150,
            overlap: 75,
            min_tokens: 100,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.overlap >= self.size || self.min_tokens == 0 || self.min_tokens > self.size {
            return Err(CorpusError::InvalidParams {
                size: self.size,
                overlap: self.overlap,
                min_tokens: self.min_tokens,
            });
        }
        Ok(())
    }
}

/// Token spans `[start, end)` of the windows for a document of `n` tokens.
///
/// Windows start every `size - overlap` tokens. A final tail shorter than
/// `min_tokens` is folded into the preceding window, which then runs to the
/// end of the document.
pub fn window_spans(n: usize, params: &ChunkParams) -> Result<Vec<(usize, usize)>, CorpusError> {
    params.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    if n <= params.size {
        return Ok(vec![(0, n)]);
    }
    let stride = params.size - params.overlap;
    let mut spans = Vec::new();
    let mut start = 0usize;
    while start + params.size < n {
        spans.push((start, start + params.size));
        start += stride;
    }
    if n - start < params.min_tokens {
        // spans is non-empty here since n > size.
        spans.last_mut().expect("at least one full window").1 = n;
    } else {
        spans.push((start, n));
    }
    Ok(spans)
}

/// Splits a document into overlapping token windows.
pub fn chunk(doc: &Document, params: &ChunkParams) -> Result<Vec<Chunk>, CorpusError> {
    let tokens = tokenize(&doc.text);
    let spans = window_spans(tokens.len(), params)?;
    Ok(spans
        .into_iter()
        .map(|(start, end)| Chunk {
            id: format!("{}#{}-{}", doc.id, start, end),
            doc_id: doc.id.clone(),
            token_start: start,
            token_end: end,
            text: tokens[start..end].join(" "),
            page_span: (doc.page_of(start), doc.page_of(end - 1)),
        })
        .collect())
}

pub fn write_chunks_jsonl<W: Write>(mut out: W, chunks: &[Chunk]) -> Result<(), CorpusError> {
    for c in chunks {
        serde_json::to_writer(&mut out, c).map_err(|source| CorpusError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_chunks_jsonl<R: BufRead>(input: R) -> Result<Vec<Chunk>, CorpusError> {
    let mut chunks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk = serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}
