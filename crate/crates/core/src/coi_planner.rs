//! Chain-of-illocution planning.
//!
//! From a primary question the planner gathers candidate implicit questions
//! (bank neighbours plus "What is X?" templates), retrieves supporting chunks
//! for each, gives every chunk to the single candidate that scored it
//! highest, and keeps the candidates whose best surviving chunk scores
//! highest.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adherence::ClauseExtractor;
use crate::corpus::Chunk;
use crate::prompting::QuestionRecord;
use crate::provider::{Embedder, ProviderError};
use crate::question_bank::{template_questions, BankError, QuestionBank};
use crate::vector_index::{embed, EmbeddingVector, IndexError, VectorIndex};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("selection budget m={keep} exceeds candidate pool M={pool}")]
    BudgetExceedsPool { keep: usize, pool: usize },
    #[error("chunks per question must be at least 1")]
    ZeroChunks,
    #[error("chunk index is empty")]
    EmptyChunkIndex,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Candidate pool drawn from the bank (M).
    pub pool_size: usize,
    /// Chunks retrieved per question (k).
    pub chunks_per_question: usize,
    /// Implicit questions kept (m).
    pub keep: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            pool_size: 25,
            chunks_per_question: 10,
            keep: 5,
        }
    }
}

/// True when the pool over-generates at least 5:1 relative to the budget.
pub fn pool_ratio_check(pool_size: usize, keep: usize) -> bool {
    pool_size >= 5 * keep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrigin {
    Bank,
    Template,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateQuestion {
    pub text: String,
    pub origin: CandidateOrigin,
    pub bank_id: Option<String>,
    pub question_vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedQuestion {
    pub question: CandidateQuestion,
    /// Surviving chunks, best first.
    pub chunks: Vec<(Chunk, f64)>,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IllocutionPlan {
    pub primary_id: String,
    /// Retrieval for the primary question itself; not deduplicated against
    /// the implicit questions.
    pub primary_chunks: Vec<(Chunk, f64)>,
    pub selected: Vec<SelectedQuestion>,
    /// Chunk ids present both in the primary context and under a selected question.
    pub shared_with_primary: Vec<String>,
}

impl IllocutionPlan {
    pub fn empty(primary_id: impl Into<String>) -> Self {
        Self {
            primary_id: primary_id.into(),
            primary_chunks: Vec::new(),
            selected: Vec::new(),
            shared_with_primary: Vec::new(),
        }
    }

    pub fn to_record(&self) -> PlanRecord {
        PlanRecord {
            primary_id: self.primary_id.clone(),
            primary_chunks: self.primary_chunks.iter().map(ScoredChunk::from).collect(),
            selected: self
                .selected
                .iter()
                .map(|s| SelectedRecord {
                    question: s.question.text.clone(),
                    origin: s.question.origin,
                    bank_id: s.question.bank_id.clone(),
                    best_score: s.best_score,
                    chunks: s.chunks.iter().map(ScoredChunk::from).collect(),
                })
                .collect(),
            shared_with_primary: self.shared_with_primary.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
}

impl From<&(Chunk, f64)> for ScoredChunk {
    fn from((c, s): &(Chunk, f64)) -> Self {
        Self {
            chunk_id: c.id.clone(),
            score: *s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRecord {
    pub question: String,
    pub origin: CandidateOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_id: Option<String>,
    pub best_score: f64,
    pub chunks: Vec<ScoredChunk>,
}

/// Audit form of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub primary_id: String,
    pub primary_chunks: Vec<ScoredChunk>,
    pub selected: Vec<SelectedRecord>,
    pub shared_with_primary: Vec<String>,
}

fn owned_hits(index: &VectorIndex<Chunk>, query: &EmbeddingVector, k: usize) -> Result<Vec<(Chunk, f64)>, IndexError> {
    Ok(index
        .top_k(query, k)?
        .into_iter()
        .map(|(e, s)| (e.payload.clone(), s))
        .collect())
}

/// Top-k chunks for the primary question's retrieval query.
pub fn retrieve_primary(
    primary: &QuestionRecord,
    chunk_index: &VectorIndex<Chunk>,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<(Chunk, f64)>, PlanError> {
    if chunk_index.is_empty() {
        return Err(PlanError::EmptyChunkIndex);
    }
    let query = embed(&[primary.query_text().as_str()], embedder)?.remove(0);
    Ok(owned_hits(chunk_index, &query, k)?)
}

/// Candidate pool: the `pool_size` nearest bank questions, then templates.
pub fn candidate_pool(
    primary: &QuestionRecord,
    query: &EmbeddingVector,
    bank: &QuestionBank,
    embedder: &dyn Embedder,
    extractor: &dyn ClauseExtractor,
    pool_size: usize,
) -> Result<Vec<CandidateQuestion>, PlanError> {
    let mut pool = Vec::new();
    if bank.is_empty() || pool_size == 0 {
        return Ok(pool);
    }
    for (entry, _) in bank.index().top_k(query, pool_size)? {
        let q = bank.get(&entry.key).ok_or_else(|| BankError::MissingVector(entry.key.clone()))?;
        pool.push(CandidateQuestion {
            text: q.question.clone(),
            origin: CandidateOrigin::Bank,
            bank_id: Some(q.id.clone()),
            question_vector: entry.vector.clone(),
        });
    }
    let templates = template_questions(primary, extractor)?;
    if !templates.is_empty() {
        let refs: Vec<&str> = templates.iter().map(String::as_str).collect();
        let vectors = embed(&refs, embedder)?;
        for (text, v) in templates.into_iter().zip(vectors) {
            pool.push(CandidateQuestion {
                text,
                origin: CandidateOrigin::Template,
                bank_id: None,
                question_vector: v,
            });
        }
    }
    Ok(pool)
}

/// Chunk assignment and ranking over an already retrieved candidate pool.
///
/// `retrieved[i]` holds candidate `i`'s chunks, best first. Each chunk goes
/// to the candidate with the highest score for it (earlier candidate on
/// ties); candidates left without chunks are dropped; the rest are ranked by
/// their best surviving score (earlier candidate on ties) and truncated to
/// `keep`.
pub fn select(
    candidates: Vec<CandidateQuestion>,
    retrieved: Vec<Vec<(Chunk, f64)>>,
    keep: usize,
) -> Vec<SelectedQuestion> {
    let mut owner: HashMap<&str, (usize, f64)> = HashMap::new();
    for (ci, hits) in retrieved.iter().enumerate() {
        for (chunk, score) in hits {
            owner
                .entry(chunk.id.as_str())
                .and_modify(|best| {
                    if *score > best.1 {
                        *best = (ci, *score);
                    }
                })
                .or_insert((ci, *score));
        }
    }
    let owners: HashMap<String, usize> = owner.into_iter().map(|(k, (ci, _))| (k.to_string(), ci)).collect();

    let mut survivors: Vec<SelectedQuestion> = candidates
        .into_iter()
        .zip(retrieved)
        .enumerate()
        .filter_map(|(ci, (question, hits))| {
            let chunks: Vec<(Chunk, f64)> = hits.into_iter().filter(|(c, _)| owners[&c.id] == ci).collect();
            let best_score = chunks.first()?.1;
            Some(SelectedQuestion {
                question,
                chunks,
                best_score,
            })
        })
        .collect();
    // Stable sort keeps candidate order among equal scores.
    survivors.sort_by(|a, b| b.best_score.total_cmp(&a.best_score));
    survivors.truncate(keep);
    survivors
}

/// Builds the illocution plan for one primary question.
///
/// An empty bank yields an empty selection, which reduces the final prompt
/// to plain RAG.
pub fn plan(
    primary: &QuestionRecord,
    bank: &QuestionBank,
    chunk_index: &VectorIndex<Chunk>,
    embedder: &dyn Embedder,
    extractor: &dyn ClauseExtractor,
    params: &PlannerParams,
) -> Result<IllocutionPlan, PlanError> {
    if params.keep > params.pool_size {
        return Err(PlanError::BudgetExceedsPool {
            keep: params.keep,
            pool: params.pool_size,
        });
    }
    if params.chunks_per_question == 0 {
        return Err(PlanError::ZeroChunks);
    }
    if !pool_ratio_check(params.pool_size, params.keep) {
        tracing::warn!(
            pool = params.pool_size,
            keep = params.keep,
            "candidate pool is less than five times the selection budget"
        );
    }
    if chunk_index.is_empty() {
        return Err(PlanError::EmptyChunkIndex);
    }

    let query = embed(&[primary.query_text().as_str()], embedder)?.remove(0);
    let primary_chunks = owned_hits(chunk_index, &query, params.chunks_per_question)?;
    let mut out = IllocutionPlan::empty(primary.id.clone());
    out.primary_chunks = primary_chunks;
    if bank.is_empty() {
        return Ok(out);
    }

    let candidates = candidate_pool(primary, &query, bank, embedder, extractor, params.pool_size)?;
    let retrieved: Vec<Vec<(Chunk, f64)>> = candidates
        .par_iter()
        .map(|c| owned_hits(chunk_index, &c.question_vector, params.chunks_per_question))
        .collect::<Result<_, _>>()?;
    out.selected = select(candidates, retrieved, params.keep);

    let primary_ids: std::collections::HashSet<&str> = out.primary_chunks.iter().map(|(c, _)| c.id.as_str()).collect();
    out.shared_with_primary = out
        .selected
        .iter()
        .flat_map(|s| s.chunks.iter())
        .filter(|(c, _)| primary_ids.contains(c.id.as_str()))
        .map(|(c, _)| c.id.clone())
        .collect();
    Ok(out)
}
