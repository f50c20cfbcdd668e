//! Source-adherence metrics.
//!
//! An explanation is split into subject–predicate–object clauses, each clause
//! is matched to its most similar clause from the source text, and the
//! matches are summarized as a thresholded ratio (FActScore), a mean
//! similarity and a count of adherent clauses.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Chunk};
use crate::prompting::{strip_citations, Mode};
use crate::provider::{ChatMessage, ChatRequest, Embedder, Generator, ProviderError};
use crate::vector_index::{embed, similarity, EmbeddingVector, IndexError, VectorIndex};

pub const DEFAULT_THRESHOLD: f64 = 0.7;

const EMBED_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum AdherenceError {
    #[error("no clause matches to score")]
    EmptyMatches,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("thresholds must be sorted ascending")]
    UnsortedThresholds,
    #[error("source clause index is empty")]
    EmptySourceIndex,
    #[error("explanation has no extractable clauses")]
    Unevaluable,
    #[error("clause extractor: {0}")]
    Extractor(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub sentence_index: usize,
}

impl Clause {
    /// `"{subject} {predicate} {object}"` without a trailing space when the
    /// object is empty.
    pub fn render(&self) -> String {
        if self.object.is_empty() {
            format!("{} {}", self.subject, self.predicate)
        } else {
            format!("{} {} {}", self.subject, self.predicate, self.object)
        }
    }
}

pub trait ClauseExtractor: Send + Sync {
    fn extract(&self, text: &str) -> Result<Vec<Clause>, AdherenceError>;
}

// ---------------------------------------------------------------------------
// Rule-based extraction
// ---------------------------------------------------------------------------

const AUXILIARIES: &[&str] = &[
    "am", "is", "are", "was", "were", "be", "been", "being", "do", "does", "did", "has", "have", "had", "can",
    "could", "will", "would", "shall", "should", "may", "might", "must", "isn't", "aren't", "wasn't", "weren't",
    "don't", "doesn't", "didn't", "hasn't", "haven't", "hadn't", "can't", "cannot", "couldn't", "won't",
    "wouldn't", "shouldn't", "mustn't",
];

const WH_WORDS: &[&str] = &["what", "who", "whom", "whose", "which", "why", "how", "where", "when"];

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "my", "your", "his", "her", "its", "our", "their", "some",
    "any", "each", "every", "no", "all", "both", "either", "neither", "another", "such",
];

const PREPOSITIONS: &[&str] = &[
    "of", "in", "on", "at", "to", "for", "with", "by", "from", "into", "onto", "about", "over", "under", "between",
    "through", "during", "before", "after", "without", "within", "upon", "via", "as", "than", "like", "despite",
    "against", "among", "across", "along", "around", "behind", "beyond", "near", "per", "toward", "towards",
];

const PRONOUNS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "myself", "yourself", "itself",
    "themselves", "there", "one",
];

const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "if", "because", "while", "although", "though", "unless", "since",
    "whereas", "then", "also", "not", "very", "often", "always", "never", "only", "just", "usually",
];

const REGULAR_VERBS: &[&str] = &[
    "use", "create", "define", "return", "call", "convert", "provide", "contain", "represent", "allow", "need",
    "store", "add", "remove", "compare", "print", "pass", "change", "extend", "implement", "inherit", "declare",
    "assign", "refer", "depend", "inject", "apply", "produce", "include", "require", "support", "handle",
    "compute", "evaluate", "execute", "invoke", "access", "modify", "accept", "describe", "explain", "express",
    "specify", "indicate", "check", "test", "raise", "open", "close", "iterate", "loop", "sort", "split", "join",
    "parse", "import", "export", "load", "save", "generate", "avoid", "prefer", "want", "try", "consider", "ask",
    "answer", "explore", "pack", "decide", "work", "help", "look", "receive", "treat", "allocate", "initialize",
    "instantiate", "override", "encapsulate", "combine", "replace", "reduce", "increase", "follow", "supply",
    "improve", "obtain", "list", "name", "print", "install", "type", "display", "enable", "ensure", "display",
    "perform", "mutate", "append", "insert", "delete", "update", "match", "map", "filter", "wrap", "throw",
];

const IRREGULAR_VERBS: &[&str] = &[
    "make", "makes", "made", "take", "takes", "took", "taken", "give", "gives", "gave", "given", "mean", "means",
    "meant", "get", "gets", "got", "gotten", "set", "sets", "run", "runs", "ran", "write", "writes", "wrote",
    "written", "read", "reads", "hold", "holds", "held", "find", "finds", "found", "know", "knows", "knew", "known",
    "show", "shows", "showed", "shown", "see", "sees", "saw", "seen", "say", "says", "said", "become", "becomes",
    "became", "begin", "begins", "began", "begun", "keep", "keeps", "kept", "let", "lets", "put", "puts", "send",
    "sends", "sent", "build", "builds", "built", "go", "goes", "went", "gone", "come", "comes", "came", "done",
    "throws", "threw", "thrown", "choose", "chooses", "chose", "chosen", "tell", "tells", "told", "leave",
    "leaves", "left", "bring", "brings", "brought", "think", "thinks", "thought", "lose", "loses", "lost",
];

fn verb_lexicon() -> &'static HashSet<String> {
    static LEXICON: OnceLock<HashSet<String>> = OnceLock::new();
    LEXICON.get_or_init(|| {
        let mut set: HashSet<String> = IRREGULAR_VERBS.iter().map(|s| s.to_string()).collect();
        for v in REGULAR_VERBS {
            set.insert(v.to_string());
            let (third, past) = if v.ends_with('e') {
                (format!("{v}s"), format!("{v}d"))
            } else if v.ends_with('s') || v.ends_with('h') || v.ends_with('x') {
                (format!("{v}es"), format!("{v}ed"))
            } else if let Some(stem) = v.strip_suffix('y') {
                (format!("{stem}ies"), format!("{stem}ied"))
            } else {
                (format!("{v}s"), format!("{v}ed"))
            };
            set.insert(third);
            set.insert(past);
        }
        set
    })
}

#[derive(Debug, Clone)]
struct Word<'a> {
    raw: &'a str,
    lower: String,
}

impl Word<'_> {
    fn is(&self, list: &[&str]) -> bool {
        list.contains(&self.lower.as_str())
    }

    fn is_capitalized(&self) -> bool {
        self.raw
            .trim_start_matches(|c: char| !c.is_alphanumeric())
            .chars()
            .next()
            .is_some_and(char::is_uppercase)
    }

    fn is_closed_class(&self) -> bool {
        self.is(WH_WORDS) || self.is(DETERMINERS) || self.is(PREPOSITIONS) || self.is(PRONOUNS) || self.is(CONJUNCTIONS)
    }
}

fn words(segment: &str) -> Vec<Word<'_>> {
    segment
        .split_whitespace()
        .map(|raw| Word {
            raw,
            lower: raw
                .trim_matches(|c: char| !(c.is_alphanumeric() || c == '\''))
                .to_lowercase(),
        })
        .filter(|w| !w.lower.is_empty() || !w.raw.is_empty())
        .collect()
}

/// Splits text into sentences at `.`, `!` or `?` followed by whitespace, and
/// at line breaks.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let boundary = match c {
            '\n' => true,
            '.' | '!' | '?' => chars.peek().is_none_or(|&(_, n)| n.is_whitespace()),
            _ => false,
        };
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() && s.chars().any(char::is_alphanumeric) {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() && tail.chars().any(char::is_alphanumeric) {
        out.push(tail);
    }
    out
}

fn split_finite_clauses(sentence: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut rest = sentence;
    'outer: loop {
        for sep in [";", ", and ", ", but ", ", so ", ", while "] {
            if let Some(pos) = rest.find(sep) {
                parts.push(&rest[..pos]);
                rest = &rest[pos + sep.len()..];
                continue 'outer;
            }
        }
        parts.push(rest);
        break;
    }
    parts
}

fn join_span(ws: &[Word<'_>]) -> String {
    let joined = ws.iter().map(|w| w.raw).collect::<Vec<_>>().join(" ");
    joined
        .trim_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'') || c.is_whitespace())
        .to_string()
}

/// Default extractor: lexicon and suffix heuristics, no external model.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleClauseExtractor;

impl RuleClauseExtractor {
    fn is_verb_like(ws: &[Word<'_>], i: usize) -> bool {
        let w = &ws[i];
        if w.lower.is_empty() || w.lower.chars().any(|c| c.is_ascii_digit()) {
            return false;
        }
        if i > 0 && (ws[i - 1].is(DETERMINERS) || ws[i - 1].is(PREPOSITIONS)) {
            return false;
        }
        if w.is(AUXILIARIES) || verb_lexicon().contains(&w.lower) {
            return true;
        }
        if w.is_closed_class() || (i > 0 && w.is_capitalized()) {
            return false;
        }
        let l = w.lower.as_str();
        let n = l.chars().count();
        if n <= 3 || !l.chars().all(|c| c.is_alphabetic()) {
            return false;
        }
        (l.ends_with("ing") && n > 5)
            || (l.ends_with("ed") && n > 4)
            || (l.ends_with('s') && !["ss", "us", "is", "ous", "ics", "ness"].iter().any(|s| l.ends_with(s)))
    }

    /// End (exclusive) of the verb group starting at `v`.
    fn verb_group_end(ws: &[Word<'_>], v: usize) -> usize {
        let mut end = v + 1;
        let mut prev_aux = ws[v].is(AUXILIARIES);
        while end < ws.len() {
            let w = &ws[end];
            let participle = w.lower.ends_with("ed") || w.lower.ends_with("ing") || w.lower.ends_with("en");
            let extends = w.is(AUXILIARIES)
                || w.lower == "not"
                || (prev_aux && (participle || verb_lexicon().contains(&w.lower)) && !w.is_closed_class());
            if !extends {
                break;
            }
            prev_aux = w.is(AUXILIARIES) || w.lower == "not";
            end += 1;
        }
        end
    }

    fn clause_of(segment: &str, sentence_index: usize) -> Option<Clause> {
        let ws = words(segment);
        if ws.is_empty() {
            return None;
        }
        let build = |subject: String, pred: &[Word<'_>], object: &[Word<'_>]| {
            let predicate = join_span(pred);
            (!subject.is_empty() && !predicate.is_empty()).then(|| Clause {
                subject,
                predicate,
                object: join_span(object),
                sentence_index,
            })
        };

        // Interrogatives: optional wh-words, then an auxiliary.
        let lead = ws.iter().take_while(|w| w.is(WH_WORDS)).count();
        if lead < ws.len() && ws[lead].is(AUXILIARIES) {
            let aux = lead;
            let main = (aux + 2..ws.len()).find(|&i| Self::is_verb_like(&ws, i) && !ws[i].is(AUXILIARIES));
            if let Some(main) = main {
                let end = Self::verb_group_end(&ws, main);
                let mut pred = vec![ws[aux].clone()];
                pred.extend_from_slice(&ws[main..end]);
                return build(join_span(&ws[aux + 1..main]), &pred, &ws[end..]);
            }
            if aux > 0 {
                let end = Self::verb_group_end(&ws, aux);
                return build(join_span(&ws[..aux]), &ws[aux..end], &ws[end..]);
            }
        }

        // Imperatives: a bare lexicon verb in first position.
        if ws[0].lower != "let" && verb_lexicon().contains(&ws[0].lower) && !ws[0].is(AUXILIARIES) {
            let base_form = REGULAR_VERBS.contains(&ws[0].lower.as_str());
            if base_form {
                let end = Self::verb_group_end(&ws, 0);
                return build("you".to_string(), &ws[..end], &ws[end..]);
            }
        }

        let v = (1..ws.len()).find(|&i| Self::is_verb_like(&ws, i))?;
        let end = Self::verb_group_end(&ws, v);
        build(join_span(&ws[..v]), &ws[v..end], &ws[end..])
    }
}

impl ClauseExtractor for RuleClauseExtractor {
    fn extract(&self, text: &str) -> Result<Vec<Clause>, AdherenceError> {
        let mut clauses = Vec::new();
        for (si, sentence) in split_sentences(text).into_iter().enumerate() {
            for segment in split_finite_clauses(sentence) {
                clauses.extend(Self::clause_of(segment, si));
            }
        }
        Ok(clauses)
    }
}

// ---------------------------------------------------------------------------
// Model-backed extraction
// ---------------------------------------------------------------------------

pub const CLAUSE_EXTRACTION_PROMPT: &str = "Extract every grammatical clause from the text below as a subject, predicate and object triple. \
Write one clause per line in the form: subject | predicate | object. Leave the object empty when the clause has none. \
Do not add any other text.\n\nText:\n";

/// Extractor that asks a chat model for `subject | predicate | object` lines.
pub struct LlmClauseExtractor<G> {
    generator: G,
}

impl<G: Generator> LlmClauseExtractor<G> {
    pub fn new(generator: G) -> Self {
        Self { generator }
    }
}

/// Parses `subject | predicate | object` lines; other lines are ignored.
pub fn parse_clause_lines(response: &str) -> Vec<Clause> {
    response
        .lines()
        .filter_map(|line| {
            let line = line.trim().trim_start_matches(['-', '*']).trim();
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            match fields.as_slice() {
                [s, p] | [s, p, ""] if !s.is_empty() && !p.is_empty() => Some((s.to_string(), p.to_string(), String::new())),
                [s, p, o] if !s.is_empty() && !p.is_empty() => Some((s.to_string(), p.to_string(), o.to_string())),
                _ => None,
            }
        })
        .enumerate()
        .map(|(i, (subject, predicate, object))| Clause {
            subject,
            predicate,
            object,
            sentence_index: i,
        })
        .collect()
}

impl<G: Generator> ClauseExtractor for LlmClauseExtractor<G> {
    fn extract(&self, text: &str) -> Result<Vec<Clause>, AdherenceError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let request = ChatRequest {
            model: self.generator.model_id().to_string(),
            messages: vec![ChatMessage::user(format!("{CLAUSE_EXTRACTION_PROMPT}{text}"))],
            temperature: 0.0,
            top_p: 0.0,
        };
        let completion = self.generator.complete(&request)?;
        Ok(parse_clause_lines(&completion.text))
    }
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Cosine between whole clause renderings.
    #[default]
    WholeClause,
    /// Mean of subject, predicate and object cosines.
    ComponentWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceClause {
    pub id: String,
    pub clause: Clause,
}

#[derive(Debug, Clone)]
struct ComponentVectors {
    subject: EmbeddingVector,
    predicate: EmbeddingVector,
    object: Option<EmbeddingVector>,
}

/// Source clauses with the vectors needed by one [`MatchMode`].
#[derive(Debug, Clone)]
pub struct SourceClauseIndex {
    mode: MatchMode,
    clauses: Vec<SourceClause>,
    whole: VectorIndex<()>,
    components: Vec<ComponentVectors>,
}

fn embed_batched(texts: &[String], embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>, ProviderError> {
    let mut out = Vec::with_capacity(texts.len());
    for batch in texts.chunks(EMBED_BATCH) {
        let refs: Vec<&str> = batch.iter().map(String::as_str).collect();
        out.extend(embed(&refs, embedder)?);
    }
    Ok(out)
}

fn embed_components(clauses: &[&Clause], embedder: &dyn Embedder) -> Result<Vec<ComponentVectors>, ProviderError> {
    let subjects: Vec<String> = clauses.iter().map(|c| c.subject.clone()).collect();
    let predicates: Vec<String> = clauses.iter().map(|c| c.predicate.clone()).collect();
    let objects: Vec<String> = clauses
        .iter()
        .filter(|c| !c.object.trim().is_empty())
        .map(|c| c.object.clone())
        .collect();
    let s = embed_batched(&subjects, embedder)?;
    let p = embed_batched(&predicates, embedder)?;
    let mut o = embed_batched(&objects, embedder)?.into_iter();
    Ok(clauses
        .iter()
        .zip(s.into_iter().zip(p))
        .map(|(c, (subject, predicate))| ComponentVectors {
            subject,
            predicate,
            object: if c.object.trim().is_empty() { None } else { o.next() },
        })
        .collect())
}

impl SourceClauseIndex {
    /// Builds the index; clauses with an identical rendering are kept once
    /// (the first id wins).
    pub fn build(
        clauses: impl IntoIterator<Item = SourceClause>,
        embedder: &dyn Embedder,
        mode: MatchMode,
    ) -> Result<Self, AdherenceError> {
        let mut seen = HashSet::new();
        let clauses: Vec<SourceClause> = clauses
            .into_iter()
            .filter(|sc| seen.insert(sc.clause.render()))
            .collect();
        let mut whole = VectorIndex::new(0);
        let mut components = Vec::new();
        if !clauses.is_empty() {
            match mode {
                MatchMode::WholeClause => {
                    let renders: Vec<String> = clauses.iter().map(|c| c.clause.render()).collect();
                    let vectors = embed_batched(&renders, embedder)?;
                    whole = VectorIndex::new(vectors[0].dims());
                    for (sc, v) in clauses.iter().zip(vectors) {
                        whole.insert(sc.id.clone(), v, ())?;
                    }
                }
                MatchMode::ComponentWeighted => {
                    let refs: Vec<&Clause> = clauses.iter().map(|c| &c.clause).collect();
                    components = embed_components(&refs, embedder)?;
                }
            }
        }
        Ok(Self {
            mode,
            clauses,
            whole,
            components,
        })
    }

    /// Extracts clauses from every chunk and indexes them. Clause ids are
    /// `{chunk_id}:{sentence}:{n}`.
    pub fn from_chunks(
        chunks: &[Chunk],
        extractor: &dyn ClauseExtractor,
        embedder: &dyn Embedder,
        mode: MatchMode,
    ) -> Result<Self, AdherenceError> {
        let mut all = Vec::new();
        for chunk in chunks {
            for (n, clause) in extractor.extract(&chunk.text)?.into_iter().enumerate() {
                all.push(SourceClause {
                    id: format!("{}:{}:{}", chunk.id, clause.sentence_index, n),
                    clause,
                });
            }
        }
        Self::build(all, embedder, mode)
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn clauses(&self) -> &[SourceClause] {
        &self.clauses
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseMatch {
    pub ai_clause: Clause,
    pub best_source_clause_id: String,
    pub similarity: f64,
}

fn component_similarity(a: &ComponentVectors, b: &ComponentVectors) -> Result<f64, IndexError> {
    let s = similarity(&a.subject, &b.subject)?;
    let p = similarity(&a.predicate, &b.predicate)?;
    let o = match (&a.object, &b.object) {
        (Some(x), Some(y)) => similarity(x, y)?,
        (None, None) => 1.0,
        _ => 0.0,
    };
    Ok(((s + p + o) / 3.0).clamp(0.0, 1.0))
}

/// Best source clause for every AI clause under the index's matching mode.
pub fn match_clauses(
    ai: &[Clause],
    index: &SourceClauseIndex,
    embedder: &dyn Embedder,
) -> Result<Vec<ClauseMatch>, AdherenceError> {
    if index.is_empty() {
        return Err(AdherenceError::EmptySourceIndex);
    }
    if ai.is_empty() {
        return Ok(Vec::new());
    }
    match index.mode {
        MatchMode::WholeClause => {
            let renders: Vec<String> = ai.iter().map(Clause::render).collect();
            let vectors = embed_batched(&renders, embedder)?;
            ai.iter()
                .zip(&vectors)
                .map(|(clause, v)| {
                    let (entry, score) = index.whole.top_k(v, 1)?.remove(0);
                    Ok(ClauseMatch {
                        ai_clause: clause.clone(),
                        best_source_clause_id: entry.key.clone(),
                        similarity: score.clamp(0.0, 1.0),
                    })
                })
                .collect()
        }
        MatchMode::ComponentWeighted => {
            let refs: Vec<&Clause> = ai.iter().collect();
            let vectors = embed_components(&refs, embedder)?;
            ai.iter()
                .zip(&vectors)
                .map(|(clause, v)| {
                    let mut best: Option<(&str, f64)> = None;
                    for (sc, sv) in index.clauses.iter().zip(&index.components) {
                        let s = component_similarity(v, sv)?;
                        let better = match best {
                            None => true,
                            Some((id, b)) => s > b || (s == b && sc.id.as_str() < id),
                        };
                        if better {
                            best = Some((&sc.id, s));
                        }
                    }
                    let (id, s) = best.expect("index is non-empty");
                    Ok(ClauseMatch {
                        ai_clause: clause.clone(),
                        best_source_clause_id: id.to_string(),
                        similarity: s,
                    })
                })
                .collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

fn check_threshold(t: f64) -> Result<(), AdherenceError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(AdherenceError::InvalidThreshold(t))
    }
}

pub fn adherent_count(matches: &[ClauseMatch], t: f64) -> Result<usize, AdherenceError> {
    check_threshold(t)?;
    if matches.is_empty() {
        return Err(AdherenceError::EmptyMatches);
    }
    Ok(matches.iter().filter(|m| m.similarity >= t).count())
}

/// Fraction of matches with similarity at least `t`.
pub fn factscore(matches: &[ClauseMatch], t: f64) -> Result<f64, AdherenceError> {
    Ok(adherent_count(matches, t)? as f64 / matches.len() as f64)
}

pub fn mean_similarity(matches: &[ClauseMatch]) -> Result<f64, AdherenceError> {
    if matches.is_empty() {
        return Err(AdherenceError::EmptyMatches);
    }
    Ok(matches.iter().map(|m| m.similarity).sum::<f64>() / matches.len() as f64)
}

pub fn threshold_sweep(matches: &[ClauseMatch], ts: &[f64]) -> Result<Vec<(f64, f64)>, AdherenceError> {
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(AdherenceError::UnsortedThresholds);
    }
    ts.iter().map(|&t| Ok((t, factscore(matches, t)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceReport {
    pub question_id: String,
    pub mode: Mode,
    pub model_id: String,
    pub threshold: f64,
    pub matching: MatchMode,
    pub factscore: f64,
    pub mean_similarity: f64,
    pub adherent_count: usize,
    pub clause_count: usize,
    pub word_count: usize,
}

/// Everything needed to score explanations against one source corpus.
pub struct AdherenceEvaluator<'a> {
    pub source: &'a SourceClauseIndex,
    pub extractor: &'a dyn ClauseExtractor,
    pub embedder: &'a dyn Embedder,
    pub threshold: f64,
}

impl AdherenceEvaluator<'_> {
    /// Strips citation markers, extracts clauses, matches them and scores.
    /// Explanations without clauses are [`AdherenceError::Unevaluable`].
    pub fn evaluate(
        &self,
        question_id: &str,
        mode: Mode,
        model_id: &str,
        explanation: &str,
    ) -> Result<(AdherenceReport, Vec<ClauseMatch>), AdherenceError> {
        check_threshold(self.threshold)?;
        let cleaned = strip_citations(explanation, None);
        let clauses = self.extractor.extract(&cleaned)?;
        if clauses.is_empty() {
            return Err(AdherenceError::Unevaluable);
        }
        let matches = match_clauses(&clauses, self.source, self.embedder)?;
        let adherent = adherent_count(&matches, self.threshold)?;
        let report = AdherenceReport {
            question_id: question_id.to_string(),
            mode,
            model_id: model_id.to_string(),
            threshold: self.threshold,
            matching: self.source.mode(),
            factscore: adherent as f64 / matches.len() as f64,
            mean_similarity: mean_similarity(&matches)?,
            adherent_count: adherent,
            clause_count: matches.len(),
            word_count: tokenize(&cleaned).len(),
        };
        Ok((report, matches))
    }
}

/// Labels usable as `X` in "What is X?": the leading noun phrase of each
/// subject and object, in order of appearance, deduplicated ignoring case.
pub fn clause_labels(clauses: &[Clause]) -> Vec<String> {
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut labels = Vec::new();
    for c in clauses {
        for span in [&c.subject, &c.object] {
            if let Some(label) = head_phrase(span) {
                if seen.insert(label.to_lowercase(), ()).is_none() {
                    labels.push(label);
                }
            }
        }
    }
    labels
}

fn head_phrase(span: &str) -> Option<String> {
    let ws = words(span);
    let start = ws.iter().take_while(|w| w.is(WH_WORDS)).count();
    let mut end = start;
    while end < ws.len() {
        let w = &ws[end];
        if end > start && (w.is(PREPOSITIONS) || w.is(CONJUNCTIONS) || w.is(WH_WORDS) || w.is(AUXILIARIES)) {
            break;
        }
        end += 1;
        if w.raw.ends_with([',', ';', ':']) {
            break;
        }
    }
    let head = &ws[start..end];
    let content = head.iter().any(|w| !w.is_closed_class() && !w.lower.is_empty());
    content.then(|| join_span(head)).filter(|s| !s.is_empty())
}
