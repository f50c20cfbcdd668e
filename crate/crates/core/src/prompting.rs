//! Prompt assembly for the three answer modes, generation through a
//! [`Generator`], and citation stripping for display and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, Utc};
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coi_planner::{IllocutionPlan, PlanRecord};
use crate::corpus::Chunk;
use crate::openai::{OpenAiChat, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL};
use crate::provider::{CachedGenerator, CallCache, ChatMessage, ChatRequest, Generator, ProviderError, RetryPolicy};
use crate::scripted::{Responder, ScriptedGenerator};

pub const GENAI_TEMPLATE: &str = "Provide a detailed, concise, pertinent, and coherent explanatory answer to the question below. Provide examples if needed.\n\
\n\
Question:\n\
#{topic}\n\
{body}";

pub const RAG_TEMPLATE: &str = "Sift through the text chunks provided (extracted from the textbook \"{textbook}\") and combine the most relevant ones into a detailed, concise, pertinent, and coherent explanatory answer to the question below. Every statement must contain a reference to the source textbook page(s). Provide examples if needed.\n\
\n\
Question:\n\
#{topic}\n\
{body}\n\
\n\
Text chunks:\n\
{contents}";

/// Decoding used for every generated explanation.
pub const DEFAULT_DECODING: Decoding = Decoding {
    temperature: 0.5,
    top_p: 0.0,
};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("RAG prompt needs at least one chunk; use genai mode for retrieval-free answers")]
    NoChunks,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Genai,
    Rag,
    RagCoi,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Genai, Mode::Rag, Mode::RagCoi];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Genai => "genai",
            Mode::Rag => "rag",
            Mode::RagCoi => "rag_coi",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "genai" => Ok(Mode::Genai),
            "rag" => Ok(Mode::Rag),
            "rag_coi" | "rag+coi" => Ok(Mode::RagCoi),
            other => Err(format!("unknown mode {other:?} (expected genai, rag or rag_coi)")),
        }
    }
}

/// A question as exported from the Q&A site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub tag: String,
    pub title: String,
    pub body: String,
    pub accepted_answer: String,
    pub views: u64,
}

impl QuestionRecord {
    /// Retrieval query: title and body separated by a newline.
    pub fn query_text(&self) -> String {
        if self.body.trim().is_empty() {
            self.title.clone()
        } else {
            format!("{}\n{}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    question_id: String,
    mode: Mode,
    text: String,
    decoding: Decoding,
    retrieved_chunk_ids: Vec<String>,
    plan: Option<PlanRecord>,
}

impl PromptBundle {
    pub fn question_id(&self) -> &str {
        &self.question_id
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn text(&self) -> &str {
        &self.text
    }
    pub fn decoding(&self) -> Decoding {
        self.decoding
    }
    pub fn retrieved_chunk_ids(&self) -> &[String] {
        &self.retrieved_chunk_ids
    }
    pub fn plan(&self) -> Option<&PlanRecord> {
        self.plan.as_ref()
    }

    /// Mode/field coupling: genai has no chunks, rag_coi carries a plan.
    pub fn is_consistent(&self) -> bool {
        match self.mode {
            Mode::Genai => self.retrieved_chunk_ids.is_empty() && self.plan.is_none(),
            Mode::Rag => !self.retrieved_chunk_ids.is_empty() && self.plan.is_none(),
            Mode::RagCoi => self.plan.is_some(),
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(topic|body|textbook|contents|sentence)\}").unwrap())
}

/// Substitutes `{name}` placeholders in one pass; substituted values are not
/// rescanned.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    placeholder_re()
        .replace_all(template, |caps: &Captures| {
            let name = &caps[1];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map_or_else(|| caps[0].to_string(), |(_, v)| v.to_string())
        })
        .into_owned()
}

/// `Page {first}-{last}:\n{text}` blocks separated by blank lines.
pub fn render_chunks<'a>(chunks: impl IntoIterator<Item = &'a Chunk>) -> String {
    chunks
        .into_iter()
        .map(|c| format!("Page {}-{}:\n{}", c.page_span.0, c.page_span.1, c.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn assemble_genai(q: &QuestionRecord) -> PromptBundle {
    PromptBundle {
        question_id: q.id.clone(),
        mode: Mode::Genai,
        text: fill_template(GENAI_TEMPLATE, &[("topic", &q.title), ("body", &q.body)]),
        decoding: DEFAULT_DECODING,
        retrieved_chunk_ids: Vec::new(),
        plan: None,
    }
}

fn rag_text(q: &QuestionRecord, textbook: &str, chunks: &[Chunk]) -> String {
    let contents = render_chunks(chunks);
    fill_template(
        RAG_TEMPLATE,
        &[
            ("textbook", textbook),
            ("topic", &q.title),
            ("body", &q.body),
            ("contents", &contents),
        ],
    )
}

pub fn assemble_rag(q: &QuestionRecord, textbook: &str, chunks: &[Chunk]) -> Result<PromptBundle, PromptError> {
    if chunks.is_empty() {
        return Err(PromptError::NoChunks);
    }
    Ok(PromptBundle {
        question_id: q.id.clone(),
        mode: Mode::Rag,
        text: rag_text(q, textbook, chunks),
        decoding: DEFAULT_DECODING,
        retrieved_chunk_ids: chunks.iter().map(|c| c.id.clone()).collect(),
        plan: None,
    })
}

/// The RAG prompt followed by one `Implicit question` block per selected
/// question, in plan order. With an empty plan the text equals the RAG prompt.
pub fn assemble_rag_coi(
    q: &QuestionRecord,
    textbook: &str,
    primary_chunks: &[Chunk],
    plan: &IllocutionPlan,
) -> Result<PromptBundle, PromptError> {
    if primary_chunks.is_empty() && plan.selected.is_empty() {
        return Err(PromptError::NoChunks);
    }
    let mut text = rag_text(q, textbook, primary_chunks);
    let mut ids: Vec<String> = primary_chunks.iter().map(|c| c.id.clone()).collect();
    for (i, sel) in plan.selected.iter().enumerate() {
        text.push_str(&format!(
            "\n\nImplicit question {}: {}\nContext:\n{}",
            i + 1,
            sel.question.text,
            render_chunks(sel.chunks.iter().map(|(c, _)| c))
        ));
        ids.extend(sel.chunks.iter().map(|(c, _)| c.id.clone()));
    }
    Ok(PromptBundle {
        question_id: q.id.clone(),
        mode: Mode::RagCoi,
        text,
        decoding: DEFAULT_DECODING,
        retrieved_chunk_ids: ids,
        plan: Some(plan.to_record()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub question_id: String,
    pub mode: Mode,
    pub model_id: String,
    pub text: String,
    pub decoding: Decoding,
    pub created_at: String,
}

/// Sends the bundle as a single user message with its decoding parameters.
pub fn generate(bundle: &PromptBundle, generator: &dyn Generator) -> Result<Explanation, PromptError> {
    if bundle.text.trim().is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    let request = ChatRequest {
        model: generator.model_id().to_string(),
        messages: vec![ChatMessage::user(bundle.text.clone())],
        temperature: bundle.decoding.temperature,
        top_p: bundle.decoding.top_p,
    };
    let completion = generator.complete(&request)?;
    if completion.text.trim().is_empty() {
        return Err(ProviderError::EmptyCompletion(generator.model_id().to_string()).into());
    }
    let created_at = DateTime::<Utc>::from_timestamp(completion.created, 0)
        .unwrap_or_default()
        .to_rfc3339();
    Ok(Explanation {
        question_id: bundle.question_id.clone(),
        mode: bundle.mode,
        model_id: generator.model_id().to_string(),
        text: completion.text,
        decoding: bundle.decoding,
        created_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorProviderConfig {
    /// OpenAI-compatible `/chat/completions` endpoint.
    Remote {
        model_id: String,
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default)]
        api_key_env: Option<String>,
    },
    Scripted {
        model_id: String,
        /// Request content hash to response text.
        #[serde(default)]
        script: BTreeMap<String, String>,
        #[serde(default)]
        responder: Responder,
    },
}

impl GeneratorProviderConfig {
    pub fn model_id(&self) -> &str {
        match self {
            Self::Remote { model_id, .. } | Self::Scripted { model_id, .. } => model_id,
        }
    }

    /// Instantiates the provider, behind the call cache when one is given.
    pub fn build(&self, cache: Option<Arc<CallCache>>, offline: bool) -> Result<Arc<dyn Generator>, ProviderError> {
        let inner: Arc<dyn Generator> = match self {
            Self::Remote {
                model_id,
                endpoint,
                api_key_env,
            } => {
                let env = api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
                let api_key = std::env::var(env).ok();
                if api_key.is_none() && !offline {
                    return Err(ProviderError::MissingCredentials(env.to_string()));
                }
                Arc::new(OpenAiChat::new(
                    endpoint.as_deref().unwrap_or(DEFAULT_BASE_URL),
                    model_id,
                    api_key,
                    RetryPolicy::default(),
                ))
            }
            Self::Scripted {
                model_id,
                script,
                responder,
            } => Arc::new(ScriptedGenerator::new(model_id.clone(), script.clone(), responder.clone())),
        };
        Ok(match cache {
            Some(c) => Arc::new(CachedGenerator::new(inner, c, offline)),
            None => inner,
        })
    }
}

// ---------------------------------------------------------------------------
// Citation stripping
// ---------------------------------------------------------------------------

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([ \t]*)\[[^\[\]\n]*[^\[\]\s][^\[\]\n]*\]([ \t]*)").unwrap())
}

fn paren_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([ \t]*)\(([^()\n]*)\)([ \t]*)").unwrap())
}

fn source_keyword_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bpages?\b|\bpp?\.").unwrap())
}

/// Removes one matched span. Leading blanks go with the span; trailing
/// blanks are also dropped when the span starts a line or precedes
/// punctuation. Spans glued to a preceding word (`arr[i]`, `f(x)`) stay.
fn remove_span(text: &str, caps: &Captures, trailing_group: usize) -> Option<String> {
    let whole = caps.get(0).unwrap();
    let leading = &caps[1];
    let before = text[..whole.start()].chars().next_back();
    if leading.is_empty() && before.is_some_and(|c| c.is_alphanumeric() || matches!(c, '_' | ']' | ')')) {
        return None;
    }
    let trailing = &caps[trailing_group];
    let after = text[whole.end()..].chars().next();
    let line_start = leading.is_empty() && before.is_none_or(|c| c == '\n');
    let ends_phrase = after.is_none_or(|c| c == '\n' || matches!(c, '.' | ',' | ';' | ':' | '!' | '?'));
    let spaced_before = leading.is_empty() && before.is_some_and(char::is_whitespace);
    Some(if line_start || ends_phrase || spaced_before {
        String::new()
    } else if !leading.is_empty() {
        leading.to_string()
    } else {
        trailing.to_string()
    })
}

fn strip_once(text: &str, title: Option<&Regex>) -> String {
    let out = bracket_re()
        .replace_all(text, |caps: &Captures| {
            remove_span(text, caps, 2).unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned();
    let is_source = |inner: &str| source_keyword_re().is_match(inner) || title.is_some_and(|t| t.is_match(inner));
    let snapshot = out.clone();
    paren_re()
        .replace_all(&out, |caps: &Captures| {
            if !is_source(&caps[2]) {
                return caps[0].to_string();
            }
            remove_span(&snapshot, caps, 3).unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

/// Removes bracketed citation spans and parenthesized source annotations.
///
/// Parentheses are removed only when they mention a page (`page`, `p.`,
/// `pp.`) or the textbook title, so code and math parentheses survive.
pub fn strip_citations(text: &str, textbook_title: Option<&str>) -> String {
    let title = textbook_title
        .filter(|t| !t.trim().is_empty())
        .map(|t| Regex::new(&format!("(?i){}", regex::escape(t.trim()))).expect("escaped title is a valid regex"));
    let mut current = text.to_string();
    loop {
        let next = strip_once(&current, title.as_ref());
        if next == current {
            return current;
        }
        current = next;
    }
}
