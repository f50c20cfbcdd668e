//! Deterministic offline generator for tests and hermetic runs.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::adherence::{split_sentences, ClauseExtractor, RuleClauseExtractor};
use crate::provider::{ChatRequest, Completion, Generator, ProviderError};

/// Behaviour for requests that have no entry in the script.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Responder {
    /// Unscripted requests fail.
    #[default]
    Fail,
    Fixed { text: String },
    /// Answers with the complete sentences found in the prompt's page blocks,
    /// preceded by fixed "prior knowledge" sentences.
    EchoContext {
        #[serde(default)]
        prior_knowledge: Vec<String>,
        #[serde(default)]
        max_sentences: Option<usize>,
    },
    /// Answers a Q&A extraction prompt with one `- What ...? subject.` line
    /// per clause of the paragraph.
    QaFromParagraph {
        #[serde(default)]
        max_pairs: Option<usize>,
    },
}

pub struct ScriptedGenerator {
    model_id: String,
    script: BTreeMap<String, String>,
    responder: Responder,
}

impl ScriptedGenerator {
    pub fn new(model_id: impl Into<String>, script: BTreeMap<String, String>, responder: Responder) -> Self {
        Self {
            model_id: model_id.into(),
            script,
            responder,
        }
    }

    pub fn with_responder(model_id: impl Into<String>, responder: Responder) -> Self {
        Self::new(model_id, BTreeMap::new(), responder)
    }
}

const PARAGRAPH_MARKER: &str = "Paragraph for Analysis:\n";
const CHUNKS_MARKER: &str = "\n\nText chunks:\n";

fn is_page_header(line: &str) -> bool {
    line.strip_prefix("Page ")
        .and_then(|r| r.strip_suffix(':'))
        .is_some_and(|r| r.split('-').all(|p| p.trim().parse::<u32>().is_ok()))
}

/// Text of every `Page a-b:` block after the chunk section marker.
pub fn context_blocks(prompt: &str) -> Vec<String> {
    let Some(pos) = prompt.find(CHUNKS_MARKER) else {
        return Vec::new();
    };
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in prompt[pos + CHUNKS_MARKER.len()..].lines() {
        if is_page_header(line) {
            if let Some(b) = current.take() {
                blocks.push(b.join(" "));
            }
            current = Some(Vec::new());
        } else if line.starts_with("Implicit question ") || line == "Context:" {
            if let Some(b) = current.take() {
                blocks.push(b.join(" "));
            }
        } else if let Some(b) = current.as_mut() {
            if !line.trim().is_empty() {
                b.push(line);
            }
        }
    }
    if let Some(b) = current {
        blocks.push(b.join(" "));
    }
    blocks
}

fn complete_sentences(block: &str) -> impl Iterator<Item = &str> {
    split_sentences(block).into_iter().filter(|s| {
        s.chars().next().is_some_and(char::is_uppercase) && s.ends_with(['.', '!', '?'])
    })
}

fn echo_context(prompt: &str, prior: &[String], max: Option<usize>) -> String {
    let mut seen = HashSet::new();
    let mut sentences: Vec<String> = Vec::new();
    for block in context_blocks(prompt) {
        for s in complete_sentences(&block) {
            if seen.insert(s.to_string()) {
                sentences.push(s.to_string());
            }
        }
    }
    if let Some(max) = max {
        sentences.truncate(max);
    }
    let mut out: Vec<String> = prior.to_vec();
    if sentences.is_empty() && out.is_empty() {
        let topic = prompt
            .lines()
            .find_map(|l| l.strip_prefix('#'))
            .unwrap_or("the question");
        out.push(format!("The question asks about {}", topic.trim()));
    }
    out.extend(sentences);
    out.join(" ")
}

fn qa_from_paragraph(prompt: &str, max: Option<usize>) -> String {
    let paragraph = prompt
        .rfind(PARAGRAPH_MARKER)
        .map_or("", |p| &prompt[p + PARAGRAPH_MARKER.len()..]);
    let clauses = RuleClauseExtractor.extract(paragraph).unwrap_or_default();
    let mut lines: Vec<String> = clauses
        .iter()
        .map(|c| {
            let question = if c.object.is_empty() {
                format!("What {}?", c.predicate)
            } else {
                format!("What {} {}?", c.predicate, c.object.trim_end_matches('?'))
            };
            format!("- {} {}.", question.replace("??", "?"), c.subject)
        })
        .collect();
    if let Some(max) = max {
        lines.truncate(max);
    }
    lines.join("\n")
}

impl Generator for ScriptedGenerator {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        let key = request.content_hash();
        let text = if let Some(t) = self.script.get(&key) {
            t.clone()
        } else {
            match &self.responder {
                Responder::Fail => {
                    return Err(ProviderError::Unscripted {
                        model: self.model_id.clone(),
                        key,
                    })
                }
                Responder::Fixed { text } => text.clone(),
                Responder::EchoContext {
                    prior_knowledge,
                    max_sentences,
                } => echo_context(request.prompt(), prior_knowledge, *max_sentences),
                Responder::QaFromParagraph { max_pairs } => qa_from_paragraph(request.prompt(), *max_pairs),
            }
        };
        Ok(Completion { text, created: 0 })
    }
}
