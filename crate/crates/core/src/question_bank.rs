//! Offline bank of implicit questions extracted from textbook chunks, and
//! "What is X?" template questions for a primary question.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adherence::{clause_labels, AdherenceError, ClauseExtractor};
use crate::corpus::Chunk;
use crate::prompting::{fill_template, QuestionRecord, DEFAULT_DECODING};
use crate::provider::{ChatMessage, ChatRequest, Embedder, Generator, ProviderError};
use crate::vector_index::{embed, IndexError, VectorIndex};

pub const EXTRACTION_PROMPT: &str = "Analyse the English paragraph below to generate a comprehensive list of Q&As in English, capturing: what, who, why, how, how much, where, when, who by, which, whose. Answers must succinctly reflect the paragraph's content without repeating the question's wording. Q&As must use precise and direct language, avoiding vague terms and generalizations, clearly specifying the context and subjects involved without assuming prior knowledge.\n\
\n\
Example Paragraph: Alice, an experienced hiker, explores the Rocky Mountains despite rain. She packs her gear early in the morning.\n\
\n\
Expected Output:\n\
- Who is Alice? An experienced hiker.\n\
- What did Alice do? Explored the Rocky Mountains.\n\
- Despite what did Alice decide to explore the Rocky Mountains? Rain.\n\
- What did she pack? Gear.\n\
- When did she pack? Early in the morning.\n\
\n\
Paragraph for Analysis:\n\
{sentence}";

const EXTRACTION_BATCH: usize = 16;
const EMBED_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("empty paragraph")]
    EmptyParagraph,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Clauses(#[from] AdherenceError),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("question {0:?} has no vector in the bank index")]
    MissingVector(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitQuestion {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub source_chunk_id: String,
    pub tag: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedQas {
    pub pairs: Vec<(String, String)>,
    /// `-` lines that could not be split into a question and an answer.
    pub skipped: usize,
}

pub fn extraction_prompt(paragraph: &str) -> String {
    fill_template(EXTRACTION_PROMPT, &[("sentence", paragraph)])
}

/// Parses `- question? answer` lines. The question runs up to and including
/// the first `?`; lines not starting with `-` are ignored.
pub fn parse_qas(response: &str) -> ParsedQas {
    let mut parsed = ParsedQas::default();
    for line in response.lines() {
        let Some(rest) = line.trim_start().strip_prefix('-') else {
            continue;
        };
        let rest = rest.trim();
        match rest.find('?') {
            Some(pos) if rest[..pos].chars().any(char::is_alphanumeric) => {
                let question = rest[..=pos].trim().to_string();
                let answer = rest[pos + 1..].trim().to_string();
                parsed.pairs.push((question, answer));
            }
            _ => parsed.skipped += 1,
        }
    }
    parsed
}

pub fn extract_qas(paragraph: &str, generator: &dyn Generator) -> Result<ParsedQas, BankError> {
    if paragraph.trim().is_empty() {
        return Err(BankError::EmptyParagraph);
    }
    let request = ChatRequest {
        model: generator.model_id().to_string(),
        messages: vec![ChatMessage::user(extraction_prompt(paragraph))],
        temperature: DEFAULT_DECODING.temperature,
        top_p: DEFAULT_DECODING.top_p,
    };
    let completion = generator.complete(&request)?;
    let parsed = parse_qas(&completion.text);
    if parsed.pairs.is_empty() {
        tracing::debug!(skipped = parsed.skipped, "no parseable Q&A lines");
    }
    Ok(parsed)
}

#[derive(Debug, Clone)]
pub struct QuestionBank {
    questions: Vec<ImplicitQuestion>,
    index: VectorIndex<()>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankStats {
    pub chunks: usize,
    pub questions: usize,
    pub skipped_lines: usize,
    pub resumed_chunks: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    chunk_id: String,
    pairs: Vec<(String, String)>,
    skipped: usize,
}

impl QuestionBank {
    pub fn empty(dims: usize) -> Self {
        Self {
            questions: Vec::new(),
            index: VectorIndex::new(dims),
        }
    }

    /// Embeds the question texts and indexes them by question id.
    pub fn from_questions(questions: Vec<ImplicitQuestion>, embedder: &dyn Embedder) -> Result<Self, BankError> {
        let mut index = VectorIndex::new(0);
        for (n, batch) in questions.chunks(EMBED_BATCH).enumerate() {
            let texts: Vec<&str> = batch.iter().map(|q| q.question.as_str()).collect();
            let vectors = embed(&texts, embedder)?;
            if n == 0 {
                index = VectorIndex::new(vectors[0].dims());
            }
            for (q, v) in batch.iter().zip(vectors) {
                index.insert(q.id.clone(), v, ())?;
            }
        }
        Ok(Self { questions, index })
    }

    pub fn questions(&self) -> &[ImplicitQuestion] {
        &self.questions
    }

    pub fn index(&self) -> &VectorIndex<()> {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImplicitQuestion> {
        // ids are assigned densely in order, but banks loaded from disk may not be.
        self.questions.iter().find(|q| q.id == id)
    }

    /// Writes `questions.jsonl` and `index.jsonl` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), BankError> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join("questions.jsonl"))?);
        for q in &self.questions {
            serde_json::to_writer(&mut out, q).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        let mut idx = BufWriter::new(File::create(dir.join("index.jsonl"))?);
        self.index.write_jsonl(&mut idx)?;
        idx.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, BankError> {
        let qpath = dir.join("questions.jsonl");
        let mut questions = Vec::new();
        for (i, line) in BufReader::new(File::open(&qpath)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            questions.push(serde_json::from_str(&line).map_err(|e| BankError::Parse {
                path: qpath.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let index = VectorIndex::read_jsonl(BufReader::new(File::open(dir.join("index.jsonl"))?), 0)?;
        let bank = Self { questions, index };
        if let Some(q) = bank.questions.iter().find(|q| bank.index.get(&q.id).is_none()) {
            return Err(BankError::MissingVector(q.id.clone()));
        }
        Ok(bank)
    }
}

fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointLine>, BankError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(l) => lines.push(l),
            // A torn final line from an interrupted run is discarded.
            Err(_) => tracing::warn!(line = i + 1, "ignoring unreadable checkpoint line"),
        }
    }
    Ok(lines)
}

/// Runs Q&A extraction over every chunk (each chunk is one paragraph) and
/// indexes the questions.
///
/// With a checkpoint path, per-chunk results are appended to that file as
/// they complete and chunks already present there are not re-requested.
pub fn build_bank(
    chunks: &[Chunk],
    tag: &str,
    generator: &dyn Generator,
    embedder: &dyn Embedder,
    checkpoint: Option<&Path>,
) -> Result<(QuestionBank, BankStats), BankError> {
    let mut done: Vec<CheckpointLine> = match checkpoint {
        Some(p) => read_checkpoint(p)?,
        None => Vec::new(),
    };
    let mut stats = BankStats {
        chunks: chunks.len(),
        resumed_chunks: done.len(),
        ..BankStats::default()
    };
    let finished: HashSet<String> = done.iter().map(|l| l.chunk_id.clone()).collect();
    let pending: Vec<&Chunk> = chunks.iter().filter(|c| !finished.contains(&c.id)).collect();

    let mut writer = match checkpoint {
        Some(p) => Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    for batch in pending.chunks(EXTRACTION_BATCH) {
        let results: Vec<Result<CheckpointLine, BankError>> = batch
            .par_iter()
            .map(|c| {
                let parsed = extract_qas(&c.text, generator)?;
                Ok(CheckpointLine {
                    chunk_id: c.id.clone(),
                    pairs: parsed.pairs,
                    skipped: parsed.skipped,
                })
            })
            .collect();
        for r in results {
            let line = r?;
            if let Some(w) = writer.as_mut() {
                serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            done.push(line);
        }
    }

    let by_chunk: std::collections::HashMap<&str, &CheckpointLine> =
        done.iter().map(|l| (l.chunk_id.as_str(), l)).collect();
    let mut questions = Vec::new();
    for c in chunks {
        let Some(line) = by_chunk.get(c.id.as_str()) else {
            continue;
        };
        stats.skipped_lines += line.skipped;
        for (q, a) in &line.pairs {
            questions.push(ImplicitQuestion {
                id: format!("{tag}-q{:06}", questions.len()),
                question: q.clone(),
                answer: a.clone(),
                source_chunk_id: c.id.clone(),
                tag: tag.to_string(),
            });
        }
    }
    stats.questions = questions.len();
    Ok((QuestionBank::from_questions(questions, embedder)?, stats))
}

/// "What is X?" for every subject and object label of the primary question.
pub fn template_questions(primary: &QuestionRecord, extractor: &dyn ClauseExtractor) -> Result<Vec<String>, BankError> {
    let clauses = extractor.extract(&primary.query_text())?;
    Ok(clause_labels(&clauses)
        .into_iter()
        .map(|label| format!("What is {label}?"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adherence::{Clause, RuleClauseExtractor};
    use crate::scripted::{Responder, ScriptedGenerator};
    use crate::vector_index::HashedEmbedder;

    const EXAMPLE_BLOCK: &str = "- Who is Alice? An experienced hiker.\n\
- What did Alice do? Explored the Rocky Mountains.\n\
- Despite what did Alice decide to explore the Rocky Mountains? Rain.\n\
- What did she pack? Gear.\n\
- When did she pack? Early in the morning.";

    fn record(title: &str, body: &str) -> QuestionRecord {
        QuestionRecord {
            id: "q".into(),
            tag: "java".into(),
            title: title.into(),
            body: body.into(),
            accepted_answer: String::new(),
            views: 0,
        }
    }

    #[test]
    fn prompt_embeds_paragraph() {
        let p = extraction_prompt("Some paragraph.");
        assert!(p.starts_with("Analyse the English paragraph below"));
        assert!(p.ends_with("Paragraph for Analysis:\nSome paragraph."));
        assert!(p.contains(EXAMPLE_BLOCK));
    }

    #[test]
    fn parses_example_block() {
        let g = ScriptedGenerator::with_responder(
            "m",
            Responder::Fixed {
                text: EXAMPLE_BLOCK.into(),
            },
        );
        let parsed = extract_qas("Alice explores.", &g).unwrap();
        assert_eq!(parsed.pairs.len(), 5);
        assert_eq!(
            parsed.pairs[0],
            ("Who is Alice?".to_string(), "An experienced hiker.".to_string())
        );
        assert_eq!(parsed.pairs[3], ("What did she pack?".to_string(), "Gear.".to_string()));
    }

    #[test]
    fn lines_without_dash_or_question_mark() {
        assert_eq!(parse_qas("Nothing here\nAt all?"), ParsedQas::default());
        let p = parse_qas("- no question mark\n- ? orphan\n- Ok? yes");
        assert_eq!(p.pairs, vec![("Ok?".to_string(), "yes".to_string())]);
        assert_eq!(p.skipped, 2);
    }

    #[test]
    fn empty_paragraph_rejected() {
        let g = ScriptedGenerator::with_responder("m", Responder::Fail);
        assert!(matches!(extract_qas("  ", &g), Err(BankError::EmptyParagraph)));
    }

    fn chunk(i: usize) -> Chunk {
        Chunk {
            id: format!("c{i}"),
            doc_id: "d".into(),
            token_start: 0,
            token_end: 1,
            text: format!("paragraph {i}"),
            page_span: (1, 1),
        }
    }

    #[test]
    fn bank_size_is_sum_of_pairs() {
        let g = ScriptedGenerator::with_responder(
            "m",
            Responder::Fixed {
                text: "- What is a? A.\n- What is b? B.".into(),
            },
        );
        let e = HashedEmbedder::default();
        let chunks: Vec<Chunk> = (0..3).map(chunk).collect();
        let (bank, stats) = build_bank(&chunks, "java", &g, &e, None).unwrap();
        assert_eq!(bank.len(), 6);
        assert_eq!(stats.questions, 6);
        assert_eq!(bank.index().len(), 6);
        assert_eq!(bank.questions()[2].source_chunk_id, "c1");
        let (empty, _) = build_bank(&[], "java", &g, &e, None).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn checkpoint_resumes_without_new_calls() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("bank.ckpt");
        let e = HashedEmbedder::default();
        let chunks: Vec<Chunk> = (0..4).map(chunk).collect();
        let ok = ScriptedGenerator::with_responder(
            "m",
            Responder::Fixed {
                text: "- What is x? X.".into(),
            },
        );
        build_bank(&chunks[..2], "t", &ok, &e, Some(&ckpt)).unwrap();
        // A failing generator proves the first two chunks are not re-requested.
        let failing = ScriptedGenerator::with_responder("m", Responder::Fail);
        assert!(build_bank(&chunks, "t", &failing, &e, Some(&ckpt)).is_err());
        let (bank, stats) = build_bank(&chunks, "t", &ok, &e, Some(&ckpt)).unwrap();
        assert_eq!(stats.resumed_chunks, 2);
        assert_eq!(bank.len(), 4);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let qs = vec![ImplicitQuestion {
            id: "t-q000000".into(),
            question: "What is a list?".into(),
            answer: "A sequence.".into(),
            source_chunk_id: "c0".into(),
            tag: "t".into(),
        }];
        let bank = QuestionBank::from_questions(qs, &HashedEmbedder::default()).unwrap();
        bank.save(dir.path()).unwrap();
        let back = QuestionBank::load(dir.path()).unwrap();
        assert_eq!(back.questions(), bank.questions());
        assert_eq!(back.index().entries(), bank.index().entries());
    }

    struct FixedClauses(Vec<Clause>);

    impl ClauseExtractor for FixedClauses {
        fn extract(&self, _text: &str) -> Result<Vec<Clause>, AdherenceError> {
            Ok(self.0.clone())
        }
    }

    fn obj(o: &str) -> Clause {
        Clause {
            subject: "I".into(),
            predicate: "convert".into(),
            object: o.into(),
            sentence_index: 0,
        }
    }

    #[test]
    fn templates_from_object_labels() {
        let ex = FixedClauses(vec![obj("a String"), obj("an int"), obj("A string")]);
        let q = record("How do I convert a String to an int in Java?", "");
        assert_eq!(
            template_questions(&q, &ex).unwrap(),
            vec!["What is a String?", "What is an int?"]
        );
        assert!(template_questions(&q, &FixedClauses(vec![])).unwrap().is_empty());
    }

    #[test]
    fn templates_with_rule_extractor() {
        let q = record("What is dependency injection?", "");
        assert_eq!(
            template_questions(&q, &RuleClauseExtractor).unwrap(),
            vec!["What is dependency injection?"]
        );
        let q = record("How do I convert a String to an int in Java?", "");
        assert_eq!(template_questions(&q, &RuleClauseExtractor).unwrap(), vec!["What is a String?"]);
    }
}
