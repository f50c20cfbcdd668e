//! Experiment stages. Each stage reads the previous stage's artifacts from
//! the output directory and writes its own, so stages can be run one at a
//! time from the CLI or chained by [`run_experiment`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use coi_core::adherence::{AdherenceEvaluator, AdherenceReport, ClauseExtractor, LlmClauseExtractor, RuleClauseExtractor, SourceClauseIndex};
use coi_core::coi_planner::{self, IllocutionPlan, PlanRecord};
use coi_core::corpus::{self, Chunk, Document};
use coi_core::prompting::{
    assemble_genai, assemble_rag, assemble_rag_coi, generate, Explanation, Mode, PromptBundle, QuestionRecord,
};
use coi_core::provider::{CallCache, Embedder, Generator, ProviderError};
use coi_core::question_bank::{build_bank, BankStats, QuestionBank};
use coi_core::vector_index::{embed, EmbeddingVector, VectorIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{analyze, Analysis};
use crate::artifacts::*;
use crate::config::{BankConfig, ExperimentConfig, ExtractorConfig};
use crate::questions::load_questions;
use crate::report::write_report;

const EMBED_BATCH: usize = 256;

/// Counts embedding requests made for retrieval (chunk indexing, bank
/// questions, query vectors).
struct CountingEmbedder {
    inner: Arc<dyn Embedder>,
    requests: AtomicU64,
    texts: AtomicU64,
}

impl Embedder for CountingEmbedder {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.texts.fetch_add(texts.len() as u64, Ordering::Relaxed);
        self.inner.embed(texts)
    }
}

/// Shared state for one configured experiment.
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub cache: Option<Arc<CallCache>>,
    embedder: Arc<dyn Embedder>,
    retrieval: Arc<CountingEmbedder>,
    extractor: Arc<dyn ClauseExtractor>,
    pool: rayon::ThreadPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub tag: String,
    pub prompt_sha256: String,
    pub retrieved_chunk_ids: Vec<String>,
    #[serde(flatten)]
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub tag: String,
    #[serde(flatten)]
    pub report: AdherenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub question_id: String,
    pub model_id: String,
    pub mode: Mode,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub questions: usize,
    pub expected_items: usize,
    pub items: usize,
    pub failures: Vec<FailureRecord>,
    pub retrieval_requests: u64,
    pub retrieval_texts: u64,
    pub analysis: Analysis,
}

impl ExperimentReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Workspace {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let cache = match &cfg.cache_dir {
            Some(dir) => Some(Arc::new(CallCache::open(dir).with_context(|| format!("opening cache {}", dir.display()))?)),
            None => None,
        };
        let embedder = cfg.embedder.build(cache.clone(), cfg.offline)?;
        let retrieval = Arc::new(CountingEmbedder {
            inner: Arc::clone(&embedder),
            requests: AtomicU64::new(0),
            texts: AtomicU64::new(0),
        });
        let extractor: Arc<dyn ClauseExtractor> = match &cfg.adherence.extractor {
            ExtractorConfig::Rule => Arc::new(RuleClauseExtractor),
            ExtractorConfig::Llm { generator } => Arc::new(LlmClauseExtractor::new(generator.build(cache.clone(), cfg.offline)?)),
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.max_in_flight).build()?;
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self {
            cfg,
            cache,
            embedder,
            retrieval,
            extractor,
            pool,
        })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn retrieval_requests(&self) -> u64 {
        self.retrieval.requests.load(Ordering::Relaxed)
    }

    pub fn retrieval_texts(&self) -> u64 {
        self.retrieval.texts.load(Ordering::Relaxed)
    }

    fn retrieval_embedder(&self) -> &dyn Embedder {
        self.retrieval.as_ref()
    }

    /// Questions, checked against the configured corpora.
    pub fn questions(&self) -> Result<Vec<QuestionRecord>> {
        let qs = load_questions(&self.cfg.questions)?;
        if let Some(q) = qs.iter().find(|q| self.cfg.corpus(&q.tag).is_none()) {
            return Err(anyhow!("question {} has tag {:?} with no configured corpus", q.id, q.tag));
        }
        Ok(qs)
    }

    fn title(&self, tag: &str) -> &str {
        self.cfg.corpus(tag).map_or("", |c| c.title.as_str())
    }

    pub fn load_chunks(&self, tag: &str) -> Result<Vec<Chunk>> {
        let path = chunks_path(self.out(), tag);
        let file = fs::File::open(&path).with_context(|| format!("opening {} (run ingest first)", path.display()))?;
        Ok(corpus::read_chunks_jsonl(std::io::BufReader::new(file))?)
    }

    fn chunk_index(&self, chunks: &[Chunk]) -> Result<VectorIndex<Chunk>> {
        let mut index = VectorIndex::new(0);
        for (n, batch) in chunks.chunks(EMBED_BATCH).enumerate() {
            let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
            let vectors = embed(&texts, self.retrieval_embedder())?;
            if n == 0 {
                index = VectorIndex::new(vectors[0].dims());
            }
            for (c, v) in batch.iter().zip(vectors) {
                index.insert(c.id.clone(), v, c.clone())?;
            }
        }
        Ok(index)
    }

    fn generator(&self, i: usize) -> Result<Arc<dyn Generator>> {
        Ok(self.cfg.models[i].build(self.cache.clone(), self.cfg.offline)?)
    }

    // -----------------------------------------------------------------------
    // Stages
    // -----------------------------------------------------------------------

    /// Chunks every corpus document. Returns chunk counts per tag.
    pub fn ingest(&self) -> Result<BTreeMap<String, usize>> {
        let mut counts = BTreeMap::new();
        for c in &self.cfg.corpora {
            let raw = fs::read_to_string(&c.path).with_context(|| format!("reading corpus {}", c.path.display()))?;
            let doc = Document::parse(c.tag.clone(), c.title.clone(), &raw)?;
            let chunks = corpus::chunk(&doc, &self.cfg.chunking)?;
            if chunks.is_empty() {
                return Err(anyhow!("corpus {} is empty", c.path.display()));
            }
            let path = chunks_path(self.out(), &c.tag);
            fs::create_dir_all(path.parent().expect("chunk path has a parent"))?;
            let mut out = std::io::BufWriter::new(fs::File::create(&path)?);
            corpus::write_chunks_jsonl(&mut out, &chunks)?;
            std::io::Write::flush(&mut out)?;
            counts.insert(c.tag.clone(), chunks.len());
        }
        Ok(counts)
    }

    /// Builds implicit-question banks when they are generated and rag_coi
    /// is requested.
    pub fn build_banks(&self) -> Result<BTreeMap<String, BankStats>> {
        let mut stats = BTreeMap::new();
        let BankConfig::Generate { generator } = &self.cfg.bank else {
            return Ok(stats);
        };
        if !self.cfg.has_mode(Mode::RagCoi) {
            return Ok(stats);
        }
        let gen = generator.build(self.cache.clone(), self.cfg.offline)?;
        for c in &self.cfg.corpora {
            let chunks = self.load_chunks(&c.tag)?;
            let dir = bank_dir(self.out(), &c.tag);
            fs::create_dir_all(&dir)?;
            let checkpoint = dir.join("checkpoint.jsonl");
            let (bank, s) = self
                .pool
                .install(|| build_bank(&chunks, &c.tag, gen.as_ref(), self.retrieval_embedder(), Some(&checkpoint)))?;
            bank.save(&dir)?;
            // The checkpoint only serves resumption.
            fs::remove_file(&checkpoint)?;
            stats.insert(c.tag.clone(), s);
        }
        Ok(stats)
    }

    fn load_bank(&self, tag: &str, dims: usize) -> Result<QuestionBank> {
        Ok(match &self.cfg.bank {
            BankConfig::None => QuestionBank::empty(dims),
            BankConfig::Load { path } => QuestionBank::load(&path.join(tag))?,
            BankConfig::Generate { .. } => QuestionBank::load(&bank_dir(self.out(), tag))?,
        })
    }

    /// Retrieval and illocution planning for every question. Writes
    /// `plans.jsonl` (empty when no retrieval mode is configured).
    pub fn plan(&self, questions: &[QuestionRecord]) -> Result<BTreeMap<String, Result<IllocutionPlan, String>>> {
        let mut plans = BTreeMap::new();
        if self.cfg.needs_retrieval() {
            for c in &self.cfg.corpora {
                let tagged: Vec<&QuestionRecord> = questions.iter().filter(|q| q.tag == c.tag).collect();
                if tagged.is_empty() {
                    continue;
                }
                let chunks = self.load_chunks(&c.tag)?;
                let index = self.chunk_index(&chunks)?;
                let bank = if self.cfg.has_mode(Mode::RagCoi) {
                    self.load_bank(&c.tag, index.dims())?
                } else {
                    QuestionBank::empty(index.dims())
                };
                let params = self.cfg.planner;
                let results: Vec<Result<IllocutionPlan, String>> = self.pool.install(|| {
                    tagged
                        .par_iter()
                        .map(|q| {
                            let r = if self.cfg.has_mode(Mode::RagCoi) {
                                coi_planner::plan(q, &bank, &index, self.retrieval_embedder(), self.extractor.as_ref(), &params)
                            } else {
                                coi_planner::retrieve_primary(q, &index, self.retrieval_embedder(), params.chunks_per_question)
                                    .map(|primary| IllocutionPlan {
                                        primary_chunks: primary,
                                        ..IllocutionPlan::empty(q.id.clone())
                                    })
                            };
                            r.map_err(|e| e.to_string())
                        })
                        .collect()
                });
                for (q, r) in tagged.iter().zip(results) {
                    plans.insert(q.id.clone(), r);
                }
            }
        }
        let records: Vec<PlanRecord> = questions
            .iter()
            .filter_map(|q| plans.get(&q.id).and_then(|r| r.as_ref().ok()).map(IllocutionPlan::to_record))
            .collect();
        write_jsonl(&self.out().join(PLANS), &records)?;
        Ok(plans)
    }

    fn bundle(&self, q: &QuestionRecord, mode: Mode, plan: Option<&Result<IllocutionPlan, String>>) -> Result<PromptBundle, String> {
        if mode == Mode::Genai {
            return Ok(assemble_genai(q));
        }
        let plan = match plan {
            Some(Ok(p)) => p,
            Some(Err(e)) => return Err(format!("planning failed: {e}")),
            None => return Err("no plan for question".into()),
        };
        let primary: Vec<Chunk> = plan.primary_chunks.iter().map(|(c, _)| c.clone()).collect();
        let title = self.title(&q.tag);
        let r = match mode {
            Mode::Rag => assemble_rag(q, title, &primary),
            _ => assemble_rag_coi(q, title, &primary, plan),
        };
        r.map_err(|e| e.to_string())
    }

    /// Generates an explanation for every (question, model, mode). Writes
    /// `explanations.jsonl` and `answer_failures.jsonl`.
    pub fn answer(&self, questions: &[QuestionRecord]) -> Result<(Vec<AnswerRecord>, Vec<FailureRecord>)> {
        let plans = self.plan(questions)?;
        let generators: Vec<Arc<dyn Generator>> = (0..self.cfg.models.len()).map(|i| self.generator(i)).collect::<Result<_>>()?;
        let per_question: Vec<Vec<Result<AnswerRecord, FailureRecord>>> = self.pool.install(|| {
            questions
                .par_iter()
                .map(|q| {
                    let mut out = Vec::new();
                    for (mi, gen) in generators.iter().enumerate() {
                        let model_id = self.cfg.models[mi].model_id();
                        for &mode in &self.cfg.modes {
                            let fail = |error: String| FailureRecord {
                                question_id: q.id.clone(),
                                model_id: model_id.to_string(),
                                mode,
                                stage: "answer".into(),
                                error,
                            };
                            let result = self.bundle(q, mode, plans.get(&q.id)).and_then(|b| {
                                let explanation = generate(&b, gen.as_ref()).map_err(|e| e.to_string())?;
                                Ok(AnswerRecord {
                                    tag: q.tag.clone(),
                                    prompt_sha256: sha256_hex(b.text()),
                                    retrieved_chunk_ids: b.retrieved_chunk_ids().to_vec(),
                                    explanation,
                                })
                            });
                            out.push(result.map_err(fail));
                        }
                    }
                    out
                })
                .collect()
        });
        let (mut answers, mut failures) = (Vec::new(), Vec::new());
        for r in per_question.into_iter().flatten() {
            match r {
                Ok(a) => answers.push(a),
                Err(f) => {
                    tracing::warn!(question = %f.question_id, model = %f.model_id, mode = %f.mode, "{}", f.error);
                    failures.push(f);
                }
            }
        }
        write_jsonl(&self.out().join(EXPLANATIONS), &answers)?;
        write_jsonl(&self.out().join(ANSWER_FAILURES), &failures)?;
        Ok((answers, failures))
    }

    /// Scores every explanation against its textbook. Writes `items.jsonl`
    /// and `evaluate_failures.jsonl`.
    pub fn evaluate(&self) -> Result<(Vec<ItemRecord>, Vec<FailureRecord>)> {
        let answers: Vec<AnswerRecord> = read_jsonl(&self.out().join(EXPLANATIONS))?;
        let mut sources: HashMap<String, SourceClauseIndex> = HashMap::new();
        for c in &self.cfg.corpora {
            if !answers.iter().any(|a| a.tag == c.tag) {
                continue;
            }
            let chunks = self.load_chunks(&c.tag)?;
            let index = SourceClauseIndex::from_chunks(&chunks, self.extractor.as_ref(), self.embedder.as_ref(), self.cfg.adherence.matching)?;
            sources.insert(c.tag.clone(), index);
        }
        let results: Vec<Result<ItemRecord, FailureRecord>> = self.pool.install(|| {
            answers
                .par_iter()
                .map(|a| {
                    let e = &a.explanation;
                    let source = sources.get(&a.tag).ok_or_else(|| "no source index for tag".to_string());
                    source
                        .and_then(|source| {
                            AdherenceEvaluator {
                                source,
                                extractor: self.extractor.as_ref(),
                                embedder: self.embedder.as_ref(),
                                threshold: self.cfg.adherence.threshold,
                            }
                            .evaluate(&e.question_id, e.mode, &e.model_id, &e.text)
                            .map_err(|err| err.to_string())
                        })
                        .map(|(report, _)| ItemRecord {
                            tag: a.tag.clone(),
                            report,
                        })
                        .map_err(|error| FailureRecord {
                            question_id: e.question_id.clone(),
                            model_id: e.model_id.clone(),
                            mode: e.mode,
                            stage: "evaluate".into(),
                            error,
                        })
                })
                .collect()
        });
        let (mut items, mut failures) = (Vec::new(), Vec::new());
        for r in results {
            match r {
                Ok(i) => items.push(i),
                Err(f) => failures.push(f),
            }
        }
        write_jsonl(&self.out().join(ITEMS), &items)?;
        write_jsonl(&self.out().join(EVALUATE_FAILURES), &failures)?;
        Ok((items, failures))
    }

    /// Statistical comparison of rag_coi against rag. Writes `analysis.json`.
    pub fn analyze(&self) -> Result<Analysis> {
        let items: Vec<ItemRecord> = read_jsonl(&self.out().join(ITEMS))?;
        let models: Vec<String> = self.cfg.models.iter().map(|m| m.model_id().to_string()).collect();
        let analysis = analyze(&items, &models, &self.cfg.modes, &self.cfg.stats, self.cfg.seed)?;
        write_json(&self.out().join(ANALYSIS), &analysis)?;
        Ok(analysis)
    }

    /// Summary CSV, box plots and the manifest.
    pub fn report(&self) -> Result<()> {
        let analysis: Analysis = serde_json::from_slice(&fs::read(self.out().join(ANALYSIS)).context("reading analysis.json (run analyze first)")?)?;
        let items: Vec<ItemRecord> = read_jsonl(&self.out().join(ITEMS))?;
        write_report(self.out(), &analysis, &items, self.cfg.plots)?;
        write_manifest(self.out())?;
        Ok(())
    }

    pub fn failures(&self) -> Result<Vec<FailureRecord>> {
        let mut f: Vec<FailureRecord> = read_jsonl_or_empty(&self.out().join(ANSWER_FAILURES))?;
        f.extend(read_jsonl_or_empty::<FailureRecord>(&self.out().join(EVALUATE_FAILURES))?);
        Ok(f)
    }
}

/// Runs every stage in order.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<ExperimentReport> {
    let ws = Workspace::new(cfg)?;
    let questions = ws.questions()?;
    ws.ingest()?;
    ws.build_banks()?;
    let (_, mut failures) = ws.answer(&questions)?;
    let (items, eval_failures) = ws.evaluate()?;
    failures.extend(eval_failures);
    let analysis = ws.analyze()?;
    ws.report()?;
    Ok(ExperimentReport {
        questions: questions.len(),
        expected_items: questions.len() * ws.cfg.models.len() * ws.cfg.modes.len(),
        items: items.len(),
        failures,
        retrieval_requests: ws.retrieval_requests(),
        retrieval_texts: ws.retrieval_texts(),
        analysis,
    })
}
