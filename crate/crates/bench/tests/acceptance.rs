//! Acceptance criteria 1-9. Runs without the libtest harness so every
//! criterion prints its PASS/FAIL line in the normal `cargo test` output.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use coi_bench::artifacts::{read_jsonl, write_manifest, EXPLANATIONS, ITEMS, MANIFEST};
use coi_bench::pipeline::AnswerRecord;
use coi_bench::{run_experiment, ItemRecord};
use coi_core::adherence::*;
use coi_core::coi_planner::{plan, IllocutionPlan, PlannerParams};
use coi_core::corpus::{chunk, window_spans, Chunk, ChunkParams, Document};
use coi_core::prompting::*;
use coi_core::question_bank::{extraction_prompt, ImplicitQuestion, QuestionBank};
use coi_core::stats::*;
use coi_core::vector_index::{cosine, EmbeddingVector, HashedEmbedder, VectorIndex};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(id: u8, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (mut ok, mut detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(e)) => (false, e),
        Err(p) => (
            false,
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()),
        ),
    };
    if let Some(l) = limit {
        if elapsed > l {
            ok = false;
            detail = format!("{detail}; exceeded {:.0}s limit", l.as_secs_f64());
        }
    }
    println!(
        "{} criterion {id}: {name} [{:.2}s] {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

// ---------------------------------------------------------------------------
// 1. Chunker
// ---------------------------------------------------------------------------

fn criterion_1() -> Check {
    let p = ChunkParams::default();
    ensure((p.size, p.overlap, p.min_tokens) == (150, 75, 100), || format!("defaults {p:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut windows = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(1..=5000usize);
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let doc = Document::parse("d", "D", &tokens.join(" ")).map_err(|e| e.to_string())?;
        let chunks = chunk(&doc, &p).map_err(|e| e.to_string())?;
        let spans = window_spans(n, &p).map_err(|e| e.to_string())?;
        ensure(chunks.len() == spans.len(), || format!("n={n}: chunk/span count"))?;
        let mut covered = vec![0u32; n];
        for (c, &(s, e)) in chunks.iter().zip(&spans) {
            ensure((c.token_start, c.token_end) == (s, e), || format!("n={n}: chunk span"))?;
            ensure(c.text == tokens[s..e].join(" "), || format!("n={n}: text of {s}..{e}"))?;
            ensure(e - s >= p.min_tokens.min(n), || format!("n={n}: window {s}..{e} below minimum"))?;
            for t in &mut covered[s..e] {
                *t += 1;
            }
        }
        ensure(covered.iter().all(|&c| c > 0), || format!("n={n}: token not covered"))?;
        ensure(spans[0].0 == 0 && spans.last().unwrap().1 == n, || format!("n={n}: ends"))?;
        for w in spans.windows(2) {
            ensure(w[0].1 - w[1].0 == 75, || format!("n={n}: overlap {:?}", w))?;
            ensure(w[0].1 - w[0].0 == 150, || format!("n={n}: inner window {:?}", w[0]))?;
        }
        windows += spans.len();
    }
    Ok(format!("1000 lengths, {windows} windows"))
}

// ---------------------------------------------------------------------------
// 2. Retrieval
// ---------------------------------------------------------------------------

fn random_unit(rng: &mut ChaCha8Rng, dims: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| rng.random_range(-3i32..=3) as f64).collect();
        if let Ok(e) = EmbeddingVector::normalized(v) {
            return e;
        }
    }
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for instance in 0..100 {
        let mut index = VectorIndex::new(64);
        for i in 0..500 {
            index.insert(format!("k{i:03}"), random_unit(&mut rng, 64), ()).map_err(|e| e.to_string())?;
        }
        let q = random_unit(&mut rng, 64);
        let k = rng.random_range(1..=20);
        let mut scan: Vec<(String, f64)> = index
            .entries()
            .iter()
            .map(|e| (e.key.clone(), e.vector.values().iter().zip(q.values()).map(|(a, b)| a * b).sum()))
            .collect();
        scan.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scan.truncate(k);
        let got = index.top_k_keys(&q, k).map_err(|e| e.to_string())?;
        ensure(got.len() == scan.len(), || format!("instance {instance}: length"))?;
        for (g, w) in got.iter().zip(&scan) {
            ensure(g.0 == w.0 && (g.1 - w.1).abs() < 1e-12, || format!("instance {instance}: {g:?} vs {w:?}"))?;
        }
    }
    Ok("100 instances, dims 64, 500 entries".into())
}

// ---------------------------------------------------------------------------
// 3. Planner
// ---------------------------------------------------------------------------

struct Labels(Vec<String>);

impl ClauseExtractor for Labels {
    fn extract(&self, _text: &str) -> Result<Vec<Clause>, AdherenceError> {
        Ok(self
            .0
            .iter()
            .map(|l| Clause {
                subject: l.clone(),
                predicate: "is".into(),
                object: String::new(),
                sentence_index: 0,
            })
            .collect())
    }
}

fn words(rng: &mut ChaCha8Rng, vocab: usize, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..hi);
    (0..n).map(|_| format!("v{}", rng.random_range(0..vocab))).collect::<Vec<_>>().join(" ")
}

struct PlannerCase {
    primary: QuestionRecord,
    chunks: Vec<Chunk>,
    index: VectorIndex<Chunk>,
    bank: QuestionBank,
    labels: Vec<String>,
    params: PlannerParams,
}

fn planner_case(seed: u64, emb: &HashedEmbedder) -> PlannerCase {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let vocab = rng.random_range(6..30);
    let chunks: Vec<Chunk> = (0..rng.random_range(1..50))
        .map(|i| Chunk {
            id: format!("c{i:02}"),
            doc_id: "d".into(),
            token_start: i,
            token_end: i + 1,
            text: words(&mut rng, vocab, 1, 10),
            page_span: (1, 1),
        })
        .collect();
    let mut index = VectorIndex::new(64);
    for c in &chunks {
        index.insert(c.id.clone(), emb.embed_one(&c.text).unwrap(), c.clone()).unwrap();
    }
    let qs: Vec<ImplicitQuestion> = (0..rng.random_range(1..60))
        .map(|i| ImplicitQuestion {
            id: format!("t-q{i:06}"),
            question: format!("{}?", words(&mut rng, vocab, 1, 6)),
            answer: "a".into(),
            source_chunk_id: "c00".into(),
            tag: "t".into(),
        })
        .collect();
    let bank = QuestionBank::from_questions(qs, emb).unwrap();
    let labels = (0..rng.random_range(0..4)).map(|_| words(&mut rng, vocab, 1, 3)).collect();
    let primary = QuestionRecord {
        id: format!("p{seed}"),
        tag: "t".into(),
        title: words(&mut rng, vocab, 2, 6),
        body: words(&mut rng, vocab, 0, 8),
        accepted_answer: String::new(),
        views: 0,
    };
    PlannerCase {
        primary,
        chunks,
        index,
        bank,
        labels,
        params: PlannerParams::default(),
    }
}

/// Steps 1-5 written out directly: candidate pool, per-candidate retrieval,
/// best-owner assignment, dropping empty candidates, ranking and truncation.
fn simulate(c: &PlannerCase, emb: &HashedEmbedder) -> Vec<(String, Vec<(String, f64)>)> {
    let p = &c.params;
    let q = emb.embed_one(&c.primary.query_text()).unwrap();
    let mut bank_scored: Vec<(&ImplicitQuestion, f64)> = c
        .bank
        .questions()
        .iter()
        .map(|b| (b, cosine(&emb.embed_one(&b.question).unwrap(), &q).unwrap()))
        .collect();
    bank_scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
    let mut pool: Vec<String> = bank_scored.iter().take(p.pool_size).map(|(b, _)| b.question.clone()).collect();
    let mut seen = HashSet::new();
    for l in &c.labels {
        if seen.insert(l.to_lowercase()) {
            pool.push(format!("What is {l}?"));
        }
    }
    let hits: Vec<Vec<(String, f64)>> = pool
        .iter()
        .map(|text| {
            let v = emb.embed_one(text).unwrap();
            let mut s: Vec<(String, f64)> = c
                .chunks
                .iter()
                .map(|ch| (ch.id.clone(), cosine(&emb.embed_one(&ch.text).unwrap(), &v).unwrap()))
                .collect();
            s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            s.truncate(p.chunks_per_question);
            s
        })
        .collect();
    let mut owner: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (ci, h) in hits.iter().enumerate() {
        for (id, s) in h {
            let e = owner.entry(id).or_insert((ci, *s));
            if *s > e.1 {
                *e = (ci, *s);
            }
        }
    }
    let mut kept: Vec<(usize, String, Vec<(String, f64)>)> = pool
        .iter()
        .enumerate()
        .map(|(ci, t)| (ci, t.clone(), hits[ci].iter().filter(|(id, _)| owner[id.as_str()].0 == ci).cloned().collect::<Vec<_>>()))
        .filter(|(_, _, h)| !h.is_empty())
        .collect();
    kept.sort_by(|a, b| b.2[0].1.total_cmp(&a.2[0].1).then(a.0.cmp(&b.0)));
    kept.truncate(p.keep);
    kept.into_iter().map(|(_, t, h)| (t, h)).collect()
}

fn criterion_3() -> Check {
    let emb = HashedEmbedder::new(64);
    let mut selected = 0;
    for seed in 0..200 {
        let c = planner_case(seed, &emb);
        let got = plan(&c.primary, &c.bank, &c.index, &emb, &Labels(c.labels.clone()), &c.params).map_err(|e| e.to_string())?;
        let ids: Vec<&str> = got.selected.iter().flat_map(|s| s.chunks.iter().map(|(ch, _)| ch.id.as_str())).collect();
        ensure(ids.len() == ids.iter().collect::<HashSet<_>>().len(), || format!("seed {seed}: shared chunk"))?;
        ensure(got.selected.len() <= 5, || format!("seed {seed}: {} selected", got.selected.len()))?;
        ensure(got.selected.windows(2).all(|w| w[0].best_score >= w[1].best_score), || format!("seed {seed}: order"))?;
        let actual: Vec<(String, Vec<(String, f64)>)> = got
            .selected
            .iter()
            .map(|s| (s.question.text.clone(), s.chunks.iter().map(|(ch, x)| (ch.id.clone(), *x)).collect()))
            .collect();
        let expected = simulate(&c, &emb);
        ensure(actual == expected, || format!("seed {seed}: plan differs from simulation"))?;
        selected += actual.len();
    }
    Ok(format!("200 cases, {selected} selected questions matched"))
}

// ---------------------------------------------------------------------------
// 4. Adherence
// ---------------------------------------------------------------------------

const NOUNS: &[&str] = &["parser", "compiler", "variable", "object", "string", "module", "thread", "buffer", "record", "package"];
const VERBS: &[&str] = &["creates", "returns", "stores", "converts", "handles", "defines"];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    format!(
        "The {} {} a {}.",
        NOUNS.choose(rng).unwrap(),
        VERBS.choose(rng).unwrap(),
        NOUNS.choose(rng).unwrap()
    )
}

fn criterion_4() -> Check {
    let emb = HashedEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let src: Vec<String> = (0..60).map(|_| sentence(&mut rng)).collect();
    let doc = Document::parse("b", "Book", &src.join(" ")).map_err(|e| e.to_string())?;
    let chunks = chunk(&doc, &ChunkParams::default()).map_err(|e| e.to_string())?;
    let index = SourceClauseIndex::from_chunks(&chunks, &RuleClauseExtractor, &emb, MatchMode::WholeClause).map_err(|e| e.to_string())?;
    let eval = |t: f64, text: &str| {
        AdherenceEvaluator {
            source: &index,
            extractor: &RuleClauseExtractor,
            embedder: &emb,
            threshold: t,
        }
        .evaluate("q", Mode::Rag, "m", text)
        .map(|(r, _)| r)
        .map_err(|e| e.to_string())
    };
    let copy: Vec<String> = src.choose_multiple(&mut rng, 8).cloned().collect();
    let r = eval(0.7, &copy.join(" "))?;
    ensure(r.factscore == 1.0 && r.mean_similarity == 1.0, || format!("copy scored {} / {}", r.factscore, r.mean_similarity))?;
    let r = eval(0.7, "Glaciers carve quiet valleys. Falcons hunt over frozen lakes. Sailors mend torn nets.")?;
    ensure(r.factscore == 0.0 && r.clause_count >= 3, || format!("disjoint scored {}", r.factscore))?;

    let ts: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    for case in 0..500 {
        let sims: Vec<f64> = (0..rng.random_range(1..50)).map(|_| rng.random_range(0.0..=1.0)).collect();
        let matches: Vec<ClauseMatch> = sims
            .iter()
            .enumerate()
            .map(|(i, s)| ClauseMatch {
                ai_clause: Clause {
                    subject: format!("s{i}"),
                    predicate: "p".into(),
                    object: String::new(),
                    sentence_index: i,
                },
                best_source_clause_id: format!("c{i}"),
                similarity: *s,
            })
            .collect();
        let sweep = threshold_sweep(&matches, &ts).map_err(|e| e.to_string())?;
        ensure(sweep.windows(2).all(|w| w[0].1 >= w[1].1), || format!("sweep {case} increases"))?;
    }

    let mut items = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mixed: Vec<String> = (0..rng.random_range(1..10))
            .map(|_| if rng.random_bool(0.5) { src.choose(&mut rng).unwrap().clone() } else { sentence(&mut rng) })
            .collect();
        let r = eval(DEFAULT_THRESHOLD, &mixed.join(" "))?;
        check_identity(&r)?;
        items += 1;
    }
    Ok(format!("copy=1.0, disjoint=0.0, 500 sweeps monotone, identity on {items} items"))
}

fn check_identity(r: &AdherenceReport) -> Result<(), String> {
    let n = r.clause_count as f64;
    ensure(
        r.factscore == r.adherent_count as f64 / n && (r.factscore * n).round() as usize == r.adherent_count,
        || format!("{}: factscore {} with {}/{}", r.question_id, r.factscore, r.adherent_count, r.clause_count),
    )
}

// ---------------------------------------------------------------------------
// 5. Statistics
// ---------------------------------------------------------------------------

fn paired(d: &[f64]) -> PairedSample {
    PairedSample::new((0..d.len()).map(|i| format!("q{i}")).collect(), d.to_vec(), vec![0.0; d.len()]).unwrap()
}

const BH_CASES: [(&[f64], f64, &[usize]); 20] = [
    (&[0.01, 0.02, 0.03, 0.04, 0.05], 0.05, &[0, 1, 2, 3, 4]),
    (&[0.01, 0.02, 0.03, 0.04, 0.06], 0.05, &[0, 1, 2, 3]),
    (&[0.001, 0.5, 0.6, 0.7], 0.05, &[0]),
    (&[0.02, 0.04, 0.9], 0.05, &[]),
    (&[0.04, 0.04, 0.04], 0.05, &[0, 1, 2]),
    (&[0.06], 0.05, &[]),
    (&[0.05], 0.05, &[0]),
    (&[0.03, 0.011], 0.05, &[0, 1]),
    (&[0.8, 0.012, 0.04, 0.02], 0.05, &[1, 3]),
    (&[0.012, 0.8, 0.02, 0.036], 0.05, &[0, 2, 3]),
    (&[0.2, 0.2, 0.2, 0.2, 0.2], 0.2, &[0, 1, 2, 3, 4]),
    (&[0.005, 0.011, 0.02, 0.04, 0.3], 0.1, &[0, 1, 2, 3]),
    (&[0.005, 0.011, 0.02, 0.081, 0.3], 0.1, &[0, 1, 2]),
    (&[0.0, 1.0], 0.05, &[0]),
    (&[1.0, 1.0, 1.0], 0.05, &[]),
    (&[0.009, 0.019, 0.029, 0.039, 0.049, 0.059, 0.069, 0.079, 0.089, 0.099], 0.1, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]),
    (&[0.011, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 0.1, &[]),
    (&[0.009, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 0.1, &[0]),
    (&[0.3, 0.02, 0.026, 0.2], 0.05, &[]),
    (&[0.3, 0.02, 0.025, 0.2], 0.1, &[1, 2]),
];

fn criterion_5() -> Check {
    let w = wilcoxon_signed_rank(&paired(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), Alternative::Greater).map_err(|e| e.to_string())?;
    ensure(w.exact && (w.p_one_sided - 1.0 / 64.0).abs() < 1e-12, || format!("wilcoxon p {}", w.p_one_sided))?;
    let m = mann_whitney_u(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0], Alternative::Greater).map_err(|e| e.to_string())?;
    ensure(m.exact && (m.p_one_sided - 1.0 / 20.0).abs() < 1e-12, || format!("mann-whitney p {}", m.p_one_sided))?;
    for (i, (p, q, want)) in BH_CASES.iter().enumerate() {
        let got: Vec<usize> = benjamini_hochberg(p, *q)
            .map_err(|e| e.to_string())?
            .iter()
            .enumerate()
            .filter_map(|(j, r)| r.then_some(j))
            .collect();
        ensure(got == *want, || format!("BH vector {i}: {got:?} != {want:?}"))?;
    }
    let dz = cohens_dz(&[2.0, 4.0]).map_err(|e| e.to_string())?;
    ensure((dz - 2.1213).abs() < 1e-4, || format!("dz {dz}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst_w = 0.0f64;
    let mut worst_m = 0.0f64;
    for i in 0..200 {
        let shift = 0.25 * (i % 4) as f64;
        let d: Vec<f64> = (0..WILCOXON_EXACT_MAX_N).map(|_| normal.sample(&mut rng) + shift).collect();
        let e = wilcoxon_with(&paired(&d), Alternative::Greater, Some(true)).map_err(|e| e.to_string())?;
        let a = wilcoxon_with(&paired(&d), Alternative::Greater, Some(false)).map_err(|e| e.to_string())?;
        worst_w = worst_w.max((e.p_one_sided - a.p_one_sided).abs());
        let x: Vec<f64> = (0..MANN_WHITNEY_EXACT_MAX_N / 2).map(|_| normal.sample(&mut rng) + shift).collect();
        let y: Vec<f64> = (0..MANN_WHITNEY_EXACT_MAX_N / 2).map(|_| normal.sample(&mut rng)).collect();
        let e = mann_whitney_with(&x, &y, Alternative::Greater, Some(true)).map_err(|e| e.to_string())?;
        let a = mann_whitney_with(&x, &y, Alternative::Greater, Some(false)).map_err(|e| e.to_string())?;
        worst_m = worst_m.max((e.p_one_sided - a.p_one_sided).abs());
    }
    ensure(worst_w <= 0.01 && worst_m <= 0.01, || format!("boundary gaps wilcoxon {worst_w:.4}, mann-whitney {worst_m:.4}"))?;

    let sims = 10_000;
    let (mut rej_gated, mut rej_w) = (0usize, 0usize);
    for _ in 0..sims {
        let d: Vec<f64> = (0..20).map(|_| normal.sample(&mut rng)).collect();
        let s = paired(&d);
        if paired_comparison(&s, Alternative::Greater).map_err(|e| e.to_string())?.p_one_sided < 0.05 {
            rej_gated += 1;
        }
        if wilcoxon_signed_rank(&s, Alternative::Greater).map_err(|e| e.to_string())?.p_one_sided < 0.05 {
            rej_w += 1;
        }
    }
    let (rate_g, rate_w) = (rej_gated as f64 / sims as f64, rej_w as f64 / sims as f64);
    ensure((rate_g - 0.05).abs() <= 0.02 && (rate_w - 0.05).abs() <= 0.02, || {
        format!("type-I rates gated {rate_g:.4}, wilcoxon {rate_w:.4}")
    })?;
    Ok(format!(
        "p=1/64, p=1/20, 20 BH sets, dz={dz:.4}, boundary gaps {worst_w:.4}/{worst_m:.4}, type-I {rate_g:.4}/{rate_w:.4}"
    ))
}

// ---------------------------------------------------------------------------
// 6. Power
// ---------------------------------------------------------------------------

fn criterion_6() -> Check {
    let normal = required_pairs(0.3, 0.05, 0.8, Tails::One, PowerMethod::NormalApprox).map_err(|e| e.to_string())?;
    let nct = required_pairs(0.3, 0.05, 0.8, Tails::One, PowerMethod::NoncentralT).map_err(|e| e.to_string())?;
    ensure(normal == 69, || format!("normal approximation gave {normal}"))?;
    ensure((69..=75).contains(&nct), || format!("noncentral t gave {nct}"))?;
    Ok(format!("normal {normal}, noncentral t {nct}"))
}

// ---------------------------------------------------------------------------
// 7. Golden end-to-end run
// ---------------------------------------------------------------------------

fn golden_run(root: &Path, out: &str, offline: bool) -> Result<coi_bench::ExperimentReport, String> {
    let mut cfg = common::golden(root);
    cfg.output_dir = root.join(out);
    cfg.offline = offline;
    run_experiment(cfg).map_err(|e| format!("{e:#}"))
}

fn tree_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let entries = write_manifest(dir).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for e in entries {
        out.insert(e.path.clone(), fs::read(dir.join(&e.path)).map_err(|e| e.to_string())?);
    }
    out.insert(MANIFEST.into(), fs::read(dir.join(MANIFEST)).map_err(|e| e.to_string())?);
    Ok(out)
}

fn criterion_7() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let cold = golden_run(root, "run1", false)?;
    ensure(cold.questions == 6 && cold.expected_items == 36, || format!("{} questions", cold.questions))?;
    ensure(cold.is_complete() && cold.items == 36, || format!("{} items, failures {:?}", cold.items, cold.failures))?;
    let warm = golden_run(root, "run2", false)?;
    ensure(warm.is_complete(), || "warm run failed items".into())?;
    let offline = golden_run(root, "run3", true)?;
    ensure(offline.is_complete(), || format!("offline failures {:?}", offline.failures))?;
    let a = tree_bytes(&root.join("run1"))?;
    for other in ["run2", "run3"] {
        let b = tree_bytes(&root.join(other))?;
        ensure(a.keys().eq(b.keys()), || format!("{other}: file sets differ"))?;
        for (path, bytes) in &a {
            ensure(&b[path] == bytes, || format!("{other}: {path} differs"))?;
        }
    }
    Ok(format!("36 items x3 runs, {} files byte-identical, offline from warm cache", a.len()))
}

// ---------------------------------------------------------------------------
// 8. Prompt fidelity
// ---------------------------------------------------------------------------

fn criterion_8() -> Check {
    let q = QuestionRecord {
        id: "q1".into(),
        tag: "python".into(),
        title: "How do lists differ from tuples?".into(),
        body: "I keep mixing them up.".into(),
        accepted_answer: String::new(),
        views: 1,
    };
    let chunks = vec![
        Chunk {
            id: "b#0-3".into(),
            doc_id: "b".into(),
            token_start: 0,
            token_end: 3,
            text: "Lists are mutable.".into(),
            page_span: (12, 12),
        },
        Chunk {
            id: "b#3-6".into(),
            doc_id: "b".into(),
            token_start: 3,
            token_end: 6,
            text: "Tuples are immutable.".into(),
            page_span: (12, 13),
        },
    ];
    let genai = assemble_genai(&q);
    let want_genai = "Provide a detailed, concise, pertinent, and coherent explanatory answer to the question below. \
Provide examples if needed.\n\nQuestion:\n#How do lists differ from tuples?\nI keep mixing them up.";
    ensure(genai.text() == want_genai, || format!("genai prompt:\n{}", genai.text()))?;

    let rag = assemble_rag(&q, "Think Python", &chunks).map_err(|e| e.to_string())?;
    let want_rag = "Sift through the text chunks provided (extracted from the textbook \"Think Python\") and combine the \
most relevant ones into a detailed, concise, pertinent, and coherent explanatory answer to the question below. Every \
statement must contain a reference to the source textbook page(s). Provide examples if needed.\n\nQuestion:\n\
#How do lists differ from tuples?\nI keep mixing them up.\n\nText chunks:\n\
Page 12-12:\nLists are mutable.\n\nPage 12-13:\nTuples are immutable.";
    ensure(rag.text() == want_rag, || format!("rag prompt:\n{}", rag.text()))?;

    let want_extraction = "Analyse the English paragraph below to generate a comprehensive list of Q&As in English, \
capturing: what, who, why, how, how much, where, when, who by, which, whose. Answers must succinctly reflect the \
paragraph's content without repeating the question's wording. Q&As must use precise and direct language, avoiding \
vague terms and generalizations, clearly specifying the context and subjects involved without assuming prior \
knowledge.\n\nExample Paragraph: Alice, an experienced hiker, explores the Rocky Mountains despite rain. She packs \
her gear early in the morning.\n\nExpected Output:\n- Who is Alice? An experienced hiker.\n- What did Alice do? \
Explored the Rocky Mountains.\n- Despite what did Alice decide to explore the Rocky Mountains? Rain.\n- What did she \
pack? Gear.\n- When did she pack? Early in the morning.\n\nParagraph for Analysis:\nLists are mutable.";
    let extraction = extraction_prompt("Lists are mutable.");
    ensure(extraction == want_extraction, || format!("extraction prompt:\n{extraction}"))?;

    let coi = assemble_rag_coi(&q, "Think Python", &chunks, &IllocutionPlan::empty("q1")).map_err(|e| e.to_string())?;
    ensure(coi.text() == rag.text() && coi.retrieved_chunk_ids() == rag.retrieved_chunk_ids(), || {
        "rag_coi with an empty plan differs from rag".into()
    })?;
    let expected = Decoding {
        temperature: 0.5,
        top_p: 0.0,
    };
    for b in [&genai, &rag, &coi] {
        ensure(b.decoding() == expected, || format!("{} decoding {:?}", b.mode(), b.decoding()))?;
    }

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    golden_run(tmp.path(), "out", false)?;
    let answers: Vec<AnswerRecord> = read_jsonl(&tmp.path().join("out").join(EXPLANATIONS)).map_err(|e| e.to_string())?;
    ensure(answers.len() == 36, || format!("{} explanations", answers.len()))?;
    for a in &answers {
        ensure(a.explanation.decoding == expected, || format!("{}: decoding {:?}", a.explanation.question_id, a.explanation.decoding))?;
    }
    Ok("3 templates verbatim, empty-plan rag_coi == rag, decoding (0.5, 0.0) on 36 explanations".into())
}

// ---------------------------------------------------------------------------
// 9. Directional sanity
// ---------------------------------------------------------------------------

fn criterion_9() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    golden_run(tmp.path(), "out", false)?;
    let items: Vec<ItemRecord> = read_jsonl(&tmp.path().join("out").join(ITEMS)).map_err(|e| e.to_string())?;
    for it in &items {
        check_identity(&it.report)?;
    }
    let mut cells: BTreeMap<(String, Mode), BTreeMap<String, f64>> = BTreeMap::new();
    for it in &items {
        cells
            .entry((it.report.model_id.clone(), it.report.mode))
            .or_default()
            .insert(it.report.question_id.clone(), it.report.factscore);
    }
    let mut summary = Vec::new();
    for model in ["mock-a", "mock-b"] {
        let rag = &cells[&(model.to_string(), Mode::Rag)];
        let coi = &cells[&(model.to_string(), Mode::RagCoi)];
        for (qid, r) in rag {
            ensure(coi[qid] >= *r, || format!("{model} {qid}: rag_coi {} < rag {r}", coi[qid]))?;
        }
        let mean = |m: &BTreeMap<String, f64>| m.values().sum::<f64>() / m.len() as f64;
        summary.push(format!("{model} {:.4} >= {:.4}", mean(coi), mean(rag)));
    }
    Ok(summary.join(", "))
}

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let results = [
        run(1, "chunker invariants", Some(s(5)), criterion_1),
        run(2, "retrieval exactness", Some(s(10)), criterion_2),
        run(3, "planner fidelity", Some(s(30)), criterion_3),
        run(4, "adherence oracles", None, criterion_4),
        run(5, "statistics exactness", Some(s(60)), criterion_5),
        run(6, "power function", None, criterion_6),
        run(7, "hermetic golden run", Some(s(60)), criterion_7),
        run(8, "prompt fidelity", None, criterion_8),
        run(9, "directional sanity", None, criterion_9),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
