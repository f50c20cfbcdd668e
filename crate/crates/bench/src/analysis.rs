//! Per-metric descriptives and the rag_coi-vs-rag comparison family.

use std::collections::BTreeMap;
use std::fmt;

use anyhow::Result;
use coi_core::prompting::Mode;
use coi_core::stats::{
    bh_adjusted, benjamini_hochberg, bootstrap_ci, mean, median, paired_comparison, Alternative, PairedSample,
    Statistic, TestResult,
};
use serde::{Deserialize, Serialize};

use crate::config::StatsConfig;
use crate::pipeline::ItemRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Factscore,
    MeanSimilarity,
    AdherentCount,
    WordCount,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Factscore, Metric::MeanSimilarity, Metric::AdherentCount, Metric::WordCount];
    /// Metrics entering the multiple-comparison family.
    pub const TESTED: [Metric; 3] = [Metric::Factscore, Metric::MeanSimilarity, Metric::AdherentCount];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Factscore => "factscore",
            Metric::MeanSimilarity => "mean_similarity",
            Metric::AdherentCount => "adherent_count",
            Metric::WordCount => "word_count",
        }
    }

    pub fn value(self, item: &ItemRecord) -> f64 {
        let r = &item.report;
        match self {
            Metric::Factscore => r.factscore,
            Metric::MeanSimilarity => r.mean_similarity,
            Metric::AdherentCount => r.adherent_count as f64,
            Metric::WordCount => r.word_count as f64,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub model: String,
    pub mode: Mode,
    pub metric: Metric,
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Percentile bootstrap interval of the mean; absent below two items.
    pub ci95: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: String,
    pub metric: Metric,
    pub treatment: Mode,
    pub control: Mode,
    /// Questions with both modes evaluated.
    pub n: usize,
    pub test: Option<TestResult>,
    pub p_bh_adjusted: Option<f64>,
    pub bh_reject: Option<bool>,
    /// Why no test was run, when `test` is absent.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub models: Vec<String>,
    pub modes: Vec<Mode>,
    pub q: f64,
    pub family_size: usize,
    pub descriptives: Vec<Descriptive>,
    pub comparisons: Vec<Comparison>,
}

impl Analysis {
    pub fn descriptive(&self, model: &str, mode: Mode, metric: Metric) -> Option<&Descriptive> {
        self.descriptives
            .iter()
            .find(|d| d.model == model && d.mode == mode && d.metric == metric)
    }

    pub fn comparison(&self, model: &str, metric: Metric) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.model == model && c.metric == metric)
    }
}

pub fn analyze(items: &[ItemRecord], models: &[String], modes: &[Mode], cfg: &StatsConfig, seed: u64) -> Result<Analysis> {
    // (model, mode) -> question id -> item
    let mut by_cell: BTreeMap<(&str, Mode), BTreeMap<&str, &ItemRecord>> = BTreeMap::new();
    for it in items {
        by_cell
            .entry((it.report.model_id.as_str(), it.report.mode))
            .or_default()
            .insert(it.report.question_id.as_str(), it);
    }
    let empty = BTreeMap::new();

    let mut descriptives = Vec::new();
    let mut stream = 0u64;
    for model in models {
        for &mode in modes {
            let cell = by_cell.get(&(model.as_str(), mode)).unwrap_or(&empty);
            for metric in Metric::ALL {
                let values: Vec<f64> = cell.values().map(|it| metric.value(it)).collect();
                let ci95 = if values.len() >= 2 {
                    Some(bootstrap_ci(&values, Statistic::Mean, cfg.bootstrap_resamples, seed.wrapping_add(stream))?)
                } else {
                    None
                };
                stream += 1;
                descriptives.push(Descriptive {
                    model: model.clone(),
                    mode,
                    metric,
                    n: values.len(),
                    mean: (!values.is_empty()).then(|| mean(&values)),
                    median: (!values.is_empty()).then(|| median(&values)),
                    ci95,
                });
            }
        }
    }

    let mut comparisons = Vec::new();
    if modes.contains(&Mode::Rag) && modes.contains(&Mode::RagCoi) {
        for model in models {
            let treat = by_cell.get(&(model.as_str(), Mode::RagCoi)).unwrap_or(&empty);
            let ctrl = by_cell.get(&(model.as_str(), Mode::Rag)).unwrap_or(&empty);
            let paired: Vec<(&str, &ItemRecord, &ItemRecord)> = treat
                .iter()
                .filter_map(|(qid, t)| ctrl.get(qid).map(|c| (*qid, *t, *c)))
                .collect();
            for metric in Metric::TESTED {
                let labels: Vec<String> = paired.iter().map(|(q, _, _)| q.to_string()).collect();
                let a: Vec<f64> = paired.iter().map(|(_, t, _)| metric.value(t)).collect();
                let b: Vec<f64> = paired.iter().map(|(_, _, c)| metric.value(c)).collect();
                let outcome = PairedSample::new(labels, a, b).and_then(|s| paired_comparison(&s, Alternative::Greater));
                let (test, note) = match outcome {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                comparisons.push(Comparison {
                    model: model.clone(),
                    metric,
                    treatment: Mode::RagCoi,
                    control: Mode::Rag,
                    n: paired.len(),
                    test,
                    p_bh_adjusted: None,
                    bh_reject: None,
                    note,
                });
            }
        }
    }

    let tested: Vec<usize> = (0..comparisons.len()).filter(|&i| comparisons[i].test.is_some()).collect();
    let pvals: Vec<f64> = tested
        .iter()
        .map(|&i| comparisons[i].test.as_ref().expect("filtered").p_one_sided)
        .collect();
    let adjusted = bh_adjusted(&pvals)?;
    let rejected = benjamini_hochberg(&pvals, cfg.q)?;
    for (k, &i) in tested.iter().enumerate() {
        comparisons[i].p_bh_adjusted = Some(adjusted[k]);
        comparisons[i].bh_reject = Some(rejected[k]);
    }

    Ok(Analysis {
        models: models.to_vec(),
        modes: modes.to_vec(),
        q: cfg.q,
        family_size: tested.len(),
        descriptives,
        comparisons,
    })
}
