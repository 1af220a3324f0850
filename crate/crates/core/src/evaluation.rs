//! Retrieval metrics and the sampler comparison experiment.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, Qrels, RunFile};
use crate::error::{Error, Result};
use crate::index::{Index, IndexMode};
use crate::sampler::SamplerConfig;
use crate::synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};
use crate::trainer::{train, ToyEncoder, TrainerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mrr,
    Recall,
}

impl Metric {
    pub fn label(self, k: usize) -> String {
        match self {
            Metric::Mrr => format!("mrr@{k}"),
            Metric::Recall => format!("recall@{k}"),
        }
    }
}

/// Per-query values and their mean. Every query in the qrels is counted;
/// a query missing from the run scores 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    pub k: usize,
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
}

impl MetricReport {
    pub fn query_count(&self) -> usize {
        self.per_query.len()
    }

    pub fn label(&self) -> String {
        self.metric.label(self.k)
    }
}

fn report(
    run: &RunFile,
    qrels: &Qrels,
    k: usize,
    metric: Metric,
    per_query: impl Fn(&[crate::data::RunEntry], &std::collections::BTreeSet<String>) -> f64,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::Contract("metric cutoff must be at least 1".into()));
    }
    for (q, _) in run.iter() {
        if qrels.positives(q).is_none() {
            log::warn!(
                "run query {q} has no judgments; excluded from {}",
                metric.label(k)
            );
        }
    }
    let values: Vec<(String, f64)> = qrels
        .iter()
        .map(|(q, rel)| {
            let ranking = run.ranking(q).unwrap_or(&[]);
            let cut = &ranking[..ranking.len().min(k)];
            (q.clone(), per_query(cut, rel))
        })
        .collect();
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64
    };
    Ok(MetricReport {
        metric,
        k,
        per_query: values,
        mean,
    })
}

/// Reciprocal rank of the first relevant document within the top `k`.
pub fn mrr_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    report(run, qrels, k, Metric::Mrr, |cut, rel| {
        cut.iter()
            .position(|e| rel.contains(&e.doc_id))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64)
    })
}

/// Fraction of relevant documents found within the top `k`.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    report(run, qrels, k, Metric::Recall, |cut, rel| {
        let hits = cut.iter().filter(|e| rel.contains(&e.doc_id)).count();
        hits as f64 / rel.len() as f64
    })
}

/// Exact retrieval of the top `depth` documents for every query.
pub fn retrieve(corpus: Arc<EmbeddingMatrix>, queries: &EmbeddingMatrix, depth: usize) -> Result<RunFile> {
    let index = Index::build(corpus, IndexMode::Exact)?;
    let depth = depth.min(index.corpus().count());
    let ranked: Vec<(String, Vec<(String, f64)>)> = (0..queries.count())
        .into_par_iter()
        .map(|q| {
            let hits = index.top_k(queries.row(q), depth, &[])?;
            let docs = hits
                .entries
                .iter()
                .map(|h| (index.corpus().id(h.row).to_string(), h.score))
                .collect();
            Ok((queries.id(q).to_string(), docs))
        })
        .collect::<Result<_>>()?;
    let mut run = RunFile::new();
    for (q, docs) in ranked {
        run.insert_ranked(q, docs);
    }
    Ok(run)
}

/// Encodes both sides with `encoder` and retrieves.
pub fn retrieve_with(
    encoder: &ToyEncoder,
    corpus: &EmbeddingMatrix,
    queries: &EmbeddingMatrix,
    depth: usize,
) -> Result<RunFile> {
    let docs = Arc::new(encoder.encode_corpus(corpus)?);
    retrieve(docs, &encoder.encode_queries(queries)?, depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mrr_k: usize,
    pub recall_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mrr_k: 10,
            recall_k: 50,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mrr_k == 0 || self.recall_k == 0 {
            return Err(Error::Contract("metric cutoffs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.mrr_k.max(self.recall_k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellScores {
    pub mrr: f64,
    pub recall: f64,
}

pub fn score_run(run: &RunFile, qrels: &Qrels, eval: &EvalConfig) -> Result<CellScores> {
    Ok(CellScores {
        mrr: mrr_at_k(run, qrels, eval.mrr_k)?.mean,
        recall: recall_at_k(run, qrels, eval.recall_k)?.mean,
    })
}

/// Trains on the training split of `data` and scores the trained encoder
/// on its evaluation split.
pub fn train_and_score(
    data: &SyntheticDataset,
    trainer: &TrainerConfig,
    eval: &EvalConfig,
) -> Result<CellScores> {
    let (encoder, _) = train(&data.corpus, &data.queries, &data.qrels, trainer)?;
    let (queries, qrels) = data.eval_split();
    let run = retrieve_with(&encoder, &data.corpus, queries, eval.depth())?;
    score_run(&run, qrels, eval)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub variant: String,
    pub seed: u64,
    /// `Err` holds the failure message of a diverged or invalid run.
    pub outcome: std::result::Result<CellScores, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub failed: usize,
    pub mrr_mean: f64,
    pub mrr_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub eval: EvalConfig,
    /// Variant-major: all seeds of the first variant, then the next.
    pub cells: Vec<Cell>,
    pub summaries: Vec<VariantSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every sampler on every seed and scores the result.
///
/// Each seed generates its own dataset and encoder initialization, shared by
/// all samplers, so per-seed differences are paired. A failing cell is
/// reported and the rest of the grid still runs.
pub fn compare_samplers(
    spec: &SyntheticSpec,
    samplers: &[SamplerConfig],
    trainer: &TrainerConfig,
    eval: &EvalConfig,
    seeds: &[u64],
) -> Result<Comparison> {
    if samplers.is_empty() || seeds.is_empty() {
        return Err(Error::Contract(
            "comparison needs at least one sampler and one seed".into(),
        ));
    }
    eval.validate()?;
    for s in samplers {
        s.validate()?;
    }
    let datasets: Vec<SyntheticDataset> = seeds
        .par_iter()
        .map(|&seed| generate_synthetic(spec, seed))
        .collect::<Result<_>>()?;

    let grid: Vec<(usize, usize)> = (0..samplers.len())
        .flat_map(|v| (0..seeds.len()).map(move |s| (v, s)))
        .collect();
    let cells: Vec<Cell> = grid
        .par_iter()
        .map(|&(v, s)| {
            let seed = seeds[s];
            let config = TrainerConfig {
                seed,
                sampler: SamplerConfig {
                    seed: crate::seeding::derive_seed(seed, "sampler"),
                    ..samplers[v].clone()
                },
                ..trainer.clone()
            };
            let variant = samplers[v].variant.name().to_string();
            let outcome = train_and_score(&datasets[s], &config, eval).map_err(|e| {
                log::error!("{variant} seed {seed} failed: {e}");
                e.to_string()
            });
            Cell {
                variant,
                seed,
                outcome,
            }
        })
        .collect();

    let summaries = cells
        .chunks(seeds.len())
        .map(|chunk| {
            let ok: Vec<CellScores> = chunk.iter().filter_map(|c| c.outcome.clone().ok()).collect();
            let (mrr_mean, mrr_std) = mean_std(&ok.iter().map(|c| c.mrr).collect::<Vec<_>>());
            let (recall_mean, recall_std) = mean_std(&ok.iter().map(|c| c.recall).collect::<Vec<_>>());
            VariantSummary {
                variant: chunk[0].variant.clone(),
                runs: chunk.len(),
                failed: chunk.len() - ok.len(),
                mrr_mean,
                mrr_std,
                recall_mean,
                recall_std,
            }
        })
        .collect();
    Ok(Comparison {
        eval: *eval,
        cells,
        summaries,
    })
}

impl Comparison {
    pub fn summary(&self, variant: &str) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    /// Per-cell rows, a blank line, then one aggregate row per variant.
    /// With two or more variants the aggregate block carries the MRR
    /// difference to the first variant.
    pub fn to_csv(&self) -> String {
        let mrr = Metric::Mrr.label(self.eval.mrr_k);
        let recall = Metric::Recall.label(self.eval.recall_k);
        let mut out = format!("variant,seed,{mrr},{recall}\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(s) => writeln!(out, "{},{},{:.6},{:.6}", c.variant, c.seed, s.mrr, s.recall),
                Err(_) => writeln!(out, "{},{},failed,failed", c.variant, c.seed),
            }
            .expect("writing to a string");
        }
        out.push('\n');
        let compare = self.summaries.len() >= 2;
        write!(
            out,
            "variant,runs,failed,{mrr}_mean,{mrr}_std,{recall}_mean,{recall}_std"
        )
        .expect("writing to a string");
        if compare {
            write!(out, ",{mrr}_delta").expect("writing to a string");
        }
        out.push('\n');
        let base = self.summaries[0].mrr_mean;
        for s in &self.summaries {
            write!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                s.variant, s.runs, s.failed, s.mrr_mean, s.mrr_std, s.recall_mean, s.recall_std
            )
            .expect("writing to a string");
            if compare {
                write!(out, ",{:+.6}", s.mrr_mean - base).expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    /// Aligned summary table for the terminal.
    pub fn to_table(&self) -> String {
        let mrr = Metric::Mrr.label(self.eval.mrr_k);
        let recall = Metric::Recall.label(self.eval.recall_k);
        let width = self
            .summaries
            .iter()
            .map(|s| s.variant.len())
            .max()
            .unwrap_or(0)
            .max("variant".len());
        let mut out = format!(
            "{:<width$}  {:>19}  {:>19}  {:>6}\n",
            "variant", mrr, recall, "failed"
        );
        for s in &self.summaries {
            writeln!(
                out,
                "{:<width$}  {:>8.4} ± {:<8.4}  {:>8.4} ± {:<8.4}  {:>6}",
                s.variant, s.mrr_mean, s.mrr_std, s.recall_mean, s.recall_std, s.failed
            )
            .expect("writing to a string");
        }
        out
    }
}
