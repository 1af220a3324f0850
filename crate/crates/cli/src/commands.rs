use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use trisampler::data::{
    load_embeddings, load_qrels, load_run, write_embeddings, write_qrels, write_run, EmbeddingMatrix, Qrels,
    RunFile,
};
use trisampler::evaluation::{compare_samplers, mrr_at_k, recall_at_k};
use trisampler::index::Index;
use trisampler::sampler::{sample_all, write_negatives, SamplerStats, SamplingContext};
use trisampler::synthetic::{generate_synthetic, SyntheticSpec};
use trisampler::trainer::{train as train_encoder, ToyEncoder};

use crate::config::{
    apply_overrides, from_value, read_json, CliConfig, CORPUS_FILE, HELDOUT_QRELS_FILE, HELDOUT_QUERIES_FILE,
    QRELS_FILE, QUERIES_FILE, RUN_FILE,
};
use crate::{CliError, GlobalArgs};

pub const ENCODER_FILE: &str = "encoder.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const NEGATIVES_FILE: &str = "negatives.tsv";
pub const METRICS_FILE: &str = "metrics.json";
pub const COMPARE_FILE: &str = "compare.csv";

type CliResult<T = ()> = Result<T, CliError>;

fn load_config(global: &GlobalArgs) -> CliResult<CliConfig> {
    let mut value = read_json(global.config.as_deref())?;
    apply_overrides(&mut value, &global.overrides)?;
    let mut config: CliConfig = from_value(value, "config")?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn prepare_output(path: &Path) -> CliResult {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => create_dir(parent),
        _ => Ok(()),
    }
}

fn load_encoder(path: &Path) -> CliResult<ToyEncoder> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{} is not an encoder: {e}", path.display())))
}

/// Corpus and query matrices, encoded when an encoder is given.
fn encoded(
    encoder: Option<&Path>,
    corpus: EmbeddingMatrix,
    queries: EmbeddingMatrix,
) -> CliResult<(EmbeddingMatrix, EmbeddingMatrix)> {
    match encoder {
        None => Ok((corpus, queries)),
        Some(path) => {
            let enc = load_encoder(path)?;
            Ok((enc.encode_corpus(&corpus)?, enc.encode_queries(&queries)?))
        }
    }
}

fn training_data(config: &CliConfig) -> CliResult<(EmbeddingMatrix, EmbeddingMatrix, Qrels)> {
    let data = &config.data;
    Ok((
        load_embeddings(data.path(&data.corpus))?,
        load_embeddings(data.path(&data.queries))?,
        load_qrels(data.path(&data.qrels))?,
    ))
}

pub fn gen(global: &GlobalArgs, spec_path: Option<&Path>, out: &Path) -> CliResult {
    let mut value = read_json(spec_path)?;
    apply_overrides(&mut value, &global.overrides)?;
    let spec: SyntheticSpec = from_value(value, "dataset spec")?;
    let seed = global.seed.unwrap_or(spec.seed);
    let ds = generate_synthetic(&spec, seed)?;
    create_dir(out)?;
    write_embeddings(&ds.corpus, out.join(CORPUS_FILE))?;
    write_embeddings(&ds.queries, out.join(QUERIES_FILE))?;
    write_qrels(&ds.qrels, out.join(QRELS_FILE))?;
    if let Some(heldout) = &ds.heldout_queries {
        write_embeddings(heldout, out.join(HELDOUT_QUERIES_FILE))?;
        write_qrels(&ds.heldout_qrels, out.join(HELDOUT_QRELS_FILE))?;
    }
    println!(
        "wrote {} documents, {} queries, {} held-out queries to {}",
        ds.corpus.count(),
        ds.queries.count(),
        ds.heldout_queries.as_ref().map_or(0, EmbeddingMatrix::count),
        out.display()
    );
    Ok(())
}

pub fn index(global: &GlobalArgs, encoder: Option<&Path>, out: Option<PathBuf>) -> CliResult {
    let config = load_config(global)?;
    let (queries_path, _) = config.data.split_files();
    let corpus = load_embeddings(config.data.path(&config.data.corpus))?;
    let queries = load_embeddings(queries_path)?;
    let (corpus, queries) = encoded(encoder, corpus, queries)?;
    if config.index.depth == 0 {
        return Err(CliError::usage("index.depth must be at least 1"));
    }
    let index = Index::build(Arc::new(corpus), config.index.mode)?;
    let depth = config.index.depth.min(index.corpus().count());
    let mut run = RunFile::new();
    for q in 0..queries.count() {
        let hits = index.top_k(queries.row(q), depth, &[])?;
        let docs = hits
            .entries
            .iter()
            .map(|h| (index.corpus().id(h.row).to_string(), h.score))
            .collect();
        run.insert_ranked(queries.id(q), docs);
    }
    let out = out.unwrap_or_else(|| config.output_dir.join(RUN_FILE));
    prepare_output(&out)?;
    write_run(&run, &out)?;
    println!(
        "wrote top-{depth} run for {} queries to {}",
        run.len(),
        out.display()
    );
    Ok(())
}

pub fn sample(global: &GlobalArgs, encoder: Option<&Path>, out: Option<PathBuf>) -> CliResult {
    let config = load_config(global)?;
    let (raw_corpus, raw_queries, qrels) = training_data(&config)?;
    let resolved = qrels.resolve(&raw_queries, &raw_corpus)?;
    let (corpus, queries) = encoded(encoder, raw_corpus, raw_queries)?;
    let sampler = config.sampler_config();
    let index = Index::build(Arc::new(corpus), config.index.mode)?;
    let ctx = SamplingContext {
        index: &index,
        queries: &queries,
        qrels: &resolved,
    };
    let samples = sample_all(&ctx, &sampler)?;
    let out = out.unwrap_or_else(|| config.output_dir.join(NEGATIVES_FILE));
    prepare_output(&out)?;
    write_negatives(&samples, &queries, index.corpus(), &out)?;
    let stats = SamplerStats::of(&samples);
    println!(
        "{}: {} triples, {} negatives, in-region fraction {:.4}, {} full fallbacks, {} filled slots -> {}",
        sampler.variant,
        stats.triples,
        stats.negatives,
        stats.in_region_fraction,
        stats.full_fallbacks,
        stats.filled_slots,
        out.display()
    );
    Ok(())
}

pub fn train(global: &GlobalArgs) -> CliResult {
    let config = load_config(global)?;
    let (corpus, queries, qrels) = training_data(&config)?;
    let trainer = config.trainer_config();
    let (encoder, log) = train_encoder(&corpus, &queries, &qrels, &trainer)?;
    create_dir(&config.output_dir)?;
    let json = serde_json::to_string(&encoder).expect("encoder serializes");
    write_text(&config.output_dir.join(ENCODER_FILE), &json)?;
    write_text(&config.output_dir.join(TRAIN_LOG_FILE), &log.to_jsonl())?;
    println!(
        "trained {} steps over {} index epochs; loss {:.4} -> {:.4}",
        trainer.steps,
        log.final_epoch(),
        log.first_loss().unwrap_or(f64::NAN),
        log.last_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    queries: usize,
    mrr_k: usize,
    mrr: f64,
    recall_k: usize,
    recall: f64,
}

pub fn eval(global: &GlobalArgs) -> CliResult {
    let config = load_config(global)?;
    let (_, qrels_path) = config.data.split_files();
    let run = load_run(config.run_path())?;
    let qrels = load_qrels(qrels_path)?;
    let eval = config.eval_config();
    eval.validate()?;
    let mrr = mrr_at_k(&run, &qrels, eval.mrr_k)?;
    let recall = recall_at_k(&run, &qrels, eval.recall_k)?;
    let metrics = Metrics {
        queries: mrr.query_count(),
        mrr_k: eval.mrr_k,
        mrr: mrr.mean,
        recall_k: eval.recall_k,
        recall: recall.mean,
    };
    create_dir(&config.output_dir)?;
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    write_text(&config.output_dir.join(METRICS_FILE), &(json + "\n"))?;
    println!("{}\t{:.6}", mrr.label(), mrr.mean);
    println!("{}\t{:.6}", recall.label(), recall.mean);
    println!("queries\t{}", metrics.queries);
    Ok(())
}

pub fn compare(global: &GlobalArgs) -> CliResult {
    let config = load_config(global)?;
    if config.eval.variants.is_empty() {
        return Err(CliError::usage("eval.variants must list at least one sampler"));
    }
    let samplers: Vec<_> = config
        .eval
        .variants
        .iter()
        .map(|&v| config.sampler_config().with_variant(v))
        .collect();
    let seeds = config.compare_seeds();
    let cmp = compare_samplers(
        &config.data.spec,
        &samplers,
        &config.trainer_config(),
        &config.eval_config(),
        &seeds,
    )?;
    create_dir(&config.output_dir)?;
    let out = config.output_dir.join(COMPARE_FILE);
    write_text(&out, &cmp.to_csv())?;
    print!("{}", cmp.to_table());
    let failed: usize = cmp.summaries.iter().map(|s| s.failed).sum();
    if failed == cmp.cells.len() {
        return Err(CliError {
            code: CliError::NUMERIC,
            message: "every comparison run failed".into(),
        });
    }
    println!("wrote {}", out.display());
    Ok(())
}
