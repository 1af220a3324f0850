//! The JSON experiment config and its `--set` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use trisampler::evaluation::EvalConfig;
use trisampler::index::IndexMode;
use trisampler::sampler::{SamplerConfig, Variant};
use trisampler::seeding::derive_seed;
use trisampler::synthetic::SyntheticSpec;
use trisampler::trainer::TrainerConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub output_dir: PathBuf,
    /// Root of all randomness; component seeds are derived from it.
    pub seed: u64,
    pub data: DataSection,
    pub index: IndexSection,
    pub sampler: SamplerConfig,
    pub trainer: TrainerSection,
    pub eval: EvalSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 0,
            data: DataSection::default(),
            index: IndexSection::default(),
            sampler: SamplerConfig::default(),
            trainer: TrainerSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory written by `gen`; file names below are relative to it.
    pub dir: PathBuf,
    pub corpus: String,
    pub queries: String,
    pub qrels: String,
    pub heldout_queries: String,
    pub heldout_qrels: String,
    /// Query set used by `index` and `eval`.
    pub split: Split,
    /// Dataset generated per seed by `compare`.
    pub spec: SyntheticSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            corpus: CORPUS_FILE.into(),
            queries: QUERIES_FILE.into(),
            qrels: QRELS_FILE.into(),
            heldout_queries: HELDOUT_QUERIES_FILE.into(),
            heldout_qrels: HELDOUT_QRELS_FILE.into(),
            split: Split::Train,
            spec: SyntheticSpec::default(),
        }
    }
}

pub const CORPUS_FILE: &str = "corpus.emb";
pub const QUERIES_FILE: &str = "queries.emb";
pub const QRELS_FILE: &str = "qrels.tsv";
pub const HELDOUT_QUERIES_FILE: &str = "heldout.emb";
pub const HELDOUT_QRELS_FILE: &str = "heldout_qrels.tsv";

impl DataSection {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Query and qrels files of the configured split.
    pub fn split_files(&self) -> (PathBuf, PathBuf) {
        match self.split {
            Split::Train => (self.path(&self.queries), self.path(&self.qrels)),
            Split::Heldout => (self.path(&self.heldout_queries), self.path(&self.heldout_qrels)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    pub mode: IndexMode,
    /// Documents retrieved per query by `index`.
    pub depth: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self {
            mode: IndexMode::Exact,
            depth: 100,
        }
    }
}

/// Trainer settings other than the sampler, index mode and seed, which
/// come from their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub learning_rate: f64,
    pub steps: usize,
    pub refresh_every: usize,
    pub batch_size: usize,
    pub dim_out: usize,
    pub init_scale: f64,
    pub tied_init: bool,
    pub log_every: usize,
    pub record_timing: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let d = TrainerConfig::default();
        Self {
            learning_rate: d.learning_rate,
            steps: d.steps,
            refresh_every: d.refresh_every,
            batch_size: d.batch_size,
            dim_out: d.dim_out,
            init_scale: d.init_scale,
            tied_init: d.tied_init,
            log_every: d.log_every,
            record_timing: d.record_timing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mrr_k: usize,
    pub recall_k: usize,
    /// Run file read by `eval`; defaults to `run.txt` in the output directory.
    pub run: Option<PathBuf>,
    /// Samplers compared by `compare`, all sharing the `sampler` section.
    pub variants: Vec<Variant>,
    /// Explicit comparison seeds. When absent, `repeats` seeds are derived
    /// from the root seed.
    pub seeds: Option<Vec<u64>>,
    pub repeats: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self {
            mrr_k: d.mrr_k,
            recall_k: d.recall_k,
            run: None,
            variants: vec![
                Variant::Uniform,
                Variant::TopkWeighted,
                Variant::Debiased,
                Variant::Trisampler,
            ],
            seeds: None,
            repeats: 5,
        }
    }
}

impl CliConfig {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: derive_seed(self.seed, "sampler"),
            ..self.sampler.clone()
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            learning_rate: t.learning_rate,
            steps: t.steps,
            refresh_every: t.refresh_every,
            batch_size: t.batch_size,
            dim_out: t.dim_out,
            init_scale: t.init_scale,
            tied_init: t.tied_init,
            log_every: t.log_every,
            record_timing: t.record_timing,
            index: self.index.mode,
            sampler: self.sampler_config(),
            seed: derive_seed(self.seed, "trainer"),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            mrr_k: self.eval.mrr_k,
            recall_k: self.eval.recall_k,
        }
    }

    pub fn compare_seeds(&self) -> Vec<u64> {
        match &self.eval.seeds {
            Some(seeds) => seeds.clone(),
            None => (0..self.eval.repeats)
                .map(|i| derive_seed(self.seed, &format!("compare{i}")))
                .collect(),
        }
    }

    pub fn run_path(&self) -> PathBuf {
        self.eval
            .run
            .clone()
            .unwrap_or_else(|| self.output_dir.join(RUN_FILE))
    }
}

pub const RUN_FILE: &str = "run.txt";

/// Reads a JSON file, or an empty object when `path` is `None`.
pub fn read_json(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{} is not valid JSON: {e}", path.display())))
}

/// Applies `path=value` overrides. The value is parsed as JSON and falls
/// back to a plain string.
pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects path=value, got {item:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *root;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            if key.is_empty() {
                return Err(CliError::usage(format!("empty key in --set path {path:?}")));
            }
            let Value::Object(map) = node else {
                return Err(CliError::usage(format!(
                    "--set {path}: {} is not an object",
                    keys[..i].join(".")
                )));
            };
            if i + 1 == keys.len() {
                map.insert(key.to_string(), value.clone());
                break;
            }
            node = map
                .entry(key.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

/// Deserializes with the path of the first offending key in the message.
pub fn from_value<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::usage(format!("invalid {what} at `{path}`: {}", e.inner()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_create_nested_keys() {
        let mut v = json!({"trainer": {"steps": 5}});
        apply_overrides(
            &mut v,
            &[
                "trainer.steps=0".into(),
                "sampler.variant=top_ns".into(),
                "output_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(
            v,
            json!({"trainer": {"steps": 0}, "sampler": {"variant": "top_ns"}, "output_dir": "/tmp/x"})
        );
        let cfg: CliConfig = from_value(v, "config").unwrap();
        assert_eq!(cfg.trainer.steps, 0);
        assert_eq!(cfg.sampler.variant, Variant::TopNs);
    }

    #[test]
    fn bad_overrides() {
        let mut v = json!({"seed": 1});
        assert!(apply_overrides(&mut v, &["seed".into()]).is_err());
        assert!(apply_overrides(&mut v, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = from_value::<CliConfig>(json!({"sampler": {"kk": 3}}), "config").unwrap_err();
        assert!(err.message.contains("sampler.kk"), "{}", err.message);
        let err = from_value::<CliConfig>(
            json!({"index": {"mode": {"kind": "approximate", "nprobes": 2}}}),
            "config",
        )
        .unwrap_err();
        assert!(err.message.contains("index.mode"), "{}", err.message);
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = CliConfig::default();
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(from_value::<CliConfig>(v, "config").unwrap(), cfg);
        let approx: CliConfig = from_value(
            json!({"index": {"mode": {"kind": "approximate", "nlist": 8}}}),
            "config",
        )
        .unwrap();
        assert!(matches!(approx.index.mode, IndexMode::Approximate(p) if p.nlist == 8));
    }

    #[test]
    fn seeds_fan_out_from_root() {
        let a = CliConfig::default();
        let b = CliConfig {
            seed: 1,
            ..CliConfig::default()
        };
        assert_ne!(a.trainer_config().seed, b.trainer_config().seed);
        assert_ne!(a.sampler_config().seed, a.trainer_config().seed);
        assert_eq!(a.compare_seeds().len(), 5);
        assert_eq!(a.compare_seeds(), CliConfig::default().compare_seeds());
    }
}
