//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so a file only lists what it changes. Unknown
//! keys are rejected. The grammar, with defaults:
//!
//! ```toml
//! seed = 0                       # init and decode streams
//! out_dir = "run"                # checkpoints, logs and reports
//! benchmark = "kv-lookup"        # label used in reports
//! templates = "desk"             # "desk" | "full"
//! objective = "nll"              # projector objective: "nll" | "mse"
//! pipelines = ["arm-only", "arm->arm", "ddlm->arm:text", "ddlm->arm:latent", "ddlm->ddlm"]
//!
//! [data]
//! family = "kv-lookup"           # arith-chain | kv-lookup | sorted-rank | copy
//! train = 4000                   # generated sizes, ignored for paths given below
//! test = 200
//! # seed = 0                     # defaults to the global seed
//! # train_path = "train.jsonl"   # JSONL rows {question, answer, plan?, ...}
//! # test_path = "test.jsonl"
//! [data.synthetic]               # generator knobs, see SyntheticOptions
//! kv_depth = [2, 3]
//!
//! [planner]                      # diffusion planner, width d1
//! d_model = 32
//! n_layers = 2
//! n_heads = 4
//! d_ff = 64
//! max_len = 48
//! plan_region = 4                # plan positions during training
//! answer_region = 3              # answer positions during training
//!
//! [executor]                     # autoregressive executor, width d2
//! d_model = 24                   # (plan_region / answer_region unused)
//!
//! [decode]
//! plan_length = 2
//! steps = 2                      # omit for plan_length / 4
//! decoding = { kind = "argmax" } # or { kind = "sample", temperature = 0.7 }
//! arm_plan_tokens = 8
//! answer_tokens = 3
//!
//! [train.planner]                # same keys for executor and projector
//! epochs = 10
//! batch_size = 4
//! grad_accum = 2
//! lr = 5e-4
//! weight_decay = 0.001
//! warmup_steps = 300
//! precision = "f32"
//! seed = 0
//! lora_enabled = false           # projector section only
//! lora_rank = 8
//! lora_alpha = 32.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::Objective;
use crate::data::{SyntheticOptions, TaskFamily};
use crate::error::{ensure, Error, Result};
use crate::nn::ModelConfig;
use crate::pipelines::{DecodeConfig, PipelineId};
use crate::prompts::TemplateSet;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub family: TaskFamily,
    pub train: usize,
    pub test: usize,
    pub seed: Option<u64>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub synthetic: SyntheticOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            family: TaskFamily::KvLookup,
            train: 4000,
            test: 200,
            seed: None,
            train_path: None,
            test_path: None,
            synthetic: SyntheticOptions::default(),
        }
    }
}

/// Model dimensions; the vocabulary size comes from the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub plan_region: usize,
    pub answer_region: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            max_len: 64,
            plan_region: 4,
            answer_region: 3,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSections {
    pub planner: TrainConfig,
    pub executor: TrainConfig,
    pub projector: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub benchmark: String,
    pub templates: TemplateSet,
    pub objective: Objective,
    pub pipelines: Vec<PipelineId>,
    pub data: DataConfig,
    pub planner: ModelSection,
    pub executor: ModelSection,
    pub decode: DecodeConfig,
    pub train: TrainSections,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            benchmark: "kv-lookup".into(),
            templates: TemplateSet::Desk,
            objective: Objective::Nll,
            pipelines: PipelineId::ALL.to_vec(),
            data: DataConfig::default(),
            planner: ModelSection::default(),
            executor: ModelSection {
                d_model: 24,
                ..Default::default()
            },
            decode: DecodeConfig::default(),
            train: TrainSections::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data paths and `out_dir` resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Like [`load`](Self::load), with `key.path=value` overrides applied in
    /// order. Values are TOML (`seed=2`, `objective="mse"`).
    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&apply_overrides(&text, overrides)?)?;
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            fix(&mut cfg.out_dir);
            cfg.data.train_path.as_mut().map(fix);
            cfg.data.test_path.as_mut().map(fix);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    /// `out_dir` is left out: where results land does not change them.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.pipelines.is_empty(), Config, "no pipelines listed");
        ensure!(!self.benchmark.is_empty(), Config, "benchmark label is empty");
        for (name, m) in [("planner", &self.planner), ("executor", &self.executor)] {
            m.model_config(8)
                .validate()
                .map_err(|e| Error::Config(format!("[{name}] {e}")))?;
        }
        ensure!(
            self.planner.plan_region > 0 && self.planner.answer_region > 0,
            Config,
            "planner regions must be positive"
        );
        ensure!(self.decode.plan_length > 0, Config, "plan_length must be positive");
        ensure!(
            self.decode.answer_tokens > 0 && self.decode.arm_plan_tokens > 0,
            Config,
            "decode budgets must be positive"
        );
        self.decode.schedule(self.decode.plan_length)?;
        for (name, t) in [
            ("planner", &self.train.planner),
            ("executor", &self.train.executor),
            ("projector", &self.train.projector),
        ] {
            t.validate().map_err(|e| Error::Config(format!("[train.{name}] {e}")))?;
        }
        Ok(())
    }
}

/// Returns `text` with every `key.path=value` assignment applied.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let value: toml::Table = format!("v = {}", value.trim())
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{o}`: {e}")))?;
        let value = value["v"].clone();
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, path) = parts.split_last().expect("split yields at least one part");
        let mut table = &mut doc;
        for p in path {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override `{o}`: `{p}` is not a section")))?;
        }
        table.insert(last.to_string(), value);
    }
    Ok(doc.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn roundtrip_and_hash() {
        let mut c = ExperimentConfig::default();
        c.decode.steps = Some(2);
        c.data.synthetic.kv_table = true;
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(ExperimentConfig::default().hash(), c.hash());
    }

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let c = ExperimentConfig::from_toml(&doc).unwrap();
        assert_eq!(c.decode.steps, Some(2));
        assert_eq!(c.executor.d_model, 24);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let text = "seed = 1\n[train.projector]\nepochs = 3\n";
        let sets = ["seed=4", "train.projector.lr=0.01", "objective=\"mse\"", "decode.steps=2"].map(String::from);
        let c = ExperimentConfig::from_toml(&apply_overrides(text, &sets).unwrap()).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.projector.epochs, 3);
        assert_eq!(c.train.projector.lr, 0.01);
        assert_eq!(c.objective, Objective::Mse);
        assert_eq!(c.decode.steps, Some(2));
        assert!(apply_overrides(text, &["seed".to_string()]).is_err());
        assert!(apply_overrides(text, &["seed.x=1".to_string()]).is_err());
    }

    #[test]
    fn errors() {
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("[planner]\nd_model = 30\nn_heads = 4"),
            Err(Error::Config(_))
        ));
        assert!(matches!(ExperimentConfig::from_toml("pipelines = []"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("pipelines = [\"arm->ddlm\"]"),
            Err(Error::Config(_))
        ));
    }
}
