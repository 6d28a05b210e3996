//! End-to-end commands over an [`ExperimentConfig`]: training each agent,
//! evaluation and reports. Every artifact lands in `out_dir`:
//!
//! ```text
//! planner.ckpt  executor.ckpt  projector.ckpt        tensor archives
//! {planner,executor,projector}.log.jsonl           {"epoch", "loss"} per epoch
//! records.jsonl                                    one RunRecord per line
//! eval.jsonl  eval.txt                             accuracy and token table
//! diagnose.jsonl  diagnose.txt                     failure attribution
//! ```
//! Everything except the `wall_time_ms` field of `records.jsonl` is a pure
//! function of the configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::TensorArchive;
use crate::bridge::{cache_latents, check_dims, check_frozen, train_projector, Bridge};
use crate::config::ExperimentConfig;
use crate::data::{generate_splits, load_jsonl, Dataset, Provenance, Split};
use crate::diagnostics::{diagnose, render_table, DiagnosticReport};
use crate::error::{ensure, Error, Result};
use crate::executor::AutoregressiveLM;
use crate::experiment::{evaluate, executor_corpus, planner_corpus, train_executor, train_planner, EvalRow, EvalTable};
use crate::metrics::RepetitionReport;
use crate::nn::{LoraAdapter, ModelConfig, ParamStore};
use crate::optim::AdamW;
use crate::pipelines::{Agents, Context, DdlmPlanner, PipelineId, RunRecord, EXTRACTION_RULE};
use crate::planner::DiffusionLM;
use crate::projector::{Projector, ProjectorDims};
use crate::prompts::Prompts;
use crate::rng::{stream, stream_rng};
use crate::tensor::Tensor;
use crate::train::{Control, TrainConfig, TrainState};
use crate::vocab::Vocabulary;

pub const PROVENANCE: &str = concat!("ldarm-core ", env!("CARGO_PKG_VERSION"));

/// File names inside `out_dir`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn planner(&self) -> PathBuf {
        self.dir.join("planner.ckpt")
    }

    pub fn executor(&self) -> PathBuf {
        self.dir.join("executor.ckpt")
    }

    pub fn projector(&self) -> PathBuf {
        self.dir.join("projector.ckpt")
    }

    pub fn log(&self, kind: &str) -> PathBuf {
        self.dir.join(format!("{kind}.log.jsonl"))
    }

    pub fn records(&self) -> PathBuf {
        self.dir.join("records.jsonl")
    }

    pub fn eval(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("eval.{ext}"))
    }

    pub fn diagnose(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("diagnose.{ext}"))
    }

    /// The deterministic report files, in a fixed order.
    pub fn reports(&self) -> Vec<PathBuf> {
        vec![
            self.log("planner"),
            self.log("executor"),
            self.log("projector"),
            self.eval("jsonl"),
            self.eval("txt"),
            self.diagnose("jsonl"),
            self.diagnose("txt"),
        ]
    }
}

/// A report line tagged with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub report: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

/// Configuration plus the tokenizer, templates and data it implies.
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub vocab: Vocabulary,
    pub prompts: Prompts,
    pub train: Dataset,
    pub test: Dataset,
    pub layout: Layout,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.data;
        let [gen_train, _, gen_test] = if d.train_path.is_some() && d.test_path.is_some() {
            [Split::Train, Split::Val, Split::Test].map(|split| Dataset {
                split,
                provenance: Provenance::Generated {
                    family: d.family,
                    seed: cfg.data_seed(),
                },
                samples: Vec::new(),
            })
        } else {
            generate_splits(d.family, [d.train, 0, d.test], cfg.data_seed(), &d.synthetic)?
        };
        let train = match &d.train_path {
            Some(p) => load_jsonl(p, Split::Train)?,
            None => gen_train,
        };
        let test = match &d.test_path {
            Some(p) => load_jsonl(p, Split::Test)?,
            None => gen_test,
        };
        Ok(Self {
            hash: cfg.hash(),
            vocab: Vocabulary::char_level(),
            prompts: Prompts::builtin(cfg.templates),
            layout: Layout::new(&cfg.out_dir),
            train,
            test,
            cfg,
        })
    }

    pub fn ctx(&self) -> Context<'_> {
        Context {
            vocab: &self.vocab,
            prompts: &self.prompts,
            decode: self.cfg.decode,
            seed: self.cfg.seed,
        }
    }

    pub fn planner_config(&self) -> ModelConfig {
        self.cfg.planner.model_config(self.vocab.len())
    }

    pub fn executor_config(&self) -> ModelConfig {
        self.cfg.executor.model_config(self.vocab.len())
    }

    pub fn projector_dims(&self) -> ProjectorDims {
        ProjectorDims::scaled(self.cfg.planner.d_model, self.cfg.executor.d_model)
    }

    fn create_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.layout.dir).map_err(|e| Error::io(&self.layout.dir, e))
    }

    fn require_train(&self) -> Result<()> {
        ensure!(!self.train.is_empty(), Config, "the train split is empty");
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

fn from_meta<T: DeserializeOwned>(a: &TensorArchive, key: &str) -> Result<T> {
    serde_json::from_str(a.meta(key)?).map_err(|e| Error::Archive(format!("metadata `{key}`: {e}")))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&to_json(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_epoch_log(path: &Path, config_hash: &str, losses: &[f64]) -> Result<()> {
    let rows: Vec<Stamped<EpochLog>> = losses
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| Stamped {
            config_hash: config_hash.to_string(),
            report: EpochLog { epoch, loss },
        })
        .collect();
    write_jsonl(path, &rows)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Archive of a trained agent: parameters under `params.`, configuration
/// and loss curve in the metadata.
fn agent_archive(
    kind: &str,
    model: &ModelConfig,
    train: &TrainConfig,
    params: &ParamStore,
    losses: &[f64],
    config_hash: &str,
) -> Result<TensorArchive> {
    let mut a = TensorArchive::new();
    a.set_meta("kind", kind);
    a.set_meta("model", to_json(model)?);
    a.set_meta("train", to_json(train)?);
    a.set_meta("epoch_losses", to_json(&losses)?);
    a.set_meta("config_hash", config_hash);
    a.set_meta("provenance", PROVENANCE);
    a.push_store("params.", params);
    Ok(a)
}

fn check_kind(a: &TensorArchive, path: &Path, kind: &str) -> Result<()> {
    let found = a.meta("kind")?;
    ensure!(found == kind, Config, "{} holds a {found}, expected a {kind}", path.display());
    Ok(())
}

fn load_archive(path: &Path, what: &str) -> Result<TensorArchive> {
    ensure!(path.exists(), Config, "missing {what} checkpoint {}", path.display());
    TensorArchive::load(path)
}

fn check_model(a: &TensorArchive, path: &Path, expected: &ModelConfig) -> Result<()> {
    let found: ModelConfig = from_meta(a, "model")?;
    ensure!(
        &found == expected,
        Config,
        "{} was trained with {found:?}, the configuration asks for {expected:?}",
        path.display()
    );
    Ok(())
}

pub fn load_planner(path: &Path, expected: &ModelConfig) -> Result<DiffusionLM> {
    let a = load_archive(path, "planner")?;
    check_kind(&a, path, "planner")?;
    check_model(&a, path, expected)?;
    let mut m = DiffusionLM::new(*expected, &mut stream_rng(0, stream::INIT))?;
    m.net.params.load_from(&a.store("params."))?;
    m.freeze();
    Ok(m)
}

/// Adapter entries: `lora.alpha` (one scalar) and `lora.<tensor>` pairs.
fn lora_entries(a: &TensorArchive) -> Option<(f64, ParamStore)> {
    let alpha = a.get("lora.alpha")?.data()[0];
    let mut store = ParamStore::new();
    for (name, t) in a.store("lora.").iter().filter(|(n, _)| *n != "alpha") {
        store.push(name, t.clone());
    }
    Some((alpha, store))
}

/// The executor; an adapter stored in the checkpoint is returned separately
/// so text pipelines can keep using the base model.
pub fn load_executor(path: &Path, expected: &ModelConfig) -> Result<(AutoregressiveLM, Option<LoraAdapter>)> {
    let a = load_archive(path, "executor")?;
    check_kind(&a, path, "executor")?;
    check_model(&a, path, expected)?;
    let mut m = AutoregressiveLM::new(*expected, &mut stream_rng(0, stream::INIT))?;
    m.net.params.load_from(&a.store("params."))?;
    m.freeze();
    let adapter = match lora_entries(&a) {
        Some((alpha, mut params)) => {
            let rank = params.tensor(0).shape()[0];
            params.set_trainable(true);
            let adapter = LoraAdapter { rank, alpha, params };
            adapter.check_against(expected)?;
            Some(adapter)
        }
        None => None,
    };
    Ok((m, adapter))
}

/// Trains an agent from scratch and writes its checkpoint and epoch log.
fn finish_agent(
    setup: &Setup,
    kind: &str,
    model: &ModelConfig,
    train: &TrainConfig,
    params: &ParamStore,
    losses: &[f64],
) -> Result<TrainSummary> {
    let path = if kind == "planner" { setup.layout.planner() } else { setup.layout.executor() };
    agent_archive(kind, model, train, params, losses, &setup.hash)?.save(&path)?;
    write_epoch_log(&setup.layout.log(kind), &setup.hash, losses)?;
    Ok(TrainSummary {
        checkpoint: path,
        epoch_losses: losses.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epoch_losses: Vec<f64>,
}

fn epoch_printer<'a>(kind: &'a str, log: &'a mut dyn FnMut(&str)) -> impl FnMut(usize, f64) -> Control + 'a {
    move |e, l| {
        log(&format!("{kind} epoch {e} loss {l:.5}"));
        Control::Continue
    }
}

pub fn cmd_train_planner(setup: &Setup, log: &mut dyn FnMut(&str)) -> Result<TrainSummary> {
    setup.require_train()?;
    setup.create_out_dir()?;
    let mc = setup.planner_config();
    let tc = &setup.cfg.train.planner;
    let mut model = DiffusionLM::new(mc, &mut stream_rng(setup.cfg.seed, "init/planner"))?;
    let p = &setup.cfg.planner;
    let corpus = planner_corpus(&setup.ctx(), &setup.train.samples, p.plan_region, p.answer_region)?;
    let mut state = TrainState::new(&model, tc, corpus.len());
    train_planner(&mut model, &corpus, tc, &mut state, &mut epoch_printer("planner", log))?;
    finish_agent(setup, "planner", &mc, tc, &model.net.params, &state.epoch_losses)
}

pub fn cmd_train_executor(setup: &Setup, log: &mut dyn FnMut(&str)) -> Result<TrainSummary> {
    setup.require_train()?;
    setup.create_out_dir()?;
    let mc = setup.executor_config();
    let tc = &setup.cfg.train.executor;
    let mut model = AutoregressiveLM::new(mc, &mut stream_rng(setup.cfg.seed, "init/executor"))?;
    let corpus = executor_corpus(&setup.ctx(), &setup.train.samples)?;
    let mut state = TrainState::new(&model, tc, corpus.len());
    train_executor(&mut model, &corpus, tc, &mut state, &mut epoch_printer("executor", log))?;
    finish_agent(setup, "executor", &mc, tc, &model.net.params, &state.epoch_losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProjectorOptions {
    /// Continue from the state saved in `projector.ckpt`.
    pub resume: bool,
    /// Save and return once this many optimizer steps have been taken.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorSummary {
    pub steps: u64,
    pub complete: bool,
    pub epoch_losses: Vec<f64>,
    /// SHA-256 of the planner checkpoint before and after training.
    pub planner_hash: (String, String),
    /// SHA-256 of the executor's base parameters before and after training.
    pub executor_hash: (String, String),
}

impl ProjectorSummary {
    pub fn frozen_ok(&self) -> bool {
        self.planner_hash.0 == self.planner_hash.1 && self.executor_hash.0 == self.executor_hash.1
    }
}

fn store_hash(store: &ParamStore) -> String {
    let mut a = TensorArchive::new();
    a.push_store("", store);
    sha256_hex(&a.to_bytes())
}

fn projector_archive(
    setup: &Setup,
    projector: &Projector,
    state: &TrainState,
    complete: bool,
) -> Result<TensorArchive> {
    let mut a = TensorArchive::new();
    a.set_meta("kind", "projector");
    a.set_meta("dims", to_json(&projector.dims)?);
    a.set_meta("train", to_json(&setup.cfg.train.projector)?);
    a.set_meta("objective", to_json(&setup.cfg.objective)?);
    a.set_meta("epoch_losses", to_json(&state.epoch_losses)?);
    a.set_meta("partial", to_json(&state.partial)?);
    a.set_meta("step", state.opt.step.to_string());
    a.set_meta("complete", complete.to_string());
    a.set_meta("config_hash", &setup.hash);
    a.set_meta("provenance", PROVENANCE);
    a.push_store("params.", &projector.params);
    for (i, (m, v)) in state.opt.m.iter().zip(&state.opt.v).enumerate() {
        a.push(format!("opt.m.{i}"), &Tensor::new(vec![m.len()], m.clone())?);
        a.push(format!("opt.v.{i}"), &Tensor::new(vec![v.len()], v.clone())?);
    }
    Ok(a)
}

/// Restores projector weights and loop state saved by an earlier run.
fn restore_projector(setup: &Setup, projector: &mut Projector, state: &mut TrainState) -> Result<()> {
    let path = setup.layout.projector();
    let a = load_archive(&path, "projector")?;
    check_kind(&a, &path, "projector")?;
    let dims: ProjectorDims = from_meta(&a, "dims")?;
    ensure!(dims == projector.dims, Config, "{} has dims {dims:?}, expected {:?}", path.display(), projector.dims);
    let saved: TrainConfig = from_meta(&a, "train")?;
    ensure!(
        saved == setup.cfg.train.projector,
        Config,
        "[train.projector] changed since {} was written",
        path.display()
    );
    ensure!(
        a.meta("objective")? == to_json(&setup.cfg.objective)?,
        Config,
        "objective changed since {} was written",
        path.display()
    );
    projector.params.load_from(&a.store("params."))?;
    let opt: &mut AdamW = &mut state.opt;
    ensure!(
        a.entries.iter().filter(|(n, _)| n.starts_with("opt.m.")).count() == opt.m.len(),
        Config,
        "optimizer state in {} does not match the trainable tensors",
        path.display()
    );
    for i in 0..opt.m.len() {
        for (prefix, buf) in [("opt.m.", &mut opt.m[i]), ("opt.v.", &mut opt.v[i])] {
            let t = a
                .get(&format!("{prefix}{i}"))
                .ok_or_else(|| Error::Archive(format!("missing {prefix}{i}")))?;
            ensure!(t.numel() == buf.len(), Archive, "{prefix}{i} has {} values, expected {}", t.numel(), buf.len());
            buf.copy_from_slice(t.data());
        }
    }
    opt.step = a
        .meta("step")?
        .parse()
        .map_err(|_| Error::Archive("bad `step` metadata".into()))?;
    state.epoch_losses = from_meta(&a, "epoch_losses")?;
    state.partial = from_meta(&a, "partial")?;
    Ok(())
}

/// Trains the projector between the frozen planner and executor. With LoRA
/// enabled, the adapter is written back into `executor.ckpt` as `lora.*`
/// entries; the base entries and metadata are left as they were.
pub fn cmd_train_projector(
    setup: &Setup,
    opts: ProjectorOptions,
    log: &mut dyn FnMut(&str),
) -> Result<ProjectorSummary> {
    setup.require_train()?;
    let layout = &setup.layout;
    let planner = load_planner(&layout.planner(), &setup.planner_config())?;
    let planner_hash = || std::fs::read(layout.planner()).map(|b| sha256_hex(&b)).map_err(|e| Error::io(layout.planner(), e));
    let planner_before = planner_hash()?;
    let (mut executor, saved_adapter) = load_executor(&layout.executor(), &setup.executor_config())?;
    let mut exec_archive = TensorArchive::load(&layout.executor())?;
    let executor_before = store_hash(&executor.net.params);

    let tc = &setup.cfg.train.projector;
    if tc.lora_enabled {
        let adapter = match saved_adapter {
            Some(a) if opts.resume => a,
            _ => LoraAdapter::new(
                executor.config(),
                tc.lora_rank,
                tc.lora_alpha,
                &mut stream_rng(setup.cfg.seed, "init/lora"),
            )?,
        };
        executor.apply_lora(adapter)?;
    }
    let mut projector = Projector::new(setup.projector_dims(), &mut stream_rng(setup.cfg.seed, "init/projector"));
    check_dims(&planner, &projector, &executor)?;
    check_frozen(&planner, &executor, tc.lora_enabled)?;

    let ctx = setup.ctx();
    log(&format!("caching {} planner latents", setup.train.len()));
    let latents = cache_latents(&DdlmPlanner { model: &planner, ctx }, &setup.train.samples)?;

    let mut bridge = Bridge {
        projector: &mut projector,
        executor: &mut executor,
    };
    let mut state = TrainState::new(&bridge, tc, latents.len());
    if opts.resume {
        restore_projector(setup, bridge.projector, &mut state)?;
        log(&format!("resuming at step {}", state.opt.step));
    }
    train_projector(
        &mut bridge,
        &latents,
        tc,
        setup.cfg.objective,
        &mut state,
        opts.stop_after,
        &mut epoch_printer("projector", log),
    )?;
    let complete = state.epoch_losses.len() >= tc.epochs;

    projector_archive(setup, &projector, &state, complete)?.save(&layout.projector())?;
    write_epoch_log(&layout.log("projector"), &setup.hash, &state.epoch_losses)?;
    if let Some(adapter) = executor.lora() {
        exec_archive.entries.retain(|(n, _)| !n.starts_with("lora."));
        exec_archive.push("lora.alpha", &Tensor::new(vec![1], vec![adapter.alpha])?);
        exec_archive.push_store("lora.", &adapter.params);
        exec_archive.save(&layout.executor())?;
    }

    let planner_after = planner_hash()?;
    let summary = ProjectorSummary {
        steps: state.opt.step,
        complete,
        epoch_losses: state.epoch_losses.clone(),
        planner_hash: (planner_before, planner_after),
        executor_hash: (executor_before, store_hash(&executor.net.params)),
    };
    log(&format!(
        "frozen check: planner {} -> {}, executor base {} -> {}: {}",
        &summary.planner_hash.0[..16],
        &summary.planner_hash.1[..16],
        &summary.executor_hash.0[..16],
        &summary.executor_hash.1[..16],
        if summary.frozen_ok() { "unchanged" } else { "CHANGED" }
    ));
    ensure!(summary.frozen_ok(), Contract, "a frozen agent changed during projector training");
    Ok(summary)
}

pub fn load_projector(setup: &Setup) -> Result<Projector> {
    let path = setup.layout.projector();
    let a = load_archive(&path, "projector")?;
    check_kind(&a, &path, "projector")?;
    ensure!(
        a.meta("complete")? == "true",
        Config,
        "{} is from an interrupted run; resume it first",
        path.display()
    );
    let dims: ProjectorDims = from_meta(&a, "dims")?;
    ensure!(
        dims == setup.projector_dims(),
        Config,
        "{} has dims {dims:?}, the configuration implies {:?}",
        path.display(),
        setup.projector_dims()
    );
    let mut p = Projector::new(dims, &mut stream_rng(0, stream::INIT));
    p.params.load_from(&a.store("params."))?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub records: Vec<RunRecord>,
    pub table: EvalTable,
}

/// Runs every configured pipeline over the test split.
pub fn cmd_eval(setup: &Setup, log: &mut dyn FnMut(&str)) -> Result<EvalOutput> {
    ensure!(!setup.test.is_empty(), Config, "the test split is empty");
    let pipelines = &setup.cfg.pipelines;
    let uses = |k: fn(PipelineId) -> bool| pipelines.iter().any(|&p| k(p));
    let needs_ddlm = uses(|p| !matches!(p, PipelineId::ArmOnly | PipelineId::ArmToArm));
    let needs_arm = uses(|p| p != PipelineId::DdlmToDdlm);
    let needs_proj = uses(|p| p == PipelineId::DdlmToArmLatent);

    let layout = &setup.layout;
    let ddlm = needs_ddlm
        .then(|| load_planner(&layout.planner(), &setup.planner_config()))
        .transpose()?;
    let (arm, adapter) = match needs_arm {
        true => {
            let (m, a) = load_executor(&layout.executor(), &setup.executor_config())?;
            (Some(m), a)
        }
        false => (None, None),
    };
    let adapted = match (&arm, adapter) {
        (Some(base), Some(a)) if needs_proj => {
            let mut m = base.clone();
            m.apply_lora(a)?;
            Some(m)
        }
        _ => None,
    };
    let projector = needs_proj.then(|| load_projector(setup)).transpose()?;
    let agents = Agents {
        ctx: setup.ctx(),
        ddlm: ddlm.as_ref(),
        arm: arm.as_ref(),
        latent_arm: adapted.as_ref(),
        projector: projector.as_ref(),
    };
    log(&format!("evaluating {} pipelines on {} samples", pipelines.len(), setup.test.len()));
    let records = evaluate(&agents, pipelines, &setup.test)?;
    let table = EvalTable::from_records(&records);

    setup.create_out_dir()?;
    write_jsonl(&layout.records(), &records)?;
    let rows: Vec<Stamped<EvalRow>> = table
        .rows
        .iter()
        .map(|r| Stamped {
            config_hash: setup.hash.clone(),
            report: r.clone(),
        })
        .collect();
    write_jsonl(&layout.eval("jsonl"), &rows)?;
    let text = format!(
        "config {}  benchmark {}  scoring {}\n{}",
        setup.hash,
        setup.cfg.benchmark,
        EXTRACTION_RULE,
        table.render()
    );
    write_text(&layout.eval("txt"), &text)?;
    Ok(EvalOutput { records, table })
}

/// Attribution of DDLM→ARM failures for every DDLM→ARM pipeline in the
/// persisted records.
pub fn cmd_diagnose(setup: &Setup) -> Result<Vec<DiagnosticReport>> {
    let layout = &setup.layout;
    ensure!(
        layout.records().exists(),
        IncompleteData,
        "no records at {}; run eval first",
        layout.records().display()
    );
    let records: Vec<RunRecord> = read_jsonl(&layout.records())?;
    let present: BTreeMap<PipelineId, ()> = records.iter().map(|r| (r.pipeline, ())).collect();
    let variants: Vec<PipelineId> = [PipelineId::DdlmToArmText, PipelineId::DdlmToArmLatent]
        .into_iter()
        .filter(|p| present.contains_key(p))
        .collect();
    ensure!(
        !variants.is_empty(),
        IncompleteData,
        "no records for pipeline {} or {}",
        PipelineId::DdlmToArmText,
        PipelineId::DdlmToArmLatent
    );
    let reports = variants
        .into_iter()
        .map(|v| diagnose(&setup.cfg.benchmark, &records, v))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Stamped<DiagnosticReport>> = reports
        .iter()
        .map(|r| Stamped {
            config_hash: setup.hash.clone(),
            report: r.clone(),
        })
        .collect();
    write_jsonl(&layout.diagnose("jsonl"), &rows)?;
    let mut text = format!("config {}\n", setup.hash);
    text.push_str(&render_table(&reports));
    write_text(&layout.diagnose("txt"), &text)?;
    Ok(reports)
}

/// Repetition metrics of a corpus with one document per line. Writes
/// `<out>.jsonl` and `<out>.txt` when `out` is given.
pub fn cmd_metrics(corpus: &Path, lr_n: usize, out: Option<&Path>) -> Result<RepetitionReport> {
    let text = std::fs::read_to_string(corpus).map_err(|e| Error::io(corpus, e))?;
    let docs: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let report = RepetitionReport::compute(&docs, lr_n)?;
    if let Some(out) = out {
        let stem = out.to_string_lossy();
        write_jsonl(Path::new(&format!("{stem}.jsonl")), std::slice::from_ref(&report))?;
        let label = corpus.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut t = String::new();
        let _ = write!(t, "{}", report.render(&label));
        write_text(Path::new(&format!("{stem}.txt")), &t)?;
    }
    Ok(report)
}
