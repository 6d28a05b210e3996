//! Training corpora for each agent role, training drivers, and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskSample};
use crate::error::{ensure, Result};
use crate::executor::AutoregressiveLM;
use crate::nn::Bound;
use crate::pipelines::{encode_prompt, Agents, Context, PipelineId, RunRecord};
use crate::planner::DiffusionLM;
use crate::rng::Rng;
use crate::tensor::{Tape, Var};
use crate::train::{fit, Control, TrainConfig, TrainState};
use crate::vocab::{TokenId, EOS};

/// A sequence whose positions from `start` on are denoised.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiseExample {
    pub tokens: Vec<TokenId>,
    pub start: usize,
}

/// A prefix and the continuation scored by next-token NLL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmExample {
    pub prefix: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// `text` tokenized and filled with EOS up to `len`. Text that does not fit
/// with its EOS is cut to `len` tokens when `truncate` is set, else rejected.
fn fill_region(ctx: &Context<'_>, text: &str, len: usize, truncate: bool) -> Result<Vec<TokenId>> {
    let mut ids = ctx.vocab.tokenize(text)?;
    ensure!(
        truncate || ids.len() < len,
        Config,
        "`{text}` needs {} positions plus EOS, region holds {len}",
        ids.len()
    );
    ids.resize(len, EOS);
    Ok(ids)
}

/// Diffusion corpus: every sample once as planner (prompt → plan region of
/// `plan_region` positions, plans cut to fit) and once as executor (prompt
/// with reference plan → answer region of `answer_region` positions).
pub fn planner_corpus(
    ctx: &Context<'_>,
    samples: &[TaskSample],
    plan_region: usize,
    answer_region: usize,
) -> Result<Vec<DenoiseExample>> {
    let mut out = Vec::with_capacity(2 * samples.len());
    for s in samples {
        let prompt = encode_prompt(ctx.vocab, &ctx.prompts.planner_prompt(&s.question)?)?;
        let start = prompt.len();
        let mut tokens = prompt;
        tokens.extend(fill_region(ctx, &s.plan, plan_region, true)?);
        out.push(DenoiseExample { tokens, start });

        let prompt = encode_prompt(ctx.vocab, &ctx.prompts.executor_prompt(&s.plan, &s.question)?)?;
        let start = prompt.len();
        let mut tokens = prompt;
        tokens.extend(fill_region(ctx, &s.answer, answer_region, false)?);
        out.push(DenoiseExample { tokens, start });
    }
    Ok(out)
}

/// Autoregressive corpus: planner, executor with the reference plan, and
/// executor with an empty plan.
pub fn executor_corpus(ctx: &Context<'_>, samples: &[TaskSample]) -> Result<Vec<LmExample>> {
    let with_eos = |text: &str| -> Result<Vec<TokenId>> {
        let mut ids = ctx.vocab.tokenize(text)?;
        ids.push(EOS);
        Ok(ids)
    };
    let mut out = Vec::with_capacity(3 * samples.len());
    for s in samples {
        out.push(LmExample {
            prefix: encode_prompt(ctx.vocab, &ctx.prompts.planner_prompt(&s.question)?)?,
            target: with_eos(&s.plan)?,
        });
        for plan in [s.plan.as_str(), ""] {
            out.push(LmExample {
                prefix: encode_prompt(ctx.vocab, &ctx.prompts.executor_prompt(plan, &s.question)?)?,
                target: with_eos(&s.answer)?,
            });
        }
    }
    Ok(out)
}

/// Conditional denoising loss on the region of one example.
pub fn denoise_loss(
    model: &DiffusionLM,
    tape: &mut Tape,
    b: &Bound,
    ex: &DenoiseExample,
    rng: &mut Rng,
) -> Result<Var> {
    let t = rng.gen::<f64>();
    model.diffusion_loss_at(tape, b, &ex.tokens, ex.start, t, rng)
}

pub fn lm_loss(model: &AutoregressiveLM, tape: &mut Tape, b: &Bound, ex: &LmExample) -> Result<Var> {
    let input = model.embed_input(tape, b, None, &ex.prefix)?;
    model.nll(tape, b, &input, &ex.target)
}

pub fn train_planner(
    model: &mut DiffusionLM,
    corpus: &[DenoiseExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    on_epoch: &mut dyn FnMut(usize, f64) -> Control,
) -> Result<()> {
    let mut loss = |m: &DiffusionLM, tape: &mut Tape, b: &Bound, i: usize, rng: &mut Rng| {
        denoise_loss(m, tape, b, &corpus[i], rng)
    };
    fit(model, cfg, corpus.len(), state, None, &mut loss, on_epoch)
}

pub fn train_executor(
    model: &mut AutoregressiveLM,
    corpus: &[LmExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    on_epoch: &mut dyn FnMut(usize, f64) -> Control,
) -> Result<()> {
    let mut loss =
        |m: &AutoregressiveLM, tape: &mut Tape, b: &Bound, i: usize, _: &mut Rng| lm_loss(m, tape, b, &corpus[i]);
    fit(model, cfg, corpus.len(), state, None, &mut loss, on_epoch)
}

/// Runs every pipeline over every sample of `data`. Sample `i` uses decode
/// stream `i` in every pipeline, so paired pipelines see the same plans.
pub fn evaluate(agents: &Agents<'_>, pipelines: &[PipelineId], data: &Dataset) -> Result<Vec<RunRecord>> {
    ensure!(!data.samples.is_empty(), Config, "the {} split is empty", data.split);
    let mut records = Vec::with_capacity(pipelines.len() * data.samples.len());
    for &p in pipelines {
        for (i, s) in data.samples.iter().enumerate() {
            records.push(agents.run(p, &data.sample_id(i), i as u64, &s.question, &s.answer)?);
        }
    }
    Ok(records)
}

/// Accuracy and mean token counts of one pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pipeline: PipelineId,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub planner_tokens: f64,
    pub executor_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    /// Aggregates records per pipeline, in first-seen pipeline order.
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut order = Vec::new();
        let mut acc: BTreeMap<PipelineId, (usize, usize, usize, usize)> = BTreeMap::new();
        for r in records {
            let e = acc.entry(r.pipeline).or_insert_with(|| {
                order.push(r.pipeline);
                (0, 0, 0, 0)
            });
            e.0 += 1;
            e.1 += usize::from(r.correct);
            e.2 += r.planner_tokens;
            e.3 += r.executor_tokens;
        }
        let rows = order
            .into_iter()
            .map(|p| {
                let (n, c, pt, et) = acc[&p];
                EvalRow {
                    pipeline: p,
                    samples: n,
                    correct: c,
                    accuracy: 100.0 * c as f64 / n as f64,
                    planner_tokens: pt as f64 / n as f64,
                    executor_tokens: et as f64 / n as f64,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn get(&self, p: PipelineId) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.pipeline == p)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<18} {:>7} {:>9} {:>14} {:>15}\n",
            "pipeline", "n", "accuracy", "planner tok", "executor tok"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>7} {:>9.1} {:>14.2} {:>15.2}",
                r.pipeline.as_str(),
                r.samples,
                r.accuracy,
                r.planner_tokens,
                r.executor_tokens
            );
        }
        s
    }
}
