//! Training and inference through the projector between a frozen diffusion
//! planner and a frozen autoregressive executor.

use serde::{Deserialize, Serialize};

use crate::data::TaskSample;
use crate::error::{ensure, Result};
use crate::executor::AutoregressiveLM;
use crate::nn::{Bound, ParamStore, Transformer};
use crate::pipelines::{encode_prompt, Context, DdlmPlanner};
use crate::planner::DiffusionLM;
use crate::projector::{mse_rows, Projector};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::train::{fit, Control, TrainConfig, TrainState, Trainable};
use crate::vocab::{TokenId, EOS};

/// What the projector is fitted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Answer NLL through the frozen executor.
    #[default]
    Nll,
    /// Squared distance to executor embeddings of the decoded plan tokens.
    Mse,
}

/// A planner output cached for projector training. The planner is frozen, so
/// computing these once is equivalent to re-running it every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentExample {
    pub plan: Tensor,
    pub plan_tokens: Vec<TokenId>,
    pub question: Vec<TokenId>,
    /// Answer tokens followed by EOS.
    pub answer: Vec<TokenId>,
}

/// Executor-side question tokens: the executor prompt with an empty plan.
pub fn executor_question(ctx: &Context<'_>, question: &str) -> Result<Vec<TokenId>> {
    encode_prompt(ctx.vocab, &ctx.prompts.executor_prompt("", question)?)
}

/// Runs the planner over every sample; sample `i` uses decode stream `i`.
pub fn cache_latents(planner: &DdlmPlanner<'_>, samples: &[TaskSample]) -> Result<Vec<LatentExample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (tokens, prompt_len) = planner.run(&s.question, i as u64)?;
            let latent = planner.model.extract_latent(&tokens, prompt_len)?;
            let mut answer = planner.ctx.vocab.tokenize(&s.answer)?;
            answer.push(EOS);
            Ok(LatentExample {
                plan: latent.states,
                plan_tokens: tokens[prompt_len..].to_vec(),
                question: executor_question(&planner.ctx, &s.question)?,
                answer,
            })
        })
        .collect()
}

/// Refuses to train unless both base models are frozen, and unless an
/// adapter is attached when LoRA is requested.
pub fn check_frozen(planner: &DiffusionLM, executor: &AutoregressiveLM, lora_enabled: bool) -> Result<()> {
    ensure!(planner.is_frozen(), Contract, "planner must be frozen for projector training");
    ensure!(
        executor.is_frozen(),
        Contract,
        "executor base weights must be frozen for projector training"
    );
    if lora_enabled {
        ensure!(executor.lora().is_some(), Contract, "LoRA enabled but no adapter attached");
    }
    Ok(())
}

pub fn check_dims(planner: &DiffusionLM, projector: &Projector, executor: &AutoregressiveLM) -> Result<()> {
    ensure!(
        projector.dims.d_in == planner.config().d_model && projector.dims.d_out == executor.d_model(),
        Config,
        "projector {}→{} does not connect planner width {} to executor width {}",
        projector.dims.d_in,
        projector.dims.d_out,
        planner.config().d_model,
        executor.d_model()
    );
    Ok(())
}

/// Projector plus executor as one trainable unit. Only the projector and any
/// executor adapter are handed to the optimizer.
pub struct Bridge<'a> {
    pub projector: &'a mut Projector,
    pub executor: &'a mut AutoregressiveLM,
}

impl Trainable for Bridge<'_> {
    type Bound = (Vec<Var>, Bound);

    fn bind(&self, tape: &mut Tape) -> Self::Bound {
        (self.projector.bind(tape), self.executor.net.bind(tape))
    }

    fn accumulate(&mut self, tape: &Tape, bound: &Self::Bound) {
        self.projector.params.accumulate(tape, &bound.0);
        self.executor.net.accumulate(tape, &bound.1);
    }

    fn stores(&self) -> Vec<&ParamStore> {
        let mut v = vec![&self.projector.params];
        v.extend(self.executor.net.lora.as_ref().map(|a| &a.params));
        v
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        let Transformer { lora, .. } = &mut self.executor.net;
        let mut v = vec![&mut self.projector.params];
        v.extend(lora.as_mut().map(|a| &mut a.params));
        v
    }
}

/// Per-sample answer NLL given projected plan rows.
pub fn latent_nll(bridge: &Bridge<'_>, tape: &mut Tape, b: &(Vec<Var>, Bound), ex: &LatentExample) -> Result<Var> {
    let plan = tape.leaf(&ex.plan);
    let projected = bridge.projector.forward(tape, &b.0, plan)?;
    let input = bridge.executor.embed_input(tape, &b.1, Some(projected), &ex.question)?;
    bridge.executor.nll(tape, &b.1, &input, &ex.answer)
}

/// Squared distance between projected rows and the executor's own token
/// embeddings of the plan the planner decoded.
pub fn latent_mse(bridge: &Bridge<'_>, tape: &mut Tape, b: &(Vec<Var>, Bound), ex: &LatentExample) -> Result<Var> {
    let plan = tape.leaf(&ex.plan);
    let projected = bridge.projector.forward(tape, &b.0, plan)?;
    let table = bridge.executor.net.params.tensor(Transformer::TOKEN_EMBEDDING);
    let d = table.cols();
    let mut rows = Vec::with_capacity(ex.plan_tokens.len() * d);
    for &t in &ex.plan_tokens {
        rows.extend_from_slice(table.row(t));
    }
    let targets = tape.constant(&[ex.plan_tokens.len(), d], rows)?;
    mse_rows(tape, projected, targets)
}

/// Fits the projector (and the adapter, when LoRA is on) on cached latents.
/// Returns once training is complete or `stop_after` optimizer steps have
/// been taken in total; progress lives in `state`.
pub fn train_projector(
    bridge: &mut Bridge<'_>,
    data: &[LatentExample],
    cfg: &TrainConfig,
    objective: Objective,
    state: &mut TrainState,
    stop_after: Option<u64>,
    on_epoch: &mut dyn FnMut(usize, f64) -> Control,
) -> Result<()> {
    ensure!(!data.is_empty(), Contract, "projector training set is empty");
    ensure!(
        bridge.executor.is_frozen(),
        Contract,
        "executor base weights must be frozen for projector training"
    );
    if cfg.lora_enabled {
        ensure!(bridge.executor.lora().is_some(), Contract, "LoRA enabled but no adapter attached");
    }
    let mut loss = |m: &Bridge<'_>, tape: &mut Tape, b: &(Vec<Var>, Bound), i: usize, _: &mut Rng| match objective {
        Objective::Nll => latent_nll(m, tape, b, &data[i]),
        Objective::Mse => latent_mse(m, tape, b, &data[i]),
    };
    fit(bridge, cfg, data.len(), state, stop_after, &mut loss, on_epoch)
}

/// Output of one latent-interface inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRun {
    pub answer: String,
    pub planner_tokens: usize,
    pub executor_tokens: usize,
}

/// Plan latents → projection → `[plan rows; question]` → greedy answer.
pub fn infer_latent(
    planner: &DdlmPlanner<'_>,
    projector: &Projector,
    executor: &AutoregressiveLM,
    question: &str,
    index: u64,
) -> Result<LatentRun> {
    check_dims(planner.model, projector, executor)?;
    let (tokens, prompt_len) = planner.run(question, index)?;
    let latent = planner.model.extract_latent(&tokens, prompt_len)?;
    let projected = projector.project(&latent.states)?;
    let q = executor_question(&planner.ctx, question)?;
    let out = executor.greedy_decode(Some(&projected), &q, planner.ctx.decode.answer_tokens)?;
    Ok(LatentRun {
        answer: planner.ctx.vocab.detokenize(&out.tokens),
        planner_tokens: latent.len(),
        executor_tokens: out.generated,
    })
}
