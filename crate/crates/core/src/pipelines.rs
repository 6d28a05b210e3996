//! Planner → executor pipelines over text or latent plans, plus scoring.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::executor::AutoregressiveLM;
use crate::planner::{Decoding, DiffusionLM, UnmaskingSchedule};
use crate::projector::Projector;
use crate::prompts::Prompts;
use crate::rng::{stream, sub_rng};
use crate::vocab::{TokenId, Vocabulary, BOS, SEP};

/// Identifier of the scoring rule; bump when [`extract_answer`] changes.
pub const EXTRACTION_RULE: &str = "last-number-or-answer-tag/v1";

/// `[BOS] text [SEP]`: how every prompt is fed to either model.
pub fn encode_prompt(vocab: &Vocabulary, text: &str) -> Result<Vec<TokenId>> {
    let mut ids = vec![BOS];
    ids.extend(vocab.tokenize(text)?);
    ids.push(SEP);
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineId {
    #[serde(rename = "arm-only")]
    ArmOnly,
    #[serde(rename = "arm->arm")]
    ArmToArm,
    #[serde(rename = "ddlm->arm:text")]
    DdlmToArmText,
    #[serde(rename = "ddlm->arm:latent")]
    DdlmToArmLatent,
    #[serde(rename = "ddlm->ddlm")]
    DdlmToDdlm,
}

impl PipelineId {
    pub const ALL: [PipelineId; 5] = [
        PipelineId::ArmOnly,
        PipelineId::ArmToArm,
        PipelineId::DdlmToArmText,
        PipelineId::DdlmToArmLatent,
        PipelineId::DdlmToDdlm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineId::ArmOnly => "arm-only",
            PipelineId::ArmToArm => "arm->arm",
            PipelineId::DdlmToArmText => "ddlm->arm:text",
            PipelineId::DdlmToArmLatent => "ddlm->arm:latent",
            PipelineId::DdlmToDdlm => "ddlm->ddlm",
        }
    }

    pub fn config(self) -> PipelineConfig {
        let (planner, executor, interface) = match self {
            PipelineId::ArmOnly => (AgentKind::None, AgentKind::Arm, Interface::Text),
            PipelineId::ArmToArm => (AgentKind::Arm, AgentKind::Arm, Interface::Text),
            PipelineId::DdlmToArmText => (AgentKind::Ddlm, AgentKind::Arm, Interface::Text),
            PipelineId::DdlmToArmLatent => (AgentKind::Ddlm, AgentKind::Arm, Interface::Latent),
            PipelineId::DdlmToDdlm => (AgentKind::Ddlm, AgentKind::Ddlm, Interface::Text),
        };
        PipelineConfig {
            planner,
            executor,
            interface,
        }
    }
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    None,
    Arm,
    Ddlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interface {
    Text,
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub planner: AgentKind,
    pub executor: AgentKind,
    pub interface: Interface,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.executor != AgentKind::None, Config, "a pipeline needs an executor");
        if self.interface == Interface::Latent {
            ensure!(
                self.planner == AgentKind::Ddlm && self.executor == AgentKind::Arm,
                Config,
                "the latent interface only connects a diffusion planner to an autoregressive executor"
            );
        }
        Ok(())
    }
}

/// Budgets shared by every pipeline in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Plan positions the diffusion planner fills (text or latent).
    pub plan_length: usize,
    /// Denoising steps; `None` means one per four positions.
    pub steps: Option<usize>,
    pub decoding: Decoding,
    /// Token budget of an autoregressive planner.
    pub arm_plan_tokens: usize,
    /// Token budget for the answer, for either executor.
    pub answer_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            plan_length: 32,
            steps: None,
            decoding: Decoding::Argmax,
            arm_plan_tokens: 16,
            answer_tokens: 4,
        }
    }
}

impl DecodeConfig {
    pub fn schedule(&self, len: usize) -> Result<UnmaskingSchedule> {
        match self.steps {
            Some(s) => UnmaskingSchedule::even(len, s),
            None => UnmaskingSchedule::default_for(len),
        }
    }
}

/// One pipeline applied to one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub pipeline: PipelineId,
    /// Transmitted plan; empty for the latent interface and for no planner.
    pub plan: String,
    pub answer: String,
    pub gold: String,
    pub correct: bool,
    pub planner_tokens: usize,
    pub executor_tokens: usize,
    pub wall_time_ms: f64,
}

/// Produces a plan text from a question.
pub trait TextPlanner {
    /// Plan text and the number of tokens generated for it.
    fn plan(&self, question: &str, index: u64) -> Result<(String, usize)>;
}

/// Produces an answer from a plan text and a question.
pub trait TextExecutor {
    fn execute(&self, plan: &str, question: &str, index: u64) -> Result<(String, usize)>;
}

/// Shared pieces every agent adapter needs.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub vocab: &'a Vocabulary,
    pub prompts: &'a Prompts,
    pub decode: DecodeConfig,
    pub seed: u64,
}

pub struct DdlmPlanner<'a> {
    pub model: &'a DiffusionLM,
    pub ctx: Context<'a>,
}

impl DdlmPlanner<'_> {
    /// Final sequence and prompt length of the planner's denoising run.
    pub fn run(&self, question: &str, index: u64) -> Result<(Vec<TokenId>, usize)> {
        let prompt = encode_prompt(self.ctx.vocab, &self.ctx.prompts.planner_prompt(question)?)?;
        let len = self.ctx.decode.plan_length;
        let schedule = self.ctx.decode.schedule(len)?;
        let mut rng = sub_rng(self.ctx.seed, stream::DECODE, index);
        let trace = self.model.sample(&prompt, len, &schedule, self.ctx.decode.decoding, &mut rng)?;
        Ok((trace.tokens, trace.prompt_len))
    }
}

impl TextPlanner for DdlmPlanner<'_> {
    fn plan(&self, question: &str, index: u64) -> Result<(String, usize)> {
        let (tokens, prompt_len) = self.run(question, index)?;
        let text = self.ctx.vocab.decode_until_eos(&tokens[prompt_len..]);
        Ok((text, self.ctx.decode.plan_length))
    }
}

pub struct ArmPlanner<'a> {
    pub model: &'a AutoregressiveLM,
    pub ctx: Context<'a>,
}

impl TextPlanner for ArmPlanner<'_> {
    fn plan(&self, question: &str, _index: u64) -> Result<(String, usize)> {
        let prompt = encode_prompt(self.ctx.vocab, &self.ctx.prompts.planner_prompt(question)?)?;
        let out = self.model.greedy_decode(None, &prompt, self.ctx.decode.arm_plan_tokens)?;
        Ok((self.ctx.vocab.detokenize(&out.tokens), out.generated))
    }
}

pub struct ArmExecutor<'a> {
    pub model: &'a AutoregressiveLM,
    pub ctx: Context<'a>,
}

impl TextExecutor for ArmExecutor<'_> {
    fn execute(&self, plan: &str, question: &str, _index: u64) -> Result<(String, usize)> {
        let prompt = encode_prompt(self.ctx.vocab, &self.ctx.prompts.executor_prompt(plan, question)?)?;
        let out = self.model.greedy_decode(None, &prompt, self.ctx.decode.answer_tokens)?;
        Ok((self.ctx.vocab.detokenize(&out.tokens), out.generated))
    }
}

pub struct DdlmExecutor<'a> {
    pub model: &'a DiffusionLM,
    pub ctx: Context<'a>,
}

impl TextExecutor for DdlmExecutor<'_> {
    fn execute(&self, plan: &str, question: &str, index: u64) -> Result<(String, usize)> {
        let prompt = encode_prompt(self.ctx.vocab, &self.ctx.prompts.executor_prompt(plan, question)?)?;
        let len = self.ctx.decode.answer_tokens;
        let schedule = UnmaskingSchedule::even(len, len)?;
        let mut rng = sub_rng(self.ctx.seed, "decode/executor", index);
        let trace = self.model.sample(&prompt, len, &schedule, self.ctx.decode.decoding, &mut rng)?;
        Ok((self.ctx.vocab.decode_until_eos(trace.plan()), len))
    }
}

/// Plan in text, re-encoded by the executor.
pub fn run_text_space(
    planner: Option<&dyn TextPlanner>,
    executor: &dyn TextExecutor,
    question: &str,
    index: u64,
) -> Result<(String, String, usize, usize)> {
    let (plan, planner_tokens) = match planner {
        Some(p) => p.plan(question, index)?,
        None => (String::new(), 0),
    };
    let (answer, executor_tokens) = executor.execute(&plan, question, index)?;
    Ok((plan, answer, planner_tokens, executor_tokens))
}

/// Plan as projected hidden rows; no text is produced for it.
pub fn run_latent_space(
    planner: &DdlmPlanner<'_>,
    projector: &Projector,
    executor: &AutoregressiveLM,
    question: &str,
    index: u64,
) -> Result<(String, usize, usize)> {
    let r = crate::bridge::infer_latent(planner, projector, executor, question, index)?;
    Ok((r.answer, r.planner_tokens, r.executor_tokens))
}

/// Every agent a set of pipelines may need.
pub struct Agents<'a> {
    pub ctx: Context<'a>,
    pub ddlm: Option<&'a DiffusionLM>,
    pub arm: Option<&'a AutoregressiveLM>,
    /// Executor for the latent interface when it differs from `arm`, e.g.
    /// with a LoRA adapter trained alongside the projector.
    pub latent_arm: Option<&'a AutoregressiveLM>,
    pub projector: Option<&'a Projector>,
}

impl Agents<'_> {
    pub fn run(&self, pipeline: PipelineId, sample_id: &str, index: u64, question: &str, gold: &str) -> Result<RunRecord> {
        let cfg = pipeline.config();
        cfg.validate()?;
        let start = Instant::now();
        let missing = |what: &str| Error::Config(format!("pipeline {pipeline} needs {what}"));
        let ctx = self.ctx;
        let (plan, answer, planner_tokens, executor_tokens) = match cfg.interface {
            Interface::Latent => {
                let ddlm = self.ddlm.ok_or_else(|| missing("a diffusion planner"))?;
                let arm = self
                    .latent_arm
                    .or(self.arm)
                    .ok_or_else(|| missing("an autoregressive executor"))?;
                let proj = self.projector.ok_or_else(|| missing("a projector"))?;
                let planner = DdlmPlanner { model: ddlm, ctx };
                let (a, p, e) = run_latent_space(&planner, proj, arm, question, index)?;
                (String::new(), a, p, e)
            }
            Interface::Text => {
                let ddlm_planner;
                let arm_planner;
                let planner: Option<&dyn TextPlanner> = match cfg.planner {
                    AgentKind::None => None,
                    AgentKind::Arm => {
                        arm_planner = ArmPlanner {
                            model: self.arm.ok_or_else(|| missing("an autoregressive planner"))?,
                            ctx,
                        };
                        Some(&arm_planner)
                    }
                    AgentKind::Ddlm => {
                        ddlm_planner = DdlmPlanner {
                            model: self.ddlm.ok_or_else(|| missing("a diffusion planner"))?,
                            ctx,
                        };
                        Some(&ddlm_planner)
                    }
                };
                let arm_exec;
                let ddlm_exec;
                let executor: &dyn TextExecutor = match cfg.executor {
                    AgentKind::Ddlm => {
                        ddlm_exec = DdlmExecutor {
                            model: self.ddlm.ok_or_else(|| missing("a diffusion executor"))?,
                            ctx,
                        };
                        &ddlm_exec
                    }
                    _ => {
                        arm_exec = ArmExecutor {
                            model: self.arm.ok_or_else(|| missing("an autoregressive executor"))?,
                            ctx,
                        };
                        &arm_exec
                    }
                };
                run_text_space(planner, executor, question, index)?
            }
        };
        Ok(RunRecord {
            sample_id: sample_id.to_string(),
            pipeline,
            plan,
            correct: extract_and_score(&answer, gold),
            answer,
            gold: gold.to_string(),
            planner_tokens,
            executor_tokens,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// The scored span of an answer: the value after a trailing `Answer:` tag if
/// present, otherwise the last number in the text.
pub fn extract_answer(text: &str) -> Option<String> {
    if let Some(pos) = text.rfind("Answer:") {
        let tail = text[pos + "Answer:".len()..].trim();
        if !tail.is_empty() && !tail.contains(char::is_whitespace) {
            return Some(normalize(tail));
        }
    }
    last_number(text).map(|s| normalize(&s))
}

fn last_number(text: &str) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut last = None;
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let mut start = i;
            if start > 0 && chars[start - 1] == '-' {
                start -= 1;
            }
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            last = Some(chars[start..i].iter().collect());
        } else {
            i += 1;
        }
    }
    last
}

/// Trims whitespace and a trailing period; canonicalizes plain numbers.
pub fn normalize(s: &str) -> String {
    let s = s.trim().trim_end_matches('.').trim();
    match s.parse::<f64>() {
        Ok(v) if s.chars().all(|c| c.is_ascii_digit() || c == '-' || c == '.') => {
            if v.fract() == 0.0 && v.abs() < 1e15 {
                format!("{}", v as i64)
            } else {
                format!("{v}")
            }
        }
        _ => s.to_string(),
    }
}

pub fn extract_and_score(answer_text: &str, gold: &str) -> bool {
    extract_answer(answer_text).is_some_and(|a| a == normalize(gold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoring_rule() {
        assert!(extract_and_score("the answer is 12", "12"));
        assert!(!extract_and_score("", "12"));
        assert!(!extract_and_score("12 or maybe 13", "12"));
        assert!(extract_and_score("so... Answer: 7", "7"));
        assert!(extract_and_score("Answer: 07.", "7"));
        assert!(extract_and_score("-3", "-3"));
        assert!(!extract_and_score("A", "9"));
        assert!(extract_and_score("x = 2.50", "2.5"));
    }

    #[test]
    fn latent_requires_ddlm_to_arm() {
        for id in PipelineId::ALL {
            assert!(id.config().validate().is_ok());
        }
        let bad = PipelineConfig {
            planner: AgentKind::Arm,
            executor: AgentKind::Arm,
            interface: Interface::Latent,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pipeline_ids_roundtrip() {
        for id in PipelineId::ALL {
            assert_eq!(id.as_str().parse::<PipelineId>().unwrap(), id);
            let j = serde_json::to_string(&id).unwrap();
            assert_eq!(j, format!("\"{}\"", id.as_str()));
        }
    }
}
