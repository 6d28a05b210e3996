//! Causal executor: teacher-forced likelihood over mixed embedding inputs,
//! greedy decoding, and optional low-rank adapters.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{argmax, Bound, LoraAdapter, ModelConfig, Transformer};
use crate::rng::Rng;
use crate::tensor::{Precision, Tape, Tensor, Var};
use crate::vocab::{TokenId, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Plan,
    Question,
}

/// Input rows for the executor, living on a tape. PLAN rows (if any) come
/// first, then the embedded question tokens.
#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    pub rows: Var,
    pub segments: Vec<Segment>,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn plan_rows(&self) -> usize {
        self.segments.iter().filter(|&&s| s == Segment::Plan).count()
    }
}

/// Result of greedy decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// Generated tokens, without the terminating EOS.
    pub tokens: Vec<TokenId>,
    /// Tokens emitted, counting the EOS if one was produced.
    pub generated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressiveLM {
    pub net: Transformer,
    pub id: String,
}

impl AutoregressiveLM {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            net: Transformer::new(config, true, rng)?,
            id: "arm".into(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn d_model(&self) -> usize {
        self.net.d_model()
    }

    pub fn freeze(&mut self) {
        self.net.params.set_trainable(false);
    }

    pub fn unfreeze(&mut self) {
        self.net.params.set_trainable(true);
    }

    pub fn is_frozen(&self) -> bool {
        !self.net.params.is_trainable()
    }

    /// Attaches fresh adapters of rank `rank`; base weights stay frozen.
    pub fn enable_lora(&mut self, rank: usize, alpha: f64, rng: &mut Rng) -> Result<()> {
        let adapter = LoraAdapter::new(&self.net.config, rank, alpha, rng)?;
        self.apply_lora(adapter)
    }

    pub fn apply_lora(&mut self, adapter: LoraAdapter) -> Result<()> {
        self.net.apply_lora(adapter)?;
        self.freeze();
        Ok(())
    }

    pub fn lora(&self) -> Option<&LoraAdapter> {
        self.net.lora.as_ref()
    }

    /// Concatenates optional PLAN rows with the embedded `question` tokens.
    pub fn embed_input(
        &self,
        tape: &mut Tape,
        b: &Bound,
        plan: Option<Var>,
        question: &[TokenId],
    ) -> Result<EmbeddingSequence> {
        ensure!(!question.is_empty(), Contract, "executor input has no question tokens");
        let q = self.net.embed_tokens(tape, b, question)?;
        let mut segments = Vec::new();
        let rows = match plan {
            Some(p) => {
                let shape = tape.shape(p).to_vec();
                ensure!(
                    shape.len() == 2 && shape[1] == self.d_model(),
                    Dimension,
                    "plan rows {:?} for executor width {}",
                    shape,
                    self.d_model()
                );
                segments.extend(std::iter::repeat_n(Segment::Plan, shape[0]));
                tape.concat_rows(&[p, q])?
            }
            None => q,
        };
        segments.extend(std::iter::repeat_n(Segment::Question, question.len()));
        Ok(EmbeddingSequence { rows, segments })
    }

    /// Teacher-forced `-log p(answer | input)`, summed over answer tokens.
    pub fn nll(&self, tape: &mut Tape, b: &Bound, input: &EmbeddingSequence, answer: &[TokenId]) -> Result<Var> {
        ensure!(!answer.is_empty(), Contract, "empty answer");
        let n = input.len();
        let rows = if answer.len() > 1 {
            let a = self.net.embed_tokens(tape, b, &answer[..answer.len() - 1])?;
            tape.concat_rows(&[input.rows, a])?
        } else {
            input.rows
        };
        let f = self.net.forward(tape, b, rows)?;
        let total = n + answer.len() - 1;
        let mut targets = vec![0; total];
        let mut mask = vec![false; total];
        for (j, &tok) in answer.iter().enumerate() {
            targets[n - 1 + j] = tok;
            mask[n - 1 + j] = true;
        }
        tape.softmax_cross_entropy(f.logits, &targets, &mask)
    }

    /// Argmax decoding until EOS or `max_new_tokens`.
    pub fn greedy_decode(&self, plan: Option<&Tensor>, question: &[TokenId], max_new_tokens: usize) -> Result<Decoded> {
        ensure!(max_new_tokens > 0, Config, "max_new_tokens must be positive");
        let mut out = Vec::new();
        let mut generated = 0;
        while generated < max_new_tokens {
            let mut tape = Tape::new(Precision::F64);
            let b = self.net.bind(&mut tape);
            let p = plan.map(|t| tape.leaf(t));
            let mut ids = question.to_vec();
            ids.extend_from_slice(&out);
            let input = self.embed_input(&mut tape, &b, p, &ids)?;
            let f = self.net.forward(&mut tape, &b, input.rows)?;
            let v = self.config().vocab_size;
            let logits = tape.value(f.logits);
            let last = &logits[(input.len() - 1) * v..];
            let tok = argmax(last);
            generated += 1;
            if tok == EOS {
                break;
            }
            out.push(tok);
        }
        Ok(Decoded {
            tokens: out,
            generated,
        })
    }
}
