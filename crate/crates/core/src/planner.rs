//! Masked diffusion planner: forward masking, the denoising loss, the
//! confidence-ordered unmasking sampler and latent-plan extraction.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{Bound, ModelConfig, Transformer};
use crate::rng::Rng;
use crate::tensor::{softmax_in_place, Precision, Tape, Tensor, Var};
use crate::vocab::{TokenId, MASK};

/// A sequence after forward masking.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedState {
    pub tokens: Vec<TokenId>,
    pub mask_positions: Vec<bool>,
    pub t: f64,
}

impl MaskedState {
    pub fn masked_count(&self) -> usize {
        self.mask_positions.iter().filter(|&&m| m).count()
    }
}

/// Masks each position with probability `t`, independently.
pub fn mask_sequence(x: &[TokenId], t: f64, rng: &mut Rng) -> Result<MaskedState> {
    mask_from(x, 0, t, rng)
}

/// Like [`mask_sequence`] but positions before `start` are never masked.
pub fn mask_from(x: &[TokenId], start: usize, t: f64, rng: &mut Rng) -> Result<MaskedState> {
    ensure!((0.0..=1.0).contains(&t), Contract, "mask ratio {t} outside [0, 1]");
    ensure!(!x.contains(&MASK), Contract, "clean sequence already contains MASK");
    let mut tokens = x.to_vec();
    let mut mask_positions = vec![false; x.len()];
    for i in start..x.len() {
        // gen::<f64>() is in [0, 1), so t = 0 never masks and t = 1 always does.
        if rng.gen::<f64>() < t {
            tokens[i] = MASK;
            mask_positions[i] = true;
        }
    }
    Ok(MaskedState {
        tokens,
        mask_positions,
        t,
    })
}

/// How a committed token is chosen at a masked position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decoding {
    #[default]
    Argmax,
    Sample { temperature: f64 },
}

/// Number of positions committed at each denoising step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmaskingSchedule {
    counts: Vec<usize>,
}

impl UnmaskingSchedule {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        ensure!(!counts.is_empty(), Config, "schedule has no steps");
        ensure!(counts.iter().all(|&c| c > 0), Config, "schedule {counts:?} has an empty step");
        Ok(Self { counts })
    }

    /// `ceil(remaining / steps_remaining)` positions per step. `steps` is
    /// clamped to `1..=len` so every step commits something.
    pub fn even(len: usize, steps: usize) -> Result<Self> {
        ensure!(len > 0, Config, "plan length must be positive");
        let steps = steps.clamp(1, len);
        let mut remaining = len;
        let counts = (0..steps)
            .map(|s| {
                let c = remaining.div_ceil(steps - s);
                remaining -= c;
                c
            })
            .collect();
        Self::new(counts)
    }

    /// The default of one step per four positions.
    pub fn default_for(len: usize) -> Result<Self> {
        Self::even(len, (len / 4).max(1))
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn steps(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Output of [`DiffusionLM::sample`]: the final sequence and the state after
/// every step (the first entry is the fully masked start).
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub tokens: Vec<TokenId>,
    pub prompt_len: usize,
    pub steps: Vec<Vec<TokenId>>,
}

impl SampleTrace {
    pub fn plan(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }
}

/// Hidden rows at the plan positions of a completed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPlan {
    pub states: Tensor,
    pub source: String,
}

impl LatentPlan {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.states.cols()
    }
}

/// Bidirectional transformer trained to denoise masked sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionLM {
    pub net: Transformer,
    pub id: String,
}

impl DiffusionLM {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            net: Transformer::new(config, false, rng)?,
            id: "ddlm".into(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
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

    /// Summed cross-entropy at masked positions of `z`, against `x`.
    pub fn masked_loss(&self, tape: &mut Tape, b: &Bound, x: &[TokenId], z: &MaskedState) -> Result<Var> {
        ensure!(x.len() == z.tokens.len(), Dimension, "clean and masked lengths differ");
        let f = self.net.forward_tokens(tape, b, &z.tokens)?;
        tape.softmax_cross_entropy(f.logits, x, &z.mask_positions)
    }

    /// Denoising loss with `t ~ U[0, 1]` drawn once for the sequence.
    pub fn diffusion_loss(&self, tape: &mut Tape, b: &Bound, x: &[TokenId], rng: &mut Rng) -> Result<Var> {
        let t = rng.gen::<f64>();
        self.diffusion_loss_at(tape, b, x, 0, t, rng)
    }

    /// Denoising loss at a fixed ratio, masking only positions `>= start`.
    pub fn diffusion_loss_at(
        &self,
        tape: &mut Tape,
        b: &Bound,
        x: &[TokenId],
        start: usize,
        t: f64,
        rng: &mut Rng,
    ) -> Result<Var> {
        let z = mask_from(x, start, t, rng)?;
        self.masked_loss(tape, b, x, &z)
    }

    /// Appends `plan_length` masks to `prompt` and unmasks them following
    /// `schedule`, most confident positions first.
    pub fn sample(
        &self,
        prompt: &[TokenId],
        plan_length: usize,
        schedule: &UnmaskingSchedule,
        decoding: Decoding,
        rng: &mut Rng,
    ) -> Result<SampleTrace> {
        ensure!(plan_length > 0, Config, "plan length must be positive");
        ensure!(
            schedule.total() == plan_length,
            Config,
            "schedule commits {} positions for a plan of {plan_length}",
            schedule.total()
        );
        let mut tokens = prompt.to_vec();
        tokens.extend(std::iter::repeat_n(MASK, plan_length));
        let mut steps = vec![tokens.clone()];
        for &count in schedule.counts() {
            let mut tape = Tape::new(Precision::F64);
            let b = self.net.bind(&mut tape);
            let f = self.net.forward_tokens(&mut tape, &b, &tokens)?;
            let logits = tape.value(f.logits);
            let v = self.config().vocab_size;
            let mut candidates: Vec<(usize, TokenId, f64)> = Vec::new();
            for (pos, _) in tokens.iter().enumerate().filter(|(_, &t)| t == MASK) {
                let mut row = logits[pos * v..(pos + 1) * v].to_vec();
                row[MASK] = f64::NEG_INFINITY;
                let (tok, conf) = choose(&mut row, decoding, rng)?;
                candidates.push((pos, tok, conf));
            }
            // Highest confidence first; ties go to the leftmost position.
            candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            for &(pos, tok, _) in candidates.iter().take(count) {
                tokens[pos] = tok;
            }
            steps.push(tokens.clone());
        }
        debug_assert!(!tokens.contains(&MASK));
        Ok(SampleTrace {
            tokens,
            prompt_len: prompt.len(),
            steps,
        })
    }

    /// One more forward pass over the completed sequence; returns the final
    /// hidden rows at positions `prompt_len..`.
    pub fn extract_latent(&self, final_state: &[TokenId], prompt_len: usize) -> Result<LatentPlan> {
        ensure!(!final_state.contains(&MASK), Contract, "sequence still contains MASK");
        ensure!(
            prompt_len < final_state.len(),
            Contract,
            "no plan positions after a prompt of {prompt_len}"
        );
        let mut tape = Tape::new(Precision::F64);
        let b = self.net.bind(&mut tape);
        let f = self.net.forward_tokens(&mut tape, &b, final_state)?;
        let d = self.config().d_model;
        let rows = final_state.len() - prompt_len;
        let states = Tensor::new(vec![rows, d], tape.value(f.hidden)[prompt_len * d..].to_vec())?;
        Ok(LatentPlan {
            states,
            source: self.id.clone(),
        })
    }
}

fn choose(row: &mut [f64], decoding: Decoding, rng: &mut Rng) -> Result<(TokenId, f64)> {
    match decoding {
        Decoding::Argmax => {
            softmax_in_place(row);
            let tok = crate::nn::argmax(row);
            Ok((tok, row[tok]))
        }
        Decoding::Sample { temperature } => {
            ensure!(temperature > 0.0, Config, "temperature must be positive");
            for x in row.iter_mut() {
                *x /= temperature;
            }
            softmax_in_place(row);
            let u = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut tok = row.len() - 1;
            for (i, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    tok = i;
                    break;
                }
            }
            Ok((tok, row[tok]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::Error;

    fn tiny(vocab: usize) -> DiffusionLM {
        let cfg = ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 16,
        };
        DiffusionLM::new(cfg, &mut stream_rng(0, "init")).unwrap()
    }

    #[test]
    fn degenerate_ratios() {
        let mut rng = stream_rng(1, "masking");
        let x = vec![7; 50];
        assert_eq!(mask_sequence(&x, 0.0, &mut rng).unwrap().masked_count(), 0);
        assert_eq!(mask_sequence(&x, 1.0, &mut rng).unwrap().masked_count(), 50);
        assert!(mask_sequence(&[MASK], 0.5, &mut rng).is_err());
        assert!(mask_sequence(&x, 1.5, &mut rng).is_err());
    }

    #[test]
    fn mask_positions_match_tokens() {
        let mut rng = stream_rng(2, "masking");
        let z = mask_sequence(&[6, 7, 8, 9, 10, 11], 0.5, &mut rng).unwrap();
        for (t, m) in z.tokens.iter().zip(&z.mask_positions) {
            assert_eq!(*t == MASK, *m);
        }
    }

    #[test]
    fn half_ratio_concentrates() {
        let mut rng = stream_rng(3, "masking");
        let x = vec![6; 10_000];
        let mut total = 0usize;
        for trial in 0..1000 {
            let c = mask_sequence(&x, 0.5, &mut rng).unwrap().masked_count();
            if trial < 10 {
                assert!((4800..=5200).contains(&c), "{c}");
            }
            total += c;
        }
        let mean = total as f64 / 1000.0;
        assert!((mean - 5000.0).abs() < 50.0, "{mean}");
    }

    #[test]
    fn schedules() {
        assert_eq!(UnmaskingSchedule::even(10, 4).unwrap().counts(), &[3, 3, 2, 2]);
        assert_eq!(UnmaskingSchedule::default_for(32).unwrap().steps(), 8);
        assert_eq!(UnmaskingSchedule::even(3, 9).unwrap().counts(), &[1, 1, 1]);
        assert!(UnmaskingSchedule::new(vec![2, 0]).is_err());
    }

    #[test]
    fn sample_rejects_mismatched_schedule() {
        let m = tiny(12);
        let s = UnmaskingSchedule::even(4, 2).unwrap();
        let r = m.sample(&[6], 5, &s, Decoding::Argmax, &mut stream_rng(0, "decode"));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn single_step_commits_everything_and_keeps_prompt() {
        let m = tiny(12);
        let s = UnmaskingSchedule::even(6, 1).unwrap();
        let tr = m.sample(&[6, 7], 6, &s, Decoding::Argmax, &mut stream_rng(0, "decode")).unwrap();
        assert_eq!(tr.steps.len(), 2);
        assert!(!tr.tokens.contains(&MASK));
        assert_eq!(&tr.tokens[..2], &[6, 7]);
    }

    #[test]
    fn latent_shape_and_residual_mask() {
        let m = tiny(12);
        let p = m.extract_latent(&[6, 7, 8, 9, 10], 2).unwrap();
        assert_eq!(p.states.shape(), &[3, 8]);
        assert!(matches!(m.extract_latent(&[6, MASK, 8], 1), Err(Error::Contract(_))));
    }
}
