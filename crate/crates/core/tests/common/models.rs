//! Small trained models shared by integration tests.

use ldarm::executor::AutoregressiveLM;
use ldarm::experiment::{train_executor, train_planner, DenoiseExample, LmExample};
use ldarm::nn::ModelConfig;
use ldarm::pipelines::encode_prompt;
use ldarm::planner::DiffusionLM;
use ldarm::rng::stream_rng;
use ldarm::train::{Control, TrainConfig, TrainState};
use ldarm::vocab::{TokenId, Vocabulary, EOS};

/// Digit strings such as `7 3 9`; the model must reproduce them.
pub fn digit_strings(n: usize, seed: u64) -> Vec<String> {
    use rand::Rng as _;
    let mut rng = stream_rng(seed, "digits");
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..=4);
            (0..len).map(|_| rng.gen_range(0..=9u8).to_string()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

pub fn small_config(vocab: &Vocabulary, d: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        d_model: d,
        n_layers: 2,
        n_heads: 4,
        d_ff: 2 * d,
        max_len: 32,
    }
}

pub fn fast_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        grad_accum: 1,
        lr: 3e-3,
        warmup_steps: 20,
        ..Default::default()
    }
}

/// Region of `len` positions holding `text` and EOS padding.
pub fn region(vocab: &Vocabulary, text: &str, len: usize) -> Vec<TokenId> {
    let mut ids = vocab.tokenize(text).unwrap();
    ids.resize(len, EOS);
    ids
}

pub const COPY_REGION: usize = 8;

/// A diffusion model trained to fill the region with a copy of the prompt.
pub fn copy_ddlm(vocab: &Vocabulary) -> DiffusionLM {
    let corpus: Vec<DenoiseExample> = digit_strings(1500, 11)
        .iter()
        .map(|s| {
            let mut tokens = encode_prompt(vocab, s).unwrap();
            let start = tokens.len();
            tokens.extend(region(vocab, s, COPY_REGION));
            DenoiseExample { tokens, start }
        })
        .collect();
    let mut m = DiffusionLM::new(small_config(vocab, 32), &mut stream_rng(11, "init")).unwrap();
    let cfg = fast_train(8);
    let mut state = TrainState::new(&m, &cfg, corpus.len());
    train_planner(&mut m, &corpus, &cfg, &mut state, &mut |_, _| Control::Continue).unwrap();
    m
}

/// An autoregressive model trained to echo its prompt.
pub fn copy_arm(vocab: &Vocabulary) -> AutoregressiveLM {
    let corpus: Vec<LmExample> = digit_strings(1500, 12)
        .iter()
        .map(|s| {
            let mut target = vocab.tokenize(s).unwrap();
            target.push(EOS);
            LmExample {
                prefix: encode_prompt(vocab, s).unwrap(),
                target,
            }
        })
        .collect();
    let mut m = AutoregressiveLM::new(small_config(vocab, 32), &mut stream_rng(12, "init")).unwrap();
    let cfg = fast_train(6);
    let mut state = TrainState::new(&m, &cfg, corpus.len());
    train_executor(&mut m, &corpus, &cfg, &mut state, &mut |_, _| Control::Continue).unwrap();
    m
}
