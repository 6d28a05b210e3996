//! Autoregressive executor: loss oracle and a trained copy task.

mod common;

use common::models::copy_arm;
use ldarm::executor::AutoregressiveLM;
use ldarm::nn::ModelConfig;
use ldarm::pipelines::encode_prompt;
use ldarm::rng::stream_rng;
use ldarm::tensor::{Precision, Tape, Tensor};
use ldarm::vocab::Vocabulary;

#[test]
fn uniform_logits_give_answer_length_times_log_vocab() {
    let cfg = ModelConfig {
        vocab_size: 4,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        max_len: 12,
    };
    let mut m = AutoregressiveLM::new(cfg, &mut stream_rng(0, "init")).unwrap();
    let i = m.net.params.iter().position(|(n, _)| n == "head").unwrap();
    m.net.params.tensor_mut(i).data_mut().fill(0.0);
    let mut tape = Tape::new(Precision::F64);
    let b = m.net.bind(&mut tape);
    let plan = tape.leaf(&Tensor::from_fn(&[2, 8], |k| k as f64 * 0.1));
    let input = m.embed_input(&mut tape, &b, Some(plan), &[2, 0, 3]).unwrap();
    let l = m.nll(&mut tape, &b, &input, &[0, 2, 3]).unwrap();
    let value = tape.value(l)[0];
    assert!((value - 4.158883).abs() < 1e-6, "{value}");
}

#[test]
fn trained_copy_model_echoes_its_prompt() {
    let vocab = Vocabulary::char_level();
    let m = copy_arm(&vocab);
    let out = m.greedy_decode(None, &encode_prompt(&vocab, "7 3 9").unwrap(), 8).unwrap();
    assert_eq!(vocab.detokenize(&out.tokens), "7 3 9");
    assert_eq!(out.generated, 6, "five symbols and EOS");
}
