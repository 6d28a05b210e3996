use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).with_grad(true)
}

/// Central-difference oracle, independent of the tape's backward rules: it
/// only ever evaluates the forward pass.
fn check_grads(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut tape = Tape::new(Precision::F64);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let eval = |inputs: &[Tensor]| {
        let mut t = Tape::new(Precision::F64);
        let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x)).collect();
        let l = build(&mut t, &vs);
        t.value(l)[0]
    };
    let h = 1e-5;
    for (ti, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[ti][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-4, "input {ti} coord {i}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 3], &mut rng);
    let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let mut tape = Tape::new(Precision::F64);
    let (ve, va) = (tape.leaf(&eye), tape.leaf(&a));
    let out = tape.matmul(ve, va).unwrap();
    assert_eq!(tape.value(out), a.data());

    let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
    let (vx, vy) = (tape.leaf(&x), tape.leaf(&y));
    let out = tape.matmul(vx, vy).unwrap();
    assert_eq!(tape.value(out), &[2.0, 4.0]);
    assert_eq!(tape.shape(out), &[2, 1]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut tape = Tape::new(Precision::F64);
    let a = tape.leaf(&Tensor::zeros(&[2, 3]));
    let b = tape.leaf(&Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient_of_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [random(&[4, 5], &mut rng), random(&[5, 3], &mut rng)];
    check_grads(&inputs, |t, v| {
        let c = t.matmul(v[0], v[1]).unwrap();
        t.sum(c)
    });
}

#[test]
fn gelu_values_and_gradient() {
    let mut tape = Tape::new(Precision::F64);
    let x = tape.leaf(&Tensor::new(vec![3], vec![0.0, 1.0, 10.0]).unwrap());
    let y = tape.gelu(x);
    let v = tape.value(y);
    assert_eq!(v[0], 0.0);
    // 1·Φ(1) with Φ(1) = 0.841344746...
    assert!((v[1] - 0.841_345).abs() < 1e-5);
    assert!((v[2] / 10.0 - 1.0).abs() < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [Tensor::from_fn(&[16], |_| rng.gen_range(-3.0..3.0)).with_grad(true)];
    check_grads(&inputs, |t, v| {
        let y = t.gelu(v[0]);
        let y2 = t.mul(y, y).unwrap();
        t.sum(y2)
    });
}

#[test]
fn cross_entropy_uniform_and_saturated() {
    let mut tape = Tape::new(Precision::F64);
    let logits = tape.leaf(&Tensor::zeros(&[8, 4]));
    let loss = tape.softmax_cross_entropy(logits, &[0, 1, 2, 3, 0, 1, 2, 3], &[true; 8]).unwrap();
    // 8·ln 4
    assert!((tape.value(loss)[0] - 11.090_355).abs() < 1e-5);

    let mut sat = Tensor::zeros(&[2, 4]);
    sat.data_mut()[2] = 1e4;
    sat.data_mut()[4 + 1] = 1e4;
    let l = tape.leaf(&sat);
    let loss = tape.softmax_cross_entropy(l, &[2, 1], &[true, true]).unwrap();
    assert!(tape.value(loss)[0].abs() < 1e-12);

    let loss = tape.softmax_cross_entropy(l, &[2, 1], &[false, false]).unwrap();
    assert_eq!(tape.value(loss)[0], 0.0);
}

#[test]
fn cross_entropy_rejects_out_of_vocab_target() {
    let mut tape = Tape::new(Precision::F64);
    let logits = tape.leaf(&Tensor::zeros(&[2, 4]));
    let err = tape.softmax_cross_entropy(logits, &[0, 4], &[true, true]);
    assert!(matches!(err, Err(Error::Index(_))));
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [random(&[5, 7], &mut rng)];
    check_grads(&inputs, |t, v| {
        t.softmax_cross_entropy(v[0], &[1, 6, 0, 3, 3], &[true, false, true, true, false])
            .unwrap()
    });
}

#[test]
fn rmsnorm_cases() {
    let mut tape = Tape::new(Precision::F64);
    let gain = tape.leaf(&Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
    let x = tape.leaf(&Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
    let y = tape.rmsnorm(x, gain, 0.0).unwrap();
    // rms = sqrt(12.5)
    assert!((tape.value(y)[0] - 0.848_528).abs() < 1e-5);
    assert!((tape.value(y)[1] - 1.131_371).abs() < 1e-5);

    let zero = tape.leaf(&Tensor::zeros(&[2]));
    let y = tape.rmsnorm(zero, gain, 1e-6).unwrap();
    assert_eq!(tape.value(y), &[0.0, 0.0]);

    let scaled = tape.leaf(&Tensor::new(vec![2], vec![30.0, 40.0]).unwrap());
    let y1 = tape.rmsnorm(x, gain, 0.0).unwrap();
    let y2 = tape.rmsnorm(scaled, gain, 0.0).unwrap();
    for (a, b) in tape.value(y1).iter().zip(tape.value(y2)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rmsnorm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = [random(&[3, 6], &mut rng), random(&[6], &mut rng)];
    let w = Tensor::from_fn(&[3, 6], |i| (i as f64 * 0.37).sin());
    check_grads(&inputs, |t, v| {
        let y = t.rmsnorm(v[0], v[1], 1e-5).unwrap();
        let wv = t.leaf(&w);
        let p = t.mul(y, wv).unwrap();
        t.sum(p)
    });
}

#[test]
fn softmax_rows_sum_to_one_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[4, 9], &mut rng);
    let mut tape = Tape::new(Precision::F64);
    let v = tape.leaf(&x);
    let y = tape.softmax(v);
    for row in tape.value(y).chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let w = Tensor::from_fn(&[4, 9], |i| (i as f64).cos());
    check_grads(&[x], |t, v| {
        let y = t.softmax(v[0]);
        let wv = t.leaf(&w);
        let p = t.mul(y, wv).unwrap();
        t.sum(p)
    });
}

#[test]
fn attention_gradients_bidirectional_and_causal() {
    for causal in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(7 + causal as u64);
        let inputs = [
            random(&[5, 8], &mut rng),
            random(&[5, 8], &mut rng),
            random(&[5, 8], &mut rng),
        ];
        let w = Tensor::from_fn(&[5, 8], |i| ((i * 7) % 5) as f64 - 2.0);
        check_grads(&inputs, |t, v| {
            let o = t.attention(v[0], v[1], v[2], 2, causal).unwrap();
            let wv = t.leaf(&w);
            let p = t.mul(o, wv).unwrap();
            t.sum(p)
        });
    }
}

#[test]
fn structural_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [
        random(&[6, 4], &mut rng),
        random(&[2, 4], &mut rng),
        random(&[4], &mut rng),
    ];
    check_grads(&inputs, |t, v| {
        let e = t.embedding(v[0], &[1, 5, 1, 0]).unwrap();
        let c = t.concat_rows(&[v[1], e]).unwrap();
        let b = t.add_row(c, v[2]).unwrap();
        let s = t.slice_rows(b, 1, 4).unwrap();
        let tr = t.transpose(s).unwrap();
        let m = t.matmul(tr, s).unwrap();
        let sc = t.scale(m, 0.3);
        let d = t.sub(sc, tr).ok().unwrap_or(sc);
        let sq = t.mul(d, d).unwrap();
        t.mean(sq)
    });
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs = [
        random(&[3, 5], &mut rng),
        random(&[5, 7], &mut rng),
        random(&[7], &mut rng),
        random(&[7, 4], &mut rng),
    ];
    check_grads(&inputs, |t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let h = t.add_row(h, v[2]).unwrap();
        let h = t.gelu(h);
        let o = t.matmul(h, v[3]).unwrap();
        t.softmax_cross_entropy(o, &[0, 3, 2], &[true; 3]).unwrap()
    });
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut tape = Tape::new(Precision::F64);
    let x = tape.leaf(&Tensor::zeros(&[2, 3, 2]).with_grad(true));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 12]);
}

#[test]
fn frozen_leaf_gets_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frozen = Tensor::from_fn(&[3, 3], |_| rng.gen_range(-1.0..1.0));
    let before = frozen.clone();
    let x = random(&[2, 3], &mut rng);
    let mut tape = Tape::new(Precision::F64);
    let (vx, vw) = (tape.leaf(&x), tape.leaf(&frozen));
    let y = tape.matmul(vx, vw).unwrap();
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert!(tape.grad(vw).is_none());
    assert!(tape.grad(vx).is_some());
    assert_eq!(frozen, before);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new(Precision::F64);
    let x = tape.leaf(&Tensor::zeros(&[2]).with_grad(true));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn fan_out_accumulates_additively() {
    let mut tape = Tape::new(Precision::F64);
    let x = tape.leaf(&Tensor::new(vec![1], vec![3.0]).unwrap().with_grad(true));
    let y = tape.add(x, x).unwrap();
    let z = tape.mul(y, x).unwrap();
    tape.backward(z).unwrap();
    // z = 2x², dz/dx = 4x
    assert_eq!(tape.grad(x).unwrap(), &[12.0]);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random(&[6, 8], &mut rng);
        let b = random(&[6, 8], &mut rng);
        let mut tape = Tape::new(Precision::F32);
        let (va, vb) = (tape.leaf(&a), tape.leaf(&b));
        let o = tape.attention(va, vb, vb, 4, true).unwrap();
        let g = tape.gelu(o);
        let l = tape.sum(g);
        tape.backward(l).unwrap();
        (tape.value(o).to_vec(), tape.grad(va).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
