#![allow(dead_code)]

pub mod models;

use std::path::{Path, PathBuf};

use ldarm::bridge::{latent_mse, latent_nll, Bridge, LatentExample};
use ldarm::config::ExperimentConfig;
use ldarm::executor::AutoregressiveLM;
use ldarm::nn::{ModelConfig, ParamStore};
use ldarm::projector::{Projector, ProjectorDims};
use ldarm::rng::{stream_rng, Rng};
use ldarm::tensor::{Precision, Tape, Tensor};
use ldarm::train::Trainable;
use ldarm::vocab::EOS;
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A checked-in configuration with `out_dir` moved to `out`.
pub fn config(name: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&configs_dir().join(name)).unwrap();
    c.out_dir = out.to_path_buf();
    c
}

/// `n` distinct (tensor, element) pairs spread over `store`.
pub fn random_coords(store: &ParamStore, n: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = store.iter().map(|(_, t)| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut flat: Vec<usize> = rand::seq::index::sample(rng, total, n.min(total)).into_vec();
    flat.sort_unstable();
    flat.into_iter()
        .map(|mut k| {
            let mut i = 0;
            while k >= sizes[i] {
                k -= sizes[i];
                i += 1;
            }
            (i, k)
        })
        .collect()
}

/// A random projector, executor and latent example small enough for
/// finite differences.
pub fn bridge_fixture(seed: u64) -> (Projector, AutoregressiveLM, LatentExample) {
    let mut rng = stream_rng(seed, "fixture");
    let v = 24;
    let cfg = ModelConfig {
        vocab_size: v,
        d_model: 12,
        n_layers: 2,
        n_heads: 2,
        d_ff: 20,
        max_len: 24,
    };
    let mut executor = AutoregressiveLM::new(cfg, &mut rng).unwrap();
    executor.freeze();
    let projector = Projector::new(ProjectorDims::scaled(16, 12), &mut rng);
    let plan = Tensor::from_fn(&[3, 16], |_| rng.gen_range(-1.5..1.5));
    let question: Vec<usize> = (0..6).map(|_| rng.gen_range(6..v)).collect();
    let mut answer: Vec<usize> = (0..2).map(|_| rng.gen_range(6..v)).collect();
    answer.push(EOS);
    let plan_tokens = (0..3).map(|_| rng.gen_range(6..v)).collect();
    let ex = LatentExample {
        plan,
        plan_tokens,
        question,
        answer,
    };
    (projector, executor, ex)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Nll,
    Mse,
}

pub fn bridge_loss(projector: &mut Projector, executor: &mut AutoregressiveLM, ex: &LatentExample, which: Loss) -> f64 {
    let bridge = Bridge { projector, executor };
    let mut tape = Tape::new(Precision::F64);
    let b = bridge.bind(&mut tape);
    let l = match which {
        Loss::Nll => latent_nll(&bridge, &mut tape, &b, ex),
        Loss::Mse => latent_mse(&bridge, &mut tape, &b, ex),
    }
    .unwrap();
    tape.value(l)[0]
}

/// Analytic projector gradients at `coords` and the worst relative error
/// against central differences.
pub fn projector_fd(
    projector: &mut Projector,
    executor: &mut AutoregressiveLM,
    ex: &LatentExample,
    which: Loss,
    coords: &[(usize, usize)],
) -> f64 {
    projector.params.zero_grad();
    {
        let mut bridge = Bridge {
            projector: &mut *projector,
            executor: &mut *executor,
        };
        let mut tape = Tape::new(Precision::F64);
        let b = bridge.bind(&mut tape);
        let l = match which {
            Loss::Nll => latent_nll(&bridge, &mut tape, &b, ex),
            Loss::Mse => latent_mse(&bridge, &mut tape, &b, ex),
        }
        .unwrap();
        tape.backward(l).unwrap();
        bridge.accumulate(&tape, &b);
    }
    let mut worst: f64 = 0.0;
    for &(i, j) in coords {
        let analytic = projector.params.tensor(i).grad.as_ref().map_or(0.0, |g| g[j]);
        let x = projector.params.tensor(i).data()[j];
        projector.params.tensor_mut(i).data_mut()[j] = x + FD_STEP;
        let up = bridge_loss(projector, executor, ex, which);
        projector.params.tensor_mut(i).data_mut()[j] = x - FD_STEP;
        let down = bridge_loss(projector, executor, ex, which);
        projector.params.tensor_mut(i).data_mut()[j] = x;
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}
