//! Bottleneck MLP from planner hidden space to executor embedding space.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{fan_in_uniform, ones, ParamStore, NORM_EPS};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorDims {
    pub d_in: usize,
    pub d_bottleneck: usize,
    pub d_mid: usize,
    pub d_out: usize,
}

impl ProjectorDims {
    /// `d1 → d1/4 → 2·d2 → d2`.
    pub fn scaled(d1: usize, d2: usize) -> Self {
        Self {
            d_in: d1,
            d_bottleneck: (d1 / 4).max(1),
            d_mid: 2 * d2,
            d_out: d2,
        }
    }
}

/// `rmsnorm(W3·gelu(W2·gelu(W1·h + b1) + b2) + b3)`, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub dims: ProjectorDims,
    pub params: ParamStore,
}

impl Projector {
    pub fn new(dims: ProjectorDims, rng: &mut Rng) -> Self {
        let ProjectorDims {
            d_in,
            d_bottleneck,
            d_mid,
            d_out,
        } = dims;
        let mut p = ParamStore::new();
        for (i, (a, b)) in [(d_in, d_bottleneck), (d_bottleneck, d_mid), (d_mid, d_out)]
            .into_iter()
            .enumerate()
        {
            p.push(format!("w{}", i + 1), fan_in_uniform(rng, a, b));
            let bound = 1.0 / (a as f64).sqrt();
            p.push(format!("b{}", i + 1), crate::nn::uniform(rng, &[b], bound));
        }
        p.push("gain", ones(&[d_out]));
        p.set_trainable(true);
        Self { dims, params: p }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.bind(tape)
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], plan: Var) -> Result<Var> {
        let shape = tape.shape(plan);
        ensure!(
            shape.len() == 2 && shape[1] == self.dims.d_in,
            Dimension,
            "plan rows {:?} for projector input width {}",
            shape,
            self.dims.d_in
        );
        let mut h = plan;
        for layer in 0..3 {
            let z = tape.matmul(h, vars[2 * layer])?;
            h = tape.add_row(z, vars[2 * layer + 1])?;
            if layer < 2 {
                h = tape.gelu(h);
            }
        }
        tape.rmsnorm(h, vars[6], NORM_EPS)
    }

    /// Projects a latent plan outside any training loop.
    pub fn project(&self, plan: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(crate::tensor::Precision::F64);
        let vars = self.bind(&mut tape);
        let p = tape.leaf(plan);
        let out = self.forward(&mut tape, &vars, p)?;
        Ok(tape.to_tensor(out))
    }

    /// Mean over rows of the squared distance to `targets`.
    pub fn mse_align(&self, tape: &mut Tape, vars: &[Var], plan: Var, targets: Var) -> Result<Var> {
        let y = self.forward(tape, vars, plan)?;
        mse_rows(tape, y, targets)
    }
}

/// Squared-distance loss on already projected rows; the closed form used by
/// the alignment ablation.
pub fn mse_rows(tape: &mut Tape, projected: Var, targets: Var) -> Result<Var> {
    ensure!(
        tape.shape(projected) == tape.shape(targets),
        Dimension,
        "projected rows {:?} against targets {:?}",
        tape.shape(projected),
        tape.shape(targets)
    );
    let rows = tape.shape(projected)[0] as f64;
    let diff = tape.sub(projected, targets)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / rows))
}
