//! Parameter bundles for the transformer building blocks shared by the
//! encoder and the membership inference model.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{init_normal, init_xavier, ParamId, ParamSet};
use super::tape::{Segment, Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// N(0, 0.02), the usual BERT-style initialisation.
    Normal002,
    Xavier,
}

fn weight<R: Rng>(rng: &mut R, init: Init, rows: usize, cols: usize) -> Tensor {
    match init {
        Init::Normal002 => init_normal(rng, rows, cols, 0.02),
        Init::Xavier => init_xavier(rng, rows, cols),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, input: usize, output: usize, init: Init) -> Self {
        let w = ps.add(format!("{name}.weight"), weight(rng, init, input, output), true);
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(1, output), false);
        Self { w, b }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        t.linear(x, self.w, self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::filled(1, width, 1.0), false);
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(1, width), false);
        Self { gamma, beta }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        t.layer_norm(x, self.gamma, self.beta)
    }
}

/// Post-norm transformer block: `x = LN(x + MHA(x))`, then optionally
/// `x = LN(x + W2·gelu(W1·x))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln_attn: LayerNorm,
    pub ffn: Option<(Linear, Linear, LayerNorm)>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
        ffn_width: Option<usize>,
        init: Init,
    ) -> Self {
        let q = Linear::new(ps, rng, &format!("{name}.attn.q"), width, width, init);
        let k = Linear::new(ps, rng, &format!("{name}.attn.k"), width, width, init);
        let v = Linear::new(ps, rng, &format!("{name}.attn.v"), width, width, init);
        let o = Linear::new(ps, rng, &format!("{name}.attn.o"), width, width, init);
        let ln_attn = LayerNorm::new(ps, &format!("{name}.attn.ln"), width);
        let ffn = ffn_width.map(|f| {
            (
                Linear::new(ps, rng, &format!("{name}.ffn.up"), width, f, init),
                Linear::new(ps, rng, &format!("{name}.ffn.down"), f, width, init),
                LayerNorm::new(ps, &format!("{name}.ffn.ln"), width),
            )
        });
        Self { heads, q, k, v, o, ln_attn, ffn }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var, segs: &Rc<Vec<Segment>>) -> Var {
        let q = self.q.forward(t, x);
        let k = self.k.forward(t, x);
        let v = self.v.forward(t, x);
        let a = t.attention(q, k, v, segs.clone(), self.heads);
        let a = self.o.forward(t, a);
        let h = t.add(x, a);
        let mut h = self.ln_attn.forward(t, h);
        if let Some((up, down, ln)) = &self.ffn {
            let f = up.forward(t, h);
            let f = t.gelu(f);
            let f = down.forward(t, f);
            let r = t.add(h, f);
            h = ln.forward(t, r);
        }
        h
    }
}
