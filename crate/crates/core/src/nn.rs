//! Layer building blocks shared by the encoders, the fusion module and the
//! decoder. Every layer is a function over tape handles, so the same code
//! path serves inference, training and the standalone operations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::params::{init_uniform, Bindings, Component, ParamStore};
use crate::tensor::Matrix;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, t: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Gelu => t.gelu(x),
            Activation::Relu => t.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Affine map `x · weight + bias` with `weight: in × out`, `bias: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Matrix) -> Self {
        assert_eq!(bias.shape(), (1, weight.cols()), "bias must be 1 x out");
        Self { weight, bias }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self::new(Matrix::zeros(input, output), Matrix::zeros(1, output))
    }

    pub fn identity(width: usize) -> Self {
        Self::new(Matrix::identity(width), Matrix::zeros(1, width))
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn on_tape(&self, t: &mut Tape) -> LinearVars {
        LinearVars {
            weight: t.constant(self.weight.clone()),
            bias: t.constant(self.bias.clone()),
        }
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Self {
        Self::new(
            store.get(&format!("{name}.weight")).clone(),
            store.get(&format!("{name}.bias")).clone(),
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormVars {
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1: LayerNormVars,
    pub q: LinearVars,
    pub k: LinearVars,
    pub v: LinearVars,
    pub o: LinearVars,
    pub ln2: LayerNormVars,
    pub fc1: LinearVars,
    pub fc2: LinearVars,
}

impl Bindings {
    pub fn linear(&self, name: &str) -> LinearVars {
        LinearVars {
            weight: self.var(&format!("{name}.weight")),
            bias: self.var(&format!("{name}.bias")),
        }
    }

    pub fn layer_norm(&self, name: &str) -> LayerNormVars {
        LayerNormVars {
            gamma: self.var(&format!("{name}.gamma")),
            beta: self.var(&format!("{name}.beta")),
        }
    }

    pub fn block(&self, name: &str) -> BlockVars {
        BlockVars {
            ln1: self.layer_norm(&format!("{name}.ln1")),
            q: self.linear(&format!("{name}.attn.q")),
            k: self.linear(&format!("{name}.attn.k")),
            v: self.linear(&format!("{name}.attn.v")),
            o: self.linear(&format!("{name}.attn.o")),
            ln2: self.layer_norm(&format!("{name}.ln2")),
            fc1: self.linear(&format!("{name}.mlp.fc1")),
            fc2: self.linear(&format!("{name}.mlp.fc2")),
        }
    }
}

pub fn add_linear(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    component: Component,
    input: usize,
    output: usize,
) {
    store.insert(
        format!("{name}.weight"),
        component,
        init_uniform(rng, input, output, input),
    );
    store.insert(format!("{name}.bias"), component, Matrix::zeros(1, output));
}

pub fn add_layer_norm(store: &mut ParamStore, name: &str, component: Component, width: usize) {
    store.insert(format!("{name}.gamma"), component, Matrix::filled(1, width, 1.0));
    store.insert(format!("{name}.beta"), component, Matrix::zeros(1, width));
}

pub fn add_block(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    component: Component,
    width: usize,
    hidden: usize,
) {
    add_layer_norm(store, &format!("{name}.ln1"), component, width);
    for proj in ["q", "k", "v", "o"] {
        add_linear(store, rng, &format!("{name}.attn.{proj}"), component, width, width);
    }
    add_layer_norm(store, &format!("{name}.ln2"), component, width);
    add_linear(store, rng, &format!("{name}.mlp.fc1"), component, width, hidden);
    add_linear(store, rng, &format!("{name}.mlp.fc2"), component, hidden, width);
}

pub fn linear(t: &mut Tape, l: LinearVars, x: Var) -> Var {
    let y = t.matmul(x, l.weight);
    t.add_row(y, l.bias)
}

pub fn layer_norm(t: &mut Tape, ln: LayerNormVars, x: Var) -> Var {
    t.layer_norm(x, ln.gamma, ln.beta, LN_EPS)
}

/// Scaled dot-product attention for one head over all rows of `q`, `k`, `v`.
fn attend(t: &mut Tape, q: Var, k: Var, v: Var, causal: bool) -> Var {
    let dh = t.shape(q).1;
    let s = t.matmul_nt(q, k);
    let s = t.scale(s, 1.0 / (dh as f64).sqrt());
    let p = t.softmax(s, causal);
    t.matmul(p, v)
}

/// Multi-head self-attention. With `windows`, attention is restricted to
/// each listed group of token indices (the groups must partition the rows).
pub fn attention(
    t: &mut Tape,
    blk: &BlockVars,
    x: Var,
    heads: usize,
    causal: bool,
    windows: Option<&[Vec<usize>]>,
) -> Var {
    let (n, width) = t.shape(x);
    assert!(heads > 0 && width % heads == 0, "heads must divide width");
    let dh = width / heads;
    let q = linear(t, blk.q, x);
    let k = linear(t, blk.k, x);
    let v = linear(t, blk.v, x);

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                t.slice_cols(q, h * dh, dh),
                t.slice_cols(k, h * dh, dh),
                t.slice_cols(v, h * dh, dh),
            )
        };
        let out = match windows {
            None => attend(t, qh, kh, vh, causal),
            Some(groups) => {
                let mut parts = Vec::with_capacity(groups.len());
                let mut order = Vec::with_capacity(n);
                for g in groups {
                    let qw = t.gather_rows(qh, g.clone());
                    let kw = t.gather_rows(kh, g.clone());
                    let vw = t.gather_rows(vh, g.clone());
                    parts.push(attend(t, qw, kw, vw, causal));
                    order.extend_from_slice(g);
                }
                let stacked = t.concat_rows(&parts);
                let mut inverse = vec![0; n];
                for (pos, &row) in order.iter().enumerate() {
                    inverse[row] = pos;
                }
                t.gather_rows(stacked, inverse)
            }
        };
        head_outputs.push(out);
    }
    let merged = if heads == 1 {
        head_outputs[0]
    } else {
        t.concat_cols(&head_outputs)
    };
    linear(t, blk.o, merged)
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
pub fn block(
    t: &mut Tape,
    blk: &BlockVars,
    x: Var,
    heads: usize,
    causal: bool,
    windows: Option<&[Vec<usize>]>,
) -> Var {
    let h = layer_norm(t, blk.ln1, x);
    let a = attention(t, blk, h, heads, causal, windows);
    let x = t.add(x, a);
    let h = layer_norm(t, blk.ln2, x);
    let h = linear(t, blk.fc1, h);
    let h = t.gelu(h);
    let h = linear(t, blk.fc2, h);
    t.add(x, h)
}
