//! Small causal transformer decoder conditioned on adapted visual tokens and
//! an instruction.
//!
//! The conditioning sequence is `[visual; instruction; <bos>; y]`. Log
//! probabilities are read from the `<bos>` position onwards, so row `i`
//! predicts `y_{i+1}` and the last row predicts `<eos>`.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, add_block, add_layer_norm, add_linear};
use crate::params::{init_scaled, Bindings, Component, ParamStore};
use crate::tensor::Matrix;
use crate::text::{detokenize, split_tokens};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
/// Marks where visual tokens are spliced into a prompt; never embedded.
pub const IMAGE: &str = "<image>";
pub const UNK: &str = "<unk>";

const RESERVED: [&str; 5] = [PAD, BOS, EOS, IMAGE, UNK];

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const IMAGE_ID: usize = 3;
pub const UNK_ID: usize = 4;

/// Bijective token ↔ id table whose first entries are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Config(format!(
                    "vocabulary entry {i} must be the reserved token {r}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("vocabulary entry {i} is not a single token")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reserved tokens followed by every corpus token in sorted order.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = texts.into_iter().flat_map(split_tokens).collect();
        words.sort();
        words.dedup();
        words.retain(|w| !RESERVED.contains(&w.as_str()));
        let tokens = RESERVED.iter().map(|s| s.to_string()).chain(words).collect();
        Self::from_tokens(tokens).expect("corpus tokens are unique and whitespace-free")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_tokens(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect()
    }

    /// Reserved ids are dropped; the rest are detokenized.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id >= RESERVED.len())
            .filter_map(|&id| self.token(id))
            .collect();
        detokenize(&words)
    }

    pub fn check(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(Error::Vocab { id, size: self.len() }),
            None => Ok(()),
        }
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Embedding width `D'`.
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            width: 32,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "decoder heads {} must divide width {}",
                self.heads, self.width
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("decoder mlp_ratio must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn init_params(cfg: &DecoderConfig, vocab_size: usize, store: &mut ParamStore, rng: &mut impl Rng) {
    let comp = Component::Decoder;
    let d = cfg.width;
    store.insert("dec.embed", comp, init_scaled(rng, vocab_size, d, 0.5));
    for i in 0..cfg.depth {
        add_block(store, rng, &format!("dec.block{i}"), comp, d, d * cfg.mlp_ratio);
    }
    add_layer_norm(store, "dec.ln_f", comp, d);
    add_linear(store, rng, "dec.head", comp, d, vocab_size);
}

/// Fixed sinusoidal position table, `len × width`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Matrix {
    let mut m = Matrix::zeros(len, width);
    for pos in 0..len {
        for i in 0..width {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let angle = pos as f64 * freq;
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// One conditioning example: visual tokens `N' × D'`, instruction ids and
/// (for training) target ids without `<bos>`/`<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInput {
    pub visual: Matrix,
    pub instruction: Vec<usize>,
    pub target: Vec<usize>,
}

/// Teacher-forced targets: `y` followed by `<eos>`.
pub fn shifted_targets(target: &[usize]) -> Vec<usize> {
    target.iter().copied().chain([EOS_ID]).collect()
}

/// Log-probabilities of shape `(|y| + 1) × V`.
pub(crate) fn logprobs_on_tape(
    t: &mut Tape,
    b: &Bindings,
    cfg: &DecoderConfig,
    visual: Var,
    instruction: &[usize],
    target: &[usize],
) -> Result<Var> {
    let embed = b.var("dec.embed");
    let vocab = t.shape(embed).0;
    for ids in [instruction, target] {
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Vocab { id, size: vocab });
        }
    }
    let (n_visual, width) = t.shape(visual);
    if width != cfg.width {
        return Err(Error::Shape(format!(
            "visual tokens have width {width}, decoder expects {}",
            cfg.width
        )));
    }
    let ids: Vec<usize> = instruction
        .iter()
        .copied()
        .chain([BOS_ID])
        .chain(target.iter().copied())
        .collect();
    let text = t.gather_rows(embed, ids);
    let seq = t.concat_rows(&[visual, text]);
    let len = t.shape(seq).0;
    let pos = t.constant(sinusoidal_positions(len, width));
    let mut h = t.add(seq, pos);
    for i in 0..cfg.depth {
        let blk = b.block(&format!("dec.block{i}"));
        h = nn::block(t, &blk, h, cfg.heads, true, None);
    }
    let start = n_visual + instruction.len();
    let h = t.slice_rows(h, start, target.len() + 1);
    let h = nn::layer_norm(t, b.layer_norm("dec.ln_f"), h);
    let logits = nn::linear(t, b.linear("dec.head"), h);
    Ok(t.log_softmax(logits))
}

/// Row `i` holds `log p(· | visual, instruction, y_<i+1)`.
pub fn forward_teacher_forcing(
    cfg: &DecoderConfig,
    store: &ParamStore,
    input: &DecoderInput,
) -> Result<Matrix> {
    cfg.validate()?;
    let mut t = Tape::new();
    let b = store.bind(&mut t, |_| false);
    let v = t.constant(input.visual.clone());
    let lp = logprobs_on_tape(&mut t, &b, cfg, v, &input.instruction, &input.target)?;
    Ok(t.value(lp).clone())
}

/// Negative log-likelihood summed over each sample's non-padding positions
/// and averaged over the batch.
pub fn nll_loss(logprobs: &[Matrix], targets: &[Vec<usize>], pad: Option<usize>) -> Result<f64> {
    if logprobs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} log-probability tables for {} target sequences",
            logprobs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0;
    for (lp, tgt) in logprobs.iter().zip(targets) {
        if lp.rows() != tgt.len() {
            return Err(Error::Shape(format!(
                "{} positions for {} targets",
                lp.rows(),
                tgt.len()
            )));
        }
        for (i, &y) in tgt.iter().enumerate() {
            if Some(y) == pad {
                continue;
            }
            if y >= lp.cols() {
                return Err(Error::Vocab { id: y, size: lp.cols() });
            }
            total -= lp.get(i, y);
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::EmptyTarget);
    }
    Ok(total / logprobs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DecodeStrategy {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_len: usize,
    pub strategy: DecodeStrategy,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            max_len: 32,
            strategy: DecodeStrategy::Greedy,
        }
    }
}

/// Generated token ids, without the terminating `<eos>`.
pub fn generate_ids(
    cfg: &DecoderConfig,
    store: &ParamStore,
    visual: &Matrix,
    instruction: &[usize],
    params: &DecodeParams,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if params.max_len == 0 {
        return Err(Error::Config("max decode length must be at least 1".into()));
    }
    let mut rng = match params.strategy {
        DecodeStrategy::Greedy => None,
        DecodeStrategy::Sample { temperature, seed } => {
            if !(temperature > 0.0) {
                return Err(Error::Config("sampling temperature must be positive".into()));
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
    };
    let mut t = Tape::new();
    let b = store.bind(&mut t, |_| false);
    let v = t.constant(visual.clone());
    let mut out = Vec::new();
    while out.len() < params.max_len {
        let lp = logprobs_on_tape(&mut t, &b, cfg, v, instruction, &out)?;
        let row = t.value(lp).row(out.len()).to_vec();
        let next = match (&mut rng, params.strategy) {
            (Some(rng), DecodeStrategy::Sample { temperature, .. }) => sample(&row, temperature, rng),
            _ => argmax(&row),
        };
        if next == EOS_ID {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

pub fn generate(
    cfg: &DecoderConfig,
    store: &ParamStore,
    vocab: &Vocabulary,
    visual: &Matrix,
    instruction: &[usize],
    params: &DecodeParams,
) -> Result<String> {
    let ids = generate_ids(cfg, store, visual, instruction, params)?;
    Ok(vocab.decode(&ids))
}

/// First index of the maximum.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample(logprobs: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let scaled: Vec<f64> = logprobs.iter().map(|l| l / temperature).collect();
    let top = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}
