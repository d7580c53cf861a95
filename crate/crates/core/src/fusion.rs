//! Reconciles the mask-aware features with the high-resolution grids and
//! maps the result into the decoder's embedding space.
//!
//! Three fusion variants share one input contract: channel concatenation
//! (the default), a cross-source self-attention block, and appending the
//! three sources along the token axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, add_linear, Activation, Linear, LinearVars};
use crate::params::{Bindings, Component, ParamStore};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    #[default]
    Channel,
    SelfAttention,
    SequenceAppend,
}

/// Corner-aligned bilinear resampling of a row-major `src_h × src_w` grid to
/// `dst_h × dst_w`, as a `(dst_h·dst_w) × (src_h·src_w)` matrix.
pub fn bilinear_matrix(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Matrix {
    let ys = axis_weights(src_h, dst_h);
    let xs = axis_weights(src_w, dst_w);
    let mut m = Matrix::zeros(dst_h * dst_w, src_h * src_w);
    for (dy, wy) in ys.iter().enumerate() {
        for (dx, wx) in xs.iter().enumerate() {
            let row = m.row_mut(dy * dst_w + dx);
            for &(sy, a) in wy {
                for &(sx, b) in wx {
                    row[sy * src_w + sx] += a * b;
                }
            }
        }
    }
    m
}

/// Per destination index, the (source index, weight) taps along one axis.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|d| {
            if src == 1 || dst == 1 {
                return vec![(0, 1.0)];
            }
            let pos = d as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 2);
            let frac = pos - lo as f64;
            vec![(lo, 1.0 - frac), (lo + 1, frac)]
        })
        .collect()
}

fn square_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

/// Drops the class token of `F_M` (`N + 1` rows), reshapes the rest to its
/// square grid and resamples it to `target_grid × target_grid`.
pub fn project_mask_features(f_m: &Matrix, target_grid: usize) -> Result<Matrix> {
    let (_, interp) = projection_matrix(f_m.rows(), target_grid)?;
    Ok(interp.matmul(&f_m.slice_rows(1, f_m.rows() - 1)))
}

/// Source grid side and the interpolation matrix for an `N + 1`-token input.
pub(crate) fn projection_matrix(tokens_with_class: usize, target_grid: usize) -> Result<(usize, Matrix)> {
    if tokens_with_class < 2 || target_grid == 0 {
        return Err(Error::Shape(format!(
            "cannot project {tokens_with_class} tokens onto a {target_grid}-grid"
        )));
    }
    let n = tokens_with_class - 1;
    let side = square_side(n)
        .ok_or_else(|| Error::Shape(format!("{n} patch tokens do not form a square grid")))?;
    Ok((side, bilinear_matrix(side, side, target_grid, target_grid)))
}

/// Channel-concatenated features with layout `[F_M' | F_HR1 | F_HR2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub features: Matrix,
    pub widths: [usize; 3],
}

impl FusedFeatures {
    pub fn tokens(&self) -> usize {
        self.features.rows()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// The block belonging to source `i` (0 = mask-aware, 1, 2 = HR).
    pub fn source(&self, i: usize) -> Matrix {
        let start = self.widths[..i].iter().sum();
        self.features.slice_cols(start, self.widths[i])
    }
}

fn check_tokens(parts: [&Matrix; 3]) -> Result<()> {
    let n = parts[0].rows();
    if parts.iter().any(|p| p.rows() != n) {
        return Err(Error::Shape(format!(
            "token counts differ: {} / {} / {}",
            parts[0].rows(),
            parts[1].rows(),
            parts[2].rows()
        )));
    }
    Ok(())
}

pub fn fuse_channels(f_m: &Matrix, f_hr1: &Matrix, f_hr2: &Matrix) -> Result<FusedFeatures> {
    check_tokens([f_m, f_hr1, f_hr2])?;
    let widths = [f_m.cols(), f_hr1.cols(), f_hr2.cols()];
    let total: usize = widths.iter().sum();
    let mut out = Matrix::zeros(f_m.rows(), total);
    for r in 0..f_m.rows() {
        let row = out.row_mut(r);
        row[..widths[0]].copy_from_slice(f_m.row(r));
        row[widths[0]..widths[0] + widths[1]].copy_from_slice(f_hr1.row(r));
        row[widths[0] + widths[1]..].copy_from_slice(f_hr2.row(r));
    }
    Ok(FusedFeatures {
        features: out,
        widths,
    })
}

/// Token-axis concatenation `[F_M'; F_HR1; F_HR2]` of equal-width inputs.
pub fn fuse_sequence_append(f_m: &Matrix, f_hr1: &Matrix, f_hr2: &Matrix) -> Result<Matrix> {
    if f_hr1.cols() != f_m.cols() || f_hr2.cols() != f_m.cols() {
        return Err(Error::Shape(format!(
            "sequence append needs a common width, got {} / {} / {}",
            f_m.cols(),
            f_hr1.cols(),
            f_hr2.cols()
        )));
    }
    let mut data = Vec::with_capacity(f_m.len() + f_hr1.len() + f_hr2.len());
    for m in [f_m, f_hr1, f_hr2] {
        data.extend_from_slice(m.data());
    }
    Ok(Matrix::from_vec(
        f_m.rows() + f_hr1.rows() + f_hr2.rows(),
        f_m.cols(),
        data,
    ))
}

/// Cross-source attention: each token's three source vectors are projected
/// to a shared width, attend to one another, and the attended values are
/// averaged over sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionParams {
    pub sources: [Linear; 3],
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl SelfAttentionParams {
    pub fn from_store(store: &ParamStore) -> Self {
        Self {
            sources: [0, 1, 2].map(|i| Linear::from_store(store, &format!("fusion.src{i}"))),
            q: Linear::from_store(store, "fusion.q"),
            k: Linear::from_store(store, "fusion.k"),
            v: Linear::from_store(store, "fusion.v"),
        }
    }
}

pub fn fuse_self_attention(
    f_m: &Matrix,
    f_hr1: &Matrix,
    f_hr2: &Matrix,
    params: &SelfAttentionParams,
) -> Result<Matrix> {
    check_tokens([f_m, f_hr1, f_hr2])?;
    let d = params.q.input_dim();
    for (i, (src, l)) in [f_m, f_hr1, f_hr2].iter().zip(&params.sources).enumerate() {
        if l.input_dim() != src.cols() || l.output_dim() != d {
            return Err(Error::Shape(format!(
                "source {i} projection is {}x{}, input has {} channels, shared width {d}",
                l.input_dim(),
                l.output_dim(),
                src.cols()
            )));
        }
    }
    for l in [&params.q, &params.k, &params.v] {
        if l.input_dim() != d || l.output_dim() != d {
            return Err(Error::Shape(format!("attention projections must be {d}x{d}")));
        }
    }
    let mut t = Tape::new();
    let xs = [f_m, f_hr1, f_hr2].map(|m| t.constant(m.clone()));
    let sources = [0, 1, 2].map(|i| params.sources[i].on_tape(&mut t));
    let (q, k, v) = (params.q.on_tape(&mut t), params.k.on_tape(&mut t), params.v.on_tape(&mut t));
    let out = self_attention_on_tape(&mut t, xs, sources, q, k, v);
    Ok(t.value(out).clone())
}

pub(crate) fn self_attention_on_tape(
    t: &mut Tape,
    xs: [Var; 3],
    sources: [LinearVars; 3],
    q: LinearVars,
    k: LinearVars,
    v: LinearVars,
) -> Var {
    let proj: Vec<Var> = (0..3).map(|i| nn::linear(t, sources[i], xs[i])).collect();
    let d = t.shape(proj[0]).1;
    let qs: Vec<Var> = proj.iter().map(|&p| nn::linear(t, q, p)).collect();
    let ks: Vec<Var> = proj.iter().map(|&p| nn::linear(t, k, p)).collect();
    let vs: Vec<Var> = proj.iter().map(|&p| nn::linear(t, v, p)).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let mut outs = Vec::with_capacity(3);
    for &qs_s in &qs {
        let scores: Vec<Var> = ks
            .iter()
            .map(|&k_t| {
                let prod = t.mul(qs_s, k_t);
                let dot = t.row_sum(prod);
                t.scale(dot, scale)
            })
            .collect();
        let scores = t.concat_cols(&scores);
        let weights = t.softmax(scores, false);
        let mut acc: Option<Var> = None;
        for (j, &v_t) in vs.iter().enumerate() {
            let w = t.slice_cols(weights, j, 1);
            let term = t.mul_col(v_t, w);
            acc = Some(match acc {
                None => term,
                Some(a) => t.add(a, term),
            });
        }
        outs.push(acc.expect("three sources"));
    }
    let sum01 = t.add(outs[0], outs[1]);
    let sum = t.add(sum01, outs[2]);
    t.scale(sum, 1.0 / 3.0)
}

/// Two affine maps with one elementwise nonlinearity between them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub fc1: Linear,
    pub activation: Activation,
    pub fc2: Linear,
}

impl AdapterParams {
    pub fn validate(&self) -> Result<()> {
        if self.fc1.output_dim() != self.fc2.input_dim() {
            return Err(Error::Shape(format!(
                "adapter hidden widths do not chain: {} vs {}",
                self.fc1.output_dim(),
                self.fc2.input_dim()
            )));
        }
        Ok(())
    }

    pub fn from_store(store: &ParamStore, activation: Activation) -> Self {
        Self {
            fc1: Linear::from_store(store, "adapter.fc1"),
            activation,
            fc2: Linear::from_store(store, "adapter.fc2"),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.output_dim()
    }
}

/// Tokenwise adapter application: `N × C_fusion → N × D'`.
pub fn adapt(features: &Matrix, adapter: &AdapterParams) -> Result<Matrix> {
    adapter.validate()?;
    if features.cols() != adapter.input_dim() {
        return Err(Error::Shape(format!(
            "adapter expects {} channels, got {}",
            adapter.input_dim(),
            features.cols()
        )));
    }
    let mut t = Tape::new();
    let x = t.constant(features.clone());
    let fc1 = adapter.fc1.on_tape(&mut t);
    let fc2 = adapter.fc2.on_tape(&mut t);
    let y = adapter_on_tape(&mut t, fc1, adapter.activation, fc2, x);
    Ok(t.value(y).clone())
}

pub(crate) fn adapter_on_tape(
    t: &mut Tape,
    fc1: LinearVars,
    activation: Activation,
    fc2: LinearVars,
    x: Var,
) -> Var {
    let h = nn::linear(t, fc1, x);
    let h = activation.apply(t, h);
    nn::linear(t, fc2, h)
}

/// Channel width entering the adapter for each fusion variant.
pub fn fusion_width(kind: FusionKind, widths: [usize; 3], shared: usize) -> usize {
    match kind {
        FusionKind::Channel => widths.iter().sum(),
        FusionKind::SelfAttention | FusionKind::SequenceAppend => shared,
    }
}

/// Registers fusion and adapter parameters, all under the adapter component.
pub fn init_params(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    kind: FusionKind,
    widths: [usize; 3],
    shared: usize,
    hidden: usize,
    output: usize,
) {
    let comp = Component::Adapter;
    match kind {
        FusionKind::Channel => {}
        FusionKind::SelfAttention => {
            for (i, &w) in widths.iter().enumerate() {
                add_linear(store, rng, &format!("fusion.src{i}"), comp, w, shared);
            }
            for p in ["q", "k", "v"] {
                add_linear(store, rng, &format!("fusion.{p}"), comp, shared, shared);
            }
        }
        FusionKind::SequenceAppend => {
            for (i, &w) in widths.iter().enumerate() {
                add_linear(store, rng, &format!("fusion.seq{i}"), comp, w, shared);
            }
        }
    }
    let input = fusion_width(kind, widths, shared);
    add_linear(store, rng, "adapter.fc1", comp, input, hidden);
    add_linear(store, rng, "adapter.fc2", comp, hidden, output);
}

/// Fuses the three aligned sources on the tape according to `kind`.
pub(crate) fn fuse_on_tape(t: &mut Tape, b: &Bindings, kind: FusionKind, xs: [Var; 3]) -> Var {
    match kind {
        FusionKind::Channel => t.concat_cols(&xs),
        FusionKind::SelfAttention => self_attention_on_tape(
            t,
            xs,
            [0, 1, 2].map(|i| b.linear(&format!("fusion.src{i}"))),
            b.linear("fusion.q"),
            b.linear("fusion.k"),
            b.linear("fusion.v"),
        ),
        FusionKind::SequenceAppend => {
            let parts: Vec<Var> = (0..3)
                .map(|i| nn::linear(t, b.linear(&format!("fusion.seq{i}")), xs[i]))
                .collect();
            t.concat_rows(&parts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook bilinear sample of a grid at fractional coordinates.
    fn sample(grid: &[Vec<f64>], y: f64, x: f64) -> f64 {
        let h = grid.len();
        let w = grid[0].len();
        let y0 = (y.floor() as usize).min(h.saturating_sub(2));
        let x0 = (x.floor() as usize).min(w.saturating_sub(2));
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let top = grid[y0][x0] * (1.0 - fx) + grid[y0][x1] * fx;
        let bottom = grid[y1][x0] * (1.0 - fx) + grid[y1][x1] * fx;
        top * (1.0 - fy) + bottom * fy
    }

    #[test]
    fn two_by_two_to_four_by_four() {
        // 1 2
        // 3 4  sampled at thirds along each axis.
        let f = Matrix::from_rows(&[vec![9.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let out = project_mask_features(&f, 4).unwrap();
        let third = 1.0 / 3.0;
        let expected = |y: f64, x: f64| 1.0 + x + 2.0 * y;
        for gy in 0..4 {
            for gx in 0..4 {
                let v = out.get(gy * 4 + gx, 0);
                assert!((v - expected(gy as f64 * third, gx as f64 * third)).abs() < 1e-12);
            }
        }
        assert_eq!(out.get(0, 0), 1.0);
        assert_eq!(out.get(15, 0), 4.0);
    }

    #[test]
    fn same_grid_is_identity_after_class_removal() {
        let f = Matrix::from_vec(10, 2, (0..20).map(|v| v as f64).collect());
        let out = project_mask_features(&f, 3).unwrap();
        assert_eq!(out, f.slice_rows(1, 9));
    }

    #[test]
    fn non_square_token_count_is_rejected() {
        let f = Matrix::zeros(6, 2);
        assert!(matches!(project_mask_features(&f, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_oracle_on_random_grid() {
        let src: Vec<Vec<f64>> = (0..3)
            .map(|y| (0..5).map(|x| ((y * 7 + x * 3) % 11) as f64 - 4.5).collect())
            .collect();
        let m = bilinear_matrix(3, 5, 4, 7);
        let flat = Matrix::from_vec(15, 1, src.iter().flatten().copied().collect());
        let out = m.matmul(&flat);
        for dy in 0..4 {
            for dx in 0..7 {
                let y = dy as f64 * 2.0 / 3.0;
                let x = dx as f64 * 4.0 / 6.0;
                assert!((out.get(dy * 7 + dx, 0) - sample(&src, y, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_fusion_examples() {
        let a = Matrix::from_rows(&[vec![1.0], vec![4.0]]);
        let b = Matrix::from_rows(&[vec![2.0], vec![5.0]]);
        let c = Matrix::from_rows(&[vec![3.0], vec![6.0]]);
        let f = fuse_channels(&a, &b, &c).unwrap();
        assert_eq!(f.features.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(f.features.row(1), &[4.0, 5.0, 6.0]);
        let z = fuse_channels(&a, &Matrix::zeros(2, 1), &c).unwrap();
        assert_eq!(z.source(1), Matrix::zeros(2, 1));
        assert_eq!(z.source(2), c);
        assert!(fuse_channels(&a, &Matrix::zeros(3, 1), &c).is_err());
    }

    #[test]
    fn sequence_append_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let b = Matrix::from_rows(&[vec![3.0, 4.0]]);
        let c = Matrix::from_rows(&[vec![5.0, 6.0]]);
        let s = fuse_sequence_append(&a, &b, &c).unwrap();
        assert_eq!(s, Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        assert!(fuse_sequence_append(&a, &Matrix::zeros(1, 3), &c).is_err());
    }

    fn sa_params(d: usize, widths: [usize; 3], seed: u64) -> SelfAttentionParams {
        let mut v = seed as f64;
        let mut next = move || {
            v = (v * 7.3 + 1.1) % 2.0 - 1.0;
            0.5 * v
        };
        let mut rnd = |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| next()).collect());
        SelfAttentionParams {
            sources: widths.map(|w| Linear::new(rnd(w, d), rnd(1, d))),
            q: Linear::new(rnd(d, d), rnd(1, d)),
            k: Linear::new(rnd(d, d), rnd(1, d)),
            v: Linear::new(rnd(d, d), rnd(1, d)),
        }
    }

    fn affine(x: &[f64], l: &Linear) -> Vec<f64> {
        (0..l.output_dim())
            .map(|j| l.bias.get(0, j) + x.iter().enumerate().map(|(i, v)| v * l.weight.get(i, j)).sum::<f64>())
            .collect()
    }

    #[test]
    fn self_attention_matches_reference_loops() {
        let widths = [2, 3, 1];
        let p = sa_params(4, widths, 3);
        let inputs: Vec<Matrix> = widths
            .iter()
            .enumerate()
            .map(|(s, &w)| Matrix::from_vec(5, w, (0..5 * w).map(|k| ((k * 13 + s * 5) % 7) as f64 * 0.3 - 1.0).collect()))
            .collect();
        let out = fuse_self_attention(&inputs[0], &inputs[1], &inputs[2], &p).unwrap();
        for n in 0..5 {
            let x: Vec<Vec<f64>> = (0..3).map(|s| affine(inputs[s].row(n), &p.sources[s])).collect();
            let q: Vec<Vec<f64>> = x.iter().map(|v| affine(v, &p.q)).collect();
            let k: Vec<Vec<f64>> = x.iter().map(|v| affine(v, &p.k)).collect();
            let v: Vec<Vec<f64>> = x.iter().map(|v| affine(v, &p.v)).collect();
            let mut expected = vec![0.0; 4];
            for s in 0..3 {
                let logits: Vec<f64> = (0..3)
                    .map(|t| q[s].iter().zip(&k[t]).map(|(a, b)| a * b).sum::<f64>() / 2.0)
                    .collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
                for t in 0..3 {
                    let w = (logits[t] - top).exp() / z;
                    for c in 0..4 {
                        expected[c] += w * v[t][c] / 3.0;
                    }
                }
            }
            for c in 0..4 {
                assert!((out.get(n, c) - expected[c]).abs() < 1e-6, "{n} {c} {} {}", out.get(n, c), expected[c]);
            }
        }
    }

    #[test]
    fn self_attention_forced_uniform_and_zero_value() {
        let widths = [2, 2, 2];
        let mut p = sa_params(2, widths, 5);
        p.q = Linear::zeros(2, 2);
        p.v = Linear::identity(2);
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let b = Matrix::from_rows(&[vec![-1.0, 0.5]]);
        let c = Matrix::from_rows(&[vec![0.0, 3.0]]);
        let out = fuse_self_attention(&a, &b, &c, &p).unwrap();
        let proj: Vec<Vec<f64>> = [&a, &b, &c]
            .iter()
            .zip(&p.sources)
            .map(|(m, l)| affine(m.row(0), l))
            .collect();
        for ch in 0..2 {
            let mean = (proj[0][ch] + proj[1][ch] + proj[2][ch]) / 3.0;
            assert!((out.get(0, ch) - mean).abs() < 1e-12);
        }
        p.v = Linear::zeros(2, 2);
        let out = fuse_self_attention(&a, &b, &c, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_examples() {
        let zero = AdapterParams {
            fc1: Linear::zeros(3, 4),
            activation: Activation::Gelu,
            fc2: Linear::zeros(4, 2),
        };
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]);
        assert_eq!(adapt(&x, &zero).unwrap(), Matrix::zeros(1, 2));

        let id = AdapterParams {
            fc1: Linear::identity(3),
            activation: Activation::Identity,
            fc2: Linear::identity(3),
        };
        let pos = Matrix::from_rows(&[vec![0.5, 2.0, 3.0]]);
        assert_eq!(adapt(&pos, &id).unwrap(), pos);

        // 1 -> 2 -> 1 with ReLU: h = relu([2·1 − 1, −1·1 + 0.5]) = [1, 0]; y = 3·1 + 4·0 + 0.25.
        let small = AdapterParams {
            fc1: Linear::new(Matrix::from_rows(&[vec![2.0, -1.0]]), Matrix::from_rows(&[vec![-1.0, 0.5]])),
            activation: Activation::Relu,
            fc2: Linear::new(Matrix::from_rows(&[vec![3.0], vec![4.0]]), Matrix::from_rows(&[vec![0.25]])),
        };
        let y = adapt(&Matrix::from_rows(&[vec![1.0]]), &small).unwrap();
        assert_eq!(y.get(0, 0), 3.25);

        assert!(adapt(&Matrix::zeros(1, 2), &zero).is_err());
        let broken = AdapterParams {
            fc1: Linear::zeros(3, 4),
            activation: Activation::Gelu,
            fc2: Linear::zeros(5, 2),
        };
        assert!(matches!(adapt(&x, &broken), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn bilinear_preserves_constants(src in 1usize..6, dst in 1usize..9, c in -5.0f64..5.0) {
            let m = bilinear_matrix(src, src, dst, dst);
            let out = m.matmul(&Matrix::filled(src * src, 1, c));
            for v in out.data() {
                prop_assert!((v - c).abs() < 1e-12);
            }
        }

        #[test]
        fn bilinear_is_linear(vals in prop::collection::vec(-3.0f64..3.0, 18), a in -2.0f64..2.0) {
            let m = bilinear_matrix(3, 3, 5, 5);
            let x = Matrix::from_vec(9, 1, vals[..9].to_vec());
            let y = Matrix::from_vec(9, 1, vals[9..].to_vec());
            let mut comb = x.clone();
            comb.scale_assign(a);
            comb.add_assign(&y);
            let lhs = m.matmul(&comb);
            let mut rhs = m.matmul(&x);
            rhs.scale_assign(a);
            rhs.add_assign(&m.matmul(&y));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn slices_recover_inputs(n in 1usize..6, w in prop::array::uniform3(1usize..4), seed in any::<u64>()) {
            let gen = |k: usize, cols: usize| Matrix::from_vec(n, cols, (0..n * cols).map(|i| ((seed as usize ^ (i * 31 + k)) % 97) as f64 / 7.0).collect());
            let parts = [gen(0, w[0]), gen(1, w[1]), gen(2, w[2])];
            let f = fuse_channels(&parts[0], &parts[1], &parts[2]).unwrap();
            prop_assert_eq!(f.channels(), w[0] + w[1] + w[2]);
            for i in 0..3 {
                prop_assert_eq!(&f.source(i), &parts[i]);
            }
        }

        #[test]
        fn adapter_commutes_with_token_permutation(rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..6), shift in 0usize..6) {
            let ad = AdapterParams {
                fc1: Linear::new(Matrix::from_rows(&[vec![0.3, -0.2, 1.0], vec![0.7, 0.1, -0.4]]), Matrix::from_rows(&[vec![0.1, 0.0, -0.1]])),
                activation: Activation::Gelu,
                fc2: Linear::new(Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![0.5]]), Matrix::from_rows(&[vec![0.2]])),
            };
            let n = rows.len();
            let x = Matrix::from_rows(&rows);
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let px = Matrix::from_rows(&perm.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>());
            let y = adapt(&x, &ad).unwrap();
            let py = adapt(&px, &ad).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(py.row(k), y.row(i));
            }
        }
    }
}
