//! Acceptance criteria, one test each. Every test prints a single
//! `ACCEPTANCE PASS|FAIL <criterion>: <detail>` line before asserting.
//!
//! Run with `cargo test -p maskcap-cli --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use maskcap::dataset::{
    stage_mixture_with, synthetic_fixture, AttributeId, FixtureOptions, SourceRegistry, SourceSpec, TaskKind,
    COMPOSITIONCAP, PRETRAIN_SOURCE,
};
use maskcap::decoder::Vocabulary;
use maskcap::encoders::{self, encode_hr_conv, encode_hr_sam, encode_mask_aware, EncoderConfig, RgbImage};
use maskcap::fusion::{fuse_channels, fuse_sequence_append, fusion_width, project_mask_features, FusionKind};
use maskcap::geometry::{decode_rle, encode_rle, iou_boxes, iou_mask_box, BBox, BinaryMask};
use maskcap::judge::{
    build_judge_prompt, judge_run, prompt_hash, JudgeImage, JudgeOptions, JudgeRequest, MockClient, JUDGE_INSTRUCTIONS,
};
use maskcap::metrics::{evaluate, grounding_acc, EvalPair, Metric, ACC_THRESHOLD};
use maskcap::model::{CaptionModel, ModelConfig};
use maskcap::params::{Component, ParamStore};
use maskcap::tensor::Matrix;
use maskcap::training::{grad_check, run_stage, GradCheckOptions, OptimizerConfig, StageConfig, TrainingData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Times one criterion and reports it on a single line.
struct Criterion {
    name: &'static str,
    budget: Duration,
    start: Instant,
}

impl Criterion {
    fn start(name: &'static str, budget_secs: u64) -> Self {
        Self {
            name,
            budget: Duration::from_secs(budget_secs),
            start: Instant::now(),
        }
    }

    fn finish(self, checks: &[(&str, bool)], detail: String) {
        let elapsed = self.start.elapsed();
        let in_time = elapsed <= self.budget;
        let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
        let pass = failed.is_empty() && in_time;
        println!(
            "ACCEPTANCE {} {}: {detail}; {:.2}s of {}s{}",
            if pass { "PASS" } else { "FAIL" },
            self.name,
            elapsed.as_secs_f64(),
            self.budget.as_secs(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        );
        assert!(failed.is_empty(), "{}: failed checks {failed:?}", self.name);
        assert!(in_time, "{}: took {elapsed:?}, budget {:?}", self.name, self.budget);
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> BinaryMask {
    let bits: Vec<u8> = (0..h * w).map(|_| rng.gen_bool(density) as u8).collect();
    BinaryMask::new(h, w, bits).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect())
}

fn bits_equal(a: &Matrix, b: &Matrix) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

// ---------------------------------------------------------------- encoders

#[test]
fn token_geometry() {
    let c = Criterion::start("token geometry", 1);
    let cfg = EncoderConfig {
        lr_size: 336,
        patch_size: 14,
        hr_size: 1024,
        hr_grid: 32,
        lr_channels: 4,
        hr1_channels: 4,
        hr2_channels: 4,
        hr1_stem_channels: 4,
        heads: 1,
        ..EncoderConfig::default()
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    encoders::init_params(&cfg, &mut store, &mut rng);
    let lr = random_image(&mut rng, 336, 336);
    let hr = random_image(&mut rng, 1024, 1024);
    let mask = BinaryMask::from_box(336, 336, &BBox::new(40, 60, 200, 300).unwrap());
    let fm = encode_mask_aware(&cfg, &store, &lr, &mask).unwrap();
    let h1 = encode_hr_conv(&cfg, &store, &hr).unwrap();
    let h2 = encode_hr_sam(&cfg, &store, &hr).unwrap();
    let projected = project_mask_features(&fm.features, 32).unwrap();
    let fused = fuse_channels(&projected, &h1.features, &h2.features).unwrap();
    c.finish(
        &[
            ("576 patches", fm.grid_h * fm.grid_w == 576),
            ("577 tokens", fm.tokens() == 577),
            ("HR1 1024", h1.tokens() == 1024),
            ("HR2 1024", h2.tokens() == 1024),
            ("fusion grid 1024", projected.rows() == 1024 && fused.tokens() == 1024),
        ],
        format!(
            "F_M {} tokens (+class of {}), HR1 {}, HR2 {}, fused {}",
            fm.tokens() - 1,
            fm.tokens(),
            h1.tokens(),
            h2.tokens(),
            fused.tokens()
        ),
    );
}

#[test]
fn zero_alpha_equivalence() {
    let c = Criterion::start("zero-alpha equivalence", 10);
    let cfg = ModelConfig::tiny().encoder;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    encoders::init_params(&cfg, &mut store, &mut rng);
    let alpha_zero = ["lr.alpha.weight", "lr.alpha.bias"]
        .iter()
        .all(|n| store.get(n).data().iter().all(|&v| v == 0.0));
    let n = cfg.lr_size;
    let mut worst = 0.0f64;
    let mut pairs = Vec::new();
    for i in 0..20 {
        let img = random_image(&mut rng, n, n);
        let mask = match i {
            0 => BinaryMask::ones(n, n),
            1 => BinaryMask::zeros(n, n),
            _ => {
                let density = rng.gen_range(0.05..0.95);
                random_mask(&mut rng, n, n, density)
            }
        };
        let reference = encode_mask_aware(&cfg, &store, &img, &BinaryMask::ones(n, n)).unwrap();
        let out = encode_mask_aware(&cfg, &store, &img, &mask).unwrap();
        worst = worst.max(out.features.max_abs_diff(&reference.features));
        pairs.push((img, mask));
    }
    // Control: a non-zero alpha projection makes the output mask-dependent.
    let mut perturbed = store.clone();
    for v in perturbed.get_mut("lr.alpha.weight").data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let (img, mask) = &pairs[5];
    let control = encode_mask_aware(&cfg, &perturbed, img, mask)
        .unwrap()
        .features
        .max_abs_diff(&encode_mask_aware(&cfg, &perturbed, img, &BinaryMask::ones(n, n)).unwrap().features);
    c.finish(
        &[("alpha initialized to zero", alpha_zero), ("max diff < 1e-6", worst < 1e-6), ("control differs", control > 1e-6)],
        format!("20 pairs, max |ΔF_M| = {worst:.3e}; control with random alpha {control:.3e}"),
    );
}

// ------------------------------------------------------------------ fusion

/// Closed-form corner-aligned bilinear sample of a `side × side` grid.
fn bilinear_oracle(grid: &[Vec<f64>], side: usize, target: usize, ty: usize, tx: usize) -> f64 {
    let coord = |t: usize| -> (usize, usize, f64) {
        if target == 1 || side == 1 {
            return (0, 0, 0.0);
        }
        let pos = t as f64 * (side - 1) as f64 / (target - 1) as f64;
        let lo = (pos.floor() as usize).min(side - 1);
        let hi = (lo + 1).min(side - 1);
        (lo, hi, pos - lo as f64)
    };
    let (y0, y1, fy) = coord(ty);
    let (x0, x1, fx) = coord(tx);
    let at = |y: usize, x: usize| grid[y * side + x][0];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

#[test]
fn fusion_contracts() {
    let c = Criterion::start("fusion contracts", 10);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut additive = true;
    let mut recovered = true;
    let mut appended = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let w: [usize; 3] = std::array::from_fn(|_| rng.gen_range(1..12));
        let parts: Vec<Matrix> = w.iter().map(|&wi| random_matrix(&mut rng, n, wi)).collect();
        let fused = fuse_channels(&parts[0], &parts[1], &parts[2]).unwrap();
        additive &= fused.channels() == w.iter().sum::<usize>()
            && fusion_width(FusionKind::Channel, w, 0) == fused.channels()
            && fused.tokens() == n;
        recovered &= (0..3).all(|i| bits_equal(&fused.source(i), &parts[i]));

        let same: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, n, w[0])).collect();
        let seq = fuse_sequence_append(&same[0], &same[1], &same[2]).unwrap();
        appended &= seq.rows() == 3 * n && (0..3).all(|i| bits_equal(&seq.slice_rows(i * n, n), &same[i]));
    }

    let mut worst = 0.0f64;
    let mut cases = vec![(24usize, 32usize)];
    cases.extend((0..100).map(|_| (rng.gen_range(2..10), rng.gen_range(2..14))));
    for (side, target) in cases {
        let channels = rng.gen_range(1..4);
        let f_m = random_matrix(&mut rng, side * side + 1, channels);
        let out = project_mask_features(&f_m, target).unwrap();
        for ch in 0..channels {
            let grid: Vec<Vec<f64>> = (1..=side * side).map(|r| vec![f_m.get(r, ch)]).collect();
            for ty in 0..target {
                for tx in 0..target {
                    let want = bilinear_oracle(&grid, side, target, ty, tx);
                    worst = worst.max((out.get(ty * target + tx, ch) - want).abs());
                }
            }
        }
    }
    c.finish(
        &[
            ("width additivity", additive),
            ("bitwise channel slices", recovered),
            ("bitwise sequence slices", appended),
            ("bilinear within 1e-12", worst <= 1e-12),
        ],
        format!("100 random inputs per contract; bilinear max error {worst:.3e}"),
    );
}

// ---------------------------------------------------------------- training

fn fixture_vocab(cfg: &ModelConfig, captions: impl Iterator<Item = String>) -> Vocabulary {
    let mut texts: Vec<String> = captions.collect();
    for a in AttributeId::all() {
        texts.push(cfg.templates.build(TaskKind::Aarc, Some(a)).unwrap());
    }
    texts.push(cfg.templates.build(TaskKind::Rdc, None).unwrap());
    texts.push(cfg.templates.build(TaskKind::Cgic, None).unwrap());
    Vocabulary::from_corpus(texts.iter().map(String::as_str))
}

#[test]
fn gradient_check() {
    let c = Criterion::start("gradient check", 120);
    let fx = synthetic_fixture(&FixtureOptions {
        records: 6,
        sizes: vec![32, 48],
        ..FixtureOptions::default()
    });
    let sample = fx.samples.iter().find(|s| s.task == TaskKind::Aarc).unwrap();
    let image = fx.image(&sample.image_path).unwrap();
    let mut worst = 0.0f64;
    let mut min_per_component = usize::MAX;
    let mut runs = 0;
    for fusion in [FusionKind::Channel, FusionKind::SelfAttention, FusionKind::SequenceAppend] {
        let cfg = ModelConfig {
            fusion,
            ..ModelConfig::tiny()
        };
        let vocab = fixture_vocab(&cfg, fx.samples.iter().map(|s| s.caption.clone()));
        for random_alpha in [false, true] {
            let mut model = CaptionModel::new(cfg.clone(), vocab.clone(), 5).unwrap();
            if random_alpha {
                let mut rng = ChaCha8Rng::seed_from_u64(8);
                for v in model.params.get_mut("lr.alpha.weight").data_mut() {
                    *v = rng.gen_range(-0.3..0.3);
                }
            }
            let ex = model.example_for_sample(sample, image, false).unwrap();
            let report = grad_check(
                &model,
                &ex,
                &GradCheckOptions {
                    per_component: 10,
                    seed: runs,
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            let per = report.per_component();
            min_per_component = min_per_component.min(Component::ALL.iter().map(|c| per.get(c).copied().unwrap_or(0)).min().unwrap());
            worst = worst.max(report.max_rel_error);
            runs += 1;
        }
    }
    c.finish(
        &[("relative error < 1e-3", worst < 1e-3), (">= 10 params per component", min_per_component >= 10)],
        format!("{runs} runs over 3 fusion variants, zero and random alpha; max relative error {worst:.3e}; >= {min_per_component} params per component"),
    );
}

fn overfit_data() -> (TrainingData, Vec<maskcap::dataset::RegionCaptionSample>, Vocabulary, ModelConfig) {
    let fx = synthetic_fixture(&FixtureOptions {
        records: 16,
        sizes: vec![32, 48],
        test_every: 0,
        ..FixtureOptions::default()
    });
    let cfg = ModelConfig::tiny();
    let vocab = fixture_vocab(&cfg, fx.samples.iter().map(|s| s.caption.clone()));
    let data = TrainingData {
        sources: [
            (PRETRAIN_SOURCE.to_string(), fx.samples.clone()),
            (COMPOSITIONCAP.to_string(), fx.samples.clone()),
        ]
        .into(),
        images: fx.images.iter().cloned().collect(),
    };
    (data, fx.samples, vocab, cfg)
}

fn stage_config(stage: u8, steps: usize, learning_rate: f64, batch_size: usize) -> StageConfig {
    let mut reg = SourceRegistry::default();
    reg.insert(SourceSpec::named(PRETRAIN_SOURCE));
    reg.insert(SourceSpec::named(COMPOSITIONCAP));
    let spec = stage_mixture_with(stage, &reg, &[COMPOSITIONCAP]).unwrap();
    StageConfig::new(
        stage,
        spec,
        OptimizerConfig {
            learning_rate,
            steps,
            batch_size,
            seed: stage as u64,
            ..OptimizerConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn end_to_end_overfit() {
    let c = Criterion::start("end-to-end overfit", 600);
    let (data, samples, vocab, cfg) = overfit_data();
    let mut model = CaptionModel::new(cfg, vocab, 0).unwrap();
    let mut stage3 = Vec::new();
    for (stage, steps) in [(1u8, 30usize), (2, 30), (3, 500)] {
        let (report, _) = run_stage(&mut model, &stage_config(stage, steps, 3e-3, 16), &data).unwrap();
        if stage == 3 {
            stage3 = report.losses;
        }
    }
    let first_below = stage3.iter().position(|&l| l < 0.05);
    let final_loss = *stage3.last().unwrap();
    let mut verbatim = 0;
    for s in &samples {
        let ex = model.example_for_sample(s, &data.images[&s.image_path], false).unwrap();
        if model.caption_greedy(&ex).unwrap() == s.caption {
            verbatim += 1;
        }
    }
    c.finish(
        &[
            ("<= 500 stage-3 steps", stage3.len() <= 500),
            ("loss < 0.05", final_loss < 0.05),
            ("16/16 verbatim", verbatim == 16 && samples.len() == 16),
        ],
        format!(
            "stage-3 loss {final_loss:.4} after {} steps (first < 0.05 at step {}); {verbatim}/{} captions verbatim",
            stage3.len(),
            first_below.map_or("never".into(), |i| (i + 1).to_string()),
            samples.len()
        ),
    );
}

#[test]
fn freeze_fidelity() {
    let c = Criterion::start("freeze fidelity", 60);
    let (data, _, vocab, cfg) = overfit_data();
    let mut model = CaptionModel::new(cfg, vocab, 3).unwrap();
    let mut frozen_ok = true;
    let mut trained_moved = true;
    let mut detail = Vec::new();
    for stage in 1..=3u8 {
        let scfg = stage_config(stage, 8, 1e-2, 4);
        let before = model.params.clone();
        run_stage(&mut model, &scfg, &data).unwrap();
        let mut frozen = 0;
        let mut moved: BTreeMap<Component, bool> = BTreeMap::new();
        for (name, p) in before.iter() {
            let after = model.params.get(name);
            if scfg.is_trainable(p.component) {
                *moved.entry(p.component).or_default() |= !bits_equal(&p.value, after);
            } else {
                frozen += 1;
                frozen_ok &= bits_equal(&p.value, after);
            }
        }
        trained_moved &= moved.values().all(|&m| m);
        detail.push(format!("stage {stage}: {frozen} frozen arrays, {} trained components", moved.len()));
    }
    c.finish(
        &[("frozen arrays bit-identical", frozen_ok), ("trainable components updated", trained_moved)],
        detail.join("; "),
    );
}

// ----------------------------------------------------------------- metrics

const WORDS: [&str; 16] = [
    "a", "red", "block", "blocks", "sits", "sitting", "sit", "on", "the", "left", "tall", "wide", "blue", "green", "middle", "right",
];

fn random_sentence(rng: &mut ChaCha8Rng, words: &[&str], lo: usize, hi: usize) -> String {
    (0..rng.gen_range(lo..=hi)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
}

fn toks(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn count_ngrams<'a>(t: &[&'a str], n: usize) -> BTreeMap<Vec<&'a str>, usize> {
    let mut m = BTreeMap::new();
    for i in 0..(t.len() + 1).saturating_sub(n) {
        *m.entry(t[i..i + n].to_vec()).or_insert(0) += 1;
    }
    m
}

fn bleu_oracle(pairs: &[(String, Vec<String>)]) -> f64 {
    let (mut matched, mut total) = ([0usize; 4], [0usize; 4]);
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in pairs {
        let c = toks(cand);
        c_len += c.len();
        let mut lens: Vec<usize> = refs.iter().map(|r| toks(r).len()).collect();
        lens.sort_by_key(|&l| ((l as i64 - c.len() as i64).abs(), l));
        r_len += lens[0];
        for n in 1..=4 {
            for (g, k) in count_ngrams(&c, n) {
                let best = refs.iter().map(|r| count_ngrams(&toks(r), n).get(&g).copied().unwrap_or(0)).max().unwrap();
                matched[n - 1] += k.min(best);
                total[n - 1] += k;
            }
        }
    }
    if matched.iter().any(|&m| m == 0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|n| (matched[n] as f64 / total[n] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    bp * log_p.exp()
}

/// LCS by enumerating every subsequence of the candidate.
fn rouge_oracle(cand: &str, reference: &str) -> f64 {
    let (c, r) = (toks(cand), toks(reference));
    let is_subseq = |sub: &[&str]| {
        let mut it = r.iter();
        sub.iter().all(|w| it.any(|x| x == w))
    };
    let mut lcs = 0;
    for bits in 0u32..(1 << c.len()) {
        let sub: Vec<&str> = (0..c.len()).filter(|i| bits >> i & 1 == 1).map(|i| c[i]).collect();
        if sub.len() > lcs && is_subseq(&sub) {
            lcs = sub.len();
        }
    }
    if lcs == 0 {
        return 0.0;
    }
    let (p, rc) = (lcs as f64 / c.len() as f64, lcs as f64 / r.len() as f64);
    let b2 = 1.2f64 * 1.2;
    (1.0 + b2) * p * rc / (rc + b2 * p)
}

/// Every injective alignment is enumerated; the best one has the most
/// exact matches, then the most matches, then the fewest chunks.
fn meteor_oracle(cand: &str, reference: &str) -> f64 {
    let (c, r) = (toks(cand), toks(reference));
    let stems_c: Vec<String> = c.iter().map(|w| porter_stemmer::stem(w)).collect();
    let stems_r: Vec<String> = r.iter().map(|w| porter_stemmer::stem(w)).collect();
    let mut best: Option<(usize, usize, usize)> = None; // exact, total, chunks
    let mut assign: Vec<Option<usize>> = vec![None; c.len()];
    fn walk(
        i: usize,
        c: &[&str],
        r: &[&str],
        sc: &[String],
        sr: &[String],
        assign: &mut Vec<Option<usize>>,
        best: &mut Option<(usize, usize, usize)>,
    ) {
        if i == c.len() {
            let pairs: Vec<(usize, usize)> = assign.iter().enumerate().filter_map(|(a, b)| b.map(|b| (a, b))).collect();
            let exact = pairs.iter().filter(|&&(a, b)| c[a] == r[b]).count();
            let mut chunks = 0;
            for k in 0..pairs.len() {
                if k == 0 || !(pairs[k].0 == pairs[k - 1].0 + 1 && pairs[k].1 == pairs[k - 1].1 + 1) {
                    chunks += 1;
                }
            }
            let better = match best {
                None => true,
                Some((e, t, ch)) => (exact, pairs.len()) > (*e, *t) || ((exact, pairs.len()) == (*e, *t) && chunks < *ch),
            };
            if better {
                *best = Some((exact, pairs.len(), chunks));
            }
            return;
        }
        walk(i + 1, c, r, sc, sr, assign, best);
        for j in 0..r.len() {
            if assign.contains(&Some(j)) || !(c[i] == r[j] || sc[i] == sr[j]) {
                continue;
            }
            assign[i] = Some(j);
            walk(i + 1, c, r, sc, sr, assign, best);
            assign[i] = None;
        }
    }
    walk(0, &c, &r, &stems_c, &stems_r, &mut assign, &mut best);
    let (_, m, chunks) = best.unwrap();
    if m == 0 {
        return 0.0;
    }
    let (p, rc) = (m as f64 / c.len() as f64, m as f64 / r.len() as f64);
    let fmean = p * rc / (0.9 * p + 0.1 * rc);
    fmean * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

/// CIDEr-D with document frequencies over each sample's reference set.
fn cider_oracle(pairs: &[(String, Vec<String>)]) -> Vec<f64> {
    let docs = pairs.len() as f64;
    let mut df: HashMap<Vec<&str>, f64> = HashMap::new();
    for (_, refs) in pairs {
        let mut seen = std::collections::BTreeSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(count_ngrams(&toks(r), n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let vec_of = |text: &str, n: usize| -> BTreeMap<Vec<String>, f64> {
        count_ngrams(&toks(text), n)
            .into_iter()
            .map(|(g, k)| {
                let idf = docs.ln() - df.get(&g).copied().unwrap_or(0.0).max(1.0).ln();
                (g.iter().map(|w| w.to_string()).collect(), k as f64 * idf)
            })
            .collect()
    };
    pairs
        .iter()
        .map(|(cand, refs)| {
            let mut total = 0.0;
            for r in refs {
                let delta = toks(cand).len() as f64 - toks(r).len() as f64;
                let penalty = (-delta * delta / 72.0).exp();
                for n in 1..=4 {
                    let h = vec_of(cand, n);
                    let g = vec_of(r, n);
                    let mut dot = 0.0;
                    for (k, hv) in &h {
                        if let Some(rv) = g.get(k) {
                            dot += hv.min(*rv) * rv;
                        }
                    }
                    let nh = h.values().map(|v| v * v).sum::<f64>().sqrt();
                    let nr = g.values().map(|v| v * v).sum::<f64>().sqrt();
                    if nh != 0.0 && nr != 0.0 {
                        dot /= nh * nr;
                    }
                    total += dot * penalty;
                }
            }
            10.0 * total / 4.0 / refs.len() as f64
        })
        .collect()
}

fn eval_pairs(raw: &[(String, Vec<String>)]) -> Vec<EvalPair> {
    raw.iter().enumerate().map(|(i, (c, r))| EvalPair::new(i.to_string(), c.clone(), r.clone()).unwrap()).collect()
}

#[test]
fn metric_oracle_equivalence() {
    let c = Criterion::start("metric oracle equivalence", 60);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let raw: Vec<(String, Vec<String>)> = (0..50)
        .map(|i| {
            let refs: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| random_sentence(&mut rng, &WORDS, 3, 8)).collect();
            // Half the candidates are edited copies of a reference so that
            // higher-order n-grams match.
            let cand = if i % 2 == 0 {
                let mut words: Vec<&str> = toks(&refs[0]);
                for _ in 0..rng.gen_range(0..3) {
                    let k = rng.gen_range(0..words.len());
                    words[k] = WORDS[rng.gen_range(0..WORDS.len())];
                }
                if rng.gen_bool(0.5) {
                    words.push(WORDS[rng.gen_range(0..WORDS.len())]);
                }
                words.join(" ")
            } else {
                random_sentence(&mut rng, &WORDS, 3, 8)
            };
            (cand, refs)
        })
        .collect();
    let pairs = eval_pairs(&raw);
    let metrics = [Metric::Bleu4, Metric::RougeL, Metric::Meteor, Metric::Cider];
    let reports = evaluate(&pairs, &metrics, None).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max_over = |f: &dyn Fn(&str, &str) -> f64| -> Vec<f64> {
        raw.iter().map(|(c, refs)| refs.iter().map(|r| f(c, r)).fold(0.0, f64::max)).collect()
    };
    let rouge = max_over(&rouge_oracle);
    let meteor = max_over(&meteor_oracle);
    let cider = cider_oracle(&raw);
    let err_samples = |got: &[f64], want: &[f64]| got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let errs = [
        (reports[0].score.unwrap() - bleu_oracle(&raw)).abs(),
        (reports[1].score.unwrap() - mean(&rouge)).abs().max(err_samples(&reports[1].per_sample, &rouge)),
        (reports[2].score.unwrap() - mean(&meteor)).abs().max(err_samples(&reports[2].per_sample, &meteor)),
        (reports[3].score.unwrap() - mean(&cider)).abs().max(err_samples(&reports[3].per_sample, &cider)),
    ];
    let nontrivial = bleu_oracle(&raw) > 0.0 && mean(&cider) > 0.0;

    // Identity: distinct sentences over a wide vocabulary, each its own
    // sole reference.
    let wide: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
    let wide_refs: Vec<&str> = wide.iter().map(String::as_str).collect();
    let ident_raw: Vec<(String, Vec<String>)> = (0..30)
        .map(|_| {
            let s = random_sentence(&mut rng, &wide_refs, 4, 10);
            (s.clone(), vec![s])
        })
        .collect();
    let ident = evaluate(&eval_pairs(&ident_raw), &metrics, None).unwrap();
    let meteor_cap: Vec<f64> = ident_raw.iter().map(|(s, _)| 1.0 - 0.5 / (toks(s).len() as f64).powi(3)).collect();
    let identity_max = (ident[0].score.unwrap() - 1.0).abs() < 1e-9
        && (ident[1].score.unwrap() - 1.0).abs() < 1e-9
        && err_samples(&ident[2].per_sample, &meteor_cap) < 1e-9
        && ident[3].per_sample.iter().all(|s| (s - 10.0).abs() < 1e-9);
    c.finish(
        &[
            ("BLEU-4 within 1e-9", errs[0] <= 1e-9),
            ("ROUGE-L within 1e-9", errs[1] <= 1e-9),
            ("METEOR within 1e-9", errs[2] <= 1e-9),
            ("CIDEr within 1e-9", errs[3] <= 1e-9),
            ("non-degenerate sample", nontrivial),
            ("identity scores max", identity_max),
        ],
        format!(
            "50 pairs (BLEU-4 {:.3}); max |Δ| BLEU-4 {:.1e}, ROUGE-L {:.1e}, METEOR {:.1e}, CIDEr {:.1e}; identity BLEU {:.3} ROUGE-L {:.3} CIDEr {:.3}, METEOR at its 1-γ/m³ ceiling",
            reports[0].score.unwrap(),
            errs[0],
            errs[1],
            errs[2],
            errs[3],
            ident[0].score.unwrap(),
            ident[1].score.unwrap(),
            ident[3].score.unwrap()
        ),
    );
}

// ---------------------------------------------------------------- geometry

#[test]
fn geometry() {
    let c = Criterion::start("geometry", 10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut roundtrip = true;
    for i in 0..100 {
        let (h, w) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let density: f64 = if i < 3 { [0.0, 1.0, 0.5][i] } else { rng.gen() };
        let m = random_mask(&mut rng, h, w, density);
        let rle = encode_rle(&m);
        roundtrip &= rle.counts.iter().sum::<usize>() == h * w && decode_rle(&rle).unwrap() == m;
    }

    let mut worst = 0.0f64;
    let canvas = 24;
    let random_box = |rng: &mut ChaCha8Rng| {
        let (x0, y0) = (rng.gen_range(0..canvas), rng.gen_range(0..canvas));
        BBox::new(x0, y0, rng.gen_range(x0..=canvas), rng.gen_range(y0..=canvas)).unwrap()
    };
    for _ in 0..200 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..canvas {
            for x in 0..canvas {
                let (ia, ib) = (a.contains(x, y), b.contains(x, y));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
        match iou_boxes(&a, &b) {
            Ok(v) => worst = worst.max((v - inter as f64 / union as f64).abs()),
            Err(_) => worst = worst.max(if union == 0 { 0.0 } else { f64::INFINITY }),
        }
        let m = random_mask(&mut rng, canvas, canvas, 0.3);
        let (mut mi, mut mu) = (0usize, 0usize);
        for y in 0..canvas {
            for x in 0..canvas {
                let (im, ib) = (m.get(y, x), b.contains(x, y));
                mi += (im && ib) as usize;
                mu += (im || ib) as usize;
            }
        }
        if let Ok(v) = iou_mask_box(&m, &b) {
            worst = worst.max((v - mi as f64 / mu as f64).abs());
        }
    }

    let gold = BBox::new(0, 0, 10, 10).unwrap();
    let mut pred = vec![BBox::new(0, 0, 10, 6).unwrap(); 7]; // IoU 0.6
    pred.extend(vec![BBox::new(0, 0, 10, 4).unwrap(); 3]); // IoU 0.4
    let acc = grounding_acc(&pred, &[gold; 10], ACC_THRESHOLD).unwrap();
    c.finish(
        &[("RLE roundtrip exact", roundtrip), ("IoU within 1e-12", worst <= 1e-12), ("Acc@0.5 = 0.7", acc == 0.7)],
        format!("100 masks round-trip; IoU max error {worst:.1e}; Acc@0.5 = {acc}"),
    );
}

// ------------------------------------------------------------------- judge

#[test]
fn judge_protocol_offline() {
    let c = Criterion::start("judge protocol offline", 10);
    let requests: Vec<JudgeRequest> = (0..10)
        .map(|i| JudgeRequest {
            id: format!("r{i}"),
            image: JudgeImage::Png(vec![0x89, b'P', b'N', b'G']),
            prediction: format!("prediction {i}"),
            reference: format!("reference {i}"),
            attribute: AttributeId::new(i as u8 + 1).unwrap().name().to_string(),
        })
        .collect();
    let err = |s: &str| Err(s.to_string());
    let client = MockClient::cycle(["Yes"])
        .script(2, vec![err("timeout"), Ok("No".into())])
        .script(4, vec![Ok("Maybe".into())])
        .script(6, vec![err("reset"), err("reset"), err("reset"), err("reset")])
        .script(7, vec![Ok("no, the colour differs".into())]);
    let (verdicts, summary) = judge_run(&requests, &client, JudgeOptions { concurrency: 4, retries: 3 }).unwrap();
    let retries: Vec<usize> = verdicts.iter().map(|v| v.retries).collect();
    let script_ok = summary.total == 10
        && summary.parsed == 8
        && summary.yes == 6
        && summary.unparsed == 1
        && summary.transport_failures == 1
        && summary.retries == 4
        && summary.accuracy == Some(0.75)
        && retries == [0, 0, 1, 0, 0, 0, 3, 0, 0, 0]
        && verdicts[4].decision.is_none()
        && verdicts[4].raw.as_deref() == Some("Maybe")
        && verdicts[6].raw.is_none()
        && verdicts.iter().map(|v| v.id.as_str()).eq(requests.iter().map(|r| r.id.as_str()))
        && client.calls() == 14
        && client.peak_in_flight() <= 4;

    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/judge_instructions.txt");
    let golden = std::fs::read_to_string(golden_path).unwrap();
    let sample = JudgeRequest {
        id: "g".into(),
        image: JudgeImage::Png(vec![1]),
        prediction: "40-50 years old".into(),
        reference: "45-50 years old".into(),
        attribute: "Age Range".into(),
    };
    let golden_ok = golden == JUDGE_INSTRUCTIONS
        && prompt_hash(JUDGE_INSTRUCTIONS) == "f96ff8689e72919e99929f5c80dcc5ee298401d48a8665768cf8c8b9aa2d60e0";
    let prompt = build_judge_prompt(&sample);
    let prompt_ok = prompt_hash(&prompt) == prompt_hash(&build_judge_prompt(&sample.clone()))
        && prompt.ends_with("\nAttribute: Age Range\nModel-predicted caption: 40-50 years old\nReference description: 45-50 years old\n");
    c.finish(
        &[("scripted outcome", script_ok), ("golden instructions hash", golden_ok), ("prompt layout", prompt_ok)],
        format!(
            "accuracy {:?}, parsed {}/{}, unparsed {}, transport failures {}, retries {}; instructions sha256 {}",
            summary.accuracy,
            summary.parsed,
            summary.total,
            summary.unparsed,
            summary.transport_failures,
            summary.retries,
            &prompt_hash(JUDGE_INSTRUCTIONS)[..12]
        ),
    );
}

// ----------------------------------------------------------------- dataset

const ATTRIBUTES: [&str; 18] = [
    "Category Name",
    "Body Shape",
    "Skin Texture and Color",
    "Clothing, Shoes, Accessories",
    "Interaction with Other Objects",
    "Body Pose/Gesture",
    "Other Attributes",
    "Relative Location with Other Objects",
    "Color",
    "Materials/Texture",
    "Camera Viewpoint",
    "Associative Visual Effect",
    "Shape",
    "Facial Expression",
    "Hair",
    "Age Range",
    "Object Pose for Deformable Objects",
    "Style",
];

#[test]
fn dataset_stats() {
    let c = Criterion::start("dataset stats", 10);
    let fx = synthetic_fixture(&FixtureOptions {
        records: 100,
        seed: 17,
        ..FixtureOptions::default()
    });
    let tmp = tempfile::tempdir().unwrap();
    let dataset = fx.write(&tmp.path().join("data")).unwrap();
    let out = tmp.path().join("stats");
    let status = Command::new(env!("CARGO_BIN_EXE_maskcap"))
        .args(["stats", dataset.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    let k = &fx.counts;
    let as_usize = |v: &serde_json::Value| v.as_u64().unwrap() as usize;
    let per_task = |t: &str| stats["tasks"][t].as_u64().unwrap_or(0) as usize;
    let tasks_ok = [TaskKind::Aarc, TaskKind::Rdc, TaskKind::Cgic]
        .iter()
        .all(|t| per_task(t.as_str()) == k.per_task.get(t).copied().unwrap_or(0));
    let splits_ok = k.per_split.iter().all(|(s, n)| {
        let key = serde_json::to_value(s).unwrap();
        stats["splits"][key.as_str().unwrap()].as_u64() == Some(*n as u64)
    });
    let attrs = stats["attributes"].as_array().unwrap();
    let counts_ok = attrs.iter().map(|a| as_usize(&a["count"])).eq(k.per_attribute.iter().copied());
    let names_ok = attrs.len() == 18
        && attrs.iter().zip(ATTRIBUTES).all(|(a, want)| a["name"].as_str().unwrap().as_bytes() == want.as_bytes());
    c.finish(
        &[
            ("binary succeeded", status.status.success()),
            ("captions", as_usize(&stats["captions"]) == k.captions && k.captions == 100),
            ("images", as_usize(&stats["images"]) == k.images),
            ("entities", as_usize(&stats["entities"]) == k.entities),
            ("per task", tasks_ok),
            ("per split", splits_ok),
            ("per attribute", counts_ok),
            ("18 names byte-for-byte", names_ok),
        ],
        format!("{} captions, {} images, {} entities; 18 attribute names match", k.captions, k.images, k.entities),
    );
}
