//! Three-stage training: freeze plans, the AdamW loop, finite-difference
//! gradient checks and checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::{DatasetSpec, MixtureSampler, RegionCaptionSample};
use crate::decoder::Vocabulary;
use crate::encoders::RgbImage;
use crate::error::{Error, Result};
use crate::model::{CaptionModel, Example, ModelConfig};
use crate::params::{Bindings, Component, ParamStore};
use crate::tensor::Matrix;

/// Which components a stage updates.
pub fn freeze_plan(stage: u8) -> Result<BTreeMap<Component, bool>> {
    let trainable: &[Component] = match stage {
        1 => &[Component::Adapter],
        2 => &[Component::AlphaConv, Component::LrEncoderTrunk],
        3 => &Component::ALL,
        _ => return Err(Error::Config(format!("stage must be 1, 2 or 3, got {stage}"))),
    };
    Ok(Component::ALL
        .into_iter()
        .map(|c| (c, trainable.contains(&c)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 100,
            batch_size: 4,
            seed: 0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: u8,
    pub data: DatasetSpec,
    pub trainable: BTreeMap<Component, bool>,
    pub optimizer: OptimizerConfig,
}

impl StageConfig {
    pub fn new(stage: u8, data: DatasetSpec, optimizer: OptimizerConfig) -> Result<Self> {
        Ok(Self {
            stage,
            data,
            trainable: freeze_plan(stage)?,
            optimizer,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trainable != freeze_plan(self.stage)? {
            return Err(Error::Config(format!(
                "trainable components do not match the stage {} freeze plan",
                self.stage
            )));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn is_trainable(&self, c: Component) -> bool {
        self.trainable.get(&c).copied().unwrap_or(false)
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub step: u64,
    pub m: BTreeMap<String, Matrix>,
    pub v: BTreeMap<String, Matrix>,
}

impl AdamW {
    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Matrix>, cfg: &OptimizerConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let p = params.get_mut(name);
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
                let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + cfg.epsilon);
                let w = &mut p.data_mut()[i];
                *w -= cfg.learning_rate * (update + cfg.weight_decay * *w);
            }
        }
    }
}

/// Source samples by name plus their full-resolution images by path.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub sources: BTreeMap<String, Vec<RegionCaptionSample>>,
    pub images: HashMap<String, RgbImage>,
}

impl TrainingData {
    pub fn image(&self, path: &str) -> Result<&RgbImage> {
        self.images
            .get(path)
            .ok_or_else(|| Error::Config(format!("image {path:?} was not loaded")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub stage: u8,
    pub losses: Vec<f64>,
    /// Kept out of serialized reports so identical runs write identical files.
    #[serde(skip)]
    pub wall_time_secs: f64,
    pub checksum: String,
    pub component_checksums: BTreeMap<Component, String>,
}

impl TrainingReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

pub fn component_checksums(params: &ParamStore) -> BTreeMap<Component, String> {
    Component::ALL
        .into_iter()
        .map(|c| (c, params.checksum_of(c)))
        .collect()
}

/// Gradients of the trainable parameters for one batch, plus the loss.
pub fn batch_gradients(
    model: &CaptionModel,
    batch: &[Example],
    trainable: impl Fn(Component) -> bool,
) -> Result<(f64, BTreeMap<String, Matrix>)> {
    let mut t = Tape::new();
    let b = model.params.bind(&mut t, &trainable);
    let loss = model.batch_loss_on_tape(&mut t, &b, batch)?;
    let value = t.value(loss).get(0, 0);
    let mut grads = t.backward(loss);
    let mut out = BTreeMap::new();
    for (name, p) in model.params.iter() {
        if trainable(p.component) {
            let g = grads
                .take(b.var(name))
                .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()));
            out.insert(name.to_string(), g);
        }
    }
    Ok((value, out))
}

fn clip(grads: &mut BTreeMap<String, Matrix>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        for g in grads.values_mut() {
            g.scale_assign(max_norm / norm);
        }
    }
}

/// Mutable training state carried across steps and stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(seed: u64) -> Self {
        Self {
            optimizer: AdamW::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Runs one stage. Batches are drawn from the stage mixture with a sampler
/// seeded from the optimizer seed; only trainable components change.
pub fn run_stage(
    model: &mut CaptionModel,
    cfg: &StageConfig,
    data: &TrainingData,
) -> Result<(TrainingReport, TrainerState)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = TrainerState::new(cfg.optimizer.seed);
    let mut losses = Vec::with_capacity(cfg.optimizer.steps);
    if cfg.optimizer.steps > 0 {
        let mut sampler = MixtureSampler::new(&cfg.data, &data.sources, state.rng.gen())?;
        let mut cache: HashMap<(usize, String, bool), Example> = HashMap::new();
        for step in 0..cfg.optimizer.steps {
            let mut batch = Vec::with_capacity(cfg.optimizer.batch_size);
            for _ in 0..cfg.optimizer.batch_size {
                let d = sampler.draw();
                let key = (d.source, d.sample.id.clone(), d.full_mask);
                if !cache.contains_key(&key) {
                    let img = data.image(&d.sample.image_path)?;
                    let ex = model.example_for_sample(d.sample, img, d.full_mask)?;
                    cache.insert(key.clone(), ex);
                }
                batch.push(cache[&key].clone());
            }
            let loss = train_step(model, cfg, &mut state, &batch, step)?;
            losses.push(loss);
        }
    }
    Ok((
        TrainingReport {
            stage: cfg.stage,
            losses,
            wall_time_secs: start.elapsed().as_secs_f64(),
            checksum: model.params.checksum(),
            component_checksums: component_checksums(&model.params),
        },
        state,
    ))
}

/// Like [`run_stage`] over a fixed example list: every step visits a fresh
/// shuffle of the examples in batches, cycling as needed.
pub fn run_stage_on_examples(
    model: &mut CaptionModel,
    cfg: &StageConfig,
    examples: &[Example],
) -> Result<(TrainingReport, TrainerState)> {
    cfg.validate()?;
    if examples.is_empty() && cfg.optimizer.steps > 0 {
        return Err(Error::EmptyTarget);
    }
    let start = Instant::now();
    let mut state = TrainerState::new(cfg.optimizer.seed);
    let mut losses = Vec::with_capacity(cfg.optimizer.steps);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.optimizer.steps {
        let mut batch = Vec::with_capacity(cfg.optimizer.batch_size);
        while batch.len() < cfg.optimizer.batch_size.min(examples.len()) {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut state.rng);
            }
            batch.push(examples[order.pop().expect("refilled above")].clone());
        }
        losses.push(train_step(model, cfg, &mut state, &batch, step)?);
    }
    Ok((
        TrainingReport {
            stage: cfg.stage,
            losses,
            wall_time_secs: start.elapsed().as_secs_f64(),
            checksum: model.params.checksum(),
            component_checksums: component_checksums(&model.params),
        },
        state,
    ))
}

fn train_step(
    model: &mut CaptionModel,
    cfg: &StageConfig,
    state: &mut TrainerState,
    batch: &[Example],
    step: usize,
) -> Result<f64> {
    let (loss, mut grads) = batch_gradients(model, batch, |c| cfg.is_trainable(c))?;
    if !loss.is_finite() || grads.values().any(|g| !g.all_finite()) {
        return Err(Error::Divergence { step, loss });
    }
    clip(&mut grads, cfg.optimizer.grad_clip);
    state.optimizer.update(&mut model.params, &grads, &cfg.optimizer);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub component: Component,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn per_component(&self) -> BTreeMap<Component, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.component).or_default() += 1;
        }
        out
    }
}

pub struct GradCheckOptions<'a> {
    pub epsilon: f64,
    pub per_component: usize,
    pub seed: u64,
    /// Fault injection: rewrites the analytic gradient of each parameter.
    pub corrupt: Option<&'a dyn Fn(&str, &mut Matrix)>,
}

impl Default for GradCheckOptions<'_> {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            per_component: 10,
            seed: 0,
            corrupt: None,
        }
    }
}

/// Relative error with a small absolute floor so that two vanishing
/// gradients compare equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic gradients of `loss` against central differences on
/// randomly chosen scalar coordinates, `per_component` for every component
/// present in `params`.
pub fn check_gradients(
    params: &ParamStore,
    loss: impl Fn(&mut Tape, &Bindings) -> Result<Var>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut t = Tape::new();
    let b = params.bind(&mut t, |_| true);
    let root = loss(&mut t, &b)?;
    let mut grads = t.backward(root);
    let mut analytic: BTreeMap<String, Matrix> = BTreeMap::new();
    for (name, p) in params.iter() {
        let mut g = grads
            .take(b.var(name))
            .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()));
        if let Some(corrupt) = opts.corrupt {
            corrupt(name, &mut g);
        }
        analytic.insert(name.to_string(), g);
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let b = store.bind(&mut t, |_| false);
        let root = loss(&mut t, &b)?;
        Ok(t.value(root).get(0, 0))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    let mut scratch = params.clone();
    for comp in Component::ALL {
        let names: Vec<(&str, usize)> = params
            .iter()
            .filter(|(_, p)| p.component == comp)
            .map(|(n, p)| (n, p.value.len()))
            .collect();
        let total: usize = names.iter().map(|(_, n)| n).sum();
        if total == 0 {
            continue;
        }
        // Sample coordinates uniformly over the component's scalars, without
        // repetition where possible.
        let mut picks: Vec<usize> = (0..total).collect();
        picks.shuffle(&mut rng);
        picks.truncate(opts.per_component.min(total));
        for flat in picks {
            let mut k = flat;
            let (name, idx) = names
                .iter()
                .find_map(|&(n, len)| {
                    if k < len {
                        Some((n, k))
                    } else {
                        k -= len;
                        None
                    }
                })
                .expect("index within component");
            let orig = params.get(name).data()[idx];
            scratch.get_mut(name).data_mut()[idx] = orig + opts.epsilon;
            let up = eval(&scratch)?;
            scratch.get_mut(name).data_mut()[idx] = orig - opts.epsilon;
            let down = eval(&scratch)?;
            scratch.get_mut(name).data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            let a = analytic[name].data()[idx];
            entries.push(GradCheckEntry {
                param: name.to_string(),
                component: comp,
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { entries, max_rel_error })
}

/// Gradient check of the captioning loss of one example through the full
/// pipeline.
pub fn grad_check(model: &CaptionModel, example: &Example, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    check_gradients(&model.params, |t, b| model.loss_on_tape(t, b, example), opts)
}

/// Everything needed to resume: model, vocabulary, optimizer and RNG state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: u8,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub params: ParamStore,
    pub trainer: TrainerState,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

impl Checkpoint {
    pub fn new(stage: u8, model: &CaptionModel, trainer: TrainerState) -> Self {
        Self {
            stage,
            config: model.config.clone(),
            vocab: model.vocab.tokens().to_vec(),
            params: model.params.clone(),
            trainer,
        }
    }

    pub fn model(&self) -> Result<CaptionModel> {
        self.config.validate()?;
        Ok(CaptionModel {
            config: self.config.clone(),
            vocab: Vocabulary::from_tokens(self.vocab.clone())?,
            params: self.params.clone(),
        })
    }

    /// Writes `checkpoint.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CHECKPOINT_FILE), serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Reads `dir/checkpoint.json`, or `dir` itself if it is a file.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
        Ok(serde_json::from_str(&std::fs::read_to_string(file)?)?)
    }
}
