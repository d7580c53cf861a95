//! The full captioner: mask-aware and high-resolution encoders, fusion,
//! adapter and decoder over one parameter store.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::{effective_mask, AttributeId, InstructionTemplates, RegionCaptionSample, TaskKind};
use crate::decoder::{self, shifted_targets, DecodeParams, DecoderConfig, Vocabulary};
use crate::encoders::{self, draw_contour, render_referral, EncoderConfig, ReferralFormat, RgbImage};
use crate::error::{Error, Result};
use crate::fusion::{self, fusion_width, projection_matrix, FusionKind};
use crate::geometry::{resize_mask, BinaryMask};
use crate::nn::Activation;
use crate::params::{Bindings, Component, ParamStore};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub fusion: FusionKind,
    pub referral: ReferralFormat,
    /// Shared width for the attention and sequence-append fusion variants.
    pub fusion_width: usize,
    pub adapter_hidden: usize,
    pub adapter_activation: Activation,
    pub templates: InstructionTemplates,
    pub max_caption_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            fusion: FusionKind::Channel,
            referral: ReferralFormat::Mask,
            fusion_width: 16,
            adapter_hidden: 32,
            adapter_activation: Activation::Gelu,
            templates: InstructionTemplates::default(),
            max_caption_len: 32,
        }
    }
}

impl ModelConfig {
    /// A CPU-sized model on 32×32 inputs: 16 patch tokens, a 4×4 fusion
    /// grid and a 2-layer width-32 decoder.
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig {
                lr_size: 32,
                hr_size: 32,
                patch_size: 8,
                lr_channels: 8,
                hr1_channels: 8,
                hr2_channels: 8,
                hr_grid: 4,
                depth: 1,
                heads: 2,
                mlp_ratio: 2,
                hr1_stem_channels: 8,
                sam_pool: 2,
                sam_window: 4,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                width: 32,
                depth: 2,
                heads: 4,
                mlp_ratio: 2,
            },
            fusion_width: 16,
            adapter_hidden: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.adapter_hidden == 0 || self.fusion_width == 0 {
            return Err(Error::Config("adapter_hidden and fusion_width must be positive".into()));
        }
        if self.max_caption_len == 0 {
            return Err(Error::Config("max_caption_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn source_widths(&self) -> [usize; 3] {
        let e = &self.encoder;
        [e.lr_channels, e.hr1_channels, e.hr2_channels]
    }

    /// Channel width entering the adapter.
    pub fn fused_width(&self) -> usize {
        fusion_width(self.fusion, self.source_widths(), self.fusion_width)
    }

    /// Number of visual tokens handed to the decoder.
    pub fn visual_tokens(&self) -> usize {
        let n = self.encoder.hr_tokens();
        match self.fusion {
            FusionKind::SequenceAppend => 3 * n,
            _ => n,
        }
    }
}

/// One fully prepared input: both image resolutions, the encoder-size mask
/// and token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub lr: RgbImage,
    pub hr: RgbImage,
    pub mask: BinaryMask,
    pub instruction: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl CaptionModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        encoders::init_params(&config.encoder, &mut params, &mut rng);
        fusion::init_params(
            &mut params,
            &mut rng,
            config.fusion,
            config.source_widths(),
            config.fusion_width,
            config.adapter_hidden,
            config.decoder.width,
        );
        decoder::init_params(&config.decoder, vocab.len(), &mut params, &mut rng);
        Ok(Self { config, vocab, params })
    }

    /// Replaces same-named parameters from a JSON parameter file.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let store: ParamStore = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        self.params.overlay(&store)
    }

    /// Builds an example from images already at encoder size and a mask at
    /// the low-resolution size, applying the configured referral format.
    pub fn example(
        &self,
        lr: RgbImage,
        hr: RgbImage,
        mask: BinaryMask,
        instruction: &str,
        caption: &str,
    ) -> Result<Example> {
        let (lr, mask, hr) = match self.config.referral {
            ReferralFormat::Contour => {
                let (lr_drawn, full) = render_referral(&mask, ReferralFormat::Contour, &lr)?;
                let hr_drawn = draw_contour(&hr, &mask);
                (lr_drawn, full, hr_drawn)
            }
            format => {
                let (lr, m) = render_referral(&mask, format, &lr)?;
                (lr, m, hr)
            }
        };
        Ok(Example {
            lr,
            hr,
            mask,
            instruction: self.vocab.encode(instruction),
            target: self.vocab.encode(caption),
        })
    }

    /// Example for a dataset sample given its full-resolution image.
    pub fn example_for_sample(
        &self,
        sample: &RegionCaptionSample,
        image: &RgbImage,
        full_mask: bool,
    ) -> Result<Example> {
        let e = &self.config.encoder;
        let mask = effective_mask(sample, e.lr_size, full_mask)?;
        let instruction = self.config.templates.for_sample(sample)?;
        self.example(
            image.resize(e.lr_size, e.lr_size),
            image.resize(e.hr_size, e.hr_size),
            mask,
            &instruction,
            &sample.caption,
        )
    }

    /// Inference example for a raw image. AARC and RDC need a region mask
    /// (any size; it is resampled), CGIC takes none and sees the whole image.
    pub fn inference_example(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
        task: TaskKind,
        attribute: Option<AttributeId>,
    ) -> Result<Example> {
        let e = &self.config.encoder;
        let instruction = self.config.templates.build(task, attribute)?;
        let mask = match (task, mask) {
            (TaskKind::Cgic, None) => BinaryMask::ones(e.lr_size, e.lr_size),
            (TaskKind::Cgic, Some(_)) => return Err(Error::Config("CGIC takes no mask".into())),
            (_, None) => return Err(Error::Config(format!("{task} needs a region mask"))),
            (_, Some(m)) => {
                if m.is_empty() {
                    return Err(Error::EmptyRegion);
                }
                resize_mask(m, e.lr_size, e.lr_size)?
            }
        };
        self.example(
            image.resize(e.lr_size, e.lr_size),
            image.resize(e.hr_size, e.hr_size),
            mask,
            &instruction,
            "",
        )
    }

    /// Greedy caption of a raw image; see [`Self::inference_example`].
    pub fn describe(
        &self,
        image: &RgbImage,
        mask: Option<&BinaryMask>,
        task: TaskKind,
        attribute: Option<AttributeId>,
    ) -> Result<String> {
        self.caption_greedy(&self.inference_example(image, mask, task, attribute)?)
    }

    /// Adapted visual tokens `F_adapted` on the tape.
    pub(crate) fn visual_on_tape(&self, t: &mut Tape, b: &Bindings, ex: &Example) -> Result<Var> {
        let cfg = &self.config;
        let f_m = encoders::lr_encoder_on_tape(t, b, &cfg.encoder, &ex.lr, &ex.mask)?;
        let (rows, _) = t.shape(f_m);
        let (_, interp) = projection_matrix(rows, cfg.encoder.hr_grid)?;
        let patches = t.slice_rows(f_m, 1, rows - 1);
        let interp = t.constant(interp);
        let f_m_proj = t.matmul(interp, patches);
        let f_hr1 = encoders::hr_conv_on_tape(t, b, &cfg.encoder, &ex.hr)?;
        let f_hr2 = encoders::hr_sam_on_tape(t, b, &cfg.encoder, &ex.hr)?;
        let fused = fusion::fuse_on_tape(t, b, cfg.fusion, [f_m_proj, f_hr1, f_hr2]);
        Ok(fusion::adapter_on_tape(
            t,
            b.linear("adapter.fc1"),
            cfg.adapter_activation,
            b.linear("adapter.fc2"),
            fused,
        ))
    }

    /// Summed negative log-likelihood of one example (a `1 × 1` node).
    pub(crate) fn loss_on_tape(&self, t: &mut Tape, b: &Bindings, ex: &Example) -> Result<Var> {
        let visual = self.visual_on_tape(t, b, ex)?;
        let lp = decoder::logprobs_on_tape(t, b, &self.config.decoder, visual, &ex.instruction, &ex.target)?;
        let targets = shifted_targets(&ex.target).into_iter().map(Some).collect();
        Ok(t.neg_pick(lp, targets))
    }

    /// Batch loss: per-sample sums averaged over the batch.
    pub(crate) fn batch_loss_on_tape(&self, t: &mut Tape, b: &Bindings, batch: &[Example]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let mut total: Option<Var> = None;
        for ex in batch {
            let l = self.loss_on_tape(t, b, ex)?;
            total = Some(match total {
                None => l,
                Some(acc) => t.add(acc, l),
            });
        }
        Ok(t.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64))
    }

    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let mut t = Tape::new();
        let b = self.params.bind(&mut t, |_| false);
        let l = self.batch_loss_on_tape(&mut t, &b, batch)?;
        Ok(t.value(l).get(0, 0))
    }

    /// `F_adapted` for an example.
    pub fn adapted_features(&self, ex: &Example) -> Result<Matrix> {
        let mut t = Tape::new();
        let b = self.params.bind(&mut t, |_| false);
        let v = self.visual_on_tape(&mut t, &b, ex)?;
        Ok(t.value(v).clone())
    }

    /// Per-position log-probabilities under teacher forcing.
    pub fn teacher_forcing(&self, ex: &Example) -> Result<Matrix> {
        let mut t = Tape::new();
        let b = self.params.bind(&mut t, |_| false);
        let v = self.visual_on_tape(&mut t, &b, ex)?;
        let lp = decoder::logprobs_on_tape(&mut t, &b, &self.config.decoder, v, &ex.instruction, &ex.target)?;
        Ok(t.value(lp).clone())
    }

    pub fn caption_ids(&self, ex: &Example, params: &DecodeParams) -> Result<Vec<usize>> {
        let visual = self.adapted_features(ex)?;
        decoder::generate_ids(&self.config.decoder, &self.params, &visual, &ex.instruction, params)
    }

    pub fn caption(&self, ex: &Example, params: &DecodeParams) -> Result<String> {
        Ok(self.vocab.decode(&self.caption_ids(ex, params)?))
    }

    /// Greedy decoding up to the configured caption length.
    pub fn caption_greedy(&self, ex: &Example) -> Result<String> {
        self.caption(
            ex,
            &DecodeParams {
                max_len: self.config.max_caption_len,
                ..DecodeParams::default()
            },
        )
    }

    pub fn components(&self) -> impl Iterator<Item = Component> {
        Component::ALL.into_iter()
    }
}
