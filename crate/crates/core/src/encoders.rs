//! Mask-aware low-resolution encoder and the two high-resolution encoders.
//!
//! The low-resolution path adds a single-channel alpha patch embedding of the
//! region mask to the RGB patch embedding before the transformer trunk. The
//! alpha projection starts at zero, so an untrained model encodes every mask
//! identically. The high-resolution encoders are small stand-ins with the
//! output geometry of the real backbones: a patchify-then-downsample
//! convolution stack, and a windowed patch transformer whose finer grid is
//! mean-pooled onto the shared `hr_grid`.

use std::path::Path;

use image::imageops::FilterType;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, GATHER_ZERO};
use crate::error::{Error, Result};
use crate::geometry::{mask_boundary, mask_to_bbox, resize_mask, BinaryMask};
use crate::nn::{self, add_block, add_layer_norm, add_linear, Linear};
use crate::params::{init_scaled, Bindings, Component, ParamStore};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub lr_size: usize,
    pub hr_size: usize,
    pub patch_size: usize,
    pub lr_channels: usize,
    pub hr1_channels: usize,
    pub hr2_channels: usize,
    pub hr_grid: usize,
    pub depth: usize,
    pub heads: usize,
    pub seed: u64,
    pub mlp_ratio: usize,
    /// Width of the convolutional encoder's patchify stem.
    pub hr1_stem_channels: usize,
    /// The windowed-transformer encoder runs on a `hr_grid·sam_pool` grid.
    pub sam_pool: usize,
    /// Attention window side in tokens; 0 means global attention.
    pub sam_window: usize,
    pub image_mean: [f64; 3],
    pub image_std: [f64; 3],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            lr_size: 336,
            hr_size: 1024,
            patch_size: 14,
            lr_channels: 16,
            hr1_channels: 16,
            hr2_channels: 16,
            hr_grid: 32,
            depth: 1,
            heads: 2,
            seed: 0,
            mlp_ratio: 2,
            hr1_stem_channels: 8,
            sam_pool: 2,
            sam_window: 8,
            image_mean: [0.0; 3],
            image_std: [1.0; 3],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.lr_size % self.patch_size != 0 {
            return fail(format!(
                "lr_size {} must be divisible by patch_size {}",
                self.lr_size, self.patch_size
            ));
        }
        if self.hr_grid == 0 || self.hr_size % self.hr_grid != 0 {
            return fail(format!(
                "hr_size {} must be divisible by hr_grid {}",
                self.hr_size, self.hr_grid
            ));
        }
        for (name, c) in [
            ("lr_channels", self.lr_channels),
            ("hr1_channels", self.hr1_channels),
            ("hr2_channels", self.hr2_channels),
            ("hr1_stem_channels", self.hr1_stem_channels),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("sam_pool", self.sam_pool),
        ] {
            if c == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        for (name, c) in [("lr_channels", self.lr_channels), ("hr2_channels", self.hr2_channels)] {
            if c % self.heads != 0 {
                return fail(format!("heads {} must divide {name} {c}", self.heads));
            }
        }
        let sam_grid = self.sam_grid();
        if self.hr_size % sam_grid != 0 {
            return fail(format!(
                "hr_size {} must be divisible by hr_grid*sam_pool {sam_grid}",
                self.hr_size
            ));
        }
        if self.sam_window != 0 && self.sam_window < sam_grid && sam_grid % self.sam_window != 0 {
            return fail(format!(
                "sam_window {} must divide the encoder grid {sam_grid}",
                self.sam_window
            ));
        }
        if self.image_std.iter().any(|&s| s == 0.0) {
            return fail("image_std entries must be non-zero".into());
        }
        Ok(())
    }

    /// Patch grid side `H' = W'` of the low-resolution encoder.
    pub fn lr_grid(&self) -> usize {
        self.lr_size / self.patch_size
    }

    /// `N = H'·W'`.
    pub fn num_patches(&self) -> usize {
        self.lr_grid() * self.lr_grid()
    }

    /// `N' = H''·W''`.
    pub fn hr_tokens(&self) -> usize {
        self.hr_grid * self.hr_grid
    }

    /// Strides of the convolutional encoder's stem and downsampling layer.
    pub fn hr1_strides(&self) -> (usize, usize) {
        let total = self.hr_size / self.hr_grid;
        let stem = [4, 2, 1].into_iter().find(|s| total % s == 0).unwrap_or(1);
        (stem, total / stem)
    }

    pub fn sam_grid(&self) -> usize {
        self.hr_grid * self.sam_pool
    }

    pub fn sam_patch(&self) -> usize {
        self.hr_size / self.sam_grid()
    }

    fn sam_windows(&self) -> Option<Vec<Vec<usize>>> {
        let g = self.sam_grid();
        let w = self.sam_window;
        if w == 0 || w >= g {
            return None;
        }
        let mut windows = Vec::new();
        for wy in 0..g / w {
            for wx in 0..g / w {
                let mut idx = Vec::with_capacity(w * w);
                for dy in 0..w {
                    for dx in 0..w {
                        idx.push((wy * w + dy) * g + wx * w + dx);
                    }
                }
                windows.push(idx);
            }
        }
        Some(windows)
    }
}

/// Three-channel image with values in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "image buffer of {} values does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        Self {
            height: h as usize,
            width: w as usize,
            data: rgb.into_raw().into_iter().map(f64::from).collect(),
        }
    }

    /// Loads a PNG or JPEG at its native resolution.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_dynamic(&image::open(path)?))
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Bilinear resample to `height × width`.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let buf = image::Rgb32FImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("buffer length matches dimensions");
        let out = image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Self {
            height,
            width,
            data: out.into_raw().into_iter().map(f64::from).collect(),
        }
    }

    fn normalized(&self, mean: [f64; 3], std: [f64; 3]) -> Vec<f64> {
        self.data
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i % 3]) / std[i % 3])
            .collect()
    }
}

/// Tokens on a spatial grid, one row per token in row-major grid order. With
/// `class_token`, row 0 is a non-spatial class token and the grid starts at
/// row 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub class_token: bool,
    pub features: Matrix,
}

impl FeatureMap {
    pub fn new(grid_h: usize, grid_w: usize, class_token: bool, features: Matrix) -> Result<Self> {
        let expected = grid_h * grid_w + class_token as usize;
        if features.rows() != expected {
            return Err(Error::Shape(format!(
                "{} tokens for a {grid_h}x{grid_w} grid (class token: {class_token})",
                features.rows()
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            class_token,
            features,
        })
    }

    pub fn tokens(&self) -> usize {
        self.features.rows()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }
}

/// How the region is presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferralFormat {
    #[default]
    Mask,
    /// The mask is replaced by its filled bounding box.
    Bbox,
    /// The mask outline is drawn on the image and the mask becomes all-ones.
    Contour,
}

pub const CONTOUR_COLOR: [f64; 3] = [1.0, 0.0, 0.0];

/// Applies a referral format to an (image, mask) pair of equal size.
pub fn render_referral(
    mask: &BinaryMask,
    format: ReferralFormat,
    img: &RgbImage,
) -> Result<(RgbImage, BinaryMask)> {
    if mask.height() != img.height() || mask.width() != img.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            img.height(),
            img.width()
        )));
    }
    if mask.is_empty() {
        return Err(Error::EmptyRegion);
    }
    match format {
        ReferralFormat::Mask => Ok((img.clone(), mask.clone())),
        ReferralFormat::Bbox => {
            let b = mask_to_bbox(mask)?;
            Ok((img.clone(), BinaryMask::from_box(mask.height(), mask.width(), &b)))
        }
        ReferralFormat::Contour => Ok((
            draw_contour(img, mask),
            BinaryMask::ones(mask.height(), mask.width()),
        )),
    }
}

/// Draws the mask outline onto an image of any size; the mask is resampled
/// to the image first.
pub fn draw_contour(img: &RgbImage, mask: &BinaryMask) -> RgbImage {
    let scaled = resize_mask(mask, img.height(), img.width()).expect("image dims are positive");
    let edge = mask_boundary(&scaled);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if edge.get(y, x) {
                out.set(y, x, CONTOUR_COLOR);
            }
        }
    }
    out
}

/// Non-overlapping `p × p` patches as rows; columns ordered (dy, dx, channel).
pub fn patchify(data: &[f64], height: usize, width: usize, channels: usize, p: usize) -> Matrix {
    let (gh, gw) = (height / p, width / p);
    let mut out = Matrix::zeros(gh * gw, p * p * channels);
    for gy in 0..gh {
        for gx in 0..gw {
            let row = out.row_mut(gy * gw + gx);
            let mut k = 0;
            for dy in 0..p {
                for dx in 0..p {
                    let base = ((gy * p + dy) * width + gx * p + dx) * channels;
                    row[k..k + channels].copy_from_slice(&data[base..base + channels]);
                    k += channels;
                }
            }
        }
    }
    out
}

/// Gather indices that patchify a `grid × grid × channels` token matrix with
/// kernel = stride = `k`, matching [`patchify`]'s column order.
fn patchify_index(grid: usize, channels: usize, k: usize) -> (usize, usize, Vec<usize>) {
    let og = grid / k;
    let cols = k * k * channels;
    let mut index = vec![GATHER_ZERO; og * og * cols];
    for oy in 0..og {
        for ox in 0..og {
            let base = (oy * og + ox) * cols;
            let mut j = 0;
            for dy in 0..k {
                for dx in 0..k {
                    let src = ((oy * k + dy) * grid + ox * k + dx) * channels;
                    for ch in 0..channels {
                        index[base + j] = src + ch;
                        j += 1;
                    }
                }
            }
        }
    }
    (og * og, cols, index)
}

fn check_image(img: &RgbImage, size: usize, what: &str) -> Result<()> {
    if img.height() != size || img.width() != size {
        return Err(Error::Config(format!(
            "{what} image is {}x{}, expected {size}x{size}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

fn check_mask(mask: &BinaryMask, size: usize) -> Result<()> {
    if mask.height() != size || mask.width() != size {
        return Err(Error::Config(format!(
            "mask is {}x{}, expected {size}x{size}",
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

fn check_patch(size: usize, patch: usize) -> Result<()> {
    if patch == 0 || size % patch != 0 {
        return Err(Error::Config(format!("size {size} is not divisible by patch {patch}")));
    }
    Ok(())
}

/// RGB patch embedding `E_patch` in grid form.
pub fn embed_patches(img: &RgbImage, patch_size: usize, conv: &Linear) -> Result<FeatureMap> {
    if img.height() != img.width() {
        return Err(Error::Config("images must be square".into()));
    }
    check_patch(img.height(), patch_size)?;
    let cols = patchify(img.data(), img.height(), img.width(), 3, patch_size);
    if conv.input_dim() != cols.cols() {
        return Err(Error::Shape(format!(
            "patch embedding expects {} inputs, got {}",
            conv.input_dim(),
            cols.cols()
        )));
    }
    let g = img.height() / patch_size;
    let mut t = Tape::new();
    let x = t.constant(cols);
    let l = conv.on_tape(&mut t);
    let y = nn::linear(&mut t, l, x);
    FeatureMap::new(g, g, false, t.value(y).clone())
}

/// Alpha (mask) patch embedding `E_mask` in grid form.
pub fn embed_mask(mask: &BinaryMask, patch_size: usize, conv: &Linear) -> Result<FeatureMap> {
    if mask.height() != mask.width() {
        return Err(Error::Config("masks must be square".into()));
    }
    check_patch(mask.height(), patch_size)?;
    embed_mask_plane(&mask.to_f64(), mask.height(), patch_size, conv)
}

/// [`embed_mask`] over an arbitrary real-valued `size × size` plane.
pub fn embed_mask_plane(
    plane: &[f64],
    size: usize,
    patch_size: usize,
    conv: &Linear,
) -> Result<FeatureMap> {
    check_patch(size, patch_size)?;
    if plane.len() != size * size {
        return Err(Error::Shape("mask plane length does not match size".into()));
    }
    let cols = patchify(plane, size, size, 1, patch_size);
    if conv.input_dim() != cols.cols() {
        return Err(Error::Shape(format!(
            "alpha embedding expects {} inputs, got {}",
            conv.input_dim(),
            cols.cols()
        )));
    }
    let g = size / patch_size;
    let mut t = Tape::new();
    let x = t.constant(cols);
    let l = conv.on_tape(&mut t);
    let y = nn::linear(&mut t, l, x);
    FeatureMap::new(g, g, false, t.value(y).clone())
}

/// `Flatten(E_patch + E_mask)`: `N × C`, row-major over the grid.
pub fn combine_and_flatten(e_patch: &FeatureMap, e_mask: &FeatureMap) -> Result<Matrix> {
    if (e_patch.grid_h, e_patch.grid_w, e_patch.channels())
        != (e_mask.grid_h, e_mask.grid_w, e_mask.channels())
        || e_patch.class_token
        || e_mask.class_token
    {
        return Err(Error::Shape(format!(
            "patch grid {}x{}x{} vs mask grid {}x{}x{}",
            e_patch.grid_h,
            e_patch.grid_w,
            e_patch.channels(),
            e_mask.grid_h,
            e_mask.grid_w,
            e_mask.channels()
        )));
    }
    let mut out = e_patch.features.clone();
    out.add_assign(&e_mask.features);
    Ok(out)
}

/// `[E_class; E_seq] + E_pos`.
pub fn add_class_and_positional(seq: &Matrix, class: &Matrix, pos: &Matrix) -> Result<Matrix> {
    let c = seq.cols();
    if class.shape() != (1, c) {
        return Err(Error::Shape(format!("class embedding must be 1x{c}")));
    }
    if pos.shape() != (seq.rows() + 1, c) {
        return Err(Error::Shape(format!(
            "positional embedding is {}x{}, expected {}x{c}",
            pos.rows(),
            pos.cols(),
            seq.rows() + 1
        )));
    }
    let mut out = Matrix::zeros(seq.rows() + 1, c);
    for j in 0..c {
        out.set(0, j, class.get(0, j) + pos.get(0, j));
    }
    for i in 0..seq.rows() {
        for j in 0..c {
            out.set(i + 1, j, seq.get(i, j) + pos.get(i + 1, j));
        }
    }
    Ok(out)
}

/// Registers every encoder parameter. The alpha projection is zero.
pub fn init_params(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let p = cfg.patch_size;
    let c = cfg.lr_channels;
    let trunk = Component::LrEncoderTrunk;
    add_linear(store, rng, "lr.patch", trunk, 3 * p * p, c);
    store.insert("lr.alpha.weight", Component::AlphaConv, Matrix::zeros(p * p, c));
    store.insert("lr.alpha.bias", Component::AlphaConv, Matrix::zeros(1, c));
    store.insert("lr.class", trunk, init_scaled(rng, 1, c, 0.02));
    store.insert("lr.pos", trunk, init_scaled(rng, cfg.num_patches() + 1, c, 0.02));
    add_layer_norm(store, "lr.ln_pre", trunk, c);
    for i in 0..cfg.depth {
        add_block(store, rng, &format!("lr.block{i}"), trunk, c, c * cfg.mlp_ratio);
    }

    let (s1, s2) = cfg.hr1_strides();
    let hr1 = Component::HrEncoder1;
    add_linear(store, rng, "hr1.stem", hr1, 3 * s1 * s1, cfg.hr1_stem_channels);
    add_layer_norm(store, "hr1.stem_ln", hr1, cfg.hr1_stem_channels);
    add_linear(
        store,
        rng,
        "hr1.down",
        hr1,
        s2 * s2 * cfg.hr1_stem_channels,
        cfg.hr1_channels,
    );

    let hr2 = Component::HrEncoder2;
    let sp = cfg.sam_patch();
    let c2 = cfg.hr2_channels;
    let g2 = cfg.sam_grid();
    add_linear(store, rng, "hr2.patch", hr2, 3 * sp * sp, c2);
    store.insert("hr2.pos", hr2, init_scaled(rng, g2 * g2, c2, 0.02));
    for i in 0..cfg.depth {
        add_block(store, rng, &format!("hr2.block{i}"), hr2, c2, c2 * cfg.mlp_ratio);
    }
    add_layer_norm(store, "hr2.neck_ln", hr2, c2);
    add_linear(store, rng, "hr2.neck", hr2, c2, c2);
}

/// `F_M`: `(N + 1) × C_M`, class token first.
pub(crate) fn lr_encoder_on_tape(
    t: &mut Tape,
    b: &Bindings,
    cfg: &EncoderConfig,
    img: &RgbImage,
    mask: &BinaryMask,
) -> Result<Var> {
    check_image(img, cfg.lr_size, "low-resolution")?;
    check_mask(mask, cfg.lr_size)?;
    let p = cfg.patch_size;
    let s = cfg.lr_size;
    let pixels = img.normalized(cfg.image_mean, cfg.image_std);
    let x = t.constant(patchify(&pixels, s, s, 3, p));
    let e_patch = nn::linear(t, b.linear("lr.patch"), x);
    let m = t.constant(patchify(&mask.to_f64(), s, s, 1, p));
    let e_mask = nn::linear(t, b.linear("lr.alpha"), m);
    let seq = t.add(e_patch, e_mask);
    let with_class = t.concat_rows(&[b.var("lr.class"), seq]);
    let mut h = t.add(with_class, b.var("lr.pos"));
    h = nn::layer_norm(t, b.layer_norm("lr.ln_pre"), h);
    for i in 0..cfg.depth {
        let blk = b.block(&format!("lr.block{i}"));
        h = nn::block(t, &blk, h, cfg.heads, false, None);
    }
    Ok(h)
}

/// `F_HR1`: `N' × C_HR1`.
pub(crate) fn hr_conv_on_tape(
    t: &mut Tape,
    b: &Bindings,
    cfg: &EncoderConfig,
    img: &RgbImage,
) -> Result<Var> {
    check_image(img, cfg.hr_size, "high-resolution")?;
    let (s1, s2) = cfg.hr1_strides();
    let s = cfg.hr_size;
    let pixels = img.normalized(cfg.image_mean, cfg.image_std);
    let x = t.constant(patchify(&pixels, s, s, 3, s1));
    let h = nn::linear(t, b.linear("hr1.stem"), x);
    let h = nn::layer_norm(t, b.layer_norm("hr1.stem_ln"), h);
    let h = t.gelu(h);
    let (rows, cols, index) = patchify_index(s / s1, cfg.hr1_stem_channels, s2);
    let h = t.gather_elems(h, rows, cols, index);
    Ok(nn::linear(t, b.linear("hr1.down"), h))
}

/// `F_HR2`: `N' × C_HR2`.
pub(crate) fn hr_sam_on_tape(
    t: &mut Tape,
    b: &Bindings,
    cfg: &EncoderConfig,
    img: &RgbImage,
) -> Result<Var> {
    check_image(img, cfg.hr_size, "high-resolution")?;
    let sp = cfg.sam_patch();
    let s = cfg.hr_size;
    let pixels = img.normalized(cfg.image_mean, cfg.image_std);
    let x = t.constant(patchify(&pixels, s, s, 3, sp));
    let h = nn::linear(t, b.linear("hr2.patch"), x);
    let mut h = t.add(h, b.var("hr2.pos"));
    let windows = cfg.sam_windows();
    for i in 0..cfg.depth {
        let blk = b.block(&format!("hr2.block{i}"));
        h = nn::block(t, &blk, h, cfg.heads, false, windows.as_deref());
    }
    let pooled = mean_pool_on_tape(t, h, cfg.sam_grid(), cfg.sam_pool);
    let pooled = nn::layer_norm(t, b.layer_norm("hr2.neck_ln"), pooled);
    Ok(nn::linear(t, b.linear("hr2.neck"), pooled))
}

/// Mean-pools a `grid × grid` token matrix by `k × k` blocks.
fn mean_pool_on_tape(t: &mut Tape, x: Var, grid: usize, k: usize) -> Var {
    if k == 1 {
        return x;
    }
    let og = grid / k;
    let mut acc: Option<Var> = None;
    for dy in 0..k {
        for dx in 0..k {
            let index = (0..og * og)
                .map(|o| {
                    let (oy, ox) = (o / og, o % og);
                    (oy * k + dy) * grid + ox * k + dx
                })
                .collect();
            let part = t.gather_rows(x, index);
            acc = Some(match acc {
                None => part,
                Some(a) => t.add(a, part),
            });
        }
    }
    t.scale(acc.expect("k >= 1"), 1.0 / (k * k) as f64)
}

fn run_inference(
    store: &ParamStore,
    f: impl FnOnce(&mut Tape, &Bindings) -> Result<Var>,
) -> Result<Matrix> {
    let mut t = Tape::new();
    let b = store.bind(&mut t, |_| false);
    let out = f(&mut t, &b)?;
    Ok(t.value(out).clone())
}

/// Mask-aware encoding `F_M` with `N + 1` tokens.
pub fn encode_mask_aware(
    cfg: &EncoderConfig,
    store: &ParamStore,
    img: &RgbImage,
    mask: &BinaryMask,
) -> Result<FeatureMap> {
    cfg.validate()?;
    let f = run_inference(store, |t, b| lr_encoder_on_tape(t, b, cfg, img, mask))?;
    FeatureMap::new(cfg.lr_grid(), cfg.lr_grid(), true, f)
}

pub fn encode_hr_conv(cfg: &EncoderConfig, store: &ParamStore, img: &RgbImage) -> Result<FeatureMap> {
    cfg.validate()?;
    let f = run_inference(store, |t, b| hr_conv_on_tape(t, b, cfg, img))?;
    FeatureMap::new(cfg.hr_grid, cfg.hr_grid, false, f)
}

pub fn encode_hr_sam(cfg: &EncoderConfig, store: &ParamStore, img: &RgbImage) -> Result<FeatureMap> {
    cfg.validate()?;
    let f = run_inference(store, |t, b| hr_sam_on_tape(t, b, cfg, img))?;
    FeatureMap::new(cfg.hr_grid, cfg.hr_grid, false, f)
}
