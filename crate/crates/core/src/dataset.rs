//! Region-caption records, the 18-attribute taxonomy, instruction templates,
//! per-stage source mixtures and dataset statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::RgbImage;
use crate::error::{Error, Result};
use crate::geometry::{decode_rle, encode_rle, resize_mask, BBox, BinaryMask, RunLengthEncoding};

pub const ATTRIBUTE_NAMES: [&str; 18] = [
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

/// Attribute id in `1..=18`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AttributeId(u8);

impl AttributeId {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=18).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::Config(format!("attribute id {id} is outside 1..=18")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        ATTRIBUTE_NAMES[self.0 as usize - 1]
    }

    pub fn all() -> impl Iterator<Item = AttributeId> {
        (1..=18).map(AttributeId)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ATTRIBUTE_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| AttributeId(i as u8 + 1))
    }
}

impl TryFrom<u8> for AttributeId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AttributeId> for u8 {
    fn from(a: AttributeId) -> u8 {
        a.0
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "AARC")]
    Aarc,
    #[serde(rename = "RDC")]
    Rdc,
    #[serde(rename = "CGIC")]
    Cgic,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Aarc, TaskKind::Rdc, TaskKind::Cgic];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Aarc => "AARC",
            TaskKind::Rdc => "RDC",
            TaskKind::Cgic => "CGIC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of the JSONL schema. `id` is optional and defaults to the
/// record's line number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image: String,
    pub w: usize,
    pub h: usize,
    pub entity: String,
    pub mask: Option<RunLengthEncoding>,
    pub task: TaskKind,
    pub attribute: Option<u8>,
    pub caption: String,
    pub split: Split,
}

/// A validated record.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCaptionSample {
    pub id: String,
    pub image_path: String,
    pub image_width: usize,
    pub image_height: usize,
    pub entity_id: String,
    pub mask: Option<RunLengthEncoding>,
    pub task: TaskKind,
    pub attribute: Option<AttributeId>,
    pub caption: String,
    pub split: Split,
}

impl RegionCaptionSample {
    pub fn from_record(rec: Record, default_id: String) -> std::result::Result<Self, String> {
        if rec.image.is_empty() {
            return Err("image path is empty".into());
        }
        if rec.w == 0 || rec.h == 0 {
            return Err(format!("image size {}x{} must be positive", rec.w, rec.h));
        }
        if rec.caption.trim().is_empty() {
            return Err("caption is empty".into());
        }
        let attribute = rec
            .attribute
            .map(|a| AttributeId::new(a).map_err(|e| e.to_string()))
            .transpose()?;
        match rec.task {
            TaskKind::Aarc if attribute.is_none() => {
                return Err("AARC records require an attribute".into())
            }
            TaskKind::Cgic if rec.mask.is_some() => {
                return Err("CGIC records must not carry a mask".into())
            }
            TaskKind::Cgic if attribute.is_some() => {
                return Err("CGIC records must not carry an attribute".into())
            }
            TaskKind::Aarc | TaskKind::Rdc if rec.mask.is_none() => {
                return Err(format!("{} records require a mask", rec.task))
            }
            _ => {}
        }
        if let Some(m) = &rec.mask {
            if (m.height, m.width) != (rec.h, rec.w) {
                return Err(format!(
                    "mask is {}x{} but the image is {}x{}",
                    m.width, m.height, rec.w, rec.h
                ));
            }
            m.validate().map_err(|e| e.to_string())?;
            if m.area() == 0 {
                return Err("mask is empty".into());
            }
        }
        Ok(Self {
            id: rec.id.unwrap_or(default_id),
            image_path: rec.image,
            image_width: rec.w,
            image_height: rec.h,
            entity_id: rec.entity,
            mask: rec.mask,
            task: rec.task,
            attribute,
            caption: rec.caption,
            split: rec.split,
        })
    }

    pub fn to_record(&self) -> Record {
        Record {
            id: Some(self.id.clone()),
            image: self.image_path.clone(),
            w: self.image_width,
            h: self.image_height,
            entity: self.entity_id.clone(),
            mask: self.mask.clone(),
            task: self.task,
            attribute: self.attribute.map(AttributeId::get),
            caption: self.caption.clone(),
            split: self.split,
        }
    }

    /// Fraction of the image covered by the mask (1 for global samples).
    pub fn mask_ratio(&self) -> f64 {
        match &self.mask {
            Some(m) => m.area() as f64 / (m.height * m.width) as f64,
            None => 1.0,
        }
    }
}

/// Valid samples in input order plus every rejected line.
#[derive(Debug, Default)]
pub struct Loaded {
    pub samples: Vec<RegionCaptionSample>,
    pub errors: Vec<Error>,
}

impl Loaded {
    /// Fails with the first located error, if any.
    pub fn into_strict(self) -> Result<Vec<RegionCaptionSample>> {
        match self.errors.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(self.samples),
        }
    }
}

/// Parses JSONL text; blank lines are skipped, line numbers start at 1.
pub fn parse_samples(text: &str, path: Option<&str>) -> Loaded {
    let mut out = Loaded::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let located = |message: String| Error::Ingestion {
            path: path.map(str::to_string),
            line: line_no,
            message,
        };
        let parsed = serde_json::from_str::<Record>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| RegionCaptionSample::from_record(r, line_no.to_string()));
        match parsed {
            Ok(s) => out.samples.push(s),
            Err(m) => out.errors.push(located(m)),
        }
    }
    out
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    Ok(parse_samples(&text, Some(&path.display().to_string())))
}

pub fn to_jsonl(samples: &[RegionCaptionSample]) -> String {
    let mut s = String::new();
    for sample in samples {
        s.push_str(&serde_json::to_string(&sample.to_record()).expect("records serialize"));
        s.push('\n');
    }
    s
}

/// Instruction templates; `{attribute}` is replaced by the attribute name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstructionTemplates {
    pub aarc: String,
    pub rdc: String,
    pub cgic: String,
}

impl Default for InstructionTemplates {
    fn default() -> Self {
        Self {
            aarc: "Describe the {attribute} of the masked region.".into(),
            rdc: "Provide a detailed description of the masked region.".into(),
            cgic: "Provide a comprehensive description of the entire image.".into(),
        }
    }
}

impl InstructionTemplates {
    pub fn build(&self, task: TaskKind, attribute: Option<AttributeId>) -> Result<String> {
        match (task, attribute) {
            (TaskKind::Aarc, Some(a)) => {
                if !self.aarc.contains("{attribute}") {
                    return Err(Error::Template("AARC template lacks {attribute}".into()));
                }
                Ok(self.aarc.replace("{attribute}", a.name()))
            }
            (TaskKind::Aarc, None) => Err(Error::Template("AARC requires an attribute".into())),
            (_, Some(a)) => Err(Error::Template(format!(
                "{task} takes no attribute, got {}",
                a.name()
            ))),
            (TaskKind::Rdc, None) => Ok(self.rdc.clone()),
            (TaskKind::Cgic, None) => Ok(self.cgic.clone()),
        }
    }

    /// Instruction for a sample; an RDC record's optional attribute is ignored.
    pub fn for_sample(&self, s: &RegionCaptionSample) -> Result<String> {
        let attr = if s.task == TaskKind::Aarc { s.attribute } else { None };
        self.build(s.task, attr)
    }
}

pub fn build_instruction(task: TaskKind, attribute: Option<AttributeId>) -> Result<String> {
    InstructionTemplates::default().build(task, attribute)
}

/// The mask the encoder sees: all-ones for global samples (or when
/// `force_full`, as in pre-training), otherwise the decoded mask resampled
/// to `size × size`.
pub fn effective_mask(sample: &RegionCaptionSample, size: usize, force_full: bool) -> Result<BinaryMask> {
    if force_full || sample.task == TaskKind::Cgic {
        return Ok(BinaryMask::ones(size, size));
    }
    let rle = sample.mask.as_ref().ok_or_else(|| Error::Ingestion {
        path: None,
        line: 0,
        message: format!("sample {} has no mask", sample.id),
    })?;
    let full = decode_rle(rle).map_err(|e| Error::Ingestion {
        path: None,
        line: 0,
        message: format!("sample {}: {e}", sample.id),
    })?;
    resize_mask(&full, size, size)
}

/// Loads the sample's image and resamples it to the two encoder sizes.
pub fn load_images(
    base: &Path,
    sample: &RegionCaptionSample,
    lr_size: usize,
    hr_size: usize,
) -> Result<(RgbImage, RgbImage)> {
    let img = RgbImage::load(base.join(&sample.image_path))?;
    Ok((img.resize(lr_size, lr_size), img.resize(hr_size, hr_size)))
}

/// Counts over `edges.len() - 1` bins `[e_i, e_{i+1})`; the last bin is
/// closed. Values outside the edges are not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Self {
        let bins = edges.len().saturating_sub(1);
        Self {
            edges,
            counts: vec![0; bins],
        }
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Self {
        Self::new((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
    }

    pub fn add(&mut self, v: f64) {
        let n = self.counts.len();
        if n == 0 || v < self.edges[0] || v > self.edges[n] {
            return;
        }
        let bin = (0..n).find(|&i| v < self.edges[i + 1]).unwrap_or(n - 1);
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsOptions {
    pub mask_ratio_edges: Vec<f64>,
    /// Bins over each image's longer side, in pixels.
    pub resolution_edges: Vec<f64>,
    /// Bins over the number of masked entities per image.
    pub entity_edges: Vec<f64>,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            mask_ratio_edges: Histogram::uniform(0.0, 1.0, 20).edges,
            resolution_edges: vec![0.0, 256.0, 512.0, 1024.0, 1536.0, 2048.0, 3072.0, 4096.0, 8192.0, 65536.0],
            entity_edges: (0..=11).map(|v| v as f64 + 0.5).chain([1e9]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCount {
    pub id: u8,
    pub name: String,
    pub count: usize,
    /// Share of all attribute-tagged captions.
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub captions: usize,
    pub images: usize,
    /// Distinct (image, entity) pairs that carry a mask.
    pub entities: usize,
    pub tasks: BTreeMap<TaskKind, usize>,
    pub splits: BTreeMap<Split, usize>,
    pub attributes: Vec<AttributeCount>,
    pub resolution: Histogram,
    pub mask_ratio: Histogram,
    pub entities_per_image: Histogram,
}

/// Exact counts and histograms; independent of sample order.
pub fn dataset_stats(samples: &[RegionCaptionSample], opts: &StatsOptions) -> StatsReport {
    let mut images: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut entities: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut tasks: BTreeMap<TaskKind, usize> = TaskKind::ALL.iter().map(|&t| (t, 0)).collect();
    let mut splits: BTreeMap<Split, usize> = [(Split::Train, 0), (Split::Test, 0)].into();
    let mut attr = [0usize; 18];
    for s in samples {
        images.insert(&s.image_path, (s.image_width, s.image_height));
        if s.mask.is_some() {
            entities.insert((&s.image_path, &s.entity_id), s.mask_ratio());
        }
        *tasks.entry(s.task).or_default() += 1;
        *splits.entry(s.split).or_default() += 1;
        if let Some(a) = s.attribute {
            attr[a.get() as usize - 1] += 1;
        }
    }
    let tagged: usize = attr.iter().sum();
    let attributes = AttributeId::all()
        .map(|a| {
            let count = attr[a.get() as usize - 1];
            AttributeCount {
                id: a.get(),
                name: a.name().to_string(),
                count,
                proportion: if tagged == 0 { 0.0 } else { count as f64 / tagged as f64 },
            }
        })
        .collect();

    let mut resolution = Histogram::new(opts.resolution_edges.clone());
    for &(w, h) in images.values() {
        resolution.add(w.max(h) as f64);
    }
    let mut mask_ratio = Histogram::new(opts.mask_ratio_edges.clone());
    let mut per_image: BTreeMap<&str, usize> = BTreeMap::new();
    for (&(img, _), &ratio) in &entities {
        mask_ratio.add(ratio);
        *per_image.entry(img).or_default() += 1;
    }
    let mut entities_per_image = Histogram::new(opts.entity_edges.clone());
    for &n in per_image.values() {
        entities_per_image.add(n as f64);
    }
    StatsReport {
        captions: samples.len(),
        images: images.len(),
        entities: entities.len(),
        tasks,
        splits,
        attributes,
        resolution,
        mask_ratio,
        entities_per_image,
    }
}

/// A named data source with its sampling weight and filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "one")]
    pub weight: f64,
    /// Empty means every task.
    #[serde(default)]
    pub tasks: Vec<TaskKind>,
    #[serde(default)]
    pub split: Option<Split>,
    /// Replace every mask with the full image.
    #[serde(default)]
    pub full_mask: bool,
}

fn one() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            path: None,
            weight: 1.0,
            tasks: Vec::new(),
            split: None,
            full_mask: false,
        }
    }

    pub fn accepts(&self, s: &RegionCaptionSample) -> bool {
        (self.tasks.is_empty() || self.tasks.contains(&s.task)) && self.split.map_or(true, |sp| sp == s.split)
    }
}

/// Sources with normalized positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sources: Vec<SourceSpec>,
}

impl DatasetSpec {
    pub fn new(mut sources: Vec<SourceSpec>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("a dataset needs at least one source".into()));
        }
        if let Some(s) = sources.iter().find(|s| !(s.weight > 0.0) || !s.weight.is_finite()) {
            return Err(Error::Config(format!("source {} has non-positive weight", s.name)));
        }
        let total: f64 = sources.iter().map(|s| s.weight).sum();
        for s in &mut sources {
            s.weight /= total;
        }
        Ok(Self { sources })
    }
}

pub const PRETRAIN_SOURCE: &str = "llava_pretrain";
pub const COMPOSITIONCAP: &str = "compositioncap";
pub const STAGE2_SOURCES: [&str; 5] = [COMPOSITIONCAP, "grand", "refcoco", "refcoco_plus", "refcocog"];

/// Named source slots, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceRegistry {
    pub sources: BTreeMap<String, SourceSpec>,
}

impl SourceRegistry {
    pub fn insert(&mut self, spec: SourceSpec) {
        self.sources.insert(spec.name.clone(), spec);
    }

    fn get(&self, name: &str) -> Result<&SourceSpec> {
        self.sources
            .get(name)
            .ok_or_else(|| Error::Config(format!("source {name:?} is not registered")))
    }
}

/// Stage 1: the pre-training caption source with full masks; stage 2: the
/// region sources; stage 3: the CompositionCap training split.
pub fn stage_mixture(stage: u8, registry: &SourceRegistry) -> Result<DatasetSpec> {
    match stage {
        2 => stage_mixture_with(stage, registry, &STAGE2_SOURCES),
        _ => stage_mixture_with(stage, registry, &[]),
    }
}

/// As [`stage_mixture`], with an explicit stage-2 source list.
pub fn stage_mixture_with(stage: u8, registry: &SourceRegistry, region_sources: &[&str]) -> Result<DatasetSpec> {
    match stage {
        1 => {
            let mut s = registry.get(PRETRAIN_SOURCE)?.clone();
            s.full_mask = true;
            DatasetSpec::new(vec![s])
        }
        2 => {
            let sources = region_sources
                .iter()
                .map(|n| registry.get(n).cloned())
                .collect::<Result<Vec<_>>>()?;
            DatasetSpec::new(sources)
        }
        3 => {
            let mut s = registry.get(COMPOSITIONCAP)?.clone();
            s.split = Some(Split::Train);
            s.weight = 1.0;
            DatasetSpec::new(vec![s])
        }
        _ => Err(Error::Config(format!("stage must be 1, 2 or 3, got {stage}"))),
    }
}

/// One draw from a mixture.
#[derive(Debug, Clone, Copy)]
pub struct Draw<'a> {
    pub source: usize,
    pub sample: &'a RegionCaptionSample,
    pub full_mask: bool,
}

/// Seeded weighted sampling over the filtered samples of each source.
#[derive(Debug)]
pub struct MixtureSampler<'a> {
    spec: DatasetSpec,
    pools: Vec<Vec<&'a RegionCaptionSample>>,
    weights: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl<'a> MixtureSampler<'a> {
    /// `data` holds the samples of each source, keyed by source name.
    pub fn new(spec: &DatasetSpec, data: &'a BTreeMap<String, Vec<RegionCaptionSample>>, seed: u64) -> Result<Self> {
        let mut pools = Vec::new();
        let mut weights = Vec::new();
        for s in &spec.sources {
            let pool: Vec<_> = data
                .get(&s.name)
                .ok_or_else(|| Error::Config(format!("no data loaded for source {:?}", s.name)))?
                .iter()
                .filter(|x| s.accepts(x))
                .collect();
            weights.push(if pool.is_empty() { 0.0 } else { s.weight });
            pools.push(pool);
        }
        let weights = WeightedIndex::new(&weights)
            .map_err(|_| Error::Config("every source in the mixture is empty".into()))?;
        Ok(Self {
            spec: spec.clone(),
            pools,
            weights,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn draw(&mut self) -> Draw<'a> {
        let source = self.weights.sample(&mut self.rng);
        let pool = &self.pools[source];
        let sample = pool[self.rng.gen_range(0..pool.len())];
        Draw {
            source,
            sample,
            full_mask: self.spec.sources[source].full_mask,
        }
    }
}

const COLORS: [(&str, [f64; 3]); 6] = [
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.75, 0.2]),
    ("blue", [0.1, 0.2, 0.9]),
    ("yellow", [0.95, 0.9, 0.1]),
    ("purple", [0.55, 0.1, 0.7]),
    ("white", [1.0, 1.0, 1.0]),
];

const BACKGROUNDS: [(&str, [f64; 3]); 3] = [
    ("gray", [0.5, 0.5, 0.5]),
    ("black", [0.05, 0.05, 0.05]),
    ("brown", [0.45, 0.3, 0.15]),
];

const SLOTS: [&str; 3] = ["left", "middle", "right"];

/// Generator-side counts of a synthetic fixture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureCounts {
    pub captions: usize,
    pub images: usize,
    pub entities: usize,
    pub per_task: BTreeMap<TaskKind, usize>,
    pub per_split: BTreeMap<Split, usize>,
    /// Index `i` counts attribute `i + 1`.
    pub per_attribute: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub samples: Vec<RegionCaptionSample>,
    /// Image path (as referenced by samples) and pixels.
    pub images: Vec<(String, RgbImage)>,
    pub counts: FixtureCounts,
}

impl Fixture {
    pub fn image(&self, path: &str) -> Option<&RgbImage> {
        self.images.iter().find(|(p, _)| p == path).map(|(_, i)| i)
    }

    /// Writes `images/*.png` and `dataset.jsonl` under `dir`; returns the
    /// JSONL path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.join("images"))?;
        for (path, img) in &self.images {
            img.save_png(dir.join(path))?;
        }
        let out = dir.join("dataset.jsonl");
        std::fs::write(&out, to_jsonl(&self.samples))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureOptions {
    pub records: usize,
    pub seed: u64,
    /// Allowed image sides in pixels.
    pub sizes: Vec<usize>,
    /// Probability that an image gets a global caption.
    pub global_rate: f64,
    /// Probability that an entity gets a dense caption besides its attributes.
    pub dense_rate: f64,
    /// Every n-th image goes to the test split (0 = none).
    pub test_every: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            records: 100,
            seed: 0,
            sizes: vec![32, 48, 64],
            global_rate: 0.3,
            dense_rate: 0.3,
            test_every: 5,
        }
    }
}

fn attribute_word(a: AttributeId) -> String {
    a.name()
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("")
        .to_lowercase()
}

/// Images of coloured rectangles on plain backgrounds, with one entity per
/// rectangle. Captions are a deterministic function of what is visible, the
/// region and the attribute, so a model can fit them exactly.
pub fn synthetic_fixture(opts: &FixtureOptions) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut counts = FixtureCounts {
        per_attribute: vec![0; 18],
        ..FixtureCounts::default()
    };
    let mut samples = Vec::new();
    let mut images = Vec::new();
    let mut next_attr = 0usize;
    let mut image_idx = 0usize;
    while samples.len() < opts.records {
        let w = opts.sizes[rng.gen_range(0..opts.sizes.len())];
        let h = opts.sizes[rng.gen_range(0..opts.sizes.len())];
        let (bg_name, bg) = BACKGROUNDS[rng.gen_range(0..BACKGROUNDS.len())];
        let n_entities = rng.gen_range(1..=3);
        let mut slots: Vec<usize> = (0..3).collect();
        for i in (1..3).rev() {
            slots.swap(i, rng.gen_range(0..=i));
        }
        slots.truncate(n_entities);
        slots.sort();
        let mut palette: Vec<usize> = (0..COLORS.len()).collect();
        for i in (1..palette.len()).rev() {
            palette.swap(i, rng.gen_range(0..=i));
        }
        let split = if opts.test_every > 0 && image_idx % opts.test_every == opts.test_every - 1 {
            Split::Test
        } else {
            Split::Train
        };
        let path = format!("images/img{image_idx:04}.png");
        let mut img = RgbImage::filled(h, w, bg);
        let mut entities = Vec::new();
        for (k, &slot) in slots.iter().enumerate() {
            let (color_name, color) = COLORS[palette[k]];
            let x0 = slot * w / 3 + 1;
            let x1 = (slot + 1) * w / 3 - 1;
            let tall = rng.gen_bool(0.5);
            let (y0, y1) = if tall { (h / 8, h - h / 8) } else { (h / 3, h - h / 3) };
            let b = BBox::new(x0, y0, x1, y1).expect("slot boxes are well formed");
            for y in y0..y1 {
                for x in x0..x1 {
                    img.set(y, x, color);
                }
            }
            let shape = if tall { "tall block" } else { "block" };
            entities.push((format!("e{k}"), color_name, shape, SLOTS[slot], b));
        }

        let mut image_used = false;
        let emit = |s: RegionCaptionSample, samples: &mut Vec<RegionCaptionSample>, counts: &mut FixtureCounts| {
            *counts.per_task.entry(s.task).or_default() += 1;
            *counts.per_split.entry(s.split).or_default() += 1;
            if let Some(a) = s.attribute {
                counts.per_attribute[a.get() as usize - 1] += 1;
            }
            counts.captions += 1;
            samples.push(s);
        };
        for (entity, color, shape, slot, b) in &entities {
            if samples.len() >= opts.records {
                break;
            }
            let mask = encode_rle(&BinaryMask::from_box(h, w, b));
            let mut entity_used = false;
            let n_attr = rng.gen_range(1..=2);
            for _ in 0..n_attr {
                if samples.len() >= opts.records {
                    break;
                }
                let a = AttributeId::new((next_attr % 18) as u8 + 1).expect("in range");
                next_attr += 1;
                let s = RegionCaptionSample {
                    id: format!("s{:05}", samples.len()),
                    image_path: path.clone(),
                    image_width: w,
                    image_height: h,
                    entity_id: entity.clone(),
                    mask: Some(mask.clone()),
                    task: TaskKind::Aarc,
                    attribute: Some(a),
                    caption: format!("{}: {color} {shape} on the {slot}.", attribute_word(a)),
                    split,
                };
                emit(s, &mut samples, &mut counts);
                entity_used = true;
            }
            if samples.len() < opts.records && rng.gen_bool(opts.dense_rate) {
                let s = RegionCaptionSample {
                    id: format!("s{:05}", samples.len()),
                    image_path: path.clone(),
                    image_width: w,
                    image_height: h,
                    entity_id: entity.clone(),
                    mask: Some(mask.clone()),
                    task: TaskKind::Rdc,
                    attribute: None,
                    caption: format!("a {color} {shape} on the {slot} of a {bg_name} image."),
                    split,
                };
                emit(s, &mut samples, &mut counts);
                entity_used = true;
            }
            if entity_used {
                counts.entities += 1;
                image_used = true;
            }
        }
        if samples.len() < opts.records && rng.gen_bool(opts.global_rate) {
            let names: Vec<&str> = entities.iter().map(|e| e.1).collect();
            let s = RegionCaptionSample {
                id: format!("s{:05}", samples.len()),
                image_path: path.clone(),
                image_width: w,
                image_height: h,
                entity_id: "image".into(),
                mask: None,
                task: TaskKind::Cgic,
                attribute: None,
                caption: format!("a {bg_name} image with {} blocks: {}.", names.len(), names.join(" and ")),
                split,
            };
            emit(s, &mut samples, &mut counts);
            image_used = true;
        }
        if image_used {
            counts.images += 1;
            images.push((path, img));
        }
        image_idx += 1;
    }
    Fixture {
        samples,
        images,
        counts,
    }
}
