use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use maskcap::dataset::{load_samples, AttributeId, Split, TaskKind};
use maskcap::encoders::RgbImage;
use maskcap::error::Error;
use maskcap::geometry::BinaryMask;
use maskcap::training::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::{CaptionArgs, Status};

/// One predicted caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(alias = "candidate")]
    pub caption: String,
}

pub fn parse_task(s: &str) -> Result<TaskKind> {
    TaskKind::parse(s).ok_or_else(|| Error::Config(format!("unknown task {s:?}; expected AARC, RDC or CGIC")).into())
}

/// Attribute by name (case-insensitive) or number.
pub fn parse_attribute(s: &str) -> Result<AttributeId> {
    if let Ok(n) = s.trim().parse::<u8>() {
        return Ok(AttributeId::new(n)?);
    }
    AttributeId::from_name(s.trim()).ok_or_else(|| Error::Config(format!("unknown attribute {s:?}")).into())
}

pub fn run(args: &CaptionArgs) -> Result<Status> {
    let model = Checkpoint::load(&args.checkpoint)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", args.checkpoint.display())))?
        .model()?;
    if let Some(dataset) = &args.dataset {
        return caption_dataset(&model, dataset, args);
    }
    let task = parse_task(args.task.as_deref().expect("clap requires --task"))?;
    let attribute = args.attribute.as_deref().map(parse_attribute).transpose()?;
    let image_path = args.image.as_ref().expect("clap requires --image");
    let image = RgbImage::load(image_path).with_context(|| format!("loading {}", image_path.display()))?;
    let mask = match &args.mask {
        Some(p) => Some(BinaryMask::load_png(p).with_context(|| format!("loading mask {}", p.display()))?),
        None => None,
    };
    println!("{}", model.describe(&image, mask.as_ref(), task, attribute)?);
    Ok(Status::Complete)
}

fn caption_dataset(model: &maskcap::model::CaptionModel, dataset: &Path, args: &CaptionArgs) -> Result<Status> {
    let split = match args.split.as_deref() {
        None => None,
        Some("train") => Some(Split::Train),
        Some("test") => Some(Split::Test),
        Some(s) => return Err(Error::Config(format!("unknown split {s:?}")).into()),
    };
    let samples = load_samples(dataset)?.into_strict()?;
    let base = dataset.parent().unwrap_or(Path::new("."));
    let mut lines = String::new();
    let mut cache: Option<(String, RgbImage)> = None;
    for s in samples.iter().filter(|s| split.map_or(true, |sp| sp == s.split)) {
        if cache.as_ref().map_or(true, |(p, _)| *p != s.image_path) {
            let file = base.join(&s.image_path);
            let img = RgbImage::load(&file).with_context(|| format!("loading {}", file.display()))?;
            cache = Some((s.image_path.clone(), img));
        }
        let (_, img) = cache.as_ref().expect("filled above");
        let ex = model.example_for_sample(s, img, false)?;
        let p = Prediction {
            id: s.id.clone(),
            caption: model.caption_greedy(&ex)?,
        };
        lines.push_str(&serde_json::to_string(&p)?);
        lines.push('\n');
    }
    match &args.out {
        Some(out) => {
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(out, lines).with_context(|| format!("writing {}", out.display()))?
        }
        None => std::io::stdout().write_all(lines.as_bytes())?,
    }
    Ok(Status::Complete)
}
