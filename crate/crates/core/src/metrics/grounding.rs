use std::collections::HashMap;

use crate::encoders::RgbImage;
use crate::error::{Error, Result};
use crate::geometry::{iou_boxes, BBox};

/// IoU threshold of Acc@0.5.
pub const ACC_THRESHOLD: f64 = 0.5;

/// Fraction of index-aligned pairs with IoU ≥ `threshold`. A pair of
/// zero-area boxes has no defined IoU and counts as a miss.
pub fn grounding_acc(pred: &[BBox], gold: &[BBox], threshold: f64) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyEval);
    }
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| iou_boxes(p, g).is_ok_and(|iou| iou >= threshold))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Predicts the box a caption refers to.
pub trait Grounder {
    fn ground(&self, image: &RgbImage, caption: &str) -> Result<BBox>;
}

/// Looks the caption up in a fixed table; stands in for a trained grounder.
#[derive(Debug, Clone, Default)]
pub struct OracleGrounder {
    pub boxes: HashMap<String, BBox>,
}

impl Grounder for OracleGrounder {
    fn ground(&self, _image: &RgbImage, caption: &str) -> Result<BBox> {
        self.boxes
            .get(caption)
            .copied()
            .ok_or_else(|| Error::Config(format!("no box for caption {caption:?}")))
    }
}

/// Grounds each `(image, caption)` and scores against `gold`.
pub fn grounding_acc_with(
    grounder: &dyn Grounder,
    items: &[(&RgbImage, &str)],
    gold: &[BBox],
    threshold: f64,
) -> Result<f64> {
    let pred = items
        .iter()
        .map(|(img, cap)| grounder.ground(img, cap))
        .collect::<Result<Vec<_>>>()?;
    grounding_acc(&pred, gold, threshold)
}
