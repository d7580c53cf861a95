//! Browser bindings: mask geometry, caption metrics and the judge prompt.
//!
//! Each export has a plain-Rust twin returning `Result<String, String>` so
//! it can be tested natively; the exports only convert errors for JS.

use maskcap::dataset::ATTRIBUTE_NAMES;
use maskcap::geometry::{encode_rle, iou_boxes, iou_mask_box, mask_area_ratio, mask_to_bbox, BBox, BinaryMask};
use maskcap::judge::{build_judge_prompt, parse_verdict, JudgeImage, JudgeRequest};
use maskcap::metrics::{evaluate, EvalPair, Metric};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Metrics that are meaningful for a single caption. CIDEr-D needs a
/// corpus for its document frequencies.
const DEMO_METRICS: [Metric; 3] = [Metric::Bleu4, Metric::RougeL, Metric::Meteor];

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Run-length code, area ratio and box IoUs of a row-major 0/1 mask.
pub fn mask_summary_json(height: usize, width: usize, bits: &[u8], query: [usize; 4]) -> Result<String, String> {
    let mask = BinaryMask::new(height, width, bits.iter().map(|&b| (b != 0) as u8).collect()).map_err(|e| e.to_string())?;
    let query = BBox::new(query[0], query[1], query[2], query[3]).map_err(|e| e.to_string())?;
    let rle = encode_rle(&mask);
    let bbox = mask_to_bbox(&mask).ok();
    Ok(json!({
        "rle": rle,
        "area_ratio": mask_area_ratio(&mask),
        "mask_bbox": bbox,
        "iou_mask_box": iou_mask_box(&mask, &query).ok(),
        "iou_bbox_box": bbox.and_then(|b| iou_boxes(&b, &query).ok()),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn mask_summary(
    height: usize,
    width: usize,
    bits: &[u8],
    x_min: usize,
    y_min: usize,
    x_max: usize,
    y_max: usize,
) -> Result<String, JsError> {
    to_js(mask_summary_json(height, width, bits, [x_min, y_min, x_max, y_max]))
}

/// Scores one candidate against newline-separated references.
pub fn caption_scores_json(candidate: &str, references: &str) -> Result<String, String> {
    let refs: Vec<String> = references.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    let pair = EvalPair::new("demo", candidate, refs).map_err(|e| e.to_string())?;
    let reports = evaluate(&[pair], &DEMO_METRICS, None).map_err(|e| e.to_string())?;
    let scores: serde_json::Map<String, serde_json::Value> =
        reports.into_iter().map(|r| (r.metric.clone(), json!(r.score))).collect();
    Ok(serde_json::Value::Object(scores).to_string())
}

#[wasm_bindgen]
pub fn caption_scores(candidate: &str, references: &str) -> Result<String, JsError> {
    to_js(caption_scores_json(candidate, references))
}

/// The full judge prompt for one attribute caption.
pub fn judge_prompt_text(attribute: &str, prediction: &str, reference: &str) -> Result<String, String> {
    let req = JudgeRequest {
        id: "demo".into(),
        image: JudgeImage::Png(vec![0]),
        prediction: prediction.into(),
        reference: reference.into(),
        attribute: attribute.into(),
    };
    req.validate().map_err(|e| e.to_string())?;
    Ok(build_judge_prompt(&req))
}

#[wasm_bindgen]
pub fn judge_prompt(attribute: &str, prediction: &str, reference: &str) -> Result<String, JsError> {
    to_js(judge_prompt_text(attribute, prediction, reference))
}

/// "Yes", "No", or "unparseable".
#[wasm_bindgen]
pub fn judge_verdict(reply: &str) -> String {
    match parse_verdict(reply) {
        Ok(d) => format!("{d:?}"),
        Err(_) => "unparseable".into(),
    }
}

/// The 18 attribute names as a JSON array.
#[wasm_bindgen]
pub fn attribute_names() -> String {
    json!(ATTRIBUTE_NAMES).to_string()
}
