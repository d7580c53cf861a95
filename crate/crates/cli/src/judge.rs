use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use base64::Engine;
use maskcap::dataset::{load_samples, TaskKind};
use maskcap::encoders::RgbImage;
use maskcap::error::Error;
use maskcap::geometry::decode_rle;
use maskcap::judge::{
    encode_png, judge_run, mask_overlay, ChatClient, ChatRequest, JudgeImage, JudgeOptions, JudgeRequest, MockClient,
    OVERLAY_ALPHA, OVERLAY_COLOR,
};
use serde_json::{json, Value};

use crate::evaluate::load_predictions;
use crate::manifest::{write_json, Run};
use crate::{JudgeArgs, Status};

pub const API_KEY_VAR: &str = "JUDGE_API_KEY";

/// OpenAI-style chat completions over HTTPS (plain HTTP only to loopback).
pub struct HttpChatClient {
    endpoint: String,
    model: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, model: &str, api_key: String) -> Result<Self> {
        let url = reqwest::Url::parse(endpoint).map_err(|e| Error::Config(format!("endpoint {endpoint:?}: {e}")))?;
        let loopback = matches!(url.host_str(), Some("localhost" | "127.0.0.1" | "[::1]"));
        if url.scheme() != "https" && !(url.scheme() == "http" && loopback) {
            return Err(Error::Config(format!("endpoint {endpoint:?} must use https")).into());
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .context("building HTTP client")?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            http,
        })
    }

    pub fn body(&self, req: &ChatRequest) -> std::result::Result<Value, String> {
        let png = req.image.png_bytes().map_err(|e| e.to_string())?;
        let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png));
        Ok(json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": req.prompt},
                    {"type": "image_url", "image_url": {"url": url}}
                ]
            }]
        }))
    }
}

impl ChatClient for HttpChatClient {
    fn send(&self, req: &ChatRequest) -> std::result::Result<String, String> {
        let body = self.body(req)?;
        let resp = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let v: Value = resp.json().map_err(|e| e.to_string())?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

fn client_for(args: &JudgeArgs) -> Result<Box<dyn ChatClient>> {
    if let Some(spec) = args.endpoint.strip_prefix("mock:") {
        return Ok(Box::new(MockClient::from_spec(spec)?));
    }
    let key = std::env::var(API_KEY_VAR)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| Error::Config(format!("{API_KEY_VAR} is not set")))?;
    Ok(Box::new(HttpChatClient::new(&args.endpoint, &args.judge_model, key)?))
}

/// AARC predictions joined with their dataset records, shown over the
/// masked image.
pub fn build_requests(predictions: &Path, dataset: &Path) -> Result<Vec<JudgeRequest>> {
    let preds: HashMap<String, String> = load_predictions(predictions)?
        .into_iter()
        .map(|p| (p.id, p.caption))
        .collect();
    let samples = load_samples(dataset)?.into_strict()?;
    let base = dataset.parent().unwrap_or(Path::new("."));
    let mut images: HashMap<String, RgbImage> = HashMap::new();
    let mut out = Vec::new();
    for s in samples.iter().filter(|s| s.task == TaskKind::Aarc) {
        let Some(pred) = preds.get(&s.id) else {
            continue;
        };
        if !images.contains_key(&s.image_path) {
            let file = base.join(&s.image_path);
            let img = RgbImage::load(&file).with_context(|| format!("loading {}", file.display()))?;
            images.insert(s.image_path.clone(), img);
        }
        let mask = decode_rle(s.mask.as_ref().expect("AARC samples carry a mask"))?;
        let overlay = mask_overlay(&images[&s.image_path], &mask, OVERLAY_COLOR, OVERLAY_ALPHA)?;
        out.push(JudgeRequest {
            id: s.id.clone(),
            image: JudgeImage::Png(encode_png(&overlay)?),
            prediction: pred.clone(),
            reference: s.caption.clone(),
            attribute: s.attribute.expect("AARC samples carry an attribute").name().to_string(),
        });
    }
    Ok(out)
}

pub fn run(args: &JudgeArgs) -> Result<Status> {
    let client = client_for(args)?;
    let requests = build_requests(&args.predictions, &args.dataset)?;
    let mut run = Run::start(
        &args.out,
        "judge",
        None,
        None,
        &[args.predictions.clone(), args.dataset.clone()],
    )?;
    let opts = JudgeOptions {
        concurrency: args.concurrency,
        retries: args.retries,
    };
    let (verdicts, summary) = judge_run(&requests, client.as_ref(), opts)?;
    let mut lines = String::new();
    for v in &verdicts {
        lines.push_str(&serde_json::to_string(v)?);
        lines.push('\n');
    }
    let path = run.output("verdicts.jsonl");
    std::fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))?;
    write_json(&run.output("judge.json"), &summary)?;
    match summary.accuracy {
        Some(a) => println!("accuracy: {a:.4} ({}/{} parsed)", summary.parsed, summary.total),
        None => println!("accuracy: null ({}/{} parsed)", summary.parsed, summary.total),
    }
    let complete = summary.is_complete();
    run.finish(if complete { "ok" } else { "partial" })?;
    Ok(if complete { Status::Complete } else { Status::Partial })
}
