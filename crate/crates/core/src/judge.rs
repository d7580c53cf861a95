//! Attribute-caption judging with a chat-completion model: the evaluator
//! prompt, verdict parsing and a bounded-parallel runner with retries.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::RgbImage;
use crate::error::{Error, Result};
use crate::geometry::{resize_mask, BinaryMask};

/// Evaluator instructions, line for line.
pub const JUDGE_INSTRUCTIONS: &str = "\
Evaluator Instructions:
You are an evaluator tasked with assessing the reasonableness of a model-generated caption for a specific attribute in a masked region of an image.

You will be provided with:
An image with a masked region (region of interest).
A model-predicted caption.
A reference description.

Important Notes:
The model's prediction does not need to exactly match the reference; it is acceptable as long as it reasonably describes the region and the attribute.
The reference description serves as a suggestion or one possible answer, not an exact target.
This is an open-ended generation task.
Example: If the attribute relates to a person's age, and the prediction is \"40-50 years old\" while the reference is \"45-50 years old,\" the prediction is considered reasonable.

Your Task:
Determine if the caption accurately and reasonably describes the expected attribute of the region of interest.
Provide a binary answer (\"Yes\" or \"No\") based solely on whether the attribute description is reasonable.
Please return \"Yes\" or \"No\" only, without any additional information.
Please carefully examine all compositional details within the mask region!!
";

/// The image shown to the judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeImage {
    Path(PathBuf),
    Png(Vec<u8>),
}

impl JudgeImage {
    fn is_empty(&self) -> bool {
        match self {
            JudgeImage::Path(p) => p.as_os_str().is_empty(),
            JudgeImage::Png(b) => b.is_empty(),
        }
    }

    /// PNG bytes, reading the file for path references.
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        match self {
            JudgeImage::Png(b) => Ok(b.clone()),
            JudgeImage::Path(p) => encode_png(&RgbImage::load(p)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub id: String,
    pub image: JudgeImage,
    pub prediction: String,
    pub reference: String,
    pub attribute: String,
}

impl JudgeRequest {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("id", self.id.trim().is_empty()),
            ("image", self.image.is_empty()),
            ("prediction", self.prediction.trim().is_empty()),
            ("reference", self.reference.trim().is_empty()),
            ("attribute", self.attribute.trim().is_empty()),
        ];
        match empty.iter().find(|(_, e)| *e) {
            Some((field, _)) => Err(Error::Config(format!("judge request {:?}: empty {field}", self.id))),
            None => Ok(()),
        }
    }
}

/// Instructions followed by the filled-in attribute, prediction and reference.
pub fn build_judge_prompt(req: &JudgeRequest) -> String {
    format!(
        "{JUDGE_INSTRUCTIONS}\nAttribute: {}\nModel-predicted caption: {}\nReference description: {}\n",
        req.attribute, req.prediction, req.reference
    )
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Yes,
    No,
}

/// Reads the first word, ignoring case and surrounding whitespace or
/// punctuation.
pub fn parse_verdict(response: &str) -> Result<Decision> {
    let word: String = response
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Ok(Decision::Yes),
        "no" => Ok(Decision::No),
        _ => Err(Error::UnparseableVerdict(response.to_string())),
    }
}

/// Blends `color` over the masked pixels with opacity `alpha`.
pub fn mask_overlay(img: &RgbImage, mask: &BinaryMask, color: [f64; 3], alpha: f64) -> Result<RgbImage> {
    let mask = resize_mask(mask, img.height(), img.width())?;
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask.get(y, x) {
                let p = img.get(y, x);
                out.set(y, x, std::array::from_fn(|c| (1.0 - alpha) * p[c] + alpha * color[c]));
            }
        }
    }
    Ok(out)
}

pub const OVERLAY_COLOR: [f64; 3] = [1.0, 0.0, 0.0];
pub const OVERLAY_ALPHA: f64 = 0.4;

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// One call to the chat service.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    /// Position of the judge request in its run.
    pub index: usize,
    pub id: &'a str,
    pub prompt: &'a str,
    pub image: &'a JudgeImage,
}

/// A chat-completion service. Implementations must tolerate concurrent
/// calls.
pub trait ChatClient: Send + Sync {
    /// The assistant's reply text, or a transport error message.
    fn send(&self, req: &ChatRequest) -> std::result::Result<String, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOptions {
    pub concurrency: usize,
    /// Extra attempts after a transport failure.
    pub retries: usize,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    /// `None` when the reply was unparseable or never arrived.
    pub decision: Option<Decision>,
    pub raw: Option<String>,
    pub retries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    /// Yes / parsed; `None` when nothing parsed.
    pub accuracy: Option<f64>,
    pub total: usize,
    pub parsed: usize,
    pub yes: usize,
    pub unparsed: usize,
    pub transport_failures: usize,
    pub retries: usize,
}

impl JudgeSummary {
    pub fn of(verdicts: &[Verdict]) -> Self {
        let parsed = verdicts.iter().filter(|v| v.decision.is_some()).count();
        let yes = verdicts.iter().filter(|v| v.decision == Some(Decision::Yes)).count();
        let failed = verdicts.iter().filter(|v| v.raw.is_none()).count();
        Self {
            accuracy: (parsed > 0).then(|| yes as f64 / parsed as f64),
            total: verdicts.len(),
            parsed,
            yes,
            unparsed: verdicts.len() - parsed - failed,
            transport_failures: failed,
            retries: verdicts.iter().map(|v| v.retries).sum(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.parsed == self.total
    }
}

fn judge_one(index: usize, req: &JudgeRequest, client: &dyn ChatClient, retries: usize) -> Verdict {
    let prompt = build_judge_prompt(req);
    let chat = ChatRequest {
        index,
        id: &req.id,
        prompt: &prompt,
        image: &req.image,
    };
    let mut last_err = String::new();
    for attempt in 0..=retries {
        match client.send(&chat) {
            Ok(raw) => {
                let parsed = parse_verdict(&raw);
                return Verdict {
                    id: req.id.clone(),
                    decision: parsed.as_ref().ok().copied(),
                    error: parsed.err().map(|e| e.to_string()),
                    raw: Some(raw),
                    retries: attempt,
                };
            }
            Err(e) => last_err = e,
        }
    }
    Verdict {
        id: req.id.clone(),
        decision: None,
        raw: None,
        retries,
        error: Some(Error::Transport(last_err).to_string()),
    }
}

/// Judges every request with at most `concurrency` calls in flight.
/// Verdicts come back in request order.
pub fn judge_run(
    requests: &[JudgeRequest],
    client: &dyn ChatClient,
    opts: JudgeOptions,
) -> Result<(Vec<Verdict>, JudgeSummary)> {
    if opts.concurrency == 0 {
        return Err(Error::Config("judge concurrency must be at least 1".into()));
    }
    for r in requests {
        r.validate()?;
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Verdict>>> = Mutex::new(vec![None; requests.len()]);
    std::thread::scope(|s| {
        for _ in 0..opts.concurrency.min(requests.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let v = judge_one(i, &requests[i], client, opts.retries);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(v);
            });
        }
    });
    let verdicts: Vec<Verdict> = slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|v| v.expect("every request judged"))
        .collect();
    let summary = JudgeSummary::of(&verdicts);
    Ok((verdicts, summary))
}

/// Scripted in-process client. Each request index cycles through `replies`
/// unless a per-index script overrides it; `Err` entries are transport
/// failures. Tracks the peak number of concurrent calls.
#[derive(Debug, Default)]
pub struct MockClient {
    pub replies: Vec<std::result::Result<String, String>>,
    scripts: Mutex<std::collections::HashMap<usize, std::collections::VecDeque<std::result::Result<String, String>>>>,
    delay: std::time::Duration,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn cycle<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(|s| Ok(s.into())).collect(),
            ..Self::default()
        }
    }

    /// Parses `"Yes,No,..."`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let replies: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if replies.is_empty() {
            return Err(Error::Config("mock endpoint needs at least one reply".into()));
        }
        Ok(Self::cycle(replies))
    }

    /// Replies for request `index`, consumed in order before falling back
    /// to the cycle.
    pub fn script(self, index: usize, replies: Vec<std::result::Result<String, String>>) -> Self {
        self.scripts
            .lock()
            .expect("unpoisoned")
            .insert(index, replies.into());
        self
    }

    pub fn with_delay(mut self, delay: std::time::Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for MockClient {
    fn send(&self, req: &ChatRequest) -> std::result::Result<String, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let scripted = self
            .scripts
            .lock()
            .expect("unpoisoned")
            .get_mut(&req.index)
            .and_then(|q| q.pop_front());
        let reply = scripted.unwrap_or_else(|| {
            if self.replies.is_empty() {
                Err("mock has no replies".to_string())
            } else {
                self.replies[req.index % self.replies.len()].clone()
            }
        });
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        reply
    }
}
