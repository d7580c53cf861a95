//! Caption metrics (BLEU-4, ROUGE-L, METEOR, CIDEr-D, BERTScore) and the
//! grounding Acc@0.5 score.
//!
//! All text metrics share [`crate::text::metric_tokens`]: lowercase, then
//! split punctuation into separate tokens.

mod bertscore;
mod bleu;
mod cider;
mod grounding;
mod meteor;
mod rouge;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bertscore::{bert_score, HashEmbedder, TableEmbedder, TokenEmbedder};
pub use bleu::bleu4;
pub use cider::{cider, cider_corpus, DocumentFrequency, CIDER_SCALE, CIDER_SIGMA};
pub use grounding::{grounding_acc, grounding_acc_with, Grounder, OracleGrounder, ACC_THRESHOLD};
pub use meteor::{align, meteor, meteor_components, Alignment, MeteorParams};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};

/// One candidate caption with its references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPair {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

impl EvalPair {
    pub fn new(id: impl Into<String>, candidate: impl Into<String>, references: Vec<String>) -> Result<Self> {
        let p = Self {
            id: id.into(),
            candidate: candidate.into(),
            references,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::Config(format!("pair {:?} has no references", self.id)));
        }
        Ok(())
    }
}

/// Reads `{"id", "candidate", "references"}` lines.
pub fn parse_pairs(text: &str, path: Option<&str>) -> Result<Vec<EvalPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let located = |message: String| Error::Ingestion {
            path: path.map(str::to_string),
            line: i + 1,
            message,
        };
        let pair: EvalPair = serde_json::from_str(line).map_err(|e| located(e.to_string()))?;
        pair.validate().map_err(|e| located(e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    parse_pairs(&std::fs::read_to_string(path)?, Some(&path.display().to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "BLEU-4")]
    Bleu4,
    #[serde(rename = "ROUGE-L")]
    RougeL,
    #[serde(rename = "METEOR")]
    Meteor,
    #[serde(rename = "CIDEr")]
    Cider,
    #[serde(rename = "BERTScore")]
    BertScore,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::RougeL, Metric::Bleu4, Metric::Meteor, Metric::Cider, Metric::BertScore];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu4 => "BLEU-4",
            Metric::RougeL => "ROUGE-L",
            Metric::Meteor => "METEOR",
            Metric::Cider => "CIDEr",
            Metric::BertScore => "BERTScore",
        }
    }

    /// Accepts the display names and short aliases, case-insensitively.
    pub fn parse(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        Ok(match key.as_str() {
            "bleu4" | "bleu" => Metric::Bleu4,
            "rougel" | "rouge" => Metric::RougeL,
            "meteor" => Metric::Meteor,
            "cider" | "ciderd" => Metric::Cider,
            "bertscore" | "bert" => Metric::BertScore,
            _ => return Err(Error::Config(format!("unknown metric {s:?}"))),
        })
    }

    /// Largest attainable score on the unscaled range.
    pub fn max_score(self) -> f64 {
        match self {
            Metric::Cider => CIDER_SCALE,
            _ => 1.0,
        }
    }
}

/// Corpus and per-sample scores on the metric's natural range; multiply
/// by 100 for the conventional table presentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub score: Option<f64>,
    pub per_sample: Vec<f64>,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl MetricReport {
    fn new(metric: Metric, score: f64, per_sample: Vec<f64>) -> Self {
        Self {
            metric: metric.name().to_string(),
            score: Some(score),
            count: per_sample.len(),
            per_sample,
            skipped: None,
        }
    }

    pub fn skipped(metric: Metric, reason: impl Into<String>) -> Self {
        Self {
            metric: metric.name().to_string(),
            score: None,
            per_sample: Vec::new(),
            count: 0,
            skipped: Some(reason.into()),
        }
    }

    pub fn is_skipped(&self) -> bool {
        self.skipped.is_some()
    }

    /// Score ×100, as tables report it.
    pub fn percent(&self) -> Option<f64> {
        self.score.map(|s| s * 100.0)
    }
}

/// Order-independent mean: values are summed in sorted order so the result
/// is bit-identical under any permutation of the samples.
pub(crate) fn stable_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn check_nonempty(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyEval);
    }
    for p in pairs {
        p.validate()?;
    }
    Ok(())
}

/// Scores `pairs` with each metric in order. CIDEr uses document
/// frequencies of the pairs' own references; BERTScore is skipped without
/// an embedder.
pub fn evaluate(pairs: &[EvalPair], metrics: &[Metric], embedder: Option<&dyn TokenEmbedder>) -> Result<Vec<MetricReport>> {
    metrics
        .iter()
        .map(|m| match m {
            Metric::Bleu4 => bleu4(pairs),
            Metric::RougeL => rouge_l(pairs),
            Metric::Meteor => meteor(pairs),
            Metric::Cider => cider_corpus(pairs),
            Metric::BertScore => bert_score(pairs, embedder),
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::EvalPair;
    use rand::Rng;

    const WORDS: [&str; 8] = ["the", "cat", "dog", "sat", "red", "on", "mat", "runs"];

    pub fn random_text(rng: &mut impl Rng, max_len: usize) -> String {
        random_text_between(rng, 1, max_len)
    }

    pub fn random_text_between(rng: &mut impl Rng, min_len: usize, max_len: usize) -> String {
        let n = rng.gen_range(min_len..=max_len);
        (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    }

    pub fn random_pairs(rng: &mut impl Rng, count: usize, max_len: usize, max_refs: usize) -> Vec<EvalPair> {
        (0..count)
            .map(|i| {
                let refs = (0..rng.gen_range(1..=max_refs)).map(|_| random_text(rng, max_len)).collect();
                EvalPair::new(i.to_string(), random_text(rng, max_len), refs).unwrap()
            })
            .collect()
    }

    pub fn identity_pairs(rng: &mut impl Rng, count: usize) -> Vec<EvalPair> {
        (0..count)
            .map(|i| {
                // At least four tokens so that every BLEU order has n-grams.
                let t = random_text_between(rng, 4, 10);
                EvalPair::new(i.to_string(), t.clone(), vec![t]).unwrap()
            })
            .collect()
    }
}
