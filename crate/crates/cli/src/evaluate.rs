use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use maskcap::dataset::parse_samples;
use maskcap::error::Error;
use maskcap::metrics::{evaluate, EvalPair, Metric, MetricReport};
use serde::Deserialize;

use crate::caption::Prediction;
use crate::manifest::{write_json, Run};
use crate::{EvaluateArgs, Status};

pub const DEFAULT_METRICS: [Metric; 4] = [Metric::RougeL, Metric::Bleu4, Metric::Meteor, Metric::Cider];

pub fn parse_metrics(spec: Option<&str>) -> Result<Vec<Metric>> {
    match spec {
        None => Ok(DEFAULT_METRICS.to_vec()),
        Some(s) => s
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(|m| Metric::parse(m).map_err(Into::into))
            .collect(),
    }
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Ingestion {
            path: Some(path.display().to_string()),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceLine {
    id: String,
    references: Vec<String>,
}

/// References by id, from `{"id", "references"}` lines or dataset records
/// (all captions sharing an id are pooled).
pub fn load_references(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let located = |line: usize, message: String| Error::Ingestion {
        path: Some(path.display().to_string()),
        line,
        message,
    };
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let first = text.lines().find(|l| !l.trim().is_empty());
    let pairs_format = first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("references").is_some());
    if pairs_format {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ReferenceLine = serde_json::from_str(line).map_err(|e| located(i + 1, e.to_string()))?;
            if r.references.is_empty() {
                return Err(located(i + 1, "empty reference list".into()).into());
            }
            out.entry(r.id).or_default().extend(r.references);
        }
    } else {
        for s in parse_samples(&text, Some(&path.display().to_string())).into_strict()? {
            out.entry(s.id).or_default().push(s.caption);
        }
    }
    Ok(out)
}

/// Pairs predictions with references; any id present on one side only is
/// an alignment error listing the offenders.
pub fn align(predictions: &[Prediction], references: &BTreeMap<String, Vec<String>>) -> Result<Vec<EvalPair>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut dupes = Vec::new();
    for p in predictions {
        if !seen.insert(p.id.as_str()) {
            dupes.push(p.id.clone());
        }
    }
    if !dupes.is_empty() {
        return Err(Error::Config(format!("duplicate prediction ids: {}", dupes.join(", "))).into());
    }
    let missing_refs: Vec<&str> = predictions
        .iter()
        .filter(|p| !references.contains_key(&p.id))
        .map(|p| p.id.as_str())
        .collect();
    let missing_preds: Vec<&str> = references.keys().filter(|k| !seen.contains(k.as_str())).map(String::as_str).collect();
    if !missing_refs.is_empty() || !missing_preds.is_empty() {
        let mut msg = format!(
            "{}",
            Error::Alignment {
                pred: predictions.len(),
                gold: references.len()
            }
        );
        if !missing_refs.is_empty() {
            msg.push_str(&format!("; no reference for: {}", missing_refs.join(", ")));
        }
        if !missing_preds.is_empty() {
            msg.push_str(&format!("; no prediction for: {}", missing_preds.join(", ")));
        }
        return Err(Error::Config(msg).into());
    }
    predictions
        .iter()
        .map(|p| EvalPair::new(p.id.clone(), p.caption.clone(), references[&p.id].clone()).map_err(Into::into))
        .collect()
}

pub fn run(args: &EvaluateArgs) -> Result<Status> {
    let metrics = parse_metrics(args.metrics.as_deref())?;
    let mut run = match &args.out {
        Some(out) => Some(Run::start(
            out,
            "evaluate",
            None,
            None,
            &[args.predictions.clone(), args.references.clone()],
        )?),
        None => None,
    };
    let preds = load_predictions(&args.predictions)?;
    let refs = load_references(&args.references)?;
    let pairs = align(&preds, &refs)?;
    let reports: Vec<MetricReport> = if metrics.is_empty() {
        Vec::new()
    } else {
        evaluate(&pairs, &metrics, None)?
    };
    for r in &reports {
        match r.percent() {
            Some(p) => println!("{:<10} {p:.2}", r.metric),
            None => println!("{:<10} skipped ({})", r.metric, r.skipped.as_deref().unwrap_or("")),
        }
    }
    if let Some(run) = run.as_mut() {
        write_json(&run.output("metrics.json"), &reports)?;
    }
    if let Some(run) = run {
        run.finish("ok")?;
    }
    Ok(Status::Complete)
}
