use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{check_nonempty, stable_mean, EvalPair, Metric, MetricReport};
use crate::error::Result;
use crate::text::metric_tokens;

/// Maps a token sequence to one vector per token. Contextual encoders may
/// look at the whole sequence.
pub trait TokenEmbedder: Send + Sync {
    fn embed(&self, tokens: &[String]) -> std::result::Result<Vec<Vec<f64>>, String>;
}

/// Fixed per-token vectors; unknown tokens are an error.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    pub table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        Self {
            table: entries.into_iter().collect(),
        }
    }
}

impl TokenEmbedder for TableEmbedder {
    fn embed(&self, tokens: &[String]) -> std::result::Result<Vec<Vec<f64>>, String> {
        tokens
            .iter()
            .map(|t| self.table.get(t).cloned().ok_or_else(|| format!("no embedding for {t:?}")))
            .collect()
    }
}

/// Deterministic pseudo-random unit-free vectors derived from a hash of
/// each token. Equal tokens embed identically; it carries no semantics and
/// exists for plumbing tests and demos.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl TokenEmbedder for HashEmbedder {
    fn embed(&self, tokens: &[String]) -> std::result::Result<Vec<Vec<f64>>, String> {
        Ok(tokens
            .iter()
            .map(|t| {
                (0..self.dim)
                    .map(|k| {
                        let h = Sha256::new().chain_update(t.as_bytes()).chain_update((k as u64).to_le_bytes()).finalize();
                        let v = u32::from_le_bytes([h[0], h[1], h[2], h[3]]);
                        v as f64 / u32::MAX as f64 * 2.0 - 1.0
                    })
                    .collect()
            })
            .collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy-matching F1 between two embedded sequences.
pub(crate) fn greedy_f1(cand: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let sims: Vec<Vec<f64>> = cand.iter().map(|c| reference.iter().map(|r| cosine(c, r)).collect()).collect();
    let p = sims.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / cand.len() as f64;
    let r = (0..reference.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    if p + r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// BERTScore F1 (no idf weighting, no baseline rescaling), max over
/// references. Without an embedder, or if it fails, the report is marked
/// skipped instead of erroring.
pub fn bert_score(pairs: &[EvalPair], embedder: Option<&dyn TokenEmbedder>) -> Result<MetricReport> {
    let Some(embedder) = embedder else {
        return Ok(MetricReport::skipped(Metric::BertScore, "no token embedder configured"));
    };
    check_nonempty(pairs)?;
    let mut per_sample = Vec::with_capacity(pairs.len());
    for p in pairs {
        let c = match embedder.embed(&metric_tokens(&p.candidate)) {
            Ok(v) => v,
            Err(e) => return Ok(MetricReport::skipped(Metric::BertScore, e)),
        };
        let mut best: f64 = 0.0;
        for r in &p.references {
            match embedder.embed(&metric_tokens(r)) {
                Ok(rv) => best = best.max(greedy_f1(&c, &rv)),
                Err(e) => return Ok(MetricReport::skipped(Metric::BertScore, e)),
            }
        }
        per_sample.push(best);
    }
    Ok(MetricReport::new(Metric::BertScore, stable_mean(&per_sample), per_sample))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, r: &str) -> EvalPair {
        EvalPair::new("x", c, vec![r.to_string()]).unwrap()
    }

    fn one_hot(words: &[&str]) -> TableEmbedder {
        TableEmbedder::new(words.iter().enumerate().map(|(i, w)| {
            let mut v = vec![0.0; words.len()];
            v[i] = 1.0;
            (w.to_string(), v)
        }))
    }

    #[test]
    fn identity_disjoint_and_skip() {
        let e = one_hot(&["a", "b", "c", "d"]);
        let id = bert_score(&[pair("a b", "a b")], Some(&e)).unwrap();
        assert!((id.score.unwrap() - 1.0).abs() < 1e-12);
        let dis = bert_score(&[pair("a b", "c d")], Some(&e)).unwrap();
        assert_eq!(dis.score, Some(0.0));
        let skip = bert_score(&[pair("a", "a")], None).unwrap();
        assert!(skip.is_skipped() && skip.score.is_none());
        let unknown = bert_score(&[pair("zzz", "a")], Some(&e)).unwrap();
        assert!(unknown.is_skipped());
    }

    #[test]
    fn hand_set_vectors() {
        // cat=(1,0), dog=(0.6,0.8), mat=(0,1).
        let e = TableEmbedder::new([
            ("cat".to_string(), vec![1.0, 0.0]),
            ("dog".to_string(), vec![0.6, 0.8]),
            ("mat".to_string(), vec![0.0, 1.0]),
        ]);
        // cand [cat, mat], ref [dog]:
        // P = (cos(cat,dog) + cos(mat,dog)) / 2 = (0.6 + 0.8) / 2 = 0.7
        // R = max(0.6, 0.8) = 0.8
        let s = bert_score(&[pair("cat mat", "dog")], Some(&e)).unwrap().score.unwrap();
        let f = 2.0 * 0.7 * 0.8 / 1.5;
        assert!((s - f).abs() < 1e-12);
    }

    #[test]
    fn hash_embedder_is_deterministic() {
        let e = HashEmbedder::new(6);
        let t = vec!["red".to_string(), "red".to_string(), "car".to_string()];
        let v = e.embed(&t).unwrap();
        assert_eq!(v[0], v[1]);
        assert_ne!(v[0], v[2]);
        assert_eq!(v, e.embed(&t).unwrap());
    }
}
