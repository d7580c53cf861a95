use std::collections::{HashMap, HashSet};

use super::bleu::ngram_counts;
use super::{check_nonempty, stable_mean, EvalPair, Metric, MetricReport};
use crate::error::{Error, Result};
use crate::text::metric_tokens;

/// Width of the Gaussian length penalty.
pub const CIDER_SIGMA: f64 = 6.0;
/// Multiplier applied to the averaged cosine similarity.
pub const CIDER_SCALE: f64 = 10.0;
const MAX_N: usize = 4;

/// Document frequencies of n-grams (n = 1..4). Each document is the
/// reference set of one sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentFrequency {
    df: HashMap<Vec<String>, usize>,
    docs: usize,
}

impl DocumentFrequency {
    pub fn from_references<'a, I, R>(documents: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = &'a str>,
    {
        let mut out = Self::default();
        for doc in documents {
            let mut seen: HashSet<Vec<String>> = HashSet::new();
            for text in doc {
                let toks = metric_tokens(text);
                for n in 1..=MAX_N {
                    for g in ngram_counts(&toks, n).into_keys() {
                        seen.insert(g.to_vec());
                    }
                }
            }
            for g in seen {
                *out.df.entry(g).or_insert(0) += 1;
            }
            out.docs += 1;
        }
        out
    }

    pub fn from_pairs(pairs: &[EvalPair]) -> Self {
        Self::from_references(pairs.iter().map(|p| p.references.iter().map(String::as_str)))
    }

    pub fn documents(&self) -> usize {
        self.docs
    }

    pub fn df(&self, ngram: &[String]) -> usize {
        self.df.get(ngram).copied().unwrap_or(0)
    }

    /// `ln(N) − ln(max(1, df))`.
    pub fn idf(&self, ngram: &[String]) -> f64 {
        (self.docs as f64).ln() - (self.df(ngram).max(1) as f64).ln()
    }
}

struct TfIdf {
    vecs: Vec<HashMap<Vec<String>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn tfidf(tokens: &[String], df: &DocumentFrequency) -> TfIdf {
    let mut vecs = Vec::with_capacity(MAX_N);
    let mut norms = Vec::with_capacity(MAX_N);
    for n in 1..=MAX_N {
        let v: HashMap<Vec<String>, f64> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, c)| (g.to_vec(), c as f64 * df.idf(g)))
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

/// Clipped cosine per n, times the length penalty.
fn similarity(h: &TfIdf, r: &TfIdf) -> [f64; MAX_N] {
    let delta = h.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; MAX_N];
    for n in 0..MAX_N {
        let mut val: f64 = h.vecs[n]
            .iter()
            .filter_map(|(g, &hv)| r.vecs[n].get(g).map(|&rv| hv.min(rv) * rv))
            .sum();
        if h.norms[n] != 0.0 && r.norms[n] != 0.0 {
            val /= h.norms[n] * r.norms[n];
        }
        out[n] = val * penalty;
    }
    out
}

/// CIDEr-D against the given document frequencies. Per-sample score is
/// `10 · mean_n mean_refs sim_n`; the corpus score is the sample mean.
pub fn cider(pairs: &[EvalPair], df: &DocumentFrequency) -> Result<MetricReport> {
    if df.docs == 0 {
        return Err(Error::Config("CIDEr needs a non-empty reference corpus".into()));
    }
    check_nonempty(pairs)?;
    let per_sample: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let h = tfidf(&metric_tokens(&p.candidate), df);
            let mut acc = [0.0; MAX_N];
            for r in &p.references {
                let s = similarity(&h, &tfidf(&metric_tokens(r), df));
                for n in 0..MAX_N {
                    acc[n] += s[n];
                }
            }
            let mean = acc.iter().sum::<f64>() / MAX_N as f64 / p.references.len() as f64;
            mean * CIDER_SCALE
        })
        .collect();
    Ok(MetricReport::new(Metric::Cider, stable_mean(&per_sample), per_sample))
}

/// CIDEr-D with document frequencies taken from the pairs' own references.
pub fn cider_corpus(pairs: &[EvalPair]) -> Result<MetricReport> {
    check_nonempty(pairs)?;
    cider(pairs, &DocumentFrequency::from_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::testutil::random_pairs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn pair(c: &str, refs: &[&str]) -> EvalPair {
        EvalPair::new("x", c, refs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    /// Joined-string n-gram keys in ordered maps, recomputed from scratch.
    fn oracle(pairs: &[EvalPair]) -> Vec<f64> {
        let grams = |text: &str, n: usize| -> BTreeMap<String, f64> {
            let t = metric_tokens(text);
            let mut m = BTreeMap::new();
            for i in 0..(t.len() + 1).saturating_sub(n) {
                *m.entry(t[i..i + n].join("\u{1}")).or_insert(0.0) += 1.0;
            }
            m
        };
        let n_docs = pairs.len() as f64;
        let df = |g: &str, n: usize| -> f64 {
            pairs
                .iter()
                .filter(|p| p.references.iter().any(|r| grams(r, n).contains_key(g)))
                .count() as f64
        };
        pairs
            .iter()
            .map(|p| {
                let mut total = 0.0;
                for r in &p.references {
                    let dl = metric_tokens(&p.candidate).len() as f64 - metric_tokens(r).len() as f64;
                    for n in 1..=4 {
                        let w = |m: BTreeMap<String, f64>| -> BTreeMap<String, f64> {
                            m.into_iter()
                                .map(|(g, c)| {
                                    let idf = n_docs.ln() - df(&g, n).max(1.0).ln();
                                    (g, c * idf)
                                })
                                .collect()
                        };
                        let hv = w(grams(&p.candidate, n));
                        let rv = w(grams(r, n));
                        let dot: f64 = hv.iter().map(|(g, h)| rv.get(g).map_or(0.0, |r| h.min(*r) * r)).sum();
                        let nh = hv.values().map(|x| x * x).sum::<f64>().sqrt();
                        let nr = rv.values().map(|x| x * x).sum::<f64>().sqrt();
                        let cos = if nh > 0.0 && nr > 0.0 { dot / (nh * nr) } else { dot };
                        total += cos * (-dl * dl / 72.0).exp();
                    }
                }
                10.0 * total / 4.0 / p.references.len() as f64
            })
            .collect()
    }

    #[test]
    fn examples() {
        let solo = [pair("a red car", &["a red car"])];
        let df = DocumentFrequency::from_pairs(&solo);
        // With one document every idf is ln 1 − ln 1 = 0.
        assert_eq!(cider(&solo, &df).unwrap().score, Some(0.0));
        assert!(cider(&solo, &DocumentFrequency::default()).is_err());

        let corpus = [
            pair("a red car", &["a red car parked"]),
            pair("the blue sky", &["a blue sky above"]),
            pair("two dogs run", &["dogs running in a park"]),
        ];
        let df = DocumentFrequency::from_pairs(&corpus);
        let disjoint = cider(&[pair("zebra xylophone", &["a red car parked"])], &df).unwrap();
        assert_eq!(disjoint.score, Some(0.0));
        let got = cider(&corpus, &df).unwrap();
        for (g, o) in got.per_sample.iter().zip(oracle(&corpus)) {
            assert!((g - o).abs() < 1e-9);
        }
    }

    #[test]
    fn self_similarity_is_maximal_with_fixed_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs = random_pairs(&mut rng, 30, 8, 2);
        let df = DocumentFrequency::from_pairs(&pairs);
        let base = cider(&pairs, &df).unwrap();
        let identity: Vec<EvalPair> = pairs
            .iter()
            .map(|p| EvalPair::new(&p.id, p.references[0].clone(), vec![p.references[0].clone()]).unwrap())
            .collect();
        let copies: Vec<EvalPair> = pairs
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.references.push(q.candidate.clone());
                q
            })
            .collect();
        let id = cider(&identity, &df).unwrap();
        let more = cider(&copies, &df).unwrap();
        for i in 0..pairs.len() {
            assert!(id.per_sample[i] <= CIDER_SCALE + 1e-12);
            assert!(more.per_sample[i] + 1e-12 >= base.per_sample[i]);
        }
    }

    #[test]
    fn matches_dictionary_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs = random_pairs(&mut rng, 50, 8, 3);
        let got = cider_corpus(&pairs).unwrap();
        let want = oracle(&pairs);
        for (g, o) in got.per_sample.iter().zip(&want) {
            assert!((g - o).abs() < 1e-9);
        }
        let mean = want.iter().sum::<f64>() / want.len() as f64;
        assert!((got.score.unwrap() - mean).abs() < 1e-9);
    }
}
