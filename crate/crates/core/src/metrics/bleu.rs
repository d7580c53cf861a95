use std::collections::HashMap;

use super::{check_nonempty, EvalPair, Metric, MetricReport};
use crate::error::Result;
use crate::text::metric_tokens;

const MAX_N: usize = 4;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    matched: [usize; MAX_N],
    total: [usize; MAX_N],
    cand_len: usize,
    ref_len: usize,
}

impl Stats {
    fn add(&mut self, o: &Stats) {
        for n in 0..MAX_N {
            self.matched[n] += o.matched[n];
            self.total[n] += o.total[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    /// Unsmoothed: any order without a match gives 0.
    fn score(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_N {
            if self.matched[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matched[n] as f64 / self.total[n] as f64).ln();
        }
        let bp = if self.cand_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        } else {
            1.0
        };
        bp * (log_sum / MAX_N as f64).exp()
    }
}

fn sample_stats(pair: &EvalPair) -> Stats {
    let cand = metric_tokens(&pair.candidate);
    let refs: Vec<Vec<String>> = pair.references.iter().map(|r| metric_tokens(r)).collect();
    let mut s = Stats {
        cand_len: cand.len(),
        // Closest reference length; ties go to the shorter one.
        ref_len: refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0),
        ..Stats::default()
    };
    for n in 1..=MAX_N {
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in ngram_counts(&cand, n) {
            s.total[n - 1] += c;
            s.matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
        }
    }
    s
}

/// Corpus BLEU-4: clipped n-gram counts and lengths are pooled over all
/// samples before taking precisions. Per-sample values are sentence BLEU.
pub fn bleu4(pairs: &[EvalPair]) -> Result<MetricReport> {
    check_nonempty(pairs)?;
    let mut corpus = Stats::default();
    let mut per_sample = Vec::with_capacity(pairs.len());
    for p in pairs {
        let s = sample_stats(p);
        corpus.add(&s);
        per_sample.push(s.score());
    }
    Ok(MetricReport::new(Metric::Bleu4, corpus.score(), per_sample))
}
