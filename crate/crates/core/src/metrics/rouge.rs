use super::{check_nonempty, stable_mean, EvalPair, Metric, MetricReport};
use crate::error::Result;
use crate::text::metric_tokens;

/// Recall weight of the ROUGE-L F-measure.
pub const ROUGE_BETA: f64 = 1.2;

/// Longest-common-subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f_measure(cand: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(cand, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// ROUGE-L F-measure, max over references per sample, mean over samples.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<MetricReport> {
    check_nonempty(pairs)?;
    let per_sample: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let cand = metric_tokens(&p.candidate);
            p.references
                .iter()
                .map(|r| f_measure(&cand, &metric_tokens(r)))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(MetricReport::new(Metric::RougeL, stable_mean(&per_sample), per_sample))
}
