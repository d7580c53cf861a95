use serde::{Deserialize, Serialize};

use super::{check_nonempty, stable_mean, EvalPair, Metric, MetricReport};
use crate::error::Result;
use crate::text::metric_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Search nodes allowed per alignment before settling for the best
    /// alignment found so far (at worst the greedy one).
    pub search_budget: usize,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
            search_budget: 200_000,
        }
    }
}

/// One-to-one word alignment, sorted by candidate position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub exact: usize,
    pub chunks: usize,
    /// False if the search budget ran out before optimality was proven.
    pub optimal: bool,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }

    fn key(&self) -> (usize, usize, std::cmp::Reverse<usize>) {
        (self.exact, self.pairs.len(), std::cmp::Reverse(self.chunks))
    }
}

/// Counts maximal runs of pairs contiguous on both sides.
pub(crate) fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if k == 0 || pairs[k - 1] != (i.wrapping_sub(1), j.wrapping_sub(1)) {
            chunks += 1;
        }
    }
    chunks
}

struct Search<'a> {
    exact: &'a [Vec<bool>],
    stem: &'a [Vec<bool>],
    used: Vec<bool>,
    cur: Vec<(usize, usize)>,
    cur_exact: usize,
    cur_chunks: usize,
    best: Alignment,
    nodes: usize,
    budget: usize,
}

impl Search<'_> {
    /// Upper bounds on the exact and total matches attainable from
    /// candidate position `i` on.
    fn bounds(&self, i: usize) -> (usize, usize) {
        let free = |m: &[Vec<bool>]| {
            let rows = (i..m.len()).filter(|&a| m[a].iter().zip(&self.used).any(|(&x, &u)| x && !u)).count();
            let cols = (0..self.used.len())
                .filter(|&b| !self.used[b] && (i..m.len()).any(|a| m[a][b]))
                .count();
            rows.min(cols)
        };
        (free(self.exact), free(self.stem))
    }

    fn visit(&mut self, i: usize) {
        self.nodes += 1;
        if self.nodes > self.budget {
            return;
        }
        let key = (self.cur_exact, self.cur.len(), std::cmp::Reverse(self.cur_chunks));
        if key > self.best.key() {
            self.best = Alignment {
                pairs: self.cur.clone(),
                exact: self.cur_exact,
                chunks: self.cur_chunks,
                optimal: false,
            };
        }
        if i == self.exact.len() {
            return;
        }
        let (ue, ut) = self.bounds(i);
        let bound = (self.cur_exact + ue, self.cur.len() + ut, std::cmp::Reverse(self.cur_chunks));
        if bound <= self.best.key() {
            return;
        }
        let continues = self.cur.last().filter(|&&(a, _)| a + 1 == i).map(|&(_, b)| b + 1);
        let mut order: Vec<usize> = Vec::new();
        if let Some(j) = continues.filter(|&j| j < self.used.len() && self.stem[i][j]) {
            order.push(j);
        }
        order.extend((0..self.used.len()).filter(|&j| self.exact[i][j] && Some(j) != continues));
        order.extend((0..self.used.len()).filter(|&j| !self.exact[i][j] && self.stem[i][j] && Some(j) != continues));
        for j in order {
            if self.used[j] {
                continue;
            }
            let new_chunk = Some(j) != continues;
            self.used[j] = true;
            self.cur.push((i, j));
            self.cur_exact += self.exact[i][j] as usize;
            self.cur_chunks += new_chunk as usize;
            self.visit(i + 1);
            self.cur_chunks -= new_chunk as usize;
            self.cur_exact -= self.exact[i][j] as usize;
            self.cur.pop();
            self.used[j] = false;
        }
        self.visit(i + 1);
    }
}

/// Greedy staged alignment: exact matches left to right, then stem
/// matches among the leftovers.
fn greedy(exact: &[Vec<bool>], stem: &[Vec<bool>], n_ref: usize) -> Alignment {
    let mut used = vec![false; n_ref];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut ex = 0;
    for (stage, m) in [exact, stem].into_iter().enumerate() {
        for (i, row) in m.iter().enumerate() {
            if pairs.iter().any(|&(a, _)| a == i) {
                continue;
            }
            if let Some(j) = (0..n_ref).find(|&j| row[j] && !used[j]) {
                used[j] = true;
                pairs.push((i, j));
                ex += (stage == 0) as usize;
            }
        }
    }
    pairs.sort_unstable();
    Alignment {
        chunks: count_chunks(&pairs),
        pairs,
        exact: ex,
        optimal: false,
    }
}

/// Best alignment under the lexicographic objective: most exact matches,
/// then most matches overall (exact or Porter-stem), then fewest chunks.
pub fn align(cand: &[String], reference: &[String], budget: usize) -> Alignment {
    let exact: Vec<Vec<bool>> = cand.iter().map(|c| reference.iter().map(|r| c == r).collect()).collect();
    let cs: Vec<String> = cand.iter().map(|w| porter_stemmer::stem(w)).collect();
    let rs: Vec<String> = reference.iter().map(|w| porter_stemmer::stem(w)).collect();
    let stem: Vec<Vec<bool>> = cand
        .iter()
        .enumerate()
        .map(|(i, _)| (0..reference.len()).map(|j| exact[i][j] || cs[i] == rs[j]).collect())
        .collect();
    let mut s = Search {
        exact: &exact,
        stem: &stem,
        used: vec![false; reference.len()],
        cur: Vec::new(),
        cur_exact: 0,
        cur_chunks: 0,
        best: greedy(&exact, &stem, reference.len()),
        nodes: 0,
        budget,
    };
    s.visit(0);
    let mut best = s.best;
    best.optimal = s.nodes <= budget;
    best
}

/// METEOR of one candidate against one reference, with its alignment.
pub fn meteor_components(candidate: &str, reference: &str, params: &MeteorParams) -> (f64, Alignment) {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    let a = align(&c, &r, params.search_budget);
    (score(&a, c.len(), r.len(), params), a)
}

fn score(a: &Alignment, cand_len: usize, ref_len: usize, params: &MeteorParams) -> f64 {
    let m = a.matches() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
    let penalty = params.gamma * (a.chunks as f64 / m).powf(params.beta);
    fmean * (1.0 - penalty)
}

/// METEOR with exact and stem stages, max over references, mean over samples.
pub fn meteor(pairs: &[EvalPair]) -> Result<MetricReport> {
    check_nonempty(pairs)?;
    let params = MeteorParams::default();
    let per_sample: Vec<f64> = pairs
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| meteor_components(&p.candidate, r, &params).0)
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(MetricReport::new(Metric::Meteor, stable_mean(&per_sample), per_sample))
}
