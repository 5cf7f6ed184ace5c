//! Corpus-level captioning metrics over single-reference pairs: BLEU-1..4,
//! ROUGE-L, METEOR (exact + stem stages) and CIDEr-D.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{lcs_length, ngrams, stem, NgramCounts, TokenSeq};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("no evaluation pairs")]
    EmptyInput,
    #[error("CIDEr needs at least two pairs to estimate document frequencies, got {0}")]
    TooFewPairs(usize),
    #[error("BLEU order must be in 1..=4, got {0}")]
    InvalidOrder(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub id: String,
    pub candidate: TokenSeq,
    pub reference: TokenSeq,
}

impl EvalPair {
    pub fn new(id: impl Into<String>, candidate: TokenSeq, reference: TokenSeq) -> EvalPair {
        EvalPair {
            id: id.into(),
            candidate,
            reference,
        }
    }
}

pub const MAX_BLEU_ORDER: usize = 4;

/// Clipped n-gram matches and candidate n-gram total for one pair and order.
fn clipped_counts(cand: &NgramCounts, refr: &NgramCounts) -> (usize, usize) {
    let matched = cand.iter().map(|(g, c)| c.min(refr.get(g))).sum();
    (matched, cand.total())
}

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped n-gram matches, index `n - 1`.
    pub matched: Vec<usize>,
    /// Candidate n-gram totals, index `n - 1`.
    pub total: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn collect(pairs: &[EvalPair], order: usize) -> BleuStats {
        let mut stats = BleuStats {
            matched: vec![0; order],
            total: vec![0; order],
            candidate_len: 0,
            reference_len: 0,
        };
        for pair in pairs {
            stats.candidate_len += pair.candidate.len();
            stats.reference_len += pair.reference.len();
            for n in 1..=order {
                let (m, t) =
                    clipped_counts(&ngrams(&pair.candidate, n), &ngrams(&pair.reference, n));
                stats.matched[n - 1] += m;
                stats.total[n - 1] += t;
            }
        }
        stats
    }

    /// Geometric mean of the precisions times the brevity penalty; zero if
    /// any precision is zero.
    pub fn score(&self) -> f64 {
        if self.matched.contains(&0) {
            return 0.0;
        }
        let order = self.matched.len() as f64;
        let log_precision: f64 = self
            .matched
            .iter()
            .zip(&self.total)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / order;
        let brevity = if self.candidate_len > self.reference_len {
            1.0
        } else {
            (1.0 - self.reference_len as f64 / self.candidate_len as f64).exp()
        };
        brevity * log_precision.exp()
    }
}

/// Corpus BLEU-`order` without smoothing.
pub fn bleu(pairs: &[EvalPair], order: usize) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if !(1..=MAX_BLEU_ORDER).contains(&order) {
        return Err(MetricError::InvalidOrder(order));
    }
    Ok(BleuStats::collect(pairs, order).score())
}

pub const ROUGE_BETA: f64 = 1.2;

/// Sentence-level ROUGE-L F-measure.
pub fn rouge_l_pair(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let lcs = lcs_length(candidate.as_slice(), reference.as_slice());
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / candidate.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + beta2) * precision * recall / (recall + beta2 * precision)
}

/// Mean ROUGE-L F over pairs.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    mean_over(pairs, |p| rouge_l_pair(&p.candidate, &p.reference))
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// One-to-one alignment as (candidate index, reference index), sorted by
/// candidate index. Exact matches are taken first, then stem matches among
/// the leftovers; each stage pairs a candidate token with the leftmost
/// still-free reference token.
pub fn meteor_alignment(candidate: &TokenSeq, reference: &TokenSeq) -> Vec<(usize, usize)> {
    let cand = candidate.as_slice();
    let refr = reference.as_slice();
    let mut cand_used = vec![false; cand.len()];
    let mut ref_used = vec![false; refr.len()];
    let mut alignment = Vec::new();

    let mut stage = |key: &dyn Fn(&str) -> String| {
        let ref_keys: Vec<String> = refr.iter().map(|t| key(t)).collect();
        for (i, token) in cand.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            let k = key(token);
            if let Some(j) = (0..refr.len()).find(|&j| !ref_used[j] && ref_keys[j] == k) {
                cand_used[i] = true;
                ref_used[j] = true;
                alignment.push((i, j));
            }
        }
    };
    stage(&|t| t.to_string());
    stage(&stem);
    alignment.sort_unstable();
    alignment
}

/// Number of maximal runs adjacent in both candidate and reference.
fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub fn meteor_pair(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let alignment = meteor_alignment(candidate, reference);
    let matches = alignment.len();
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let precision = m / candidate.len() as f64;
    let recall = m / reference.len() as f64;
    let fmean = precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall);
    let fragmentation = chunk_count(&alignment) as f64 / m;
    let penalty = METEOR_GAMMA * fragmentation.powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

pub fn meteor(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    mean_over(pairs, |p| meteor_pair(&p.candidate, &p.reference))
}

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;
pub const CIDER_MAX_ORDER: usize = 4;

/// Document frequencies over the reference side, one table per order.
#[derive(Debug, Clone)]
pub struct CiderIdf {
    num_docs: usize,
    df: Vec<BTreeMap<Vec<String>, usize>>,
}

impl CiderIdf {
    pub fn from_references<'a>(references: impl IntoIterator<Item = &'a TokenSeq>) -> CiderIdf {
        let mut df = vec![BTreeMap::new(); CIDER_MAX_ORDER];
        let mut num_docs = 0;
        for reference in references {
            num_docs += 1;
            for (n, table) in df.iter_mut().enumerate() {
                for (gram, _) in ngrams(reference, n + 1).iter() {
                    *table.entry(gram.to_vec()).or_insert(0) += 1;
                }
            }
        }
        CiderIdf { num_docs, df }
    }

    /// `max(0, ln(N / (1 + df)))`.
    pub fn idf(&self, order: usize, gram: &[String]) -> f64 {
        let df = self.df[order - 1].get(gram).copied().unwrap_or(0);
        (self.num_docs as f64 / (1.0 + df as f64)).ln().max(0.0)
    }

    fn weights(&self, counts: &NgramCounts) -> BTreeMap<Vec<String>, f64> {
        counts
            .iter()
            .map(|(g, c)| (g.to_vec(), c as f64 * self.idf(counts.order(), g)))
            .collect()
    }
}

/// CIDEr-D of one pair against a precomputed IDF table.
pub fn cider_pair(idf: &CiderIdf, candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let delta = candidate.len() as f64 - reference.len() as f64;
    let length_penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 1..=CIDER_MAX_ORDER {
        let cand = idf.weights(&ngrams(candidate, n));
        let refr = idf.weights(&ngrams(reference, n));
        let norm = |v: &BTreeMap<Vec<String>, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
        let denom = norm(&cand) * norm(&refr);
        if denom == 0.0 {
            continue;
        }
        let clipped_dot: f64 = refr
            .iter()
            .map(|(g, r)| cand.get(g).map_or(0.0, |c| c.min(*r) * r))
            .sum();
        total += CIDER_SCALE * length_penalty * clipped_dot / denom;
    }
    total / CIDER_MAX_ORDER as f64
}

pub fn cider(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if pairs.len() < 2 {
        return Err(MetricError::TooFewPairs(pairs.len()));
    }
    let idf = CiderIdf::from_references(pairs.iter().map(|p| &p.reference));
    mean_over(pairs, |p| cider_pair(&idf, &p.candidate, &p.reference))
}

fn mean_over(pairs: &[EvalPair], score: impl Fn(&EvalPair) -> f64) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(pairs.iter().map(score).sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlgScores {
    pub bleu: [f64; MAX_BLEU_ORDER],
    pub rouge_l: f64,
    pub meteor: f64,
    /// `None` when the corpus is too small for document frequencies.
    pub cider: Option<f64>,
}

pub fn evaluate_nlg(pairs: &[EvalPair]) -> Result<NlgScores, MetricError> {
    let mut bleu_scores = [0.0; MAX_BLEU_ORDER];
    for (n, slot) in bleu_scores.iter_mut().enumerate() {
        *slot = bleu(pairs, n + 1)?;
    }
    let cider = match cider(pairs) {
        Ok(value) => Some(value),
        Err(MetricError::TooFewPairs(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(NlgScores {
        bleu: bleu_scores,
        rouge_l: rouge_l(pairs)?,
        meteor: meteor(pairs)?,
        cider,
    })
}
