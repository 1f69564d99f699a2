//! Sentence embeddings and exact cosine retrieval.
//!
//! Sentences are embedded by averaging their token vectors. Retrieval scores
//! every query against every candidate by cosine similarity; there is no
//! approximate index. Ties are always broken in favour of the lower index.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{EmbeddingDataset, SentenceRecord};
use crate::error::{Error, Result};
use crate::langrep::LanguageMean;

/// Mean-pooled vector of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
    pub index: usize,
    pub language: String,
}

/// Average of the sentence's token vectors, accumulated in double precision.
pub fn pool_sentence(sentence: &SentenceRecord, index: usize) -> Result<SentenceEmbedding> {
    let n = sentence.token_count();
    if n == 0 {
        return Err(Error::EmptySentence(index));
    }
    let mut sum = vec![0.0f64; sentence.dim()];
    for (_, v) in sentence.tokens() {
        for (acc, &x) in sum.iter_mut().zip(v) {
            *acc += f64::from(x);
        }
    }
    let n = n as f64;
    sum.iter_mut().for_each(|x| *x /= n);
    Ok(SentenceEmbedding {
        vector: sum,
        index,
        language: sentence.language().to_string(),
    })
}

pub fn pool_dataset(dataset: &EmbeddingDataset) -> Result<Vec<SentenceEmbedding>> {
    dataset
        .sentences()
        .iter()
        .enumerate()
        .map(|(i, s)| pool_sentence(s, i))
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine of a zero-norm vector".into()));
    }
    Ok(cosine_with_norms(a, b, na, nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub candidate: usize,
    pub score: f64,
}

/// Ranked candidates for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHits {
    pub query: usize,
    pub hits: Vec<Hit>,
    /// Set when the query vector has zero norm; `hits` is then empty.
    pub degenerate: bool,
}

impl QueryHits {
    pub fn top1(&self) -> Option<Hit> {
        self.hits.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    pub queries: Vec<QueryHits>,
    /// Candidates with zero norm; they never appear in any ranking.
    pub degenerate_candidates: Vec<usize>,
}

const QUERY_BLOCK: usize = 64;

fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.candidate.cmp(&b.candidate))
}

/// Top-`k` candidates for every query by cosine similarity.
///
/// Query and candidate positions in the input slices are what the result
/// reports, not `SentenceEmbedding::index`.
pub fn retrieve(
    queries: &[SentenceEmbedding],
    candidates: &[SentenceEmbedding],
    k: usize,
) -> Result<RetrievalResult> {
    if candidates.is_empty() {
        return Err(Error::Validation("retrieval needs at least one candidate".into()));
    }
    if k == 0 {
        return Err(Error::Validation("retrieval k must be at least 1".into()));
    }
    let dim = candidates[0].vector.len();
    for e in queries.iter().chain(candidates) {
        if e.vector.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: e.vector.len(),
            });
        }
    }

    let cand_norms: Vec<f64> = candidates.iter().map(|c| norm(&c.vector)).collect();
    let live: Vec<usize> = (0..candidates.len()).filter(|&j| cand_norms[j] > 0.0).collect();
    let degenerate_candidates = (0..candidates.len())
        .filter(|&j| cand_norms[j] == 0.0)
        .collect();

    let ranked: Vec<QueryHits> = queries
        .par_chunks(QUERY_BLOCK)
        .enumerate()
        .flat_map_iter(|(block, chunk)| {
            let live = &live;
            let cand_norms = &cand_norms;
            chunk.iter().enumerate().map(move |(off, q)| {
                let query = block * QUERY_BLOCK + off;
                let nq = norm(&q.vector);
                if nq == 0.0 {
                    return QueryHits {
                        query,
                        hits: Vec::new(),
                        degenerate: true,
                    };
                }
                let mut hits: Vec<Hit> = live
                    .iter()
                    .map(|&j| Hit {
                        candidate: j,
                        score: cosine_with_norms(&q.vector, &candidates[j].vector, nq, cand_norms[j]),
                    })
                    .collect();
                let keep = k.min(hits.len());
                if keep > 0 && keep < hits.len() {
                    hits.select_nth_unstable_by(keep - 1, rank_order);
                    hits.truncate(keep);
                }
                hits.sort_by(rank_order);
                QueryHits {
                    query,
                    hits,
                    degenerate: false,
                }
            })
        })
        .collect();

    Ok(RetrievalResult {
        k,
        queries: ranked,
        degenerate_candidates,
    })
}

/// Query to candidate gold alignment. Parsed from `query_id<TAB>candidate_id` lines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldPairs(pub Vec<(usize, usize)>);

impl GoldPairs {
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                    Error::Validation(format!("gold line {}: expected two integer ids", lineno + 1))
                })
            };
            let q = parse(cols.next())?;
            let c = parse(cols.next())?;
            pairs.push((q, c));
        }
        Ok(GoldPairs(pairs))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        self.0.iter().map(|(q, c)| format!("{q}\t{c}\n")).collect()
    }

    pub fn identity(n: usize) -> Self {
        GoldPairs((0..n).map(|i| (i, i)).collect())
    }

    pub fn pair_set(&self) -> BTreeSet<(usize, usize)> {
        self.0.iter().copied().collect()
    }

    /// Checks the pairs form a bijection and returns the query to candidate map.
    pub fn bijection(&self) -> Result<BTreeMap<usize, usize>> {
        let mut map = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for &(q, c) in &self.0 {
            if map.insert(q, c).is_some() {
                return Err(Error::GoldMismatch(format!("query {q} has two gold entries")));
            }
            if !targets.insert(c) {
                return Err(Error::GoldMismatch(format!(
                    "candidate {c} is gold for two queries"
                )));
            }
        }
        Ok(map)
    }
}

/// What to do with queries whose vector had zero norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// They stay in the denominator and count as misses.
    #[default]
    CountAsMiss,
    /// They are dropped from the denominator.
    Exclude,
}

/// Fraction of queries whose rank-1 candidate is the gold one.
pub fn tatoeba_accuracy(
    result: &RetrievalResult,
    gold: &GoldPairs,
    policy: DegeneratePolicy,
) -> Result<f64> {
    let map = gold.bijection()?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for q in &result.queries {
        let expected = map
            .get(&q.query)
            .ok_or_else(|| Error::GoldMismatch(format!("no gold entry for query {}", q.query)))?;
        if q.degenerate && policy == DegeneratePolicy::Exclude {
            continue;
        }
        total += 1;
        if q.top1().is_some_and(|h| h.candidate == *expected) {
            correct += 1;
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(correct as f64 / total as f64)
}

/// A mined source/target pair with its similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub source: usize,
    pub target: usize,
    pub score: f64,
}

/// Forward nearest-neighbour pairs: each query with its rank-1 candidate.
pub fn mine_pairs(result: &RetrievalResult) -> Vec<ScoredPair> {
    result
        .queries
        .iter()
        .filter_map(|q| {
            q.top1().map(|h| ScoredPair {
                source: q.query,
                target: h.candidate,
                score: h.score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub correct: usize,
    pub gold: usize,
}

impl PrecisionRecall {
    fn from_counts(predicted: usize, correct: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            correct as f64 / predicted as f64
        };
        let recall = correct as f64 / gold as f64;
        let f1 = if correct == 0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrecisionRecall {
            precision,
            recall,
            f1,
            predicted,
            correct,
            gold,
        }
    }
}

/// Precision, recall and F1 of the pairs scoring at least `threshold`.
/// An empty prediction has precision 0.
pub fn bucc_f1(
    pairs: &[ScoredPair],
    gold: &BTreeSet<(usize, usize)>,
    threshold: f64,
) -> Result<PrecisionRecall> {
    if gold.is_empty() {
        return Err(Error::GoldMismatch("empty gold pair set".into()));
    }
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::Data("non-finite pair score".into()));
    }
    let predicted: BTreeSet<(usize, usize)> = pairs
        .iter()
        .filter(|p| p.score >= threshold)
        .map(|p| (p.source, p.target))
        .collect();
    let correct = predicted.intersection(gold).count();
    Ok(PrecisionRecall::from_counts(predicted.len(), correct, gold.len()))
}

/// Threshold among the observed scores that maximises F1 on `gold`; the
/// smallest such threshold wins ties. With no pairs at all, nothing can be
/// predicted and `+inf` is returned.
pub fn tune_threshold(pairs: &[ScoredPair], gold: &BTreeSet<(usize, usize)>) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::GoldMismatch("empty dev gold pair set".into()));
    }
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::Data("non-finite pair score".into()));
    }
    // Deduplicate (source, target), keeping the highest score: a pair is
    // predicted at threshold t iff its best score is >= t.
    let mut best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for p in pairs {
        let e = best.entry((p.source, p.target)).or_insert(p.score);
        if p.score > *e {
            *e = p.score;
        }
    }
    let mut scored: Vec<(f64, bool)> = best
        .iter()
        .map(|(pair, &s)| (s, gold.contains(pair)))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut best_threshold = f64::INFINITY;
    let mut best_f1 = f64::NEG_INFINITY;
    let (mut predicted, mut correct) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            predicted += 1;
            correct += usize::from(scored[i].1);
            i += 1;
        }
        let f1 = PrecisionRecall::from_counts(predicted, correct, gold.len()).f1;
        // Descending sweep: `>=` moves to the smaller threshold on ties.
        if f1 >= best_f1 {
            best_f1 = f1;
            best_threshold = t;
        }
    }
    Ok(best_threshold)
}

/// Cosines of a parallel sentence pair before and after each transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineDiagnostics {
    pub cos_raw: f64,
    pub cos_mds: f64,
    pub cos_zero_mean: f64,
}

/// `cos(v1, v2)`, `cos(v1 - m1 + m2, v2)` and `cos(v1 - m1, v2 - m2)`.
pub fn cosine_diagnostics(
    v1: &SentenceEmbedding,
    v2: &SentenceEmbedding,
    mean1: &LanguageMean,
    mean2: &LanguageMean,
) -> Result<CosineDiagnostics> {
    let dim = v1.vector.len();
    for d in [v2.vector.len(), mean1.dim(), mean2.dim()] {
        if d != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: d,
            });
        }
    }
    let m1: Vec<f64> = mean1.vector().iter().map(|&x| f64::from(x)).collect();
    let m2: Vec<f64> = mean2.vector().iter().map(|&x| f64::from(x)).collect();
    let centered1: Vec<f64> = v1.vector.iter().zip(&m1).map(|(v, m)| v - m).collect();
    let centered2: Vec<f64> = v2.vector.iter().zip(&m2).map(|(v, m)| v - m).collect();
    let moved1: Vec<f64> = centered1.iter().zip(&m2).map(|(c, m)| c + m).collect();

    Ok(CosineDiagnostics {
        cos_raw: cosine(&v1.vector, &v2.vector)?,
        cos_mds: cosine(&moved1, &v2.vector)?,
        cos_zero_mean: cosine(&centered1, &centered2)?,
    })
}
