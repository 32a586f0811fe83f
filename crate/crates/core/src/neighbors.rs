//! Exhaustive nearest-neighbor search over an embedding vocabulary.

use std::cmp::Ordering;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::embeddings::EmbeddingSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for Metric {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(crate::Error::InvalidArgument(format!("metric `{s}` (expected cosine or euclidean)"))),
        }
    }
}

/// A scored vocabulary entry. For cosine the score is the similarity; for
/// Euclidean it is the negated distance, so larger is always closer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

fn closer(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// Brute-force scorer with cached word norms.
pub struct NeighborIndex<'a> {
    es: &'a EmbeddingSet,
    norms: Vec<f64>,
}

const CHUNK: usize = 4096;

impl<'a> NeighborIndex<'a> {
    pub fn new(es: &'a EmbeddingSet) -> Self {
        let norms = (0..es.len())
            .map(|i| es.column(i).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
            .collect();
        NeighborIndex { es, norms }
    }

    pub fn embeddings(&self) -> &'a EmbeddingSet {
        self.es
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    /// Score of word `i` against `query` (`query_norm` = ‖query‖).
    /// Zero vectors have cosine 0 to everything.
    pub fn score(&self, query: &[f64], query_norm: f64, i: usize, metric: Metric) -> f64 {
        let col = self.es.column(i);
        match metric {
            Metric::Cosine => {
                let denom = query_norm * self.norms[i];
                if denom == 0.0 {
                    return 0.0;
                }
                let dot: f64 = col.iter().zip(query).map(|(&a, &b)| a as f64 * b).sum();
                dot / denom
            }
            Metric::Euclidean => {
                let sq: f64 = col.iter().zip(query).map(|(&a, &b)| (a as f64 - b) * (a as f64 - b)).sum();
                -sq.sqrt()
            }
        }
    }

    /// The `k` closest words to `query`, skipping `exclude`. Ties go to the
    /// lower index. Scans vocabulary chunks in parallel; the result does not
    /// depend on the thread count.
    pub fn top_k(&self, query: &DVector<f64>, k: usize, exclude: &[usize], metric: Metric) -> Vec<Neighbor> {
        let q = query.as_slice();
        let qn = query.norm();
        let n_words = self.es.len();
        let mut merged: Vec<Neighbor> = (0..n_words.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let start = chunk * CHUNK;
                let end = (start + CHUNK).min(n_words);
                let mut local: Vec<Neighbor> = (start..end)
                    .filter(|i| !exclude.contains(i))
                    .map(|i| Neighbor { index: i, score: self.score(q, qn, i, metric) })
                    .collect();
                if local.len() > k {
                    local.select_nth_unstable_by(k, closer);
                    local.truncate(k);
                }
                local
            })
            .flatten()
            .collect();
        merged.sort_by(closer);
        merged.truncate(k);
        merged
    }

    pub fn nearest(&self, query: &DVector<f64>, exclude: &[usize], metric: Metric) -> Option<Neighbor> {
        self.top_k(query, 1, exclude, metric).into_iter().next()
    }
}

/// Sequential scan kept as a reference path for the parallel search.
pub fn nearest_naive(es: &EmbeddingSet, query: &DVector<f64>, exclude: &[usize], metric: Metric) -> Option<usize> {
    let index = NeighborIndex::new(es);
    let qn = query.norm();
    let mut best: Option<Neighbor> = None;
    for i in 0..es.len() {
        if exclude.contains(&i) {
            continue;
        }
        let cand = Neighbor { index: i, score: index.score(query.as_slice(), qn, i, metric) };
        if best.is_none_or(|b| closer(&cand, &b) == Ordering::Less) {
            best = Some(cand);
        }
    }
    best.map(|b| b.index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::Vocabulary;
    use nalgebra::DMatrix;

    fn set() -> EmbeddingSet {
        let v = DMatrix::from_column_slice(2, 4, &[1.0, 0.0, 0.0, 1.0, 2.0, 0.1, 0.0, 0.0]);
        let words = ["a", "b", "c", "z"].iter().map(|s| s.to_string()).collect();
        EmbeddingSet::new(Vocabulary::new(words).unwrap(), v, "t").unwrap()
    }

    #[test]
    fn cosine_and_euclidean_order() {
        let es = set();
        let idx = NeighborIndex::new(&es);
        let q = DVector::from_vec(vec![1.0, 0.0]);
        let top = idx.top_k(&q, 4, &[], Metric::Cosine);
        assert_eq!(top.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 2, 1, 3]);
        let top = idx.top_k(&q, 2, &[0], Metric::Euclidean);
        assert_eq!(top.iter().map(|n| n.index).collect::<Vec<_>>(), vec![3, 2]);
        assert_eq!(nearest_naive(&es, &q, &[0], Metric::Euclidean), Some(3));
    }

    #[test]
    fn zero_query_ties_to_lowest_index() {
        let es = set();
        let idx = NeighborIndex::new(&es);
        let q = DVector::zeros(2);
        assert_eq!(idx.nearest(&q, &[0], Metric::Cosine).unwrap().index, 1);
    }
}
