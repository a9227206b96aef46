//! Retrieval and detection metrics on plain `f64` data.

use std::cmp::Ordering;

use crate::{Error, Result};

/// Ranked gallery for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub query_id: i64,
    /// Gallery ids by ascending distance, ties broken by id ascending.
    pub ranked_ids: Vec<i64>,
    /// Gallery positions (into the input gallery) in ranked order.
    pub ranked_index: Vec<usize>,
    /// Distances in ranked order.
    pub distances: Vec<f64>,
    /// 1-based rank of every gallery entry sharing the query id.
    pub relevant_ranks: Vec<usize>,
}

impl RankingResult {
    /// 1-based rank of the first correct gallery entry.
    pub fn rank_of_true(&self) -> usize {
        self.relevant_ranks[0]
    }

    /// Average precision: mean over hits of precision at that hit.
    pub fn average_precision(&self) -> f64 {
        let hits = self.relevant_ranks.len() as f64;
        self.relevant_ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (i + 1) as f64 / r as f64)
            .sum::<f64>()
            / hits
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 − cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Row-major `[queries × gallery]` cosine distance matrix.
pub fn distance_matrix(queries: &[Vec<f64>], gallery: &[Vec<f64>]) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    queries
        .par_iter()
        .map(|q| gallery.iter().map(|g| cosine_distance(q, g)).collect())
        .collect()
}

/// Rank the gallery for every query from a precomputed distance matrix.
pub fn rank_from_distances(distances: &[Vec<f64>], query_ids: &[i64], gallery_ids: &[i64]) -> Result<Vec<RankingResult>> {
    if distances.len() != query_ids.len() {
        return Err(Error::contract("one distance row per query is required"));
    }
    distances
        .iter()
        .zip(query_ids)
        .map(|(row, &qid)| {
            if row.len() != gallery_ids.len() {
                return Err(Error::contract("distance row length differs from gallery size"));
            }
            if row.iter().any(|d| d.is_nan()) {
                return Err(Error::contract("NaN distance"));
            }
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| {
                row[a]
                    .total_cmp(&row[b])
                    .then(gallery_ids[a].cmp(&gallery_ids[b]))
                    .then(a.cmp(&b))
            });
            let relevant_ranks: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(_, &g)| gallery_ids[g] == qid)
                .map(|(r, _)| r + 1)
                .collect();
            if relevant_ranks.is_empty() {
                return Err(Error::data(format!("query identity {qid} has no gallery entry")));
            }
            Ok(RankingResult {
                query_id: qid,
                ranked_ids: order.iter().map(|&g| gallery_ids[g]).collect(),
                distances: order.iter().map(|&g| row[g]).collect(),
                ranked_index: order,
                relevant_ranks,
            })
        })
        .collect()
}

/// Rank gallery embeddings for each query embedding.
pub fn rank_queries(
    queries: &[Vec<f64>],
    query_ids: &[i64],
    gallery: &[Vec<f64>],
    gallery_ids: &[i64],
) -> Result<Vec<RankingResult>> {
    rank_from_distances(&distance_matrix(queries, gallery), query_ids, gallery_ids)
}

/// Fraction of queries whose first correct match is within the top `k`.
pub fn cmc_at_k(rankings: &[RankingResult], k: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::data("no rankings to score"));
    }
    if k == 0 {
        return Err(Error::config("CMC rank must be at least 1"));
    }
    Ok(rankings.iter().filter(|r| r.rank_of_true() <= k).count() as f64 / rankings.len() as f64)
}

pub fn mean_ap(rankings: &[RankingResult]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::data("no rankings to score"));
    }
    Ok(rankings.iter().map(RankingResult::average_precision).sum::<f64>() / rankings.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted
/// half. `None` when the labels contain only one class.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // count (pos, neg) pairs with pos ranked above neg, walking tie groups
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j].iter().filter(|&&g| labels[g]).count();
        let group_neg = (j - i) - group_pos;
        wins += group_pos as f64 * (neg_below as f64 + 0.5 * group_neg as f64);
        neg_below += group_neg;
        i = j;
    }
    Some(wins / (pos as f64 * neg as f64))
}

/// Per-label AUROC and their macro mean over the labels where it is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAurocs {
    pub per_label: Vec<Option<f64>>,
    pub macro_mean: Option<f64>,
    /// Indices of labels with a single class present.
    pub excluded: Vec<usize>,
}

pub fn label_aurocs(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> LabelAurocs {
    let n_labels = scores.first().map_or(0, Vec::len);
    let per_label: Vec<Option<f64>> = (0..n_labels)
        .map(|j| {
            let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[j]).collect();
            auroc(&s, &l)
        })
        .collect();
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    LabelAurocs {
        macro_mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        excluded: per_label.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect(),
        per_label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranking(ranks: &[usize]) -> Vec<RankingResult> {
        ranks
            .iter()
            .map(|&r| RankingResult {
                query_id: 0,
                ranked_ids: vec![],
                ranked_index: vec![],
                distances: vec![],
                relevant_ranks: vec![r],
            })
            .collect()
    }

    #[test]
    fn ranking_examples() {
        let r = rank_from_distances(&[vec![0.2, 0.1, 0.3]], &[3], &[1, 2, 3]).unwrap();
        assert_eq!(r[0].rank_of_true(), 3);
        assert_eq!(r[0].ranked_ids, vec![2, 1, 3]);
        let tie = rank_from_distances(&[vec![0.5, 0.5, 0.5]], &[7], &[9, 7, 8]).unwrap();
        assert_eq!(tie[0].ranked_ids, vec![7, 8, 9]);
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = rank_queries(&e, &[1, 2], &e, &[1, 2]).unwrap();
        assert!(r.iter().all(|x| x.rank_of_true() == 1));
        assert!(rank_from_distances(&[vec![0.1]], &[5], &[6]).is_err());
    }

    #[test]
    fn cmc_and_map_examples() {
        let r = ranking(&[1, 2, 4]);
        assert!((cmc_at_k(&r, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cmc_at_k(&r, 5).unwrap(), 1.0);
        assert!((mean_ap(&r).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert_eq!(mean_ap(&ranking(&[1, 1])).unwrap(), 1.0);
        assert!(mean_ap(&[]).is_err());
        assert!(cmc_at_k(&[], 1).is_err());
    }

    #[test]
    fn multi_relevant_ap() {
        let r = rank_from_distances(&[vec![0.1, 0.2, 0.3, 0.4]], &[1], &[1, 2, 1, 3]).unwrap();
        assert_eq!(r[0].relevant_ranks, vec![1, 3]);
        assert!((r[0].average_precision() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.85], &[true, true, false, false]), Some(0.75));
        assert_eq!(auroc(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
        assert_eq!(auroc(&[0.3; 4], &[true, false, true, false]), Some(0.5));
        assert_eq!(auroc(&[0.3, 0.4], &[true, true]), None);
    }

    #[test]
    fn macro_excludes_degenerate_labels() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.3]];
        let labels = vec![vec![true, false], vec![false, false]];
        let a = label_aurocs(&scores, &labels);
        assert_eq!(a.per_label, vec![Some(1.0), None]);
        assert_eq!(a.macro_mean, Some(1.0));
        assert_eq!(a.excluded, vec![1]);
    }

    proptest! {
        #[test]
        fn cmc_is_monotone(ranks in proptest::collection::vec(1usize..30, 1..40)) {
            let r = ranking(&ranks);
            let mut prev = 0.0;
            for k in 1..35 {
                let v = cmc_at_k(&r, k).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
        }

        #[test]
        fn auroc_invariant_under_increasing_transform(
            pairs in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)
        ) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let t: Vec<f64> = s.iter().map(|x| x * 4.0).collect();
            prop_assert_eq!(auroc(&s, &l), auroc(&t, &l));
        }

        #[test]
        fn map_is_one_iff_all_first(ranks in proptest::collection::vec(1usize..4, 1..20)) {
            let r = ranking(&ranks);
            prop_assert_eq!(mean_ap(&r).unwrap() == 1.0, ranks.iter().all(|&x| x == 1));
        }
    }
}
