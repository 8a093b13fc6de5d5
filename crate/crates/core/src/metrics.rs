//! Ranking metrics. All take an already-ranked item list (best first) and a
//! relevant set; AUC works on raw score samples with midrank tie handling.

use std::collections::HashSet;

pub fn precision_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / k as f64
}

pub fn recall_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG: DCG = sum over relevant hits of 1/log2(rank+1) with
/// ranks starting at 1, normalized by the ideal DCG for this relevant set.
pub fn ndcg_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / ideal
}

/// Mann-Whitney AUC from positive and negative score samples; ties count 1/2.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));
    // midranks over tie groups
    let n = all.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    u / (np * nn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn set(items: &[u32]) -> HashSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn precision_recall_hand_cases() {
        let ranked = [5, 3, 9, 1, 7];
        let rel = set(&[3, 7, 20]);
        assert!((precision_at_k(&ranked, &rel, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((precision_at_k(&ranked, &rel, 5) - 2.0 / 5.0).abs() < 1e-15);
        assert!((recall_at_k(&ranked, &rel, 5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at_k(&ranked, &set(&[]), 3), 0.0);
        assert_eq!(recall_at_k(&ranked, &set(&[]), 3), 0.0);
    }

    #[test]
    fn ndcg_hand_case() {
        // relevant at ranks 1 and 3 of k=3, two relevant total:
        // dcg = 1/log2(2) + 1/log2(4) = 1.5; idcg = 1/log2(2) + 1/log2(3)
        let ranked = [10, 11, 12];
        let rel = set(&[10, 12]);
        let want = 1.5 / (1.0 + 1.0 / 3.0f64.log2());
        assert!((ndcg_at_k(&ranked, &rel, 3) - want).abs() < 1e-12);
        // perfect ranking gives 1
        assert!((ndcg_at_k(&[1, 2], &set(&[1, 2]), 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc(&[2.0, 3.0], &[0.0, 1.0]), 1.0);
        assert_eq!(auc(&[0.0, 1.0], &[2.0, 3.0]), 0.0);
        assert_eq!(auc(&[1.0], &[1.0]), 0.5);
        // one inversion among 2x2
        assert!((auc(&[3.0, 1.0], &[2.0, 0.0]) - 0.75).abs() < 1e-15);
        // degenerate inputs fall back to chance
        assert_eq!(auc(&[], &[1.0]), 0.5);
    }

    /// O(n*m) pairwise oracle.
    fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for &p in pos {
            for &q in neg {
                s += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auc_matches_pairwise_oracle_with_ties() {
        let mut r = rng::rng_from(21, &[0]);
        for _ in 0..200 {
            let np = r.random_range(1..30usize);
            let nn = r.random_range(1..30usize);
            // coarse grid forces plenty of ties
            let pos: Vec<f64> = (0..np).map(|_| r.random_range(0..6) as f64 / 2.0).collect();
            let neg: Vec<f64> = (0..nn).map(|_| r.random_range(0..6) as f64 / 2.0).collect();
            let fast = auc(&pos, &neg);
            let slow = auc_oracle(&pos, &neg);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ranking_metrics_match_brute_force_on_random_instances() {
        let mut r = rng::rng_from(33, &[1]);
        for _ in 0..200 {
            let n_items = r.random_range(1..=50usize);
            let mut ranked: Vec<u32> = (0..n_items as u32).collect();
            // Fisher-Yates
            for i in (1..ranked.len()).rev() {
                let j = r.random_range(0..=i);
                ranked.swap(i, j);
            }
            let rel: HashSet<u32> =
                (0..n_items as u32).filter(|_| r.random_range(0.0..1.0) < 0.3).collect();
            let k = r.random_range(1..=n_items);

            let hits: Vec<bool> = ranked.iter().take(k).map(|i| rel.contains(i)).collect();
            let n_hits = hits.iter().filter(|&&h| h).count() as f64;
            assert!((precision_at_k(&ranked, &rel, k) - n_hits / k as f64).abs() < 1e-15);
            if !rel.is_empty() {
                assert!((recall_at_k(&ranked, &rel, k) - n_hits / rel.len() as f64).abs() < 1e-15);
                let dcg: f64 = hits
                    .iter()
                    .enumerate()
                    .map(|(i, &h)| if h { 1.0 / ((i as f64) + 2.0).log2() } else { 0.0 })
                    .sum();
                let idcg: f64 = (0..rel.len().min(k)).map(|i| 1.0 / ((i as f64) + 2.0).log2()).sum();
                assert!((ndcg_at_k(&ranked, &rel, k) - dcg / idcg).abs() < 1e-12);
            }
        }
    }
}
