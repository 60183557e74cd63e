//! Ranking metrics over a precomputed query × gallery distance matrix.

use crate::error::{Error, Result};

/// Per query, the same-identity flags of the gallery in ascending distance
/// order (ties keep gallery order). Pairs for which `excluded(q, g)` holds
/// are dropped from that query's list.
pub fn rank_matches<F>(
    dist: &[Vec<f64>],
    query_labels: &[&str],
    gallery_labels: &[&str],
    excluded: F,
) -> Result<Vec<Vec<bool>>>
where
    F: Fn(usize, usize) -> bool,
{
    if gallery_labels.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if dist.len() != query_labels.len() {
        return Err(Error::DimMismatch { expected: query_labels.len(), found: dist.len() });
    }
    let mut out = Vec::with_capacity(dist.len());
    for (q, row) in dist.iter().enumerate() {
        if row.len() != gallery_labels.len() {
            return Err(Error::DimMismatch { expected: gallery_labels.len(), found: row.len() });
        }
        let mut order: Vec<usize> = (0..row.len()).filter(|&g| !excluded(q, g)).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        let flags: Vec<bool> = order.iter().map(|&g| gallery_labels[g] == query_labels[q]).collect();
        if !flags.contains(&true) {
            return Err(Error::QueryWithoutMatch(q));
        }
        out.push(flags);
    }
    Ok(out)
}

/// `cmc[k-1]`: fraction of queries with a match in the top `k`, for `k` in
/// `1..=max_rank`.
pub fn cmc_from_ranks(ranks: &[Vec<bool>], max_rank: usize) -> Vec<f64> {
    let mut hits = vec![0usize; max_rank];
    for flags in ranks {
        if let Some(first) = flags.iter().position(|&m| m) {
            for h in hits.iter_mut().skip(first) {
                *h += 1;
            }
        }
    }
    let n = ranks.len().max(1) as f64;
    hits.into_iter().map(|h| h as f64 / n).collect()
}

/// Mean over correct positions `i` of (correct within the top `i`) / `i`.
pub fn average_precision(flags: &[bool]) -> f64 {
    let mut correct = 0usize;
    let mut sum = 0.0;
    for (i, &m) in flags.iter().enumerate() {
        if m {
            correct += 1;
            sum += correct as f64 / (i + 1) as f64;
        }
    }
    if correct == 0 {
        0.0
    } else {
        sum / correct as f64
    }
}

pub fn mean_average_precision_from_ranks(ranks: &[Vec<bool>]) -> (f64, Vec<f64>) {
    let aps: Vec<f64> = ranks.iter().map(|f| average_precision(f)).collect();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    (map, aps)
}

/// Items that carry an identity label and an image id.
pub trait Labeled {
    fn identity(&self) -> &str;
    fn item_id(&self) -> &str;
}

fn ranks_for<T: Labeled, D: Fn(&T, &T) -> f64>(
    queries: &[T],
    gallery: &[T],
    dist_fn: D,
    exclude_self: bool,
) -> Result<Vec<Vec<bool>>> {
    let dist: Vec<Vec<f64>> = queries.iter().map(|q| gallery.iter().map(|g| dist_fn(q, g)).collect()).collect();
    let ql: Vec<&str> = queries.iter().map(Labeled::identity).collect();
    let gl: Vec<&str> = gallery.iter().map(Labeled::identity).collect();
    rank_matches(&dist, &ql, &gl, |q, g| exclude_self && queries[q].item_id() == gallery[g].item_id())
}

pub fn cmc<T: Labeled, D: Fn(&T, &T) -> f64>(
    queries: &[T],
    gallery: &[T],
    dist_fn: D,
    max_rank: usize,
    exclude_self: bool,
) -> Result<Vec<f64>> {
    Ok(cmc_from_ranks(&ranks_for(queries, gallery, dist_fn, exclude_self)?, max_rank))
}

pub fn mean_average_precision<T: Labeled, D: Fn(&T, &T) -> f64>(
    queries: &[T],
    gallery: &[T],
    dist_fn: D,
    exclude_self: bool,
) -> Result<f64> {
    Ok(mean_average_precision_from_ranks(&ranks_for(queries, gallery, dist_fn, exclude_self)?).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[&'static str]) -> Vec<&'static str> {
        v.to_vec()
    }

    #[test]
    fn nearest_match_gives_rank_one() {
        let r = rank_matches(&[vec![0.1, 0.5, 0.9]], &labels(&["a"]), &labels(&["a", "b", "c"]), |_, _| false).unwrap();
        assert_eq!(cmc_from_ranks(&r, 3), vec![1.0, 1.0, 1.0]);
        assert_eq!(average_precision(&r[0]), 1.0);
    }

    #[test]
    fn match_ranked_last_of_ten() {
        let gl: Vec<&str> = (0..10).map(|i| if i == 9 { "q" } else { "x" }).collect();
        let row: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = rank_matches(&[row], &["q"], &gl, |_, _| false).unwrap();
        let c = cmc_from_ranks(&r, 10);
        assert!(c[..9].iter().all(|&v| v == 0.0));
        assert_eq!(c[9], 1.0);
    }

    #[test]
    fn ap_of_ranks_one_and_three() {
        assert!((average_precision(&[true, false, true, false]) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true, true, false]), 1.0);
    }

    #[test]
    fn ties_keep_gallery_order_and_self_is_excluded() {
        let r = rank_matches(&[vec![1.0, 1.0, 1.0]], &["a"], &["b", "a", "a"], |_, g| g == 1).unwrap();
        assert_eq!(r[0], vec![false, true]);
        assert!(matches!(rank_matches(&[vec![1.0]], &["a"], &["a"], |_, _| true), Err(Error::QueryWithoutMatch(0))));
        assert!(matches!(rank_matches(&[vec![]], &["a"], &[], |_, _| false), Err(Error::EmptyGallery)));
    }

    /// Oracle: enumerate gallery items in (distance, index) order by repeated
    /// minimum extraction and count directly.
    fn oracle(dist: &[Vec<f64>], ql: &[&str], gl: &[&str], max_rank: usize) -> (Vec<f64>, f64) {
        let mut cmc = vec![0.0; max_rank];
        let mut map = 0.0;
        for (q, row) in dist.iter().enumerate() {
            let mut left: Vec<usize> = (0..row.len()).collect();
            let mut seq = Vec::new();
            while !left.is_empty() {
                let mut best = 0;
                for k in 1..left.len() {
                    if row[left[k]] < row[left[best]] {
                        best = k;
                    }
                }
                seq.push(left.remove(best));
            }
            let first = seq.iter().position(|&g| gl[g] == ql[q]).unwrap();
            for (k, c) in cmc.iter_mut().enumerate() {
                if first <= k {
                    *c += 1.0;
                }
            }
            let total = seq.iter().filter(|&&g| gl[g] == ql[q]).count();
            let mut ap = 0.0;
            for i in 0..seq.len() {
                if gl[seq[i]] == ql[q] {
                    let hits = seq[..=i].iter().filter(|&&g| gl[g] == ql[q]).count();
                    ap += hits as f64 / (i + 1) as f64;
                }
            }
            map += ap / total as f64;
        }
        let n = dist.len() as f64;
        (cmc.into_iter().map(|c| c / n).collect(), map / n)
    }

    proptest! {
        #[test]
        fn matches_enumeration_oracle(
            nq in 1usize..6, ng in 1usize..15, ids in 1usize..4, seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let names = ["a", "b", "c", "d"];
            let mut gl: Vec<&str> = (0..ng).map(|_| names[rng.random_range(0..ids)]).collect();
            gl[0] = "a";
            let ql: Vec<&str> = (0..nq).map(|_| "a").collect();
            // coarse distances make ties common
            let dist: Vec<Vec<f64>> = (0..nq).map(|_| (0..ng).map(|_| rng.random_range(0..4) as f64).collect()).collect();
            let ranks = rank_matches(&dist, &ql, &gl, |_, _| false).unwrap();
            let (oc, om) = oracle(&dist, &ql, &gl, ng);
            let c = cmc_from_ranks(&ranks, ng);
            prop_assert_eq!(c.clone(), oc);
            prop_assert_eq!(mean_average_precision_from_ranks(&ranks).0, om);
            for w in c.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert_eq!(*c.last().unwrap(), 1.0);
        }
    }
}
