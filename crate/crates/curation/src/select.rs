//! Post-training selection: clips in the top percentile of both aesthetic
//! and foreground-weighted motion scores.

use std::cmp::Ordering;

use crate::manifest::ClipRecord;

fn top_set(ids: &[&str], scores: &[f64], count: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(ids[a].cmp(ids[b])));
    let mut mask = vec![false; ids.len()];
    for &i in &order[..count] {
        mask[i] = true;
    }
    mask
}

/// Indices (in input order) in the top `ceil(p·n)` by both scores; ties
/// rank by id.
pub fn dual_top_percentile(ids: &[&str], a: &[f64], b: &[f64], p: f64) -> Vec<usize> {
    assert!(ids.len() == a.len() && a.len() == b.len(), "score columns differ in length");
    let n = ids.len();
    let count = ((p.clamp(0.0, 1.0) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let (ta, tb) = (top_set(ids, a, count), top_set(ids, b, count));
    (0..n).filter(|&i| ta[i] && tb[i]).collect()
}

pub fn select_top_percentile(records: &[ClipRecord], p: f64) -> Vec<usize> {
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let a: Vec<f64> = records.iter().map(|r| r.aesthetic).collect();
    let m: Vec<f64> = records.iter().map(|r| r.motion_post).collect();
    dual_top_percentile(&ids, &a, &m, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use vidgen_core::rng::seeded;

    fn recs(scores: &[(f64, f64)]) -> Vec<ClipRecord> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &(a, m))| ClipRecord { id: format!("r{i:05}"), aesthetic: a, motion_post: m, ..Default::default() })
            .collect()
    }

    #[test]
    fn correlated_scores_select_exactly_p() {
        let r = recs(&(0..100).map(|i| (i as f64, 2.0 * i as f64)).collect::<Vec<_>>());
        assert_eq!(select_top_percentile(&r, 0.1), (90..100).collect::<Vec<_>>());
        assert_eq!(select_top_percentile(&r, 1.0).len(), 100);
        assert!(select_top_percentile(&r, 0.0).is_empty());
    }

    #[test]
    fn ties_break_by_id() {
        let r = recs(&[(1.0, 1.0); 10]);
        assert_eq!(select_top_percentile(&r, 0.2), vec![0, 1]);
    }

    #[test]
    fn independent_scores_select_about_p_squared() {
        let mut rng = seeded(11);
        let n = 10_000;
        let r = recs(&(0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect::<Vec<_>>());
        let k = select_top_percentile(&r, 0.1).len() as f64;
        // hypergeometric: 1000 draws from 10⁴ with 1000 marked
        let (draws, marked, total) = (1000.0, 1000.0, n as f64);
        let mean = draws * marked / total;
        let var = draws * (marked / total) * (1.0 - marked / total) * (total - draws) / (total - 1.0);
        assert!((k - mean).abs() <= 3.0 * var.sqrt(), "selected {k}, expected {mean} ± {}", 3.0 * var.sqrt());
    }
}
