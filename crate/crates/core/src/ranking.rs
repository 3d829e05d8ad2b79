//! Per-user top-K rankings with seen-item exclusion.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use crate::domain::IdMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub user: u32,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
    /// Fewer than K unseen items were available.
    pub truncated: bool,
}

/// Descending by score, ties by ascending item index.
#[inline]
fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Selects the `k` highest-scoring items whose index is not in `seen`
/// (sorted ascending).
pub fn top_k_unseen(user: u32, scores: &[f64], seen: &[u32], k: usize) -> Ranking {
    debug_assert!(seen.windows(2).all(|w| w[0] < w[1]));
    let mut cand: Vec<(u32, f64)> = Vec::with_capacity(scores.len().saturating_sub(seen.len()));
    let mut s = seen.iter().peekable();
    for (i, &score) in scores.iter().enumerate() {
        let i = i as u32;
        while s.peek().is_some_and(|&&v| v < i) {
            s.next();
        }
        if s.peek() == Some(&&i) {
            continue;
        }
        cand.push((i, score));
    }
    let truncated = cand.len() < k;
    if cand.len() > k && k > 0 {
        cand.select_nth_unstable_by(k - 1, rank_order);
        cand.truncate(k);
    } else if k == 0 {
        cand.clear();
    }
    cand.sort_unstable_by(rank_order);
    Ranking {
        user,
        items: cand.iter().map(|c| c.0).collect(),
        scores: cand.iter().map(|c| c.1).collect(),
        truncated,
    }
}

/// Writes `user_id, rank, item_id, score` rows (tab-separated, 1-based rank).
pub fn write_rankings_tsv(path: impl AsRef<Path>, rankings: &[Ranking], users: &IdMap, items: &IdMap) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("user_id\trank\titem_id\tscore\n");
    for r in rankings {
        for (pos, (&item, &score)) in r.items.iter().zip(&r.scores).enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                users.id(r.user),
                pos + 1,
                items.id(item),
                score
            ));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
