//! Top-K ranking metrics, per-user aggregation and paired bootstrap
//! significance testing.
//!
//! Relevance is binary: an item is relevant to a user when it occurs in the
//! user's evaluation events. For a ranking `r` truncated at `K` and relevant
//! set `R`:
//!
//! | metric    | value                                               |
//! | --------- | --------------------------------------------------- |
//! | hitrate   | 1 if any of `r[..K]` is in `R`, else 0              |
//! | recall    | `|r[..K] ∩ R| / |R|`                                |
//! | precision | `|r[..K] ∩ R| / K`                                  |
//! | mrr       | `1 / rank` of the first hit within `K`, else 0      |
//! | ndcg      | `Σ_hits 1/log2(rank+1)` over the ideal DCG of `min(|R|, K)` hits |

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{IdMap, IndexedEvent};
use crate::error::{Error, Result};
use crate::ranking::Ranking;

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Distinct evaluation items per user (sorted).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceSets {
    sets: BTreeMap<u32, Vec<u32>>,
}

impl RelevanceSets {
    pub fn from_events(events: &[IndexedEvent]) -> Self {
        let mut sets: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for e in events {
            sets.entry(e.user).or_default().push(e.item);
        }
        for v in sets.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        RelevanceSets { sets }
    }

    pub fn get(&self, user: u32) -> &[u32] {
        self.sets.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn users(&self) -> Vec<u32> {
        self.sets.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub hitrate: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    HitRate,
    Recall,
    Ndcg,
    Mrr,
    Precision,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::HitRate, Metric::Recall, Metric::Ndcg, Metric::Mrr, Metric::Precision];

    pub fn name(self) -> &'static str {
        match self {
            Metric::HitRate => "hitrate",
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
            Metric::Precision => "precision",
        }
    }

    pub fn label(self, k: usize) -> String {
        let base = match self {
            Metric::HitRate => "HitRate",
            Metric::Recall => "Recall",
            Metric::Ndcg => "NDCG",
            Metric::Mrr => "MRR",
            Metric::Precision => "Precision",
        };
        format!("{base}@{k}")
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

impl MetricValues {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::HitRate => self.hitrate,
            Metric::Recall => self.recall,
            Metric::Ndcg => self.ndcg,
            Metric::Mrr => self.mrr,
            Metric::Precision => self.precision,
        }
    }
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Metrics of one ranking against a sorted, de-duplicated relevant set.
pub fn metrics_at_k(ranking: &[u32], relevant: &[u32], k: usize) -> Result<MetricValues> {
    if relevant.is_empty() {
        return Err(Error::InvalidInput("empty relevant set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    debug_assert!(relevant.windows(2).all(|w| w[0] < w[1]));
    let mut hits = 0usize;
    let mut dcg = 0.0;
    let mut first_hit = None;
    for (pos, item) in ranking.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            dcg += discount(pos + 1);
            first_hit.get_or_insert(pos + 1);
        }
    }
    let idcg: f64 = (1..=relevant.len().min(k)).map(discount).sum();
    Ok(MetricValues {
        hitrate: if hits > 0 { 1.0 } else { 0.0 },
        recall: hits as f64 / relevant.len() as f64,
        ndcg: dcg / idcg,
        mrr: first_hit.map_or(0.0, |r| 1.0 / r as f64),
        precision: hits as f64 / k as f64,
    })
}

/// Metrics for every user in `relevance`, in ascending user order. Users
/// without a ranking are scored as an empty list.
pub fn evaluate(rankings: &[Ranking], relevance: &RelevanceSets, k: usize) -> Result<Vec<(u32, MetricValues)>> {
    let by_user: HashMap<u32, &Ranking> = rankings.iter().map(|r| (r.user, r)).collect();
    relevance
        .users()
        .par_iter()
        .map(|&u| {
            let items = by_user.get(&u).map(|r| r.items.as_slice()).unwrap_or(&[]);
            Ok((u, metrics_at_k(items, relevance.get(u), k)?))
        })
        .collect()
}

/// User-uniform arithmetic means.
pub fn aggregate(values: &[MetricValues]) -> MetricValues {
    if values.is_empty() {
        return MetricValues::default();
    }
    let n = values.len() as f64;
    let mean = |m: Metric| values.iter().map(|v| v.get(m)).sum::<f64>() / n;
    MetricValues {
        hitrate: mean(Metric::HitRate),
        recall: mean(Metric::Recall),
        ndcg: mean(Metric::Ndcg),
        mrr: mean(Metric::Mrr),
        precision: mean(Metric::Precision),
    }
}

/// Two-sided paired bootstrap p-value for `mean(a - b) != 0`.
///
/// Users are resampled with replacement `resamples` times; the p-value is
/// twice the share of resampled mean differences that land on the opposite
/// side of zero from the observed one (including zero), capped at 1.
pub fn bootstrap_significance(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("bootstrap needs at least 2 users".into()));
    }
    if resamples == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one resample".into()));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diff.len();
    let observed = diff.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crossing = 0usize;
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += diff[rng.gen_range(0..n)];
        }
        let m = s / n as f64;
        let crosses = if observed >= 0.0 { m <= 0.0 } else { m >= 0.0 };
        if crosses {
            crossing += 1;
        }
    }
    Ok((2.0 * crossing as f64 / resamples as f64).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub model: String,
    pub variant_a: String,
    pub variant_b: String,
    pub metric: Metric,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_users: usize,
    pub p_value: f64,
    pub test: String,
}

/// Per-user and mean metric values of one (model, embedding variant) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub variant: String,
    pub kind: String,
    pub k: usize,
    pub users: Vec<String>,
    pub per_user: Vec<MetricValues>,
    pub means: MetricValues,
}

impl MetricReport {
    pub fn new(
        model: &str,
        variant: &str,
        kind: &str,
        k: usize,
        per_user: Vec<(u32, MetricValues)>,
        users: &IdMap,
    ) -> Self {
        let values: Vec<MetricValues> = per_user.iter().map(|p| p.1).collect();
        MetricReport {
            model: model.to_string(),
            variant: variant.to_string(),
            kind: kind.to_string(),
            k,
            users: per_user.iter().map(|p| users.id(p.0).to_string()).collect(),
            means: aggregate(&values),
            per_user: values,
        }
    }

    pub fn per_user_csv(&self) -> String {
        let mut out = String::from("user_id,hitrate,recall,ndcg,mrr,precision\n");
        for (u, v) in self.users.iter().zip(&self.per_user) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                u, v.hitrate, v.recall, v.ndcg, v.mrr, v.precision
            ));
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        let per_user = dir.join("per_user.csv");
        std::fs::write(&per_user, self.per_user_csv()).map_err(|e| Error::io(&per_user, e))?;
        let summary = dir.join("metrics.json");
        let body = serde_json::to_string_pretty(&SummaryRow::from(self))?;
        std::fs::write(&summary, body).map_err(|e| Error::io(&summary, e))?;
        Ok(vec!["per_user.csv".into(), "metrics.json".into()])
    }

    /// Per-user values of `metric` keyed by external user id.
    pub fn user_values(&self, metric: Metric) -> BTreeMap<&str, f64> {
        self.users
            .iter()
            .map(String::as_str)
            .zip(self.per_user.iter().map(|v| v.get(metric)))
            .collect()
    }
}

/// One row of the model x variant summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub variant: String,
    pub kind: String,
    pub k: usize,
    pub n_users: usize,
    pub hitrate: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub precision: f64,
}

impl From<&MetricReport> for SummaryRow {
    fn from(r: &MetricReport) -> Self {
        SummaryRow {
            model: r.model.clone(),
            variant: r.variant.clone(),
            kind: r.kind.clone(),
            k: r.k,
            n_users: r.users.len(),
            hitrate: r.means.hitrate,
            recall: r.means.recall,
            ndcg: r.means.ndcg,
            mrr: r.means.mrr,
            precision: r.means.precision,
        }
    }
}

/// Parses a `user_id,<metric columns>` per-user file back into ids and values.
pub fn read_per_user_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<MetricValues>)> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut users = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("{}: bad per-user row {:?}", path.display(), rec)))
        };
        users.push(rec.get(0).unwrap_or_default().to_string());
        values.push(MetricValues {
            hitrate: f(1)?,
            recall: f(2)?,
            ndcg: f(3)?,
            mrr: f(4)?,
            precision: f(5)?,
        });
    }
    Ok((users, values))
}

/// Pairs the per-user values of two reports on their common users.
pub fn align_users(a: &MetricReport, b: &MetricReport, metric: Metric) -> (Vec<f64>, Vec<f64>) {
    let bv = b.user_values(metric);
    a.user_values(metric)
        .into_iter()
        .filter_map(|(u, x)| bv.get(u).map(|&y| (x, y)))
        .unzip()
}

/// Paired bootstrap between every ordered pair of variants within each model.
pub fn significance_matrix(
    reports: &[MetricReport],
    metrics: &[Metric],
    resamples: usize,
    seed: u64,
) -> Result<Vec<SignificanceResult>> {
    let mut out = Vec::new();
    for (ia, a) in reports.iter().enumerate() {
        for b in reports.iter().skip(ia + 1) {
            if a.model != b.model {
                continue;
            }
            for &m in metrics {
                let (xa, xb) = align_users(a, b, m);
                if xa.len() < 2 {
                    continue;
                }
                let p = bootstrap_significance(&xa, &xb, resamples, seed)?;
                let n = xa.len() as f64;
                out.push(SignificanceResult {
                    model: a.model.clone(),
                    variant_a: a.variant.clone(),
                    variant_b: b.variant.clone(),
                    metric: m,
                    mean_a: xa.iter().sum::<f64>() / n,
                    mean_b: xb.iter().sum::<f64>() / n,
                    n_users: xa.len(),
                    p_value: p,
                    test: format!("paired bootstrap, {resamples} resamples"),
                });
            }
        }
    }
    Ok(out)
}

pub fn significance_csv(results: &[SignificanceResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["model", "variant_a", "variant_b", "metric", "mean_a", "mean_b", "n_users", "p_value", "test"];
    // writing into a Vec cannot fail
    w.write_record(header).expect("in-memory csv");
    for r in results {
        w.write_record([
            r.model.clone(),
            r.variant_a.clone(),
            r.variant_b.clone(),
            r.metric.name().to_string(),
            r.mean_a.to_string(),
            r.mean_b.to_string(),
            r.n_users.to_string(),
            r.p_value.to_string(),
            r.test.clone(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv of utf8 fields")
}
