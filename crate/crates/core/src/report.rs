//! Comparison tables over a run directory.
//!
//! Rows are grouped by model. The first group present (in `knn`, `shallow`,
//! `seqrec` order) is sorted ascending by HitRate@K and its variant order is
//! reused for every later group, so one variant keeps its row position across
//! groups. Variants missing from that first group (typically `Random`, which
//! has no content embedding for KNN) lead their groups. The best value of each
//! column within a group is starred; `†` marks a significant difference
//! (p < 0.05) against the `Random` variant of the same model.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::config::ModelKind;
use crate::error::{Error, Result};
use crate::eval::{read_per_user_csv, aggregate, Metric, MetricReport, SummaryRow};

pub const RUNS_DIR: &str = "runs";
pub const SIGNIFICANCE_FILE: &str = "significance.csv";
pub const ALPHA: f64 = 0.05;
const COLUMNS: [Metric; 3] = [Metric::HitRate, Metric::Recall, Metric::Ndcg];

/// Directory of one (model, variant) pair below `runs/`.
pub fn pair_dir_name(model: &str, variant: &str) -> String {
    format!("{model}__{variant}")
}

fn pair_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let runs = run_dir.join(RUNS_DIR);
    if !runs.is_dir() {
        return Ok(Vec::new());
    }
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))? {
        let path = entry.map_err(|e| Error::io(&runs, e))?.path();
        if path.join("metrics.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Summary rows of every pair that wrote `metrics.json`.
pub fn load_summaries(run_dir: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    pair_dirs(run_dir.as_ref())?
        .into_iter()
        .map(|d| {
            let p = d.join("metrics.json");
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

/// Full per-user reports, for pairs that also wrote `per_user.csv`.
pub fn load_reports(run_dir: impl AsRef<Path>) -> Result<Vec<MetricReport>> {
    let mut out = Vec::new();
    for d in pair_dirs(run_dir.as_ref())? {
        let per_user = d.join("per_user.csv");
        if !per_user.is_file() {
            continue;
        }
        let p = d.join("metrics.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let s: SummaryRow = serde_json::from_str(&text)?;
        let (users, values) = read_per_user_csv(&per_user)?;
        out.push(MetricReport {
            model: s.model,
            variant: s.variant,
            kind: s.kind,
            k: s.k,
            users,
            means: aggregate(&values),
            per_user: values,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SignificanceRecord {
    pub model: String,
    pub variant_a: String,
    pub variant_b: String,
    pub metric: String,
    pub p_value: f64,
}

pub fn read_significance_csv(path: impl AsRef<Path>) -> Result<Vec<SignificanceRecord>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
}

fn is_random(variant: &str) -> bool {
    variant.eq_ignore_ascii_case("random")
}

fn group_key(model: &str) -> (usize, String) {
    match ModelKind::parse(model) {
        Some(m) => (ModelKind::ALL.iter().position(|&x| x == m).unwrap(), String::new()),
        None => (ModelKind::ALL.len(), model.to_string()),
    }
}

fn group_label(model: &str) -> String {
    ModelKind::parse(model).map(|m| m.label().to_string()).unwrap_or_else(|| model.to_string())
}

fn by_hitrate(a: &SummaryRow, b: &SummaryRow) -> Ordering {
    a.hitrate.total_cmp(&b.hitrate).then_with(|| a.variant.cmp(&b.variant))
}

/// Orders the groups and rows as described in the module docs.
fn arrange(rows: &[SummaryRow]) -> Vec<(String, Vec<SummaryRow>)> {
    let mut groups: BTreeMap<(usize, String), Vec<SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(group_key(&r.model)).or_default().push(r.clone());
    }
    let mut reference: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for (i, (_, mut members)) in groups.into_iter().enumerate() {
        if i == 0 {
            members.sort_by(by_hitrate);
            reference = members.iter().map(|r| r.variant.clone()).collect();
        } else {
            members.sort_by(|a, b| {
                let pa = reference.iter().position(|v| *v == a.variant);
                let pb = reference.iter().position(|v| *v == b.variant);
                match (pa, pb) {
                    (Some(x), Some(y)) => x.cmp(&y),
                    (None, Some(_)) => Ordering::Less,
                    (Some(_), None) => Ordering::Greater,
                    (None, None) => by_hitrate(a, b),
                }
            });
        }
        let model = members[0].model.clone();
        out.push((model, members));
    }
    out
}

fn metric_of(r: &SummaryRow, m: Metric) -> f64 {
    match m {
        Metric::HitRate => r.hitrate,
        Metric::Recall => r.recall,
        Metric::Ndcg => r.ndcg,
        Metric::Mrr => r.mrr,
        Metric::Precision => r.precision,
    }
}

fn significant(sig: &[SignificanceRecord], model: &str, variant: &str, m: Metric) -> bool {
    if is_random(variant) {
        return false;
    }
    sig.iter().any(|s| {
        s.model == model
            && s.metric.eq_ignore_ascii_case(m.name())
            && s.p_value < ALPHA
            && ((s.variant_a == variant && is_random(&s.variant_b)) || (s.variant_b == variant && is_random(&s.variant_a)))
    })
}

/// Renders summary rows plus optional significance records.
pub fn render_rows(rows: &[SummaryRow], sig: &[SignificanceRecord]) -> Result<RenderedReport> {
    let Some(first) = rows.first() else {
        return Err(Error::Empty("report: no metric reports"));
    };
    let k = first.k;
    if let Some(r) = rows.iter().find(|r| r.k != k) {
        return Err(Error::InvalidInput(format!("mixed K in report: {} and {}", k, r.k)));
    }
    let groups = arrange(rows);

    let header: Vec<String> = std::iter::once("Embeddings".to_string())
        .chain(COLUMNS.iter().map(|m| m.label(k)))
        .collect();
    let mut body: Vec<(String, Vec<Vec<String>>)> = Vec::new();
    let mut csv = String::from("model,variant,k,n_users,hitrate,recall,ndcg,mrr,precision,best,significant_vs_random\n");
    let mut any_sig = false;
    for (model, members) in &groups {
        let best: Vec<f64> = COLUMNS
            .iter()
            .map(|&m| members.iter().map(|r| metric_of(r, m)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut lines = Vec::new();
        for r in members {
            let mut cells = vec![r.variant.clone()];
            let mut best_cols = Vec::new();
            let mut sig_cols = Vec::new();
            for (c, &m) in COLUMNS.iter().enumerate() {
                let v = metric_of(r, m);
                let mut cell = format!("{v:.3}");
                if v == best[c] {
                    cell.push('*');
                    best_cols.push(m.name());
                }
                if significant(sig, model, &r.variant, m) {
                    cell.push('†');
                    sig_cols.push(m.name());
                    any_sig = true;
                }
                cells.push(cell);
            }
            lines.push(cells);
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model,
                r.variant,
                r.k,
                r.n_users,
                r.hitrate,
                r.recall,
                r.ndcg,
                r.mrr,
                r.precision,
                best_cols.join(";"),
                sig_cols.join(";")
            ));
        }
        body.push((group_label(model), lines));
    }

    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = header.iter().map(|h| width(h)).collect();
    for (_, lines) in &body {
        for cells in lines {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(width(c));
            }
        }
    }
    let total = widths.iter().sum::<usize>() + 3 * (widths.len() - 1);
    let rule = "-".repeat(total);
    let fmt_row = |cells: &[String]| -> String {
        let mut line = format!("{:<w$}", cells[0], w = widths[0]);
        for (c, w) in cells[1..].iter().zip(&widths[1..]) {
            // Pad by characters: `†` is one column but three bytes.
            line.push_str("   ");
            line.push_str(&" ".repeat(w - width(c)));
            line.push_str(c);
        }
        line.trim_end().to_string()
    };
    let mut text = String::new();
    text.push_str(&fmt_row(&header));
    text.push('\n');
    for (label, lines) in &body {
        text.push_str(&rule);
        text.push('\n');
        let pad = total.saturating_sub(width(label)) / 2;
        text.push_str(&format!("{}{}\n", " ".repeat(pad), label));
        text.push_str(&rule);
        text.push('\n');
        for cells in lines {
            text.push_str(&fmt_row(cells));
            text.push('\n');
        }
    }
    text.push_str(&rule);
    text.push('\n');
    text.push_str("* best in group\n");
    if any_sig {
        text.push_str(&format!("† p < {ALPHA} against Random (paired bootstrap)\n"));
    }
    Ok(RenderedReport { text, csv })
}

/// Renders every `runs/*/metrics.json` below `run_dir`, with significance
/// markers when `significance.csv` is present.
pub fn render_report(run_dir: impl AsRef<Path>) -> Result<RenderedReport> {
    let run_dir = run_dir.as_ref();
    let rows = load_summaries(run_dir)?;
    if rows.is_empty() {
        return Err(Error::Empty("run directory: no metric reports found"));
    }
    let sig_path = run_dir.join(SIGNIFICANCE_FILE);
    let sig = if sig_path.is_file() {
        read_significance_csv(&sig_path)?
    } else {
        Vec::new()
    };
    render_rows(&rows, &sig)
}
