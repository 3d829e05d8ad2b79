//! End-to-end run: split once, then train and evaluate every
//! (model, variant) pair and write all artifacts below the output directory.
//!
//! ```text
//! <out>/split/{train,validation,test}.tsv, split_meta.json, split_report.txt
//! <out>/runs/<model>__<variant>/{rankings.tsv, per_user.csv, metrics.json,
//!                                 model.parc, history.csv}
//! <out>/{summary.csv, significance.csv, report.txt, report.csv, manifest.json}
//! ```
//!
//! A failing pair is recorded in the manifest and the run continues.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{error, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::write_checkpoint;
use crate::config::{ModelKind, RunConfig, VariantSpec};
use crate::domain::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, significance_csv, significance_matrix, Metric, MetricReport, RelevanceSets, SummaryRow};
use crate::ingest::{load_embeddings, load_interactions};
use crate::knn::{build_user_profiles, recommend_knn};
use crate::ranking::{write_rankings_tsv, Ranking};
use crate::report::{pair_dir_name, render_report, RUNS_DIR, SIGNIFICANCE_FILE};
use crate::seqrec::{build_sequences, init_seqrec, recommend_seqrec, train_seqrec, SeqModel};
use crate::shallow::{init_shallow, recommend_shallow, train_shallow, InitMode, ShallowModel, Validation};
use crate::split::{split_log, split_report, write_split, DatasetSplit};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStatus {
    pub model: String,
    pub variant: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub k: usize,
    pub models: Vec<ModelKind>,
    pub variants: Vec<String>,
    pub pairs: Vec<PairStatus>,
    /// Every file written by the run, relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub reports: Vec<MetricReport>,
}

impl RunOutcome {
    /// 0 when every pair succeeded, 2 when some failed, 1 when all failed.
    pub fn exit_code(&self) -> i32 {
        let ok = self.manifest.pairs.iter().filter(|p| p.ok).count();
        if ok == self.manifest.pairs.len() {
            0
        } else if ok > 0 {
            2
        } else {
            1
        }
    }
}

/// Loads the log and the embedding tables, then builds one split over the
/// items every loaded table covers. Variants whose table fails to load are
/// returned with their error.
pub struct Prepared {
    pub split: DatasetSplit,
    /// Per variant: its item-aligned table, or why it is unusable.
    pub tables: Vec<std::result::Result<EmbeddingTable, String>>,
}

/// Seeded uniform(-1, 1) table aligned with `split.items`, used by knn for
/// random variants.
pub fn random_table(split: &DatasetSplit, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5241_4e44_4f4d);
    let ids: Vec<&str> = split.items.ids().collect();
    let m = (0..ids.len() * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingTable::new(&ids, m, dim)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let loaded = load_interactions(&cfg.interactions, cfg.format())?;
    if loaded.skipped_rows > 0 {
        warn!("{} malformed interaction rows skipped", loaded.skipped_rows);
    }
    let log = loaded.log;
    let mut raw: Vec<std::result::Result<Option<EmbeddingTable>, String>> = Vec::new();
    for v in &cfg.variants {
        raw.push(match &v.embeddings {
            Some(p) => load_embeddings(p).map(Some).map_err(|e| e.to_string()),
            None => Ok(None),
        });
    }
    let mut universe: Option<BTreeSet<&str>> = None;
    for t in raw.iter().flatten().flatten() {
        let ids: BTreeSet<&str> = t.ids().ids().collect();
        universe = Some(match universe {
            Some(u) => u.intersection(&ids).copied().collect(),
            None => ids,
        });
    }
    let log = match &universe {
        Some(u) => {
            let kept = log.filtered(|e| u.contains(&*e.item));
            let dropped = log.distinct_items().len() - kept.distinct_items().len();
            if dropped > 0 {
                warn!("{dropped} log items lack an embedding in at least one variant and were dropped");
            }
            if kept.is_empty() {
                return Err(Error::EmptyIntersection {
                    log_items: log.distinct_items().len(),
                    embedding_items: u.len(),
                });
            }
            kept
        }
        None => log,
    };
    let split = split_log(&log, &cfg.split_config()?)?;
    let tables = cfg
        .variants
        .iter()
        .zip(raw)
        .map(|(v, r)| match r {
            Err(e) => Err(e),
            Ok(Some(t)) => t.reindex(&split.items).map_err(|e| e.to_string()),
            Ok(None) => random_table(&split, v.random_dim.unwrap_or(64), cfg.seed).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(Prepared { split, tables })
}

struct PairResult {
    report: MetricReport,
    artifacts: Vec<String>,
}

fn write_history(dir: &Path, h: &crate::optim::TrainHistory, artifacts: &mut Vec<String>) -> Result<()> {
    h.write_csv(dir.join("history.csv"))?;
    artifacts.push("history.csv".into());
    Ok(())
}

fn run_pair(
    cfg: &RunConfig,
    split: &DatasetSplit,
    model: ModelKind,
    variant: &VariantSpec,
    table: &EmbeddingTable,
    dir: &Path,
) -> Result<PairResult> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = cfg.k;
    let test_rel = RelevanceSets::from_events(&split.test);
    let val_rel = RelevanceSets::from_events(&split.validation);
    let validation = (!val_rel.is_empty()).then_some(Validation {
        relevance: &val_rel,
        seen: &split.seen,
        k,
    });
    let test_users = test_rel.users();
    let mode = if variant.is_random() {
        InitMode::RandomUnfrozen
    } else {
        InitMode::PretrainedFrozen
    };
    let mut artifacts = Vec::new();
    let config_echo = serde_json::json!({
        "model": model.name(),
        "variant": variant.name,
        "mode": mode,
        "k": k,
        "seed": cfg.seed,
    });
    let rankings: Vec<Ranking> = match model {
        ModelKind::Knn => {
            let profiles = build_user_profiles(split, table)?;
            recommend_knn(&profiles, table, &split.seen, &test_users, k)?
        }
        ModelKind::Shallow => {
            let sc = cfg.shallow_config();
            let dim = match mode {
                InitMode::PretrainedFrozen => table.dim(),
                InitMode::RandomUnfrozen => sc.random_dim,
            };
            let emb = (mode == InitMode::PretrainedFrozen).then_some(table);
            let mut m: ShallowModel<f32> = init_shallow(split, emb, mode, dim, sc.margin, sc.seed)?;
            let history = train_shallow(&mut m, split, &sc, validation)?;
            write_history(dir, &history, &mut artifacts)?;
            let mut echo = config_echo.clone();
            echo["shallow"] = serde_json::to_value(&sc)?;
            write_checkpoint(dir.join("model.parc"), "shallow", &m.store, &echo)?;
            artifacts.push("model.parc".into());
            recommend_shallow(&m, &split.seen, &test_users, k)?
        }
        ModelKind::Seqrec => {
            let sc = cfg.seqrec_config();
            let data = build_sequences(split, sc.max_len);
            let emb = (mode == InitMode::PretrainedFrozen).then_some(table);
            let mut m: SeqModel<f32> = init_seqrec(split, emb, mode, &sc)?;
            let history = train_seqrec(&mut m, &data, &sc, validation)?;
            write_history(dir, &history, &mut artifacts)?;
            let mut echo = config_echo.clone();
            echo["seqrec"] = serde_json::to_value(&sc)?;
            write_checkpoint(dir.join("model.parc"), "seqrec", &m.store, &echo)?;
            artifacts.push("model.parc".into());
            recommend_seqrec(&m, &data, &split.seen, &test_users, k)?
        }
    };
    write_rankings_tsv(dir.join("rankings.tsv"), &rankings, &split.users, &split.items)?;
    artifacts.push("rankings.tsv".into());
    let per_user = evaluate(&rankings, &test_rel, k)?;
    let kind = match mode {
        InitMode::PretrainedFrozen => "pretrained-frozen",
        InitMode::RandomUnfrozen => "random-unfrozen",
    };
    let report = MetricReport::new(model.name(), &variant.name, kind, k, per_user, &split.users);
    artifacts.extend(report.write(dir)?);
    artifacts.sort();
    Ok(PairResult { report, artifacts })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Runs every configured pair and writes artifacts to `out` (defaults to
/// the config's `output_dir`). Fatal errors are input or split failures;
/// per-pair failures are recorded in the manifest.
pub fn run_pipeline(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut artifacts: Vec<String> = Vec::new();

    let prepared = prepare(cfg)?;
    let split = &prepared.split;
    let split_dir = out.join("split");
    for f in write_split(&split_dir, split, &cfg.split_config()?)? {
        artifacts.push(format!("split/{f}"));
    }
    let report = split_report(split);
    info!("split:\n{report}");
    write_text(&split_dir.join("split_report.txt"), &report.to_string())?;
    artifacts.push("split/split_report.txt".into());

    let mut pairs = Vec::new();
    let mut reports = Vec::new();
    let mut models = cfg.models.clone();
    models.sort();
    for &model in &models {
        for (variant, table) in cfg.variants.iter().zip(&prepared.tables) {
            let name = pair_dir_name(model.name(), &variant.name);
            let dir = out.join(RUNS_DIR).join(&name);
            info!("running {name}");
            let result = match table {
                Ok(t) => run_pair(cfg, split, model, variant, t, &dir),
                Err(e) => Err(Error::InvalidInput(format!("embeddings unavailable: {e}"))),
            };
            match result {
                Ok(r) => {
                    artifacts.extend(r.artifacts.iter().map(|a| format!("{RUNS_DIR}/{name}/{a}")));
                    pairs.push(PairStatus {
                        model: model.name().into(),
                        variant: variant.name.clone(),
                        ok: true,
                        error: None,
                        artifacts: r.artifacts,
                    });
                    reports.push(r.report);
                }
                Err(e) => {
                    error!("{name} failed: {e}");
                    pairs.push(PairStatus {
                        model: model.name().into(),
                        variant: variant.name.clone(),
                        ok: false,
                        error: Some(e.to_string()),
                        artifacts: Vec::new(),
                    });
                }
            }
        }
    }

    if !reports.is_empty() {
        let mut summary = csv::Writer::from_writer(Vec::new());
        for r in &reports {
            summary.serialize(SummaryRow::from(r))?;
        }
        let bytes = summary.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        let path = out.join("summary.csv");
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        artifacts.push("summary.csv".into());

        let sig = significance_matrix(&reports, &[Metric::HitRate, Metric::Recall, Metric::Ndcg], cfg.bootstrap_resamples, cfg.seed)?;
        write_text(&out.join(SIGNIFICANCE_FILE), &significance_csv(&sig))?;
        artifacts.push(SIGNIFICANCE_FILE.into());

        let rendered = render_report(&out)?;
        write_text(&out.join("report.txt"), &rendered.text)?;
        write_text(&out.join("report.csv"), &rendered.csv)?;
        artifacts.push("report.txt".into());
        artifacts.push("report.csv".into());
    }

    let config_json = serde_json::to_vec(cfg)?;
    artifacts.push(MANIFEST_FILE.into());
    artifacts.sort();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(&config_json),
        seed: cfg.seed,
        k: cfg.k,
        models,
        variants: cfg.variants.iter().map(|v| v.name.clone()).collect(),
        pairs,
        artifacts,
    };
    write_text(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        out_dir: out,
        manifest,
        reports,
    })
}
