//! Temporal train/validation/test protocol.
//!
//! The train window is the year before a boundary date, the holdout window
//! the month after it. Holdout events are then sanitized (no cold users or
//! items, only items new to the user) and the surviving holdout users are
//! split in half at random into validation and test.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{IdMap, IndexedEvent, InteractionLog, SeenSets};
use crate::error::{Error, Result};
use crate::ingest::{write_interactions, Delimiter};

pub const DAY: i64 = 86_400;
/// 2020-02-20T00:00:00Z.
pub const DEFAULT_BOUNDARY: i64 = 1_582_156_800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// First second of the holdout period.
    pub boundary: i64,
    /// Train window length in seconds, ending at `boundary` (exclusive).
    pub train_window: i64,
    /// Holdout window length in seconds, starting at `boundary`.
    pub holdout_window: i64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            boundary: DEFAULT_BOUNDARY,
            train_window: 365 * DAY,
            holdout_window: 30 * DAY,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_window <= 0 || self.holdout_window <= 0 {
            return Err(Error::Config("split windows must be positive".into()));
        }
        Ok(())
    }
}

/// Splits a canonical log into the half-open windows
/// `[boundary - train_window, boundary)` and `[boundary, boundary + holdout_window)`.
/// Events outside both windows are discarded.
pub fn temporal_split(log: &InteractionLog, cfg: &SplitConfig) -> Result<(InteractionLog, InteractionLog)> {
    cfg.validate()?;
    let train_start = cfg.boundary - cfg.train_window;
    let holdout_end = cfg.boundary + cfg.holdout_window;
    let train = log.filtered(|e| (train_start..cfg.boundary).contains(&e.timestamp));
    let holdout = log.filtered(|e| (cfg.boundary..holdout_end).contains(&e.timestamp));
    if train.is_empty() {
        return Err(Error::Empty("train window"));
    }
    if holdout.is_empty() {
        return Err(Error::Empty("holdout"));
    }
    Ok((train, holdout))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizeStats {
    pub holdout_events: usize,
    pub dropped_cold: usize,
    pub dropped_repeat: usize,
}

/// Train/validation/test partitions over contiguous internal ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub users: IdMap,
    pub items: IdMap,
    pub train: Vec<IndexedEvent>,
    pub validation: Vec<IndexedEvent>,
    pub test: Vec<IndexedEvent>,
    pub seen: SeenSets,
    pub validation_users: Vec<u32>,
    pub test_users: Vec<u32>,
    pub stats: SanitizeStats,
}

impl DatasetSplit {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }
}

/// Seeded shuffle of `users`, then alternate assignment starting with
/// validation. Returns `(validation, test)`, each sorted ascending.
pub fn assign_user_halves(users: &[u32], seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut order = users.to_vec();
    order.sort_unstable();
    order.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut val = Vec::with_capacity(order.len() / 2 + 1);
    let mut test = Vec::with_capacity(order.len() / 2);
    for (i, u) in order.into_iter().enumerate() {
        if i % 2 == 0 {
            val.push(u);
        } else {
            test.push(u);
        }
    }
    val.sort_unstable();
    test.sort_unstable();
    (val, test)
}

/// Builds id maps from `train`, removes cold and already-played holdout
/// events, and splits the surviving holdout users into validation and test.
pub fn sanitize_and_partition(train: &InteractionLog, holdout: &InteractionLog, seed: u64) -> Result<DatasetSplit> {
    if train.is_empty() {
        return Err(Error::Empty("train window"));
    }
    let users = IdMap::from_first_appearance(train.events().iter().map(|e| &*e.user));
    let items = IdMap::from_first_appearance(train.events().iter().map(|e| &*e.item));
    let train_idx: Vec<IndexedEvent> = train
        .events()
        .iter()
        .map(|e| IndexedEvent {
            user: users.get(&e.user).unwrap(),
            item: items.get(&e.item).unwrap(),
            timestamp: e.timestamp,
        })
        .collect();
    let seen = SeenSets::from_indexed(&train_idx);

    let mut stats = SanitizeStats {
        holdout_events: holdout.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for e in holdout.events() {
        let (Some(u), Some(i)) = (users.get(&e.user), items.get(&e.item)) else {
            stats.dropped_cold += 1;
            continue;
        };
        if seen.contains(u, i) {
            stats.dropped_repeat += 1;
            continue;
        }
        kept.push(IndexedEvent {
            user: u,
            item: i,
            timestamp: e.timestamp,
        });
    }
    let eval_users: Vec<u32> = kept.iter().map(|e| e.user).collect::<BTreeSet<_>>().into_iter().collect();
    if eval_users.is_empty() {
        return Err(Error::Empty("evaluation users after sanitization"));
    }
    let (validation_users, test_users) = assign_user_halves(&eval_users, seed);
    let (validation, test): (Vec<_>, Vec<_>) = kept
        .into_iter()
        .partition(|e| validation_users.binary_search(&e.user).is_ok());

    Ok(DatasetSplit {
        users,
        items,
        train: train_idx,
        validation,
        test,
        seen,
        validation_users,
        test_users,
        stats,
    })
}

/// Runs [`temporal_split`] followed by [`sanitize_and_partition`].
pub fn split_log(log: &InteractionLog, cfg: &SplitConfig) -> Result<DatasetSplit> {
    let (train, holdout) = temporal_split(log, cfg)?;
    sanitize_and_partition(&train, &holdout, cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

impl PartitionCounts {
    pub fn of(events: &[IndexedEvent]) -> Self {
        PartitionCounts {
            users: events.iter().map(|e| e.user).collect::<BTreeSet<_>>().len(),
            items: events.iter().map(|e| e.item).collect::<BTreeSet<_>>().len(),
            interactions: events.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train: PartitionCounts,
    pub validation: PartitionCounts,
    pub test: PartitionCounts,
}

pub fn split_report(split: &DatasetSplit) -> SplitReport {
    SplitReport {
        train: PartitionCounts::of(&split.train),
        validation: PartitionCounts::of(&split.validation),
        test: PartitionCounts::of(&split.test),
    }
}

impl fmt::Display for SplitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18}{:>12}{:>12}{:>12}", "", "Train", "Validation", "Test")?;
        let rows: [(&str, fn(&PartitionCounts) -> usize); 3] = [
            ("Num Users", |c| c.users),
            ("Num Items", |c| c.items),
            ("Num Interactions", |c| c.interactions),
        ];
        for (name, get) in rows {
            writeln!(
                f,
                "{:<18}{:>12}{:>12}{:>12}",
                name,
                group_thousands(get(&self.train)),
                group_thousands(get(&self.validation)),
                group_thousands(get(&self.test))
            )?;
        }
        Ok(())
    }
}

pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub config: SplitConfig,
    pub report: SplitReport,
    pub stats: SanitizeStats,
    pub validation_users: usize,
    pub test_users: usize,
}

/// Writes `train.tsv`, `validation.tsv`, `test.tsv` and `split_meta.json`
/// under `dir`. Returns the written file names.
pub fn write_split(dir: impl AsRef<Path>, split: &DatasetSplit, cfg: &SplitConfig) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parts = [
        ("train.tsv", &split.train),
        ("validation.tsv", &split.validation),
        ("test.tsv", &split.test),
    ];
    let mut written = Vec::new();
    for (name, events) in parts {
        write_interactions(
            dir.join(name),
            events
                .iter()
                .map(|e| (split.users.id(e.user), split.items.id(e.item), e.timestamp)),
            Delimiter::Tsv,
        )?;
        written.push(name.to_string());
    }
    let meta = SplitMeta {
        config: *cfg,
        report: split_report(split),
        stats: split.stats,
        validation_users: split.validation_users.len(),
        test_users: split.test_users.len(),
    };
    let path = dir.join("split_meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    written.push("split_meta.json".to_string());
    Ok(written)
}
