//! Synthetic datasets with known structure, used by the acceptance suite and
//! the `synth` CLI subcommand.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingTable, Event, InteractionLog};
use crate::error::{Error, Result};
use crate::split::{assign_user_halves, PartitionCounts, SplitConfig, SplitReport, DAY};

fn item_id(i: usize) -> String {
    format!("i{i:05}")
}

fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n_genres: usize,
    pub n_items: usize,
    pub n_users: usize,
    pub dim: usize,
    /// Half-width of the uniform noise added to each genre centroid.
    pub noise: f32,
    pub train_per_user: usize,
    pub holdout_per_user: usize,
    /// Probability that a play falls in the user's genre.
    pub in_genre: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_genres: 20,
            n_items: 2000,
            n_users: 500,
            dim: 32,
            noise: 0.5,
            train_per_user: 20,
            holdout_per_user: 5,
            in_genre: 0.9,
        }
    }
}

/// Interaction log with latent genres plus an informative and a random
/// embedding table over the same items.
#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub log: InteractionLog,
    pub informative: EmbeddingTable,
    pub random: EmbeddingTable,
    pub split: SplitConfig,
    pub item_genre: Vec<usize>,
    pub user_genre: Vec<usize>,
}

fn draw_distinct<R: Rng>(rng: &mut R, n: usize, pool: &[usize], other: &[usize], p_pool: f64, exclude: &BTreeSet<usize>) -> Vec<usize> {
    let mut out = BTreeSet::new();
    let mut picked = Vec::with_capacity(n);
    while picked.len() < n {
        let src = if rng.gen::<f64>() < p_pool { pool } else { other };
        let i = *src.choose(rng).expect("non-empty item pool");
        if !exclude.contains(&i) && out.insert(i) {
            picked.push(i);
        }
    }
    picked
}

/// Items belong to genre `i % n_genres`; each user favours one genre for
/// both training and holdout plays. Informative embeddings are the genre
/// centroid plus uniform noise.
pub fn planted_genres(cfg: &PlantedConfig, seed: u64) -> Result<PlantedDataset> {
    if cfg.n_genres == 0 || cfg.n_items < cfg.n_genres || cfg.n_users < 2 || cfg.dim == 0 {
        return Err(Error::Config("planted dataset needs genres <= items, >= 2 users and dim >= 1".into()));
    }
    let per_genre = cfg.n_items / cfg.n_genres;
    if cfg.train_per_user + cfg.holdout_per_user > per_genre {
        return Err(Error::Config("plays per user exceed the items of one genre".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let item_genre: Vec<usize> = (0..cfg.n_items).map(|i| i % cfg.n_genres).collect();
    let user_genre: Vec<usize> = (0..cfg.n_users).map(|_| rng.gen_range(0..cfg.n_genres)).collect();
    let members: Vec<Vec<usize>> = (0..cfg.n_genres)
        .map(|g| (0..cfg.n_items).filter(|&i| item_genre[i] == g).collect())
        .collect();
    let all: Vec<usize> = (0..cfg.n_items).collect();

    let split = SplitConfig {
        seed,
        ..SplitConfig::default()
    };
    let train_start = split.boundary - 300 * DAY;
    let users: Vec<Arc<str>> = (0..cfg.n_users).map(|u| Arc::from(user_id(u))).collect();
    let items: Vec<Arc<str>> = (0..cfg.n_items).map(|i| Arc::from(item_id(i))).collect();
    let mut events = Vec::with_capacity(cfg.n_users * (cfg.train_per_user + cfg.holdout_per_user));
    for u in 0..cfg.n_users {
        let pool = &members[user_genre[u]];
        let train = draw_distinct(&mut rng, cfg.train_per_user, pool, &all, cfg.in_genre, &BTreeSet::new());
        let seen: BTreeSet<usize> = train.iter().copied().collect();
        let holdout = draw_distinct(&mut rng, cfg.holdout_per_user, pool, &all, cfg.in_genre, &seen);
        for i in train {
            let t = train_start + rng.gen_range(0..300 * DAY);
            events.push(Event { user: users[u].clone(), item: items[i].clone(), timestamp: t });
        }
        for i in holdout {
            let t = split.boundary + rng.gen_range(0..20 * DAY);
            events.push(Event { user: users[u].clone(), item: items[i].clone(), timestamp: t });
        }
    }

    let centroids: Vec<f32> = (0..cfg.n_genres * cfg.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut informative = Vec::with_capacity(cfg.n_items * cfg.dim);
    for &g in &item_genre {
        for k in 0..cfg.dim {
            informative.push(centroids[g * cfg.dim + k] + rng.gen_range(-cfg.noise..=cfg.noise));
        }
    }
    let random: Vec<f32> = (0..cfg.n_items * cfg.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ids: Vec<String> = (0..cfg.n_items).map(item_id).collect();
    Ok(PlantedDataset {
        log: InteractionLog::new(events)?,
        informative: EmbeddingTable::new(&ids, informative, cfg.dim)?,
        random: EmbeddingTable::new(&ids, random, cfg.dim)?,
        split,
        item_genre,
        user_genre,
    })
}

/// Each user's history is `len` plays of one planted item. Every user also gets
/// one unseen holdout play so the log splits cleanly. Returns the log, the
/// split config and the planted item per user id.
pub fn repeated_item(n_users: usize, n_items: usize, len: usize, seed: u64) -> Result<(InteractionLog, SplitConfig, Vec<(String, String)>)> {
    if n_items < 2 || len < 2 || n_users < 2 {
        return Err(Error::Config("repeated-item dataset needs at least 2 users, 2 items and len >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = SplitConfig {
        seed,
        ..SplitConfig::default()
    };
    let mut events = Vec::new();
    let mut planted = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let uid = user_id(u);
        let target = rng.gen_range(0..n_items);
        for pos in 0..len {
            let t = split.boundary - ((len - pos) as i64) * 3600;
            events.push(Event::new(&uid, &item_id(target), t));
        }
        // One unseen holdout play makes the user an evaluation user.
        let other = (target + rng.gen_range(1..n_items)) % n_items;
        events.push(Event::new(&uid, &item_id(other), split.boundary + DAY));
        planted.push((uid, item_id(target)));
    }
    // One filler user plays the whole catalogue so no holdout item is cold.
    let filler = user_id(n_users);
    for i in 0..n_items {
        events.push(Event::new(&filler, &item_id(i), split.boundary - 400 * 3600 - i as i64));
    }
    Ok((InteractionLog::new(events)?, split, planted))
}

/// Uniformly random plays spread over and beyond the default split windows.
pub fn random_log(n_users: usize, n_items: usize, n_events: usize, seed: u64) -> Result<(InteractionLog, SplitConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = SplitConfig {
        seed,
        ..SplitConfig::default()
    };
    let lo = split.boundary - split.train_window - 10 * DAY;
    let hi = split.boundary + split.holdout_window + 10 * DAY;
    let users: Vec<Arc<str>> = (0..n_users).map(|u| Arc::from(user_id(u))).collect();
    let items: Vec<Arc<str>> = (0..n_items).map(|i| Arc::from(item_id(i))).collect();
    let events = (0..n_events)
        .map(|_| {
            // Bias towards the holdout so most logs have evaluation users.
            let t = if rng.gen_bool(0.3) {
                rng.gen_range(split.boundary - DAY..hi)
            } else {
                rng.gen_range(lo..hi)
            };
            Event {
                user: users[rng.gen_range(0..n_users)].clone(),
                item: items[rng.gen_range(0..n_items)].clone(),
                timestamp: t,
            }
        })
        .collect();
    Ok((InteractionLog::new(events)?, split))
}

/// Partition sizes published for the reference dataset split.
pub const TABLE2: SplitReport = SplitReport {
    train: PartitionCounts {
        users: 17_053,
        items: 56_193,
        interactions: 5_122_221,
    },
    validation: PartitionCounts {
        users: 6_092,
        items: 36_942,
        interactions: 132_425,
    },
    test: PartitionCounts {
        users: 6_092,
        items: 37_797,
        interactions: 138_299,
    },
};

fn spread(total: usize, n: usize) -> impl Iterator<Item = usize> {
    let base = total / n;
    let rem = total % n;
    (0..n).map(move |i| base + usize::from(i < rem))
}

/// Builds a log whose split reproduces `target` exactly under the returned
/// config, including holdout noise (cold users and items, replays of train
/// items, events outside both windows) that sanitization must remove.
///
/// Evaluation users train on items `[0, x)` and holdout plays come from the
/// top of the catalogue, which only the remaining users train on, so every
/// holdout play is new to its user.
pub fn split_fixture(target: &SplitReport, seed: u64) -> Result<(InteractionLog, SplitConfig)> {
    let SplitReport { train, validation: val, test } = *target;
    let n_eval = val.users + test.users;
    let infeasible = |why: &str| Error::Config(format!("split fixture infeasible: {why}"));
    if val.users != test.users && val.users != test.users + 1 {
        return Err(infeasible("validation must have as many users as test, or one more"));
    }
    if n_eval >= train.users || train.interactions < train.users {
        return Err(infeasible("need non-evaluation users and >= 1 train play per user"));
    }
    let pool_max = val.items.max(test.items);
    if pool_max >= train.items {
        return Err(infeasible("holdout item pools must leave room for evaluation users' train items"));
    }
    let x = train.items - pool_max;
    let counts: Vec<usize> = spread(train.interactions, train.users).collect();
    if counts[..n_eval].iter().any(|&c| c > x) || counts[n_eval..].iter().any(|&c| c > train.items) {
        return Err(infeasible("too many train plays per user for the item ranges"));
    }
    let eval_total: usize = counts[..n_eval].iter().sum();
    let rest_total: usize = counts[n_eval..].iter().sum();
    // Evaluation users cycle over [0, x); the rest start at x and wrap.
    let low_covered = eval_total.max(rest_total.saturating_sub(pool_max)).min(x);
    if rest_total < pool_max || low_covered < x {
        return Err(infeasible("train plays do not cover every item"));
    }
    if val.interactions < val.items.max(val.users) || test.interactions < test.items.max(test.users) {
        return Err(infeasible("each holdout half needs a play per user and per item"));
    }

    let split = SplitConfig {
        seed,
        ..SplitConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7461_626c_6532);
    // Zero-padded so lexicographic order is numeric order.
    let w = train.users.to_string().len();
    let users: Vec<Arc<str>> = (0..train.users).map(|u| Arc::from(format!("u{u:0w$}"))).collect();
    let items: Vec<Arc<str>> = (0..train.items).map(|i| Arc::from(item_id(i))).collect();
    let train_start = split.boundary - split.train_window;
    let mut events = Vec::with_capacity(train.interactions + val.interactions + test.interactions + 1024);
    let push = |events: &mut Vec<Event>, u: &Arc<str>, i: &Arc<str>, t: i64| {
        events.push(Event { user: u.clone(), item: i.clone(), timestamp: t });
    };

    let mut eval_cursor = 0usize;
    let mut rest_cursor = x;
    let mut first_train_item = Vec::with_capacity(n_eval);
    for (u, &c) in counts.iter().enumerate() {
        let (cursor, modulus) = if u < n_eval {
            (&mut eval_cursor, x)
        } else {
            (&mut rest_cursor, train.items)
        };
        if u < n_eval {
            first_train_item.push(*cursor % modulus);
        }
        for _ in 0..c {
            let t = train_start + rng.gen_range(0..split.train_window);
            push(&mut events, &users[u], &items[*cursor % modulus], t);
            *cursor += 1;
        }
    }

    // Users appear in the canonical log in id order, so internal id == u.
    let eval_ids: Vec<u32> = (0..n_eval as u32).collect();
    let (val_users, test_users) = assign_user_halves(&eval_ids, split.seed);
    for (members, part) in [(&val_users, val), (&test_users, test)] {
        let pool_start = train.items - part.items;
        let mut cursor = 0usize;
        for (&u, q) in members.iter().zip(spread(part.interactions, part.users)) {
            if q > part.items {
                return Err(infeasible("a user's holdout quota exceeds the item pool"));
            }
            for _ in 0..q {
                let t = split.boundary + rng.gen_range(0..split.holdout_window);
                push(&mut events, &users[u as usize], &items[pool_start + cursor % part.items], t);
                cursor += 1;
            }
        }
    }

    // Noise that sanitization or windowing must discard.
    let cold_item: Arc<str> = Arc::from("cold-item");
    for k in 0..n_eval.min(64) {
        let u = &users[k];
        push(&mut events, u, &items[first_train_item[k]], split.boundary + 1);
        push(&mut events, u, &cold_item, split.boundary + 2);
        push(&mut events, u, &items[0], train_start - 1 - k as i64);
        push(&mut events, u, &items[0], split.boundary + split.holdout_window + k as i64);
    }
    for k in 0..16 {
        let cold_user: Arc<str> = Arc::from(format!("v{k:05}"));
        push(&mut events, &cold_user, &items[train.items - 1], split.boundary + 3);
    }
    Ok((InteractionLog::new(events)?, split))
}
