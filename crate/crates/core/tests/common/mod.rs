//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use audiorec::split::sanitize_and_partition;
use audiorec::tensor::{Grads, ParamStore};
use audiorec::{DatasetSplit, EmbeddingTable, Event, InteractionLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n_users` users, each with three consecutive training items starting at
/// `2u` (mod `n_items`) and one unseen holdout item.
pub fn toy_split(n_users: usize, n_items: usize) -> DatasetSplit {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for u in 0..n_users {
        for j in 0..3 {
            let i = (2 * u + j) % n_items;
            train.push(Event::new(&format!("u{u}"), &format!("i{i}"), (10 * u + j) as i64));
        }
        let h = (2 * u + 4) % n_items;
        holdout.push(Event::new(&format!("u{u}"), &format!("i{h}"), 1000));
    }
    sanitize_and_partition(&InteractionLog::new(train).unwrap(), &InteractionLog::new(holdout).unwrap(), 7).unwrap()
}

/// Random embedding table aligned with `split.items`.
pub fn toy_embeddings(split: &DatasetSplit, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<&str> = split.items.ids().collect();
    let m = (0..ids.len() * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingTable::new(&ids, m, dim).unwrap()
}

/// Tensor-wise relative error `||a - n|| / max(||a||, ||n||, GRAD_FLOOR)`.
/// Elementwise ratios are meaningless for components near zero, where the
/// O(h^2) truncation of central differences dominates. The floor makes
/// identically zero gradients (the attention key bias, by softmax shift
/// invariance) compare absolutely.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = l2(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = l2(&mut analytic.iter().copied()).max(l2(&mut numeric.iter().copied()));
    diff / scale.max(GRAD_FLOOR)
}

pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct GradCheck {
    pub tensor: String,
    pub rel: f64,
    pub max_abs: f64,
    pub checked: usize,
}

/// Central finite differences over every element of every tracked tensor.
/// `store` picks the parameter store out of the model.
pub fn gradcheck<M: Clone>(
    model: &M,
    store: impl Fn(&mut M) -> &mut ParamStore<f64>,
    grads: &Grads<f64>,
    loss: impl Fn(&M) -> f64,
    h: f64,
) -> Vec<GradCheck> {
    let mut m = model.clone();
    let ids: Vec<_> = store(&mut m).iter().map(|(id, _)| id).collect();
    let mut out = Vec::new();
    for id in ids {
        if !grads.is_tracked(id) {
            continue;
        }
        let name = store(&mut m).get(id).name.clone();
        let n = store(&mut m).get(id).numel();
        let mut numeric = Vec::with_capacity(n);
        for j in 0..n {
            let orig = store(&mut m).get(id).data[j];
            store(&mut m).get_mut(id).data[j] = orig + h;
            let lp = loss(&m);
            store(&mut m).get_mut(id).data[j] = orig - h;
            let lm = loss(&m);
            store(&mut m).get_mut(id).data[j] = orig;
            numeric.push((lp - lm) / (2.0 * h));
        }
        let analytic = grads.get(id);
        let max_abs = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        out.push(GradCheck { tensor: name, rel: rel_error(analytic, &numeric), max_abs, checked: n });
    }
    out
}

/// Metrics straight from the formulas, with an explicit discount table and no
/// early exits. Returns `[hitrate, recall, ndcg, mrr, precision]`.
pub fn brute_metrics(ranking: &[u32], relevant: &[u32], k: usize) -> [f64; 5] {
    let table: Vec<f64> = (0..=k.max(relevant.len()) + 1).map(|r| if r == 0 { 0.0 } else { 1.0 / (r as f64 + 1.0).log2() }).collect();
    let top = &ranking[..ranking.len().min(k)];
    let hit_ranks: Vec<usize> = (0..top.len()).filter(|&p| relevant.contains(&top[p])).map(|p| p + 1).collect();
    let dcg: f64 = hit_ranks.iter().map(|&r| table[r]).sum();
    let idcg: f64 = (1..=relevant.len().min(k)).map(|r| table[r]).sum();
    [
        if hit_ranks.is_empty() { 0.0 } else { 1.0 },
        hit_ranks.len() as f64 / relevant.len() as f64,
        dcg / idcg,
        hit_ranks.first().map_or(0.0, |&r| 1.0 / r as f64),
        hit_ranks.len() as f64 / k as f64,
    ]
}

/// Paired bootstrap written independently of the crate: different generator,
/// resampled means collected first, tail counted afterwards.
pub fn independent_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> f64 {
    use rand::rngs::StdRng;
    let n = a.len();
    let observed: f64 = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n as f64;
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xABCD);
    let means: Vec<f64> = (0..resamples)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            idx.iter().map(|&i| a[i] - b[i]).sum::<f64>() / n as f64
        })
        .collect();
    let tail = if observed >= 0.0 {
        means.iter().filter(|&&m| m <= 0.0).count()
    } else {
        means.iter().filter(|&&m| m >= 0.0).count()
    };
    (2.0 * tail as f64 / resamples as f64).min(1.0)
}

/// Checks every split invariant against a recomputation from external ids.
pub fn check_split_invariants(log: &InteractionLog, cfg: &audiorec::SplitConfig, split: &DatasetSplit) -> Result<(), String> {
    use std::collections::{BTreeMap, BTreeSet};
    let start = cfg.boundary - cfg.train_window;
    let end = cfg.boundary + cfg.holdout_window;
    let train_ext: Vec<&Event> = log.events().iter().filter(|e| e.timestamp >= start && e.timestamp < cfg.boundary).collect();
    let hold_ext: Vec<&Event> = log.events().iter().filter(|e| e.timestamp >= cfg.boundary && e.timestamp < end).collect();
    let train_users: BTreeSet<&str> = train_ext.iter().map(|e| &*e.user).collect();
    let train_items: BTreeSet<&str> = train_ext.iter().map(|e| &*e.item).collect();
    let train_pairs: BTreeSet<(&str, &str)> = train_ext.iter().map(|e| (&*e.user, &*e.item)).collect();
    let expected_eval: Vec<(&str, &str, i64)> = hold_ext
        .iter()
        .filter(|e| train_users.contains(&*e.user) && train_items.contains(&*e.item) && !train_pairs.contains(&(&*e.user, &*e.item)))
        .map(|e| (&*e.user, &*e.item, e.timestamp))
        .collect();

    if split.train.len() != train_ext.len() {
        return Err(format!("train has {} events, window holds {}", split.train.len(), train_ext.len()));
    }
    let ext = |e: &audiorec::domain::IndexedEvent| (split.users.id(e.user).to_string(), split.items.id(e.item).to_string(), e.timestamp);
    let mut got_eval: Vec<(String, String, i64)> = split.validation.iter().chain(&split.test).map(ext).collect();
    let mut want_eval: Vec<(String, String, i64)> = expected_eval.iter().map(|&(u, i, t)| (u.to_string(), i.to_string(), t)).collect();
    got_eval.sort();
    want_eval.sort();
    if got_eval != want_eval {
        return Err(format!("evaluation events differ: got {}, expected {}", got_eval.len(), want_eval.len()));
    }
    let train_item_idx: BTreeSet<u32> = split.train.iter().map(|e| e.item).collect();
    for e in split.validation.iter().chain(&split.test) {
        if !split.seen.has_user(e.user) || !train_item_idx.contains(&e.item) {
            return Err(format!("eval event {e:?} has a user or item absent from train"));
        }
        if split.seen.contains(e.user, e.item) {
            return Err(format!("eval event {e:?} repeats a train item of its user"));
        }
    }
    let users_of = |evs: &[audiorec::domain::IndexedEvent]| evs.iter().map(|e| e.user).collect::<BTreeSet<u32>>();
    let (vu, tu) = (users_of(&split.validation), users_of(&split.test));
    if vu.intersection(&tu).next().is_some() {
        return Err("validation and test users overlap".into());
    }
    if vu.len().abs_diff(tu.len()) > 1 {
        return Err(format!("user halves unbalanced: {} vs {}", vu.len(), tu.len()));
    }
    if vu.iter().copied().collect::<Vec<_>>() != split.validation_users || tu.iter().copied().collect::<Vec<_>>() != split.test_users {
        return Err("validation_users/test_users disagree with the events".into());
    }
    let mut seen: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for e in &split.train {
        seen.entry(e.user).or_default().insert(e.item);
    }
    for (u, items) in &seen {
        if split.seen.get(*u) != items.iter().copied().collect::<Vec<_>>().as_slice() {
            return Err(format!("seen set of user {u} differs from the train scan"));
        }
    }
    if split.seen.iter().any(|(_, items)| items.iter().any(|&i| i as usize >= split.n_items())) {
        return Err("seen set holds an out-of-range item".into());
    }
    Ok(())
}

/// Writes a small planted-genre dataset with three embedding variants
/// (informative PARE, noise-only CSV, random) and returns the run config path.
pub fn write_planted_run(dir: &std::path::Path, models: &[&str], seed: u64) -> std::path::PathBuf {
    use audiorec::ingest::{write_embeddings, write_interactions, Delimiter};
    use audiorec::synth::{planted_genres, PlantedConfig};
    let pc = PlantedConfig {
        n_genres: 4,
        n_items: 80,
        n_users: 40,
        dim: 8,
        train_per_user: 8,
        holdout_per_user: 3,
        ..PlantedConfig::default()
    };
    let d = planted_genres(&pc, seed).unwrap();
    write_interactions(dir.join("log.tsv"), d.log.events().iter().map(|e| (&*e.user, &*e.item, e.timestamp)), Delimiter::Tsv).unwrap();
    write_embeddings(dir.join("informative.pare"), &d.informative).unwrap();
    let mut csv = String::from("item_id");
    for c in 0..pc.dim {
        csv.push_str(&format!(",e{c}"));
    }
    csv.push('\n');
    for (i, id) in d.random.ids().ids().enumerate() {
        let row: Vec<String> = d.random.row(i as u32).iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!("{id},{}\n", row.join(",")));
    }
    std::fs::write(dir.join("noise.csv"), csv).unwrap();
    let models: Vec<String> = models.iter().map(|m| format!("\"{m}\"")).collect();
    let cfg = format!(
        r#"{{
  "interactions": "log.tsv",
  "variants": [
    {{"name": "Informative", "embeddings": "informative.pare"}},
    {{"name": "Noise", "embeddings": "noise.csv"}},
    {{"name": "Random", "random_dim": 8}}
  ],
  "split": {{"boundary": {}, "train_days": {}, "holdout_days": {}}},
  "models": [{}],
  "k": 10,
  "seed": {seed},
  "bootstrap_resamples": 500,
  "shallow": {{"epochs": 3, "n_neg": 5, "random_dim": 8}},
  "seqrec": {{"epochs": 2, "d_model": 8, "layers": 1, "heads": 2, "max_len": 16}},
  "output_dir": "out"
}}"#,
        d.split.boundary,
        d.split.train_window / audiorec::split::DAY,
        d.split.holdout_window / audiorec::split::DAY,
        models.join(", ")
    );
    let p = dir.join("run.json");
    std::fs::write(&p, cfg).unwrap();
    p
}
