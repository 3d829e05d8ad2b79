//! Model outputs checked against independent straight-line recomputations.

mod common;

use std::collections::BTreeSet;

use audiorec::checkpoint::{read_checkpoint, write_checkpoint};
use audiorec::eval::{aggregate, MetricValues};
use audiorec::knn::{build_user_profiles, recommend_knn};
use audiorec::seqrec::{apply_masking, build_sequences, init_seqrec, recommend_seqrec, train_seqrec, SeqConfig, SeqModel, MASK, N_SPECIAL, PAD};
use audiorec::shallow::{init_shallow, recommend_shallow, sample_negative_users, train_shallow, InitMode, ItemUserIndex, ShallowConfig, ShallowModel};
use audiorec::split::sanitize_and_partition;
use audiorec::tensor::ParamStore;
use audiorec::{DatasetSplit, EmbeddingTable, Event, InteractionLog};
use common::{toy_embeddings, toy_split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Split from explicit `(user, item)` train plays (in order) and holdout plays.
fn split_of(train: &[(&str, &str)], holdout: &[(&str, &str)]) -> DatasetSplit {
    let ev = |v: &[(&str, &str)], t0: i64| v.iter().enumerate().map(|(t, (u, i))| Event::new(u, i, t0 + t as i64)).collect::<Vec<_>>();
    sanitize_and_partition(&InteractionLog::new(ev(train, 0)).unwrap(), &InteractionLog::new(ev(holdout, 10_000)).unwrap(), 1).unwrap()
}

fn cos64(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (n(a) * n(b) + 1e-12)
}

fn perturb(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = store.trainable_ids();
    for id in ids {
        for v in store.get_mut(id).data.iter_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

#[test]
fn knn_profiles_match_brute_force_means() {
    let split = toy_split(5, 10);
    let emb = toy_embeddings(&split, 4, 9);
    let profiles = build_user_profiles(&split, &emb).unwrap();
    for u in 0..5u32 {
        let items: BTreeSet<u32> = split.train.iter().filter(|e| e.user == u).map(|e| e.item).collect();
        for c in 0..4 {
            let want = items.iter().map(|&i| emb.row(i)[c] as f64).sum::<f64>() / items.len() as f64;
            assert!((profiles.row(u)[c] as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn knn_matches_exhaustive_cosine_sort() {
    let split = toy_split(25, 50);
    assert_eq!(split.n_items(), 50);
    let emb = toy_embeddings(&split, 6, 21);
    let profiles = build_user_profiles(&split, &emb).unwrap();
    let users: Vec<u32> = (0..25).collect();
    let got = recommend_knn(&profiles, &emb, &split.seen, &users, 10).unwrap();
    for r in &got {
        let p: Vec<f64> = profiles.row(r.user).iter().map(|&v| v as f64).collect();
        let mut all: Vec<(u32, f64)> = (0..50u32)
            .filter(|&i| !split.seen.contains(r.user, i))
            .map(|i| (i, cos64(&p, &emb.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>())))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<u32> = all.iter().take(10).map(|x| x.0).collect();
        assert_eq!(r.items, want, "user {}", r.user);
    }
}

#[test]
fn shallow_pretrained_users_start_at_knn_profiles() {
    let split = toy_split(6, 12);
    let emb = toy_embeddings(&split, 5, 4);
    let m: ShallowModel<f32> = init_shallow(&split, Some(&emb), InitMode::PretrainedFrozen, 5, 0.2, 0).unwrap();
    let profiles = build_user_profiles(&split, &emb).unwrap();
    for (a, b) in m.store.data(m.user_emb).iter().zip(&profiles.data) {
        assert!((a - b).abs() < 1e-6);
    }
}

/// `relu(W x + b)` with `W` stored `out x in`.
fn tower(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d).map(|j| ((0..d).map(|k| w[j * d + k] * x[k]).sum::<f64>() + b[j]).max(0.0)).collect()
}

fn shallow_score(m: &ShallowModel<f64>, u: u32, i: u32) -> f64 {
    let d = m.dim;
    let s = &m.store;
    let a = tower(s.data(m.w_user), s.data(m.b_user), &s.data(m.user_emb)[u as usize * d..(u as usize + 1) * d]);
    let b = tower(s.data(m.w_item), s.data(m.b_item), &s.data(m.item_emb)[i as usize * d..(i as usize + 1) * d]);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(&a) * n(&b) + 1e-8)
}

#[test]
fn shallow_forward_and_hinge_match_recomputation() {
    let split = toy_split(8, 12);
    let emb = toy_embeddings(&split, 6, 2);
    for mode in [InitMode::PretrainedFrozen, InitMode::RandomUnfrozen] {
        let mut m: ShallowModel<f64> = init_shallow(&split, Some(&emb), mode, 6, 0.2, 5).unwrap();
        perturb(&mut m.store, 8, 0.3);
        for u in 0..8 {
            for i in 0..12 {
                assert!((m.score(u, i) - shallow_score(&m, u, i)).abs() < 1e-12);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs: Vec<u32> = (0..20).map(|_| rng.gen_range(0..8)).collect();
        let want: f64 = negs.iter().map(|&v| (m.margin - shallow_score(&m, 0, 3) + shallow_score(&m, v, 3)).max(0.0)).sum();
        assert!((m.hinge_loss(0, 3, &negs) - want).abs() < 1e-12);
    }
}

#[test]
fn shallow_ranking_matches_exhaustive_scoring() {
    // u0 played i0; the other items come from u1.
    let split = split_of(&[("u0", "i0"), ("u1", "i1"), ("u1", "i2")], &[("u0", "i1")]);
    assert_eq!(split.n_items(), 3);
    let emb = EmbeddingTable::new(&["i0", "i1", "i2"], vec![1.0, 0.0, 0.6, 0.8, 0.0, 1.0], 2).unwrap();
    let mut m: ShallowModel<f64> = init_shallow(&split, Some(&emb), InitMode::PretrainedFrozen, 2, 0.2, 0).unwrap();
    for w in [m.w_user, m.w_item] {
        m.store.get_mut(w).data = vec![1.0, 0.0, 0.0, 1.0];
    }
    let u0 = split.users.get("u0").unwrap();
    let r = recommend_shallow(&m, &split.seen, &[u0], 3).unwrap().pop().unwrap();
    // u0 profile is i0 = (1, 0): cos(i1) = 0.6, cos(i2) = 0
    let i = |s| split.items.get(s).unwrap();
    assert_eq!(r.items, vec![i("i1"), i("i2")]);
    assert!((r.scores[0] - 0.6).abs() < 1e-6 && r.scores[1].abs() < 1e-6);
    assert!(r.truncated);
}

fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    let chi = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum::<f64>();
    (chi, (counts.len() - 1) as f64)
}

#[test]
fn negative_users_are_uniform_over_non_holders() {
    // i_few is held by 10 of 30 users, i_many by 20 (the two sampling paths).
    let mut train = Vec::new();
    let names: Vec<String> = (0..30).map(|u| format!("u{u:02}")).collect();
    for (u, name) in names.iter().enumerate() {
        train.push((name.as_str(), "filler"));
        if u < 10 {
            train.push((name.as_str(), "i_few"));
        }
        if u < 20 {
            train.push((name.as_str(), "i_many"));
        }
    }
    let split = split_of(&train, &[("u25", "i_few")]);
    let index = ItemUserIndex::new(&split.seen, split.n_users(), split.n_items());
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for item in ["i_few", "i_many"] {
        let it = split.items.get(item).unwrap();
        let holders: BTreeSet<u32> = index.holders(it).iter().copied().collect();
        let eligible: Vec<u32> = (0..30).filter(|u| !holders.contains(u)).collect();
        let mut counts = vec![0usize; 30];
        for _ in 0..5000 {
            for v in sample_negative_users(&mut rng, it, 20, &index).unwrap() {
                counts[v as usize] += 1;
            }
        }
        assert!(holders.iter().all(|&h| counts[h as usize] == 0));
        let c: Vec<usize> = eligible.iter().map(|&u| counts[u as usize]).collect();
        let (chi, df) = chi_square_uniform(&c);
        assert!(chi < df + 3.0 * (2.0 * df).sqrt(), "{item}: chi2 {chi} with {df} df");
    }
    let all = split.items.get("filler").unwrap();
    assert!(sample_negative_users(&mut rng, all, 20, &index).is_none());
}

#[test]
fn aggregate_matches_independent_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let vals: Vec<MetricValues> = (0..100)
        .map(|_| MetricValues {
            hitrate: rng.gen_range(0..2) as f64,
            recall: rng.gen(),
            ndcg: rng.gen(),
            mrr: rng.gen(),
            precision: rng.gen(),
        })
        .collect();
    let m = aggregate(&vals);
    let rev = |f: fn(&MetricValues) -> f64| vals.iter().rev().map(f).fold(0.0, |a, b| a + b) / 100.0;
    assert!((m.hitrate - rev(|v| v.hitrate)).abs() < 1e-12);
    assert!((m.recall - rev(|v| v.recall)).abs() < 1e-12);
    assert!((m.ndcg - rev(|v| v.ndcg)).abs() < 1e-12);
    assert!((m.mrr - rev(|v| v.mrr)).abs() < 1e-12);
    assert!((m.precision - rev(|v| v.precision)).abs() < 1e-12);
}

// ---- seqrec ----

fn seq_cfg() -> SeqConfig {
    SeqConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        max_len: 6,
        ..SeqConfig::default()
    }
}

fn four_item_split() -> DatasetSplit {
    split_of(&[("u0", "a"), ("u0", "b"), ("u1", "c"), ("u1", "d")], &[("u0", "c"), ("u1", "a")])
}

fn t<'a>(m: &'a SeqModel<f64>, name: &str) -> &'a [f64] {
    m.store.data(m.store.find(name).unwrap_or_else(|| panic!("no tensor {name}")))
}

/// `x (n x a) W (a x b) + bias`.
fn lin(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let o = b.len();
    x.iter().map(|r| (0..o).map(|j| b[j] + r.iter().enumerate().map(|(k, v)| v * w[k * o + j]).sum::<f64>()).collect()).collect()
}

fn layer_norm(x: &[Vec<f64>], g: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let mu = r.iter().sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / r.len() as f64;
            r.iter().enumerate().map(|(k, v)| (v - mu) / (var + 1e-5).sqrt() * g[k] + b[k]).collect()
        })
        .collect()
}

fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Straight-line encoder and head; returns per-position logits and the
/// attention of layer 0 (`heads x n x n`).
fn oracle(m: &SeqModel<f64>, tokens: &[u32]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let d = m.d_model;
    let special = t(m, "special_emb");
    let table = t(m, "item_table");
    let pos = t(m, "pos_emb");
    let item_vec = |i: usize| -> Vec<f64> {
        let row = &table[i * m.item_dim..(i + 1) * m.item_dim];
        match m.store.find("item_proj") {
            Some(p) => {
                let p = m.store.data(p);
                (0..d).map(|j| row.iter().enumerate().map(|(k, v)| v * p[k * d + j]).sum()).collect()
            }
            None => row.to_vec(),
        }
    };
    // right-aligned: the last token takes row max_len
    let first = m.max_len + 1 - tokens.len();
    let x0: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &tok)| {
            let e = if tok < N_SPECIAL { special[tok as usize * d..(tok as usize + 1) * d].to_vec() } else { item_vec((tok - N_SPECIAL) as usize) };
            (0..d).map(|k| e[k] + pos[(first + p) * d + k]).collect()
        })
        .collect();
    let mut x = layer_norm(&x0, t(m, "emb_ln.gamma"), t(m, "emb_ln.beta"));
    let n = tokens.len();
    let mut attn0 = Vec::new();
    for l in 0..m.blocks.len() {
        let p = |s: &str| format!("block{l}.{s}");
        let q = lin(&x, t(m, &p("q.w")), t(m, &p("q.b")));
        let k = lin(&x, t(m, &p("k.w")), t(m, &p("k.b")));
        let v = lin(&x, t(m, &p("v.w")), t(m, &p("v.b")));
        let dh = d / m.heads;
        let mut ctx = vec![vec![0.0; d]; n];
        let mut attn = vec![vec![vec![0.0; n]; n]; m.heads];
        for h in 0..m.heads {
            let r = h * dh..(h + 1) * dh;
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| {
                        if tokens[j] == PAD {
                            f64::NEG_INFINITY
                        } else {
                            q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                        }
                    })
                    .collect();
                let z: f64 = s.iter().map(|v| v.exp()).sum();
                for j in 0..n {
                    let a = s[j].exp() / z;
                    attn[h][i][j] = a;
                    for c in r.clone() {
                        ctx[i][c] += a * v[j][c];
                    }
                }
            }
        }
        if l == 0 {
            attn0 = attn;
        }
        let a = lin(&ctx, t(m, &p("o.w")), t(m, &p("o.b")));
        let x1 = layer_norm(&add(&x, &a), t(m, &p("ln1.gamma")), t(m, &p("ln1.beta")));
        let f1 = lin(&x1, t(m, &p("ff1.w")), t(m, &p("ff1.b")));
        let g: Vec<Vec<f64>> = f1
            .iter()
            .map(|r| r.iter().map(|&z| 0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh())).collect())
            .collect();
        let f2 = lin(&g, t(m, &p("ff2.w")), t(m, &p("ff2.b")));
        x = layer_norm(&add(&x1, &f2), t(m, &p("ln2.gamma")), t(m, &p("ln2.beta")));
    }
    let logits = match m.store.find("out.w") {
        Some(w) => lin(&x, m.store.data(w), t(m, "out.b")),
        None => {
            let b = t(m, "out.b");
            let e: Vec<Vec<f64>> = (0..m.n_items).map(item_vec).collect();
            x.iter().map(|h| (0..m.n_items).map(|j| b[j] + h.iter().zip(&e[j]).map(|(a, c)| a * c).sum::<f64>()).collect()).collect()
        }
    };
    (logits, attn0)
}

fn seq_model(mode: InitMode, tie: bool, seed: u64) -> (DatasetSplit, SeqModel<f64>) {
    let split = four_item_split();
    assert_eq!(split.n_items(), 4);
    let emb = toy_embeddings(&split, 5, seed);
    let cfg = SeqConfig { tie_output: tie, seed, ..seq_cfg() };
    let mut m: SeqModel<f64> = init_seqrec(&split, Some(&emb), mode, &cfg).unwrap();
    perturb(&mut m.store, seed + 100, 0.2);
    (split, m)
}

#[test]
fn seqrec_forward_matches_straight_line_oracle() {
    let seqs = [vec![PAD, 2, MASK, 4, 5], vec![3, 3, 2, MASK], vec![MASK]];
    for (mode, tie) in [(InitMode::PretrainedFrozen, false), (InitMode::RandomUnfrozen, false), (InitMode::PretrainedFrozen, true)] {
        let (_, m) = seq_model(mode, tie, 13);
        let got = m.forward_logits(&seqs).unwrap();
        for (s, g) in seqs.iter().zip(&got) {
            let (want, attn) = oracle(&m, s);
            for (p, row) in want.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    assert!((g[p * 4 + j] - w).abs() < 1e-10, "{mode:?} tie={tie} pos {p} item {j}");
                }
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                let probs: Vec<f64> = row.iter().map(|v| v.exp() / z).collect();
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(probs.iter().all(|&q| -q.ln() >= 0.0));
            }
            let fwd = m.forward(s).unwrap();
            let a = fwd.attention(0);
            let n = s.len();
            for h in 0..m.heads {
                for i in 0..n {
                    let row = &a[(h * n + i) * n..(h * n + i + 1) * n];
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    for j in 0..n {
                        assert!((row[j] - attn[h][i][j]).abs() < 1e-12);
                        if s[j] == PAD {
                            assert_eq!(row[j], 0.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn seqrec_ranking_is_argsort_of_mask_logits() {
    let (split, m) = seq_model(InitMode::PretrainedFrozen, false, 3);
    let data = build_sequences(&split, m.max_len);
    let users: Vec<u32> = (0..split.n_users() as u32).collect();
    for r in recommend_seqrec(&m, &data, &split.seen, &users, 4).unwrap() {
        let mut toks = data.sequence(r.user).to_vec();
        toks.push(MASK);
        let (logits, _) = oracle(&m, &toks);
        let last = logits.last().unwrap();
        let mut cand: Vec<(u32, f64)> = (0..4u32).filter(|&i| !split.seen.contains(r.user, i)).map(|i| (i, last[i as usize])).collect();
        cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(r.items, cand.iter().map(|c| c.0).collect::<Vec<_>>());
    }
}

#[test]
fn mask_rate_is_binomial() {
    let seqs: Vec<Vec<u32>> = (0..1000).map(|s| (0..100).map(|i| 2 + ((s + i) % 50) as u32).collect()).collect();
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let p = 0.2;
    let batch = apply_masking(&mut ChaCha8Rng::seed_from_u64(5), &refs, p);
    let masked: usize = batch.tokens.iter().flatten().filter(|&&t| t == MASK).count();
    let n = 100_000.0;
    let sigma = (p * (1.0 - p) / n).sqrt();
    let rate = masked as f64 / n;
    assert!((rate - p).abs() <= 3.0 * sigma, "mask rate {rate}");
    let targets: usize = batch.targets.iter().map(Vec::len).sum();
    assert_eq!(targets, masked);
    for ((orig, toks), tg) in seqs.iter().zip(&batch.tokens).zip(&batch.targets) {
        for &(pos, tok) in tg {
            assert_eq!(toks[pos], MASK);
            assert_eq!(orig[pos], tok);
        }
    }
}

#[test]
fn sequences_keep_most_recent_max_len() {
    let events: Vec<Event> = (0..400).map(|i| Event::new("u", &format!("i{i:03}"), 1000 - i)).chain([Event::new("w", "i000", 0)]).collect();
    let holdout = vec![Event::new("w", "i005", 5000)];
    let split = sanitize_and_partition(&InteractionLog::new(events).unwrap(), &InteractionLog::new(holdout).unwrap(), 0).unwrap();
    let data = build_sequences(&split, 300);
    let u = split.users.get("u").unwrap();
    let seq = data.sequence(u);
    assert_eq!(seq.len(), 300);
    // item i has timestamp 1000 - i, so the newest 300 are i000..i299, oldest first
    let ids: Vec<&str> = seq.iter().map(|&t| split.items.id(t - N_SPECIAL)).collect();
    assert_eq!(ids[0], "i299");
    assert_eq!(ids[299], "i000");
}

// ---- training determinism and checkpoints ----

fn quick_shallow() -> ShallowConfig {
    ShallowConfig { epochs: 3, n_neg: 4, batch_size: 8, ..ShallowConfig::default() }
}

#[test]
fn shallow_training_is_bitwise_deterministic() {
    let split = toy_split(10, 20);
    let emb = toy_embeddings(&split, 6, 1);
    let run = || {
        let mut m: ShallowModel<f32> = init_shallow(&split, Some(&emb), InitMode::RandomUnfrozen, 6, 0.2, 4).unwrap();
        train_shallow(&mut m, &split, &quick_shallow(), None).unwrap();
        m.store
    };
    let (a, b) = (run(), run());
    let bits = |s: &ParamStore<f32>| s.iter().flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn checkpoints_restore_identical_rankings() {
    let split = toy_split(10, 20);
    let emb = toy_embeddings(&split, 6, 1);
    let dir = tempfile::tempdir().unwrap();
    let users: Vec<u32> = (0..10).collect();

    let mut m: ShallowModel<f32> = init_shallow(&split, Some(&emb), InitMode::PretrainedFrozen, 6, 0.2, 4).unwrap();
    train_shallow(&mut m, &split, &quick_shallow(), None).unwrap();
    let p = dir.path().join("shallow.parc");
    write_checkpoint(&p, "shallow", &m.store, &serde_json::json!({"dim": 6})).unwrap();
    let mut fresh: ShallowModel<f32> = init_shallow(&split, Some(&emb), InitMode::PretrainedFrozen, 6, 0.2, 99).unwrap();
    assert_ne!(fresh.store, m.store);
    let ck = read_checkpoint(&p).unwrap();
    assert_eq!(ck.kind, "shallow");
    ck.restore_into(&mut fresh.store).unwrap();
    assert_eq!(fresh.store, m.store);
    assert_eq!(recommend_shallow(&fresh, &split.seen, &users, 5).unwrap(), recommend_shallow(&m, &split.seen, &users, 5).unwrap());

    let cfg = SeqConfig { epochs: 2, ..seq_cfg() };
    let data = build_sequences(&split, cfg.max_len);
    let mut s: SeqModel<f32> = init_seqrec(&split, Some(&emb), InitMode::PretrainedFrozen, &cfg).unwrap();
    train_seqrec(&mut s, &data, &cfg, None).unwrap();
    let p = dir.path().join("seqrec.parc");
    write_checkpoint(&p, "seqrec", &s.store, &serde_json::to_value(&cfg).unwrap()).unwrap();
    let mut fresh: SeqModel<f32> = init_seqrec(&split, Some(&emb), InitMode::PretrainedFrozen, &SeqConfig { seed: 7, ..cfg.clone() }).unwrap();
    let ck = read_checkpoint(&p).unwrap();
    ck.restore_into(&mut fresh.store).unwrap();
    assert_eq!(fresh.store, s.store);
    assert_eq!(recommend_seqrec(&fresh, &data, &split.seen, &users, 5).unwrap(), recommend_seqrec(&s, &data, &split.seen, &users, 5).unwrap());
    let back: SeqConfig = serde_json::from_value(ck.config).unwrap();
    assert_eq!(back, cfg);
}
