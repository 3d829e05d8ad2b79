//! Two-tower "shallow net".
//!
//! Each tower is an embedding row followed by a dimension-preserving affine
//! layer with ReLU; the score of a (user, item) pair is the cosine between
//! the two tower outputs. Item rows are the pretrained embeddings and stay
//! frozen, user rows start at the mean of the user's tracks and are trained.
//! The loss is a max-margin hinge over negative *users*: for a positive pair
//! `(u, i)` and users `v` who never played `i`,
//! `Σ_v max(0, margin - s(u, i) + s(v, i))`.

use std::collections::BTreeMap;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingTable, SeenSets};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate, RelevanceSets};
use crate::optim::{Adam, AdamConfig, EarlyStopping, EpochRecord, PlateauScheduler, TrainHistory};
use crate::ranking::{top_k_unseen, Ranking};
use crate::split::DatasetSplit;
use crate::tensor::{dot, norm, to_real, Grads, ParamId, ParamStore, Real};

/// Added to the product of tower-output norms in the cosine.
pub const SCORE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Item rows copied from the embedding table and frozen; user rows start
    /// at the mean of their training items.
    PretrainedFrozen,
    /// Both embedding tables random and trainable.
    RandomUnfrozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShallowConfig {
    pub lr: f64,
    pub epochs: usize,
    pub n_neg: usize,
    pub margin: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Embedding width in random-unfrozen mode.
    pub random_dim: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for ShallowConfig {
    fn default() -> Self {
        ShallowConfig {
            lr: 0.001,
            epochs: 100,
            n_neg: 20,
            margin: 0.2,
            batch_size: 256,
            early_stop_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_lr: 1e-5,
            random_dim: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl ShallowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("shallow.lr must be positive".into()));
        }
        if self.n_neg == 0 || self.batch_size == 0 {
            return Err(Error::Config("shallow.n_neg and shallow.batch_size must be at least 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("shallow.margin must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowModel<T> {
    pub store: ParamStore<T>,
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    pub w_user: ParamId,
    pub b_user: ParamId,
    pub w_item: ParamId,
    pub b_item: ParamId,
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub margin: f64,
    pub mode: InitMode,
}

/// One positive pair with its sampled negative users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub item: u32,
    pub negatives: Vec<u32>,
}

/// Builds the parameters for either initialization mode. `embeddings` must be
/// aligned with `split.items` and is required in pretrained mode.
pub fn init_shallow<T: Real>(
    split: &DatasetSplit,
    embeddings: Option<&EmbeddingTable>,
    mode: InitMode,
    dim: usize,
    margin: f64,
    seed: u64,
) -> Result<ShallowModel<T>> {
    let n_users = split.n_users();
    let n_items = split.n_items();
    if dim == 0 {
        return Err(Error::Config("shallow dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let bound = 1.0 / (dim as f64).sqrt();
    let (user_emb, item_emb) = match mode {
        InitMode::PretrainedFrozen => {
            let table = embeddings.ok_or_else(|| Error::Config("pretrained mode needs an embedding table".into()))?;
            if table.dim() != dim {
                return Err(Error::Config(format!(
                    "pretrained mode: requested dim {dim} but embeddings have dim {}",
                    table.dim()
                )));
            }
            crate::knn::check_aligned(split, table)?;
            let mut users = vec![T::zero(); n_users * dim];
            let mut acc = vec![0f64; dim];
            for u in 0..n_users {
                let items = split.seen.get(u as u32);
                if items.is_empty() {
                    return Err(Error::InvalidInput(format!("user {u} has no training items")));
                }
                acc.iter_mut().for_each(|a| *a = 0.0);
                for &i in items {
                    for (a, &v) in acc.iter_mut().zip(table.row(i)) {
                        *a += v as f64;
                    }
                }
                for (d, a) in users[u * dim..(u + 1) * dim].iter_mut().zip(&acc) {
                    *d = T::narrow(a / items.len() as f64);
                }
            }
            let ue = store.add("user_emb", &[n_users, dim], users, true);
            let ie = store.add("item_emb", &[n_items, dim], to_real(table.matrix()), false);
            (ue, ie)
        }
        InitMode::RandomUnfrozen => {
            let ue = store.uniform("user_emb", &[n_users, dim], bound, &mut rng, true);
            let ie = store.uniform("item_emb", &[n_items, dim], bound, &mut rng, true);
            (ue, ie)
        }
    };
    let w_user = store.uniform("w_user", &[dim, dim], bound, &mut rng, true);
    let b_user = store.zeros("b_user", &[dim], true);
    let w_item = store.uniform("w_item", &[dim, dim], bound, &mut rng, true);
    let b_item = store.zeros("b_item", &[dim], true);
    Ok(ShallowModel {
        store,
        user_emb,
        item_emb,
        w_user,
        b_user,
        w_item,
        b_item,
        n_users,
        n_items,
        dim,
        margin,
        mode,
    })
}

/// Tower activations of one entity.
struct TowerOut<T> {
    pre: Vec<T>,
    out: Vec<T>,
    norm: f64,
}

#[derive(Clone, Copy)]
enum Side {
    User,
    Item,
}

impl<T: Real> ShallowModel<T> {
    fn tower_ids(&self, side: Side) -> (ParamId, ParamId, ParamId) {
        match side {
            Side::User => (self.user_emb, self.w_user, self.b_user),
            Side::Item => (self.item_emb, self.w_item, self.b_item),
        }
    }

    fn row(&self, emb: ParamId, idx: u32) -> &[T] {
        let s = idx as usize * self.dim;
        &self.store.data(emb)[s..s + self.dim]
    }

    fn tower(&self, side: Side, idx: u32) -> TowerOut<T> {
        let (emb, w, b) = self.tower_ids(side);
        let x = self.row(emb, idx);
        let mut pre = vec![T::zero(); self.dim];
        crate::tensor::affine(self.store.data(w), self.store.data(b), x, &mut pre);
        let out: Vec<T> = pre.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let norm = norm(&out);
        TowerOut { pre, out, norm }
    }

    /// ReLU tower output of a user.
    pub fn user_vector(&self, user: u32) -> Vec<T> {
        self.tower(Side::User, user).out
    }

    /// ReLU tower output of an item.
    pub fn item_vector(&self, item: u32) -> Vec<T> {
        self.tower(Side::Item, item).out
    }

    /// Cosine between the user and item tower outputs.
    pub fn score(&self, user: u32, item: u32) -> f64 {
        let a = self.tower(Side::User, user);
        let b = self.tower(Side::Item, item);
        dot(&a.out, &b.out).widen() / (a.norm * b.norm + SCORE_EPS)
    }

    /// Hinge loss of one positive pair against its negatives.
    pub fn hinge_loss(&self, user: u32, item: u32, negatives: &[u32]) -> f64 {
        let pos = self.score(user, item);
        negatives
            .iter()
            .map(|&v| (self.margin - pos + self.score(v, item)).max(0.0))
            .sum()
    }

    /// Summed hinge loss over a batch, forward only.
    pub fn loss(&self, batch: &[Triple]) -> f64 {
        batch.iter().map(|t| self.hinge_loss(t.user, t.item, &t.negatives)).sum()
    }

    /// Summed hinge loss over `batch`; gradients are added into `grads`.
    pub fn loss_and_grads(&self, batch: &[Triple], grads: &mut Grads<T>) -> f64 {
        let mut user_slot: BTreeMap<u32, usize> = BTreeMap::new();
        let mut item_slot: BTreeMap<u32, usize> = BTreeMap::new();
        for t in batch {
            let n = user_slot.len();
            user_slot.entry(t.user).or_insert(n);
            for &v in &t.negatives {
                let n = user_slot.len();
                user_slot.entry(v).or_insert(n);
            }
            let n = item_slot.len();
            item_slot.entry(t.item).or_insert(n);
        }
        let mut users: Vec<(u32, TowerOut<T>)> = Vec::with_capacity(user_slot.len());
        let mut order: Vec<(u32, usize)> = user_slot.iter().map(|(&u, &s)| (u, s)).collect();
        order.sort_by_key(|p| p.1);
        for (u, _) in order {
            users.push((u, self.tower(Side::User, u)));
        }
        let mut order: Vec<(u32, usize)> = item_slot.iter().map(|(&i, &s)| (i, s)).collect();
        order.sort_by_key(|p| p.1);
        let items: Vec<(u32, TowerOut<T>)> = order.into_iter().map(|(i, _)| (i, self.tower(Side::Item, i))).collect();

        let dim = self.dim;
        let mut d_user = vec![0f64; users.len() * dim];
        let mut d_item = vec![0f64; items.len() * dim];
        let mut loss = 0.0;
        for t in batch {
            let us = user_slot[&t.user];
            let is = item_slot[&t.item];
            let g = &items[is].1;
            let pos = cosine_of(&users[us].1, g);
            for &v in &t.negatives {
                let vs = user_slot[&v];
                let neg = cosine_of(&users[vs].1, g);
                let term = self.margin - pos + neg;
                if term > 0.0 {
                    loss += term;
                    cosine_backward(&users[us].1, g, -1.0, &mut d_user[us * dim..(us + 1) * dim], &mut d_item[is * dim..(is + 1) * dim]);
                    cosine_backward(&users[vs].1, g, 1.0, &mut d_user[vs * dim..(vs + 1) * dim], &mut d_item[is * dim..(is + 1) * dim]);
                }
            }
        }
        for (slot, (u, act)) in users.iter().enumerate() {
            self.tower_backward(Side::User, *u, act, &d_user[slot * dim..(slot + 1) * dim], grads);
        }
        for (slot, (i, act)) in items.iter().enumerate() {
            self.tower_backward(Side::Item, *i, act, &d_item[slot * dim..(slot + 1) * dim], grads);
        }
        loss
    }

    fn tower_backward(&self, side: Side, idx: u32, act: &TowerOut<T>, d_out: &[f64], grads: &mut Grads<T>) {
        let (emb, w, b) = self.tower_ids(side);
        let dim = self.dim;
        let dz: Vec<f64> = act
            .pre
            .iter()
            .zip(d_out)
            .map(|(&z, &d)| if z > T::zero() { d } else { 0.0 })
            .collect();
        if dz.iter().all(|&v| v == 0.0) {
            return;
        }
        let x = self.row(emb, idx);
        {
            let gw = grads.get_mut(w);
            for j in 0..dim {
                if dz[j] == 0.0 {
                    continue;
                }
                let row = &mut gw[j * dim..(j + 1) * dim];
                for (g, &xv) in row.iter_mut().zip(x) {
                    *g = T::narrow(g.widen() + dz[j] * xv.widen());
                }
            }
        }
        for (g, &d) in grads.get_mut(b).iter_mut().zip(&dz) {
            *g = T::narrow(g.widen() + d);
        }
        if grads.is_tracked(emb) {
            let wd = self.store.data(w);
            let ge = &mut grads.get_mut(emb)[idx as usize * dim..(idx as usize + 1) * dim];
            for (k, g) in ge.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..dim {
                    s += wd[j * dim + k].widen() * dz[j];
                }
                *g = T::narrow(g.widen() + s);
            }
        }
    }

    /// Normalized item tower outputs for the whole catalogue.
    fn item_matrix(&self) -> (Vec<f64>, Vec<f64>) {
        let mut outs = Vec::with_capacity(self.n_items * self.dim);
        let mut norms = Vec::with_capacity(self.n_items);
        for i in 0..self.n_items as u32 {
            let t = self.tower(Side::Item, i);
            outs.extend(t.out.iter().map(|v| v.widen()));
            norms.push(t.norm);
        }
        (outs, norms)
    }

    pub fn item_checksum(&self) -> String {
        self.store.get(self.item_emb).checksum()
    }
}

fn cosine_of<T: Real>(a: &TowerOut<T>, b: &TowerOut<T>) -> f64 {
    dot(&a.out, &b.out).widen() / (a.norm * b.norm + SCORE_EPS)
}

/// Adds `upstream * d cos(a, b)` into `da` and `db`.
fn cosine_backward<T: Real>(a: &TowerOut<T>, b: &TowerOut<T>, upstream: f64, da: &mut [f64], db: &mut [f64]) {
    let d = dot(&a.out, &b.out).widen();
    let denom = a.norm * b.norm + SCORE_EPS;
    let s = d / (denom * denom);
    let ca = if a.norm > 0.0 { s * b.norm / a.norm } else { 0.0 };
    let cb = if b.norm > 0.0 { s * a.norm / b.norm } else { 0.0 };
    for k in 0..da.len() {
        let av = a.out[k].widen();
        let bv = b.out[k].widen();
        da[k] += upstream * (bv / denom - ca * av);
        db[k] += upstream * (av / denom - cb * bv);
    }
}

/// Users holding each item, for negative sampling.
#[derive(Debug, Clone)]
pub struct ItemUserIndex {
    holders: Vec<Vec<u32>>,
    n_users: usize,
}

impl ItemUserIndex {
    pub fn new(seen: &SeenSets, n_users: usize, n_items: usize) -> Self {
        let mut holders = vec![Vec::new(); n_items];
        for (u, items) in seen.iter() {
            for &i in items {
                holders[i as usize].push(u);
            }
        }
        // BTreeMap iteration already yields users ascending.
        ItemUserIndex { holders, n_users }
    }

    pub fn holders(&self, item: u32) -> &[u32] {
        &self.holders[item as usize]
    }
}

/// Draws `n_neg` users uniformly (with replacement) among those who never
/// played `item`. Returns `None` when every user played it.
pub fn sample_negative_users<R: Rng>(rng: &mut R, item: u32, n_neg: usize, index: &ItemUserIndex) -> Option<Vec<u32>> {
    let holders = index.holders(item);
    let n = index.n_users;
    let eligible = n - holders.len();
    if eligible == 0 {
        return None;
    }
    if holders.len() * 2 <= n {
        let mut out = Vec::with_capacity(n_neg);
        while out.len() < n_neg {
            let v = rng.gen_range(0..n as u32);
            if holders.binary_search(&v).is_err() {
                out.push(v);
            }
        }
        Some(out)
    } else {
        let pool: Vec<u32> = (0..n as u32).filter(|v| holders.binary_search(v).is_err()).collect();
        Some((0..n_neg).map(|_| pool[rng.gen_range(0..pool.len())]).collect())
    }
}

/// Validation users and their relevance sets, used for plateau scheduling and
/// early stopping.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub relevance: &'a RelevanceSets,
    pub seen: &'a SeenSets,
    pub k: usize,
}

impl Validation<'_> {
    pub fn ndcg(&self, rankings: &[Ranking]) -> Result<f64> {
        let per_user = evaluate(rankings, self.relevance, self.k)?;
        let v: Vec<_> = per_user.into_iter().map(|p| p.1).collect();
        Ok(aggregate(&v).ndcg)
    }
}

/// Trains with Adam over shuffled positive pairs and fresh negatives each
/// epoch. With `validation`, NDCG@k drives the plateau schedule and early
/// stopping, and the best epoch's parameters are kept.
pub fn train_shallow<T: Real>(
    model: &mut ShallowModel<T>,
    split: &DatasetSplit,
    cfg: &ShallowConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_414c_4c4f_5721);
    let index = ItemUserIndex::new(&split.seen, model.n_users, model.n_items);
    let mut pairs: Vec<(u32, u32)> = split
        .seen
        .iter()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut grads = Grads::zeros(&model.store);
    let mut plateau = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<ParamStore<T>> = None;
    let mut skipped_items = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = plateau.lr();
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &(u, i) in chunk {
                match sample_negative_users(&mut rng, i, cfg.n_neg, &index) {
                    Some(negatives) => batch.push(Triple { user: u, item: i, negatives }),
                    None => skipped_items += 1,
                }
            }
            grads.reset();
            let loss = model.loss_and_grads(&batch, &mut grads);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged(format!("shallow: non-finite loss at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss;
            adam.step(&mut model.store, &grads, lr);
        }
        let val_metric = match &validation {
            Some(v) => {
                let users = v.relevance.users();
                let ndcg = v.ndcg(&recommend_shallow(model, v.seen, &users, v.k)?)?;
                if stopper.observe(epoch, ndcg) {
                    best = Some(model.store.clone());
                }
                plateau.observe(ndcg);
                Some(ndcg)
            }
            None => None,
        };
        debug!("shallow epoch {epoch}: loss {epoch_loss:.4} val {val_metric:?} lr {lr}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_metric,
            lr,
        });
        if validation.is_some() && stopper.should_stop() {
            info!("shallow: early stop after epoch {epoch}");
            history.stopped_early = true;
            break;
        }
    }
    if skipped_items > 0 {
        warn!("shallow: {skipped_items} positive pairs skipped (item played by every user)");
    }
    if let Some(store) = best {
        model.store = store;
        history.best_epoch = stopper.best().map(|b| b.0);
    }
    Ok(history)
}

/// Top-`k` unseen items per user by tower cosine.
pub fn recommend_shallow<T: Real>(model: &ShallowModel<T>, seen: &SeenSets, users: &[u32], k: usize) -> Result<Vec<Ranking>> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    let (items, norms) = model.item_matrix();
    let dim = model.dim;
    Ok(users
        .par_iter()
        .map(|&u| {
            let t = model.tower(Side::User, u);
            let h: Vec<f64> = t.out.iter().map(|v| v.widen()).collect();
            let scores: Vec<f64> = items
                .chunks_exact(dim)
                .zip(&norms)
                .map(|(row, &n)| {
                    let d: f64 = h.iter().zip(row).map(|(a, b)| a * b).sum();
                    d / (t.norm * n + SCORE_EPS)
                })
                .collect();
            top_k_unseen(u, &scores, seen.get(u), k)
        })
        .collect())
}
