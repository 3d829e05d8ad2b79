//! Masked-item sequence model over chronological listening histories.
//!
//! Tokens: `0` is padding, `1` is the mask, item `i` is token `i + 2`.
//! Training masks random positions and predicts the hidden items; inference
//! appends a mask to the history and ranks items at that position.

mod model;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingTable, SeenSets};
use crate::error::{Error, Result};
use crate::knn::check_aligned;
use crate::optim::{Adam, AdamConfig, EarlyStopping, EpochRecord, PlateauScheduler, TrainHistory};
use crate::ranking::{top_k_unseen, Ranking};
use crate::split::DatasetSplit;
use crate::tensor::{to_real, Grads, ParamStore, Real};

pub use crate::shallow::{InitMode, Validation};
pub use model::{BlockIds, Forward, LinearIds, NormIds, SeqModel};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const N_SPECIAL: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqConfig {
    pub epochs: usize,
    pub lr: f64,
    pub mask_prob: f64,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; 0 means `4 * d_model`.
    pub ff_dim: usize,
    pub batch_size: usize,
    pub max_len: usize,
    /// Reuse the item token embeddings as the output projection.
    pub tie_output: bool,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for SeqConfig {
    fn default() -> Self {
        SeqConfig {
            epochs: 200,
            lr: 0.001,
            mask_prob: 0.2,
            d_model: 64,
            layers: 2,
            heads: 2,
            ff_dim: 0,
            batch_size: 32,
            max_len: 300,
            tie_output: false,
            early_stop_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_lr: 1e-5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl SeqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("seqrec.lr must be positive".into()));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return Err(Error::Config("seqrec.mask_prob must be in (0, 1]".into()));
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "seqrec.d_model ({}) must be a positive multiple of seqrec.heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::Config("seqrec.batch_size and seqrec.max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn ff_width(&self) -> usize {
        if self.ff_dim == 0 {
            4 * self.d_model
        } else {
            self.ff_dim
        }
    }
}

/// Token sequence of every user, indexed by internal user id.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Vec<u32>>,
    pub max_len: usize,
}

impl SequenceDataset {
    pub fn sequence(&self, user: u32) -> &[u32] {
        self.sequences.get(user as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Chronological training items per user (ties by item index), keeping the
/// most recent `max_len`.
pub fn build_sequences(split: &DatasetSplit, max_len: usize) -> SequenceDataset {
    let mut per_user: Vec<Vec<(i64, u32)>> = vec![Vec::new(); split.n_users()];
    for e in &split.train {
        per_user[e.user as usize].push((e.timestamp, e.item));
    }
    let sequences = per_user
        .into_iter()
        .map(|mut evs| {
            evs.sort_unstable();
            let skip = evs.len().saturating_sub(max_len);
            evs[skip..].iter().map(|&(_, i)| i + N_SPECIAL).collect()
        })
        .collect();
    SequenceDataset { sequences, max_len }
}

/// Masked inputs with `(position, original token)` targets per sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub tokens: Vec<Vec<u32>>,
    pub targets: Vec<Vec<(usize, u32)>>,
}

/// Replaces each non-padding token with MASK with probability `p`. A
/// sequence that draws no mask gets one at a uniformly chosen position.
pub fn apply_masking<R: Rng>(rng: &mut R, batch: &[&[u32]], p: f64) -> MaskedBatch {
    let mut tokens = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for seq in batch {
        let mut t = seq.to_vec();
        let mut tg = Vec::new();
        for (pos, tok) in t.iter_mut().enumerate() {
            if *tok >= N_SPECIAL && rng.gen::<f64>() < p {
                tg.push((pos, *tok));
                *tok = MASK;
            }
        }
        if tg.is_empty() {
            let candidates: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= N_SPECIAL).collect();
            if let Some(&pos) = candidates.choose(rng) {
                tg.push((pos, t[pos]));
                t[pos] = MASK;
            }
        }
        tokens.push(t);
        targets.push(tg);
    }
    MaskedBatch { tokens, targets }
}

/// Builds the model. In pretrained mode `embeddings` (aligned with
/// `split.items`) becomes a frozen table behind a trainable projection to
/// `d_model`; in random mode items get a trainable `d_model` table.
pub fn init_seqrec<T: Real>(
    split: &DatasetSplit,
    embeddings: Option<&EmbeddingTable>,
    mode: InitMode,
    cfg: &SeqConfig,
) -> Result<SeqModel<T>> {
    cfg.validate()?;
    let n_items = split.n_items();
    let d = cfg.d_model;
    let ff = cfg.ff_width();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5345_5152_4543_0001);
    let mut store = ParamStore::new();
    let fan = |n: usize| 1.0 / (n as f64).sqrt();

    let (item_table, proj, item_dim) = match mode {
        InitMode::PretrainedFrozen => {
            let emb = embeddings.ok_or_else(|| Error::Config("pretrained mode needs an embedding table".into()))?;
            check_aligned(split, emb)?;
            let pd = emb.dim();
            let t = store.add("item_table", &[n_items, pd], to_real(emb.matrix()), false);
            let p = store.uniform("item_proj", &[pd, d], fan(pd), &mut rng, true);
            (t, Some(p), pd)
        }
        InitMode::RandomUnfrozen => (store.uniform("item_table", &[n_items, d], fan(d), &mut rng, true), None, d),
    };
    let special = store.uniform("special_emb", &[N_SPECIAL as usize, d], fan(d), &mut rng, true);
    // Small, so row 0 (only reached by a full window plus MASK) stays near zero.
    let pos = store.uniform("pos_emb", &[cfg.max_len + 1, d], 0.02, &mut rng, true);
    let norm = |store: &mut ParamStore<T>, name: &str| NormIds {
        gamma: store.filled(format!("{name}.gamma"), &[d], T::one(), true),
        beta: store.zeros(format!("{name}.beta"), &[d], true),
    };
    let emb_ln = norm(&mut store, "emb_ln");
    let mut blocks = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let mut lin = |store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize| LinearIds {
            w: store.uniform(format!("block{l}.{name}.w"), &[d_in, d_out], fan(d_in), &mut rng, true),
            b: store.zeros(format!("block{l}.{name}.b"), &[d_out], true),
            d_in,
            d_out,
        };
        let q = lin(&mut store, "q", d, d);
        let k = lin(&mut store, "k", d, d);
        let v = lin(&mut store, "v", d, d);
        let o = lin(&mut store, "o", d, d);
        let ff1 = lin(&mut store, "ff1", d, ff);
        let ff2 = lin(&mut store, "ff2", ff, d);
        let ln1 = norm(&mut store, &format!("block{l}.ln1"));
        let ln2 = norm(&mut store, &format!("block{l}.ln2"));
        blocks.push(BlockIds { q, k, v, o, ln1, ff1, ff2, ln2 });
    }
    let out_w = (!cfg.tie_output).then(|| store.uniform("out.w", &[d, n_items], fan(d), &mut rng, true));
    let out_b = store.zeros("out.b", &[n_items], true);
    Ok(SeqModel {
        store,
        mode,
        item_table,
        proj,
        special,
        pos,
        emb_ln,
        blocks,
        out_w,
        out_b,
        n_items,
        item_dim,
        d_model: d,
        heads: cfg.heads,
        ff_dim: ff,
        max_len: cfg.max_len,
    })
}

/// Trains with masked-item cross-entropy. With `validation`, NDCG@k drives
/// the plateau schedule and early stopping and the best epoch is kept.
pub fn train_seqrec<T: Real>(
    model: &mut SeqModel<T>,
    data: &SequenceDataset,
    cfg: &SeqConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5345_5152_4543_0002);
    let mut order: Vec<u32> = (0..data.len() as u32).filter(|&u| !data.sequence(u).is_empty()).collect();
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut grads = Grads::zeros(&model.store);
    let mut plateau = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<ParamStore<T>> = None;

    for epoch in 0..cfg.epochs {
        let lr = plateau.lr();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&u| data.sequence(u)).collect();
            let batch = apply_masking(&mut rng, &seqs, cfg.mask_prob);
            grads.reset();
            let loss = model
                .masked_loss(&batch, Some(&mut grads))
                .map_err(|e| Error::Diverged(format!("seqrec epoch {epoch}, batch {b}: {e}")))?;
            if !grads.all_finite() {
                return Err(Error::Diverged(format!("seqrec: non-finite gradient at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss;
            adam.step(&mut model.store, &grads, lr);
        }
        let val_metric = match &validation {
            Some(v) => {
                let users = v.relevance.users();
                let ndcg = v.ndcg(&recommend_seqrec(model, data, v.seen, &users, v.k)?)?;
                if stopper.observe(epoch, ndcg) {
                    best = Some(model.store.clone());
                }
                plateau.observe(ndcg);
                Some(ndcg)
            }
            None => None,
        };
        debug!("seqrec epoch {epoch}: loss {epoch_loss:.4} val {val_metric:?} lr {lr}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_metric,
            lr,
        });
        if validation.is_some() && stopper.should_stop() {
            info!("seqrec: early stop after epoch {epoch}");
            history.stopped_early = true;
            break;
        }
    }
    if let Some(store) = best {
        model.store = store;
        history.best_epoch = stopper.best().map(|b| b.0);
    }
    Ok(history)
}

/// Ranks items at a MASK appended to each user's history. Users without a
/// history get an empty ranking.
pub fn recommend_seqrec<T: Real>(
    model: &SeqModel<T>,
    data: &SequenceDataset,
    seen: &SeenSets,
    users: &[u32],
    k: usize,
) -> Result<Vec<Ranking>> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    users
        .par_iter()
        .map(|&u| {
            let seq = data.sequence(u);
            if seq.is_empty() {
                return Ok(Ranking {
                    user: u,
                    items: Vec::new(),
                    scores: Vec::new(),
                    truncated: true,
                });
            }
            let history = &seq[seq.len().saturating_sub(model.max_len)..];
            let scores = model.next_item_logits(history)?;
            Ok(top_k_unseen(u, &scores, seen.get(u), k))
        })
        .collect()
}
