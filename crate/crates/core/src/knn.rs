//! Profile-mean nearest neighbours: a user is the mean of the embeddings of
//! the tracks in their training profile, and recommendations are the unseen
//! tracks with the highest cosine similarity to that point.

use rayon::prelude::*;

use crate::domain::{EmbeddingTable, SeenSets};
use crate::error::{Error, Result};
use crate::ranking::{top_k_unseen, Ranking};
use crate::split::DatasetSplit;
use crate::tensor::norm;

/// Added to the norm product so zero vectors score 0.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfileMatrix {
    pub n_users: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl UserProfileMatrix {
    pub fn row(&self, user: u32) -> &[f32] {
        let s = user as usize * self.dim;
        &self.data[s..s + self.dim]
    }
}

pub(crate) fn check_aligned(split: &DatasetSplit, embeddings: &EmbeddingTable) -> Result<()> {
    if embeddings.ids() != &split.items {
        return Err(Error::InvalidInput(
            "embedding rows are not aligned with the split's item ids; call EmbeddingTable::reindex".into(),
        ));
    }
    Ok(())
}

/// Row `u` is the mean embedding over the distinct training items of `u`.
pub fn build_user_profiles(split: &DatasetSplit, embeddings: &EmbeddingTable) -> Result<UserProfileMatrix> {
    check_aligned(split, embeddings)?;
    let dim = embeddings.dim();
    let n_users = split.n_users();
    let mut data = Vec::with_capacity(n_users * dim);
    let mut acc = vec![0f64; dim];
    for u in 0..n_users as u32 {
        let items = split.seen.get(u);
        if items.is_empty() {
            return Err(Error::InvalidInput(format!(
                "user `{}` has no training items",
                split.users.id(u)
            )));
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &i in items {
            for (a, &v) in acc.iter_mut().zip(embeddings.row(i)) {
                *a += v as f64;
            }
        }
        let k = items.len() as f64;
        data.extend(acc.iter().map(|a| (a / k) as f32));
    }
    Ok(UserProfileMatrix { n_users, dim, data })
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    d / (norm(a) * norm(b) + COSINE_EPS)
}

/// Top-`k` unseen items by cosine similarity to each user's profile.
pub fn recommend_knn(
    profiles: &UserProfileMatrix,
    embeddings: &EmbeddingTable,
    seen: &SeenSets,
    users: &[u32],
    k: usize,
) -> Result<Vec<Ranking>> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if profiles.dim != embeddings.dim() {
        return Err(Error::InvalidInput(format!(
            "profile dim {} != embedding dim {}",
            profiles.dim,
            embeddings.dim()
        )));
    }
    let item_norms: Vec<f64> = embeddings.matrix().chunks_exact(embeddings.dim()).map(norm).collect();
    Ok(users
        .par_iter()
        .map(|&u| {
            let p = profiles.row(u);
            let pn = norm(p);
            let scores: Vec<f64> = embeddings
                .matrix()
                .chunks_exact(embeddings.dim())
                .zip(&item_norms)
                .map(|(row, &n)| {
                    let d: f64 = p.iter().zip(row).map(|(&x, &y)| x as f64 * y as f64).sum();
                    d / (pn * n + COSINE_EPS)
                })
                .collect();
            top_k_unseen(u, &scores, seen.get(u), k)
        })
        .collect())
}
