//! Shared domain types: interaction logs, contiguous id maps, embedding
//! tables and per-user seen sets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};

/// One implicit-feedback play: `user` listened to `item` at `timestamp`
/// (seconds since the Unix epoch).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    pub user: Arc<str>,
    pub item: Arc<str>,
    pub timestamp: i64,
}

impl Event {
    pub fn new(user: &str, item: &str, timestamp: i64) -> Self {
        Event {
            user: Arc::from(user),
            item: Arc::from(item),
            timestamp,
        }
    }
}

/// An event expressed with internal, contiguous user and item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexedEvent {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// Deduplicates external id strings so large logs share one allocation per id.
#[derive(Debug, Default)]
pub struct Interner {
    table: HashMap<Arc<str>, ()>,
}

impl Interner {
    pub fn intern(&mut self, s: &str) -> Arc<str> {
        if let Some((k, _)) = self.table.get_key_value(s) {
            return k.clone();
        }
        let k: Arc<str> = Arc::from(s);
        self.table.insert(k.clone(), ());
        k
    }
}

/// Timestamped (user, item) plays in canonical order: by user id, then
/// timestamp, then item id. Duplicate plays are kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    events: Vec<Event>,
}

impl InteractionLog {
    /// Validates and canonicalizes `events`.
    pub fn new(mut events: Vec<Event>) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| e.timestamp < 0) {
            return Err(Error::InvalidInput(format!(
                "negative timestamp {} for user `{}`",
                e.timestamp, e.user
            )));
        }
        events.sort_unstable_by(|a, b| {
            a.user
                .cmp(&b.user)
                .then(a.timestamp.cmp(&b.timestamp))
                .then(a.item.cmp(&b.item))
        });
        Ok(InteractionLog { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Keeps the events for which `keep` returns true. Canonical order is preserved.
    pub fn retain(&mut self, keep: impl FnMut(&Event) -> bool) {
        self.events.retain(keep);
    }

    pub fn filtered(&self, keep: impl FnMut(&&Event) -> bool) -> InteractionLog {
        InteractionLog {
            events: self.events.iter().filter(keep).cloned().collect(),
        }
    }

    pub fn distinct_items(&self) -> HashSet<&str> {
        self.events.iter().map(|e| &*e.item).collect()
    }

    pub fn distinct_users(&self) -> HashSet<&str> {
        self.events.iter().map(|e| &*e.user).collect()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// Bijection between external string ids and contiguous indices `0..n`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    forward: HashMap<Arc<str>, u32>,
    backward: Vec<Arc<str>>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maps ids in order of first appearance, ignoring repeats.
    pub fn from_first_appearance<'a, I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<str> + ?Sized + 'a,
    {
        let mut map = IdMap::new();
        for id in ids {
            map.insert(id.as_ref());
        }
        map
    }

    /// Returns the index of `id`, assigning the next free index if unseen.
    pub fn insert(&mut self, id: &str) -> u32 {
        if let Some(&idx) = self.forward.get(id) {
            return idx;
        }
        let idx = self.backward.len() as u32;
        let key: Arc<str> = Arc::from(id);
        self.forward.insert(key.clone(), idx);
        self.backward.push(key);
        idx
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.forward.get(id).copied()
    }

    pub fn index_of(&self, id: &str) -> Result<u32> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// External id for an internal index.
    pub fn id(&self, idx: u32) -> &str {
        &self.backward[idx as usize]
    }

    pub fn contains(&self, id: &str) -> bool {
        self.forward.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backward.is_empty()
    }

    /// External ids in index order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backward.iter().map(|s| &**s)
    }
}

/// Item-aligned matrix of pretrained track representations (row-major `f32`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: IdMap,
    matrix: Vec<f32>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new<S: AsRef<str>>(ids: &[S], matrix: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dim must be positive".into()));
        }
        if matrix.len() != ids.len() * dim {
            return Err(Error::InvalidInput(format!(
                "matrix has {} values, expected {} items x {} dims",
                matrix.len(),
                ids.len(),
                dim
            )));
        }
        let mut map = IdMap::new();
        for id in ids {
            let before = map.len();
            map.insert(id.as_ref());
            if map.len() == before {
                return Err(Error::InvalidInput(format!(
                    "duplicate embedding id `{}`",
                    id.as_ref()
                )));
            }
        }
        if let Some(row) = matrix
            .chunks_exact(dim)
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                row,
                context: format!("embedding `{}`", ids[row].as_ref()),
            });
        }
        Ok(EmbeddingTable {
            ids: map,
            matrix,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_items(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &IdMap {
        &self.ids
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, idx: u32) -> &[f32] {
        let start = idx as usize * self.dim;
        &self.matrix[start..start + self.dim]
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f32]> {
        self.ids.get(id).map(|i| self.row(i))
    }

    /// Re-orders rows to follow `items`, so row `i` belongs to internal item `i`.
    pub fn reindex(&self, items: &IdMap) -> Result<EmbeddingTable> {
        let mut matrix = Vec::with_capacity(items.len() * self.dim);
        for id in items.ids() {
            let row = self
                .row_by_id(id)
                .ok_or_else(|| Error::UnknownId(id.to_string()))?;
            matrix.extend_from_slice(row);
        }
        Ok(EmbeddingTable {
            ids: items.clone(),
            matrix,
            dim: self.dim,
        })
    }
}

/// Result of [`build_id_maps`].
#[derive(Debug, Clone)]
pub struct IdMapping {
    pub users: IdMap,
    pub items: IdMap,
    /// Distinct log items without an embedding row.
    pub dropped_items: usize,
}

/// Maps users and items of `log` to contiguous indices.
///
/// Items are kept only when present in both the log and `embeddings`; users
/// are mapped in first-appearance order among the events that survive.
pub fn build_id_maps(log: &InteractionLog, embeddings: &EmbeddingTable) -> Result<IdMapping> {
    if log.is_empty() {
        return Err(Error::Empty("interaction log"));
    }
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut dropped: HashSet<&str> = HashSet::new();
    for e in log.events() {
        if embeddings.ids().contains(&e.item) {
            users.insert(&e.user);
            items.insert(&e.item);
        } else {
            dropped.insert(&e.item);
        }
    }
    if items.is_empty() {
        return Err(Error::EmptyIntersection {
            log_items: dropped.len(),
            embedding_items: embeddings.n_items(),
        });
    }
    if !dropped.is_empty() {
        warn!(
            "{} of {} log items have no embedding and were dropped",
            dropped.len(),
            dropped.len() + items.len()
        );
    }
    Ok(IdMapping {
        users,
        items,
        dropped_items: dropped.len(),
    })
}

/// Distinct training items per user, as sorted internal item indices.
/// Users without training events are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeenSets {
    sets: BTreeMap<u32, Vec<u32>>,
}

impl SeenSets {
    pub fn from_indexed(events: &[IndexedEvent]) -> Self {
        let mut sets: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for e in events {
            sets.entry(e.user).or_default().push(e.item);
        }
        for items in sets.values_mut() {
            items.sort_unstable();
            items.dedup();
        }
        SeenSets { sets }
    }

    pub fn get(&self, user: u32) -> &[u32] {
        self.sets.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.get(user).binary_search(&item).is_ok()
    }

    pub fn has_user(&self, user: u32) -> bool {
        self.sets.contains_key(&user)
    }

    pub fn users(&self) -> impl Iterator<Item = u32> + '_ {
        self.sets.keys().copied()
    }

    pub fn n_users(&self) -> usize {
        self.sets.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[u32])> {
        self.sets.iter().map(|(&u, v)| (u, v.as_slice()))
    }
}

/// Builds seen sets from externally-keyed training events.
pub fn build_seen_sets(train: &[Event], users: &IdMap, items: &IdMap) -> Result<SeenSets> {
    let indexed = train
        .iter()
        .map(|e| {
            Ok(IndexedEvent {
                user: users.index_of(&e.user)?,
                item: items.index_of(&e.item)?,
                timestamp: e.timestamp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeenSets::from_indexed(&indexed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(rows: &[(&str, &str, i64)]) -> InteractionLog {
        InteractionLog::new(rows.iter().map(|&(u, i, t)| Event::new(u, i, t)).collect()).unwrap()
    }

    fn table(ids: &[&str], dim: usize) -> EmbeddingTable {
        let m = (0..ids.len() * dim).map(|v| v as f32).collect();
        EmbeddingTable::new(ids, m, dim).unwrap()
    }

    #[test]
    fn canonical_order() {
        let l = log(&[("b", "x", 5), ("a", "y", 9), ("a", "x", 9), ("a", "z", 1)]);
        let order: Vec<_> = l.events().iter().map(|e| (&*e.user, &*e.item, e.timestamp)).collect();
        assert_eq!(order, vec![("a", "z", 1), ("a", "x", 9), ("a", "y", 9), ("b", "x", 5)]);
    }

    #[test]
    fn negative_timestamp_rejected() {
        assert!(InteractionLog::new(vec![Event::new("a", "x", -1)]).is_err());
    }

    #[test]
    fn full_overlap() {
        let l = log(&[("a", "x", 1), ("b", "y", 2), ("a", "y", 3)]);
        let m = build_id_maps(&l, &table(&["x", "y", "z"], 2)).unwrap();
        assert_eq!(m.users.len(), 2);
        assert_eq!(m.items.len(), 2);
        assert_eq!(m.dropped_items, 0);
    }

    #[test]
    fn missing_embedding_dropped() {
        let l = log(&[("a", "x", 1), ("a", "q", 2)]);
        let m = build_id_maps(&l, &table(&["x"], 2)).unwrap();
        assert_eq!(m.items.len(), 1);
        assert_eq!(m.dropped_items, 1);
        assert!(!m.items.contains("q"));
    }

    #[test]
    fn empty_intersection_is_fatal() {
        let l = log(&[("a", "q", 1)]);
        let err = build_id_maps(&l, &table(&["x", "y"], 2)).unwrap_err();
        assert!(matches!(err, Error::EmptyIntersection { log_items: 1, embedding_items: 2 }));
    }

    #[test]
    fn first_appearance_order() {
        let l = log(&[("b", "y", 1), ("a", "z", 1), ("a", "x", 2)]);
        let m = build_id_maps(&l, &table(&["x", "y", "z"], 1)).unwrap();
        // canonical order is a:z, a:x, b:y
        assert_eq!(m.users.ids().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(m.items.ids().collect::<Vec<_>>(), vec!["z", "x", "y"]);
    }

    #[test]
    fn seen_sets_collapse_duplicates() {
        let l = log(&[("u", "x", 1), ("u", "x", 2), ("u", "y", 3)]);
        let users = IdMap::from_first_appearance(["u"].iter());
        let items = IdMap::from_first_appearance(["x", "y"].iter());
        let s = build_seen_sets(l.events(), &users, &items).unwrap();
        assert_eq!(s.get(0), &[0, 1]);
    }

    #[test]
    fn seen_sets_skip_users_without_events() {
        let users = IdMap::from_first_appearance(["u", "v"].iter());
        let items = IdMap::from_first_appearance(["x"].iter());
        let s = build_seen_sets(&[Event::new("u", "x", 0)], &users, &items).unwrap();
        assert!(s.has_user(0));
        assert!(!s.has_user(1));
    }

    #[test]
    fn seen_sets_unknown_id() {
        let users = IdMap::from_first_appearance(["u"].iter());
        let items = IdMap::from_first_appearance(["x"].iter());
        let err = build_seen_sets(&[Event::new("u", "nope", 0)], &users, &items).unwrap_err();
        assert!(matches!(err, Error::UnknownId(ref id) if id == "nope"));
    }

    #[test]
    fn seen_sets_match_brute_force() {
        let rows = [
            ("a", "x", 1), ("b", "y", 1), ("c", "z", 2), ("a", "y", 3),
            ("b", "y", 4), ("c", "x", 5), ("a", "x", 6), ("c", "w", 7),
        ];
        let l = log(&rows);
        let users = IdMap::from_first_appearance(l.events().iter().map(|e| &*e.user));
        let items = IdMap::from_first_appearance(l.events().iter().map(|e| &*e.item));
        let s = build_seen_sets(l.events(), &users, &items).unwrap();
        for u in ["a", "b", "c"] {
            let mut expect: Vec<u32> = rows
                .iter()
                .filter(|r| r.0 == u)
                .map(|r| items.get(r.1).unwrap())
                .collect();
            expect.sort();
            expect.dedup();
            assert_eq!(s.get(users.get(u).unwrap()), expect.as_slice(), "user {u}");
        }
    }

    #[test]
    fn embedding_rejects_nan_row() {
        let err = EmbeddingTable::new(&["a", "b"], vec![0.0, 1.0, f32::NAN, 0.0], 2).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, .. }));
    }

    #[test]
    fn reindex_follows_map() {
        let t = table(&["x", "y", "z"], 2);
        let items = IdMap::from_first_appearance(["z", "x"].iter());
        let r = t.reindex(&items).unwrap();
        assert_eq!(r.row(0), t.row_by_id("z").unwrap());
        assert_eq!(r.row(1), t.row_by_id("x").unwrap());
    }
}
