//! Interaction data: ingestion, k-core filtering, per-user splits and negative sampling.

mod io;
mod kcore;
pub mod planted;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use io::{load_interactions, read_interaction_lists, read_splits, write_interaction_lists};
pub use kcore::filter_k_core;

/// Which part of a user's history an interaction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn suffix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Bijection between raw string ids and dense ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    dense: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dense id for `raw`, allocating the next one if unseen.
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&id) = self.dense.get(raw) {
            return id;
        }
        let id = self.raw.len();
        self.raw.push(raw.to_owned());
        self.dense.insert(raw.to_owned(), id);
        id
    }

    pub fn dense(&self, raw: &str) -> Option<usize> {
        self.dense.get(raw).copied()
    }

    pub fn raw(&self, dense: usize) -> Option<&str> {
        self.raw.get(dense).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Identity map over `0..n`, used when ids are already dense.
    pub fn identity(n: usize) -> Self {
        let mut map = Self::new();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }

    /// Keep only the dense ids for which `keep` is true, renumbering densely
    /// in ascending order of the old ids. Returns the new map and the old→new table.
    fn retain(&self, keep: &[bool]) -> (IdMap, Vec<Option<usize>>) {
        let mut map = IdMap::new();
        let mut remap = vec![None; self.raw.len()];
        for (old, raw) in self.raw.iter().enumerate() {
            if keep[old] {
                remap[old] = Some(map.intern(raw));
            }
        }
        (map, remap)
    }
}

/// Implicit-feedback interactions with optional per-user train/valid/test labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_items: usize,
    interactions: Vec<Vec<usize>>,
    labels: Option<Vec<Vec<Split>>>,
    users: IdMap,
    items: IdMap,
}

impl InteractionDataset {
    /// Build from raw id pairs. Duplicate pairs collapse into one interaction.
    pub fn from_raw_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        let mut interactions: Vec<Vec<usize>> = Vec::new();
        let mut seen: Vec<std::collections::HashSet<usize>> = Vec::new();
        for (u, i) in pairs {
            let u = users.intern(u);
            let i = items.intern(i);
            if u == interactions.len() {
                interactions.push(Vec::new());
                seen.push(Default::default());
            }
            if seen[u].insert(i) {
                interactions[u].push(i);
            }
        }
        if interactions.is_empty() {
            return Err(Error::EmptyDataset("no interactions".into()));
        }
        Ok(Self {
            num_items: items.len(),
            interactions,
            labels: None,
            users,
            items,
        })
    }

    /// Build from per-user lists of dense item ids.
    pub fn from_lists(num_items: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        let mut interactions = Vec::with_capacity(lists.len());
        for (u, list) in lists.into_iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::with_capacity(list.len());
            for i in list {
                if i >= num_items {
                    return Err(Error::InvalidArgument(format!(
                        "user {u} references item {i} but there are {num_items} items"
                    )));
                }
                if seen.insert(i) {
                    out.push(i);
                }
            }
            interactions.push(out);
        }
        if interactions.iter().all(Vec::is_empty) {
            return Err(Error::EmptyDataset("no interactions".into()));
        }
        Ok(Self {
            num_items,
            users: IdMap::identity(interactions.len()),
            items: IdMap::identity(num_items),
            interactions,
            labels: None,
        })
    }

    pub(crate) fn from_parts(
        num_items: usize,
        interactions: Vec<Vec<usize>>,
        labels: Option<Vec<Vec<Split>>>,
        users: IdMap,
        items: IdMap,
    ) -> Self {
        Self {
            num_items,
            interactions,
            labels,
            users,
            items,
        }
    }

    pub fn num_users(&self) -> usize {
        self.interactions.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_interactions(&self) -> usize {
        self.interactions.iter().map(Vec::len).sum()
    }

    /// `1 - interactions / (users * items)`.
    pub fn sparsity(&self) -> f64 {
        let cells = self.num_users() as f64 * self.num_items as f64;
        if cells == 0.0 {
            return 1.0;
        }
        1.0 - self.num_interactions() as f64 / cells
    }

    /// All items of user `u`, in insertion order.
    pub fn items_of(&self, u: usize) -> &[usize] {
        &self.interactions[u]
    }

    pub fn interactions(&self) -> &[Vec<usize>] {
        &self.interactions
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.users
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.items
    }

    pub fn is_split(&self) -> bool {
        self.labels.is_some()
    }

    pub fn labels_of(&self, u: usize) -> Option<&[Split]> {
        self.labels.as_ref().map(|l| l[u].as_slice())
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for list in &self.interactions {
            for &i in list {
                deg[i] += 1;
            }
        }
        deg
    }

    /// Items of `u` carrying `label`. Empty when the dataset is unsplit.
    pub fn items_in(&self, u: usize, label: Split) -> Vec<usize> {
        match &self.labels {
            None => Vec::new(),
            Some(labels) => self.interactions[u]
                .iter()
                .zip(&labels[u])
                .filter(|(_, l)| **l == label)
                .map(|(i, _)| *i)
                .collect(),
        }
    }

    /// Per-user lists for each split.
    pub fn split_lists(&self) -> Result<SplitLists> {
        if self.labels.is_none() {
            return Err(Error::InvalidArgument("dataset has not been split".into()));
        }
        let collect = |label| {
            (0..self.num_users())
                .map(|u| self.items_in(u, label))
                .collect::<Vec<_>>()
        };
        Ok(SplitLists {
            num_items: self.num_items,
            train: collect(Split::Train),
            valid: collect(Split::Valid),
            test: collect(Split::Test),
        })
    }

    /// Shuffle each user's interactions with a seeded generator and assign
    /// them to train/valid/test. Valid and test each get `floor(0.1 n)`
    /// (at least one), the remainder goes to train.
    pub fn split(&self, seed: u64) -> Result<Self> {
        let mut rng = crate::rng::stream(seed, "split");
        let mut interactions = Vec::with_capacity(self.num_users());
        let mut labels = Vec::with_capacity(self.num_users());
        for (u, list) in self.interactions.iter().enumerate() {
            let n = list.len();
            if n < 3 {
                return Err(Error::Split { user: u, count: n });
            }
            let (n_train, n_valid, _) = split_sizes(n);
            let mut shuffled = list.clone();
            shuffled.shuffle(&mut rng);
            let l = (0..n)
                .map(|pos| {
                    if pos < n_train {
                        Split::Train
                    } else if pos < n_train + n_valid {
                        Split::Valid
                    } else {
                        Split::Test
                    }
                })
                .collect();
            interactions.push(shuffled);
            labels.push(l);
        }
        Ok(Self {
            num_items: self.num_items,
            interactions,
            labels: Some(labels),
            users: self.users.clone(),
            items: self.items.clone(),
        })
    }

    /// Draw an item `u` has not interacted with in any split.
    pub fn sample_negative(&self, u: usize, rng: &mut Rng) -> Result<usize> {
        let mut consumed = self.interactions[u].clone();
        consumed.sort_unstable();
        sample_negative(&consumed, self.num_items, rng).ok_or(Error::Exhausted { user: u })
    }
}

/// `(train, valid, test)` sizes for a user with `n >= 3` interactions.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = (n / 10).max(1);
    (n - 2 * tenth, tenth, tenth)
}

/// Uniform draw from `0..num_items` minus `consumed` (sorted ascending).
/// `None` when every item is consumed.
pub fn sample_negative(consumed: &[usize], num_items: usize, rng: &mut Rng) -> Option<usize> {
    debug_assert!(consumed.windows(2).all(|w| w[0] < w[1]));
    let free = num_items.checked_sub(consumed.len())?;
    if free == 0 {
        return None;
    }
    if consumed.len() * 2 <= num_items {
        loop {
            let j = rng.random_range(0..num_items);
            if consumed.binary_search(&j).is_err() {
                return Some(j);
            }
        }
    }
    // Dense user: pick the r-th free item directly.
    let mut r = rng.random_range(0..free);
    let mut next = 0;
    for &c in consumed.iter().chain(std::iter::once(&num_items)) {
        let gap = c - next;
        if r < gap {
            return Some(next + r);
        }
        r -= gap;
        next = c + 1;
    }
    None
}

/// Per-user item lists for each split over a shared catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLists {
    pub num_items: usize,
    pub train: Vec<Vec<usize>>,
    pub valid: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl SplitLists {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    /// Same valid/test, different training lists (e.g. a synthetic release).
    pub fn with_train(&self, train: Vec<Vec<usize>>) -> Result<Self> {
        if train.len() != self.train.len() {
            return Err(Error::Shape(format!(
                "replacement train lists cover {} users, expected {}",
                train.len(),
                self.train.len()
            )));
        }
        Ok(Self {
            num_items: self.num_items,
            train,
            valid: self.valid.clone(),
            test: self.test.clone(),
        })
    }

    /// All items of `u` across splits, sorted.
    pub fn all_items(&self, u: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.train[u]
            .iter()
            .chain(&self.valid[u])
            .chain(&self.test[u])
            .copied()
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}
