//! Bipartite/social adjacency and the counterfactual (unexposed) sample pool.
//!
//! The pool construction follows the surrogate-unexposed-set recipe: items a
//! user never accessed but at least `beta` of their social neighbors did, with
//! the rating filled in by neighbor majority vote.


use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FeedbackKind};
use crate::error::Error;
use crate::Result;

/// Immutable adjacency over the train split: per-user accessed items with
/// ratings (C(u)) and 1st-order social neighbors (N(u)).
#[derive(Debug, Clone)]
pub struct GraphStore {
    items_of: Vec<Vec<(u32, u8)>>,
    neighbors_of: Vec<Vec<u32>>,
    num_items: u32,
    feedback: FeedbackKind,
}

impl GraphStore {
    pub fn build(train: &Dataset) -> Self {
        let n = train.num_users as usize;
        let mut items_of: Vec<Vec<(u32, u8)>> = vec![Vec::new(); n];
        for rec in &train.interactions {
            items_of[rec.user as usize].push((rec.item, rec.rating));
        }
        for list in &mut items_of {
            list.sort_unstable();
            list.dedup_by_key(|(item, _)| *item);
        }
        let mut neighbors_of: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(a, b) in &train.social_edges {
            if a != b {
                neighbors_of[a as usize].push(b);
            }
        }
        for list in &mut neighbors_of {
            list.sort_unstable();
            list.dedup();
        }
        GraphStore {
            items_of,
            neighbors_of,
            num_items: train.num_items,
            feedback: train.feedback,
        }
    }

    pub fn num_users(&self) -> u32 {
        self.items_of.len() as u32
    }

    pub fn num_items(&self) -> u32 {
        self.num_items
    }

    /// C(u): accessed items with rating levels, sorted by item id.
    pub fn items_of(&self, user: u32) -> &[(u32, u8)] {
        &self.items_of[user as usize]
    }

    /// N(u): 1st-order social neighbors, sorted.
    pub fn neighbors_of(&self, user: u32) -> &[u32] {
        &self.neighbors_of[user as usize]
    }

    /// Whether (user, item) is in the exposed train set.
    pub fn is_exposed(&self, user: u32, item: u32) -> bool {
        self.items_of[user as usize]
            .binary_search_by_key(&item, |&(i, _)| i)
            .is_ok()
    }

    /// Rating a user gave an item in train, if any.
    pub fn rating_of(&self, user: u32, item: u32) -> Option<u8> {
        self.items_of[user as usize]
            .binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|pos| self.items_of[user as usize][pos].1)
    }
}

/// A surrogate unexposed sample: the user never accessed the item, but at
/// least beta of their neighbors did. `exposed` is always false.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterfactualSample {
    pub user: u32,
    pub item: u32,
    pub voted_rating: u8,
    pub exposed: bool,
}

/// Items not in C(u) that at least `beta` of u's neighbors accessed.
pub fn beta_frequency_set(g: &GraphStore, user: u32, beta: u32) -> Vec<u32> {
    let mut counts: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    for &nb in g.neighbors_of(user) {
        for &(item, _) in g.items_of(nb) {
            *counts.entry(item).or_insert(0) += 1;
        }
    }
    let mut out: Vec<u32> = counts
        .into_iter()
        .filter(|&(item, c)| c >= beta && !g.is_exposed(user, item))
        .map(|(item, _)| item)
        .collect();
    out.sort_unstable();
    out
}

/// Modal rating level among u's neighbors who rated v; ties break toward the
/// larger rating value.
pub fn vote_rating(g: &GraphStore, user: u32, item: u32) -> Result<u8> {
    let mut counts = [0u32; 256];
    let mut any = false;
    for &nb in g.neighbors_of(user) {
        if let Some(r) = g.rating_of(nb, item) {
            counts[r as usize] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::Precondition(format!(
            "no neighbor of user {user} rated item {item}"
        )));
    }
    let mut best = 0usize;
    for (level, &c) in counts.iter().enumerate() {
        if c > 0 && c >= counts[best] {
            best = level; // >= keeps the larger level on ties
        }
    }
    Ok(best as u8)
}

/// Up to `cap_per_user` unexposed samples per user, drawn seeded from the
/// beta-frequency set with voted ratings. A cap of `None` uses |C(u)| so the
/// exposed and unexposed sides stay balanced per user. Implicit datasets get
/// voted_rating = 1.
pub fn build_counterfactual_pool(
    g: &GraphStore,
    beta: u32,
    cap_per_user: Option<usize>,
    seed: u64,
) -> Vec<CounterfactualSample> {
    let mut pool = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for user in 0..g.num_users() {
        let mut freq = beta_frequency_set(g, user, beta);
        if freq.is_empty() {
            continue;
        }
        let cap = cap_per_user.unwrap_or_else(|| g.items_of(user).len());
        if freq.len() > cap {
            freq.shuffle(&mut rng);
            freq.truncate(cap);
            freq.sort_unstable();
        }
        for item in freq {
            let voted_rating = match g.feedback {
                FeedbackKind::Implicit => 1,
                FeedbackKind::Explicit => {
                    vote_rating(g, user, item).expect("beta >= 1 guarantees at least one rater")
                }
            };
            pool.push(CounterfactualSample {
                user,
                item,
                voted_rating,
                exposed: false,
            });
        }
    }
    pool
}

/// TSV export: `user<TAB>item<TAB>voted_rating<TAB>0`.
pub fn write_pool_tsv(pool: &[CounterfactualSample], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
    for s in pool {
        writeln!(f, "{}\t{}\t{}\t0", s.user, s.item, s.voted_rating)
            .map_err(|e| Error::io(path.display(), e))?;
    }
    Ok(())
}
