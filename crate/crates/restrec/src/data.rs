//! Dataset loading, leakage-free splitting, and evaluation negatives.
//!
//! Interaction logs are TSV: `user<TAB>item<TAB>rating[<TAB>timestamp]`,
//! social networks are TSV: `user<TAB>user` per undirected edge. Original ids
//! are arbitrary strings; everything downstream works on dense indices and the
//! original<->dense maps are kept for export.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// One logged (or synthesized) user-item event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: u32,
    pub item: u32,
    /// Rating level within the dataset's declared range (implicit: always 1).
    pub rating: u8,
    /// Exposure flag; records loaded from logs are always exposed.
    pub exposed: bool,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackKind {
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsvFormat {
    TsvExplicit,
    TsvImplicit,
}

/// Interactions plus the social graph over the same dense user id space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub interactions: Vec<InteractionRecord>,
    /// Symmetric closure: if (a,b) is present, (b,a) is present too.
    pub social_edges: Vec<(u32, u32)>,
    pub num_users: u32,
    pub num_items: u32,
    pub feedback: FeedbackKind,
    pub rating_levels: u8,
}

impl Dataset {
    /// Panics in debug builds if the documented invariants do not hold.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.interactions.len());
        for rec in &self.interactions {
            if rec.user >= self.num_users || rec.item >= self.num_items {
                return Err(Error::Validation(format!(
                    "interaction ({}, {}) outside id space {}x{}",
                    rec.user, rec.item, self.num_users, self.num_items
                )));
            }
            if rec.rating == 0 || rec.rating > self.rating_levels {
                return Err(Error::Validation(format!(
                    "rating {} outside 1..={}",
                    rec.rating, self.rating_levels
                )));
            }
            if !seen.insert((rec.user, rec.item)) {
                return Err(Error::Validation(format!(
                    "duplicate (user,item) pair ({}, {})",
                    rec.user, rec.item
                )));
            }
        }
        let edge_set: HashSet<(u32, u32)> = self.social_edges.iter().copied().collect();
        for &(a, b) in &self.social_edges {
            if a >= self.num_users || b >= self.num_users {
                return Err(Error::Validation(format!(
                    "social edge ({a}, {b}) outside user space"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("self-loop on user {a}")));
            }
            if !edge_set.contains(&(b, a)) {
                return Err(Error::Validation(format!(
                    "social edge ({a}, {b}) stored without its mirror"
                )));
            }
        }
        Ok(())
    }
}

/// Original-id <-> dense-index maps, persisted alongside every prepared run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IdMaps {
    /// Dense index -> original id.
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IdMaps {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Split fractions; must be strictly positive and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| *f <= 0.0) {
            return Err(Error::Validation(
                "split fractions must be strictly positive".into(),
            ));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Result of `split_dataset`, with bookkeeping needed for reproduction.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// (train, val, test) sizes after the shuffle partition but before the
    /// move-to-train repair.
    pub sizes_before_repair: (usize, usize, usize),
    /// How many val/test records were moved to train by the repair.
    pub moved_to_train: usize,
    /// Indices into the source dataset's interaction list, per split.
    pub manifest: SplitManifest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# split manifest seed={}\n", self.seed));
        for (name, idxs) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for i in idxs {
                out.push_str(&format!("{name}\t{i}\n"));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display(), e))
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
    Ok(BufReader::new(file).lines().enumerate())
}

/// Load an interaction TSV plus an optional social TSV into a dense-indexed
/// [`Dataset`]. Duplicate (user,item) rows keep the record with the latest
/// timestamp (last occurrence when timestamps are absent or tied). Social
/// edges whose endpoints never appear in the interaction log are dropped; the
/// count of dropped edges is returned in the report.
pub fn load_dataset(
    ratings_path: &Path,
    social_path: Option<&Path>,
    format: TsvFormat,
) -> Result<(Dataset, IdMaps, LoadReport)> {
    let rating_levels: u8 = match format {
        TsvFormat::TsvExplicit => 5,
        TsvFormat::TsvImplicit => 1,
    };
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    // (user,item) -> position in `records`
    let mut by_pair: HashMap<(u32, u32), usize> = HashMap::new();
    let mut records: Vec<InteractionRecord> = Vec::new();
    let mut duplicates = 0usize;

    let path_str = ratings_path.display().to_string();
    for (lineno, line) in open_lines(ratings_path)? {
        let line = line.map_err(|e| Error::io(&*path_str, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |msg: String| Error::Parse {
            path: path_str.clone(),
            line: lineno + 1,
            msg,
        };
        if fields.len() < 3 || fields.len() > 4 {
            return Err(parse_err(format!(
                "expected 3 or 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let rating: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("rating `{}` is not an integer", fields[2])))?;
        if rating < 1 || rating > rating_levels as i64 {
            return Err(Error::Validation(format!(
                "{}:{}: rating {} outside declared range 1..={}",
                path_str,
                lineno + 1,
                rating,
                rating_levels
            )));
        }
        let timestamp = if fields.len() == 4 {
            Some(
                fields[3]
                    .trim()
                    .parse::<i64>()
                    .map_err(|_| parse_err(format!("timestamp `{}` is not an integer", fields[3])))?,
            )
        } else {
            None
        };
        let uid = *user_index.entry(fields[0].to_string()).or_insert_with(|| {
            users.push(fields[0].to_string());
            (users.len() - 1) as u32
        });
        let iid = *item_index.entry(fields[1].to_string()).or_insert_with(|| {
            items.push(fields[1].to_string());
            (items.len() - 1) as u32
        });
        let rec = InteractionRecord {
            user: uid,
            item: iid,
            rating: rating as u8,
            exposed: true,
            timestamp,
        };
        match by_pair.get(&(uid, iid)) {
            Some(&pos) => {
                duplicates += 1;
                // Keep the most recent record; last occurrence wins ties.
                if rec.timestamp.unwrap_or(i64::MAX) >= records[pos].timestamp.unwrap_or(i64::MIN) {
                    records[pos] = rec;
                }
            }
            None => {
                by_pair.insert((uid, iid), records.len());
                records.push(rec);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Validation(format!(
            "{path_str}: no interaction records"
        )));
    }

    let mut social_edges = Vec::new();
    let mut dropped_social = 0usize;
    if let Some(social) = social_path {
        let spath = social.display().to_string();
        let mut edge_set: HashSet<(u32, u32)> = HashSet::new();
        for (lineno, line) in open_lines(social)? {
            let line = line.map_err(|e| Error::io(&*spath, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    path: spath.clone(),
                    line: lineno + 1,
                    msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            match (user_index.get(fields[0]), user_index.get(fields[1])) {
                (Some(&a), Some(&b)) if a != b => {
                    if edge_set.insert((a, b)) {
                        edge_set.insert((b, a));
                    }
                }
                _ => dropped_social += 1,
            }
        }
        social_edges = edge_set.into_iter().collect();
        social_edges.sort_unstable();
    }

    let ds = Dataset {
        interactions: records,
        social_edges,
        num_users: users.len() as u32,
        num_items: items.len() as u32,
        feedback: match format {
            TsvFormat::TsvExplicit => FeedbackKind::Explicit,
            TsvFormat::TsvImplicit => FeedbackKind::Implicit,
        },
        rating_levels,
    };
    let report = LoadReport {
        duplicates_resolved: duplicates,
        social_edges_dropped: dropped_social,
    };
    Ok((ds, IdMaps { users, items }, report))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadReport {
    pub duplicates_resolved: usize,
    pub social_edges_dropped: usize,
}

/// Partition interactions by a seeded uniform shuffle at the target fractions,
/// then move any val/test record whose user or item is unseen in train into
/// train so evaluation never meets new users or items. Social edges are copied
/// to all three splits unchanged.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    let n = ds.interactions.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let n_train = ((n as f64) * spec.train_fraction).round() as usize;
    let n_val = ((n as f64) * spec.val_fraction).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    if n_train == 0 {
        return Err(Error::Validation(
            "split fractions leave the train set empty".into(),
        ));
    }
    let (train_idx, rest) = order.split_at(n_train);
    let (val_idx, test_idx) = rest.split_at(n_val);
    let sizes_before_repair = (train_idx.len(), val_idx.len(), test_idx.len());

    let mut train_users: HashSet<u32> = HashSet::new();
    let mut train_items: HashSet<u32> = HashSet::new();
    for &i in train_idx {
        train_users.insert(ds.interactions[i].user);
        train_items.insert(ds.interactions[i].item);
    }

    let mut train: Vec<usize> = train_idx.to_vec();
    let mut moved = 0usize;
    let keep = |idxs: &[usize], train: &mut Vec<usize>, moved: &mut usize| -> Vec<usize> {
        let mut kept = Vec::with_capacity(idxs.len());
        for &i in idxs {
            let rec = &ds.interactions[i];
            if train_users.contains(&rec.user) && train_items.contains(&rec.item) {
                kept.push(i);
            } else {
                train.push(i);
                *moved += 1;
            }
        }
        kept
    };
    let val = keep(val_idx, &mut train, &mut moved);
    let test = keep(test_idx, &mut train, &mut moved);

    let mut train_sorted = train.clone();
    let mut val_sorted = val.clone();
    let mut test_sorted = test.clone();
    train_sorted.sort_unstable();
    val_sorted.sort_unstable();
    test_sorted.sort_unstable();

    let mk = |idxs: &[usize]| Dataset {
        interactions: idxs.iter().map(|&i| ds.interactions[i]).collect(),
        social_edges: ds.social_edges.clone(),
        num_users: ds.num_users,
        num_items: ds.num_items,
        feedback: ds.feedback,
        rating_levels: ds.rating_levels,
    };
    Ok(SplitResult {
        train: mk(&train_sorted),
        val: mk(&val_sorted),
        test: mk(&test_sorted),
        sizes_before_repair,
        moved_to_train: moved,
        manifest: SplitManifest {
            seed: spec.seed,
            train: train_sorted,
            val: val_sorted,
            test: test_sorted,
        },
    })
}

/// Candidate lists for leave-out ranking evaluation: for each eval record, the
/// positive plus `n_neg` items the user has not interacted with in either
/// provided split, shuffled. Records whose user has interacted with every item
/// are skipped; the skip count is returned.
pub struct EvalNegatives {
    /// Index into `ds_eval.interactions` -> shuffled candidate item list.
    pub candidates: HashMap<usize, Vec<u32>>,
    pub skipped: usize,
}

pub fn sample_eval_negatives(
    ds_train: &Dataset,
    ds_eval: &Dataset,
    n_neg: usize,
    seed: u64,
) -> Result<EvalNegatives> {
    if ds_eval.feedback != FeedbackKind::Implicit {
        return Err(Error::Precondition(
            "eval negatives are only defined for implicit feedback".into(),
        ));
    }
    let num_items = ds_train.num_items.max(ds_eval.num_items);
    let mut history: HashMap<u32, HashSet<u32>> = HashMap::new();
    for rec in ds_train.interactions.iter().chain(&ds_eval.interactions) {
        history.entry(rec.user).or_default().insert(rec.item);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = HashMap::new();
    let mut skipped = 0usize;
    for (idx, rec) in ds_eval.interactions.iter().enumerate() {
        let seen = &history[&rec.user];
        let free = num_items as usize - seen.len();
        if free == 0 {
            skipped += 1;
            continue;
        }
        let mut negs: Vec<u32> = Vec::with_capacity(n_neg);
        if free <= n_neg {
            // User has almost full coverage: enumerate the complement.
            negs.extend((0..num_items).filter(|i| !seen.contains(i)));
        } else {
            let mut chosen = HashSet::with_capacity(n_neg);
            while negs.len() < n_neg {
                let cand = rng.random_range(0..num_items);
                if !seen.contains(&cand) && chosen.insert(cand) {
                    negs.push(cand);
                }
            }
        }
        negs.push(rec.item);
        negs.shuffle(&mut rng);
        candidates.insert(idx, negs);
    }
    Ok(EvalNegatives { candidates, skipped })
}

/// Write a dataset back out in the interaction/social TSV formats, using the
/// provided id maps (or dense indices when maps are absent).
pub fn write_dataset_tsv(
    ds: &Dataset,
    maps: Option<&IdMaps>,
    ratings_path: &Path,
    social_path: &Path,
) -> Result<()> {
    let user_name = |u: u32| match maps {
        Some(m) => m.users[u as usize].clone(),
        None => u.to_string(),
    };
    let item_name = |i: u32| match maps {
        Some(m) => m.items[i as usize].clone(),
        None => i.to_string(),
    };
    let mut f =
        std::fs::File::create(ratings_path).map_err(|e| Error::io(ratings_path.display(), e))?;
    for rec in &ds.interactions {
        match rec.timestamp {
            Some(ts) => writeln!(
                f,
                "{}\t{}\t{}\t{}",
                user_name(rec.user),
                item_name(rec.item),
                rec.rating,
                ts
            ),
            None => writeln!(
                f,
                "{}\t{}\t{}",
                user_name(rec.user),
                item_name(rec.item),
                rec.rating
            ),
        }
        .map_err(|e| Error::io(ratings_path.display(), e))?;
    }
    let mut f =
        std::fs::File::create(social_path).map_err(|e| Error::io(social_path.display(), e))?;
    for &(a, b) in &ds.social_edges {
        if a < b {
            writeln!(f, "{}\t{}", user_name(a), user_name(b))
                .map_err(|e| Error::io(social_path.display(), e))?;
        }
    }
    Ok(())
}
