//! Discrete structural causal model over (G, u, s, v, e, r): exact
//! enumeration oracles for the forced-exposure identification identity, a
//! selection-bias meter, and an exposure-biased synthetic dataset generator
//! with known ground-truth strategies.
//!
//! The causal factorization is
//! P(G) P(u|G) P(s) P(v) P(e|u,v,s) P(r|u,v,s,e),
//! with G uniform over its domain. Only e=1 tuples enter generated logs.

#![allow(clippy::needless_range_loop)] // index loops mirror the tensor math

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeedbackKind, InteractionRecord};
use crate::error::Error;
use crate::Result;

fn default_num_users() -> u32 {
    400
}
fn default_num_items() -> u32 {
    120
}
fn default_num_samples() -> usize {
    20_000
}
fn default_num_segments() -> usize {
    8
}
fn default_social_degree() -> usize {
    10
}
fn default_same_class_affinity() -> f64 {
    0.8
}

/// Domains and conditional tables of the discrete SCM, plus the generation
/// knobs (sample counts, regime segmentation, social-graph parameters).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmSpec {
    pub g_card: usize,
    pub u_card: usize,
    pub s_card: usize,
    pub v_card: usize,
    pub r_levels: usize,
    /// `p_u_given_g[g][u]`
    pub p_u_given_g: Vec<Vec<f64>>,
    /// `p_s[s]`
    pub p_s: Vec<f64>,
    /// `p_v[v]`
    pub p_v: Vec<f64>,
    /// `p_e1_given_uvs[u][v][s]` = P(e=1 | u, v, s)
    pub p_e1_given_uvs: Vec<Vec<Vec<f64>>>,
    /// `p_r_given_uvse[u][v][s][e][r]`
    pub p_r_given_uvse: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    pub seed: u64,
    #[serde(default = "default_num_users")]
    pub num_users: u32,
    #[serde(default = "default_num_items")]
    pub num_items: u32,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    /// Number of equal-length strategy regimes along the sampled timeline.
    #[serde(default = "default_num_segments")]
    pub num_segments: usize,
    /// Target social degree per user in the generated graph.
    #[serde(default = "default_social_degree")]
    pub social_degree: usize,
    /// Probability that a sampled social neighbor shares the user's u-class.
    #[serde(default = "default_same_class_affinity")]
    pub same_class_affinity: f64,
    /// Width of each user's activity window in segments (wrapping); 0 keeps
    /// every user active over the whole timeline. Narrow windows give user
    /// histories a regime signature, as real seasonal logs have.
    #[serde(default)]
    pub user_activity_segments: usize,
}

impl ScmSpec {
    pub fn load(path: &Path) -> Result<ScmSpec> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
        let spec: ScmSpec = serde_json::from_reader(std::io::BufReader::new(file))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check_row = |row: &[f64], what: &str| -> Result<()> {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Validation(format!("{what}: probability outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("{what}: row sums to {sum}, expected 1")));
            }
            Ok(())
        };
        if self.p_u_given_g.len() != self.g_card {
            return Err(Error::Validation("p_u_given_g has wrong G arity".into()));
        }
        for (g, row) in self.p_u_given_g.iter().enumerate() {
            if row.len() != self.u_card {
                return Err(Error::Validation(format!("p_u_given_g[{g}] has wrong u arity")));
            }
            check_row(row, &format!("p_u_given_g[{g}]"))?;
        }
        if self.p_s.len() != self.s_card {
            return Err(Error::Validation("p_s has wrong arity".into()));
        }
        check_row(&self.p_s, "p_s")?;
        if self.p_v.len() != self.v_card {
            return Err(Error::Validation("p_v has wrong arity".into()));
        }
        check_row(&self.p_v, "p_v")?;
        for u in 0..self.u_card {
            for v in 0..self.v_card {
                for s in 0..self.s_card {
                    let p = self
                        .p_e1_given_uvs
                        .get(u)
                        .and_then(|x| x.get(v))
                        .and_then(|x| x.get(s))
                        .copied()
                        .ok_or_else(|| Error::Validation("p_e1_given_uvs too small".into()))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Validation(format!(
                            "p_e1_given_uvs[{u}][{v}][{s}] = {p} outside [0,1]"
                        )));
                    }
                    for e in 0..2 {
                        let row = self
                            .p_r_given_uvse
                            .get(u)
                            .and_then(|x| x.get(v))
                            .and_then(|x| x.get(s))
                            .and_then(|x| x.get(e))
                            .ok_or_else(|| Error::Validation("p_r_given_uvse too small".into()))?;
                        if row.len() != self.r_levels {
                            return Err(Error::Validation("rating row has wrong arity".into()));
                        }
                        check_row(row, &format!("p_r_given_uvse[{u}][{v}][{s}][{e}]"))?;
                    }
                }
            }
        }
        if self.num_segments == 0 || self.num_samples == 0 {
            return Err(Error::Validation("num_segments/num_samples must be positive".into()));
        }
        Ok(())
    }

    fn p_g(&self) -> f64 {
        1.0 / self.g_card as f64
    }
}

/// Both routes to the forced-exposure rating distribution for one (G, v)
/// cell, plus any (u, s) cells excluded for zero observational mass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionalResult {
    /// Mutilated-graph enumeration with e forced to 1.
    pub mutilated: Vec<f64>,
    /// Adjustment estimand evaluated on the reconstructed observational joint.
    pub adjustment: Vec<f64>,
    /// (u, s) cells with zero observational conditioning mass, excluded from
    /// both routes.
    pub skipped_cells: Vec<(usize, usize)>,
    /// Max elementwise |mutilated - adjustment|.
    pub max_discrepancy: f64,
}

/// Dense observational joint P(G,u,s,v,e,r) built by full enumeration.
struct Joint {
    p: Vec<f64>,
    dims: [usize; 6],
}

impl Joint {
    fn build(spec: &ScmSpec) -> Joint {
        let dims = [spec.g_card, spec.u_card, spec.s_card, spec.v_card, 2, spec.r_levels];
        let mut p = vec![0.0; dims.iter().product()];
        let mut idx = 0usize;
        for g in 0..spec.g_card {
            for u in 0..spec.u_card {
                for s in 0..spec.s_card {
                    for v in 0..spec.v_card {
                        let pe1 = spec.p_e1_given_uvs[u][v][s];
                        let base = spec.p_g() * spec.p_u_given_g[g][u] * spec.p_s[s] * spec.p_v[v];
                        for e in 0..2 {
                            let pe = if e == 1 { pe1 } else { 1.0 - pe1 };
                            for r in 0..spec.r_levels {
                                p[idx] = base * pe * spec.p_r_given_uvse[u][v][s][e][r];
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
        Joint { p, dims }
    }

    #[inline]
    fn at(&self, g: usize, u: usize, s: usize, v: usize, e: usize, r: usize) -> f64 {
        let [_, du, ds, dv, de, dr] = self.dims;
        self.p[((((g * du + u) * ds + s) * dv + v) * de + e) * dr + r]
    }

    /// P(u | G) recovered from the joint.
    fn p_u_given_g(&self, g: usize, u: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for uu in 0..self.dims[1] {
            for s in 0..self.dims[2] {
                for v in 0..self.dims[3] {
                    for e in 0..2 {
                        for r in 0..self.dims[5] {
                            let p = self.at(g, uu, s, v, e, r);
                            den += p;
                            if uu == u {
                                num += p;
                            }
                        }
                    }
                }
            }
        }
        num / den
    }

    /// P(s) recovered from the joint.
    fn p_s(&self, s: usize) -> f64 {
        let mut num = 0.0;
        for g in 0..self.dims[0] {
            for u in 0..self.dims[1] {
                for v in 0..self.dims[3] {
                    for e in 0..2 {
                        for r in 0..self.dims[5] {
                            num += self.at(g, u, s, v, e, r);
                        }
                    }
                }
            }
        }
        num
    }
}

/// P(r | G, v, do(e=1)) computed both by mutilated-graph enumeration and by
/// the back-door adjustment over the reconstructed observational joint.
pub fn exact_interventional(spec: &ScmSpec, g: usize, v: usize) -> Result<InterventionalResult> {
    spec.validate()?;
    if g >= spec.g_card || v >= spec.v_card {
        return Err(Error::Precondition(format!("(G={g}, v={v}) outside domain")));
    }

    // Route (i): ancestral enumeration in the graph with e := 1.
    let mut mutilated = vec![0.0; spec.r_levels];
    for u in 0..spec.u_card {
        for s in 0..spec.s_card {
            let w = spec.p_u_given_g[g][u] * spec.p_s[s];
            for r in 0..spec.r_levels {
                mutilated[r] += w * spec.p_r_given_uvse[u][v][s][1][r];
            }
        }
    }

    // Route (ii): adjustment formula evaluated strictly on the observational
    // joint: sum_{u,s} P(r | G,u,v,s,e=1) P(u|G) P(s).
    let joint = Joint::build(spec);
    let mut adjustment = vec![0.0; spec.r_levels];
    let mut skipped = Vec::new();
    let mut skipped_mass = vec![0.0; spec.r_levels];
    for u in 0..spec.u_card {
        for s in 0..spec.s_card {
            let w = joint.p_u_given_g(g, u) * joint.p_s(s);
            let mass: f64 = (0..spec.r_levels).map(|r| joint.at(g, u, s, v, 1, r)).sum();
            if mass == 0.0 {
                if w > 0.0 {
                    // Conditioning cell unobservable; exclude it from the
                    // comparison on both sides.
                    skipped.push((u, s));
                    for r in 0..spec.r_levels {
                        skipped_mass[r] +=
                            spec.p_u_given_g[g][u] * spec.p_s[s] * spec.p_r_given_uvse[u][v][s][1][r];
                    }
                }
                continue;
            }
            for r in 0..spec.r_levels {
                adjustment[r] += w * joint.at(g, u, s, v, 1, r) / mass;
            }
        }
    }
    let mutilated_cmp: Vec<f64> = mutilated
        .iter()
        .zip(&skipped_mass)
        .map(|(m, sk)| m - sk)
        .collect();
    let max_discrepancy = mutilated_cmp
        .iter()
        .zip(&adjustment)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(InterventionalResult {
        mutilated: mutilated_cmp,
        adjustment,
        skipped_cells: skipped,
        max_discrepancy,
    })
}

/// Observational conditional P(r | G, v, e=1) from the joint.
pub fn observational_conditional(spec: &ScmSpec, g: usize, v: usize) -> Result<Vec<f64>> {
    if g >= spec.g_card || v >= spec.v_card {
        return Err(Error::Precondition(format!("(G={g}, v={v}) outside domain")));
    }
    let joint = Joint::build(spec);
    let mut dist = vec![0.0; spec.r_levels];
    let mut mass = 0.0;
    for u in 0..spec.u_card {
        for s in 0..spec.s_card {
            for r in 0..spec.r_levels {
                let p = joint.at(g, u, s, v, 1, r);
                dist[r] += p;
                mass += p;
            }
        }
    }
    if mass == 0.0 {
        return Err(Error::Precondition(format!(
            "P(G={g}, v={v}, e=1) has zero mass"
        )));
    }
    for d in &mut dist {
        *d /= mass;
    }
    Ok(dist)
}

/// Total-variation distance between the observational conditional and the
/// interventional (mutilated-route) rating distribution at (G, v).
pub fn measure_selection_bias(spec: &ScmSpec, g: usize, v: usize) -> Result<f64> {
    let obs = observational_conditional(spec, g, v)?;
    let int = exact_interventional(spec, g, v)?;
    Ok(tv_distance(&obs, &int.mutilated))
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// One raw sampled tuple that passed the exposure filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawTuple {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: i64,
    pub g_label: usize,
    pub u_class: usize,
    pub s_value: usize,
    pub regime: usize,
}

/// Ground truth for one logged interaction (aligned 1:1 with the dataset).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub u_class: usize,
    pub s_value: usize,
    pub regime: usize,
}

pub struct SyntheticDataset {
    /// Deduplicated dataset satisfying the loader invariants.
    pub dataset: Dataset,
    /// Ground truth per dataset interaction, same order.
    pub ledger: Vec<LedgerEntry>,
    /// Every e=1 tuple as sampled (before deduplication).
    pub raw_log: Vec<RawTuple>,
    /// Per-user latent class assignments.
    pub user_g: Vec<usize>,
    pub user_class: Vec<usize>,
    /// Item class assignment (round-robin over the v domain).
    pub item_class: Vec<usize>,
    /// Strategy value per regime segment.
    pub regime_strategies: Vec<usize>,
    /// Users eligible to interact in each segment.
    pub active_users_per_segment: Vec<Vec<u32>>,
}

fn sample_cat(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Ancestral sampling under regime-switching strategies. Users carry fixed
/// (G, u) classes; items carry fixed v classes; each timeline segment draws
/// one strategy value, and only exposed tuples are logged.
pub fn generate(spec: &ScmSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_users = spec.num_users as usize;
    let n_items = spec.num_items as usize;

    let user_g: Vec<usize> = (0..n_users).map(|_| rng.random_range(0..spec.g_card)).collect();
    let user_class: Vec<usize> = user_g
        .iter()
        .map(|&g| sample_cat(&spec.p_u_given_g[g], &mut rng))
        .collect();
    let item_class: Vec<usize> = (0..n_items).map(|i| i % spec.v_card).collect();
    // Concrete items of each class, for class-conditional item draws.
    let mut items_by_class: Vec<Vec<u32>> = vec![Vec::new(); spec.v_card];
    for (i, &c) in item_class.iter().enumerate() {
        items_by_class[c].push(i as u32);
    }
    if items_by_class.iter().any(|v| v.is_empty()) {
        return Err(Error::Validation(
            "num_items must be >= the v domain cardinality".into(),
        ));
    }

    let regime_strategies: Vec<usize> = (0..spec.num_segments)
        .map(|_| sample_cat(&spec.p_s, &mut rng))
        .collect();
    let seg_len = spec.num_samples.div_ceil(spec.num_segments);

    // Activity windows (wrapping). Width 0 means always active.
    let window = if spec.user_activity_segments == 0 {
        spec.num_segments
    } else {
        spec.user_activity_segments.min(spec.num_segments)
    };
    let window_start: Vec<usize> = (0..n_users)
        .map(|_| rng.random_range(0..spec.num_segments))
        .collect();
    let mut active_users_per_segment: Vec<Vec<u32>> = vec![Vec::new(); spec.num_segments];
    for (user, &start) in window_start.iter().enumerate() {
        for off in 0..window {
            active_users_per_segment[(start + off) % spec.num_segments].push(user as u32);
        }
    }
    for seg in &mut active_users_per_segment {
        seg.sort_unstable();
        if seg.is_empty() {
            *seg = (0..n_users as u32).collect();
        }
    }

    let mut raw_log = Vec::new();
    for t in 0..spec.num_samples {
        let regime = (t / seg_len).min(spec.num_segments - 1);
        let s = regime_strategies[regime];
        let active = &active_users_per_segment[regime];
        let user = active[rng.random_range(0..active.len())] as usize;
        let u = user_class[user];
        let v_class = sample_cat(&spec.p_v, &mut rng);
        let item = items_by_class[v_class][rng.random_range(0..items_by_class[v_class].len())];
        let exposed = rng.random_range(0.0..1.0) < spec.p_e1_given_uvs[u][v_class][s];
        if !exposed {
            continue;
        }
        let r = sample_cat(&spec.p_r_given_uvse[u][v_class][s][1], &mut rng);
        raw_log.push(RawTuple {
            user: user as u32,
            item,
            rating: (r + 1) as u8,
            timestamp: t as i64,
            g_label: user_g[user],
            u_class: u,
            s_value: s,
            regime,
        });
    }
    if raw_log.is_empty() {
        return Err(Error::Validation("no exposed tuple was generated".into()));
    }

    // Social graph: per-user neighbor draws biased toward the same u-class.
    let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); spec.u_card];
    for (i, &c) in user_class.iter().enumerate() {
        by_class[c].push(i as u32);
    }
    let mut edges: std::collections::HashSet<(u32, u32)> = Default::default();
    for user in 0..n_users as u32 {
        let c = user_class[user as usize];
        for _ in 0..spec.social_degree.div_ceil(2) {
            let same = rng.random_range(0.0..1.0) < spec.same_class_affinity;
            for _ in 0..8 {
                let other = if same && by_class[c].len() > 1 {
                    by_class[c][rng.random_range(0..by_class[c].len())]
                } else {
                    rng.random_range(0..n_users as u32)
                };
                if other != user {
                    edges.insert((user, other));
                    edges.insert((other, user));
                    break;
                }
            }
        }
    }
    let mut social_edges: Vec<(u32, u32)> = edges.into_iter().collect();
    social_edges.sort_unstable();

    // Deduplicate on (user, item), keeping the latest tuple, preserving
    // first-occurrence order for stability.
    let mut pos: HashMap<(u32, u32), usize> = HashMap::new();
    let mut kept: Vec<RawTuple> = Vec::new();
    for &tup in &raw_log {
        match pos.get(&(tup.user, tup.item)) {
            Some(&i) => kept[i] = tup,
            None => {
                pos.insert((tup.user, tup.item), kept.len());
                kept.push(tup);
            }
        }
    }
    let interactions: Vec<InteractionRecord> = kept
        .iter()
        .map(|t| InteractionRecord {
            user: t.user,
            item: t.item,
            rating: t.rating,
            exposed: true,
            timestamp: Some(t.timestamp),
        })
        .collect();
    let ledger: Vec<LedgerEntry> = kept
        .iter()
        .map(|t| LedgerEntry {
            u_class: t.u_class,
            s_value: t.s_value,
            regime: t.regime,
        })
        .collect();

    let dataset = Dataset {
        interactions,
        social_edges,
        num_users: spec.num_users,
        num_items: spec.num_items,
        feedback: FeedbackKind::Explicit,
        rating_levels: spec.r_levels as u8,
    };
    dataset.validate()?;
    Ok(SyntheticDataset {
        dataset,
        ledger,
        raw_log,
        user_g,
        user_class,
        item_class,
        regime_strategies,
        active_users_per_segment,
    })
}

/// Write the ledger TSV: `index<TAB>u_class<TAB>s_value<TAB>regime`.
pub fn write_ledger_tsv(ledger: &[LedgerEntry], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
    for (i, e) in ledger.iter().enumerate() {
        writeln!(f, "{i}\t{}\t{}\t{}", e.u_class, e.s_value, e.regime)
            .map_err(|e| Error::io(path.display(), e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Canned specifications.
// ---------------------------------------------------------------------------

/// Random spec with probabilities bounded away from zero, for identity
/// property testing. Domain sizes are drawn within the given maxima.
pub fn random_spec(seed: u64, max_u: usize, max_s: usize, max_v: usize, r_levels: usize) -> ScmSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_card = rng.random_range(2..=3);
    let u_card = rng.random_range(2..=max_u);
    let s_card = rng.random_range(2..=max_s);
    let v_card = rng.random_range(2..=max_v);
    let row = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= sum);
        v
    };
    let p_u_given_g = (0..g_card).map(|_| row(u_card, &mut rng)).collect();
    let p_s = row(s_card, &mut rng);
    let p_v = row(v_card, &mut rng);
    let p_e1_given_uvs = (0..u_card)
        .map(|_| {
            (0..v_card)
                .map(|_| (0..s_card).map(|_| rng.random_range(0.05..0.95)).collect())
                .collect()
        })
        .collect();
    let p_r_given_uvse = (0..u_card)
        .map(|_| {
            (0..v_card)
                .map(|_| {
                    (0..s_card)
                        .map(|_| (0..2).map(|_| row(r_levels, &mut rng)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    ScmSpec {
        g_card,
        u_card,
        s_card,
        v_card,
        r_levels,
        p_u_given_g,
        p_s,
        p_v,
        p_e1_given_uvs,
        p_r_given_uvse,
        seed,
        num_users: 200,
        num_items: 60,
        num_samples: 10_000,
        num_segments: 6,
        social_degree: 8,
        same_class_affinity: 0.8,
        user_activity_segments: 0,
    }
}

/// Spec where exposure is independent of (u, s) and ratings ignore (u, s, e),
/// built from dyadic probabilities so both computation routes produce
/// bit-identical values and the selection bias is exactly zero.
pub fn inert_exposure_spec() -> ScmSpec {
    let g_card = 2;
    let u_card = 2;
    let s_card = 2;
    let v_card = 2;
    let r_levels = 5;
    let rating_row = |v: usize| -> Vec<f64> {
        if v == 0 {
            vec![0.25, 0.25, 0.25, 0.125, 0.125]
        } else {
            vec![0.125, 0.125, 0.25, 0.25, 0.25]
        }
    };
    ScmSpec {
        g_card,
        u_card,
        s_card,
        v_card,
        r_levels,
        p_u_given_g: vec![vec![0.5, 0.5], vec![0.75, 0.25]],
        p_s: vec![0.5, 0.5],
        p_v: vec![0.5, 0.5],
        p_e1_given_uvs: vec![vec![vec![0.5; s_card]; v_card]; u_card],
        p_r_given_uvse: (0..u_card)
            .map(|_| {
                (0..v_card)
                    .map(|v| (0..s_card).map(|_| vec![rating_row(v); 2]).collect())
                    .collect()
            })
            .collect(),
        seed: 1,
        num_users: 100,
        num_items: 20,
        num_samples: 5000,
        num_segments: 4,
        social_degree: 6,
        same_class_affinity: 0.8,
        user_activity_segments: 0,
    }
}

/// Demonstration spec with strong strategy confounding: high-s regimes boost
/// both exposure and ratings, so conditioning on exposure skews the observed
/// rating distribution upward.
pub fn demo_biased_spec() -> ScmSpec {
    let g_card = 3;
    let u_card = 3;
    let s_card = 3;
    let v_card = 3;
    let r_levels = 5;
    // Users mostly match their neighborhood label.
    let p_u_given_g = (0..g_card)
        .map(|g| {
            (0..u_card)
                .map(|u| if u == g { 0.8 } else { 0.1 })
                .collect()
        })
        .collect();
    // Exposure: each strategy regime promotes one item class heavily (like a
    // festival promotion for one category), with a small taste-match bonus.
    let expose = |u: usize, v: usize, s: usize| -> f64 {
        let base: f64 = 0.05;
        let promo = if v == s { 0.80 } else { 0.0 };
        let bonus = if u == v { 0.10 } else { 0.0 };
        (base + promo + bonus).min(0.95)
    };
    // Ratings: peaked around a mean lifted by taste match, by the promotion
    // (discounted items get rated up while promoted), and by exposure itself.
    let rating = |u: usize, v: usize, s: usize, e: usize| -> Vec<f64> {
        let mean = 2.0
            + if u == v { 1.6 } else { 0.0 }
            + if v == s { 0.9 } else { 0.0 }
            + 0.4 * e as f64;
        let mut row: Vec<f64> = (0..r_levels)
            .map(|r| (-(((r + 1) as f64 - mean).powi(2)) / 0.6).exp())
            .collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
        row
    };
    ScmSpec {
        g_card,
        u_card,
        s_card,
        v_card,
        r_levels,
        p_u_given_g,
        p_s: vec![0.4, 0.35, 0.25],
        p_v: vec![0.4, 0.35, 0.25],
        p_e1_given_uvs: (0..u_card)
            .map(|u| {
                (0..v_card)
                    .map(|v| (0..s_card).map(|s| expose(u, v, s)).collect())
                    .collect()
            })
            .collect(),
        p_r_given_uvse: (0..u_card)
            .map(|u| {
                (0..v_card)
                    .map(|v| {
                        (0..s_card)
                            .map(|s| (0..2).map(|e| rating(u, v, s, e)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect(),
        seed: 7,
        num_users: 400,
        num_items: 120,
        num_samples: 20_000,
        num_segments: 8,
        social_degree: 10,
        same_class_affinity: 0.8,
        user_activity_segments: 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_domains_collapse_to_the_rating_table() {
        // |u| = |s| = 1: the adjustment reduces to P(r | u, v, s, e=1).
        let mut spec = random_spec(3, 2, 2, 3, 5);
        spec.u_card = 1;
        spec.s_card = 1;
        spec.p_u_given_g = vec![vec![1.0]; spec.g_card];
        spec.p_s = vec![1.0];
        spec.p_e1_given_uvs = vec![vec![vec![0.5; 1]; spec.v_card]; 1];
        spec.p_r_given_uvse = vec![(0..spec.v_card)
            .map(|_| vec![vec![vec![0.1, 0.2, 0.3, 0.25, 0.15]; 2]; 1])
            .collect()];
        spec.validate().unwrap();
        let res = exact_interventional(&spec, 0, 1).unwrap();
        for r in 0..5 {
            assert!((res.mutilated[r] - spec.p_r_given_uvse[0][1][0][1][r]).abs() < 1e-12);
            assert!((res.adjustment[r] - spec.p_r_given_uvse[0][1][0][1][r]).abs() < 1e-12);
        }
        assert!(res.skipped_cells.is_empty());
    }

    #[test]
    fn identity_holds_on_random_specs() {
        for seed in 0..40 {
            let spec = random_spec(seed, 6, 6, 4, 5);
            for g in 0..spec.g_card {
                for v in 0..spec.v_card {
                    let res = exact_interventional(&spec, g, v).unwrap();
                    assert!(res.skipped_cells.is_empty());
                    assert!(
                        res.max_discrepancy <= 1e-9,
                        "seed {seed} (G={g}, v={v}): discrepancy {}",
                        res.max_discrepancy
                    );
                    let sum: f64 = res.mutilated.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn inert_exposure_means_no_bias() {
        let spec = inert_exposure_spec();
        for g in 0..spec.g_card {
            for v in 0..spec.v_card {
                let obs = observational_conditional(&spec, g, v).unwrap();
                let int = exact_interventional(&spec, g, v).unwrap();
                // Dyadic arithmetic: bit-identical distributions, bias == 0.
                assert_eq!(obs, int.mutilated);
                assert_eq!(measure_selection_bias(&spec, g, v).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn constructed_confounding_shows_positive_bias() {
        let spec = demo_biased_spec();
        let mut max_bias: f64 = 0.0;
        for g in 0..spec.g_card {
            for v in 0..spec.v_card {
                max_bias = max_bias.max(measure_selection_bias(&spec, g, v).unwrap());
            }
        }
        assert!(max_bias > 0.05, "max bias {max_bias}");
    }

    #[test]
    fn bias_is_invariant_to_rating_relabeling() {
        let spec = demo_biased_spec();
        let perm = [4usize, 2, 0, 3, 1];
        let mut relabeled = spec.clone();
        for u in 0..spec.u_card {
            for v in 0..spec.v_card {
                for s in 0..spec.s_card {
                    for e in 0..2 {
                        let old = &spec.p_r_given_uvse[u][v][s][e];
                        let mut new = vec![0.0; 5];
                        for r in 0..5 {
                            new[perm[r]] = old[r];
                        }
                        relabeled.p_r_given_uvse[u][v][s][e] = new;
                    }
                }
            }
        }
        for g in 0..spec.g_card {
            for v in 0..spec.v_card {
                let a = measure_selection_bias(&spec, g, v).unwrap();
                let b = measure_selection_bias(&relabeled, g, v).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn always_exposed_logs_every_sample() {
        let mut spec = inert_exposure_spec();
        spec.p_e1_given_uvs = vec![vec![vec![1.0; spec.s_card]; spec.v_card]; spec.u_card];
        spec.num_samples = 3000;
        let syn = generate(&spec).unwrap();
        assert_eq!(syn.raw_log.len(), 3000);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = demo_biased_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.raw_log, b.raw_log);
        assert_eq!(a.dataset.social_edges, b.dataset.social_edges);
        assert_eq!(a.dataset.interactions, b.dataset.interactions);
    }

    #[test]
    fn ledger_aligns_with_dataset() {
        let syn = generate(&demo_biased_spec()).unwrap();
        assert_eq!(syn.ledger.len(), syn.dataset.interactions.len());
        syn.dataset.validate().unwrap();
        // Every interaction's u_class matches the user's assignment.
        for (rec, entry) in syn.dataset.interactions.iter().zip(&syn.ledger) {
            assert_eq!(entry.u_class, syn.user_class[rec.user as usize]);
        }
    }

    #[test]
    fn empirical_conditional_matches_enumeration() {
        // Monte-Carlo agreement within 3 standard errors per cell. The
        // enumeration conditions on the realized generation mixture: the
        // finite user population fixes an empirical P(u|G), and strategies
        // are drawn per regime segment rather than per tuple.
        let mut spec = demo_biased_spec();
        spec.seed = 11;
        spec.num_samples = 1_000_000;
        spec.num_users = 600;
        spec.num_items = 90;
        let syn = generate(&spec).unwrap();

        // Enumerate over segments with the realized active-user pools: the
        // tuple distribution is segment-uniform, user-uniform within the
        // segment's active set, with the segment's fixed strategy.
        let seg_len = spec.num_samples.div_ceil(spec.num_segments);
        let mut seg_weight = vec![0.0f64; spec.num_segments];
        for t in 0..spec.num_samples {
            seg_weight[(t / seg_len).min(spec.num_segments - 1)] += 1.0;
        }
        seg_weight.iter_mut().for_each(|w| *w /= spec.num_samples as f64);

        let expect_for = |g: usize, v: usize| -> Vec<f64> {
            let mut dist = vec![0.0; spec.r_levels];
            for (seg, active) in syn.active_users_per_segment.iter().enumerate() {
                let s = syn.regime_strategies[seg];
                let per_user = seg_weight[seg] / active.len() as f64;
                for &user in active {
                    if syn.user_g[user as usize] != g {
                        continue;
                    }
                    let u = syn.user_class[user as usize];
                    let w = per_user * spec.p_e1_given_uvs[u][v][s];
                    for r in 0..spec.r_levels {
                        dist[r] += w * spec.p_r_given_uvse[u][v][s][1][r];
                    }
                }
            }
            let mass: f64 = dist.iter().sum();
            dist.iter_mut().for_each(|x| *x /= mass);
            dist
        };

        let mut counts: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        for t in &syn.raw_log {
            let v_class = syn.item_class[t.item as usize];
            counts
                .entry((t.g_label, v_class))
                .or_insert_with(|| vec![0.0; spec.r_levels])[t.rating as usize - 1] += 1.0;
        }
        let mut cells_checked = 0;
        for ((g, v), histogram) in counts {
            let n: f64 = histogram.iter().sum();
            if n < 5000.0 {
                continue;
            }
            let expect = expect_for(g, v);
            for r in 0..spec.r_levels {
                let p_hat = histogram[r] / n;
                let se = (expect[r] * (1.0 - expect[r]) / n).sqrt();
                assert!(
                    (p_hat - expect[r]).abs() <= 3.0 * se + 1e-9,
                    "cell (G={g}, v={v}, r={r}): {p_hat} vs {} (se {se})",
                    expect[r]
                );
                cells_checked += 1;
            }
        }
        assert!(cells_checked >= 20);
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = demo_biased_spec();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        spec.save(tmp.path()).unwrap();
        let loaded = ScmSpec::load(tmp.path()).unwrap();
        assert_eq!(loaded.p_s, spec.p_s);
        assert_eq!(loaded.num_samples, spec.num_samples);
    }

    #[test]
    fn invalid_tables_are_rejected() {
        let mut spec = demo_biased_spec();
        spec.p_s = vec![0.5, 0.6, 0.2];
        assert!(spec.validate().is_err());
        let mut spec = demo_biased_spec();
        spec.p_e1_given_uvs[0][0][0] = 1.5;
        assert!(spec.validate().is_err());
    }
}
