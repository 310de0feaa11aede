//! Batch assembly and the training objective.
//!
//! Per sample the loss is kl_s + nll_social + nll_exposure + nll_rating:
//! analytic KL of each categorical strategy block against its uniform prior
//! (on pre-sample probabilities), edge log-loss over the sampled 1st-order
//! neighbors plus 1:1 non-edges, exposure log-loss, and squared error
//! (explicit) or log-loss (implicit) on the rating. There is no KL term for
//! the user latent: its posterior is a point mass, so expectations over it are
//! single evaluations. The total adds gamma times the L2 of the network
//! parameters and the embedding rows the batch touched.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradSink, Tape};
use crate::data::{FeedbackKind, InteractionRecord};
use crate::error::Error;
use crate::graph::{CounterfactualSample, GraphStore};
use crate::Result;

use super::forward::{
    aggregate_items_t, aggregate_social_t, encode_user_t, exposure_logit_t, gumbel_relax_t,
    rating_score_t, strategy_logits_t,
};
use super::{Ablation, Model};

/// One training example with its sampled neighborhoods.
#[derive(Debug, Clone)]
pub struct BatchSample {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub exposed: bool,
    /// Sampled items from C(u) with their ratings.
    pub item_ctx: Vec<(u32, u8)>,
    /// Sampled 1st-order neighbors; also the positive edges for the social
    /// reconstruction term.
    pub social_ctx: Vec<u32>,
    /// Sampled non-neighbors, one per positive edge.
    pub social_negs: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<BatchSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_size: usize,
    /// Item fan-out sampled from C(u) per step.
    pub fanout_items: usize,
    /// Social fan-out sampled from N(u) per step.
    pub fanout_social: usize,
    /// Fraction of the batch drawn from the counterfactual pool (when the
    /// pool is non-empty).
    pub counterfactual_ratio: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            batch_size: 1024,
            fanout_items: 30,
            fanout_social: 30,
            counterfactual_ratio: 0.5,
        }
    }
}

fn sample_up_to<T: Copy>(pool: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if pool.len() <= k {
        return pool.to_vec();
    }
    // Partial Fisher-Yates over an index vector.
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..k].iter().map(|&i| pool[i]).collect()
}

fn build_sample(
    g: &GraphStore,
    user: u32,
    item: u32,
    rating: u8,
    exposed: bool,
    cfg: &BatchConfig,
    rng: &mut ChaCha8Rng,
) -> BatchSample {
    let item_ctx = sample_up_to(g.items_of(user), cfg.fanout_items, rng);
    let social_ctx = sample_up_to(g.neighbors_of(user), cfg.fanout_social, rng);
    let mut social_negs = Vec::with_capacity(social_ctx.len());
    let num_users = g.num_users();
    if !social_ctx.is_empty() && (g.neighbors_of(user).len() as u32) + 1 < num_users {
        while social_negs.len() < social_ctx.len() {
            let cand = rng.random_range(0..num_users);
            if cand != user && !g.neighbors_of(user).contains(&cand) {
                social_negs.push(cand);
            }
        }
    }
    BatchSample {
        user,
        item,
        rating,
        exposed,
        item_ctx,
        social_ctx,
        social_negs,
    }
}

/// Draw a step batch mixing exposed records with counterfactual pool samples
/// at the configured ratio, with per-sample neighbor fan-out sampling.
pub fn assemble_batch(
    g: &GraphStore,
    exposed: &[InteractionRecord],
    pool: &[CounterfactualSample],
    cfg: &BatchConfig,
    seed: u64,
) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cf = if pool.is_empty() {
        0
    } else {
        ((cfg.batch_size as f64) * cfg.counterfactual_ratio).round() as usize
    };
    let n_ex = cfg.batch_size - n_cf.min(cfg.batch_size);
    let mut samples = Vec::with_capacity(cfg.batch_size);
    for _ in 0..n_ex {
        let rec = exposed[rng.random_range(0..exposed.len())];
        samples.push(build_sample(g, rec.user, rec.item, rec.rating, true, cfg, &mut rng));
    }
    for _ in 0..n_cf.min(cfg.batch_size) {
        let s = pool[rng.random_range(0..pool.len())];
        samples.push(build_sample(g, s.user, s.item, s.voted_rating, false, cfg, &mut rng));
    }
    Batch { samples }
}

/// Loss values for one batch; every field is a batch mean except `reg`, which
/// is the (unweighted) L2 sum added once per batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub kl_s: f64,
    pub nll_social: f64,
    pub nll_exposure: f64,
    pub nll_rating: f64,
    pub reg: f64,
    pub gamma: f64,
}

impl LossTerms {
    /// The data term: kl_s + nll_social + nll_exposure + nll_rating.
    pub fn data_total(&self) -> f64 {
        self.kl_s + self.nll_social + self.nll_exposure + self.nll_rating
    }

    /// Full objective including the weighted regularizer.
    pub fn total(&self) -> f64 {
        self.data_total() + self.gamma * self.reg
    }

    pub fn check_finite(&self, step: usize) -> Result<()> {
        for (name, v) in [
            ("kl_s", self.kl_s),
            ("nll_social", self.nll_social),
            ("nll_exposure", self.nll_exposure),
            ("nll_rating", self.nll_rating),
            ("reg", self.reg),
        ] {
            if !v.is_finite() {
                return Err(Error::Diverged { term: name, step });
            }
        }
        Ok(())
    }
}

struct ChunkOut {
    kl: f64,
    soc: f64,
    expo: f64,
    rat: f64,
    sink: Option<GradSink>,
    touched_rows: Vec<usize>,
}

fn noise_for(noise_seed: u64, sample_idx: usize, n: usize) -> Vec<f64> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(noise_seed ^ (sample_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect()
}

fn run_chunk(
    model: &Model,
    samples: &[(usize, &BatchSample)],
    tau: f64,
    noise_seed: u64,
    inv_n: f64,
    want_grad: bool,
) -> ChunkOut {
    let mut tape = Tape::new(&model.params);
    let mut kl_sum = 0.0;
    let mut soc_sum = 0.0;
    let mut expo_sum = 0.0;
    let mut rat_sum = 0.0;
    let mut totals = Vec::with_capacity(samples.len());
    let sdim = model.cfg.strategy_dim();
    for &(global_idx, s) in samples {
        let hb = aggregate_items_t(&mut tape, model, "bip", "default_hb", s.user, &s.item_ctx);
        let hs = aggregate_social_t(&mut tape, model, s.user, &s.social_ctx);
        let h_u = encode_user_t(&mut tape, model, hb.h, hs.h, s.exposed);
        let (ioff, ilen) = model.layout.item_row(s.item);
        let v_emb = tape.param(ioff, ilen);

        // Strategy pathway (skipped entirely in the ablation).
        let (kl_node, s_flat) = match model.cfg.ablation {
            Ablation::Full => {
                let hd =
                    aggregate_items_t(&mut tape, model, "ctx", "default_hd", s.user, &s.item_ctx);
                let logits = strategy_logits_t(&mut tape, model, hd.h, v_emb, s.exposed);
                let c = model.cfg.strategy_cats;
                let mut kls = Vec::with_capacity(model.cfg.strategy_blocks);
                for b in 0..model.cfg.strategy_blocks {
                    let block = tape.slice(logits, b * c, c);
                    kls.push(tape.kl_to_uniform(block));
                }
                let kl = tape.sum_scalars(&kls);
                let noise = noise_for(noise_seed, global_idx, sdim);
                let (_, flat) = gumbel_relax_t(&mut tape, model, logits, tau, &noise);
                (kl, Some(flat))
            }
            Ablation::RestS => {
                let zero = tape.input(&[0.0]);
                (zero, None)
            }
        };

        // Social reconstruction over sampled positives and non-edges.
        let mut edge_losses = Vec::with_capacity(s.social_ctx.len() + s.social_negs.len());
        for (&other, target) in s
            .social_ctx
            .iter()
            .map(|o| (o, 1.0))
            .chain(s.social_negs.iter().map(|o| (o, 0.0)))
        {
            let (ooff, olen) = model.layout.user_row(other);
            let o_emb = tape.param(ooff, olen);
            let logit = tape.dot(h_u, o_emb);
            edge_losses.push(tape.bce_with_logits(logit, target));
        }
        let soc = if edge_losses.is_empty() {
            tape.input(&[0.0])
        } else {
            tape.sum_scalars(&edge_losses)
        };

        let e_logit = exposure_logit_t(&mut tape, model, h_u, v_emb, s_flat);
        let expo = tape.bce_with_logits(e_logit, if s.exposed { 1.0 } else { 0.0 });

        let score = rating_score_t(&mut tape, model, h_u, v_emb, s.exposed);
        let rat = match model.cfg.feedback {
            FeedbackKind::Explicit => tape.squared_error(score, s.rating as f64),
            FeedbackKind::Implicit => tape.bce_with_logits(score, s.rating.min(1) as f64),
        };

        kl_sum += tape.scalar(kl_node);
        soc_sum += tape.scalar(soc);
        expo_sum += tape.scalar(expo);
        rat_sum += tape.scalar(rat);
        totals.push(tape.sum_scalars(&[kl_node, soc, expo, rat]));
    }

    let sink = if want_grad {
        let root = tape.sum_scalars(&totals);
        let mut sink = GradSink::new(model.layout.net_len);
        tape.backward(root, inv_n, &mut sink);
        Some(sink)
    } else {
        None
    };
    let net_len = model.layout.net_len;
    let mut touched_rows: Vec<usize> = tape
        .touched_params()
        .iter()
        .filter(|(off, _)| *off >= net_len)
        .map(|(off, _)| *off)
        .collect();
    touched_rows.sort_unstable();
    touched_rows.dedup();
    ChunkOut {
        kl: kl_sum,
        soc: soc_sum,
        expo: expo_sum,
        rat: rat_sum,
        sink,
        touched_rows,
    }
}

/// Evaluate the objective on a batch, optionally accumulating parameter
/// gradients. Work is split over `chunks` fixed slices (merged in order, so
/// results are bit-identical regardless of thread scheduling).
pub fn compute_loss(
    model: &Model,
    batch: &Batch,
    tau: f64,
    gamma: f64,
    noise_seed: u64,
    chunks: usize,
    mut grad: Option<&mut GradSink>,
) -> Result<LossTerms> {
    if batch.samples.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Validation(format!(
            "gumbel temperature must be positive, got {tau}"
        )));
    }
    if gamma < 0.0 {
        return Err(Error::Validation(format!(
            "regularizer weight must be nonnegative, got {gamma}"
        )));
    }
    let n = batch.samples.len();
    let inv_n = 1.0 / n as f64;
    let want_grad = grad.is_some();
    let indexed: Vec<(usize, &BatchSample)> = batch.samples.iter().enumerate().collect();
    let chunk_size = n.div_ceil(chunks.max(1));
    let outs: Vec<ChunkOut> = indexed
        .par_chunks(chunk_size)
        .map(|slice| run_chunk(model, slice, tau, noise_seed, inv_n, want_grad))
        .collect();

    let mut terms = LossTerms {
        kl_s: 0.0,
        nll_social: 0.0,
        nll_exposure: 0.0,
        nll_rating: 0.0,
        reg: 0.0,
        gamma,
    };
    let mut touched: BTreeSet<usize> = BTreeSet::new();
    for out in &outs {
        terms.kl_s += out.kl * inv_n;
        terms.nll_social += out.soc * inv_n;
        terms.nll_exposure += out.expo * inv_n;
        terms.nll_rating += out.rat * inv_n;
        touched.extend(out.touched_rows.iter().copied());
        if let Some(g) = grad.as_deref_mut() {
            g.merge(out.sink.as_ref().unwrap());
        }
    }

    // L2 over the network region plus the embedding rows this batch touched,
    // added once (not per sample).
    let mut reg_tape = Tape::new(&model.params);
    let mut l2_nodes = vec![reg_tape.l2(0, model.layout.net_len)];
    let row_len = model.cfg.embed_dim;
    let rating_off = model.layout.view("emb.rating").offset;
    for &off in &touched {
        let len = if off >= rating_off { model.cfg.rating_dim } else { row_len };
        l2_nodes.push(reg_tape.l2(off, len));
    }
    let reg_node = reg_tape.sum_scalars(&l2_nodes);
    terms.reg = reg_tape.scalar(reg_node);
    if let Some(g) = grad {
        if gamma > 0.0 {
            reg_tape.backward(reg_node, gamma, g);
        }
    }
    Ok(terms)
}

/// The four data terms and their sum (no regularizer weighting applied).
pub fn loss_terms(
    model: &Model,
    batch: &Batch,
    tau: f64,
    noise_seed: u64,
) -> Result<LossTerms> {
    compute_loss(model, batch, tau, 0.0, noise_seed, 1, None)
}

/// Full objective value: data terms plus gamma * L2.
pub fn total_loss(
    model: &Model,
    batch: &Batch,
    tau: f64,
    gamma: f64,
    noise_seed: u64,
) -> Result<f64> {
    Ok(compute_loss(model, batch, tau, gamma, noise_seed, 1, None)?.total())
}
