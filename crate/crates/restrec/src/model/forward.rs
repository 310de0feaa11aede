//! Forward computation: attention aggregators, exposure-specific encoders and
//! decoders. Tape-level builders are shared by the loss (which differentiates
//! them) and by the public value-level operations below.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{sigmoid, Id, Tape};
use crate::data::FeedbackKind;
use crate::error::Error;
use crate::graph::GraphStore;
use crate::Result;

use super::{Model, SocialAgg, StrategyCode};

/// Noise source for the categorical relaxation. `Disabled` evaluates the
/// deterministic softmax(logits / tau) path used at visualization time.
#[derive(Debug, Clone, Copy)]
pub enum GumbelNoise {
    Seeded(u64),
    Disabled,
}

impl GumbelNoise {
    /// Standard Gumbel draws (or zeros), length n.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        match self {
            GumbelNoise::Disabled => vec![0.0; n],
            GumbelNoise::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n)
                    .map(|_| {
                        let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
                        -(-u.ln()).ln()
                    })
                    .collect()
            }
        }
    }
}

/// One hidden layer with LeakyReLU, then a linear readout.
pub(super) fn mlp(tape: &mut Tape, model: &Model, prefix: &str, input: Id) -> Id {
    let w1 = model.layout.view(&format!("{prefix}.w1"));
    let b1 = model.layout.view(&format!("{prefix}.b1"));
    let w2 = model.layout.view(&format!("{prefix}.w2"));
    let b2 = model.layout.view(&format!("{prefix}.b2"));
    let h = tape.affine(w1.offset, w1.rows, w1.cols, b1.offset, input);
    let h = tape.leaky_relu(h, model.cfg.leaky_slope);
    tape.affine(w2.offset, w2.rows, w2.cols, b2.offset, h)
}

pub(super) struct Aggregate {
    pub h: Id,
    /// Softmax attention weights over the aggregated neighborhood; `None`
    /// when the learned default vector was used (empty neighborhood).
    pub weights: Option<Id>,
}

/// Attention aggregation over accessed items with their rating levels,
/// parameterized by `scorer` ("bip" for the user encoder, "ctx" for the
/// strategy encoder). h = LeakyReLU(sum_j a_j (v_j concat r_j)).
pub(super) fn aggregate_items_t(
    tape: &mut Tape,
    model: &Model,
    scorer: &str,
    default_block: &str,
    user: u32,
    items: &[(u32, u8)],
) -> Aggregate {
    if items.is_empty() {
        let v = model.layout.view(default_block);
        let h = tape.param(v.offset, v.len());
        return Aggregate { h, weights: None };
    }
    let (uoff, ulen) = model.layout.user_row(user);
    let u_emb = tape.param(uoff, ulen);
    let mut scores = Vec::with_capacity(items.len());
    let mut ctxs = Vec::with_capacity(items.len());
    for &(item, rating) in items {
        let (ioff, ilen) = model.layout.item_row(item);
        let (roff, rlen) = model.layout.rating_row(rating);
        let v_emb = tape.param(ioff, ilen);
        let r_emb = tape.param(roff, rlen);
        let ctx = tape.concat(&[v_emb, r_emb]);
        let scorer_in = tape.concat(&[u_emb, ctx]);
        scores.push(mlp(tape, model, scorer, scorer_in));
        ctxs.push(ctx);
    }
    let stacked = tape.stack_scalars(&scores);
    let weights = tape.softmax(stacked);
    let mix = tape.weighted_sum(weights, &ctxs);
    let h = tape.leaky_relu(mix, model.cfg.leaky_slope);
    Aggregate { h, weights: Some(weights) }
}

/// Attention aggregation over 1st-order social neighbors.
pub(super) fn aggregate_social_t(
    tape: &mut Tape,
    model: &Model,
    user: u32,
    neighbors: &[u32],
) -> Aggregate {
    if neighbors.is_empty() {
        let v = model.layout.view("default_hs");
        let h = tape.param(v.offset, v.len());
        return Aggregate { h, weights: None };
    }
    let (uoff, ulen) = model.layout.user_row(user);
    let u_emb = tape.param(uoff, ulen);
    let mut scores = Vec::with_capacity(neighbors.len());
    let mut nbs = Vec::with_capacity(neighbors.len());
    for &nb in neighbors {
        let (noff, nlen) = model.layout.user_row(nb);
        let n_emb = tape.param(noff, nlen);
        let scorer_in = tape.concat(&[u_emb, n_emb]);
        scores.push(mlp(tape, model, "soc", scorer_in));
        nbs.push(n_emb);
    }
    let stacked = tape.stack_scalars(&scores);
    let weights = tape.softmax(stacked);
    let mix = match model.cfg.social_agg {
        SocialAgg::Neighbor => tape.weighted_sum(weights, &nbs),
        SocialAgg::SelfRescale => {
            let selfs = vec![u_emb; neighbors.len()];
            tape.weighted_sum(weights, &selfs)
        }
    };
    let h = tape.leaky_relu(mix, model.cfg.leaky_slope);
    Aggregate { h, weights: Some(weights) }
}

/// h_u = (1-e) g0(h_b, h_s) + e g1(h_b, h_s); only the active head enters the
/// graph, so the inactive head's parameters receive no gradient at all.
pub(super) fn encode_user_t(tape: &mut Tape, model: &Model, hb: Id, hs: Id, exposed: bool) -> Id {
    let joint = tape.concat(&[hb, hs]);
    mlp(tape, model, if exposed { "g1" } else { "g0" }, joint)
}

/// Strategy logits from the strategy-context aggregate and the item embedding.
pub(super) fn strategy_logits_t(
    tape: &mut Tape,
    model: &Model,
    hd: Id,
    v_emb: Id,
    exposed: bool,
) -> Id {
    let joint = tape.concat(&[hd, v_emb]);
    mlp(tape, model, if exposed { "phi1" } else { "phi0" }, joint)
}

/// Per-block relaxed samples: softmax((logits_b + gumbel) / tau). Returns the
/// per-block sample nodes and the flat concatenation.
pub(super) fn gumbel_relax_t(
    tape: &mut Tape,
    model: &Model,
    logits: Id,
    tau: f64,
    noise: &[f64],
) -> (Vec<Id>, Id) {
    let b = model.cfg.strategy_blocks;
    let c = model.cfg.strategy_cats;
    debug_assert_eq!(noise.len(), b * c);
    let mut blocks = Vec::with_capacity(b);
    for bi in 0..b {
        let block = tape.slice(logits, bi * c, c);
        let shifted = tape.add_const(block, &noise[bi * c..(bi + 1) * c]);
        let scaled = tape.scale(shifted, 1.0 / tau);
        blocks.push(tape.softmax(scaled));
    }
    let flat = tape.concat(&blocks);
    (blocks, flat)
}

/// Exposure logit from (h_u, v, s); `strategy` None feeds zeros (the ablation
/// without latent strategies).
pub(super) fn exposure_logit_t(
    tape: &mut Tape,
    model: &Model,
    h_u: Id,
    v_emb: Id,
    strategy: Option<Id>,
) -> Id {
    let s = match strategy {
        Some(s) => s,
        None => {
            let zeros = vec![0.0; model.cfg.strategy_dim()];
            tape.input(&zeros)
        }
    };
    let joint = tape.concat(&[h_u, v_emb, s]);
    mlp(tape, model, "fe", joint)
}

/// Raw rating head output (a score for explicit feedback, a logit for
/// implicit feedback).
pub(super) fn rating_score_t(
    tape: &mut Tape,
    model: &Model,
    h_u: Id,
    v_emb: Id,
    exposed: bool,
) -> Id {
    let joint = tape.concat(&[h_u, v_emb]);
    mlp(tape, model, if exposed { "f1" } else { "f0" }, joint)
}

// ---------------------------------------------------------------------------
// Public value-level operations.
// ---------------------------------------------------------------------------

/// Bipartite attention aggregate h_b for a user over accessed items with
/// ratings. Returns (h_b, attention weights); the weights are empty when the
/// item list is empty and the learned default vector is returned.
pub fn aggregate_bipartite(model: &Model, user: u32, items: &[(u32, u8)]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new(&model.params);
    let agg = aggregate_items_t(&mut tape, model, "bip", "default_hb", user, items);
    let w = agg.weights.map(|w| tape.value(w).to_vec()).unwrap_or_default();
    (tape.value(agg.h).to_vec(), w)
}

/// Social attention aggregate h_s over 1st-order neighbors.
pub fn aggregate_social(model: &Model, user: u32, neighbors: &[u32]) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new(&model.params);
    let agg = aggregate_social_t(&mut tape, model, user, neighbors);
    let w = agg.weights.map(|w| tape.value(w).to_vec()).unwrap_or_default();
    (tape.value(agg.h).to_vec(), w)
}

/// Item aggregate h_d feeding the strategy encoder (independent scorer).
pub fn aggregate_strategy_context(
    model: &Model,
    user: u32,
    items: &[(u32, u8)],
) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new(&model.params);
    let agg = aggregate_items_t(&mut tape, model, "ctx", "default_hd", user, items);
    let w = agg.weights.map(|w| tape.value(w).to_vec()).unwrap_or_default();
    (tape.value(agg.h).to_vec(), w)
}

/// Exposure-specific user latent from precomputed aggregates.
pub fn encode_user(model: &Model, hb: &[f64], hs: &[f64], exposed: bool) -> Vec<f64> {
    let mut tape = Tape::new(&model.params);
    let hb = tape.input(hb);
    let hs = tape.input(hs);
    let h = encode_user_t(&mut tape, model, hb, hs, exposed);
    tape.value(h).to_vec()
}

/// Strategy encoding: exposure-specific logits relaxed per block by
/// Gumbel-Softmax at temperature `tau`.
pub fn encode_strategy(
    model: &Model,
    hd: &[f64],
    item: u32,
    exposed: bool,
    tau: f64,
    noise: GumbelNoise,
) -> Result<StrategyCode> {
    if tau <= 0.0 {
        return Err(Error::Validation(format!(
            "gumbel temperature must be positive, got {tau}"
        )));
    }
    let mut tape = Tape::new(&model.params);
    let hd = tape.input(hd);
    let (ioff, ilen) = model.layout.item_row(item);
    let v_emb = tape.param(ioff, ilen);
    let logits = strategy_logits_t(&mut tape, model, hd, v_emb, exposed);
    let g = noise.sample(model.cfg.strategy_dim());
    let (_, flat) = gumbel_relax_t(&mut tape, model, logits, tau, &g);
    let logits_v = tape.value(logits).to_vec();
    let relaxed = tape.value(flat).to_vec();
    let c = model.cfg.strategy_cats;
    let hard = relaxed
        .chunks(c)
        .map(|block| {
            block
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect();
    Ok(StrategyCode { logits: logits_v, relaxed, hard })
}

/// Edge probability between two user latents: logistic of their inner product.
pub fn reconstruct_social_edge(hu: &[f64], hu2: &[f64]) -> f64 {
    let dot: f64 = hu.iter().zip(hu2).map(|(a, b)| a * b).sum();
    sigmoid(dot)
}

/// Exposure probability from (h_u, v, s).
pub fn reconstruct_exposure(model: &Model, h_u: &[f64], item: u32, strategy: &[f64]) -> f64 {
    let mut tape = Tape::new(&model.params);
    let h_u = tape.input(h_u);
    let (ioff, ilen) = model.layout.item_row(item);
    let v_emb = tape.param(ioff, ilen);
    let s = tape.input(strategy);
    let logit = exposure_logit_t(&mut tape, model, h_u, v_emb, Some(s));
    sigmoid(tape.scalar(logit))
}

/// Exposure-specific rating prediction. Explicit feedback: unbounded score
/// (clamped only at evaluation). Implicit feedback: probability in (0,1).
pub fn predict_rating(model: &Model, h_u: &[f64], item: u32, exposed: bool) -> f64 {
    let mut tape = Tape::new(&model.params);
    let h_u = tape.input(h_u);
    let (ioff, ilen) = model.layout.item_row(item);
    let v_emb = tape.param(ioff, ilen);
    let score = rating_score_t(&mut tape, model, h_u, v_emb, exposed);
    let raw = tape.scalar(score);
    match model.cfg.feedback {
        FeedbackKind::Explicit => raw,
        FeedbackKind::Implicit => sigmoid(raw),
    }
}

/// Deterministic evaluation path: force exposure (g1/f1), aggregate the full
/// train-graph neighborhoods, no strategy sampling. Explicit predictions are
/// clamped to the level range.
pub fn predict_for_eval(model: &Model, graph: &GraphStore, user: u32, item: u32) -> Result<f64> {
    if user >= model.cfg.num_users || item >= model.cfg.num_items {
        return Err(Error::Validation(format!(
            "unknown user {user} or item {item}"
        )));
    }
    let h_u = eval_user_latent(model, graph, user);
    Ok(eval_rating_from_latent(model, &h_u, item))
}

/// The user latent used at evaluation; exposed so batch evaluation can cache
/// it per user.
pub fn eval_user_latent(model: &Model, graph: &GraphStore, user: u32) -> Vec<f64> {
    let mut tape = Tape::new(&model.params);
    let hb = aggregate_items_t(&mut tape, model, "bip", "default_hb", user, graph.items_of(user));
    let hs = aggregate_social_t(&mut tape, model, user, graph.neighbors_of(user));
    let h = encode_user_t(&mut tape, model, hb.h, hs.h, true);
    tape.value(h).to_vec()
}

pub fn eval_rating_from_latent(model: &Model, h_u: &[f64], item: u32) -> f64 {
    let raw = predict_rating(model, h_u, item, true);
    match model.cfg.feedback {
        FeedbackKind::Explicit => raw.clamp(1.0, model.cfg.rating_levels as f64),
        FeedbackKind::Implicit => raw,
    }
}
