//! The recommendation model: exposure-specific user encoder over bipartite and
//! social attention aggregates, a Gumbel-Softmax categorical strategy encoder,
//! and three decoders (social edges, exposure, rating), trained against the
//! variational objective in the loss submodule.
//!
//! All trainable tensors live in one flat `Vec<f64>` described by a [`Layout`];
//! embedding tables sit after the network region so gradient sinks can keep
//! them sparse.

mod forward;
mod loss;

pub use forward::{
    aggregate_bipartite, aggregate_social, aggregate_strategy_context, encode_strategy,
    encode_user, eval_rating_from_latent, eval_user_latent, predict_for_eval, predict_rating,
    reconstruct_exposure, reconstruct_social_edge, GumbelNoise,
};
pub use loss::{
    assemble_batch, compute_loss, loss_terms, total_loss, Batch, BatchConfig, BatchSample,
    LossTerms,
};

use std::collections::HashMap;
use std::io::BufReader;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeedbackKind, IdMaps};
use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SocialAgg {
    /// Aggregate neighbor embeddings (the reading consistent with graph
    /// attention; default).
    Neighbor,
    /// Literal reading: attention-weighted rescaling of the user's own
    /// embedding.
    SelfRescale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    /// Drops the latent strategy pathway: no strategy encoder, no KL term,
    /// zeros in place of the strategy input to the exposure decoder.
    RestS,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_users: u32,
    pub num_items: u32,
    pub rating_levels: u8,
    pub feedback: FeedbackKind,
    /// User/item embedding width d.
    pub embed_dim: usize,
    /// Rating-level embedding width.
    pub rating_dim: usize,
    /// Hidden width of every scorer/head MLP.
    pub hidden_dim: usize,
    /// Number of categorical strategy blocks B.
    pub strategy_blocks: usize,
    /// Categories per block C.
    pub strategy_cats: usize,
    pub leaky_slope: f64,
    pub social_agg: SocialAgg,
    pub ablation: Ablation,
    /// Seed used for parameter initialization (uniform +-1/sqrt(fan_in)).
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(num_users: u32, num_items: u32, rating_levels: u8, feedback: FeedbackKind) -> Self {
        ModelConfig {
            num_users,
            num_items,
            rating_levels,
            feedback,
            embed_dim: 64,
            rating_dim: 8,
            hidden_dim: 128,
            strategy_blocks: 16,
            strategy_cats: 4,
            leaky_slope: 0.2,
            social_agg: SocialAgg::Neighbor,
            ablation: Ablation::Full,
            init_seed: 1,
        }
    }

    pub fn strategy_dim(&self) -> usize {
        self.strategy_blocks * self.strategy_cats
    }

    /// Dimension of an aggregated item context vector (v concat r).
    pub fn item_ctx_dim(&self) -> usize {
        self.embed_dim + self.rating_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.rating_dim == 0
            || self.hidden_dim == 0
            || self.strategy_blocks == 0
            || self.strategy_cats < 2
        {
            return Err(Error::Validation(
                "model dimensions must be positive (and strategy_cats >= 2)".into(),
            ));
        }
        if self.num_users == 0 || self.num_items == 0 || self.rating_levels == 0 {
            return Err(Error::Validation("empty id space".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum InitKind {
    /// Uniform +-1/sqrt(fan_in).
    Fan(usize),
    Zero,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockView {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockView {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offsets of every named parameter block in the flat vector.
#[derive(Debug, Clone)]
pub struct Layout {
    blocks: Vec<(String, BlockView, InitKind)>,
    by_name: HashMap<String, usize>,
    pub net_len: usize,
    pub total_len: usize,
    user_emb: BlockView,
    item_emb: BlockView,
    rating_emb: BlockView,
    embed_dim: usize,
    rating_dim: usize,
}

impl Layout {
    pub fn build(cfg: &ModelConfig) -> Layout {
        let d = cfg.embed_dim;
        let dr = cfg.rating_dim;
        let h = cfg.hidden_dim;
        let sdim = cfg.strategy_dim();
        let ctx = cfg.item_ctx_dim();

        let mut blocks: Vec<(String, BlockView, InitKind)> = Vec::new();
        let mut off = 0usize;
        let add = |blocks: &mut Vec<(String, BlockView, InitKind)>,
                       off: &mut usize,
                       name: &str,
                       rows: usize,
                       cols: usize,
                       init: InitKind| {
            let view = BlockView { offset: *off, rows, cols };
            blocks.push((name.to_string(), view, init));
            *off += rows * cols;
        };
        let mlp = |blocks: &mut Vec<(String, BlockView, InitKind)>,
                   off: &mut usize,
                   prefix: &str,
                   input: usize,
                   output: usize| {
            let mut a = |n: String, rows, cols, init| {
                let view = BlockView { offset: *off, rows, cols };
                blocks.push((n, view, init));
                *off += rows * cols;
            };
            a(format!("{prefix}.w1"), h, input, InitKind::Fan(input));
            a(format!("{prefix}.b1"), h, 1, InitKind::Zero);
            a(format!("{prefix}.w2"), output, h, InitKind::Fan(h));
            a(format!("{prefix}.b2"), output, 1, InitKind::Zero);
        };

        // Attention scorers: score(u, v, r) and score(u, u').
        mlp(&mut blocks, &mut off, "bip", d + ctx, 1);
        mlp(&mut blocks, &mut off, "soc", 2 * d, 1);
        mlp(&mut blocks, &mut off, "ctx", d + ctx, 1);
        // Exposure-specific user heads g0/g1: (h_b concat h_s) -> d.
        mlp(&mut blocks, &mut off, "g0", ctx + d, d);
        mlp(&mut blocks, &mut off, "g1", ctx + d, d);
        // Exposure-specific strategy heads phi0/phi1: (h_d concat v) -> B*C.
        mlp(&mut blocks, &mut off, "phi0", ctx + d, sdim);
        mlp(&mut blocks, &mut off, "phi1", ctx + d, sdim);
        // Exposure decoder f_e: (h_u, v, s) -> logit.
        mlp(&mut blocks, &mut off, "fe", d + d + sdim, 1);
        // Exposure-specific rating heads f0/f1: (h_u, v) -> score.
        mlp(&mut blocks, &mut off, "f0", 2 * d, 1);
        mlp(&mut blocks, &mut off, "f1", 2 * d, 1);
        // Learned aggregates for isolated nodes.
        add(&mut blocks, &mut off, "default_hb", ctx, 1, InitKind::Zero);
        add(&mut blocks, &mut off, "default_hs", d, 1, InitKind::Zero);
        add(&mut blocks, &mut off, "default_hd", ctx, 1, InitKind::Zero);

        let net_len = off;
        add(
            &mut blocks,
            &mut off,
            "emb.user",
            cfg.num_users as usize,
            d,
            InitKind::Fan(d),
        );
        add(
            &mut blocks,
            &mut off,
            "emb.item",
            cfg.num_items as usize,
            d,
            InitKind::Fan(d),
        );
        add(
            &mut blocks,
            &mut off,
            "emb.rating",
            cfg.rating_levels as usize,
            dr,
            InitKind::Fan(dr),
        );
        let total_len = off;

        let by_name = blocks
            .iter()
            .enumerate()
            .map(|(i, (n, _, _))| (n.clone(), i))
            .collect();
        let find = |blocks: &[(String, BlockView, InitKind)], n: &str| {
            blocks.iter().find(|(name, _, _)| name == n).unwrap().1
        };
        Layout {
            user_emb: find(&blocks, "emb.user"),
            item_emb: find(&blocks, "emb.item"),
            rating_emb: find(&blocks, "emb.rating"),
            blocks,
            by_name,
            net_len,
            total_len,
            embed_dim: d,
            rating_dim: dr,
        }
    }

    pub fn view(&self, name: &str) -> BlockView {
        self.blocks[self.by_name[name]].1
    }

    /// (offset, len) of a user embedding row.
    pub fn user_row(&self, user: u32) -> (usize, usize) {
        debug_assert!((user as usize) < self.user_emb.rows);
        (
            self.user_emb.offset + user as usize * self.embed_dim,
            self.embed_dim,
        )
    }

    pub fn item_row(&self, item: u32) -> (usize, usize) {
        debug_assert!((item as usize) < self.item_emb.rows);
        (
            self.item_emb.offset + item as usize * self.embed_dim,
            self.embed_dim,
        )
    }

    /// Rating levels are 1-based.
    pub fn rating_row(&self, level: u8) -> (usize, usize) {
        debug_assert!(level >= 1 && (level as usize) <= self.rating_emb.rows);
        (
            self.rating_emb.offset + (level as usize - 1) * self.rating_dim,
            self.rating_dim,
        )
    }
}

/// A latent strategy draw: per-block logits, the relaxed (simplex) sample, and
/// the per-block argmax code.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyCode {
    /// B*C pre-relaxation logits.
    pub logits: Vec<f64>,
    /// B*C relaxed probabilities; each C-block sums to 1.
    pub relaxed: Vec<f64>,
    /// B argmax categories of the relaxed blocks.
    pub hard: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl Model {
    /// Seeded init: matrices and embeddings uniform +-1/sqrt(fan_in), biases
    /// and default aggregates zero. Each exposure-specific head pair starts
    /// from the same draw: if the two branches began at different random
    /// points, the exposure decoder could read the exposure bit straight off
    /// the branch signature of h_u and the strategy pathway would never
    /// receive gradient; identical starts force it to separate exposures
    /// through its actual inputs.
    pub fn init(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let layout = Layout::build(&cfg);
        let mut params = vec![0.0; layout.total_len];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        for (_, view, init) in &layout.blocks {
            if let InitKind::Fan(fan_in) = init {
                let bound = 1.0 / (*fan_in as f64).sqrt();
                for p in &mut params[view.offset..view.offset + view.len()] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        for (zero, one) in [("g0", "g1"), ("phi0", "phi1"), ("f0", "f1")] {
            for part in [".w1", ".b1", ".w2", ".b2"] {
                let src = layout.view(&format!("{one}{part}"));
                let dst = layout.view(&format!("{zero}{part}"));
                let row: Vec<f64> = params[src.offset..src.offset + src.len()].to_vec();
                params[dst.offset..dst.offset + dst.len()].copy_from_slice(&row);
            }
        }
        Ok(Model { cfg, layout, params })
    }

    pub fn zeroed(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let layout = Layout::build(&cfg);
        let params = vec![0.0; layout.total_len];
        Ok(Model { cfg, layout, params })
    }

    pub fn block(&self, name: &str) -> &[f64] {
        let v = self.layout.view(name);
        &self.params[v.offset..v.offset + v.len()]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [f64] {
        let v = self.layout.view(name);
        &mut self.params[v.offset..v.offset + v.len()]
    }

    pub fn user_embedding(&self, user: u32) -> &[f64] {
        let (off, len) = self.layout.user_row(user);
        &self.params[off..off + len]
    }

    pub fn item_embedding(&self, item: u32) -> &[f64] {
        let (off, len) = self.layout.item_row(item);
        &self.params[off..off + len]
    }

    pub fn rating_embedding(&self, level: u8) -> &[f64] {
        let (off, len) = self.layout.rating_row(level);
        &self.params[off..off + len]
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        Ok(())
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned parameter container persisted between `train` and downstream
/// commands. Loading a mismatched version fails loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub id_maps: IdMaps,
}

impl Checkpoint {
    pub fn from_model(model: &Model, id_maps: IdMaps) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.cfg.clone(),
            params: model.params.clone(),
            id_maps,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let layout = Layout::build(&ckpt.config);
        if ckpt.params.len() != layout.total_len {
            return Err(Error::Validation(format!(
                "checkpoint holds {} parameters but the config implies {}",
                ckpt.params.len(),
                layout.total_len
            )));
        }
        Ok(ckpt)
    }

    pub fn into_model(self) -> Result<(Model, IdMaps)> {
        let layout = Layout::build(&self.config);
        Ok((
            Model {
                cfg: self.config,
                layout,
                params: self.params,
            },
            self.id_maps,
        ))
    }
}
