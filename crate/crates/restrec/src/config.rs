//! Run configuration: a flat `key = value` text format with dotted keys,
//! lossless round-tripping, and command-line overrides. The full key
//! reference lives in the README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{SplitSpec, TsvFormat};
use crate::error::Error;
use crate::model::{Ablation, BatchConfig, ModelConfig, SocialAgg};
use crate::train::TrainConfig;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ratings_path: PathBuf,
    pub social_path: Option<PathBuf>,
    pub format: TsvFormat,
    pub out_dir: PathBuf,
    pub split: SplitSpec,
    /// Minimum neighbor exposures for the counterfactual item set.
    pub pool_beta: u32,
    /// Per-user counterfactual cap; None balances against |C(u)|.
    pub pool_cap: Option<usize>,
    pub pool_seed: u64,
    pub eval_negatives: usize,
    pub eval_seed: u64,
    pub eval_k: Vec<usize>,
    pub embed_dim: usize,
    pub rating_dim: usize,
    pub hidden_dim: usize,
    pub strategy_blocks: usize,
    pub strategy_cats: usize,
    pub leaky_slope: f64,
    pub social_agg: SocialAgg,
    pub ablation: Ablation,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ratings_path: PathBuf::from("ratings.tsv"),
            social_path: None,
            format: TsvFormat::TsvExplicit,
            out_dir: PathBuf::from("run"),
            split: SplitSpec::default(),
            pool_beta: 2,
            pool_cap: None,
            pool_seed: 7,
            eval_negatives: 99,
            eval_seed: 13,
            eval_k: vec![5, 10, 20],
            embed_dim: 64,
            rating_dim: 8,
            hidden_dim: 128,
            strategy_blocks: 16,
            strategy_cats: 4,
            leaky_slope: 0.2,
            social_agg: SocialAgg::Neighbor,
            ablation: Ablation::Full,
            train: TrainConfig::default(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Validation(format!("{key}: cannot parse `{s}`")))
        })
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |key: &str, v: &str| Error::Validation(format!("{key}: cannot parse `{v}`"));
        macro_rules! num {
            ($t:ty) => {
                v.parse::<$t>().map_err(|_| bad(key, v))?
            };
        }
        match key {
            "data.ratings" => self.ratings_path = PathBuf::from(v),
            "data.social" => {
                self.social_path = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "data.format" => {
                self.format = match v {
                    "tsv-explicit" => TsvFormat::TsvExplicit,
                    "tsv-implicit" => TsvFormat::TsvImplicit,
                    _ => return Err(bad(key, v)),
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "split.train_fraction" => self.split.train_fraction = num!(f64),
            "split.val_fraction" => self.split.val_fraction = num!(f64),
            "split.test_fraction" => self.split.test_fraction = num!(f64),
            "split.seed" => self.split.seed = num!(u64),
            "pool.beta" => self.pool_beta = num!(u32),
            "pool.cap_per_user" => {
                self.pool_cap = if v.is_empty() { None } else { Some(num!(usize)) }
            }
            "pool.seed" => self.pool_seed = num!(u64),
            "eval.n_negatives" => self.eval_negatives = num!(usize),
            "eval.seed" => self.eval_seed = num!(u64),
            "eval.k" => self.eval_k = parse_list(v, key)?,
            "model.embed_dim" => self.embed_dim = num!(usize),
            "model.rating_dim" => self.rating_dim = num!(usize),
            "model.hidden_dim" => self.hidden_dim = num!(usize),
            "model.strategy_blocks" => self.strategy_blocks = num!(usize),
            "model.strategy_cats" => self.strategy_cats = num!(usize),
            "model.leaky_slope" => self.leaky_slope = num!(f64),
            "model.social_agg" => {
                self.social_agg = match v {
                    "neighbor" => SocialAgg::Neighbor,
                    "self" => SocialAgg::SelfRescale,
                    _ => return Err(bad(key, v)),
                }
            }
            "model.ablation" => {
                self.ablation = match v {
                    "full" => Ablation::Full,
                    "rest-s" => Ablation::RestS,
                    _ => return Err(bad(key, v)),
                }
            }
            "train.batch_size" => self.train.batch.batch_size = num!(usize),
            "train.fanout_items" => self.train.batch.fanout_items = num!(usize),
            "train.fanout_social" => self.train.batch.fanout_social = num!(usize),
            "train.counterfactual_ratio" => self.train.batch.counterfactual_ratio = num!(f64),
            "train.learning_rate" => self.train.learning_rate = num!(f64),
            "train.lr_grid" => self.train.lr_grid = parse_list(v, key)?,
            "train.gamma" => self.train.gamma = num!(f64),
            "train.tau_start" => self.train.tau_start = num!(f64),
            "train.tau_decay" => self.train.tau_decay = num!(f64),
            "train.tau_min" => self.train.tau_min = num!(f64),
            "train.max_steps" => self.train.max_steps = num!(usize),
            "train.patience_steps" => self.train.patience_steps = num!(usize),
            "train.eval_every" => self.train.eval_every = num!(usize),
            "train.seed" => self.train.seed = num!(u64),
            "train.grad_chunks" => self.train.grad_chunks = num!(usize),
            "train.val_k" => self.train.val_k = num!(usize),
            _ => return Err(Error::Validation(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical flat text form (sorted keys).
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("data.ratings", self.ratings_path.display().to_string());
        kv.insert(
            "data.social",
            self.social_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv.insert(
            "data.format",
            match self.format {
                TsvFormat::TsvExplicit => "tsv-explicit".into(),
                TsvFormat::TsvImplicit => "tsv-implicit".into(),
            },
        );
        kv.insert("out_dir", self.out_dir.display().to_string());
        kv.insert("split.train_fraction", format!("{}", self.split.train_fraction));
        kv.insert("split.val_fraction", format!("{}", self.split.val_fraction));
        kv.insert("split.test_fraction", format!("{}", self.split.test_fraction));
        kv.insert("split.seed", format!("{}", self.split.seed));
        kv.insert("pool.beta", format!("{}", self.pool_beta));
        kv.insert(
            "pool.cap_per_user",
            self.pool_cap.map(|c| c.to_string()).unwrap_or_default(),
        );
        kv.insert("pool.seed", format!("{}", self.pool_seed));
        kv.insert("eval.n_negatives", format!("{}", self.eval_negatives));
        kv.insert("eval.seed", format!("{}", self.eval_seed));
        kv.insert(
            "eval.k",
            self.eval_k.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert("model.embed_dim", format!("{}", self.embed_dim));
        kv.insert("model.rating_dim", format!("{}", self.rating_dim));
        kv.insert("model.hidden_dim", format!("{}", self.hidden_dim));
        kv.insert("model.strategy_blocks", format!("{}", self.strategy_blocks));
        kv.insert("model.strategy_cats", format!("{}", self.strategy_cats));
        kv.insert("model.leaky_slope", format!("{}", self.leaky_slope));
        kv.insert(
            "model.social_agg",
            match self.social_agg {
                SocialAgg::Neighbor => "neighbor".into(),
                SocialAgg::SelfRescale => "self".into(),
            },
        );
        kv.insert(
            "model.ablation",
            match self.ablation {
                Ablation::Full => "full".into(),
                Ablation::RestS => "rest-s".into(),
            },
        );
        kv.insert("train.batch_size", format!("{}", self.train.batch.batch_size));
        kv.insert("train.fanout_items", format!("{}", self.train.batch.fanout_items));
        kv.insert("train.fanout_social", format!("{}", self.train.batch.fanout_social));
        kv.insert(
            "train.counterfactual_ratio",
            format!("{}", self.train.batch.counterfactual_ratio),
        );
        kv.insert("train.learning_rate", format!("{}", self.train.learning_rate));
        kv.insert(
            "train.lr_grid",
            self.train.lr_grid.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert("train.gamma", format!("{}", self.train.gamma));
        kv.insert("train.tau_start", format!("{}", self.train.tau_start));
        kv.insert("train.tau_decay", format!("{}", self.train.tau_decay));
        kv.insert("train.tau_min", format!("{}", self.train.tau_min));
        kv.insert("train.max_steps", format!("{}", self.train.max_steps));
        kv.insert("train.patience_steps", format!("{}", self.train.patience_steps));
        kv.insert("train.eval_every", format!("{}", self.train.eval_every));
        kv.insert("train.seed", format!("{}", self.train.seed));
        kv.insert("train.grad_chunks", format!("{}", self.train.grad_chunks));
        kv.insert("train.val_k", format!("{}", self.train.val_k));
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Validation(format!(
                    "config line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        RunConfig::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display(), e))
    }

    /// Model config for a given id space.
    pub fn model_config(&self, num_users: u32, num_items: u32, rating_levels: u8) -> ModelConfig {
        ModelConfig {
            num_users,
            num_items,
            rating_levels,
            feedback: match self.format {
                TsvFormat::TsvExplicit => crate::data::FeedbackKind::Explicit,
                TsvFormat::TsvImplicit => crate::data::FeedbackKind::Implicit,
            },
            embed_dim: self.embed_dim,
            rating_dim: self.rating_dim,
            hidden_dim: self.hidden_dim,
            strategy_blocks: self.strategy_blocks,
            strategy_cats: self.strategy_cats,
            leaky_slope: self.leaky_slope,
            social_agg: self.social_agg,
            ablation: self.ablation,
            init_seed: self.train.seed,
        }
    }

    pub fn batch_config(&self) -> BatchConfig {
        self.train.batch
    }
}
