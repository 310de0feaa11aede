//! Rating-error and top-K ranking metrics, plus the evaluation drivers for
//! explicit (MAE/RMSE) and implicit (HR@K/NDCG@K, single held-out positive
//! against sampled negatives) protocols.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EvalNegatives, FeedbackKind};
use crate::error::Error;
use crate::graph::GraphStore;
use crate::model::{eval_rating_from_latent, eval_user_latent, Model};
use crate::Result;

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds, targets)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds, targets)?;
    Ok((preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
        .sqrt())
}

fn check_lengths(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Precondition(format!(
            "prediction/target lengths {} vs {} (must match, nonzero)",
            preds.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// 1-based rank of the positive among scored candidates (descending score,
/// ties broken by ascending item id for determinism).
pub fn rank_of_positive(scored: &[(u32, f64)], positive: u32) -> Result<usize> {
    let pos = scored
        .iter()
        .find(|(item, _)| *item == positive)
        .ok_or_else(|| Error::Precondition(format!("positive {positive} not in candidates")))?;
    let (p_item, p_score) = *pos;
    let mut rank = 1;
    for &(item, score) in scored {
        if item == p_item {
            continue;
        }
        if score > p_score || (score == p_score && item < p_item) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// 1 iff the positive ranks within the top K.
pub fn hr_at_k(scored: &[(u32, f64)], positive: u32, k: usize) -> Result<f64> {
    check_k(scored, k)?;
    let rank = rank_of_positive(scored, positive)?;
    Ok(if rank <= k { 1.0 } else { 0.0 })
}

/// Single-positive NDCG: 1/log2(rank+1) within the top K, else 0.
pub fn ndcg_at_k(scored: &[(u32, f64)], positive: u32, k: usize) -> Result<f64> {
    check_k(scored, k)?;
    let rank = rank_of_positive(scored, positive)?;
    Ok(if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    })
}

fn check_k(scored: &[(u32, f64)], k: usize) -> Result<()> {
    if k == 0 || k > scored.len() {
        return Err(Error::Precondition(format!(
            "K={k} outside 1..={}",
            scored.len()
        )));
    }
    Ok(())
}

/// Per-metric mean and standard deviation (over seeds when aggregated).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    /// Metric name -> (mean, std over runs).
    pub metrics: BTreeMap<String, (f64, f64)>,
    pub k_values: Vec<usize>,
    pub evaluated_records: usize,
    pub skipped_records: usize,
    pub num_runs: usize,
}

impl MetricReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MetricReport> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|(m, _)| *m)
    }

    /// Mean and std per metric across several single-run reports.
    pub fn aggregate(reports: &[MetricReport]) -> MetricReport {
        assert!(!reports.is_empty());
        let mut metrics = BTreeMap::new();
        for name in reports[0].metrics.keys() {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(name)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            metrics.insert(name.clone(), (mean, var.sqrt()));
        }
        MetricReport {
            metrics,
            k_values: reports[0].k_values.clone(),
            evaluated_records: reports[0].evaluated_records,
            skipped_records: reports[0].skipped_records,
            num_runs: reports.len(),
        }
    }
}

/// Anything that can score a (user, item) pair at evaluation time.
pub trait Scorer {
    fn score(&self, user: u32, item: u32) -> Result<f64>;
}

/// Model-backed scorer with per-user latent caching (the latent depends only
/// on the user and the frozen train graph).
pub struct ModelScorer<'a> {
    model: &'a Model,
    graph: &'a GraphStore,
    cache: std::cell::RefCell<std::collections::HashMap<u32, Vec<f64>>>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, graph: &'a GraphStore) -> Self {
        ModelScorer {
            model,
            graph,
            cache: Default::default(),
        }
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, user: u32, item: u32) -> Result<f64> {
        if user >= self.model.cfg.num_users || item >= self.model.cfg.num_items {
            return Err(Error::Validation(format!(
                "unknown user {user} or item {item}"
            )));
        }
        let mut cache = self.cache.borrow_mut();
        let latent = cache
            .entry(user)
            .or_insert_with(|| eval_user_latent(self.model, self.graph, user));
        Ok(eval_rating_from_latent(self.model, latent, item))
    }
}

/// Evaluate a scorer over an eval split. Explicit feedback: MAE/RMSE over all
/// records. Implicit: per-record candidate ranking averaged into HR@K/NDCG@K.
pub fn evaluate(
    scorer: &impl Scorer,
    eval: &Dataset,
    negatives: Option<&EvalNegatives>,
    k_values: &[usize],
) -> Result<MetricReport> {
    let mut metrics = BTreeMap::new();
    let mut skipped = 0usize;
    let mut evaluated = 0usize;
    match eval.feedback {
        FeedbackKind::Explicit => {
            let mut preds = Vec::with_capacity(eval.interactions.len());
            let mut targets = Vec::with_capacity(eval.interactions.len());
            for rec in &eval.interactions {
                preds.push(scorer.score(rec.user, rec.item)?);
                targets.push(rec.rating as f64);
            }
            evaluated = preds.len();
            metrics.insert("mae".to_string(), (mae(&preds, &targets)?, 0.0));
            metrics.insert("rmse".to_string(), (rmse(&preds, &targets)?, 0.0));
        }
        FeedbackKind::Implicit => {
            let negatives = negatives.ok_or_else(|| {
                Error::Precondition("implicit evaluation needs a negatives map".into())
            })?;
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            for (idx, rec) in eval.interactions.iter().enumerate() {
                let Some(cands) = negatives.candidates.get(&idx) else {
                    skipped += 1;
                    continue;
                };
                let mut scored = Vec::with_capacity(cands.len());
                for &item in cands {
                    scored.push((item, scorer.score(rec.user, item)?));
                }
                for &k in k_values {
                    *sums.entry(format!("hr@{k}")).or_default() +=
                        hr_at_k(&scored, rec.item, k)?;
                    *sums.entry(format!("ndcg@{k}")).or_default() +=
                        ndcg_at_k(&scored, rec.item, k)?;
                }
                evaluated += 1;
            }
            if evaluated == 0 {
                return Err(Error::Validation("no evaluable records".into()));
            }
            for (name, sum) in sums {
                metrics.insert(name, (sum / evaluated as f64, 0.0));
            }
        }
    }
    Ok(MetricReport {
        metrics,
        k_values: k_values.to_vec(),
        evaluated_records: evaluated,
        skipped_records: skipped,
        num_runs: 1,
    })
}
