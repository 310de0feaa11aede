//! Stochastic-gradient training: adaptive-moment updates over the flat
//! parameter vector, counterfactual batch mixing, cadence-based validation
//! with early stopping, and the learning-rate grid driver.

use serde::{Deserialize, Serialize};

use crate::autodiff::GradSink;
use crate::data::{Dataset, EvalNegatives, FeedbackKind};
use crate::error::Error;
use crate::graph::{CounterfactualSample, GraphStore};
use crate::metrics::{evaluate, ModelScorer};
use crate::model::{assemble_batch, compute_loss, BatchConfig, LossTerms, Model, ModelConfig};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: BatchConfig,
    pub learning_rate: f64,
    /// Candidate learning rates for `grid_search`.
    pub lr_grid: Vec<f64>,
    /// L2 weight.
    pub gamma: f64,
    /// Gumbel temperature at step 0.
    pub tau_start: f64,
    /// Per-step multiplicative temperature decay (1.0 = fixed).
    pub tau_decay: f64,
    pub tau_min: f64,
    pub max_steps: usize,
    /// Stop after this many steps without validation improvement.
    pub patience_steps: usize,
    /// Validation cadence in steps.
    pub eval_every: usize,
    pub seed: u64,
    /// Fixed number of gradient-accumulation slices per batch.
    pub grad_chunks: usize,
    /// K used for the implicit-feedback validation metric (HR@K).
    pub val_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: BatchConfig::default(),
            learning_rate: 1e-3,
            lr_grid: vec![0.001, 0.0009, 0.0008, 0.0007, 0.0006, 0.0005, 0.0004, 0.0003, 0.0002, 0.0001],
            gamma: 1e-5,
            tau_start: 0.5,
            tau_decay: 1.0,
            tau_min: 0.1,
            max_steps: 20_000,
            patience_steps: 1500,
            eval_every: 100,
            seed: 42,
            grad_chunks: 4,
            val_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if self.patience_steps == 0 {
            return Err(Error::Validation("patience_steps must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Validation("eval_every must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn tau_at(&self, step: usize) -> f64 {
        (self.tau_start * self.tau_decay.powi(step as i32)).max(self.tau_min)
    }
}

/// Adam with bias correction over the flat parameter vector.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// One line per training step; `val_metric` is set at evaluation cadences.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub kl_s: f64,
    pub nll_social: f64,
    pub nll_exposure: f64,
    pub nll_rating: f64,
    pub reg: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut out = String::from("step,kl_s,nll_social,nll_exposure,nll_rating,reg,val_metric\n");
        for r in &self.records {
            let val = r.val_metric.map(|v| format!("{v:.17e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                r.step, r.kl_s, r.nll_social, r.nll_exposure, r.nll_rating, r.reg, val
            ));
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display(), e))
    }
}

/// Validation score with its comparison direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValScore {
    pub value: f64,
    pub higher_is_better: bool,
}

impl ValScore {
    pub fn better_than(&self, other: &ValScore) -> bool {
        if self.higher_is_better {
            self.value > other.value
        } else {
            self.value < other.value
        }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub best_val: ValScore,
    pub best_step: usize,
    pub log: TrainLog,
    pub stopped_at: usize,
}

fn validation_score(
    model: &Model,
    graph: &GraphStore,
    val: &Dataset,
    val_negs: Option<&EvalNegatives>,
    val_k: usize,
) -> Result<ValScore> {
    let scorer = ModelScorer::new(model, graph);
    match val.feedback {
        FeedbackKind::Explicit => {
            let report = evaluate(&scorer, val, None, &[])?;
            Ok(ValScore {
                value: report.get("rmse").unwrap(),
                higher_is_better: false,
            })
        }
        FeedbackKind::Implicit => {
            let report = evaluate(&scorer, val, val_negs, &[val_k])?;
            Ok(ValScore {
                value: report.get(&format!("hr@{val_k}")).unwrap(),
                higher_is_better: true,
            })
        }
    }
}

/// Train until the validation metric stops improving for `patience_steps`
/// steps (checked at `eval_every` cadences, including a step-0 baseline) or
/// `max_steps` is reached. Returns the best-scoring parameters.
pub fn train(
    model_cfg: ModelConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    graph: &GraphStore,
    pool: &[CounterfactualSample],
    val_negs: Option<&EvalNegatives>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.interactions.is_empty() {
        return Err(Error::Validation("empty train split".into()));
    }
    let mut model = Model::init(ModelConfig { init_seed: cfg.seed, ..model_cfg })?;
    let mut adam = Adam::new(model.params.len());
    let mut dense_grad = vec![0.0; model.params.len()];
    let mut log = TrainLog::default();

    let mut best_val = validation_score(&model, graph, val_ds, val_negs, cfg.val_k)?;
    let mut best_step = 0usize;
    let mut best_params = model.params.clone();
    log.records.push(LogRecord {
        step: 0,
        kl_s: 0.0,
        nll_social: 0.0,
        nll_exposure: 0.0,
        nll_rating: 0.0,
        reg: 0.0,
        val_metric: Some(best_val.value),
    });

    let mut stopped_at = cfg.max_steps;
    for step in 1..=cfg.max_steps {
        let batch_seed = cfg.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(step as u64);
        let batch = assemble_batch(graph, &train_ds.interactions, pool, &cfg.batch, batch_seed);
        let tau = cfg.tau_at(step);
        let mut sink = GradSink::new(model.layout.net_len);
        let terms = compute_loss(
            &model,
            &batch,
            tau,
            cfg.gamma,
            batch_seed ^ 0x5DEE_CE66_D0C9_BEEF,
            cfg.grad_chunks,
            Some(&mut sink),
        )?;
        terms.check_finite(step)?;
        dense_grad.iter_mut().for_each(|g| *g = 0.0);
        sink.scatter_into(&mut dense_grad);
        adam.step(&mut model.params, &dense_grad, cfg.learning_rate);

        let mut val_metric = None;
        if step % cfg.eval_every == 0 {
            let score = validation_score(&model, graph, val_ds, val_negs, cfg.val_k)?;
            val_metric = Some(score.value);
            if score.better_than(&best_val) {
                best_val = score;
                best_step = step;
                best_params.copy_from_slice(&model.params);
            }
        }
        log.records.push(LogRecord {
            step,
            kl_s: terms.kl_s,
            nll_social: terms.nll_social,
            nll_exposure: terms.nll_exposure,
            nll_rating: terms.nll_rating,
            reg: terms.reg,
            val_metric,
        });
        if step % cfg.eval_every == 0 && step - best_step >= cfg.patience_steps {
            stopped_at = step;
            break;
        }
    }
    model.params = best_params;
    model.assert_finite()?;
    Ok(TrainOutcome {
        model,
        best_val,
        best_step,
        log,
        stopped_at,
    })
}

/// Train one candidate per learning rate and keep the best validation score;
/// ties break toward the smaller rate, and a diverging candidate is scored as
/// worst rather than failing the search.
pub fn grid_search(
    model_cfg: &ModelConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    graph: &GraphStore,
    pool: &[CounterfactualSample],
    val_negs: Option<&EvalNegatives>,
    cfg: &TrainConfig,
) -> Result<(f64, TrainOutcome)> {
    if cfg.lr_grid.is_empty() {
        return Err(Error::Validation("empty learning-rate grid".into()));
    }
    let mut best: Option<(f64, TrainOutcome)> = None;
    for &lr in &cfg.lr_grid {
        let candidate_cfg = TrainConfig { learning_rate: lr, ..cfg.clone() };
        match train(model_cfg.clone(), train_ds, val_ds, graph, pool, val_negs, &candidate_cfg) {
            Ok(outcome) => {
                let replace = match &best {
                    None => true,
                    Some((best_lr, best_outcome)) => {
                        outcome.best_val.better_than(&best_outcome.best_val)
                            || (outcome.best_val == best_outcome.best_val && lr < *best_lr)
                    }
                };
                if replace {
                    best = Some((lr, outcome));
                }
            }
            Err(Error::Diverged { term, step }) => {
                eprintln!("lr {lr}: diverged at step {step} ({term}); scored as worst");
            }
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::Validation("every learning-rate candidate diverged".into()))
}

/// Convenience wrapper: one training step's loss on a fixed batch (used by
/// tests and the single-step descent check).
pub fn loss_on_fixed_batch(
    model: &Model,
    batch: &crate::model::Batch,
    cfg: &TrainConfig,
    noise_seed: u64,
) -> Result<LossTerms> {
    compute_loss(model, batch, cfg.tau_start, cfg.gamma, noise_seed, cfg.grad_chunks, None)
}
