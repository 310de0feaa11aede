//! End-to-end command implementations shared by the CLI and the Python
//! bindings: prepare, train, eval, simulate, visualize, and the multi-seed
//! driver. Every command persists its artifacts plus a config snapshot under
//! the configured output directory so a run is reproducible from the snapshot
//! alone.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{
    load_dataset, sample_eval_negatives, split_dataset, write_dataset_tsv, Dataset, EvalNegatives,
    FeedbackKind, IdMaps, SplitResult,
};
use crate::error::Error;
use crate::graph::{build_counterfactual_pool, write_pool_tsv, GraphStore};
use crate::metrics::{evaluate, MetricReport, ModelScorer};
use crate::model::Checkpoint;
use crate::scm::{self, ScmSpec};
use crate::train::{grid_search, train, TrainConfig, TrainOutcome};
use crate::viz::{build_heatmap, GroupingRule};
use crate::Result;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))
}

/// Everything derived deterministically from a run config's data section.
pub struct PreparedData {
    pub dataset: Dataset,
    pub id_maps: IdMaps,
    pub split: SplitResult,
    pub graph: GraphStore,
    pub pool: Vec<crate::graph::CounterfactualSample>,
    pub val_negatives: Option<EvalNegatives>,
    pub test_negatives: Option<EvalNegatives>,
}

/// Load, split, build the train graph and the counterfactual pool. Pure given
/// the config (no artifacts read), so downstream commands can re-derive the
/// exact prepared state from the config snapshot.
pub fn prepare_in_memory(cfg: &RunConfig) -> Result<PreparedData> {
    let (dataset, id_maps, _report) =
        load_dataset(&cfg.ratings_path, cfg.social_path.as_deref(), cfg.format)?;
    let split = split_dataset(&dataset, &cfg.split)?;
    let graph = GraphStore::build(&split.train);
    let pool = build_counterfactual_pool(&graph, cfg.pool_beta, cfg.pool_cap, cfg.pool_seed);
    let (val_negatives, test_negatives) = match dataset.feedback {
        FeedbackKind::Implicit => (
            Some(sample_eval_negatives(
                &split.train,
                &split.val,
                cfg.eval_negatives,
                cfg.eval_seed,
            )?),
            Some(sample_eval_negatives(
                &split.train,
                &split.test,
                cfg.eval_negatives,
                cfg.eval_seed.wrapping_add(1),
            )?),
        ),
        FeedbackKind::Explicit => (None, None),
    };
    Ok(PreparedData {
        dataset,
        id_maps,
        split,
        graph,
        pool,
        val_negatives,
        test_negatives,
    })
}

pub struct PrepareArtifacts {
    pub manifest_path: PathBuf,
    pub id_maps_path: PathBuf,
    pub pool_path: PathBuf,
    pub summary: String,
}

/// `prepare`: write the split manifest, id maps and counterfactual pool.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareArtifacts> {
    ensure_dir(&cfg.out_dir)?;
    let prep = prepare_in_memory(cfg)?;
    let manifest_path = cfg.out_dir.join("split_manifest.txt");
    prep.split.manifest.save(&manifest_path)?;
    let id_maps_path = cfg.out_dir.join("id_maps.json");
    prep.id_maps.save(&id_maps_path)?;
    let pool_path = cfg.out_dir.join("pool.tsv");
    write_pool_tsv(&prep.pool, &pool_path)?;
    cfg.save(&cfg.out_dir.join("config_snapshot.conf"))?;
    let summary = format!(
        "users={} items={} interactions={} social_edges={} | split {}/{}/{} (moved {}) | pool={}",
        prep.dataset.num_users,
        prep.dataset.num_items,
        prep.dataset.interactions.len(),
        prep.dataset.social_edges.len() / 2,
        prep.split.train.interactions.len(),
        prep.split.val.interactions.len(),
        prep.split.test.interactions.len(),
        prep.split.moved_to_train,
        prep.pool.len(),
    );
    Ok(PrepareArtifacts {
        manifest_path,
        id_maps_path,
        pool_path,
        summary,
    })
}

fn require_prepare_artifacts(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg.out_dir.join("split_manifest.txt");
    if !manifest.exists() {
        return Err(Error::Validation(format!(
            "missing prepare artifact {} (run `prepare` first)",
            manifest.display()
        )));
    }
    Ok(())
}

pub struct TrainArtifacts {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub outcome: TrainOutcome,
    pub selected_lr: f64,
}

/// `train`: fit on the prepared split, keep the best-validation checkpoint.
/// With `use_grid`, sweep the configured learning-rate grid.
pub fn cmd_train(cfg: &RunConfig, use_grid: bool) -> Result<TrainArtifacts> {
    require_prepare_artifacts(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let prep = prepare_in_memory(cfg)?;
    let model_cfg = cfg.model_config(
        prep.dataset.num_users,
        prep.dataset.num_items,
        prep.dataset.rating_levels,
    );
    let (selected_lr, outcome) = if use_grid {
        grid_search(
            &model_cfg,
            &prep.split.train,
            &prep.split.val,
            &prep.graph,
            &prep.pool,
            prep.val_negatives.as_ref(),
            &cfg.train,
        )?
    } else {
        (
            cfg.train.learning_rate,
            train(
                model_cfg,
                &prep.split.train,
                &prep.split.val,
                &prep.graph,
                &prep.pool,
                prep.val_negatives.as_ref(),
                &cfg.train,
            )?,
        )
    };
    let checkpoint_path = cfg.out_dir.join("checkpoint.json");
    Checkpoint::from_model(&outcome.model, prep.id_maps.clone()).save(&checkpoint_path)?;
    let log_path = cfg.out_dir.join("train_log.csv");
    outcome.log.save(&log_path)?;
    cfg.save(&cfg.out_dir.join("config_snapshot.conf"))?;
    Ok(TrainArtifacts {
        checkpoint_path,
        log_path,
        outcome,
        selected_lr,
    })
}

/// `eval`: score the checkpoint on the test split and write the report.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<(PathBuf, MetricReport)> {
    ensure_dir(&cfg.out_dir)?;
    let prep = prepare_in_memory(cfg)?;
    let (model, _maps) = Checkpoint::load(checkpoint_path)?.into_model()?;
    if model.cfg.num_users != prep.dataset.num_users
        || model.cfg.num_items != prep.dataset.num_items
    {
        return Err(Error::Validation(format!(
            "checkpoint id space {}x{} does not match dataset {}x{}",
            model.cfg.num_users,
            model.cfg.num_items,
            prep.dataset.num_users,
            prep.dataset.num_items
        )));
    }
    let scorer = ModelScorer::new(&model, &prep.graph);
    let report = evaluate(
        &scorer,
        &prep.split.test,
        prep.test_negatives.as_ref(),
        &cfg.eval_k,
    )?;
    let path = cfg.out_dir.join("metrics.json");
    report.save(&path)?;
    Ok((path, report))
}

pub struct SimulateArtifacts {
    pub ratings_path: PathBuf,
    pub social_path: PathBuf,
    pub ledger_path: PathBuf,
    pub report_path: PathBuf,
    pub max_discrepancy: f64,
    pub max_bias: f64,
    pub logged: usize,
}

/// `simulate`: generate a synthetic exposure-biased dataset and write the
/// identification-identity report for every (G, v) cell.
pub fn cmd_simulate(spec: &ScmSpec, out_dir: &Path) -> Result<SimulateArtifacts> {
    ensure_dir(out_dir)?;
    let syn = scm::generate(spec)?;
    let ratings_path = out_dir.join("synthetic_ratings.tsv");
    let social_path = out_dir.join("synthetic_social.tsv");
    write_dataset_tsv(&syn.dataset, None, &ratings_path, &social_path)?;
    let ledger_path = out_dir.join("synthetic_ledger.tsv");
    scm::write_ledger_tsv(&syn.ledger, &ledger_path)?;
    spec.save(&out_dir.join("scm_spec.json"))?;

    let mut cells = Vec::new();
    let mut max_discrepancy = 0.0f64;
    let mut max_bias = 0.0f64;
    for g in 0..spec.g_card {
        for v in 0..spec.v_card {
            let res = scm::exact_interventional(spec, g, v)?;
            let bias = scm::measure_selection_bias(spec, g, v)?;
            max_discrepancy = max_discrepancy.max(res.max_discrepancy);
            max_bias = max_bias.max(bias);
            cells.push(serde_json::json!({
                "g": g,
                "v": v,
                "interventional": res.mutilated,
                "adjustment": res.adjustment,
                "skipped_cells": res.skipped_cells,
                "max_discrepancy": res.max_discrepancy,
                "selection_bias_tv": bias,
            }));
        }
    }
    let report = serde_json::json!({
        "logged_interactions": syn.dataset.interactions.len(),
        "raw_logged_tuples": syn.raw_log.len(),
        "max_adjustment_discrepancy": max_discrepancy,
        "max_selection_bias_tv": max_bias,
        "cells": cells,
    });
    let report_path = out_dir.join("scm_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(report_path.display(), e))?;
    Ok(SimulateArtifacts {
        ratings_path,
        social_path,
        ledger_path,
        report_path,
        max_discrepancy,
        max_bias,
        logged: syn.dataset.interactions.len(),
    })
}

/// `visualize`: per-group hard strategy codes as CSV and PNG.
pub fn cmd_visualize(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    bucket_seconds: i64,
    cell_px: usize,
) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(&cfg.out_dir)?;
    let prep = prepare_in_memory(cfg)?;
    let (model, _maps) = Checkpoint::load(checkpoint_path)?.into_model()?;
    let heatmap = build_heatmap(
        &model,
        &prep.graph,
        &prep.dataset.interactions,
        &GroupingRule::TimestampBucket { bucket_seconds },
    )?;
    let csv_path = cfg.out_dir.join("strategy_heatmap.csv");
    let png_path = cfg.out_dir.join("strategy_heatmap.png");
    heatmap.write_csv(&csv_path)?;
    heatmap.write_png(&png_path, cell_px)?;
    Ok((csv_path, png_path))
}

/// `seeds`: run train+eval over `n_seeds` consecutive seeds and aggregate
/// mean and standard deviation per metric.
pub fn cmd_seeds(cfg: &RunConfig, n_seeds: u64) -> Result<(PathBuf, MetricReport)> {
    if n_seeds == 0 {
        return Err(Error::Validation("need at least one seed".into()));
    }
    ensure_dir(&cfg.out_dir)?;
    let base_seed = cfg.train.seed;
    let mut reports = Vec::new();
    for i in 0..n_seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.train = TrainConfig {
            seed: base_seed + i,
            ..cfg.train.clone()
        };
        run_cfg.out_dir = cfg.out_dir.join(format!("seed_{}", base_seed + i));
        ensure_dir(&run_cfg.out_dir)?;
        // Per-seed prepare artifacts so `train` preconditions hold.
        cmd_prepare(&run_cfg)?;
        let arts = cmd_train(&run_cfg, false)?;
        let (_, report) = cmd_eval(&run_cfg, &arts.checkpoint_path)?;
        reports.push(report);
    }
    let aggregate = MetricReport::aggregate(&reports);
    let path = cfg.out_dir.join("metrics_seeds_aggregate.json");
    aggregate.save(&path)?;
    Ok((path, aggregate))
}
