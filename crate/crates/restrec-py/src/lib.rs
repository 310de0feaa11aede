//! Python bindings: dataset loading and splitting, graph queries, the
//! counterfactual pool, SCM oracles and generation, metrics, and the
//! config-driven pipeline commands.

#![allow(clippy::type_complexity)] // tuple returns are the Python-facing shapes

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use restrec::config::RunConfig;
use restrec::data;
use restrec::graph;
use restrec::metrics;
use restrec::model::Checkpoint;
use restrec::pipeline;
use restrec::scm;
use restrec::viz;

fn err(e: restrec::Error) -> PyErr {
    match &e {
        restrec::Error::Validation(_) | restrec::Error::Precondition(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(frozen)]
struct Dataset {
    inner: data::Dataset,
    id_maps: data::IdMaps,
}

#[pymethods]
impl Dataset {
    /// Load interaction/social TSVs ("tsv-explicit" or "tsv-implicit").
    #[staticmethod]
    #[pyo3(signature = (ratings_path, social_path=None, format="tsv-explicit"))]
    fn load(ratings_path: PathBuf, social_path: Option<PathBuf>, format: &str) -> PyResult<Self> {
        let fmt = match format {
            "tsv-explicit" => data::TsvFormat::TsvExplicit,
            "tsv-implicit" => data::TsvFormat::TsvImplicit,
            other => return Err(PyValueError::new_err(format!("unknown format `{other}`"))),
        };
        let (inner, id_maps, _) =
            data::load_dataset(&ratings_path, social_path.as_deref(), fmt).map_err(err)?;
        Ok(Dataset { inner, id_maps })
    }

    #[getter]
    fn num_users(&self) -> u32 {
        self.inner.num_users
    }

    #[getter]
    fn num_items(&self) -> u32 {
        self.inner.num_items
    }

    #[getter]
    fn num_interactions(&self) -> usize {
        self.inner.interactions.len()
    }

    #[getter]
    fn num_social_edges(&self) -> usize {
        self.inner.social_edges.len() / 2
    }

    /// Original string id of a dense user index.
    fn user_id(&self, user: u32) -> PyResult<String> {
        self.id_maps
            .users
            .get(user as usize)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("unknown user {user}")))
    }

    /// Seeded split into (train, val, test) with the no-new-users/items
    /// repair.
    #[pyo3(signature = (train_fraction=0.8, val_fraction=0.1, test_fraction=0.1, seed=42))]
    fn split(
        &self,
        train_fraction: f64,
        val_fraction: f64,
        test_fraction: f64,
        seed: u64,
    ) -> PyResult<(Dataset, Dataset, Dataset)> {
        let spec = data::SplitSpec {
            train_fraction,
            val_fraction,
            test_fraction,
            seed,
        };
        let res = data::split_dataset(&self.inner, &spec).map_err(err)?;
        let wrap = |ds: data::Dataset| Dataset {
            inner: ds,
            id_maps: self.id_maps.clone(),
        };
        Ok((wrap(res.train), wrap(res.val), wrap(res.test)))
    }

    /// Interactions as (user, item, rating, exposed, timestamp) tuples.
    fn interactions(&self) -> Vec<(u32, u32, u8, bool, Option<i64>)> {
        self.inner
            .interactions
            .iter()
            .map(|r| (r.user, r.item, r.rating, r.exposed, r.timestamp))
            .collect()
    }
}

#[pyclass(frozen)]
struct GraphStore {
    inner: graph::GraphStore,
}

#[pymethods]
impl GraphStore {
    #[staticmethod]
    fn build(train: &Dataset) -> GraphStore {
        GraphStore {
            inner: graph::GraphStore::build(&train.inner),
        }
    }

    /// Items the user accessed, as (item, rating) pairs.
    fn items_of(&self, user: u32) -> Vec<(u32, u8)> {
        self.inner.items_of(user).to_vec()
    }

    fn neighbors_of(&self, user: u32) -> Vec<u32> {
        self.inner.neighbors_of(user).to_vec()
    }

    /// Items unexposed to the user but exposed to at least `beta` neighbors.
    fn beta_frequency_set(&self, user: u32, beta: u32) -> Vec<u32> {
        graph::beta_frequency_set(&self.inner, user, beta)
    }

    /// Modal neighbor rating for an item (ties to the larger level).
    fn vote_rating(&self, user: u32, item: u32) -> PyResult<u8> {
        graph::vote_rating(&self.inner, user, item).map_err(err)
    }

    /// Counterfactual pool as (user, item, voted_rating, exposed=False).
    #[pyo3(signature = (beta=2, cap_per_user=None, seed=7))]
    fn counterfactual_pool(
        &self,
        beta: u32,
        cap_per_user: Option<usize>,
        seed: u64,
    ) -> Vec<(u32, u32, u8, bool)> {
        graph::build_counterfactual_pool(&self.inner, beta, cap_per_user, seed)
            .into_iter()
            .map(|s| (s.user, s.item, s.voted_rating, s.exposed))
            .collect()
    }
}

#[pyclass(frozen)]
struct ScmSpec {
    inner: scm::ScmSpec,
}

#[pymethods]
impl ScmSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: scm::ScmSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(ScmSpec { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(ScmSpec {
            inner: scm::ScmSpec::load(&path).map_err(err)?,
        })
    }

    /// The built-in demonstration spec with class-selective promotions.
    #[staticmethod]
    fn demo() -> Self {
        ScmSpec {
            inner: scm::demo_biased_spec(),
        }
    }

    /// The dyadic spec whose exposure edge is inert (zero selection bias).
    #[staticmethod]
    fn inert() -> Self {
        ScmSpec {
            inner: scm::inert_exposure_spec(),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Both routes to P(r | G, v, do(e=1)): returns (interventional,
    /// adjustment, skipped_cells, max_discrepancy).
    fn exact_interventional(
        &self,
        g: usize,
        v: usize,
    ) -> PyResult<(Vec<f64>, Vec<f64>, Vec<(usize, usize)>, f64)> {
        let r = scm::exact_interventional(&self.inner, g, v).map_err(err)?;
        Ok((r.mutilated, r.adjustment, r.skipped_cells, r.max_discrepancy))
    }

    /// Total-variation distance between observational and interventional
    /// rating distributions at (G, v).
    fn measure_selection_bias(&self, g: usize, v: usize) -> PyResult<f64> {
        scm::measure_selection_bias(&self.inner, g, v).map_err(err)
    }

    /// Ancestral sampling; returns the synthetic Dataset (exposed tuples
    /// only) plus the per-interaction ground-truth ledger as
    /// (u_class, s_value, regime) tuples.
    fn generate(&self) -> PyResult<(Dataset, Vec<(usize, usize, usize)>)> {
        let syn = scm::generate(&self.inner).map_err(err)?;
        let ledger = syn
            .ledger
            .iter()
            .map(|e| (e.u_class, e.s_value, e.regime))
            .collect();
        Ok((
            Dataset {
                inner: syn.dataset,
                id_maps: data::IdMaps::default(),
            },
            ledger,
        ))
    }
}

#[pyfunction]
fn mae(preds: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    metrics::mae(&preds, &targets).map_err(err)
}

#[pyfunction]
fn rmse(preds: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    metrics::rmse(&preds, &targets).map_err(err)
}

/// HR@K for one (item, score) candidate list and held-out positive.
#[pyfunction]
fn hr_at_k(scored: Vec<(u32, f64)>, positive: u32, k: usize) -> PyResult<f64> {
    metrics::hr_at_k(&scored, positive, k).map_err(err)
}

#[pyfunction]
fn ndcg_at_k(scored: Vec<(u32, f64)>, positive: u32, k: usize) -> PyResult<f64> {
    metrics::ndcg_at_k(&scored, positive, k).map_err(err)
}

fn load_config(config_path: &Path, overrides: Option<HashMap<String, String>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::load(config_path).map_err(err)?;
    if let Some(sets) = overrides {
        let mut keys: Vec<_> = sets.into_iter().collect();
        keys.sort();
        for (k, v) in keys {
            cfg.set(&k, &v).map_err(err)?;
        }
    }
    Ok(cfg)
}

/// `prepare`: split + graph + counterfactual pool artifacts; returns the
/// summary line.
#[pyfunction]
#[pyo3(signature = (config_path, overrides=None))]
fn prepare(config_path: PathBuf, overrides: Option<HashMap<String, String>>) -> PyResult<String> {
    let cfg = load_config(&config_path, overrides)?;
    let arts = pipeline::cmd_prepare(&cfg).map_err(err)?;
    Ok(arts.summary)
}

/// `train`: returns (checkpoint_path, best_val, best_step).
#[pyfunction]
#[pyo3(signature = (config_path, overrides=None, grid=false))]
fn train(
    config_path: PathBuf,
    overrides: Option<HashMap<String, String>>,
    grid: bool,
) -> PyResult<(String, f64, usize)> {
    let cfg = load_config(&config_path, overrides)?;
    let arts = pipeline::cmd_train(&cfg, grid).map_err(err)?;
    Ok((
        arts.checkpoint_path.display().to_string(),
        arts.outcome.best_val.value,
        arts.outcome.best_step,
    ))
}

/// `eval`: returns {metric_name: mean}.
#[pyfunction]
#[pyo3(signature = (config_path, checkpoint_path, overrides=None))]
fn evaluate(
    config_path: PathBuf,
    checkpoint_path: PathBuf,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<HashMap<String, f64>> {
    let cfg = load_config(&config_path, overrides)?;
    let (_, report) = pipeline::cmd_eval(&cfg, &checkpoint_path).map_err(err)?;
    Ok(report
        .metrics
        .iter()
        .map(|(k, (mean, _))| (k.clone(), *mean))
        .collect())
}

/// `simulate`: returns (logged_interactions, max_adjustment_discrepancy,
/// max_selection_bias_tv).
#[pyfunction]
#[pyo3(signature = (out_dir, spec_path=None))]
fn simulate(out_dir: PathBuf, spec_path: Option<PathBuf>) -> PyResult<(usize, f64, f64)> {
    let spec = match spec_path {
        Some(p) => scm::ScmSpec::load(&p).map_err(err)?,
        None => scm::demo_biased_spec(),
    };
    let arts = pipeline::cmd_simulate(&spec, &out_dir).map_err(err)?;
    Ok((arts.logged, arts.max_discrepancy, arts.max_bias))
}

/// Per-interaction hard strategy codes from a checkpoint (noise disabled,
/// forced exposure), for custom grouping/analysis.
#[pyfunction]
fn hard_codes(
    checkpoint_path: PathBuf,
    train: &Dataset,
    pairs: Vec<(u32, u32)>,
) -> PyResult<Vec<Vec<usize>>> {
    let (model, _) = Checkpoint::load(&checkpoint_path)
        .map_err(err)?
        .into_model()
        .map_err(err)?;
    let g = graph::GraphStore::build(&train.inner);
    pairs
        .into_iter()
        .map(|(u, v)| viz::hard_code(&model, &g, u, v).map_err(err))
        .collect()
}

#[pymodule]
fn restrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<GraphStore>()?;
    m.add_class::<ScmSpec>()?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(hr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(hard_codes, m)?)?;
    Ok(())
}
