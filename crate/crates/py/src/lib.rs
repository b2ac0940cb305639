//! Python bindings for the basketrec engine: prepare a split, train, rank,
//! evaluate, and run the noise-injection protocol from Python.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use basketrec::dataset::{filter_baskets, load_transactions, split_within_basket, LoadSchema};
use basketrec::evaluation;
use basketrec::persist;
use basketrec::rng::{stream, Stream};
use basketrec::trainer;
use basketrec::TrainConfig;

fn to_py(e: basketrec::Error) -> PyErr {
    match &e {
        basketrec::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A prepared train/held-out split.
#[pyclass]
struct Split {
    inner: basketrec::dataset::SplitDataset,
}

#[pymethods]
impl Split {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Split> {
        Ok(Split { inner: persist::load_split(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        persist::save_split(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.train.num_users
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.train.num_items
    }

    #[getter]
    fn num_baskets(&self) -> usize {
        self.inner.train.num_baskets
    }

    #[getter]
    fn num_train_pairs(&self) -> usize {
        self.inner.train.num_pairs()
    }

    #[getter]
    fn num_evaluable(&self) -> usize {
        self.inner.num_evaluable()
    }

    /// Table-style summary counts of the training side.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.train.stats();
        let d = PyDict::new(py);
        d.set_item("num_users", s.num_users)?;
        d.set_item("num_items", s.num_items)?;
        d.set_item("num_baskets", s.num_baskets)?;
        d.set_item("num_pairs", s.num_pairs)?;
        d.set_item("mean_basket_size", s.mean_basket_size)?;
        d.set_item("mean_baskets_per_user", s.mean_baskets_per_user)?;
        Ok(d)
    }

    fn basket_owner(&self, basket: usize) -> PyResult<usize> {
        self.inner
            .train
            .basket_owner
            .get(basket)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("basket {basket} out of range")))
    }

    fn train_items(&self, basket: usize) -> PyResult<Vec<usize>> {
        self.inner
            .train
            .basket_items
            .get(basket)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("basket {basket} out of range")))
    }

    fn heldout_items(&self, basket: usize) -> PyResult<Vec<usize>> {
        self.inner
            .heldout
            .get(basket)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("basket {basket} out of range")))
    }

    /// A copy with fabricated basket-membership noise added to the train side.
    fn inject_noise(&self, ratio: f64, seed: u64) -> PyResult<Split> {
        let mut rng = stream(seed, Stream::Noise);
        Ok(Split { inner: evaluation::inject_noise(&self.inner, ratio, &mut rng).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Split(users={}, items={}, baskets={}, train_pairs={})",
            self.inner.train.num_users,
            self.inner.train.num_items,
            self.inner.train.num_baskets,
            self.inner.train.num_pairs()
        )
    }
}

/// Ingest a delimited transaction log, filter small baskets, and split each
/// basket into train/held-out items.
#[pyfunction]
#[pyo3(signature = (path, user_col="user_id", basket_col="basket_id", item_col="item_id",
                    delimiter=None, min_basket_size=30, train_ratio=0.8, seed=42))]
#[allow(clippy::too_many_arguments)]
fn prepare(
    path: &str,
    user_col: &str,
    basket_col: &str,
    item_col: &str,
    delimiter: Option<&str>,
    min_basket_size: usize,
    train_ratio: f64,
    seed: u64,
) -> PyResult<Split> {
    let schema = LoadSchema {
        user_col: user_col.to_string(),
        basket_col: basket_col.to_string(),
        item_col: item_col.to_string(),
        delimiter: match delimiter {
            None | Some("auto") => None,
            Some(",") | Some("comma") => Some(b','),
            Some("\t") | Some("tab") => Some(b'\t'),
            Some(other) => return Err(PyValueError::new_err(format!("unknown delimiter {other:?}"))),
        },
    };
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(PyValueError::new_err("train_ratio must be in (0, 1)"));
    }
    if min_basket_size < 1 {
        return Err(PyValueError::new_err("min_basket_size must be >= 1"));
    }
    let raw = load_transactions(path, &schema).map_err(to_py)?;
    let filtered = filter_baskets(&raw, min_basket_size).map_err(to_py)?;
    Ok(Split { inner: split_within_basket(&filtered, train_ratio, seed) })
}

fn config_from_kwargs(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(kw) = kwargs {
        for (key, value) in kw.iter() {
            let key: String = key.extract()?;
            let text = if let Ok(b) = value.extract::<bool>() {
                b.to_string()
            } else if let Ok(i) = value.extract::<i64>() {
                i.to_string()
            } else if let Ok(f) = value.extract::<f64>() {
                format!("{f}")
            } else {
                value.extract::<String>()?
            };
            cfg.set(&key, &text).map_err(to_py)?;
        }
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// A trained model: learned base tables plus the config that produced them.
#[pyclass]
struct Model {
    inner: trainer::Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        Ok(Model { inner: persist::load_checkpoint(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        persist::save_checkpoint(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    fn config_text(&self) -> String {
        self.inner.config.to_text()
    }

    /// Per-K mean Recall/Precision/HR/NDCG over the split's held-out items.
    fn evaluate<'py>(&self, py: Python<'py>, split: &Split, ks: Vec<usize>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        if ks.is_empty() {
            return Err(PyValueError::new_err("need at least one K"));
        }
        let report = evaluation::evaluate(&self.inner.base, &self.inner.config, &split.inner, &ks).map_err(to_py)?;
        let mut out = Vec::new();
        for row in &report.rows {
            let d = PyDict::new(py);
            d.set_item("k", row.k)?;
            d.set_item("recall", row.recall)?;
            d.set_item("precision", row.precision)?;
            d.set_item("hr", row.hr)?;
            d.set_item("ndcg", row.ndcg)?;
            out.push(d);
        }
        Ok(out)
    }

    /// Top-k item ids completing `partial` for `user`, best first.
    fn rank(&self, split: &Split, user: usize, partial: Vec<usize>, k: usize) -> PyResult<Vec<usize>> {
        let fwd = trainer::forward_for_eval(&self.inner.base, &split.inner, &self.inner.config).map_err(to_py)?;
        evaluation::rank_items(
            &fwd,
            user,
            &partial,
            self.inner.config.score_balance,
            self.inner.config.additive_score,
            k,
        )
        .map_err(to_py)
    }

    /// Layer-0 embedding rows (the learned parameters).
    fn user_embedding(&self, user: usize) -> PyResult<Vec<f64>> {
        if user >= self.inner.base.user.nrows() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        Ok(self.inner.base.user.row(user).to_vec())
    }

    fn item_embedding(&self, item: usize) -> PyResult<Vec<f64>> {
        if item >= self.inner.base.item.nrows() {
            return Err(PyValueError::new_err(format!("item {item} out of range")));
        }
        Ok(self.inner.base.item.row(item).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(users={}, items={}, dim={}, epoch={})",
            self.inner.base.user.nrows(),
            self.inner.base.item.nrows(),
            self.inner.base.dim(),
            self.inner.epoch
        )
    }
}

/// Train on a split. Keyword arguments override config defaults, e.g.
/// `train(split, epochs=50, embedding_dim=32, seed=7)`.
#[pyfunction]
#[pyo3(signature = (split, **kwargs))]
fn train(split: &Split, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Model> {
    let cfg = config_from_kwargs(kwargs)?;
    let result = trainer::fit(&split.inner, &cfg).map_err(to_py)?;
    Ok(Model { inner: result.checkpoint })
}

#[pymodule]
fn basketrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Split>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
