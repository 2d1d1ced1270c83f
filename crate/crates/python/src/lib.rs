//! Python module `metawsd`.

use std::path::PathBuf;

use metawsd::checkpoint::Checkpoint;
use metawsd::config::RunConfig;
use metawsd::data::{build_episode_set, BuildConfig, Episode, Item, Manifest};
use metawsd::eval::EvalReport;
use metawsd::pipeline;
use metawsd::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(metawsd, MetawsdError, PyValueError);

fn err(e: Error) -> PyErr {
    match e {
        Error::File { .. } | Error::Io(_) => PyIOError::new_err(e.to_string()),
        other => MetawsdError::new_err(other.to_string()),
    }
}

/// Run configuration: TOML text plus `key=value` overrides.
#[pyclass(name = "RunConfig", module = "metawsd")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml = "", overrides = Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        RunConfig::from_toml(toml, &overrides)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        RunConfig::load(Some(&path), &overrides)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Copy with further overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        let text = self.inner.to_toml().map_err(err)?;
        Self::new(&text, overrides)
    }

    /// Every field, with method presets filled in.
    fn to_toml(&self) -> PyResult<String> {
        self.inner.resolved().and_then(|c| c.to_toml()).map_err(err)
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir.clone()
    }

    #[getter]
    fn support_size(&self) -> usize {
        self.inner.support_size
    }

    #[getter]
    fn seeds(&self) -> PyResult<Vec<u64>> {
        Ok(self.inner.meta_config().map_err(err)?.seeds)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(method={:?}, support_size={})",
            self.method(),
            self.inner.support_size
        )
    }
}

/// Sense-annotated sentences with per-token embeddings.
#[pyclass(name = "Corpus", module = "metawsd")]
struct PyCorpus {
    inner: metawsd::data::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(annotations: PathBuf, embeddings: PathBuf) -> PyResult<Self> {
        metawsd::data::load_corpus(&annotations, &embeddings)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Generates the synthetic corpus described by the `synth_*` keys.
    #[staticmethod]
    fn synthetic(config: &PyRunConfig) -> PyResult<Self> {
        metawsd::data::generate_synthetic_corpus(&config.inner.synthetic())
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn save(&self, annotations: PathBuf, embeddings: PathBuf) -> PyResult<()> {
        metawsd::data::save_corpus(&self.inner, &annotations, &embeddings).map_err(err)
    }

    #[getter]
    fn n_sentences(&self) -> usize {
        self.inner.sentences().len()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn words(&self) -> Vec<String> {
        self.inner.word_ids()
    }

    fn senses(&self, word: &str) -> PyResult<Vec<String>> {
        self.inner
            .word(word)
            .map(|w| w.senses.clone())
            .ok_or_else(|| PyKeyError::new_err(word.to_string()))
    }

    fn embedding(&self, sentence_id: &str, index: usize) -> PyResult<Vec<f64>> {
        let sentence = self
            .inner
            .sentence_index(sentence_id)
            .ok_or_else(|| PyKeyError::new_err(sentence_id.to_string()))?;
        if index >= self.inner.sentence(sentence).n_tokens {
            return Err(PyKeyError::new_err(format!("{sentence_id}[{index}]")));
        }
        Ok(self
            .inner
            .token_embedding(metawsd::data::Instance {
                sentence,
                token_index: index,
            })
            .to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.sentences().len()
    }
}

/// Meta-train, meta-val and meta-test episodes.
#[pyclass(name = "EpisodeSet", module = "metawsd")]
struct PyEpisodeSet {
    inner: metawsd::data::EpisodeSet,
}

fn split_of<'a>(set: &'a metawsd::data::EpisodeSet, split: &str) -> PyResult<&'a [Episode]> {
    match split {
        "train" | "meta-train" => Ok(&set.train),
        "val" | "meta-val" => Ok(&set.val),
        "test" | "meta-test" => Ok(&set.test),
        other => Err(PyValueError::new_err(format!("unknown split `{other}`"))),
    }
}

fn items(corpus: &metawsd::data::Corpus, items: &[Item]) -> Vec<(String, usize, usize)> {
    items
        .iter()
        .map(|it| {
            (
                corpus.sentence(it.instance.sentence).sentence_id.clone(),
                it.instance.token_index,
                it.label,
            )
        })
        .collect()
}

#[pymethods]
impl PyEpisodeSet {
    #[staticmethod]
    #[pyo3(signature = (corpus, support_size, n_train_episodes = 10_000, seed = 0, words_per_episode = None))]
    fn build(
        corpus: &PyCorpus,
        support_size: usize,
        n_train_episodes: usize,
        seed: u64,
        words_per_episode: Option<usize>,
    ) -> PyResult<Self> {
        let mut cfg = BuildConfig::new(support_size);
        cfg.n_train_episodes = n_train_episodes;
        cfg.seed = seed;
        if let Some(w) = words_per_episode {
            cfg.words_per_episode = w;
        }
        build_episode_set(&corpus.inner, &cfg)
            .map(|(_, inner)| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_manifest(path: PathBuf, corpus: &PyCorpus) -> PyResult<Self> {
        Manifest::load(&path)
            .and_then(|m| m.resolve(&corpus.inner))
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.all().count()
    }

    fn count(&self, split: &str) -> PyResult<usize> {
        Ok(split_of(&self.inner, split)?.len())
    }

    /// Episodes of one split as dicts; support and query items are
    /// `(sentence_id, token_index, label)` tuples.
    fn episodes<'py>(
        &self,
        py: Python<'py>,
        corpus: &PyCorpus,
        split: &str,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        split_of(&self.inner, split)?
            .iter()
            .map(|ep| {
                let d = PyDict::new(py);
                d.set_item("id", ep.id)?;
                d.set_item("split", ep.split.as_str())?;
                d.set_item("words", ep.words.clone())?;
                d.set_item("senses", ep.senses.clone())?;
                d.set_item("support", items(&corpus.inner, &ep.support))?;
                d.set_item("query", items(&corpus.inner, &ep.query))?;
                Ok(d)
            })
            .collect()
    }
}

/// Trained parameters of one seed.
#[pyclass(name = "Model", module = "metawsd")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    /// Trains the configured method, early stopping on the meta-val split.
    /// Returns the model and its per-epoch log.
    #[staticmethod]
    fn train<'py>(
        py: Python<'py>,
        config: &PyRunConfig,
        corpus: &PyCorpus,
        episodes: &PyEpisodeSet,
        seed: u64,
    ) -> PyResult<(Self, Vec<Bound<'py, PyDict>>)> {
        let mc = config.inner.meta_config().map_err(err)?;
        let set = &episodes.inner;
        let (inner, log) = py
            .detach(|| pipeline::train_one(&mc, &corpus.inner, &set.train, &set.val, seed))
            .map_err(err)?;
        let log = log
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("epoch", e.epoch)?;
                d.set_item("train_loss", e.train_loss)?;
                d.set_item("val_macro_f1", e.val_macro_f1)?;
                d.set_item("lr", e.lr)?;
                Ok(d)
            })
            .collect::<PyResult<_>>()?;
        Ok((Self { inner }, log))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Checkpoint::load(&path)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.theta.weight.cols()
    }
}

/// Aggregated macro-F1 scores of one method.
#[pyclass(name = "Report", module = "metawsd")]
struct PyReport {
    inner: EvalReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.clone()
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean
    }

    #[getter]
    fn std(&self) -> f64 {
        self.inner.std
    }

    #[getter]
    fn seed_means(&self) -> Vec<(u64, f64)> {
        self.inner
            .seed_means
            .iter()
            .map(|s| (s.seed, s.mean))
            .collect()
    }

    /// `(n_senses, n_words, mean)` per query sense count.
    #[getter]
    fn by_sense_count(&self) -> Vec<(usize, usize, f64)> {
        self.inner
            .by_sense_count
            .iter()
            .map(|g| (g.n_senses, g.n_words, g.mean))
            .collect()
    }

    /// `(word, n_senses, macro_f1, seed)` per evaluated episode.
    #[getter]
    fn scores(&self) -> Vec<(String, usize, f64, u64)> {
        self.inner
            .scores
            .iter()
            .map(|s| (s.word.clone(), s.n_senses, s.macro_f1, s.seed))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn summary(&self) -> String {
        self.inner.summary()
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(method={:?}, mean={:.4}, std={:.4})",
            self.inner.method, self.inner.mean, self.inner.std
        )
    }
}

fn needs_model(
    config: &PyRunConfig,
    model: Option<&PyModel>,
) -> PyResult<metawsd::meta::MetaConfig> {
    let mc = config.inner.meta_config().map_err(err)?;
    if let Some(m) = model {
        if m.inner.method != mc.method {
            return Err(MetawsdError::new_err(format!(
                "model was trained as {}, config asks for {}",
                m.inner.method, mc.method
            )));
        }
    }
    Ok(mc)
}

/// Query predictions (local labels) for every episode of `split`.
#[pyfunction]
#[pyo3(signature = (config, corpus, episodes, split = "test", model = None, seed = 0))]
fn predict(
    py: Python<'_>,
    config: &PyRunConfig,
    corpus: &PyCorpus,
    episodes: &PyEpisodeSet,
    split: &str,
    model: Option<PyRef<'_, PyModel>>,
    seed: u64,
) -> PyResult<Vec<Vec<usize>>> {
    let mc = needs_model(config, model.as_deref())?;
    let eps = split_of(&episodes.inner, split)?;
    let ck = model.as_deref().map(|m| &m.inner);
    py.detach(|| pipeline::predict_episodes(&mc, &corpus.inner, eps, ck, seed))
        .map_err(err)
}

/// Scores the meta-test split for every configured seed, reusing `model`
/// for each seed.
#[pyfunction]
#[pyo3(signature = (config, corpus, episodes, model = None))]
fn evaluate(
    py: Python<'_>,
    config: &PyRunConfig,
    corpus: &PyCorpus,
    episodes: &PyEpisodeSet,
    model: Option<PyRef<'_, PyModel>>,
) -> PyResult<PyReport> {
    let mc = needs_model(config, model.as_deref())?;
    let ck = model.as_deref().map(|m| &m.inner);
    let test = &episodes.inner.test;
    let scores = py
        .detach(|| -> metawsd::Result<Vec<_>> {
            let mut scores = Vec::new();
            for &seed in &mc.seeds {
                scores.extend(pipeline::evaluate_seed(&mc, &corpus.inner, test, ck, seed)?);
            }
            Ok(scores)
        })
        .map_err(err)?;
    Ok(PyReport {
        inner: metawsd::eval::aggregate(&mc.method.to_string(), &scores),
    })
}

#[pyfunction]
#[pyo3(signature = (gold, pred, classes = None))]
fn macro_f1(gold: Vec<usize>, pred: Vec<usize>, classes: Option<Vec<usize>>) -> PyResult<f64> {
    let classes = classes.unwrap_or_else(|| {
        let n = gold.iter().chain(&pred).max().map_or(0, |m| m + 1);
        (0..n).collect()
    });
    metawsd::eval::macro_f1(&gold, &pred, &classes).map_err(err)
}

/// Writes the synthetic corpus to the configured `corpus` and `embeddings`
/// paths.
#[pyfunction]
fn synth(config: &PyRunConfig) -> PyResult<()> {
    pipeline::cmd_synth(&config.inner).map(|_| ()).map_err(err)
}

/// Writes the episode manifest and returns the statistics table.
#[pyfunction]
fn build_data(config: &PyRunConfig) -> PyResult<String> {
    pipeline::cmd_build_data(&config.inner)
        .map(|(_, stats)| stats.to_table())
        .map_err(err)
}

/// Trains every seed; returns the checkpoint paths.
#[pyfunction]
fn train(py: Python<'_>, config: &PyRunConfig) -> PyResult<Vec<PathBuf>> {
    py.detach(|| pipeline::cmd_train(&config.inner))
        .map_err(err)
}

#[pyfunction]
fn eval(py: Python<'_>, config: &PyRunConfig) -> PyResult<PyReport> {
    py.detach(|| pipeline::cmd_eval(&config.inner))
        .map(|inner| PyReport { inner })
        .map_err(err)
}

/// `(episodes, mean, std)` per count in `sweep_counts`.
#[pyfunction]
fn sweep(py: Python<'_>, config: &PyRunConfig) -> PyResult<Vec<(usize, f64, f64)>> {
    py.detach(|| pipeline::cmd_sweep(&config.inner))
        .map(|rows| rows.iter().map(|r| (r.episodes, r.mean, r.std)).collect())
        .map_err(err)
}

#[pymodule]
#[pyo3(name = "metawsd")]
fn metawsd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MetawsdError", m.py().get_type::<MetawsdError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyEpisodeSet>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(build_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(eval, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
