//! Python bindings for the encoders, losses, margin search, synthetic data
//! and corpus selection.

use std::collections::BTreeMap;

use codistill as cd;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: cd::Error) -> PyErr {
    match e.root() {
        cd::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn embedding(v: Vec<f32>) -> PyResult<cd::Embedding> {
    cd::Embedding::new(v).map_err(py_err)
}

fn matrix(rows: Vec<Vec<f32>>, dim: Option<usize>) -> PyResult<cd::EmbeddingMatrix> {
    let dim = match (dim, rows.first()) {
        (Some(d), _) => d,
        (None, Some(r)) => r.len(),
        (None, None) => return Err(PyValueError::new_err("empty matrix needs an explicit dim")),
    };
    cd::EmbeddingMatrix::from_rows(dim, rows.iter().map(Vec::as_slice)).map_err(py_err)
}

fn to_rows(m: &cd::EmbeddingMatrix) -> Vec<Vec<f32>> {
    m.iter().map(<[f32]>::to_vec).collect()
}

fn search(k: usize, margin: &str) -> PyResult<cd::SearchConfig> {
    Ok(cd::SearchConfig {
        k,
        margin_kind: margin.parse().map_err(py_err)?,
    })
}

type Pairs = Vec<(String, String)>;

fn pairs(raw: Pairs) -> Vec<cd::SentencePair> {
    raw.into_iter().map(|(s, t)| cd::SentencePair::new(s, t)).collect()
}

/// Linear encoder over hashed character n-grams.
#[pyclass(name = "Encoder", module = "pycodistill", skip_from_py_object)]
#[derive(Clone)]
struct PyEncoder {
    inner: cd::EncoderParams,
}

#[pymethods]
impl PyEncoder {
    /// Random weights from U[-scale, scale]; frozen encoders are teachers.
    #[staticmethod]
    #[pyo3(signature = (dim, buckets=4096, orders=vec![2, 3], hash_seed=1, seed=0, frozen=true, scale=1.0))]
    fn random(
        dim: usize,
        buckets: usize,
        orders: Vec<usize>,
        hash_seed: u64,
        seed: u64,
        frozen: bool,
        scale: f64,
    ) -> PyResult<Self> {
        let featurizer = cd::FeaturizerConfig {
            ngram_orders: orders,
            bucket_count: buckets,
            hash_seed,
        };
        let inner = cd::EncoderParams::random_scaled(featurizer, dim, seed, scale, frozen).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Fresh trainable student shaped like `teacher`.
    #[staticmethod]
    fn student_for(teacher: &PyEncoder, seed: u64) -> PyResult<Self> {
        let inner = cd::EncoderParams::student_for(&teacher.inner, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn bucket_count(&self) -> usize {
        self.inner.bucket_count()
    }

    #[getter]
    fn frozen(&self) -> bool {
        self.inner.is_frozen()
    }

    fn header_line(&self) -> String {
        self.inner.header_line()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    /// Bucket counts of the sentence as `{bucket: count}`.
    fn featurize(&self, sentence: &str) -> BTreeMap<u32, f64> {
        self.inner.featurize(sentence).entries().iter().copied().collect()
    }

    fn encode(&self, sentence: &str) -> PyResult<Vec<f32>> {
        Ok(self.inner.encode(sentence).map_err(py_err)?.into_vec())
    }

    fn encode_batch(&self, py: Python<'_>, sentences: Vec<String>) -> PyResult<Vec<Vec<f32>>> {
        let m = py.detach(|| self.inner.encode_batch(&sentences)).map_err(py_err)?;
        Ok(to_rows(&m))
    }

    /// Gradient of `upstream · encode(sentence)` as `{bucket: row}`.
    fn backprop_encode(&self, sentence: &str, upstream: Vec<f64>) -> PyResult<BTreeMap<usize, Vec<f64>>> {
        let g = self.inner.backprop_encode(sentence, &upstream).map_err(py_err)?;
        let dim = self.inner.dim();
        let dense = g.to_dense(self.inner.bucket_count());
        Ok(dense
            .chunks(dim)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&x| x != 0.0))
            .map(|(b, row)| (b, row.to_vec()))
            .collect())
    }

    fn __eq__(&self, other: &PyEncoder) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Encoder({})", self.inner.header_line())
    }
}

/// Training settings; defaults match the command-line defaults.
#[pyclass(name = "TrainConfig", module = "pycodistill", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: cd::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (tau=0.05, sigma=0.9, queue_size=4096, batch_size=32, negatives="queue", shuffle=true, prefilter=false, step_size=0.05, epochs=10, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        tau: f64,
        sigma: f64,
        queue_size: usize,
        batch_size: usize,
        negatives: &str,
        shuffle: bool,
        prefilter: bool,
        step_size: f64,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = cd::TrainConfig {
            temperature: tau,
            filter_threshold: sigma,
            queue_capacity: queue_size,
            batch_size,
            negatives_source: negatives.parse().map_err(py_err)?,
            shuffle,
            prefilter_enabled: prefilter,
            step_size,
            epochs,
            rng_seed: seed,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig({})", self.inner.describe())
    }
}

/// Distills a student; returns it with one dict of statistics per epoch.
#[pyfunction]
fn train_distill(
    py: Python<'_>,
    corpus: Vec<(String, String)>,
    teacher: &PyEncoder,
    config: &PyTrainConfig,
) -> PyResult<(PyEncoder, Vec<BTreeMap<String, f64>>)> {
    let corpus = pairs(corpus);
    let run = py
        .detach(|| cd::train_distill(&corpus, &teacher.inner, &config.inner))
        .map_err(py_err)?;
    let trace = run
        .trace
        .iter()
        .map(|s| {
            BTreeMap::from([
                ("epoch".to_string(), s.epoch as f64),
                ("loss".to_string(), s.mean_loss),
                ("filtered_out".to_string(), s.filtered_out as f64),
                ("m_zero_fallbacks".to_string(), s.m_zero_fallbacks as f64),
            ])
        })
        .collect();
    Ok((PyEncoder { inner: run.student }, trace))
}

#[pyfunction]
fn featurize(sentence: &str, buckets: usize, orders: Vec<usize>, hash_seed: u64) -> PyResult<BTreeMap<u32, f64>> {
    let cfg = cd::FeaturizerConfig {
        ngram_orders: orders,
        bucket_count: buckets,
        hash_seed,
    };
    cfg.validate().map_err(py_err)?;
    Ok(cd::featurize(sentence, &cfg).entries().iter().copied().collect())
}

#[pyfunction]
fn cosine(u: Vec<f32>, v: Vec<f32>) -> PyResult<f64> {
    cd::cosine(&embedding(u)?, &embedding(v)?).map_err(py_err)
}

#[pyfunction]
fn l2_normalize(v: Vec<f32>) -> PyResult<Vec<f32>> {
    Ok(cd::l2_normalize(&embedding(v)?).map_err(py_err)?.into_vec())
}

#[pyfunction]
fn infonce_loss(q: Vec<f32>, k_pos: Vec<f32>, negatives: Vec<Vec<f32>>, tau: f64) -> PyResult<f64> {
    let dim = q.len();
    cd::infonce_loss(&embedding(q)?, &embedding(k_pos)?, &matrix(negatives, Some(dim))?, tau).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, kind="ratio"))]
fn margin(a: f64, b: f64, kind: &str) -> PyResult<f64> {
    cd::margin(a, b, kind.parse().map_err(py_err)?).map_err(py_err)
}

/// Best target per source as `(index, score)` and the error rate in percent.
#[pyfunction]
#[pyo3(signature = (src, tgt, k=4, margin="ratio"))]
fn align(src: Vec<Vec<f32>>, tgt: Vec<Vec<f32>>, k: usize, margin: &str) -> PyResult<(Vec<(usize, f64)>, f64)> {
    let r = cd::align(&matrix(src, None)?, &matrix(tgt, None)?, search(k, margin)?).map_err(py_err)?;
    Ok((r.best, r.error_rate))
}

#[pyfunction]
#[pyo3(signature = (src, tgt, k=4, margin="ratio"))]
fn xsim_error_rate(src: Vec<Vec<f32>>, tgt: Vec<Vec<f32>>, k: usize, margin: &str) -> PyResult<f64> {
    cd::xsim_error_rate(&matrix(src, None)?, &matrix(tgt, None)?, search(k, margin)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (size, vocab=200, min_len=3, max_len=12, map_seed=1, corpus_seed=2))]
fn gen_cipher_corpus(
    size: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    map_seed: u64,
    corpus_seed: u64,
) -> PyResult<Vec<(String, String)>> {
    let spec = cd::CipherSpec {
        vocab_size: vocab,
        min_len,
        max_len,
        map_seed,
        corpus_size: size,
        corpus_seed,
    };
    let corpus = cd::gen_cipher_corpus(&spec).map_err(py_err)?;
    Ok(corpus.into_iter().map(|p| (p.source, p.target)).collect())
}

/// Noisy pairs and per-pair labels (true where misaligned).
#[pyfunction]
fn inject_noise(corpus: Vec<(String, String)>, rate: f64, seed: u64) -> PyResult<(Pairs, Vec<bool>)> {
    let noisy = cd::inject_noise(&pairs(corpus), rate, seed).map_err(py_err)?;
    Ok((
        noisy.pairs.into_iter().map(|p| (p.source, p.target)).collect(),
        noisy.labels,
    ))
}

/// xsim score of every pair, in corpus order.
#[pyfunction]
#[pyo3(signature = (corpus, student, teacher, k=4, margin="ratio"))]
fn score_corpus(
    py: Python<'_>,
    corpus: Vec<(String, String)>,
    student: &PyEncoder,
    teacher: &PyEncoder,
    k: usize,
    margin: &str,
) -> PyResult<Vec<f64>> {
    let cfg = search(k, margin)?;
    let corpus = pairs(corpus);
    let scored = py
        .detach(|| cd::score_corpus(&corpus, &student.inner, &teacher.inner, cfg, None))
        .map_err(py_err)?;
    Ok(scored.into_iter().map(|p| p.score).collect())
}

/// Indices chosen by greedy best-first selection under a target-token budget.
#[pyfunction]
fn select_by_token_budget(scores: Vec<f64>, target_tokens: Vec<usize>, budget: u64) -> PyResult<Vec<usize>> {
    if scores.len() != target_tokens.len() {
        return Err(PyValueError::new_err("scores and target_tokens differ in length"));
    }
    let scored: Vec<cd::ScoredPair> = scores
        .into_iter()
        .zip(target_tokens)
        .enumerate()
        .map(|(index, (score, target_tokens))| cd::ScoredPair {
            index,
            source: String::new(),
            target: String::new(),
            score,
            target_tokens,
        })
        .collect();
    Ok(cd::select_by_token_budget(&scored, cd::BudgetSpec::new(budget))
        .into_iter()
        .map(|p| p.index)
        .collect())
}

#[pyfunction]
fn count_tokens(sentence: &str) -> usize {
    cd::count_tokens(sentence)
}

#[pymodule]
fn pycodistill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_function(wrap_pyfunction!(train_distill, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(l2_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(infonce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(margin, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(xsim_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_cipher_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(inject_noise, m)?)?;
    m.add_function(wrap_pyfunction!(score_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(select_by_token_budget, m)?)?;
    m.add_function(wrap_pyfunction!(count_tokens, m)?)?;
    Ok(())
}
