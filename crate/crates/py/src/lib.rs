//! Python bindings: CTC primitives, scoring, networks and embedding analysis.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use a2w::analysis::{self, EmbeddingMatrix};
use a2w::data::{generate_synthetic, load_lexicon, save_corpus, save_lexicon, SynthConfig};
use a2w::{LogProbLattice, Mat, ModelKind};

fn err(e: a2w::Error) -> PyErr {
    match e {
        a2w::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    Mat::from_rows(&rows).map_err(err)
}

fn lattice(log_probs: Vec<Vec<f64>>) -> PyResult<LogProbLattice> {
    LogProbLattice::from_log_probs(mat(log_probs)?).map_err(err)
}

/// Merge repeated labels, then drop `blank`.
#[pyfunction]
fn collapse(path: Vec<usize>, blank: usize) -> Vec<usize> {
    a2w::collapse(&path, blank)
}

/// Row-wise log-softmax of a T x (V+1) logit matrix.
#[pyfunction]
fn log_softmax(logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(LogProbLattice::from_logits(&mat(logits)?).map_err(err)?.as_mat().to_rows())
}

/// log p(target | x); `-inf` when no alignment fits.
#[pyfunction]
fn ctc_log_likelihood(log_probs: Vec<Vec<f64>>, target: Vec<usize>) -> PyResult<f64> {
    a2w::ctc_log_likelihood(&lattice(log_probs)?, &target).map_err(err)
}

/// Negative log-likelihood and its gradient w.r.t. the logits.
#[pyfunction]
fn ctc_loss_and_gradient(log_probs: Vec<Vec<f64>>, target: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (loss, grad) = a2w::ctc_loss_and_gradient(&lattice(log_probs)?, &target).map_err(err)?;
    Ok((loss, grad.to_rows()))
}

#[pyfunction]
fn greedy_decode(log_probs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    Ok(a2w::greedy_decode(&lattice(log_probs)?))
}

/// Every path of `frames` symbols over `labels` words plus blank that
/// collapses to `target`.
#[pyfunction]
fn enumerate_preimage(target: Vec<usize>, frames: usize, labels: usize) -> PyResult<Vec<Vec<usize>>> {
    a2w::enumerate_preimage(&target, frames, labels).map_err(err)
}

/// (substitutions, deletions, insertions) turning `reference` into `hypothesis`.
#[pyfunction]
fn edit_distance(reference: Vec<String>, hypothesis: Vec<String>) -> (usize, usize, usize) {
    let s = a2w::metrics::edit_distance(&reference, &hypothesis);
    (s.substitutions, s.deletions, s.insertions)
}

/// Percentage error rate of a hypothesis against a reference.
#[pyfunction]
fn error_rate(reference: Vec<String>, hypothesis: Vec<String>) -> PyResult<f64> {
    a2w::metrics::error_rate(&a2w::metrics::edit_distance(&reference, &hypothesis)).map_err(err)
}

/// Shared phonemes over the shorter pronunciation, from a lexicon file.
#[pyfunction]
fn pronunciation_overlap(w1: &str, w2: &str, lexicon: PathBuf) -> PyResult<f64> {
    let lex = load_lexicon(lexicon).map_err(err)?;
    analysis::pronunciation_overlap(w1, w2, &lex).map_err(err)
}

/// Writes a synthetic corpus (train/, dev/, test/, lexicon.tsv) to
/// `out_dir`. Keyword arguments override generator defaults.
#[pyfunction]
#[pyo3(signature = (out_dir, **settings))]
fn synthesize(out_dir: PathBuf, settings: Option<std::collections::HashMap<String, String>>) -> PyResult<(usize, usize, usize)> {
    let mut kv = a2w::config::KvConfig::default();
    for (k, v) in settings.unwrap_or_default() {
        kv.set(&k, v);
    }
    let cfg = SynthConfig::from_kv(&kv).map_err(err)?;
    let corpus = generate_synthetic(&cfg).map_err(err)?;
    save_corpus(out_dir.join("train"), &corpus.train).map_err(err)?;
    save_corpus(out_dir.join("dev"), &corpus.dev).map_err(err)?;
    save_corpus(out_dir.join("test"), &corpus.test).map_err(err)?;
    save_lexicon(out_dir.join("lexicon.tsv"), &corpus.lexicon).map_err(err)?;
    Ok((corpus.train.len(), corpus.dev.len(), corpus.test.len()))
}

/// LSTM stack with down-sampling and a softmax output layer.
#[pyclass(name = "Network", module = "a2w_py")]
struct PyNetwork {
    inner: a2w::Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (labels, input_dim, hidden=32, layers=4, downsample=4, kind="word-ctc", seed=1))]
    fn new(
        labels: Vec<String>,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        downsample: usize,
        kind: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(err)?;
        let spec = a2w::NetworkSpec::new(kind, input_dim, hidden, layers, downsample, labels).map_err(err)?;
        Ok(Self {
            inner: a2w::Network::new(&spec, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: a2w::Network::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn reduction_factor(&self) -> usize {
        self.inner.reduction_factor()
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn output_frames(&self, frames: usize) -> Option<usize> {
        self.inner.output_frames(frames)
    }

    /// Per-output-frame log-probabilities for a T x d feature matrix.
    fn forward(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let (lat, _) = self.inner.forward(&mat(features)?).map_err(err)?;
        Ok(lat.as_mat().to_rows())
    }

    /// Greedy transcript (CTC models) or per-frame classes (frame classifiers).
    fn decode(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<String>> {
        let feats = mat(features)?;
        let ids = if self.inner.kind().is_ctc() {
            a2w::training::decode(&self.inner, &feats)
        } else {
            a2w::training::classify_frames(&self.inner, &feats)
        }
        .map_err(err)?;
        let labels = self.inner.labels();
        Ok(ids
            .into_iter()
            .map(|i| labels.get(i).cloned().unwrap_or_else(|| self.inner.extra_symbol().to_string()))
            .collect())
    }

    /// CTC negative log-likelihood of `target` for one utterance.
    fn loss(&self, features: Vec<Vec<f64>>, target: Vec<String>) -> PyResult<f64> {
        let (lat, _) = self.inner.forward(&mat(features)?).map_err(err)?;
        let ids = self.inner.vocabulary().encode(&target).map_err(err)?;
        Ok(-a2w::ctc_log_likelihood(&lat, &ids).map_err(err)?)
    }

    /// Softmax weight rows, one per label plus the trailing blank/silence.
    fn output_weights(&self) -> Vec<Vec<f64>> {
        self.inner.output_weight().to_rows()
    }

    /// The `k` nearest words to `word` in softmax-weight space.
    fn neighbors(&self, word: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let emb = EmbeddingMatrix::from_network(&self.inner).map_err(err)?;
        let list = emb.neighbors(word, k).map_err(err)?;
        Ok(list
            .neighbors
            .iter()
            .map(|n| (self.inner.labels()[n.id].clone(), n.distance))
            .collect())
    }

    fn margin(&self, word: &str) -> PyResult<f64> {
        EmbeddingMatrix::from_network(&self.inner)
            .and_then(|e| e.margin(word))
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(kind={}, layers={}, labels={}, reduction={})",
            self.inner.kind(),
            self.inner.layers().len(),
            self.inner.labels().len(),
            self.inner.reduction_factor()
        )
    }
}

#[pymodule]
fn a2w_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(collapse, m)?)?;
    m.add_function(wrap_pyfunction!(log_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_loss_and_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_decode, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_preimage, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(pronunciation_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_class::<PyNetwork>()?;
    Ok(())
}
