//! Python bindings: `import corpusprep_py`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use corpusprep::ckpt::average_checkpoint_files;
use corpusprep::corpus::{FilterOutcome, LangCode, SentencePair};
use corpusprep::dedup;
use corpusprep::mdl::{self, MdlParams};
use corpusprep::pipeline::{run_pipeline, PipelineConfig};
use corpusprep::routing::{self, Route, RoutingTable, TagFormat};
use corpusprep::rules::{self, RuleConfig};
use corpusprep::shuffle::shuffledness_of_order;
use corpusprep::textnorm;
use corpusprep::vocab::{self, MergeConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn lang(code: &str) -> PyResult<LangCode> {
    LangCode::new(code).map_err(value_err)
}

#[pyfunction]
fn strip_diacritics(text: &str) -> String {
    textnorm::strip_diacritics(text)
}

/// Sorted digit runs of `text`.
#[pyfunction]
fn extract_numbers(text: &str) -> Vec<String> {
    textnorm::extract_numbers(text).as_slice().to_vec()
}

#[pyclass(frozen, get_all, name = "MdlResult")]
struct PyMdlResult {
    mdl_bits: f64,
    ratio: f64,
    noisy: bool,
    segmentation: Vec<String>,
}

#[pymethods]
impl PyMdlResult {
    fn __repr__(&self) -> String {
        format!("MdlResult(mdl_bits={:.4}, ratio={:.4}, noisy={})", self.mdl_bits, self.ratio, self.noisy)
    }
}

impl From<mdl::MdlResult> for PyMdlResult {
    fn from(r: mdl::MdlResult) -> Self {
        PyMdlResult { mdl_bits: r.mdl_bits, ratio: r.ratio, noisy: r.noisy, segmentation: r.segmentation.entries }
    }
}

fn mdl_params(c: f64, t: f64, max_candidate_len: usize) -> MdlParams {
    MdlParams { c, t, max_candidate_len, ..MdlParams::default() }
}

#[pyfunction]
#[pyo3(signature = (sentence, c = 2.0, t = 2.0, max_candidate_len = 20))]
fn mdl_score(sentence: &str, c: f64, t: f64, max_candidate_len: usize) -> PyResult<PyMdlResult> {
    mdl::mdl_score(sentence, &mdl_params(c, t, max_candidate_len)).map(Into::into).map_err(value_err)
}

/// Exhaustive minimum; sentences of at most 16 code points.
#[pyfunction]
#[pyo3(signature = (sentence, c = 2.0, t = 2.0))]
fn mdl_exact(sentence: &str, c: f64, t: f64) -> PyResult<PyMdlResult> {
    mdl::mdl_exact(sentence, &mdl_params(c, t, 20)).map(Into::into).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (sentence, c = 2.0, t = 2.0))]
fn is_noisy(sentence: &str, c: f64, t: f64) -> PyResult<bool> {
    mdl::is_noisy(sentence, &mdl_params(c, t, 20)).map_err(value_err)
}

#[derive(FromPyObject)]
enum Key {
    Text(String),
    Bytes(Vec<u8>),
}

impl Key {
    fn bytes(&self) -> &[u8] {
        match self {
            Key::Text(s) => s.as_bytes(),
            Key::Bytes(b) => b,
        }
    }
}

#[pyclass(name = "BloomFilter")]
struct PyBloomFilter(dedup::BloomFilter);

#[pymethods]
impl PyBloomFilter {
    #[new]
    #[pyo3(signature = (capacity, fp_rate, seed = 0))]
    fn new(capacity: u64, fp_rate: f64, seed: u64) -> PyResult<Self> {
        dedup::BloomFilter::new(capacity, fp_rate, seed).map(PyBloomFilter).map_err(value_err)
    }

    /// Inserts `key`; returns whether it was possibly present before.
    fn insert(&mut self, key: Key) -> bool {
        self.0.insert(key.bytes())
    }

    fn __contains__(&self, key: Key) -> bool {
        self.0.contains(key.bytes())
    }

    fn __len__(&self) -> usize {
        self.0.len() as usize
    }

    #[getter]
    fn num_bits(&self) -> u64 {
        self.0.num_bits()
    }

    #[getter]
    fn num_hashes(&self) -> u32 {
        self.0.num_hashes()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        self.0.write_to(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let r = BufReader::new(File::open(path).map_err(io_err)?);
        dedup::BloomFilter::read_from(r).map(PyBloomFilter).map_err(value_err)
    }
}

#[pyclass(frozen, get_all, name = "FilterResult")]
struct PyFilterResult {
    keep: bool,
    reason: Option<String>,
    modified: bool,
    src: Option<String>,
    tgt: Option<String>,
}

#[pymethods]
impl PyFilterResult {
    fn __repr__(&self) -> String {
        match &self.reason {
            Some(r) => format!("FilterResult(drop={r})"),
            None => format!("FilterResult(keep, modified={})", self.modified),
        }
    }
}

/// Applies the pair cleaning rules with default thresholds unless overridden.
#[pyfunction]
#[pyo3(signature = (src_lang, tgt_lang, src, tgt, min_chars = None, max_word_chars = None))]
fn clean_pair(
    src_lang: &str,
    tgt_lang: &str,
    src: &str,
    tgt: &str,
    min_chars: Option<usize>,
    max_word_chars: Option<usize>,
) -> PyResult<PyFilterResult> {
    let pair = SentencePair::new(lang(src_lang)?, lang(tgt_lang)?, src, tgt).map_err(value_err)?;
    let mut cfg = RuleConfig::default();
    cfg.min_chars = min_chars.unwrap_or(cfg.min_chars);
    cfg.max_word_chars = max_word_chars.unwrap_or(cfg.max_word_chars);
    cfg.validate().map_err(value_err)?;
    Ok(match rules::clean_pair(&pair, &cfg) {
        FilterOutcome::Keep { record, modified } => {
            PyFilterResult { keep: true, reason: None, modified, src: Some(record.src), tgt: Some(record.tgt) }
        }
        FilterOutcome::Drop(r) => {
            PyFilterResult { keep: false, reason: Some(r.to_string()), modified: false, src: None, tgt: None }
        }
    })
}

#[pyclass(name = "UnigramVocab")]
struct PyUnigramVocab(vocab::UnigramVocab);

#[pymethods]
impl PyUnigramVocab {
    #[new]
    fn new(entries: Vec<(String, f64)>) -> PyResult<Self> {
        vocab::UnigramVocab::from_entries(entries).map(PyUnigramVocab).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let r = BufReader::new(File::open(path).map_err(io_err)?);
        vocab::UnigramVocab::read(r).map(PyUnigramVocab).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        self.0.write(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, piece: &str) -> bool {
        self.0.contains(piece)
    }

    fn logprob(&self, piece: &str) -> Option<f64> {
        self.0.get(piece)
    }

    #[pyo3(signature = (text, unk_logprob = -20.0))]
    fn segment(&self, text: &str, unk_logprob: f64) -> Vec<String> {
        vocab::viterbi_segment(text, &self.0, unk_logprob).texts().iter().map(|s| s.to_string()).collect()
    }

    #[pyo3(signature = (new, delta = 10.0, unk_logprob = -20.0))]
    fn merge(&self, new: &PyUnigramVocab, delta: f64, unk_logprob: f64) -> PyResult<PyUnigramVocab> {
        vocab::merge_vocab(&self.0, &new.0, &MergeConfig { delta, unk_logprob }).map(PyUnigramVocab).map_err(value_err)
    }

    /// Number of old-coverable lines whose segmentation changed under `merged`.
    #[pyo3(signature = (merged, lines, unk_logprob = -20.0))]
    fn invariance_mismatches(&self, merged: &PyUnigramVocab, lines: Vec<String>, unk_logprob: f64) -> usize {
        vocab::verify_invariance(&lines, &self.0, &merged.0, unk_logprob).mismatches
    }
}

#[pyfunction]
#[pyo3(signature = (src, tgt, pivot = "eng", hubs = vec!["eng".to_string(), "fra".to_string()]))]
fn plan_route<'py>(py: Python<'py>, src: &str, tgt: &str, pivot: &str, hubs: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let hubs = hubs.iter().map(|h| lang(h)).collect::<PyResult<Vec<_>>>()?;
    let table = RoutingTable::new(lang(pivot)?, hubs).map_err(value_err)?;
    let route = routing::plan_route(lang(src)?, lang(tgt)?, &table).map_err(value_err)?;
    let d = PyDict::new(py);
    let (s, t) = route.endpoints();
    d.set_item("route", if matches!(route, Route::Direct { .. }) { "direct" } else { "pivot" })?;
    d.set_item("src", s.as_str())?;
    d.set_item("via", route.via().map(|v| v.to_string()))?;
    d.set_item("tgt", t.as_str())?;
    Ok(d)
}

/// `(encoder_input, decoder_input)` with the target-language token prepended.
#[pyfunction]
fn tag(src_lang: &str, tgt_lang: &str, src: &str, tgt: &str) -> PyResult<(String, String)> {
    let pair = SentencePair::new(lang(src_lang)?, lang(tgt_lang)?, src, tgt).map_err(value_err)?;
    routing::tag_for_training(&pair, &TagFormat::default()).map_err(value_err)
}

#[pyfunction]
fn detag(text: &str) -> PyResult<(String, String)> {
    let (l, rest) = TagFormat::default().detag(text).map_err(value_err)?;
    Ok((l.to_string(), rest.to_string()))
}

/// Averages the last `k` checkpoint files into `out`; returns the source names.
#[pyfunction]
fn average_checkpoints(paths: Vec<PathBuf>, k: usize, out: PathBuf) -> PyResult<Vec<String>> {
    let avg = average_checkpoint_files(&paths, k).map_err(value_err)?;
    avg.save(&out).map_err(io_err)?;
    Ok(avg.metadata.get("avg.sources").map(|s| s.split(',').map(String::from).collect()).unwrap_or_default())
}

/// `(spearman_rho, mean_normalized_displacement)` of an emission order, where
/// `emitted[j]` is the input index of the j-th output record.
#[pyfunction]
fn shuffledness(emitted: Vec<u64>) -> (f64, f64) {
    let s = shuffledness_of_order(&emitted);
    (s.spearman_rho, s.mean_normalized_displacement)
}

/// Runs a TOML pipeline config and returns the JSON report.
#[pyfunction]
fn run_pipeline_toml(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = PipelineConfig::from_toml(config).map_err(value_err)?;
    let report = py.detach(|| run_pipeline(&cfg)).map_err(value_err)?;
    Ok(report.to_json())
}

#[pymodule]
fn corpusprep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(strip_diacritics, m)?)?;
    m.add_function(wrap_pyfunction!(extract_numbers, m)?)?;
    m.add_function(wrap_pyfunction!(mdl_score, m)?)?;
    m.add_function(wrap_pyfunction!(mdl_exact, m)?)?;
    m.add_function(wrap_pyfunction!(is_noisy, m)?)?;
    m.add_function(wrap_pyfunction!(clean_pair, m)?)?;
    m.add_function(wrap_pyfunction!(plan_route, m)?)?;
    m.add_function(wrap_pyfunction!(tag, m)?)?;
    m.add_function(wrap_pyfunction!(detag, m)?)?;
    m.add_function(wrap_pyfunction!(average_checkpoints, m)?)?;
    m.add_function(wrap_pyfunction!(shuffledness, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline_toml, m)?)?;
    m.add_class::<PyMdlResult>()?;
    m.add_class::<PyBloomFilter>()?;
    m.add_class::<PyFilterResult>()?;
    m.add_class::<PyUnigramVocab>()?;
    Ok(())
}
