//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists, converted through the `json` module.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use arcurate::dedup::{DedupParams, MinHasher};
use arcurate::eval::{self, RougeVariant};
use arcurate::filter::{apply_filters, FilterConfig};
use arcurate::ingest::{self, Source};
use arcurate::pipeline::{self, PipelineConfig, RunManifest};
use arcurate::plan::{self, LrSchedule, WarmupShape};
use arcurate::span::{self, NoiseSpec, SpanCorruptionExample, SpecialTokens};
use arcurate::tokenizer::{self, SubwordVocab};
use arcurate::Error;

fn err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_source(tag: &str) -> PyResult<Source> {
    tag.parse().map_err(err)
}

#[pyfunction]
fn normalize_text(text: &str) -> String {
    ingest::normalize_text(text)
}

/// Normalizes `text` into a document dict.
#[pyfunction]
#[pyo3(signature = (text, source = "CC"))]
fn make_document<'py>(py: Python<'py>, text: &str, source: &str) -> PyResult<Bound<'py, PyAny>> {
    let doc = ingest::document_from_text(text, parse_source(source)?).map_err(err)?;
    to_py(py, &doc)
}

/// Returns the filter decision for `text` as a dict.
#[pyfunction]
#[pyo3(signature = (text, source = "CC", config = None))]
fn filter_text<'py>(
    py: Python<'py>,
    text: &str,
    source: &str,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let config: FilterConfig = match config {
        Some(c) => from_py(c)?,
        None => FilterConfig::default(),
    };
    config.validate().map_err(err)?;
    let doc = ingest::document_from_text(text, parse_source(source)?).map_err(err)?;
    to_py(py, &apply_filters(&doc, &config))
}

/// MinHash estimate of the 5-word-shingle Jaccard similarity of two texts.
#[pyfunction]
#[pyo3(signature = (a, b, params = None))]
fn minhash_similarity(a: &str, b: &str, params: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
    let params: DedupParams = match params {
        Some(p) => from_py(p)?,
        None => DedupParams::default(),
    };
    params.validate().map_err(err)?;
    let hasher = MinHasher::new(&params);
    let sa = hasher.signature(a).map_err(err)?;
    let sb = hasher.signature(b).map_err(err)?;
    Ok(sa.similarity(&sb))
}

#[pyclass(name = "Tokenizer", frozen)]
struct PyTokenizer {
    vocab: SubwordVocab,
}

#[pymethods]
impl PyTokenizer {
    #[staticmethod]
    #[pyo3(signature = (lines, target_size, num_sentinels = 100))]
    fn train(py: Python<'_>, lines: Vec<String>, target_size: usize, num_sentinels: usize) -> PyResult<Self> {
        let vocab = py
            .detach(|| tokenizer::train_vocab(lines.iter().map(String::as_str), target_size, num_sentinels))
            .map_err(err)?;
        Ok(PyTokenizer { vocab })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTokenizer {
            vocab: SubwordVocab::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.vocab.save(&path).map_err(err)
    }

    #[getter]
    fn size(&self) -> usize {
        self.vocab.size()
    }

    #[getter]
    fn num_sentinels(&self) -> usize {
        self.vocab.num_sentinels()
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.vocab.encode(text)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.vocab.decode(&ids).map_err(err)
    }

    fn id_to_piece(&self, id: u32) -> Option<String> {
        self.vocab.id_to_piece(id)
    }

    fn sentinel_id(&self, index: usize) -> Option<u32> {
        self.vocab.sentinel_id(index)
    }

    fn __len__(&self) -> usize {
        self.vocab.size()
    }

    fn __repr__(&self) -> String {
        format!(
            "Tokenizer(size={}, sentinels={})",
            self.vocab.size(),
            self.vocab.num_sentinels()
        )
    }
}

fn specials(sentinel_base: u32, num_sentinels: usize, eos: u32, pad: u32) -> SpecialTokens {
    SpecialTokens {
        pad,
        eos,
        sentinel_base,
        num_sentinels,
    }
}

/// Span-corrupts `tokens`; returns `(input_ids, target_ids)`.
#[pyfunction]
#[pyo3(signature = (tokens, sentinel_base, num_sentinels = 100, seed = 0, counter = 0,
                    noise_density = 0.15, mean_span_length = 3.0, eos = 1, pad = 0))]
#[allow(clippy::too_many_arguments)]
fn corrupt(
    tokens: Vec<u32>,
    sentinel_base: u32,
    num_sentinels: usize,
    seed: u64,
    counter: u64,
    noise_density: f64,
    mean_span_length: f64,
    eos: u32,
    pad: u32,
) -> PyResult<(Vec<u32>, Vec<u32>)> {
    let spec = NoiseSpec {
        noise_density,
        mean_span_length,
        seed,
    };
    spec.validate().map_err(err)?;
    let ex = span::corrupt(&tokens, &spec, counter, &specials(sentinel_base, num_sentinels, eos, pad)).map_err(err)?;
    Ok((ex.input_ids, ex.target_ids))
}

/// Inverse of `corrupt`.
#[pyfunction]
#[pyo3(signature = (input_ids, target_ids, sentinel_base, num_sentinels = 100, eos = 1, pad = 0))]
fn splice(
    input_ids: Vec<u32>,
    target_ids: Vec<u32>,
    sentinel_base: u32,
    num_sentinels: usize,
    eos: u32,
    pad: u32,
) -> PyResult<Vec<u32>> {
    let ex = SpanCorruptionExample { input_ids, target_ids };
    span::splice(&ex, &specials(sentinel_base, num_sentinels, eos, pad)).map_err(err)
}

#[pyfunction]
fn plan_parallelism<'py>(
    py: Python<'py>,
    gpus: u64,
    model_parallel: u64,
    micro_batch: u64,
    global_batch: u64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &plan::plan_parallelism(gpus, model_parallel, micro_batch, global_batch).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (step, init_lr = 0.005, warmup_steps = 10_000, linear_warmup = false))]
fn learning_rate(step: i64, init_lr: f64, warmup_steps: u64, linear_warmup: bool) -> PyResult<f64> {
    let schedule = LrSchedule {
        init_lr,
        warmup_steps,
        warmup: if linear_warmup { WarmupShape::Linear } else { WarmupShape::Constant },
    };
    schedule.learning_rate(step).map_err(err)
}

#[pyfunction]
fn hyperparam_grid(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &plan::hyperparam_grid())
}

#[pyfunction]
fn pearson(preds: Vec<f64>, golds: Vec<f64>) -> PyResult<f64> {
    Ok(eval::pearson(&preds, &golds).map_err(err)?.value)
}

#[pyfunction]
fn accuracy(preds: Vec<String>, golds: Vec<String>) -> PyResult<f64> {
    Ok(eval::accuracy(&preds, &golds).map_err(err)?.value)
}

#[pyfunction]
fn f1_macro(preds: Vec<String>, golds: Vec<String>) -> PyResult<f64> {
    Ok(eval::f1_macro(&preds, &golds).map_err(err)?.value)
}

#[pyfunction]
fn bleu(preds: Vec<String>, refs: Vec<String>) -> PyResult<f64> {
    Ok(eval::bleu(&preds, &refs).map_err(err)?.value)
}

#[pyfunction]
#[pyo3(signature = (preds, refs, variant = "L"))]
fn rouge(preds: Vec<String>, refs: Vec<String>, variant: &str) -> PyResult<f64> {
    let variant = match variant {
        "1" => RougeVariant::One,
        "2" => RougeVariant::Two,
        "L" | "l" => RougeVariant::L,
        other => return Err(PyValueError::new_err(format!("unknown ROUGE variant {other:?}"))),
    };
    Ok(eval::rouge_corpus(&preds, &refs, variant).map_err(err)?.value)
}

#[pyfunction]
fn alue_average(scores: BTreeMap<String, f64>) -> PyResult<f64> {
    Ok(eval::alue_average(&scores).map_err(err)?.value)
}

/// Draws one few-shot fold from parallel `ids` / `labels` lists.
#[pyfunction]
fn sample_fewshot<'py>(
    py: Python<'py>,
    ids: Vec<String>,
    labels: Vec<String>,
    size: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    if ids.len() != labels.len() {
        return Err(PyValueError::new_err("ids and labels differ in length"));
    }
    let examples = ids
        .into_iter()
        .zip(labels)
        .map(|(id, label)| eval::LabeledExample { id, label })
        .collect();
    let fold = eval::sample_fewshot(&eval::FewShotDataset::new(examples), size, seed).map_err(err)?;
    to_py(py, &fold)
}

/// Runs the whole pipeline from a JSON config file; returns the manifest.
#[pyfunction]
#[pyo3(signature = (config_path, output_dir = None, workers = None))]
fn run_pipeline(
    py: Python<'_>,
    config_path: PathBuf,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<Bound<'_, PyAny>> {
    let mut config = PipelineConfig::from_json_file(&config_path).map_err(err)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    if let Some(w) = workers {
        config.workers = w;
    }
    let manifest = py.detach(|| pipeline::run_pipeline(&config)).map_err(err)?;
    to_py(py, &manifest)
}

#[pyfunction]
fn resume(py: Python<'_>, output_dir: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let manifest = py.detach(|| pipeline::resume(&output_dir, None)).map_err(err)?;
    to_py(py, &manifest)
}

/// Text report of a finished or partial run.
#[pyfunction]
fn report(output_dir: PathBuf) -> PyResult<String> {
    let manifest = RunManifest::load(&output_dir).map_err(err)?;
    Ok(pipeline::emit_report(&manifest).map_err(err)?.text)
}

#[pymodule]
fn arcurate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTokenizer>()?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(make_document, m)?)?;
    m.add_function(wrap_pyfunction!(filter_text, m)?)?;
    m.add_function(wrap_pyfunction!(minhash_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(splice, m)?)?;
    m.add_function(wrap_pyfunction!(plan_parallelism, m)?)?;
    m.add_function(wrap_pyfunction!(learning_rate, m)?)?;
    m.add_function(wrap_pyfunction!(hyperparam_grid, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(f1_macro, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge, m)?)?;
    m.add_function(wrap_pyfunction!(alue_average, m)?)?;
    m.add_function(wrap_pyfunction!(sample_fewshot, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(resume, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
