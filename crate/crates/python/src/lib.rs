//! Python bindings. Structured values cross the boundary as JSON strings so
//! the Python side can use `json.loads` and keep plain dicts.

use std::collections::BTreeSet;

use aiano_core::evaluation::{self, EvaluationError, GoldSpec, RetrievalMetrics};
use aiano_core::export::{self, ExportError};
use aiano_core::store::StoreError;
use aiano_core::{project, Actor, EntryFilter, EntryInput, MockProvider, ProjectSpec};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(aiano, AianoError, PyException, "Any failure reported by the engine.");
create_exception!(aiano, NotFoundError, AianoError, "Unknown project, entry, document or block.");
create_exception!(aiano, VersionConflict, AianoError, "The entry changed since the expected version.");

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("engine types serialize")
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| AianoError::new_err(format!("invalid {what} JSON: {e}")))
}

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::VersionConflict { .. } => VersionConflict::new_err(e.to_string()),
        StoreError::ProjectNotFound(_)
        | StoreError::EntryNotFound(_)
        | StoreError::DocumentNotFound(_)
        | StoreError::UnknownBlock(_) => NotFoundError::new_err(e.to_string()),
        other => AianoError::new_err(other.to_string()),
    }
}

fn export_err(e: ExportError) -> PyErr {
    match e {
        ExportError::Store(inner) => store_err(inner),
        ExportError::UnknownBlock(_) => NotFoundError::new_err(e.to_string()),
        other => AianoError::new_err(other.to_string()),
    }
}

fn eval_err(e: EvaluationError) -> PyErr {
    AianoError::new_err(e.to_string())
}

type Triple = (f64, f64, f64);

fn triple(m: RetrievalMetrics) -> Triple {
    (m.precision, m.recall, m.f1)
}

fn metrics((precision, recall, f1): Triple) -> RetrievalMetrics {
    RetrievalMetrics { precision, recall, f1 }
}

/// `(precision, recall, f1)` of a retrieved document set against the gold set.
#[pyfunction]
fn retrieval_metrics(retrieved: Vec<String>, relevant: Vec<String>) -> PyResult<Triple> {
    let retrieved: BTreeSet<String> = retrieved.into_iter().collect();
    let relevant: BTreeSet<String> = relevant.into_iter().collect();
    evaluation::retrieval_metrics(&retrieved, &relevant).map(triple).map_err(eval_err)
}

#[pyfunction]
fn macro_average(per_question: Vec<Triple>) -> PyResult<Triple> {
    let ms: Vec<RetrievalMetrics> = per_question.into_iter().map(metrics).collect();
    evaluation::macro_average(&ms).map(triple).map_err(eval_err)
}

/// `(precision_pct, recall_pct, f1_pct, mean_pct)` of `candidate` over `baseline`.
#[pyfunction]
fn percent_improvement(candidate: Triple, baseline: Triple) -> PyResult<(f64, f64, f64, f64)> {
    let i = evaluation::percent_improvement(&metrics(candidate), &metrics(baseline)).map_err(eval_err)?;
    Ok((i.precision_pct, i.recall_pct, i.f1_pct, i.mean_pct))
}

/// Validates a project config and returns the normalized project as JSON.
#[pyfunction]
fn validate_project(config: &str) -> PyResult<String> {
    let spec: ProjectSpec = parse("project", config)?;
    project::create_project(spec)
        .map(|p| to_json(&p))
        .map_err(|e| AianoError::new_err(e.to_string()))
}

/// Project store, on disk when given a path and in memory otherwise.
#[pyclass(frozen)]
struct Store {
    inner: aiano_core::Store,
    mock: MockProvider,
}

#[pymethods]
impl Store {
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<std::path::PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => aiano_core::Store::open(p).map_err(store_err)?,
            None => aiano_core::Store::in_memory(),
        };
        Ok(Store { inner, mock: MockProvider::new() })
    }

    /// Returns the new project id.
    fn create_project(&self, config: &str) -> PyResult<String> {
        let spec: ProjectSpec = parse("project", config)?;
        Ok(self.inner.create_project(spec).map_err(store_err)?.meta.project_id)
    }

    fn get_project(&self, project_id: &str) -> PyResult<String> {
        self.inner.get_project(project_id).map(|p| to_json(&p)).map_err(store_err)
    }

    fn list_projects(&self) -> Vec<String> {
        self.inner.list_projects().into_iter().map(|p| p.meta.project_id).collect()
    }

    /// Ingests a JSON array of documents and returns the ingest report.
    fn ingest_documents(&self, project_id: &str, documents: &str) -> PyResult<String> {
        let payload: serde_json::Value = parse("documents", documents)?;
        self.inner.ingest_documents(project_id, &payload).map(|r| to_json(&r)).map_err(store_err)
    }

    /// `(document_id, score)` pairs, best first.
    #[pyo3(signature = (project_id, query, limit=20))]
    fn search(&self, project_id: &str, query: &str, limit: usize) -> PyResult<Vec<(String, f64)>> {
        let hits = self.inner.search_corpus(project_id, query, limit).map_err(store_err)?;
        Ok(hits.into_iter().map(|h| (h.document_id, h.score)).collect())
    }

    /// Character spans of `query` inside one document.
    fn find(&self, project_id: &str, document_id: &str, query: &str) -> PyResult<Vec<(usize, usize)>> {
        let spans = self.inner.search_within(project_id, document_id, query).map_err(store_err)?;
        Ok(spans.into_iter().map(|s| (s.start, s.end)).collect())
    }

    #[pyo3(signature = (project_id, entry, expected_version, annotator="python"))]
    fn upsert_entry(&self, project_id: &str, entry: &str, expected_version: u64, annotator: &str) -> PyResult<String> {
        let input: EntryInput = parse("entry", entry)?;
        self.inner
            .upsert_entry(project_id, input, expected_version, &Actor::human(annotator))
            .map(|e| to_json(&e))
            .map_err(store_err)
    }

    fn get_entry(&self, project_id: &str, entry_id: &str) -> PyResult<String> {
        self.inner.get_entry(project_id, entry_id).map(|e| to_json(&e)).map_err(store_err)
    }

    fn list_entries(&self, project_id: &str) -> PyResult<String> {
        self.inner.list_entries(project_id, &EntryFilter::default()).map(|e| to_json(&e)).map_err(store_err)
    }

    /// Runs a block with the deterministic mock model and returns the block
    /// result as JSON.
    fn generate_mock(&self, project_id: &str, entry_id: &str, block_id: &str) -> PyResult<String> {
        let outcome = self.inner.generate_block(project_id, entry_id, block_id, &self.mock, None).map_err(store_err)?;
        Ok(to_json(&outcome.result))
    }

    fn export_dataset(&self, project_id: &str, question_block: &str, answer_block: &str) -> PyResult<String> {
        let snapshot = self.inner.snapshot(project_id).map_err(store_err)?;
        export::export_dataset(&snapshot, question_block, answer_block).map(|d| d.to_json()).map_err(export_err)
    }

    #[pyo3(signature = (project_id, documents=true, entries=true))]
    fn export_archive(&self, project_id: &str, documents: bool, entries: bool) -> PyResult<String> {
        let snapshot = self.inner.snapshot(project_id).map_err(store_err)?;
        Ok(export::export_project(&snapshot, documents, entries).to_json())
    }

    /// Returns the id of the imported copy.
    fn import_archive(&self, archive: &str) -> PyResult<String> {
        let outcome = export::import_project(&self.inner, archive).map_err(export_err)?;
        Ok(outcome.project.meta.project_id)
    }

    /// Scores entries against `{question_id: [document_id, ...]}`.
    fn evaluate(&self, project_id: &str, gold: &str) -> PyResult<String> {
        let gold: GoldSpec = parse("gold", gold)?;
        let snapshot = self.inner.snapshot(project_id).map_err(store_err)?;
        evaluation::evaluate(&snapshot, &gold).map(|r| to_json(&r)).map_err(eval_err)
    }
}

#[pymodule]
fn aiano(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AianoError", m.py().get_type::<AianoError>())?;
    m.add("NotFoundError", m.py().get_type::<NotFoundError>())?;
    m.add("VersionConflict", m.py().get_type::<VersionConflict>())?;
    m.add_function(wrap_pyfunction!(retrieval_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(macro_average, m)?)?;
    m.add_function(wrap_pyfunction!(percent_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(validate_project, m)?)?;
    m.add_class::<Store>()?;
    Ok(())
}
