//! Dataset export (question, answer and passage triplets) and the `.aiano`
//! project archive.
//!
//! Both outputs are pretty-printed JSON with struct-declared or sorted key
//! order, so exporting an unchanged project twice yields identical bytes.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::annotation::AnnotationEntry;
use crate::block::Origin;
use crate::corpus::{validate_document, Document, IngestViolation};
use crate::project::{Project, ProjectError};
use crate::store::{ProjectSnapshot, Store, StoreError};

pub const ARCHIVE_FORMAT_VERSION: &str = "1";
pub const ARCHIVE_EXTENSION: &str = "aiano";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub document_id: String,
    pub start: usize,
    pub end: usize,
    pub level_label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceSummary {
    pub answer_origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub entry_id: String,
    pub subject_id: String,
    pub question: String,
    pub answer: String,
    pub passages: Vec<Passage>,
    pub provenance_summary: ProvenanceSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetExport {
    pub records: Vec<DatasetRecord>,
    /// Entries left out because their question is empty.
    pub skipped: Vec<String>,
}

impl DatasetExport {
    /// The dataset file contents: a JSON array of records.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.records).expect("records always serialize");
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImportViolation {
    #[error("{message}")]
    Project {
        message: String,
        #[serde(skip)]
        source: ProjectError,
    },
    #[error("document #{index}: {violation}")]
    Document { index: usize, violation: IngestViolation },
    #[error("entry: {message}")]
    Entry { message: String },
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("project has no entries")]
    NoEntries,
    #[error("passage {document_id}[{start},{end}) of entry `{entry_id}` does not match the document")]
    PassageMismatch { entry_id: String, document_id: String, start: usize, end: usize },
    #[error("unsupported archive format version `{0}`")]
    UnsupportedVersion(String),
    #[error("malformed archive: {0}")]
    Malformed(String),
    #[error("archive failed validation: {0}")]
    ValidationFailed(ImportViolation),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn level_label(project: &Project, level_id: &str) -> String {
    project.level(level_id).map(|l| l.label.clone()).unwrap_or_else(|| level_id.to_string())
}

fn passages(snapshot: &ProjectSnapshot, entry: &AnnotationEntry) -> Result<Vec<Passage>, ExportError> {
    let mut highlights: Vec<_> = entry.highlights.iter().collect();
    highlights.sort_by(|a, b| {
        (&a.document_id, a.start, a.end, &a.highlight_id).cmp(&(&b.document_id, b.start, b.end, &b.highlight_id))
    });
    highlights
        .into_iter()
        .map(|h| {
            let text = snapshot
                .document(&h.document_id)
                .and_then(|d| d.slice(h.start, h.end))
                .filter(|t| *t == h.text_snapshot)
                .ok_or_else(|| ExportError::PassageMismatch {
                    entry_id: entry.entry_id.clone(),
                    document_id: h.document_id.clone(),
                    start: h.start,
                    end: h.end,
                })?;
            Ok(Passage {
                document_id: h.document_id.clone(),
                start: h.start,
                end: h.end,
                level_label: level_label(&snapshot.project, &h.level_id),
                text,
            })
        })
        .collect()
}

/// One record per entry with a nonempty question, ordered by entry id.
pub fn export_dataset(
    snapshot: &ProjectSnapshot,
    question_block: &str,
    answer_block: &str,
) -> Result<DatasetExport, ExportError> {
    for block in [question_block, answer_block] {
        if snapshot.project.block(block).is_none() {
            return Err(ExportError::UnknownBlock(block.to_string()));
        }
    }
    if snapshot.entries.is_empty() {
        return Err(ExportError::NoEntries);
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for entry in &snapshot.entries {
        let question = entry.block_text(question_block).unwrap_or_default();
        if question.trim().is_empty() {
            skipped.push(entry.entry_id.clone());
            continue;
        }
        let answer = entry.block_values.get(answer_block);
        let answer_origin = answer.map(|a| a.origin).unwrap_or(Origin::Human);
        let generated_at = match answer_origin {
            Origin::Human => None,
            _ => entry.last_generation(answer_block).map(|e| e.at),
        };
        records.push(DatasetRecord {
            entry_id: entry.entry_id.clone(),
            subject_id: entry.subject_id.clone(),
            question: question.to_string(),
            answer: answer.map(|a| a.value.clone()).unwrap_or_default(),
            passages: passages(snapshot, entry)?,
            provenance_summary: ProvenanceSummary {
                answer_origin,
                model_id: answer.and_then(|a| a.model_id.clone()),
                generated_at,
            },
        });
    }
    Ok(DatasetExport { records, skipped })
}

/// Contents of a `.aiano` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AianoArchive {
    pub format_version: String,
    pub project: Project,
    /// Documents in their ingest form, so import can re-validate them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<Vec<Map<String, Value>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<AnnotationEntry>>,
}

impl AianoArchive {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("archive always serializes");
        out.push('\n');
        out
    }

    /// Parses an archive, checking the format version before anything else.
    pub fn from_json(text: &str) -> Result<Self, ExportError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ExportError::Malformed(e.to_string()))?;
        match value.get("format_version") {
            Some(Value::String(v)) if v == ARCHIVE_FORMAT_VERSION => {}
            Some(Value::String(v)) => return Err(ExportError::UnsupportedVersion(v.clone())),
            Some(other) => return Err(ExportError::UnsupportedVersion(other.to_string())),
            None => return Err(ExportError::Malformed("missing format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| ExportError::Malformed(e.to_string()))
    }
}

/// Builds the archive for a project. The project definition never holds a
/// secret: provider settings only name the variable holding the key.
pub fn export_project(snapshot: &ProjectSnapshot, include_documents: bool, include_entries: bool) -> AianoArchive {
    AianoArchive {
        format_version: ARCHIVE_FORMAT_VERSION.to_string(),
        project: snapshot.project.clone(),
        documents: include_documents.then(|| {
            snapshot
                .documents
                .iter()
                .map(|d| d.to_object(&snapshot.project.body_field))
                .collect()
        }),
        entries: include_entries.then(|| snapshot.entries.clone()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportOutcome {
    pub project: Project,
    pub documents: usize,
    pub entries: usize,
}

/// Validated contents of an archive, with a fresh project id.
pub fn prepare_import(
    archive: AianoArchive,
) -> Result<(Project, Vec<Document>, Vec<AnnotationEntry>), ExportError> {
    if archive.format_version != ARCHIVE_FORMAT_VERSION {
        return Err(ExportError::UnsupportedVersion(archive.format_version));
    }
    let mut project = archive.project;
    project.meta.project_id = uuid::Uuid::new_v4().to_string();
    project.meta.created_at = Utc::now();
    project.validate().map_err(|e| {
        ExportError::ValidationFailed(ImportViolation::Project { message: e.to_string(), source: e })
    })?;

    let mut documents = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (index, object) in archive.documents.unwrap_or_default().into_iter().enumerate() {
        let doc = validate_document(&project, &Value::Object(object))
            .and_then(|d| {
                if seen.insert(d.document_id.clone()) {
                    Ok(d)
                } else {
                    Err(IngestViolation::DuplicateDocumentId { document_id: d.document_id })
                }
            })
            .map_err(|violation| ExportError::ValidationFailed(ImportViolation::Document { index, violation }))?;
        documents.push(doc);
    }
    let entries = archive
        .entries
        .unwrap_or_default()
        .into_iter()
        .map(|mut e| {
            e.project_id = project.meta.project_id.clone();
            e
        })
        .collect();
    Ok((project, documents, entries))
}

/// Recreates an archived project in `store`. Entry and document ids are
/// preserved; the project gets a new id.
pub fn import_project(store: &Store, archive_json: &str) -> Result<ImportOutcome, ExportError> {
    let archive = AianoArchive::from_json(archive_json)?;
    let (project, documents, entries) = prepare_import(archive)?;
    let outcome = ImportOutcome { project: project.clone(), documents: documents.len(), entries: entries.len() };
    store.insert_project(project, documents, entries).map_err(|e| match e {
        e @ (StoreError::Io(_) | StoreError::Corrupt { .. }) => ExportError::Store(e),
        other => ExportError::ValidationFailed(ImportViolation::Entry { message: other.to_string() }),
    })?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{Actor, EntryInput, Highlight};
    use crate::project::{AnnotationLevel, BlockDef, InputSource, ProjectMeta, ProjectSpec, SchemaDef, SchemaRole};
    use serde_json::json;

    fn store_with_entry() -> (Store, String) {
        let store = Store::in_memory();
        let project = store
            .create_project(ProjectSpec {
                meta: ProjectMeta::new("export"),
                input_schema: SchemaDef::minimal_input(),
                output_schema: SchemaDef { fields: vec![], role: SchemaRole::Output },
                levels: vec![AnnotationLevel::new("imp", "important", 0)],
                blocks: vec![
                    BlockDef::plain("q", "Question"),
                    BlockDef::collaborative("a", "Answer", "Answer.", vec![InputSource::block_ref("q")]),
                ],
                provider: None,
                body_field: "text".into(),
            })
            .unwrap();
        let pid = project.meta.project_id;
        store
            .ingest_documents(&pid, &json!([{"document_id": "d1", "subject_id": "s", "text": "Hallo Welt"}]))
            .unwrap();
        let actor = Actor::default();
        let mut input = EntryInput::new("e1", "s");
        input.block_values.insert("q".into(), crate::annotation::BlockValueInput::Text("Q?".into()));
        input.block_values.insert("a".into(), crate::annotation::BlockValueInput::Text("A.".into()));
        input.highlights.push(Highlight {
            highlight_id: "h1".into(),
            document_id: "d1".into(),
            level_id: "imp".into(),
            start: 0,
            end: 5,
            text_snapshot: "Hallo".into(),
        });
        store.upsert_entry(&pid, input, 0, &actor).unwrap();
        store.upsert_entry(&pid, EntryInput::new("e2", "s"), 0, &actor).unwrap();
        (store, pid)
    }

    #[test]
    fn single_entry_record_shape() {
        let (store, pid) = store_with_entry();
        let export = export_dataset(&store.snapshot(&pid).unwrap(), "q", "a").unwrap();
        assert_eq!(export.skipped, vec!["e2"]);
        assert_eq!(
            serde_json::to_value(&export.records).unwrap(),
            json!([{
                "entry_id": "e1",
                "subject_id": "s",
                "question": "Q?",
                "answer": "A.",
                "passages": [{"document_id": "d1", "start": 0, "end": 5, "level_label": "important", "text": "Hallo"}],
                "provenance_summary": {"answer_origin": "human"}
            }])
        );
    }

    #[test]
    fn unknown_block_and_no_entries() {
        let (store, pid) = store_with_entry();
        let snap = store.snapshot(&pid).unwrap();
        assert!(matches!(export_dataset(&snap, "q", "zz"), Err(ExportError::UnknownBlock(_))));
        let mut empty = snap.clone();
        empty.entries.clear();
        assert!(matches!(export_dataset(&empty, "q", "a"), Err(ExportError::NoEntries)));
    }

    #[test]
    fn archive_version_checks() {
        let (store, pid) = store_with_entry();
        let archive = export_project(&store.snapshot(&pid).unwrap(), false, false);
        assert!(archive.documents.is_none() && archive.entries.is_none());
        let text = archive.to_json();
        assert!(!text.contains("\"documents\""));
        let bumped = text.replacen("\"format_version\": \"1\"", "\"format_version\": \"999\"", 1);
        assert!(matches!(AianoArchive::from_json(&bumped), Err(ExportError::UnsupportedVersion(v)) if v == "999"));
        assert!(matches!(AianoArchive::from_json("[]"), Err(ExportError::Malformed(_))));
    }

    #[test]
    fn import_rejects_cyclic_archive() {
        let (store, pid) = store_with_entry();
        let mut archive = export_project(&store.snapshot(&pid).unwrap(), true, true);
        archive.project.blocks[0] =
            BlockDef::collaborative("q", "Question", "p", vec![InputSource::block_ref("a")]);
        let err = import_project(&store, &archive.to_json()).unwrap_err();
        match err {
            ExportError::ValidationFailed(ImportViolation::Project { source, .. }) => {
                assert!(matches!(source, ProjectError::BlockGraphInvalid(crate::project::GraphError::Cycle { .. })))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn import_rejects_entries_without_documents() {
        let (store, pid) = store_with_entry();
        let archive = export_project(&store.snapshot(&pid).unwrap(), false, true);
        assert!(matches!(
            import_project(&store, &archive.to_json()),
            Err(ExportError::ValidationFailed(ImportViolation::Entry { .. }))
        ));
    }
}
