//! Versioned persistence for projects, documents and annotation entries.
//!
//! State lives in memory behind a read/write lock and, for directory-backed
//! stores, is mirrored to JSON files written via temp-file-and-rename so a
//! crash leaves each file either old or new:
//!
//! ```text
//! <root>/projects/<project_id>/project.json
//! <root>/projects/<project_id>/documents.json
//! <root>/projects/<project_id>/entries/<entry_id>.json
//! ```
//!
//! Every entry mutation is an optimistic compare-and-set on `version`, and the
//! provenance log of an entry only ever grows.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Utc};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{
    Actor, AnnotationEntry, EntryFilter, EntryInput, EventPayload, Highlight, ProvenanceAction,
    ProvenanceEvent,
};
use crate::block::{BlockEngine, BlockError, BlockResult, EntryContext, Generation, Origin};
use crate::corpus::{self, Corpus, CorpusError, Document, IngestReport, MatchSpan, SearchHit};
use crate::llm::{prompt_fingerprint, ChatProvider};
use crate::project::{create_project, Project, ProjectError, ProjectSpec};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

impl<F: Fn() -> DateTime<Utc> + Send + Sync> Clock for F {
    fn now(&self) -> DateTime<Utc> {
        self()
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("project `{0}` not found")]
    ProjectNotFound(String),
    #[error("entry `{0}` not found")]
    EntryNotFound(String),
    #[error("document `{0}` not found")]
    DocumentNotFound(String),
    #[error("block `{0}` not found")]
    UnknownBlock(String),
    #[error("annotation level `{0}` not found")]
    UnknownLevel(String),
    #[error("version conflict: stored version is {stored}")]
    VersionConflict { stored: u64 },
    #[error("project `{0}` already exists")]
    ProjectExists(String),
    #[error("`{0}` is not a usable id")]
    InvalidId(String),
    #[error("invalid entry: {0}")]
    EntryInvalid(String),
    #[error("span [{start}, {end}) is outside document `{document_id}` ({length} chars) or empty")]
    SpanOutOfBounds { document_id: String, start: usize, end: usize, length: usize },
    #[error("highlight text does not match document `{document_id}` at [{start}, {end})")]
    SnapshotMismatch { document_id: String, start: usize, end: usize, actual: String },
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Corpus(CorpusError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl From<CorpusError> for StoreError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::DocumentNotFound(id) => StoreError::DocumentNotFound(id),
            other => StoreError::Corpus(other),
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Ids used as file names: 1-128 chars from `[A-Za-z0-9_.-]`, not starting with a dot.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone)]
struct ProjectState {
    project: Project,
    corpus: Corpus,
    entries: BTreeMap<String, AnnotationEntry>,
}

/// A consistent copy of one project's contents.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectSnapshot {
    pub project: Project,
    /// Sorted by document id.
    pub documents: Vec<Document>,
    /// Sorted by entry id.
    pub entries: Vec<AnnotationEntry>,
}

impl ProjectSnapshot {
    pub fn document(&self, document_id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.document_id.as_str().cmp(document_id))
            .ok()
            .map(|i| &self.documents[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub entry_id: String,
    pub item: String,
    pub problem: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub entries_checked: usize,
    pub highlights_checked: usize,
    pub violations: Vec<AuditViolation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutcome {
    pub entry: AnnotationEntry,
    pub result: BlockResult,
}

pub struct Store {
    root: Option<PathBuf>,
    state: RwLock<BTreeMap<String, ProjectState>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish_non_exhaustive()
    }
}

fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let dir = path.parent().expect("store files live in a directory");
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new().prefix(".tmp").tempfile_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    tmp.write_all(b"\n")?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn check_highlight(state: &ProjectState, h: &Highlight) -> Result<()> {
    if state.project.level(&h.level_id).is_none() {
        return Err(StoreError::UnknownLevel(h.level_id.clone()));
    }
    let doc = state.corpus.get(&h.document_id)?;
    if h.start >= h.end || h.end > doc.length_chars {
        return Err(StoreError::SpanOutOfBounds {
            document_id: h.document_id.clone(),
            start: h.start,
            end: h.end,
            length: doc.length_chars,
        });
    }
    let actual = doc.slice(h.start, h.end).expect("bounds checked above");
    if actual != h.text_snapshot {
        return Err(StoreError::SnapshotMismatch {
            document_id: h.document_id.clone(),
            start: h.start,
            end: h.end,
            actual,
        });
    }
    Ok(())
}

fn new_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

impl Store {
    pub fn in_memory() -> Self {
        Store { root: None, state: RwLock::new(BTreeMap::new()), clock: Arc::new(SystemClock) }
    }

    /// Opens (or initialises) a directory-backed store and loads its contents.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let projects_dir = root.join("projects");
        fs::create_dir_all(&projects_dir)?;
        let mut state = BTreeMap::new();
        for dir in fs::read_dir(&projects_dir)? {
            let dir = dir?.path();
            let project_file = dir.join("project.json");
            if !project_file.is_file() {
                continue;
            }
            let project: Project = read_json(&project_file)?;
            let mut corpus = Corpus::default();
            let docs_file = dir.join("documents.json");
            if docs_file.is_file() {
                let docs: Vec<Document> = read_json(&docs_file)?;
                for doc in docs {
                    corpus.insert(doc);
                }
            }
            let mut entries = BTreeMap::new();
            let entries_dir = dir.join("entries");
            if entries_dir.is_dir() {
                for file in fs::read_dir(&entries_dir)? {
                    let path = file?.path();
                    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                    if name.starts_with('.') || !name.ends_with(".json") {
                        continue;
                    }
                    let entry: AnnotationEntry = read_json(&path)?;
                    entries.insert(entry.entry_id.clone(), entry);
                }
            }
            state.insert(project.meta.project_id.clone(), ProjectState { project, corpus, entries });
        }
        Ok(Store { root: Some(root), state: RwLock::new(state), clock: Arc::new(SystemClock) })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn read(&self) -> RwLockReadGuard<'_, BTreeMap<String, ProjectState>> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, BTreeMap<String, ProjectState>> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    fn project_dir(&self, project_id: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join("projects").join(project_id))
    }

    fn persist_project(&self, project: &Project) -> Result<()> {
        if let Some(dir) = self.project_dir(&project.meta.project_id) {
            write_json_atomic(&dir.join("project.json"), project)?;
        }
        Ok(())
    }

    fn persist_documents(&self, project_id: &str, docs: &[&Document]) -> Result<()> {
        if let Some(dir) = self.project_dir(project_id) {
            write_json_atomic(&dir.join("documents.json"), docs)?;
        }
        Ok(())
    }

    fn persist_entry(&self, entry: &AnnotationEntry) -> Result<()> {
        if let Some(dir) = self.project_dir(&entry.project_id) {
            write_json_atomic(&dir.join("entries").join(format!("{}.json", entry.entry_id)), entry)?;
        }
        Ok(())
    }

    // ---- projects -------------------------------------------------------

    /// Validates and persists a new project.
    pub fn create_project(&self, spec: ProjectSpec) -> Result<Project> {
        let project = create_project(spec)?;
        self.insert_project(project.clone(), Vec::new(), Vec::new())?;
        Ok(project)
    }

    /// Stores an already validated project together with documents and
    /// entries, all or nothing. Used by archive import.
    pub fn insert_project(
        &self,
        project: Project,
        documents: Vec<Document>,
        entries: Vec<AnnotationEntry>,
    ) -> Result<()> {
        project.validate()?;
        let project_id = project.meta.project_id.clone();
        if !is_safe_id(&project_id) {
            return Err(StoreError::InvalidId(project_id));
        }
        let mut corpus = Corpus::default();
        for doc in documents {
            corpus.insert(doc);
        }
        let mut state = ProjectState { project, corpus, entries: BTreeMap::new() };
        for mut entry in entries {
            entry.project_id = project_id.clone();
            validate_entry(&state, &entry)?;
            state.entries.insert(entry.entry_id.clone(), entry);
        }

        let mut all = self.write();
        if all.contains_key(&project_id) {
            return Err(StoreError::ProjectExists(project_id));
        }
        self.persist_project(&state.project)?;
        if !state.corpus.is_empty() {
            self.persist_documents(&project_id, &state.corpus.documents().collect::<Vec<_>>())?;
        }
        for entry in state.entries.values() {
            self.persist_entry(entry)?;
        }
        all.insert(project_id, state);
        Ok(())
    }

    pub fn get_project(&self, project_id: &str) -> Result<Project> {
        self.with_state(project_id, |s| Ok(s.project.clone()))
    }

    pub fn list_projects(&self) -> Vec<Project> {
        self.read().values().map(|s| s.project.clone()).collect()
    }

    fn with_state<T>(&self, project_id: &str, f: impl FnOnce(&ProjectState) -> Result<T>) -> Result<T> {
        let all = self.read();
        let state = all
            .get(project_id)
            .ok_or_else(|| StoreError::ProjectNotFound(project_id.to_string()))?;
        f(state)
    }

    pub fn snapshot(&self, project_id: &str) -> Result<ProjectSnapshot> {
        self.with_state(project_id, |s| {
            Ok(ProjectSnapshot {
                project: s.project.clone(),
                documents: s.corpus.documents().cloned().collect(),
                entries: s.entries.values().cloned().collect(),
            })
        })
    }

    // ---- corpus ---------------------------------------------------------

    /// Validates each row independently; accepted rows are persisted and
    /// indexed in one step under the write lock.
    pub fn ingest_documents(&self, project_id: &str, payload: &serde_json::Value) -> Result<IngestReport> {
        let mut all = self.write();
        let state = all
            .get_mut(project_id)
            .ok_or_else(|| StoreError::ProjectNotFound(project_id.to_string()))?;
        let (docs, report) =
            corpus::validate_payload(&state.project, payload, &|id| state.corpus.contains(id))?;
        if docs.is_empty() {
            return Ok(report);
        }
        let mut merged: Vec<&Document> = state.corpus.documents().chain(docs.iter()).collect();
        merged.sort_by(|a, b| a.document_id.cmp(&b.document_id));
        self.persist_documents(project_id, &merged)?;
        for doc in docs {
            state.corpus.insert(doc);
        }
        Ok(report)
    }

    pub fn get_document(&self, project_id: &str, document_id: &str) -> Result<Document> {
        self.with_state(project_id, |s| Ok(s.corpus.get(document_id)?.clone()))
    }

    pub fn search_corpus(&self, project_id: &str, query: &str, limit: usize) -> Result<Vec<SearchHit>> {
        self.with_state(project_id, |s| Ok(s.corpus.search(query, limit)?))
    }

    pub fn search_within(&self, project_id: &str, document_id: &str, query: &str) -> Result<Vec<MatchSpan>> {
        self.with_state(project_id, |s| Ok(s.corpus.search_within(document_id, query)?))
    }

    // ---- entries --------------------------------------------------------

    pub fn get_entry(&self, project_id: &str, entry_id: &str) -> Result<AnnotationEntry> {
        self.with_state(project_id, |s| {
            s.entries
                .get(entry_id)
                .cloned()
                .ok_or_else(|| StoreError::EntryNotFound(entry_id.to_string()))
        })
    }

    /// Entries matching `filter`, most recently updated first.
    pub fn list_entries(&self, project_id: &str, filter: &EntryFilter) -> Result<Vec<AnnotationEntry>> {
        self.with_state(project_id, |s| {
            let mut entries: Vec<AnnotationEntry> =
                s.entries.values().filter(|e| filter.matches(e)).cloned().collect();
            entries.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then_with(|| a.entry_id.cmp(&b.entry_id)));
            Ok(entries)
        })
    }

    /// Runs `apply` against a copy of the stored entry (or a fresh one when
    /// `expected_version` is 0 and the entry does not exist), then commits it
    /// with the version bumped.
    fn mutate_entry(
        &self,
        project_id: &str,
        entry_id: &str,
        expected_version: u64,
        create_subject: Option<&str>,
        apply: impl FnOnce(&ProjectState, &mut AnnotationEntry, DateTime<Utc>) -> Result<()>,
    ) -> Result<AnnotationEntry> {
        let mut all = self.write();
        let state = all
            .get_mut(project_id)
            .ok_or_else(|| StoreError::ProjectNotFound(project_id.to_string()))?;
        let now = self.clock.now();
        let mut entry = match state.entries.get(entry_id) {
            Some(stored) if stored.version != expected_version => {
                return Err(StoreError::VersionConflict { stored: stored.version })
            }
            Some(stored) => stored.clone(),
            None => match create_subject {
                Some(_) if expected_version != 0 => {
                    return Err(StoreError::VersionConflict { stored: 0 })
                }
                Some(subject_id) => AnnotationEntry {
                    entry_id: entry_id.to_string(),
                    project_id: project_id.to_string(),
                    subject_id: subject_id.to_string(),
                    highlights: Vec::new(),
                    block_values: BTreeMap::new(),
                    provenance: Vec::new(),
                    version: 0,
                    updated_at: now,
                },
                None => return Err(StoreError::EntryNotFound(entry_id.to_string())),
            },
        };
        let events_before = entry.provenance.len();
        apply(state, &mut entry, now)?;
        debug_assert!(entry.provenance.len() >= events_before);
        entry.version = expected_version + 1;
        entry.updated_at = now;
        validate_entry(state, &entry)?;
        self.persist_entry(&entry)?;
        state.entries.insert(entry.entry_id.clone(), entry.clone());
        Ok(entry)
    }

    /// Whole-entry write. Highlight and block-value differences against the
    /// stored entry are turned into provenance events; the stored log is kept
    /// and only appended to.
    pub fn upsert_entry(
        &self,
        project_id: &str,
        input: EntryInput,
        expected_version: u64,
        actor: &Actor,
    ) -> Result<AnnotationEntry> {
        let entry_id = if input.entry_id.is_empty() { new_id() } else { input.entry_id.clone() };
        if !is_safe_id(&entry_id) {
            return Err(StoreError::EntryInvalid(format!("unusable entry id `{entry_id}`")));
        }
        if input.subject_id.is_empty() {
            return Err(StoreError::EntryInvalid("subject_id must not be empty".into()));
        }
        let subject = input.subject_id.clone();
        self.mutate_entry(project_id, &entry_id, expected_version, Some(&subject), |state, entry, now| {
            entry.subject_id = input.subject_id;

            let mut incoming = input.highlights;
            for h in incoming.iter_mut() {
                if h.highlight_id.is_empty() {
                    h.highlight_id = new_id();
                }
                check_highlight(state, h)?;
            }
            let kept: HashSet<&Highlight> = incoming.iter().collect();
            let before: HashSet<&Highlight> = entry.highlights.iter().collect();
            for h in entry.highlights.iter().filter(|h| !kept.contains(h)) {
                entry.provenance.push(ProvenanceEvent::highlight(
                    now,
                    actor.clone(),
                    ProvenanceAction::HighlightRemoved,
                    h,
                ));
            }
            let added: Vec<ProvenanceEvent> = incoming
                .iter()
                .filter(|h| !before.contains(h))
                .map(|h| ProvenanceEvent::highlight(now, actor.clone(), ProvenanceAction::HighlightAdded, h))
                .collect();
            entry.provenance.extend(added);
            entry.highlights = incoming;

            let mut values = BTreeMap::new();
            let block_ids: Vec<String> = entry
                .block_values
                .keys()
                .chain(input.block_values.keys())
                .cloned()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            for block_id in block_ids {
                let previous = entry.block_values.get(&block_id);
                let Some(text) = input.block_values.get(&block_id).map(|v| v.text()) else {
                    // dropped by the client: record the clearing
                    entry.provenance.push(edit_event(now, actor, &block_id, Origin::Human, ""));
                    continue;
                };
                let next = BlockResult::edited(&block_id, previous, text);
                if previous != Some(&next) {
                    entry.provenance.push(edit_event(now, actor, &block_id, next.origin, &next.value));
                }
                values.insert(block_id, next);
            }
            entry.block_values = values;
            Ok(())
        })
    }

    pub fn add_highlight(
        &self,
        project_id: &str,
        entry_id: &str,
        mut highlight: Highlight,
        expected_version: u64,
        actor: &Actor,
    ) -> Result<AnnotationEntry> {
        if highlight.highlight_id.is_empty() {
            highlight.highlight_id = new_id();
        }
        self.mutate_entry(project_id, entry_id, expected_version, None, |state, entry, now| {
            check_highlight(state, &highlight)?;
            if entry.highlights.iter().any(|h| h.highlight_id == highlight.highlight_id) {
                return Err(StoreError::EntryInvalid(format!(
                    "highlight `{}` already exists",
                    highlight.highlight_id
                )));
            }
            entry.provenance.push(ProvenanceEvent::highlight(
                now,
                actor.clone(),
                ProvenanceAction::HighlightAdded,
                &highlight,
            ));
            entry.highlights.push(highlight);
            Ok(())
        })
    }

    pub fn remove_highlight(
        &self,
        project_id: &str,
        entry_id: &str,
        highlight_id: &str,
        expected_version: u64,
        actor: &Actor,
    ) -> Result<AnnotationEntry> {
        self.mutate_entry(project_id, entry_id, expected_version, None, |_, entry, now| {
            let pos = entry
                .highlights
                .iter()
                .position(|h| h.highlight_id == highlight_id)
                .ok_or_else(|| StoreError::EntryInvalid(format!("no highlight `{highlight_id}`")))?;
            let removed = entry.highlights.remove(pos);
            entry.provenance.push(ProvenanceEvent::highlight(
                now,
                actor.clone(),
                ProvenanceAction::HighlightRemoved,
                &removed,
            ));
            Ok(())
        })
    }

    /// A human writes a block value.
    pub fn set_block_value(
        &self,
        project_id: &str,
        entry_id: &str,
        block_id: &str,
        text: &str,
        expected_version: u64,
        actor: &Actor,
    ) -> Result<AnnotationEntry> {
        self.mutate_entry(project_id, entry_id, expected_version, None, |state, entry, now| {
            if state.project.block(block_id).is_none() {
                return Err(StoreError::UnknownBlock(block_id.to_string()));
            }
            let next = BlockResult::edited(block_id, entry.block_values.get(block_id), text);
            if entry.block_values.get(block_id) != Some(&next) {
                entry.provenance.push(edit_event(now, actor, block_id, next.origin, &next.value));
                entry.block_values.insert(block_id.to_string(), next);
            }
            Ok(())
        })
    }

    /// Stores a model generation and its prompt.
    pub fn record_generation(
        &self,
        project_id: &str,
        entry_id: &str,
        generation: &Generation,
        expected_version: u64,
    ) -> Result<AnnotationEntry> {
        let result = &generation.result;
        let (Some(model_id), Some(fingerprint), Some(messages)) =
            (&result.model_id, &result.prompt_fingerprint, &generation.prompt)
        else {
            return Err(StoreError::EntryInvalid("generation lacks model provenance".into()));
        };
        if prompt_fingerprint(messages) != *fingerprint {
            return Err(StoreError::EntryInvalid("prompt fingerprint does not match prompt".into()));
        }
        self.mutate_entry(project_id, entry_id, expected_version, None, |state, entry, now| {
            if state.project.block(&result.block_id).is_none() {
                return Err(StoreError::UnknownBlock(result.block_id.clone()));
            }
            entry.provenance.push(ProvenanceEvent {
                at: now,
                actor: Actor::Ai { model_id: model_id.clone() },
                action: ProvenanceAction::BlockGenerated,
                payload: EventPayload::Generation {
                    block_id: result.block_id.clone(),
                    model_id: model_id.clone(),
                    prompt_fingerprint: fingerprint.clone(),
                    messages: messages.clone(),
                },
            });
            entry.block_values.insert(result.block_id.clone(), result.clone());
            Ok(())
        })
    }

    /// Builds the execution context of an entry. Focus defaults to the
    /// highlighted documents.
    pub fn entry_context(
        &self,
        project_id: &str,
        entry_id: &str,
        focus: Option<&[String]>,
    ) -> Result<(Project, AnnotationEntry, EntryContext)> {
        self.with_state(project_id, |s| {
            let entry = s
                .entries
                .get(entry_id)
                .cloned()
                .ok_or_else(|| StoreError::EntryNotFound(entry_id.to_string()))?;
            let focus_ids = match focus {
                Some(ids) => ids.to_vec(),
                None => entry.highlighted_documents(),
            };
            let documents = focus_ids
                .iter()
                .map(|id| s.corpus.get(id).cloned())
                .collect::<Result<Vec<_>, _>>()?;
            let ctx = EntryContext {
                entry_id: entry.entry_id.clone(),
                project_id: project_id.to_string(),
                documents,
                highlights: entry.highlights.clone(),
                block_values: entry.block_texts(),
            };
            Ok((s.project.clone(), entry, ctx))
        })
    }

    /// Executes a block for an entry and records the outcome. The provider
    /// is called without holding any lock; the write is a compare-and-set
    /// against the version read beforehand. Plain blocks return their empty
    /// placeholder and write nothing.
    pub fn generate_block(
        &self,
        project_id: &str,
        entry_id: &str,
        block_id: &str,
        provider: &dyn ChatProvider,
        focus: Option<&[String]>,
    ) -> Result<GenerateOutcome> {
        let (project, entry, ctx) = self.entry_context(project_id, entry_id, focus)?;
        let block = project
            .block(block_id)
            .ok_or_else(|| StoreError::UnknownBlock(block_id.to_string()))?;
        let generation = BlockEngine::new(&project).run_block(block, &ctx, provider)?;
        if generation.prompt.is_none() {
            return Ok(GenerateOutcome { entry, result: generation.result });
        }
        let entry = self.record_generation(project_id, entry_id, &generation, entry.version)?;
        Ok(GenerateOutcome { entry, result: generation.result })
    }

    /// Re-checks every stored entry: highlight snapshots against document
    /// text, result provenance pairing and generation fingerprints.
    pub fn audit(&self, project_id: &str) -> Result<AuditReport> {
        self.with_state(project_id, |s| {
            let mut report = AuditReport::default();
            for entry in s.entries.values() {
                report.entries_checked += 1;
                let mut flag = |item: &str, problem: String| {
                    report.violations.push(AuditViolation {
                        entry_id: entry.entry_id.clone(),
                        item: item.to_string(),
                        problem,
                    })
                };
                for h in &entry.highlights {
                    if let Err(e) = check_highlight(s, h) {
                        flag(&h.highlight_id, e.to_string());
                    }
                }
                for (block_id, result) in &entry.block_values {
                    if !result.is_consistent() {
                        flag(block_id, "origin and model provenance disagree".into());
                    }
                }
                for event in &entry.provenance {
                    if let EventPayload::Generation { block_id, prompt_fingerprint: fp, messages, .. } =
                        &event.payload
                    {
                        if prompt_fingerprint(messages) != *fp {
                            flag(block_id, "generation fingerprint does not re-derive".into());
                        }
                    }
                }
                report.highlights_checked += entry.highlights.len();
            }
            Ok(report)
        })
    }
}

fn edit_event(now: DateTime<Utc>, actor: &Actor, block_id: &str, origin: Origin, value: &str) -> ProvenanceEvent {
    ProvenanceEvent {
        at: now,
        actor: actor.clone(),
        action: ProvenanceAction::BlockEdited,
        payload: EventPayload::Edit { block_id: block_id.to_string(), origin, value: value.to_string() },
    }
}

fn validate_entry(state: &ProjectState, entry: &AnnotationEntry) -> Result<()> {
    if !is_safe_id(&entry.entry_id) {
        return Err(StoreError::EntryInvalid(format!("unusable entry id `{}`", entry.entry_id)));
    }
    let mut ids = HashSet::new();
    for h in &entry.highlights {
        if !ids.insert(&h.highlight_id) {
            return Err(StoreError::EntryInvalid(format!("duplicate highlight id `{}`", h.highlight_id)));
        }
        check_highlight(state, h)?;
    }
    for (block_id, result) in &entry.block_values {
        if state.project.block(block_id).is_none() {
            return Err(StoreError::UnknownBlock(block_id.clone()));
        }
        if result.block_id != *block_id || !result.is_consistent() {
            return Err(StoreError::EntryInvalid(format!("inconsistent value for block `{block_id}`")));
        }
    }
    for event in &entry.provenance {
        if let EventPayload::Generation { prompt_fingerprint: fp, messages, .. } = &event.payload {
            if prompt_fingerprint(messages) != *fp {
                return Err(StoreError::EntryInvalid("generation fingerprint does not re-derive".into()));
            }
        }
    }
    Ok(())
}
