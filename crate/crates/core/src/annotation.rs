//! Annotation entries: highlights, block values and the provenance log.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::block::{BlockResult, Origin};
use crate::llm::PromptMessages;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Highlight {
    /// Assigned by the store when left empty.
    #[serde(default)]
    pub highlight_id: String,
    pub document_id: String,
    pub level_id: String,
    pub start: usize,
    pub end: usize,
    pub text_snapshot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Actor {
    Human { annotator_id: String },
    Ai { model_id: String },
}

impl Actor {
    pub fn human(annotator_id: impl Into<String>) -> Self {
        Actor::Human { annotator_id: annotator_id.into() }
    }
}

impl Default for Actor {
    fn default() -> Self {
        Actor::human("anonymous")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceAction {
    HighlightAdded,
    HighlightRemoved,
    BlockGenerated,
    BlockEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    Highlight {
        highlight_id: String,
        document_id: String,
        level_id: String,
        start: usize,
        end: usize,
    },
    Generation {
        block_id: String,
        model_id: String,
        prompt_fingerprint: String,
        /// The exact prompt, so the fingerprint can be re-derived.
        messages: PromptMessages,
    },
    Edit {
        block_id: String,
        origin: Origin,
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub at: DateTime<Utc>,
    pub actor: Actor,
    pub action: ProvenanceAction,
    pub payload: EventPayload,
}

impl ProvenanceEvent {
    pub fn highlight(at: DateTime<Utc>, actor: Actor, action: ProvenanceAction, h: &Highlight) -> Self {
        ProvenanceEvent {
            at,
            actor,
            action,
            payload: EventPayload::Highlight {
                highlight_id: h.highlight_id.clone(),
                document_id: h.document_id.clone(),
                level_id: h.level_id.clone(),
                start: h.start,
                end: h.end,
            },
        }
    }

    /// Block the event concerns, if any.
    pub fn block_id(&self) -> Option<&str> {
        match &self.payload {
            EventPayload::Generation { block_id, .. } | EventPayload::Edit { block_id, .. } => Some(block_id),
            EventPayload::Highlight { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub entry_id: String,
    pub project_id: String,
    pub subject_id: String,
    #[serde(default)]
    pub highlights: Vec<Highlight>,
    #[serde(default)]
    pub block_values: BTreeMap<String, BlockResult>,
    #[serde(default)]
    pub provenance: Vec<ProvenanceEvent>,
    pub version: u64,
    pub updated_at: DateTime<Utc>,
}

impl AnnotationEntry {
    pub fn block_text(&self, block_id: &str) -> Option<&str> {
        self.block_values.get(block_id).map(|r| r.value.as_str())
    }

    /// Block values as plain text, the form block execution consumes.
    pub fn block_texts(&self) -> BTreeMap<String, String> {
        self.block_values.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect()
    }

    /// Documents with at least one highlight, in first-highlighted order.
    pub fn highlighted_documents(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for h in &self.highlights {
            if !seen.contains(&h.document_id) {
                seen.push(h.document_id.clone());
            }
        }
        seen
    }

    /// Latest generation event for a block.
    pub fn last_generation(&self, block_id: &str) -> Option<&ProvenanceEvent> {
        self.provenance
            .iter()
            .rev()
            .find(|e| e.action == ProvenanceAction::BlockGenerated && e.block_id() == Some(block_id))
    }
}

/// A block value as written by a client: either bare text or a full result
/// (whose origin fields are ignored and recomputed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockValueInput {
    Text(String),
    Result { value: String },
}

impl BlockValueInput {
    pub fn text(&self) -> &str {
        match self {
            BlockValueInput::Text(t) => t,
            BlockValueInput::Result { value } => value,
        }
    }
}

/// Client-side view of an entry for whole-entry writes. Provenance, version
/// and timestamps are owned by the store and ignored here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntryInput {
    #[serde(default)]
    pub entry_id: String,
    pub subject_id: String,
    #[serde(default)]
    pub highlights: Vec<Highlight>,
    #[serde(default)]
    pub block_values: BTreeMap<String, BlockValueInput>,
}

impl EntryInput {
    pub fn new(entry_id: impl Into<String>, subject_id: impl Into<String>) -> Self {
        EntryInput { entry_id: entry_id.into(), subject_id: subject_id.into(), ..Default::default() }
    }
}

impl From<&AnnotationEntry> for EntryInput {
    fn from(entry: &AnnotationEntry) -> Self {
        EntryInput {
            entry_id: entry.entry_id.clone(),
            subject_id: entry.subject_id.clone(),
            highlights: entry.highlights.clone(),
            block_values: entry
                .block_values
                .iter()
                .map(|(k, v)| (k.clone(), BlockValueInput::Text(v.value.clone())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryFilter {
    #[serde(default)]
    pub subject_id: Option<String>,
    /// Keep entries whose value for this block is nonempty.
    #[serde(default)]
    pub has_block_value: Option<String>,
}

impl EntryFilter {
    pub fn matches(&self, entry: &AnnotationEntry) -> bool {
        self.subject_id.as_ref().is_none_or(|s| &entry.subject_id == s)
            && self
                .has_block_value
                .as_ref()
                .is_none_or(|b| entry.block_text(b).is_some_and(|v| !v.is_empty()))
    }
}
