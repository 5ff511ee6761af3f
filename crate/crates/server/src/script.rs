//! Replays a scripted annotation session against a store: the batch
//! equivalent of an annotator clicking through the UI.
//!
//! A script is a JSON array of actions:
//!
//! ```json
//! [
//!   {"action": "create_entry", "entry_id": "q1", "subject_id": "s1"},
//!   {"action": "set_block", "entry_id": "q1", "block_id": "question", "value": "Wer?"},
//!   {"action": "highlight", "entry_id": "q1", "document_id": "d1", "level_id": "rel", "find": "Satz"},
//!   {"action": "highlight", "entry_id": "q1", "document_id": "d2", "level_id": "rel", "start": 0, "end": 4},
//!   {"action": "generate", "entry_id": "q1", "block_id": "answer"}
//! ]
//! ```
//!
//! `find` highlights the first case-insensitive occurrence of the text.

use aiano_core::{Actor, ChatProvider, EntryInput, Highlight, Store};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    CreateEntry {
        entry_id: String,
        subject_id: String,
    },
    SetBlock {
        entry_id: String,
        block_id: String,
        value: String,
    },
    Highlight {
        entry_id: String,
        document_id: String,
        level_id: String,
        #[serde(default)]
        find: Option<String>,
        #[serde(default)]
        start: Option<usize>,
        #[serde(default)]
        end: Option<usize>,
    },
    Generate {
        entry_id: String,
        block_id: String,
        #[serde(default)]
        documents: Option<Vec<String>>,
    },
}

impl Action {
    pub fn entry_id(&self) -> &str {
        match self {
            Action::CreateEntry { entry_id, .. }
            | Action::SetBlock { entry_id, .. }
            | Action::Highlight { entry_id, .. }
            | Action::Generate { entry_id, .. } => entry_id,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub actions: usize,
    pub entries: Vec<String>,
    pub generations: usize,
}

pub fn replay(
    store: &Store,
    project_id: &str,
    actions: &[Action],
    provider: &dyn ChatProvider,
    actor: &Actor,
) -> Result<ReplaySummary, ApiError> {
    let mut summary = ReplaySummary::default();
    for (index, action) in actions.iter().enumerate() {
        apply(store, project_id, action, provider, actor, &mut summary)
            .map_err(|e| annotate(e, index))?;
        summary.actions += 1;
    }
    Ok(summary)
}

fn annotate(mut err: ApiError, index: usize) -> ApiError {
    let mut details = match err.details.take() {
        Some(serde_json::Value::Object(map)) => map,
        Some(other) => [("error".to_string(), other)].into_iter().collect(),
        None => serde_json::Map::new(),
    };
    details.insert("action_index".into(), json!(index));
    err.details = Some(details.into());
    err
}

fn apply(
    store: &Store,
    project_id: &str,
    action: &Action,
    provider: &dyn ChatProvider,
    actor: &Actor,
    summary: &mut ReplaySummary,
) -> Result<(), ApiError> {
    let version = |entry_id: &str| -> Result<u64, ApiError> { Ok(store.get_entry(project_id, entry_id)?.version) };
    match action {
        Action::CreateEntry { entry_id, subject_id } => {
            store.upsert_entry(project_id, EntryInput::new(entry_id, subject_id), 0, actor)?;
            summary.entries.push(entry_id.clone());
        }
        Action::SetBlock { entry_id, block_id, value } => {
            store.set_block_value(project_id, entry_id, block_id, value, version(entry_id)?, actor)?;
        }
        Action::Highlight { entry_id, document_id, level_id, find, start, end } => {
            let doc = store.get_document(project_id, document_id)?;
            let (start, end) = match (find, start, end) {
                (Some(text), None, None) => {
                    let spans = store.search_within(project_id, document_id, text)?;
                    let first = spans.first().ok_or_else(|| {
                        ApiError::validation("TextNotFound", format!("`{text}` does not occur in `{document_id}`"))
                    })?;
                    (first.start, first.end)
                }
                (None, Some(s), Some(e)) => (*s, *e),
                _ => {
                    return Err(ApiError::validation(
                        "MalformedAction",
                        "highlight needs either `find` or both `start` and `end`",
                    ))
                }
            };
            let text_snapshot = doc.slice(start, end).unwrap_or_default();
            let highlight = Highlight {
                highlight_id: String::new(),
                document_id: document_id.clone(),
                level_id: level_id.clone(),
                start,
                end,
                text_snapshot,
            };
            store.add_highlight(project_id, entry_id, highlight, version(entry_id)?, actor)?;
        }
        Action::Generate { entry_id, block_id, documents } => {
            store.generate_block(project_id, entry_id, block_id, provider, documents.as_deref())?;
            summary.generations += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use aiano_core::project::{AnnotationLevel, ProjectMeta, SchemaDef, SchemaRole};
    use aiano_core::{BlockDef, InputSource, MockProvider, ProjectSpec};

    fn fixture() -> (Store, String) {
        let store = Store::in_memory();
        let spec = ProjectSpec {
            meta: ProjectMeta::new("skript"),
            input_schema: SchemaDef::minimal_input(),
            output_schema: SchemaDef { fields: vec![], role: SchemaRole::Output },
            levels: vec![AnnotationLevel::new("rel", "relevant", 0)],
            blocks: vec![
                BlockDef::plain("question", "Question"),
                BlockDef::collaborative("answer", "Answer", "Antworte.", vec![InputSource::block_ref("question")]),
            ],
            provider: None,
            body_field: "text".into(),
        };
        let pid = store.create_project(spec).unwrap().meta.project_id;
        store
            .ingest_documents(&pid, &json!([{"document_id": "d1", "subject_id": "s", "text": "Der Rhein fließt durch Köln."}]))
            .unwrap();
        (store, pid)
    }

    fn parse(v: serde_json::Value) -> Vec<Action> {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn replays_in_order() {
        let (store, pid) = fixture();
        let actions = parse(json!([
            {"action": "create_entry", "entry_id": "e", "subject_id": "s"},
            {"action": "set_block", "entry_id": "e", "block_id": "question", "value": "Wo?"},
            {"action": "highlight", "entry_id": "e", "document_id": "d1", "level_id": "rel", "find": "KÖLN"},
            {"action": "generate", "entry_id": "e", "block_id": "answer"}
        ]));
        let summary = replay(&store, &pid, &actions, &MockProvider::new(), &Actor::human("t")).unwrap();
        assert_eq!(summary, ReplaySummary { actions: 4, entries: vec!["e".into()], generations: 1 });
        let entry = store.get_entry(&pid, "e").unwrap();
        assert_eq!(entry.version, 4);
        let h = &entry.highlights[0];
        assert_eq!((h.start, h.end, h.text_snapshot.as_str()), (23, 27, "Köln"));
    }

    #[test]
    fn errors_name_the_failing_action() {
        let (store, pid) = fixture();
        let actions = parse(json!([
            {"action": "create_entry", "entry_id": "e", "subject_id": "s"},
            {"action": "highlight", "entry_id": "e", "document_id": "d1", "level_id": "rel", "find": "Berlin"}
        ]));
        let err = replay(&store, &pid, &actions, &MockProvider::new(), &Actor::default()).unwrap_err();
        assert_eq!(err.code, "TextNotFound");
        assert_eq!(err.details.unwrap()["action_index"], 1);

        let half_span = parse(json!([{"action": "highlight", "entry_id": "e", "document_id": "d1", "level_id": "rel", "start": 1}]));
        let err = replay(&store, &pid, &half_span, &MockProvider::new(), &Actor::default()).unwrap_err();
        assert_eq!(err.code, "MalformedAction");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = serde_json::from_value::<Vec<Action>>(json!([{"action": "create_entry", "entry_id": "e", "subject_id": "s", "x": 1}]));
        assert!(bad.is_err());
        let unknown = serde_json::from_value::<Vec<Action>>(json!([{"action": "delete_everything"}]));
        assert!(unknown.is_err());
    }
}
