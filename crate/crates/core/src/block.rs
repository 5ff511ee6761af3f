//! Block execution: resolve a block's input sources against an entry, build
//! the prompt and run it through a provider according to the block's mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Highlight;
use crate::corpus::Document;
use crate::llm::{
    prompt_fingerprint, ChatMessage, ChatProvider, Completion, PromptMessages,
    ProviderError,
};
use crate::project::{BlockDef, BlockMode, InputSource, Project};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Human,
    AiGenerated,
    AiEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockResult {
    pub block_id: String,
    pub value: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_fingerprint: Option<String>,
}

impl BlockResult {
    pub fn human(block_id: impl Into<String>, value: impl Into<String>) -> Self {
        BlockResult {
            block_id: block_id.into(),
            value: value.into(),
            origin: Origin::Human,
            model_id: None,
            prompt_fingerprint: None,
        }
    }

    /// Result of a human writing `text` over `previous`. Changing AI output
    /// keeps its model and fingerprint and marks it edited; anything else is
    /// human-authored.
    pub fn edited(block_id: &str, previous: Option<&BlockResult>, text: &str) -> BlockResult {
        match previous {
            Some(prev) if prev.value == text => prev.clone(),
            Some(prev) if prev.origin != Origin::Human => BlockResult {
                value: text.to_string(),
                origin: Origin::AiEdited,
                ..prev.clone()
            },
            _ => BlockResult::human(block_id, text),
        }
    }

    /// Checks the origin/provenance pairing.
    pub fn is_consistent(&self) -> bool {
        match self.origin {
            Origin::Human => self.model_id.is_none() && self.prompt_fingerprint.is_none(),
            Origin::AiGenerated | Origin::AiEdited => {
                self.model_id.is_some() && self.prompt_fingerprint.is_some()
            }
        }
    }
}

/// Everything a block may draw from while being executed for one entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryContext {
    pub entry_id: String,
    pub project_id: String,
    /// Documents in focus, in display order.
    pub documents: Vec<Document>,
    pub highlights: Vec<Highlight>,
    pub block_values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: InputSource,
    pub label: String,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedInputs {
    pub segments: Vec<Segment>,
    pub total_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("block `{0}` must be filled in first")]
    MissingDependency(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("unknown input field `{0}`")]
    UnknownField(String),
    #[error("unknown annotation level `{0}`")]
    UnknownLevel(String),
    #[error("plain blocks have no prompt")]
    PlainModeHasNoPrompt,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// What running a block produced: the result, plus the exact prompt sent
/// when a model was involved.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub result: BlockResult,
    pub prompt: Option<PromptMessages>,
    pub completion: Option<Completion>,
}

fn render_value(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(items) if items.iter().all(|v| v.is_string()) => items
            .iter()
            .filter_map(|v| v.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        other => other.to_string(),
    }
}

/// Resolves inputs and runs blocks for one project.
#[derive(Debug, Clone, Copy)]
pub struct BlockEngine<'p> {
    project: &'p Project,
}

impl<'p> BlockEngine<'p> {
    pub fn new(project: &'p Project) -> Self {
        BlockEngine { project }
    }

    pub fn execution_order(&self) -> Vec<String> {
        self.project.execution_order()
    }

    fn resolve_source(&self, block: &BlockDef, source: &InputSource, ctx: &EntryContext) -> Result<Segment, BlockError> {
        let (label, content) = match source {
            InputSource::SystemPrompt => ("system_prompt".to_string(), block.system_prompt.clone()),
            InputSource::BlockRef { block_id } => {
                let target = self
                    .project
                    .block(block_id)
                    .ok_or_else(|| BlockError::UnknownBlock(block_id.clone()))?;
                let value = ctx
                    .block_values
                    .get(block_id)
                    .filter(|v| !v.trim().is_empty())
                    .ok_or_else(|| BlockError::MissingDependency(block_id.clone()))?;
                (format!("block:{}", target.name), value.clone())
            }
            InputSource::Field { field } => {
                if self.project.input_schema.field(field).is_none() {
                    return Err(BlockError::UnknownField(field.clone()));
                }
                let values: Vec<String> = ctx
                    .documents
                    .iter()
                    .filter_map(|d| d.field(field, &self.project.body_field))
                    .filter(|v| !v.is_null())
                    .map(|v| render_value(&v))
                    .collect();
                (format!("field:{field}"), values.join("\n"))
            }
            InputSource::Highlights { level_id } => {
                let label = match level_id {
                    Some(id) => {
                        let level = self
                            .project
                            .level(id)
                            .ok_or_else(|| BlockError::UnknownLevel(id.clone()))?;
                        format!("highlights:{}", level.label)
                    }
                    None => "highlights:all".to_string(),
                };
                let mut selected: Vec<&Highlight> = ctx
                    .highlights
                    .iter()
                    .filter(|h| level_id.as_ref().is_none_or(|id| &h.level_id == id))
                    .collect();
                selected.sort_by(|a, b| {
                    (&a.document_id, a.start, a.end, &a.highlight_id)
                        .cmp(&(&b.document_id, b.start, b.end, &b.highlight_id))
                });
                let text = selected
                    .iter()
                    .map(|h| h.text_snapshot.as_str())
                    .collect::<Vec<_>>()
                    .join("\n");
                (label, text)
            }
            InputSource::DocumentText => (
                "document_text".to_string(),
                ctx.documents.iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n\n"),
            ),
        };
        Ok(Segment { source: source.clone(), label, content })
    }

    /// One segment per declared source, in declaration order.
    pub fn resolve_inputs(&self, block: &BlockDef, ctx: &EntryContext) -> Result<ResolvedInputs, BlockError> {
        self.resolve_filtered(block, ctx, |_| true)
    }

    fn resolve_filtered(
        &self,
        block: &BlockDef,
        ctx: &EntryContext,
        keep: impl Fn(&InputSource) -> bool,
    ) -> Result<ResolvedInputs, BlockError> {
        let segments = block
            .input_sources
            .iter()
            .filter(|s| keep(s))
            .map(|s| self.resolve_source(block, s, ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let total_chars = segments.iter().map(|s| s.content.chars().count()).sum();
        Ok(ResolvedInputs { segments, total_chars })
    }

    pub fn run_block(
        &self,
        block: &BlockDef,
        ctx: &EntryContext,
        provider: &dyn ChatProvider,
    ) -> Result<Generation, BlockError> {
        let resolved = match block.mode {
            BlockMode::Plain => {
                return Ok(Generation {
                    result: BlockResult::human(&block.block_id, ""),
                    prompt: None,
                    completion: None,
                })
            }
            BlockMode::AiSolo => {
                self.resolve_filtered(block, ctx, |s| *s == InputSource::SystemPrompt)?
            }
            BlockMode::Collaborative => self.resolve_inputs(block, ctx)?,
        };
        let messages = assemble_prompt(block, &resolved)?;
        let params = block.params.unwrap_or_default();
        let completion = provider.complete(&messages, &params)?;
        let result = BlockResult {
            block_id: block.block_id.clone(),
            value: completion.text.clone(),
            origin: Origin::AiGenerated,
            model_id: Some(completion.model_id.clone()),
            prompt_fingerprint: Some(prompt_fingerprint(&messages)),
        };
        Ok(Generation { result, prompt: Some(messages), completion: Some(completion) })
    }

    pub fn execute_block(
        &self,
        block: &BlockDef,
        ctx: &EntryContext,
        provider: &dyn ChatProvider,
    ) -> Result<BlockResult, BlockError> {
        self.run_block(block, ctx, provider).map(|g| g.result)
    }
}

/// `[system: block prompt, user: "### <label>\n<content>" per segment]`,
/// segments separated by a blank line.
pub fn assemble_prompt(block: &BlockDef, resolved: &ResolvedInputs) -> Result<PromptMessages, BlockError> {
    if block.mode == BlockMode::Plain {
        return Err(BlockError::PlainModeHasNoPrompt);
    }
    let user = resolved
        .segments
        .iter()
        .map(|s| format!("### {}\n{}", s.label, s.content))
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(vec![ChatMessage::system(block.system_prompt.clone()), ChatMessage::user(user)])
}
