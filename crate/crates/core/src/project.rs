//! Project definitions: metadata, schemas, annotation levels and the block graph.
//!
//! A [`Project`] is validated once, on creation or import, and is immutable
//! afterwards. Everything downstream (ingest, block execution, export) relies
//! on the invariants checked here.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{GenerationParams, ProviderConfig};

pub const DEFAULT_BODY_FIELD: &str = "text";

/// Palette used when a level is declared without a color, indexed by ordinal.
pub const DEFAULT_PALETTE: [&str; 8] = [
    "#ffd54f", "#ef9a9a", "#90caf9", "#a5d6a7", "#ce93d8", "#ffcc80", "#80cbc4", "#b0bec5",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    #[serde(default)]
    pub project_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default = "Utc::now")]
    pub created_at: DateTime<Utc>,
}

impl ProjectMeta {
    pub fn new(name: impl Into<String>) -> Self {
        ProjectMeta {
            project_id: String::new(),
            name: name.into(),
            description: String::new(),
            tags: Vec::new(),
            created_at: Utc::now(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    String,
    Number,
    Boolean,
    StringList,
    Object,
}

impl FieldKind {
    pub const ALL: [FieldKind; 5] = [
        FieldKind::String,
        FieldKind::Number,
        FieldKind::Boolean,
        FieldKind::StringList,
        FieldKind::Object,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::String => "string",
            FieldKind::Number => "number",
            FieldKind::Boolean => "boolean",
            FieldKind::StringList => "string-list",
            FieldKind::Object => "object",
        }
    }

    /// Whether a JSON value is an instance of this kind.
    pub fn accepts(self, value: &serde_json::Value) -> bool {
        use serde_json::Value;
        match (self, value) {
            (FieldKind::String, Value::String(_)) => true,
            (FieldKind::Number, Value::Number(_)) => true,
            (FieldKind::Boolean, Value::Bool(_)) => true,
            (FieldKind::StringList, Value::Array(items)) => items.iter().all(Value::is_string),
            (FieldKind::Object, Value::Object(_)) => true,
            _ => false,
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default)]
    pub required: bool,
}

impl FieldDef {
    pub fn new(name: impl Into<String>, kind: FieldKind, required: bool) -> Self {
        FieldDef { name: name.into(), kind, required }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaRole {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub fields: Vec<FieldDef>,
    pub role: SchemaRole,
}

impl SchemaDef {
    /// The smallest legal input schema: the two mandatory identifiers.
    pub fn minimal_input() -> Self {
        SchemaDef {
            fields: vec![
                FieldDef::new("document_id", FieldKind::String, true),
                FieldDef::new("subject_id", FieldKind::String, true),
            ],
            role: SchemaRole::Input,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Fields every input schema must declare as required strings.
pub const MANDATORY_FIELDS: [&str; 2] = ["document_id", "subject_id"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SchemaViolation {
    MissingMandatoryField { field: String },
    MandatoryNotRequired { field: String },
    WrongKind { field: String, expected: FieldKind, found: FieldKind },
    DuplicateField { field: String },
    InvalidFieldName { field: String },
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::MissingMandatoryField { field } => {
                write!(f, "mandatory field `{field}` is missing")
            }
            SchemaViolation::MandatoryNotRequired { field } => {
                write!(f, "mandatory field `{field}` must be marked required")
            }
            SchemaViolation::WrongKind { field, expected, found } => {
                write!(f, "field `{field}` has kind {found}, expected {expected}")
            }
            SchemaViolation::DuplicateField { field } => write!(f, "field `{field}` is declared twice"),
            SchemaViolation::InvalidFieldName { field } => {
                write!(f, "field name `{field}` must match [A-Za-z_][A-Za-z0-9_]*")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SchemaReport {
    Ok,
    Invalid { violations: Vec<SchemaViolation> },
}

impl SchemaReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, SchemaReport::Ok)
    }

    pub fn violations(&self) -> &[SchemaViolation] {
        match self {
            SchemaReport::Ok => &[],
            SchemaReport::Invalid { violations } => violations,
        }
    }
}

pub fn is_valid_field_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn validate_schema_def(schema: &SchemaDef) -> SchemaReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for field in &schema.fields {
        if !is_valid_field_name(&field.name) {
            violations.push(SchemaViolation::InvalidFieldName { field: field.name.clone() });
        }
        if !seen.insert(field.name.as_str()) {
            violations.push(SchemaViolation::DuplicateField { field: field.name.clone() });
        }
    }

    if schema.role == SchemaRole::Input {
        for mandatory in MANDATORY_FIELDS {
            match schema.field(mandatory) {
                None => violations.push(SchemaViolation::MissingMandatoryField {
                    field: mandatory.to_string(),
                }),
                Some(def) => {
                    if def.kind != FieldKind::String {
                        violations.push(SchemaViolation::WrongKind {
                            field: mandatory.to_string(),
                            expected: FieldKind::String,
                            found: def.kind,
                        });
                    }
                    if !def.required {
                        violations.push(SchemaViolation::MandatoryNotRequired {
                            field: mandatory.to_string(),
                        });
                    }
                }
            }
        }
    }

    if violations.is_empty() {
        SchemaReport::Ok
    } else {
        SchemaReport::Invalid { violations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationLevel {
    pub level_id: String,
    pub label: String,
    /// `#rrggbb`; empty means "pick from the default palette".
    #[serde(default)]
    pub color: String,
    pub ordinal: u32,
}

impl AnnotationLevel {
    pub fn new(level_id: impl Into<String>, label: impl Into<String>, ordinal: u32) -> Self {
        AnnotationLevel {
            level_id: level_id.into(),
            label: label.into(),
            color: String::new(),
            ordinal,
        }
    }
}

fn is_hex_color(color: &str) -> bool {
    color.len() == 7
        && color.starts_with('#')
        && color[1..].chars().all(|c| c.is_ascii_hexdigit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMode {
    Plain,
    AiSolo,
    Collaborative,
}

/// Where a block draws part of its prompt from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    SystemPrompt,
    BlockRef { block_id: String },
    Field { field: String },
    /// `level_id: None` selects highlights of every level.
    Highlights {
        #[serde(default)]
        level_id: Option<String>,
    },
    DocumentText,
}

impl InputSource {
    pub fn block_ref(block_id: impl Into<String>) -> Self {
        InputSource::BlockRef { block_id: block_id.into() }
    }

    pub fn field(field: impl Into<String>) -> Self {
        InputSource::Field { field: field.into() }
    }

    pub fn highlights(level_id: impl Into<String>) -> Self {
        InputSource::Highlights { level_id: Some(level_id.into()) }
    }

    pub fn all_highlights() -> Self {
        InputSource::Highlights { level_id: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDef {
    pub block_id: String,
    pub name: String,
    pub mode: BlockMode,
    #[serde(default)]
    pub system_prompt: String,
    #[serde(default)]
    pub input_sources: Vec<InputSource>,
    #[serde(default)]
    pub display_order: i64,
    /// Per-block override of the generation parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GenerationParams>,
}

impl BlockDef {
    pub fn plain(block_id: impl Into<String>, name: impl Into<String>) -> Self {
        BlockDef {
            block_id: block_id.into(),
            name: name.into(),
            mode: BlockMode::Plain,
            system_prompt: String::new(),
            input_sources: Vec::new(),
            display_order: 0,
            params: None,
        }
    }

    pub fn ai_solo(
        block_id: impl Into<String>,
        name: impl Into<String>,
        system_prompt: impl Into<String>,
    ) -> Self {
        BlockDef {
            mode: BlockMode::AiSolo,
            system_prompt: system_prompt.into(),
            input_sources: vec![InputSource::SystemPrompt],
            ..BlockDef::plain(block_id, name)
        }
    }

    pub fn collaborative(
        block_id: impl Into<String>,
        name: impl Into<String>,
        system_prompt: impl Into<String>,
        input_sources: Vec<InputSource>,
    ) -> Self {
        BlockDef {
            mode: BlockMode::Collaborative,
            system_prompt: system_prompt.into(),
            input_sources,
            ..BlockDef::plain(block_id, name)
        }
    }

    pub fn with_display_order(mut self, order: i64) -> Self {
        self.display_order = order;
        self
    }

    pub fn referenced_blocks(&self) -> impl Iterator<Item = &str> {
        self.input_sources.iter().filter_map(|s| match s {
            InputSource::BlockRef { block_id } => Some(block_id.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BlockViolation {
    #[error("block `{block_id}` has an empty name")]
    EmptyName { block_id: String },
    #[error("plain block `{block_id}` must not declare input sources")]
    PlainWithSources { block_id: String },
    #[error("ai-solo block `{block_id}` may only use system-prompt sources")]
    AiSoloNonPromptSource { block_id: String },
    #[error("collaborative block `{block_id}` must declare at least one input source")]
    CollaborativeWithoutSources { block_id: String },
    #[error("block `{block_id}` needs a system prompt in {mode:?} mode")]
    MissingSystemPrompt { block_id: String, mode: BlockMode },
}

/// Checks the mode/input-source contract of a single block.
pub fn validate_block_def(block: &BlockDef) -> Result<(), BlockViolation> {
    let block_id = || block.block_id.clone();
    if block.name.trim().is_empty() {
        return Err(BlockViolation::EmptyName { block_id: block_id() });
    }
    match block.mode {
        BlockMode::Plain => {
            if !block.input_sources.is_empty() {
                return Err(BlockViolation::PlainWithSources { block_id: block_id() });
            }
        }
        BlockMode::AiSolo => {
            if block.input_sources.iter().any(|s| *s != InputSource::SystemPrompt) {
                return Err(BlockViolation::AiSoloNonPromptSource { block_id: block_id() });
            }
        }
        BlockMode::Collaborative => {
            if block.input_sources.is_empty() {
                return Err(BlockViolation::CollaborativeWithoutSources { block_id: block_id() });
            }
        }
    }
    if block.mode != BlockMode::Plain && block.system_prompt.trim().is_empty() {
        return Err(BlockViolation::MissingSystemPrompt { block_id: block_id(), mode: block.mode });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GraphError {
    #[error("block reference cycle: {}", cycle.join(" -> "))]
    Cycle { cycle: Vec<String> },
    #[error("block `{block_id}` references unknown block `{target}`")]
    DanglingRef { block_id: String, target: String },
    #[error("block id `{block_id}` is declared twice")]
    DuplicateBlockId { block_id: String },
}

/// Orders blocks so that every referenced block precedes its consumers.
///
/// Among blocks that are ready at the same time the one with the smallest
/// `(display_order, block_id)` goes first, which makes the order total and
/// reproducible.
pub fn validate_block_graph(blocks: &[BlockDef]) -> Result<Vec<String>, GraphError> {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(blocks.len());
    for (i, block) in blocks.iter().enumerate() {
        if index.insert(block.block_id.as_str(), i).is_some() {
            return Err(GraphError::DuplicateBlockId { block_id: block.block_id.clone() });
        }
    }

    // consumers[i]: blocks that read from block i
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
    let mut pending: Vec<usize> = vec![0; blocks.len()];
    for (i, block) in blocks.iter().enumerate() {
        let mut seen = HashSet::new();
        for target in block.referenced_blocks() {
            let Some(&src) = index.get(target) else {
                return Err(GraphError::DanglingRef {
                    block_id: block.block_id.clone(),
                    target: target.to_string(),
                });
            };
            if seen.insert(src) {
                consumers[src].push(i);
                pending[i] += 1;
            }
        }
    }

    let key = |i: usize| (blocks[i].display_order, blocks[i].block_id.as_str());
    let mut ready: BTreeSet<(i64, &str, usize)> = (0..blocks.len())
        .filter(|&i| pending[i] == 0)
        .map(|i| {
            let (o, id) = key(i);
            (o, id, i)
        })
        .collect();
    let mut order = Vec::with_capacity(blocks.len());
    while let Some(first) = ready.pop_first() {
        let i = first.2;
        order.push(blocks[i].block_id.clone());
        for &c in &consumers[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                let (o, id) = key(c);
                ready.insert((o, id, c));
            }
        }
    }

    if order.len() < blocks.len() {
        let remaining: Vec<usize> = (0..blocks.len()).filter(|&i| pending[i] > 0).collect();
        return Err(GraphError::Cycle { cycle: find_cycle(blocks, &index, &remaining) });
    }
    Ok(order)
}

/// Extracts one concrete cycle from the nodes Kahn's algorithm could not drain.
/// Starts from the smallest block id and follows references in declaration order.
fn find_cycle(blocks: &[BlockDef], index: &HashMap<&str, usize>, remaining: &[usize]) -> Vec<String> {
    let stuck: HashSet<usize> = remaining.iter().copied().collect();
    let start = *remaining
        .iter()
        .min_by_key(|&&i| blocks[i].block_id.as_str())
        .expect("cycle detection called without remaining nodes");

    // Every stuck node has at least one stuck dependency, so walking
    // dependencies must revisit a node.
    let mut path: Vec<usize> = Vec::new();
    let mut position: HashMap<usize, usize> = HashMap::new();
    let mut current = start;
    loop {
        if let Some(&at) = position.get(&current) {
            let mut cycle: Vec<usize> = path[at..].to_vec();
            // dependencies were followed, so reverse to list producers first
            cycle.reverse();
            let rot = cycle
                .iter()
                .enumerate()
                .min_by_key(|(_, &i)| blocks[i].block_id.as_str())
                .map(|(p, _)| p)
                .unwrap_or(0);
            cycle.rotate_left(rot);
            return cycle.into_iter().map(|i| blocks[i].block_id.clone()).collect();
        }
        position.insert(current, path.len());
        path.push(current);
        current = blocks[current]
            .referenced_blocks()
            .filter_map(|t| index.get(t).copied())
            .find(|d| stuck.contains(d))
            .expect("stuck node without stuck dependency");
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectError {
    #[error("project name must not be empty")]
    EmptyName,
    #[error("invalid {role:?} schema: {}", display_list(violations))]
    SchemaInvalid { role: SchemaRole, violations: Vec<SchemaViolation> },
    #[error("invalid block graph: {0}")]
    BlockGraphInvalid(#[from] GraphError),
    #[error("invalid block: {0}")]
    BlockInvalid(#[from] BlockViolation),
    #[error("annotation level label `{0}` is used twice")]
    DuplicateLevelLabel(String),
    #[error("annotation level `{0}` is invalid: {1}")]
    LevelInvalid(String, &'static str),
    #[error("block `{block_id}` references unknown input field `{field}`")]
    UnknownField { block_id: String, field: String },
    #[error("block `{block_id}` references unknown annotation level `{level_id}`")]
    UnknownLevel { block_id: String, level_id: String },
    #[error("invalid provider configuration: {0}")]
    ProviderInvalid(String),
}

fn display_list<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    #[serde(flatten)]
    pub meta: ProjectMeta,
    pub input_schema: SchemaDef,
    pub output_schema: SchemaDef,
    #[serde(default)]
    pub levels: Vec<AnnotationLevel>,
    #[serde(default)]
    pub blocks: Vec<BlockDef>,
    #[serde(default)]
    pub provider: Option<ProviderConfig>,
    /// Name of the document field holding the searchable body.
    #[serde(default = "default_body_field")]
    pub body_field: String,
}

fn default_body_field() -> String {
    DEFAULT_BODY_FIELD.to_string()
}

impl Project {
    pub fn block(&self, block_id: &str) -> Option<&BlockDef> {
        self.blocks.iter().find(|b| b.block_id == block_id)
    }

    pub fn level(&self, level_id: &str) -> Option<&AnnotationLevel> {
        self.levels.iter().find(|l| l.level_id == level_id)
    }

    /// Block ids in execution order. Only valid projects can be constructed,
    /// so the graph is known to be acyclic.
    pub fn execution_order(&self) -> Vec<String> {
        validate_block_graph(&self.blocks).expect("stored project has an invalid block graph")
    }

    /// Re-runs every check performed by [`create_project`].
    pub fn validate(&self) -> Result<Vec<String>, ProjectError> {
        if self.meta.name.trim().is_empty() {
            return Err(ProjectError::EmptyName);
        }
        for schema in [&self.input_schema, &self.output_schema] {
            if let SchemaReport::Invalid { violations } = validate_schema_def(schema) {
                return Err(ProjectError::SchemaInvalid { role: schema.role, violations });
            }
        }
        if self.input_schema.role != SchemaRole::Input || self.output_schema.role != SchemaRole::Output {
            return Err(ProjectError::SchemaInvalid {
                role: self.input_schema.role,
                violations: Vec::new(),
            });
        }

        let mut labels = HashSet::new();
        let mut ordinals = HashSet::new();
        let mut level_ids = HashSet::new();
        for level in &self.levels {
            if level.label.trim().is_empty() {
                return Err(ProjectError::LevelInvalid(level.level_id.clone(), "empty label"));
            }
            if !labels.insert(level.label.as_str()) {
                return Err(ProjectError::DuplicateLevelLabel(level.label.clone()));
            }
            if !ordinals.insert(level.ordinal) {
                return Err(ProjectError::LevelInvalid(level.level_id.clone(), "duplicate ordinal"));
            }
            if !level_ids.insert(level.level_id.as_str()) {
                return Err(ProjectError::LevelInvalid(level.level_id.clone(), "duplicate level id"));
            }
            if !is_hex_color(&level.color) {
                return Err(ProjectError::LevelInvalid(level.level_id.clone(), "color is not #rrggbb"));
            }
        }

        for block in &self.blocks {
            validate_block_def(block)?;
            for source in &block.input_sources {
                match source {
                    InputSource::Field { field } if self.input_schema.field(field).is_none() => {
                        return Err(ProjectError::UnknownField {
                            block_id: block.block_id.clone(),
                            field: field.clone(),
                        });
                    }
                    InputSource::Highlights { level_id: Some(level_id) }
                        if self.level(level_id).is_none() =>
                    {
                        return Err(ProjectError::UnknownLevel {
                            block_id: block.block_id.clone(),
                            level_id: level_id.clone(),
                        });
                    }
                    _ => {}
                }
            }
        }
        if let Some(provider) = &self.provider {
            provider.validate().map_err(ProjectError::ProviderInvalid)?;
        }
        Ok(validate_block_graph(&self.blocks)?)
    }
}

/// Project definition as submitted by a client, before ids and defaults are
/// assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpecFields")]
pub struct ProjectSpec {
    #[serde(flatten)]
    pub meta: ProjectMeta,
    pub input_schema: SchemaDef,
    pub output_schema: SchemaDef,
    #[serde(default)]
    pub levels: Vec<AnnotationLevel>,
    #[serde(default)]
    pub blocks: Vec<BlockDef>,
    #[serde(default)]
    pub provider: Option<ProviderConfig>,
    #[serde(default = "default_body_field")]
    pub body_field: String,
}

// Flat mirror of ProjectSpec for deserializing. A flattened field buffers the
// whole object, which hides the location of type errors from callers.
#[derive(Deserialize)]
struct SpecFields {
    #[serde(default)]
    project_id: String,
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default = "Utc::now")]
    created_at: DateTime<Utc>,
    input_schema: SchemaDef,
    output_schema: SchemaDef,
    #[serde(default)]
    levels: Vec<AnnotationLevel>,
    #[serde(default)]
    blocks: Vec<BlockDef>,
    #[serde(default)]
    provider: Option<ProviderConfig>,
    #[serde(default = "default_body_field")]
    body_field: String,
}

impl From<SpecFields> for ProjectSpec {
    fn from(f: SpecFields) -> Self {
        ProjectSpec {
            meta: ProjectMeta {
                project_id: f.project_id,
                name: f.name,
                description: f.description,
                tags: f.tags,
                created_at: f.created_at,
            },
            input_schema: f.input_schema,
            output_schema: f.output_schema,
            levels: f.levels,
            blocks: f.blocks,
            provider: f.provider,
            body_field: f.body_field,
        }
    }
}

impl From<Project> for ProjectSpec {
    fn from(p: Project) -> Self {
        ProjectSpec {
            meta: p.meta,
            input_schema: p.input_schema,
            output_schema: p.output_schema,
            levels: p.levels,
            blocks: p.blocks,
            provider: p.provider,
            body_field: p.body_field,
        }
    }
}

/// Validates a project definition and assigns a fresh project id.
///
/// Level colors left empty are filled from [`DEFAULT_PALETTE`] by ordinal.
/// Persisting the result is the store's job.
pub fn create_project(spec: ProjectSpec) -> Result<Project, ProjectError> {
    let mut meta = spec.meta;
    meta.project_id = uuid::Uuid::new_v4().to_string();
    let levels = spec
        .levels
        .into_iter()
        .map(|mut level| {
            if level.color.is_empty() {
                level.color =
                    DEFAULT_PALETTE[level.ordinal as usize % DEFAULT_PALETTE.len()].to_string();
            }
            level
        })
        .collect();
    let project = Project {
        meta,
        input_schema: spec.input_schema,
        output_schema: spec.output_schema,
        levels,
        blocks: spec.blocks,
        provider: spec.provider,
        body_field: spec.body_field,
    };
    project.validate()?;
    Ok(project)
}

/// Map of block id to block name, handy for rendering prompt labels.
pub fn block_names(blocks: &[BlockDef]) -> BTreeMap<&str, &str> {
    blocks.iter().map(|b| (b.block_id.as_str(), b.name.as_str())).collect()
}
