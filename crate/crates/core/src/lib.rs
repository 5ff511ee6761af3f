//! Core of the aiano annotation engine: project configuration, document
//! corpus and search, block execution against chat-completion providers,
//! versioned annotation storage, retrieval evaluation and dataset export.

pub mod annotation;
pub mod block;
pub mod corpus;
pub mod evaluation;
pub mod export;
pub mod llm;
pub mod project;
pub mod store;

pub use annotation::{Actor, AnnotationEntry, EntryFilter, EntryInput, Highlight};
pub use block::{BlockEngine, BlockResult, EntryContext, Origin};
pub use corpus::{Document, IngestReport, MatchSpan, SearchHit};
pub use evaluation::{GoldSpec, RetrievalMetrics};
pub use export::{AianoArchive, DatasetExport, DatasetRecord};
pub use llm::{ChatProvider, HttpProvider, MockProvider, ProviderConfig};
pub use project::{BlockDef, BlockMode, InputSource, Project, ProjectSpec};
pub use store::{Store, StoreError};
