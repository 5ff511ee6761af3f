//! One error shape for both front ends. Every module error maps to exactly
//! one machine-readable code and one [`ErrorClass`]; the class decides the
//! HTTP status and the CLI exit code.

use aiano_core::block::BlockError;
use aiano_core::corpus::CorpusError;
use aiano_core::evaluation::EvaluationError;
use aiano_core::export::ExportError;
use aiano_core::llm::ProviderError;
use aiano_core::project::{GraphError, ProjectError};
use aiano_core::StoreError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    Validation,
    NotFound,
    Conflict,
    Provider,
    Internal,
}

impl ErrorClass {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorClass::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Provider => StatusCode::BAD_GATEWAY,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// 1 for anything the caller can fix in their input, 2 for I/O and
    /// provider failures.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation | ErrorClass::NotFound | ErrorClass::Conflict => 1,
            ErrorClass::Provider | ErrorClass::Internal => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub class: ErrorClass,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(class: ErrorClass, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { class, code: code.into(), message: message.into(), details: None }
    }

    pub fn validation(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Validation, code, message)
    }

    pub fn internal(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Internal, code, message)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn status(&self) -> StatusCode {
        self.class.status()
    }

    /// Single-line JSON, as printed by the CLI.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), axum::Json(self)).into_response()
    }
}

fn to_details<T: Serialize>(value: &T) -> Option<Value> {
    serde_json::to_value(value).ok()
}

fn mk(class: ErrorClass, code: &str, err: &dyn std::fmt::Display, details: Option<Value>) -> ApiError {
    ApiError { class, code: code.to_string(), message: err.to_string(), details }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        let code = match &e {
            GraphError::Cycle { .. } => "Cycle",
            GraphError::DanglingRef { .. } => "DanglingRef",
            GraphError::DuplicateBlockId { .. } => "DuplicateBlockId",
        };
        mk(ErrorClass::Validation, code, &e, to_details(&e))
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        use ProjectError::*;
        let (code, details) = match &e {
            EmptyName => ("EmptyName", None),
            SchemaInvalid { role, violations } => {
                ("SchemaInvalid", Some(json!({ "role": role, "violations": violations })))
            }
            BlockGraphInvalid(g) => return g.clone().into(),
            BlockInvalid(v) => ("BlockInvalid", to_details(v)),
            DuplicateLevelLabel(label) => ("DuplicateLevelLabel", Some(json!({ "label": label }))),
            LevelInvalid(level, _) => ("LevelInvalid", Some(json!({ "level_id": level }))),
            UnknownField { block_id, field } => {
                ("UnknownField", Some(json!({ "block_id": block_id, "field": field })))
            }
            UnknownLevel { block_id, level_id } => {
                ("UnknownLevel", Some(json!({ "block_id": block_id, "level_id": level_id })))
            }
            ProviderInvalid(_) => ("ProviderInvalid", None),
        };
        mk(ErrorClass::Validation, code, &e, details)
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        let (class, code) = match &e {
            CorpusError::PayloadNotArray => (ErrorClass::Validation, "PayloadNotArray"),
            CorpusError::DocumentNotFound(_) => (ErrorClass::NotFound, "DocumentNotFound"),
            CorpusError::EmptyQuery => (ErrorClass::Validation, "EmptyQuery"),
        };
        mk(class, code, &e, None)
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        use ProviderError::*;
        let (class, code) = match &e {
            AuthError { .. } => (ErrorClass::Provider, "AuthError"),
            RateLimited { .. } => (ErrorClass::Provider, "RateLimited"),
            ServerError { .. } => (ErrorClass::Provider, "ServerError"),
            HttpStatus { .. } => (ErrorClass::Provider, "HttpStatus"),
            Timeout { .. } => (ErrorClass::Provider, "Timeout"),
            Transport { .. } => (ErrorClass::Provider, "Transport"),
            MalformedResponse { .. } => (ErrorClass::Provider, "MalformedResponse"),
            MissingApiKey { .. } => (ErrorClass::Provider, "MissingApiKey"),
            EmptyMessages => (ErrorClass::Internal, "EmptyMessages"),
            InvalidConfig { .. } => (ErrorClass::Validation, "InvalidConfig"),
        };
        mk(class, code, &e, to_details(&e))
    }
}

impl From<BlockError> for ApiError {
    fn from(e: BlockError) -> Self {
        let (class, code) = match &e {
            BlockError::MissingDependency(_) => (ErrorClass::Validation, "MissingDependency"),
            BlockError::UnknownBlock(_) => (ErrorClass::NotFound, "UnknownBlock"),
            BlockError::UnknownField(_) => (ErrorClass::Validation, "UnknownField"),
            BlockError::UnknownLevel(_) => (ErrorClass::Validation, "UnknownLevel"),
            BlockError::PlainModeHasNoPrompt => (ErrorClass::Validation, "PlainModeHasNoPrompt"),
            BlockError::Provider(p) => return p.clone().into(),
        };
        mk(class, code, &e, None)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use StoreError::*;
        let (class, code, details) = match &e {
            ProjectNotFound(_) => (ErrorClass::NotFound, "ProjectNotFound", None),
            EntryNotFound(_) => (ErrorClass::NotFound, "EntryNotFound", None),
            DocumentNotFound(_) => (ErrorClass::NotFound, "DocumentNotFound", None),
            UnknownBlock(_) => (ErrorClass::NotFound, "UnknownBlock", None),
            UnknownLevel(_) => (ErrorClass::Validation, "UnknownLevel", None),
            VersionConflict { stored } => {
                (ErrorClass::Conflict, "VersionConflict", Some(json!({ "stored_version": stored })))
            }
            ProjectExists(_) => (ErrorClass::Conflict, "ProjectExists", None),
            InvalidId(_) => (ErrorClass::Validation, "InvalidId", None),
            EntryInvalid(_) => (ErrorClass::Validation, "EntryInvalid", None),
            SpanOutOfBounds { document_id, start, end, length } => (
                ErrorClass::Validation,
                "SpanOutOfBounds",
                Some(json!({ "document_id": document_id, "start": start, "end": end, "length": length })),
            ),
            SnapshotMismatch { document_id, start, end, actual } => (
                ErrorClass::Validation,
                "SnapshotMismatch",
                Some(json!({ "document_id": document_id, "start": start, "end": end, "actual": actual })),
            ),
            Project(p) => return p.clone().into(),
            Corpus(c) => return c.clone().into(),
            Block(b) => return b.clone().into(),
            Io(_) => (ErrorClass::Internal, "StorageFailure", None),
            Corrupt { .. } => (ErrorClass::Internal, "StoreCorrupt", None),
        };
        mk(class, code, &e, details)
    }
}

impl From<ExportError> for ApiError {
    fn from(e: ExportError) -> Self {
        use ExportError::*;
        let (class, code, details) = match &e {
            UnknownBlock(_) => (ErrorClass::NotFound, "UnknownBlock", None),
            NoEntries => (ErrorClass::Validation, "NoEntries", None),
            PassageMismatch { .. } => (ErrorClass::Internal, "PassageMismatch", None),
            UnsupportedVersion(v) => (ErrorClass::Validation, "UnsupportedVersion", Some(json!({ "format_version": v }))),
            Malformed(_) => (ErrorClass::Validation, "Malformed", None),
            ValidationFailed(v) => (ErrorClass::Validation, "ValidationFailed", to_details(v)),
            Store(_) => {
                let ExportError::Store(inner) = e else { unreachable!() };
                return inner.into();
            }
        };
        mk(class, code, &e, details)
    }
}

impl From<EvaluationError> for ApiError {
    fn from(e: EvaluationError) -> Self {
        let code = match &e {
            EvaluationError::EmptyGold(_) => "EmptyGold",
            EvaluationError::EmptyList => "EmptyList",
            EvaluationError::ZeroBaseline(_) => "ZeroBaseline",
            EvaluationError::UnknownDocument { .. } => "UnknownDocument",
        };
        mk(ErrorClass::Validation, code, &e, None)
    }
}

impl From<serde_path_to_error::Error<serde_json::Error>> for ApiError {
    fn from(e: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ApiError::validation("MalformedBody", inner.to_string())
            .with_details(json!({ "path": path, "line": inner.line(), "column": inner.column() }))
    }
}

/// Deserializes with the failing field path attached to the error.
pub fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    Ok(serde_path_to_error::deserialize(de)?)
}
