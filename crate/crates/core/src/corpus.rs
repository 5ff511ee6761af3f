//! Document corpus: schema-checked ingest, a BM25 inverted index for search
//! across documents and literal case-insensitive search within one document.
//!
//! All offsets are counted in Unicode scalar values (`char`s), never bytes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

use crate::project::{FieldKind, Project};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
const SNIPPET_BEFORE: usize = 40;
const SNIPPET_AFTER: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub document_id: String,
    pub subject_id: String,
    pub text: String,
    /// Every other field of the ingested object, keyed by name.
    #[serde(default)]
    pub extra_fields: BTreeMap<String, Value>,
    pub length_chars: usize,
}

impl Document {
    /// The flat JSON object this document was ingested from.
    pub fn to_object(&self, body_field: &str) -> Map<String, Value> {
        let mut object: Map<String, Value> = self.extra_fields.clone().into_iter().collect();
        object.insert("document_id".into(), Value::String(self.document_id.clone()));
        object.insert("subject_id".into(), Value::String(self.subject_id.clone()));
        object.insert(body_field.into(), Value::String(self.text.clone()));
        object
    }

    /// The value of a named field, including the identifiers and the body.
    pub fn field(&self, name: &str, body_field: &str) -> Option<Value> {
        match name {
            "document_id" => Some(Value::String(self.document_id.clone())),
            "subject_id" => Some(Value::String(self.subject_id.clone())),
            _ if name == body_field => Some(Value::String(self.text.clone())),
            _ => self.extra_fields.get(name).cloned(),
        }
    }

    /// Slice `[start, end)` in char offsets, if in bounds.
    pub fn slice(&self, start: usize, end: usize) -> Option<String> {
        char_slice(&self.text, start, end)
    }
}

pub fn char_slice(text: &str, start: usize, end: usize) -> Option<String> {
    if start > end {
        return None;
    }
    let mut chars = text.chars();
    for _ in 0..start {
        chars.next()?;
    }
    let mut out = String::new();
    for _ in start..end {
        out.push(chars.next()?);
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum IngestViolation {
    NotAnObject,
    MissingField { field: String },
    WrongKind { field: String, expected: FieldKind },
    EmptyDocumentId,
    DuplicateDocumentId { document_id: String },
}

impl fmt::Display for IngestViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestViolation::NotAnObject => f.write_str("row is not a JSON object"),
            IngestViolation::MissingField { field } => write!(f, "missing field `{field}`"),
            IngestViolation::WrongKind { field, expected } => {
                write!(f, "field `{field}` must be of kind {expected}")
            }
            IngestViolation::EmptyDocumentId => f.write_str("document_id must not be empty"),
            IngestViolation::DuplicateDocumentId { document_id } => {
                write!(f, "document_id `{document_id}` already exists")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub violation: IngestViolation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("document payload must be a JSON array")]
    PayloadNotArray,
    #[error("document `{0}` not found")]
    DocumentNotFound(String),
    #[error("query must not be empty")]
    EmptyQuery,
}

/// Checks one ingest row against the project's input schema.
pub fn validate_document(project: &Project, row: &Value) -> Result<Document, IngestViolation> {
    let object = row.as_object().ok_or(IngestViolation::NotAnObject)?;
    for field in &project.input_schema.fields {
        match object.get(&field.name) {
            None | Some(Value::Null) if field.required => {
                return Err(IngestViolation::MissingField { field: field.name.clone() })
            }
            None | Some(Value::Null) => {}
            Some(value) if !field.kind.accepts(value) => {
                return Err(IngestViolation::WrongKind { field: field.name.clone(), expected: field.kind })
            }
            Some(_) => {}
        }
    }

    let string_field = |name: &str| -> Result<String, IngestViolation> {
        match object.get(name) {
            None | Some(Value::Null) => Err(IngestViolation::MissingField { field: name.into() }),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(IngestViolation::WrongKind { field: name.into(), expected: FieldKind::String }),
        }
    };
    let document_id = string_field("document_id")?;
    if document_id.is_empty() {
        return Err(IngestViolation::EmptyDocumentId);
    }
    let subject_id = string_field("subject_id")?;
    let text = string_field(&project.body_field)?;

    let extra_fields = object
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "document_id" | "subject_id") && **k != project.body_field)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(Document {
        document_id,
        subject_id,
        length_chars: text.chars().count(),
        text,
        extra_fields,
    })
}

/// Validates a whole payload without touching any corpus. Rows are checked
/// independently; `existing` holds ids already stored.
pub fn validate_payload(
    project: &Project,
    payload: &Value,
    existing: &dyn Fn(&str) -> bool,
) -> Result<(Vec<Document>, IngestReport), CorpusError> {
    let rows = payload.as_array().ok_or(CorpusError::PayloadNotArray)?;
    let mut accepted = Vec::new();
    let mut report = IngestReport::default();
    let mut batch_ids = HashSet::new();
    for (index, row) in rows.iter().enumerate() {
        let checked = validate_document(project, row).and_then(|doc| {
            if existing(&doc.document_id) || batch_ids.contains(&doc.document_id) {
                Err(IngestViolation::DuplicateDocumentId { document_id: doc.document_id })
            } else {
                Ok(doc)
            }
        });
        match checked {
            Ok(doc) => {
                batch_ids.insert(doc.document_id.clone());
                accepted.push(doc);
            }
            Err(violation) => report.rejected.push(Rejection { index, violation }),
        }
    }
    report.accepted = accepted.len();
    Ok((accepted, report))
}

/// Optional term rewrite applied after case folding (e.g. a stemmer).
pub type TermFilter = Arc<dyn Fn(&str) -> String + Send + Sync>;

#[derive(Clone, Default)]
pub struct Analyzer {
    filter: Option<TermFilter>,
}

impl fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Analyzer").field("filter", &self.filter.is_some()).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: String,
    pub start: usize,
    pub end: usize,
}

impl Analyzer {
    pub fn with_filter(filter: TermFilter) -> Self {
        Analyzer { filter: Some(filter) }
    }

    /// Unicode word segmentation, then NFC and lowercase per word. Offsets
    /// point into the original text.
    pub fn tokens(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        let mut char_pos = 0usize;
        let mut byte_pos = 0usize;
        for (byte_start, word) in text.unicode_word_indices() {
            char_pos += text[byte_pos..byte_start].chars().count();
            let len = word.chars().count();
            let folded: String = word.nfc().collect::<String>().to_lowercase();
            let term = match &self.filter {
                Some(f) => f(&folded),
                None => folded,
            };
            tokens.push(Token { term, start: char_pos, end: char_pos + len });
            char_pos += len;
            byte_pos = byte_start + word.len();
        }
        tokens
    }

    pub fn terms(&self, text: &str) -> Vec<String> {
        self.tokens(text).into_iter().map(|t| t.term).collect()
    }
}

/// Inverted index with BM25 scoring. Document statistics are kept
/// incrementally, so adding documents one at a time or in a batch yields the
/// same index.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    analyzer: Analyzer,
    postings: HashMap<String, BTreeMap<String, u32>>,
    doc_len: HashMap<String, u32>,
    total_len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub document_id: String,
    pub score: f64,
    pub match_count: u32,
}

impl Bm25Index {
    pub fn new(analyzer: Analyzer) -> Self {
        Bm25Index { analyzer, ..Default::default() }
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    pub fn add(&mut self, document_id: &str, text: &str) {
        if self.doc_len.contains_key(document_id) {
            self.remove(document_id);
        }
        let terms = self.analyzer.terms(text);
        self.total_len += terms.len() as u64;
        self.doc_len.insert(document_id.to_string(), terms.len() as u32);
        for term in terms {
            *self
                .postings
                .entry(term)
                .or_default()
                .entry(document_id.to_string())
                .or_insert(0) += 1;
        }
    }

    pub fn remove(&mut self, document_id: &str) {
        let Some(len) = self.doc_len.remove(document_id) else { return };
        self.total_len -= len as u64;
        self.postings.retain(|_, docs| {
            docs.remove(document_id);
            !docs.is_empty()
        });
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_len.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_len.len() as f64
        }
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`, never negative.
    pub fn idf(&self, doc_freq: usize) -> f64 {
        let n = self.doc_len.len() as f64;
        let df = doc_freq as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores every document containing at least one query term. Repeated
    /// query terms count once. Sorted by score descending, then id.
    pub fn search(&self, query: &str, limit: usize) -> Vec<ScoredDoc> {
        let mut terms = self.analyzer.terms(query);
        terms.sort();
        terms.dedup();
        let avgdl = self.avg_doc_len();
        let mut scores: HashMap<&str, (f64, u32)> = HashMap::new();
        for term in &terms {
            let Some(docs) = self.postings.get(term) else { continue };
            let idf = self.idf(docs.len());
            for (doc, &tf) in docs {
                let dl = self.doc_len[doc.as_str()] as f64;
                let tf = tf as f64;
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let s = idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm));
                let e = scores.entry(doc.as_str()).or_insert((0.0, 0));
                e.0 += s;
                e.1 += tf as u32;
            }
        }
        let mut hits: Vec<ScoredDoc> = scores
            .into_iter()
            .map(|(doc, (score, match_count))| ScoredDoc {
                document_id: doc.to_string(),
                score,
                match_count,
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.document_id.cmp(&b.document_id)));
        hits.truncate(limit);
        hits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub document_id: String,
    pub score: f64,
    pub match_count: u32,
    pub snippet: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub start: usize,
    pub end: usize,
}

fn fold_chars(text: &str) -> Vec<String> {
    text.chars().map(|c| c.to_lowercase().collect()).collect()
}

/// Every case-insensitive occurrence of `query` in `text`, leftmost first and
/// non-overlapping. Characters are compared after per-character lowercasing,
/// so a match always spans as many chars as the query.
pub fn find_matches(text: &str, query: &str) -> Result<Vec<MatchSpan>, CorpusError> {
    if query.is_empty() {
        return Err(CorpusError::EmptyQuery);
    }
    let hay = fold_chars(text);
    let needle = fold_chars(query);
    let m = needle.len();
    let mut spans = Vec::new();
    let mut i = 0;
    while i + m <= hay.len() {
        if hay[i..i + m] == needle[..] {
            spans.push(MatchSpan { start: i, end: i + m });
            i += m;
        } else {
            i += 1;
        }
    }
    Ok(spans)
}

/// Documents of one project together with their search index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    index: Bm25Index,
}

impl Corpus {
    pub fn new(analyzer: Analyzer) -> Self {
        Corpus { documents: BTreeMap::new(), index: Bm25Index::new(analyzer) }
    }

    pub fn contains(&self, document_id: &str) -> bool {
        self.documents.contains_key(document_id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn insert(&mut self, doc: Document) {
        self.index.add(&doc.document_id, &doc.text);
        self.documents.insert(doc.document_id.clone(), doc);
    }

    /// Validates and inserts a payload; rejected rows leave the corpus untouched.
    pub fn ingest(&mut self, project: &Project, payload: &Value) -> Result<IngestReport, CorpusError> {
        let (docs, report) = validate_payload(project, payload, &|id| self.contains(id))?;
        for doc in docs {
            self.insert(doc);
        }
        Ok(report)
    }

    pub fn get(&self, document_id: &str) -> Result<&Document, CorpusError> {
        self.documents
            .get(document_id)
            .ok_or_else(|| CorpusError::DocumentNotFound(document_id.to_string()))
    }

    pub fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, CorpusError> {
        let analyzer = self.index.analyzer();
        let query_terms: HashSet<String> = analyzer.terms(query).into_iter().collect();
        if query_terms.is_empty() {
            return Err(CorpusError::EmptyQuery);
        }
        Ok(self
            .index
            .search(query, limit)
            .into_iter()
            .map(|hit| {
                let doc = &self.documents[&hit.document_id];
                SearchHit {
                    snippet: snippet(analyzer, &doc.text, &query_terms),
                    document_id: hit.document_id,
                    score: hit.score,
                    match_count: hit.match_count,
                }
            })
            .collect())
    }

    pub fn search_within(&self, document_id: &str, query: &str) -> Result<Vec<MatchSpan>, CorpusError> {
        let doc = self.get(document_id)?;
        find_matches(&doc.text, query)
    }
}

fn snippet(analyzer: &Analyzer, text: &str, terms: &HashSet<String>) -> String {
    let Some(first) = analyzer.tokens(text).into_iter().find(|t| terms.contains(&t.term)) else {
        return String::new();
    };
    let start = first.start.saturating_sub(SNIPPET_BEFORE);
    let end = first.end + SNIPPET_AFTER;
    text.chars().skip(start).take(end - start).collect::<String>().trim().to_string()
}
