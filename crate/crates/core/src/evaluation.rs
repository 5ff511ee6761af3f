//! Document-level retrieval metrics for annotated entries.
//!
//! A document counts as retrieved by an entry as soon as any span in it is
//! highlighted, whatever the level. Entries are matched to gold questions by
//! entry id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::AnnotationEntry;
use crate::store::ProjectSnapshot;

/// Relevant document ids per question id.
pub type GoldSpec = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RetrievalMetrics {
    pub fn new(precision: f64, recall: f64) -> Self {
        RetrievalMetrics { precision, recall, f1: harmonic_mean(precision, recall) }
    }
}

fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvaluationError {
    #[error("gold set for question `{0}` is empty")]
    EmptyGold(String),
    #[error("no per-question metrics to average")]
    EmptyList,
    #[error("baseline {0} is zero")]
    ZeroBaseline(&'static str),
    #[error("gold document `{document_id}` for question `{question_id}` is not in the corpus")]
    UnknownDocument { question_id: String, document_id: String },
}

pub fn retrieved_documents(entry: &AnnotationEntry) -> BTreeSet<String> {
    entry.highlights.iter().map(|h| h.document_id.clone()).collect()
}

/// Precision is 0 when nothing was retrieved.
pub fn retrieval_metrics(
    retrieved: &BTreeSet<String>,
    relevant: &BTreeSet<String>,
) -> Result<RetrievalMetrics, EvaluationError> {
    if relevant.is_empty() {
        return Err(EvaluationError::EmptyGold(String::new()));
    }
    let hits = retrieved.intersection(relevant).count() as f64;
    let precision = if retrieved.is_empty() { 0.0 } else { hits / retrieved.len() as f64 };
    let recall = hits / relevant.len() as f64;
    Ok(RetrievalMetrics::new(precision, recall))
}

/// Field-wise arithmetic mean.
pub fn macro_average(per_question: &[RetrievalMetrics]) -> Result<RetrievalMetrics, EvaluationError> {
    if per_question.is_empty() {
        return Err(EvaluationError::EmptyList);
    }
    let n = per_question.len() as f64;
    let sum = |f: fn(&RetrievalMetrics) -> f64| per_question.iter().map(f).sum::<f64>() / n;
    Ok(RetrievalMetrics {
        precision: sum(|m| m.precision),
        recall: sum(|m| m.recall),
        f1: sum(|m| m.f1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub precision_pct: f64,
    pub recall_pct: f64,
    pub f1_pct: f64,
    pub mean_pct: f64,
}

/// Relative change of each metric in percent, and their mean.
pub fn percent_improvement(
    candidate: &RetrievalMetrics,
    baseline: &RetrievalMetrics,
) -> Result<Improvement, EvaluationError> {
    let pct = |c: f64, b: f64, name: &'static str| {
        if b == 0.0 {
            Err(EvaluationError::ZeroBaseline(name))
        } else {
            Ok(100.0 * (c - b) / b)
        }
    };
    let precision_pct = pct(candidate.precision, baseline.precision, "precision")?;
    let recall_pct = pct(candidate.recall, baseline.recall, "recall")?;
    let f1_pct = pct(candidate.f1, baseline.f1, "f1")?;
    Ok(Improvement {
        precision_pct,
        recall_pct,
        f1_pct,
        mean_pct: (precision_pct + recall_pct + f1_pct) / 3.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub retrieved: BTreeSet<String>,
    pub relevant: BTreeSet<String>,
    #[serde(flatten)]
    pub metrics: RetrievalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_question: BTreeMap<String, QuestionReport>,
    pub macro_average: RetrievalMetrics,
}

/// Scores every gold question against the entry with the same id. A
/// question without an entry retrieved nothing.
pub fn evaluate(snapshot: &ProjectSnapshot, gold: &GoldSpec) -> Result<EvaluationReport, EvaluationError> {
    if gold.is_empty() {
        return Err(EvaluationError::EmptyList);
    }
    let entries: BTreeMap<&str, &AnnotationEntry> =
        snapshot.entries.iter().map(|e| (e.entry_id.as_str(), e)).collect();
    let mut per_question = BTreeMap::new();
    for (question_id, relevant) in gold {
        if relevant.is_empty() {
            return Err(EvaluationError::EmptyGold(question_id.clone()));
        }
        if let Some(missing) = relevant.iter().find(|d| snapshot.document(d).is_none()) {
            return Err(EvaluationError::UnknownDocument {
                question_id: question_id.clone(),
                document_id: missing.clone(),
            });
        }
        let retrieved = entries
            .get(question_id.as_str())
            .map(|e| retrieved_documents(e))
            .unwrap_or_default();
        let metrics = retrieval_metrics(&retrieved, relevant)?;
        per_question.insert(
            question_id.clone(),
            QuestionReport { retrieved, relevant: relevant.clone(), metrics },
        );
    }
    let all: Vec<RetrievalMetrics> = per_question.values().map(|q| q.metrics).collect();
    Ok(EvaluationReport { macro_average: macro_average(&all)?, per_question })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_of_three() {
        let m = retrieval_metrics(&set(&["d1", "d2", "d4"]), &set(&["d1", "d2", "d3"])).unwrap();
        assert_eq!(m, RetrievalMetrics { precision: 2.0 / 3.0, recall: 2.0 / 3.0, f1: 2.0 / 3.0 });
    }

    #[test]
    fn perfect_and_empty() {
        let gold = set(&["a", "b"]);
        assert_eq!(
            retrieval_metrics(&gold, &gold).unwrap(),
            RetrievalMetrics { precision: 1.0, recall: 1.0, f1: 1.0 }
        );
        assert_eq!(
            retrieval_metrics(&set(&[]), &gold).unwrap(),
            RetrievalMetrics { precision: 0.0, recall: 0.0, f1: 0.0 }
        );
        assert!(matches!(retrieval_metrics(&gold, &set(&[])), Err(EvaluationError::EmptyGold(_))));
    }

    #[test]
    fn macro_examples() {
        let one = RetrievalMetrics { precision: 1.0, recall: 1.0, f1: 1.0 };
        assert_eq!(macro_average(&[one]).unwrap(), one);
        let a = RetrievalMetrics { precision: 1.0, recall: 0.0, f1: 0.0 };
        let b = RetrievalMetrics { precision: 0.0, recall: 1.0, f1: 0.0 };
        assert_eq!(
            macro_average(&[a, b]).unwrap(),
            RetrievalMetrics { precision: 0.5, recall: 0.5, f1: 0.0 }
        );
        assert_eq!(macro_average(&[]), Err(EvaluationError::EmptyList));
    }

    #[test]
    fn improvement_guards() {
        let m = RetrievalMetrics { precision: 0.5, recall: 0.4, f1: 0.3 };
        let same = percent_improvement(&m, &m).unwrap();
        assert_eq!(same, Improvement { precision_pct: 0.0, recall_pct: 0.0, f1_pct: 0.0, mean_pct: 0.0 });
        let zero = RetrievalMetrics { precision: 0.5, recall: 0.0, f1: 0.3 };
        assert_eq!(percent_improvement(&m, &zero), Err(EvaluationError::ZeroBaseline("recall")));
    }
}
