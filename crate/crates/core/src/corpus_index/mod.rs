//! Corpus ingestion and top-K retrieval.
//!
//! The default retriever is an in-process BM25 inverted index persisted to a
//! directory. [`DenseIndex`] is the alternative for deployments with an
//! external embedding endpoint. Both sit behind [`Retriever`].

mod bm25;
mod dense;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use bm25::{Bm25Index, Bm25Params, INDEX_FORMAT};
pub use dense::{DenseIndex, Embedder, HttpEmbedder, DENSE_FORMAT};

/// A corpus unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// Title and body joined the way the index sees them.
    pub fn indexed_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

/// A scored, ranked retrieval hit. Ranks start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDocument {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub num_documents: usize,
    pub num_terms: usize,
    /// Mean document length in tokens.
    pub avg_doc_length: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate doc_id `{0}` in corpus")]
    DuplicateId(String),
    #[error("document `{0}` has empty text")]
    EmptyText(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{path}:{line}: malformed corpus row: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index at `{path}` is invalid: {message}")]
    Format { path: PathBuf, message: String },
    #[error("embedding endpoint failed: {0}")]
    Embedding(String),
}

impl IndexError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IndexError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Anything that can answer "the K documents most relevant to this query".
///
/// Implementations are immutable after construction and safe to share
/// between concurrently running questions.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedDocument>, IndexError>;
}

impl<R: Retriever + ?Sized> Retriever for std::sync::Arc<R> {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedDocument>, IndexError> {
        (**self).retrieve(query, k)
    }
}

#[derive(Deserialize)]
struct CorpusRow {
    id: serde_json::Value,
    #[serde(default)]
    title: String,
    contents: String,
}

/// Reads a JSONL corpus with keys `id`, `title`, `contents`.
///
/// Blank lines are skipped. Duplicate ids and empty passages are rejected.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, IndexError> {
    let file = File::open(path).map_err(|e| IndexError::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IndexError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CorpusRow = serde_json::from_str(&line).map_err(|e| IndexError::MalformedRow {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let doc_id = match row.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(IndexError::MalformedRow {
                    path: path.to_owned(),
                    line: i + 1,
                    message: format!("`id` must be a string or number, got {other}"),
                })
            }
        };
        if !seen.insert(doc_id.clone()) {
            return Err(IndexError::DuplicateId(doc_id));
        }
        docs.push(Document {
            doc_id,
            title: row.title,
            text: row.contents,
        });
    }
    Ok(docs)
}

/// Shared validation for every index builder.
pub(crate) fn validate_documents(docs: &[Document]) -> Result<(), IndexError> {
    if docs.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(docs.len());
    for doc in docs {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(IndexError::DuplicateId(doc.doc_id.clone()));
        }
        if doc.text.trim().is_empty() {
            return Err(IndexError::EmptyText(doc.doc_id.clone()));
        }
    }
    Ok(())
}

/// Orders hits by descending score, then ascending doc_id, keeps the first
/// `k` and assigns ranks.
pub(crate) fn rank_hits(mut hits: Vec<(f64, &Document)>, k: usize) -> Vec<RetrievedDocument> {
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
    hits.into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (score, doc))| RetrievedDocument {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            text: doc.text.clone(),
            score,
            rank: i + 1,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn load_corpus_reads_flashrag_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"1","title":"Twisted Fortune","contents":"A comedy."}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"id":2,"contents":"No title here."}}"#).unwrap();
        let docs = load_corpus(f.path()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0], Document::new("1", "Twisted Fortune", "A comedy."));
        assert_eq!(docs[1].doc_id, "2");
        assert_eq!(docs[1].title, "");
    }

    #[test]
    fn load_corpus_rejects_duplicates_by_name() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"d7","title":"","contents":"x"}}"#).unwrap();
        writeln!(f, r#"{{"id":"d7","title":"","contents":"y"}}"#).unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        assert!(err.to_string().contains("d7"), "{err}");
    }

    #[test]
    fn load_corpus_reports_line_numbers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","title":"","contents":"x"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","title":""}}"#).unwrap();
        match load_corpus(f.path()).unwrap_err() {
            IndexError::MalformedRow { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_corpus_names_path() {
        let err = load_corpus(Path::new("/nonexistent/corpus.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.jsonl"));
    }

    #[test]
    fn validation_catches_empty_text() {
        let docs = vec![Document::new("a", "t", "   ")];
        assert!(matches!(validate_documents(&docs), Err(IndexError::EmptyText(id)) if id == "a"));
        assert!(matches!(validate_documents(&[]), Err(IndexError::EmptyCorpus)));
    }
}
