use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rank_hits, validate_documents, Document, IndexError, IndexStats, RetrievedDocument, Retriever};
use crate::text::tokenize;

/// Format tag written into every persisted BM25 index.
pub const INDEX_FORMAT: &str = "resp-bm25/1";

const MANIFEST: &str = "manifest.json";
const DOCUMENTS: &str = "documents.jsonl";
const POSTINGS: &str = "postings.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Bm25Params,
    num_documents: usize,
    num_terms: usize,
    total_tokens: u64,
}

#[derive(Serialize, Deserialize)]
struct StoredDocument {
    doc_id: String,
    title: String,
    text: String,
    length: u32,
}

#[derive(Serialize, Deserialize)]
struct StoredPostings {
    term: String,
    postings: Vec<(u32, u32)>,
}

/// Immutable BM25 inverted index over title and body text.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<Document>,
    doc_lengths: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
    total_tokens: u64,
}

impl Bm25Index {
    pub fn build(documents: impl IntoIterator<Item = Document>, params: Bm25Params) -> Result<Self, IndexError> {
        let docs: Vec<Document> = documents.into_iter().collect();
        validate_documents(&docs)?;

        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut total_tokens = 0u64;
        for (idx, doc) in docs.iter().enumerate() {
            let tokens = tokenize(&doc.indexed_text());
            doc_lengths.push(tokens.len() as u32);
            total_tokens += tokens.len() as u64;

            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for tok in tokens {
                *tf.entry(tok).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: idx as u32,
                    tf: count,
                });
            }
        }

        Ok(Self {
            params,
            docs,
            doc_lengths,
            postings,
            total_tokens,
        })
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            num_documents: self.docs.len(),
            num_terms: self.postings.len(),
            avg_doc_length: self.avg_doc_length(),
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Replaces the scoring parameters. Stored statistics are raw counts, so
    /// this needs no rebuild.
    pub fn with_params(mut self, params: Bm25Params) -> Self {
        self.params = params;
        self
    }

    fn avg_doc_length(&self) -> f64 {
        self.total_tokens as f64 / self.docs.len() as f64
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Writes the index into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir).map_err(|e| IndexError::io(dir, e))?;

        let manifest = Manifest {
            format: INDEX_FORMAT.to_owned(),
            params: self.params,
            num_documents: self.docs.len(),
            num_terms: self.postings.len(),
            total_tokens: self.total_tokens,
        };
        let path = dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| IndexError::io(&path, e))?;

        let path = dir.join(DOCUMENTS);
        let mut out = BufWriter::new(File::create(&path).map_err(|e| IndexError::io(&path, e))?);
        for (doc, &length) in self.docs.iter().zip(&self.doc_lengths) {
            let row = StoredDocument {
                doc_id: doc.doc_id.clone(),
                title: doc.title.clone(),
                text: doc.text.clone(),
                length,
            };
            serde_json::to_writer(&mut out, &row).expect("document serializes");
            out.write_all(b"\n").map_err(|e| IndexError::io(&path, e))?;
        }
        out.flush().map_err(|e| IndexError::io(&path, e))?;

        let path = dir.join(POSTINGS);
        let mut out = BufWriter::new(File::create(&path).map_err(|e| IndexError::io(&path, e))?);
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        for term in terms {
            let row = StoredPostings {
                term: term.clone(),
                postings: self.postings[term].iter().map(|p| (p.doc, p.tf)).collect(),
            };
            serde_json::to_writer(&mut out, &row).expect("postings serialize");
            out.write_all(b"\n").map_err(|e| IndexError::io(&path, e))?;
        }
        out.flush().map_err(|e| IndexError::io(&path, e))?;
        Ok(())
    }

    /// Opens an index written by [`save`](Self::save) with its stored parameters.
    pub fn open(dir: &Path) -> Result<Self, IndexError> {
        let path = dir.join(MANIFEST);
        let raw = fs::read_to_string(&path).map_err(|e| IndexError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| format_err(dir, e.to_string()))?;
        if manifest.format != INDEX_FORMAT {
            return Err(format_err(
                dir,
                format!("unsupported format `{}` (expected `{INDEX_FORMAT}`)", manifest.format),
            ));
        }

        let mut docs = Vec::with_capacity(manifest.num_documents);
        let mut doc_lengths = Vec::with_capacity(manifest.num_documents);
        for row in read_jsonl::<StoredDocument>(dir, DOCUMENTS)? {
            docs.push(Document {
                doc_id: row.doc_id,
                title: row.title,
                text: row.text,
            });
            doc_lengths.push(row.length);
        }

        let mut postings = HashMap::with_capacity(manifest.num_terms);
        for row in read_jsonl::<StoredPostings>(dir, POSTINGS)? {
            if row.postings.iter().any(|&(doc, _)| doc as usize >= docs.len()) {
                return Err(format_err(dir, format!("posting for `{}` points past the corpus", row.term)));
            }
            let list = row.postings.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect();
            postings.insert(row.term, list);
        }

        if docs.len() != manifest.num_documents || postings.len() != manifest.num_terms {
            return Err(format_err(dir, "manifest counts do not match stored data".into()));
        }
        let total_tokens: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        if total_tokens != manifest.total_tokens {
            return Err(format_err(dir, "token total does not match stored lengths".into()));
        }

        Ok(Self {
            params: manifest.params,
            docs,
            doc_lengths,
            postings,
            total_tokens,
        })
    }
}

fn format_err(dir: &Path, message: String) -> IndexError {
    IndexError::Format {
        path: dir.to_owned(),
        message,
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Vec<T>, IndexError> {
    let path = dir.join(name);
    let file = File::open(&path).map_err(|e| IndexError::io(&path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IndexError::io(&path, e))?;
        let row = serde_json::from_str(&line).map_err(|e| format_err(dir, format!("{name}:{}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

impl Retriever for Bm25Index {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedDocument>, IndexError> {
        let terms = tokenize(query);
        if terms.is_empty() || k == 0 {
            return Ok(Vec::new());
        }

        let avgdl = self.avg_doc_length();
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0f64; self.docs.len()];
        let mut matched = vec![false; self.docs.len()];

        // Repeated query terms contribute once per occurrence.
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                let d = p.doc as usize;
                let tf = p.tf as f64;
                let len = self.doc_lengths[d] as f64;
                scores[d] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
                matched[d] = true;
            }
        }

        let hits = (0..self.docs.len())
            .filter(|&d| matched[d] && scores[d] > 0.0)
            .map(|d| (scores[d], &self.docs[d]))
            .collect();
        Ok(rank_hits(hits, k))
    }
}
