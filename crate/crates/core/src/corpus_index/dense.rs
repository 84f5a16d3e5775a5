use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{rank_hits, validate_documents, Document, IndexError, RetrievedDocument, Retriever};

pub const DENSE_FORMAT: &str = "resp-dense/1";
const DENSE_FILE: &str = "dense.json";

/// Maps passages to fixed-width vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, IndexError>;
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self, IndexError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| IndexError::Embedding(e.to_string()))?;
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/embeddings") {
            base.to_owned()
        } else {
            format!("{base}/embeddings")
        };
        Ok(Self {
            client,
            url,
            model: model.to_owned(),
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, IndexError> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| IndexError::Embedding(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(IndexError::Embedding(format!("HTTP {status}: {text}")));
        }
        let mut parsed: EmbeddingResponse = resp.json().map_err(|e| IndexError::Embedding(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(IndexError::Embedding(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|item| item.index);
        Ok(parsed.data.into_iter().map(|item| item.embedding).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct StoredDense {
    format: String,
    docs: Vec<Document>,
    vectors: Vec<Vec<f32>>,
}

/// Exhaustive cosine-similarity retrieval over stored document vectors.
pub struct DenseIndex<E> {
    embedder: E,
    docs: Vec<Document>,
    vectors: Vec<Vec<f32>>,
}

const EMBED_BATCH: usize = 64;

impl<E: Embedder> DenseIndex<E> {
    pub fn build(documents: impl IntoIterator<Item = Document>, embedder: E) -> Result<Self, IndexError> {
        let docs: Vec<Document> = documents.into_iter().collect();
        validate_documents(&docs)?;
        let mut vectors = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(EMBED_BATCH) {
            let texts: Vec<String> = chunk.iter().map(Document::indexed_text).collect();
            vectors.extend(embedder.embed(&texts)?.into_iter().map(unit));
        }
        Ok(Self {
            embedder,
            docs,
            vectors,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir).map_err(|e| IndexError::io(dir, e))?;
        let stored = StoredDense {
            format: DENSE_FORMAT.to_owned(),
            docs: self.docs.clone(),
            vectors: self.vectors.clone(),
        };
        let path = dir.join(DENSE_FILE);
        let json = serde_json::to_string(&stored).expect("dense index serializes");
        fs::write(&path, json).map_err(|e| IndexError::io(&path, e))
    }

    pub fn open(dir: &Path, embedder: E) -> Result<Self, IndexError> {
        let path = dir.join(DENSE_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| IndexError::io(&path, e))?;
        let stored: StoredDense = serde_json::from_str(&raw).map_err(|e| IndexError::Format {
            path: dir.to_owned(),
            message: e.to_string(),
        })?;
        if stored.format != DENSE_FORMAT || stored.docs.len() != stored.vectors.len() {
            return Err(IndexError::Format {
                path: dir.to_owned(),
                message: format!("not a `{DENSE_FORMAT}` index"),
            });
        }
        Ok(Self {
            embedder,
            docs: stored.docs,
            vectors: stored.vectors,
        })
    }
}

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    }
    v
}

impl<E: Embedder> Retriever for DenseIndex<E> {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedDocument>, IndexError> {
        if query.trim().is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let q = self
            .embedder
            .embed(&[query.to_owned()])?
            .pop()
            .map(unit)
            .ok_or_else(|| IndexError::Embedding("no query embedding returned".into()))?;
        // Cosine of unit vectors; non-positive similarities are not hits.
        let hits = self
            .vectors
            .iter()
            .zip(&self.docs)
            .map(|(v, doc)| {
                let dot: f64 = v.iter().zip(&q).map(|(a, b)| *a as f64 * *b as f64).sum();
                (dot, doc)
            })
            .filter(|(score, _)| *score > 0.0)
            .collect();
        Ok(rank_hits(hits, k))
    }
}
