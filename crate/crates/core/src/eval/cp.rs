//! Content preservation: cosine between min/mean/max-pooled word vectors of
//! the source and the transferred sentence.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Token → vector map of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                "embedding_insert",
                &[self.dim],
                &[vector.len()],
            ));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Text format: one `token v1 … vd` line per entry. The dimension is
    /// taken from the first line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vec = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("embedding line {}: {e}", i + 1)))?;
            if vec.is_empty() {
                return Err(Error::Format(format!(
                    "embedding line {} has no vector",
                    i + 1
                )));
            }
            let t = table.get_or_insert_with(|| Self::new(vec.len()));
            t.insert(tok, vec).map_err(|_| {
                Error::Format(format!("embedding line {} has the wrong dimension", i + 1))
            })?;
        }
        table.ok_or_else(|| Error::Format("empty embedding file".into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            out.push_str(k);
            for v in &self.vectors[k] {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// `[min ‖ mean ‖ max]` over the in-table tokens, or `None` when no token
    /// has a vector.
    pub fn pooled<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let vecs: Vec<&[f64]> = tokens.iter().filter_map(|t| self.get(t.as_ref())).collect();
        if vecs.is_empty() {
            return None;
        }
        let d = self.dim;
        let mut out = vec![0.0; 3 * d];
        for j in 0..d {
            let col = vecs.iter().map(|v| v[j]);
            out[j] = col.clone().fold(f64::INFINITY, f64::min);
            out[d + j] = col.clone().sum::<f64>() / vecs.len() as f64;
            out[2 * d + j] = col.fold(f64::NEG_INFINITY, f64::max);
        }
        Some(out)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine of pooled vectors; `None` when either side has no in-table token.
pub fn content_preservation<S: AsRef<str>, T: AsRef<str>>(
    source: &[S],
    transferred: &[T],
    table: &EmbeddingTable,
) -> Option<f64> {
    cosine(&table.pooled(source)?, &table.pooled(transferred)?)
}

/// Mean CP over pairs and the number of skipped pairs.
pub fn corpus_content_preservation(
    pairs: &[(Vec<String>, Vec<String>)],
    table: &EmbeddingTable,
) -> (f64, usize) {
    let scores: Vec<f64> = pairs
        .iter()
        .filter_map(|(s, t)| content_preservation(s, t, table))
        .collect();
    let skipped = pairs.len() - scores.len();
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    (mean, skipped)
}
