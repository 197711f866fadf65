use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::CorpusError;

/// Pretrained word vectors read from the `word v1 … v_dim` text format.
#[derive(Clone, Debug)]
pub struct Embeddings {
    dim: usize,
    words: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
    unknown: Vec<f64>,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Words in file order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Exact match first, then the lowercased form.
    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&word.to_lowercase()))
            .map(Vec::as_slice)
    }

    /// Like [`lookup`](Self::lookup) but falls back to the unknown (zero) vector.
    pub fn get(&self, word: &str) -> &[f64] {
        self.lookup(word).unwrap_or(&self.unknown)
    }

    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        let mut e = Embeddings {
            dim,
            words: Vec::new(),
            vectors: HashMap::new(),
            unknown: vec![0.0; dim],
        };
        for (w, v) in pairs {
            assert_eq!(v.len(), dim);
            if e.vectors.insert(w.clone(), v).is_none() {
                e.words.push(w);
            }
        }
        e
    }
}

/// Reads a text embedding file. A leading `count dim` header line, as
/// written by word2vec, is skipped.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<Embeddings, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != dim {
            return Err(CorpusError::Embedding {
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let v = values
            .iter()
            .map(|x| x.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Embedding {
                line: i + 1,
                message: e.to_string(),
            })?;
        pairs.push((word.to_string(), v));
    }
    Ok(Embeddings::from_pairs(dim, pairs))
}
