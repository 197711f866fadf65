//! Corpus types and file formats: CoNLL-2009, embeddings, feature files.

mod conll;
mod embeddings;
mod features;
mod vocab;

use std::collections::BTreeMap;
use std::path::PathBuf;

pub use conll::{read_conll09, read_conll09_str, write_conll09, write_conll09_string, ReadMode, ReadStats};
pub use embeddings::{load_embeddings, Embeddings};
pub use features::{load_features, write_features_binary, FeatureFile};
pub use vocab::{SymbolTable, Vocab, NOT_PRED, PAD, UNK, UNK_SENSE};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot serialize sentence {sentence}: {message}")]
    Serialize { sentence: usize, message: String },
    #[error("embedding file line {line}: {message}")]
    Embedding { line: usize, message: String },
    #[error("feature file: {0}")]
    Feature(String),
    #[error("feature file has no entry for sentence {0}")]
    MissingSentence(usize),
    #[error("sentence {sentence}: corpus has {expected} tokens but features have {found}")]
    Alignment {
        sentence: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid graph: {0}")]
    Graph(String),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One row of a sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    /// 1-based position.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub is_predicate: bool,
    /// Present exactly when `is_predicate`.
    pub pred_sense: Option<String>,
    /// Raw APRED cells, one per predicate of the sentence.
    pub apred_cells: Vec<String>,
    /// Columns LEMMA..PDEPREL as read; empty when unknown. Carried through
    /// so written files keep their morphology.
    pub morph: Vec<String>,
}

impl Token {
    pub fn new(index: usize, form: &str, lemma: &str) -> Self {
        Token {
            index,
            form: form.to_string(),
            lemma: lemma.to_string(),
            is_predicate: false,
            pred_sense: None,
            apred_cells: Vec::new(),
            morph: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    /// Strictly increasing 1-based indices of predicate tokens.
    pub predicates: Vec<usize>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    /// Per-token predicate flags (0-based).
    pub fn predicate_flags(&self) -> Vec<bool> {
        self.tokens.iter().map(|t| t.is_predicate).collect()
    }

    /// Replace predicate flags and senses; `senses[i]` is `Some` for predicates.
    pub fn set_predicates(&mut self, senses: &[Option<String>]) {
        assert_eq!(senses.len(), self.tokens.len());
        self.predicates.clear();
        for (tok, sense) in self.tokens.iter_mut().zip(senses) {
            tok.is_predicate = sense.is_some();
            tok.pred_sense = sense.clone();
            tok.apred_cells.clear();
            if tok.is_predicate {
                self.predicates.push(tok.index);
            }
        }
    }

    /// Drop all predicate, sense, and argument information.
    pub fn strip_predicates(&mut self) {
        let none = vec![None; self.tokens.len()];
        self.set_predicates(&none);
    }
}

/// Labeled predicate→argument arcs over a sentence, 1-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SemanticGraph {
    sentence_len: usize,
    labels: BTreeMap<(usize, usize), String>,
}

impl SemanticGraph {
    pub fn new(sentence_len: usize) -> Self {
        SemanticGraph {
            sentence_len,
            labels: BTreeMap::new(),
        }
    }

    pub fn sentence_len(&self) -> usize {
        self.sentence_len
    }

    /// Adds `head → dep` labeled `role`. Rejects self-loops, out-of-range
    /// indices, and duplicate arcs.
    pub fn add_arc(&mut self, head: usize, dep: usize, role: &str) -> Result<(), CorpusError> {
        if head == dep {
            return Err(CorpusError::Graph(format!("self-loop at {head}")));
        }
        for i in [head, dep] {
            if i == 0 || i > self.sentence_len {
                return Err(CorpusError::Graph(format!(
                    "index {i} outside 1..={}",
                    self.sentence_len
                )));
            }
        }
        if self.labels.contains_key(&(head, dep)) {
            return Err(CorpusError::Graph(format!("duplicate arc {head}->{dep}")));
        }
        self.labels.insert((head, dep), role.to_string());
        Ok(())
    }

    pub fn label(&self, head: usize, dep: usize) -> Option<&str> {
        self.labels.get(&(head, dep)).map(String::as_str)
    }

    pub fn contains(&self, head: usize, dep: usize) -> bool {
        self.labels.contains_key(&(head, dep))
    }

    /// `(head, dep, role)` in `(head, dep)` order.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize, &str)> {
        self.labels.iter().map(|(&(h, d), r)| (h, d, r.as_str()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Every head must be one of `predicates`.
    pub fn validate_heads(&self, predicates: &[usize]) -> Result<(), CorpusError> {
        for (h, d, _) in self.arcs() {
            if predicates.binary_search(&h).is_err() {
                return Err(CorpusError::Graph(format!("arc {h}->{d} headed by a non-predicate")));
            }
        }
        Ok(())
    }
}
