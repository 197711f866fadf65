use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{SemanticGraph, Sentence};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const NOT_PRED: &str = "<not-pred>";
pub const UNK_SENSE: &str = "<unk-sense>";

/// Dense string ↔ id mapping. Ids are assigned in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    unk: Option<usize>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// A table whose first entries are `<pad>` and `<unk>`.
    pub fn with_pad_unk() -> Self {
        let mut t = Self::new();
        t.insert(PAD);
        t.unk = Some(t.insert(UNK));
        t
    }

    pub fn insert(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        self.symbols.push(s.to_string());
        self.index.insert(s.to_string(), self.symbols.len() - 1);
        self.symbols.len() - 1
    }

    pub fn set_unknown(&mut self, s: &str) {
        self.unk = Some(self.insert(s));
    }

    pub fn id(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Id of `s`, or the unknown id. Panics if the table has no unknown entry.
    pub fn id_or_unk(&self, s: &str) -> usize {
        self.id(s).or(self.unk).expect("symbol table without an unknown entry")
    }

    pub fn unk_id(&self) -> Option<usize> {
        self.unk
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    symbols: Vec<String>,
    unk: Option<usize>,
}

impl Serialize for SymbolTable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TableRepr {
            symbols: self.symbols.clone(),
            unk: self.unk,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymbolTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = TableRepr::deserialize(d)?;
        let index = r.symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(SymbolTable {
            symbols: r.symbols,
            index,
            unk: r.unk,
        })
    }
}

/// Vocabularies for words, lemmas, role labels, and predicate senses.
///
/// `senses` doubles as the predicate tagger's class set: id 0 is
/// [`NOT_PRED`], id 1 is [`UNK_SENSE`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub words: SymbolTable,
    pub lemmas: SymbolTable,
    pub roles: SymbolTable,
    pub senses: SymbolTable,
}

impl Vocab {
    /// Collects symbols in corpus order, so the same corpus always
    /// yields the same ids.
    pub fn build<'a>(corpus: impl IntoIterator<Item = (&'a Sentence, &'a SemanticGraph)>) -> Self {
        let mut words = SymbolTable::with_pad_unk();
        let mut lemmas = SymbolTable::with_pad_unk();
        let mut roles = SymbolTable::new();
        let mut senses = SymbolTable::new();
        senses.insert(NOT_PRED);
        senses.set_unknown(UNK_SENSE);
        for (sent, graph) in corpus {
            for tok in &sent.tokens {
                words.insert(&tok.form);
                lemmas.insert(&tok.lemma);
                if let Some(s) = &tok.pred_sense {
                    senses.insert(s);
                }
            }
            for (_, _, role) in graph.arcs() {
                roles.insert(role);
            }
        }
        Vocab {
            words,
            lemmas,
            roles,
            senses,
        }
    }

    /// Adds words (e.g. from a pretrained embedding file) after the corpus words.
    pub fn extend_words<'a>(&mut self, words: impl IntoIterator<Item = &'a str>) {
        for w in words {
            self.words.insert(w);
        }
    }

    pub fn word_ids(&self, sent: &Sentence) -> Vec<usize> {
        sent.tokens.iter().map(|t| self.words.id_or_unk(&t.form)).collect()
    }

    pub fn lemma_ids(&self, sent: &Sentence) -> Vec<usize> {
        sent.tokens.iter().map(|t| self.lemmas.id_or_unk(&t.lemma)).collect()
    }
}
