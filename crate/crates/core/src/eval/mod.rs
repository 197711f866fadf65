//! Labeled semantic precision/recall/F1, higher-order structure profiles,
//! and paired bootstrap significance.

mod bootstrap;
mod profile;

pub use bootstrap::{bootstrap_significance, BootstrapResult};
pub use profile::{ho_profile, subset_eval, HoProfile, SubsetReport};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{SemanticGraph, Sentence};
use crate::error::{Error, Result};

/// Item counts for one comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub system: usize,
    pub gold: usize,
}

impl Counts {
    pub fn add(&mut self, o: Counts) {
        self.correct += o.correct;
        self.system += o.system;
        self.gold += o.gold;
    }

    pub fn result(self) -> EvalResult {
        let p = if self.system == 0 {
            0.0
        } else {
            self.correct as f64 / self.system as f64
        };
        let r = if self.gold == 0 {
            0.0
        } else {
            self.correct as f64 / self.gold as f64
        };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        EvalResult {
            precision: p,
            recall: r,
            f1,
            counts: self,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P {:.2}  R {:.2}  F1 {:.2}  (correct {}, system {}, gold {})",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1,
            self.counts.correct,
            self.counts.system,
            self.counts.gold
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Item<'a> {
    Arc(usize, usize, &'a str),
    Sense(usize, &'a str),
}

fn items<'a>(sent: &'a Sentence, graph: &'a SemanticGraph, senses: bool) -> HashMap<Item<'a>, usize> {
    let mut m = HashMap::new();
    for (h, d, r) in graph.arcs() {
        *m.entry(Item::Arc(h, d, r)).or_insert(0) += 1;
    }
    if senses {
        for t in &sent.tokens {
            if let (true, Some(s)) = (t.is_predicate, &t.pred_sense) {
                *m.entry(Item::Sense(t.index, s.as_str())).or_insert(0) += 1;
            }
        }
    }
    m
}

/// Counts for one aligned sentence pair (multiset intersection).
pub fn sentence_counts(
    gold: (&Sentence, &SemanticGraph),
    system: (&Sentence, &SemanticGraph),
    include_senses: bool,
) -> Counts {
    let g = items(gold.0, gold.1, include_senses);
    let s = items(system.0, system.1, include_senses);
    let correct = s.iter().map(|(k, &c)| c.min(g.get(k).copied().unwrap_or(0))).sum();
    Counts {
        correct,
        system: s.values().sum(),
        gold: g.values().sum(),
    }
}

/// Per-sentence counts after checking the two corpora align.
pub fn per_sentence_counts(
    gold: &[(Sentence, SemanticGraph)],
    system: &[(Sentence, SemanticGraph)],
    include_senses: bool,
) -> Result<Vec<Counts>> {
    if gold.len() != system.len() {
        return Err(Error::Eval(format!(
            "gold has {} sentences, system has {}",
            gold.len(),
            system.len()
        )));
    }
    gold.iter()
        .zip(system)
        .enumerate()
        .map(|(i, ((gs, gg), (ss, sg)))| {
            if gs.len() != ss.len() || gg.sentence_len() != gs.len() || sg.sentence_len() != ss.len() {
                return Err(Error::Eval(format!(
                    "sentence {i}: gold has {} tokens, system has {}",
                    gs.len(),
                    ss.len()
                )));
            }
            Ok(sentence_counts((gs, gg), (ss, sg), include_senses))
        })
        .collect()
}

/// Labeled precision, recall and F1 over arcs (and senses when
/// `include_senses`).
pub fn semantic_f1(
    gold: &[(Sentence, SemanticGraph)],
    system: &[(Sentence, SemanticGraph)],
    include_senses: bool,
) -> Result<EvalResult> {
    let mut total = Counts::default();
    for c in per_sentence_counts(gold, system, include_senses)? {
        total.add(c);
    }
    Ok(total.result())
}

/// F1 of unlabeled arcs only.
pub fn unlabeled_f1(gold: &[(Sentence, SemanticGraph)], system: &[(Sentence, SemanticGraph)]) -> Result<EvalResult> {
    let strip = |c: &[(Sentence, SemanticGraph)]| -> Vec<(Sentence, SemanticGraph)> {
        c.iter()
            .map(|(s, g)| {
                let mut u = SemanticGraph::new(g.sentence_len());
                for (h, d, _) in g.arcs() {
                    u.add_arc(h, d, "_arc").expect("copied arc");
                }
                (s.clone(), u)
            })
            .collect()
    };
    semantic_f1(&strip(gold), &strip(system), false)
}
