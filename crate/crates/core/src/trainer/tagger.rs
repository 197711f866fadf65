//! Predicate identification and sense disambiguation as token tagging.
//!
//! Classes are the sense table: [`NOT_PRED`], [`UNK_SENSE`], then every
//! sense seen in training. A predicate tagged with the unknown sense, or
//! with a sense never seen for its lemma, gets `<lemma>.01`.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, ParamStore, Tape, Var};
use crate::config::EncoderConfig;
use crate::corpus::{SemanticGraph, Sentence, SymbolTable, Vocab, NOT_PRED, UNK_SENSE};
use crate::encoder::{BiLstm, Embedder, Linear, Mlp, SentenceInput};
use crate::error::{Error, Result};
use crate::eval::{semantic_f1, EvalResult};
use crate::model::LossParts;
use crate::trainer::Objective;

pub const TAGGER_DROPOUT: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerSpec {
    pub encoder: EncoderConfig,
    pub words: SymbolTable,
    pub lemmas: SymbolTable,
    pub senses: SymbolTable,
    /// `(lemma, sense)` pairs observed in training.
    pub seen: BTreeSet<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct PredicateTagger {
    pub spec: TaggerSpec,
    pub params: ParamStore,
    embedder: Embedder,
    lstm: BiLstm,
    hidden: Mlp,
    out: Linear,
}

fn fallback_sense(lemma: &str) -> String {
    format!("{lemma}.01")
}

impl PredicateTagger {
    pub fn new<'a>(
        encoder: &EncoderConfig,
        corpus: impl IntoIterator<Item = &'a Sentence> + Clone,
        seed: u64,
    ) -> Result<Self> {
        encoder.validate()?;
        let empty = SemanticGraph::new(0);
        let vocab = Vocab::build(corpus.clone().into_iter().map(|s| (s, &empty)));
        let seen = corpus
            .into_iter()
            .flat_map(|s| s.tokens.iter())
            .filter_map(|t| t.pred_sense.as_ref().map(|s| (t.lemma.clone(), s.clone())))
            .collect();
        let spec = TaggerSpec {
            encoder: EncoderConfig {
                plm_input_dim: None,
                ..encoder.clone()
            },
            words: vocab.words,
            lemmas: vocab.lemmas,
            senses: vocab.senses,
            seen,
        };
        let mut params = ParamStore::new(seed);
        let parts = build(&mut params, &spec);
        Ok(Self::assemble(spec, params, parts))
    }

    fn assemble(
        spec: TaggerSpec,
        params: ParamStore,
        (embedder, lstm, hidden, out): (Embedder, BiLstm, Mlp, Linear),
    ) -> Self {
        PredicateTagger {
            spec,
            params,
            embedder,
            lstm,
            hidden,
            out,
        }
    }

    pub fn input(&self, sent: &Sentence) -> SentenceInput {
        SentenceInput {
            word_ids: sent.tokens.iter().map(|t| self.spec.words.id_or_unk(&t.form)).collect(),
            lemma_ids: sent
                .tokens
                .iter()
                .map(|t| self.spec.lemmas.id_or_unk(&t.lemma))
                .collect(),
            predicate_flags: vec![false; sent.len()],
            features: None,
        }
    }

    fn gold_classes(&self, sent: &Sentence) -> Vec<usize> {
        sent.tokens
            .iter()
            .map(|t| match (&t.pred_sense, t.is_predicate) {
                (Some(s), true) => self.spec.senses.id_or_unk(s),
                _ => 0,
            })
            .collect()
    }

    /// Class log-probabilities `[n, C]`.
    fn logits(&self, tape: &mut Tape, input: &SentenceInput) -> Result<Var> {
        let e = self.embedder.forward(tape, input)?;
        let h = self.lstm.forward(tape, e)?;
        let z = self.hidden.forward(tape, h)?;
        let y = self.out.forward(tape, z)?;
        Ok(tape.log_softmax(y, 1)?)
    }

    pub fn loss(&self, tape: &mut Tape, sent: &Sentence) -> Result<Var> {
        let input = self.input(sent);
        let lp = self.logits(tape, &input)?;
        let c = self.spec.senses.len();
        let flat: Vec<usize> = self
            .gold_classes(sent)
            .into_iter()
            .enumerate()
            .map(|(i, k)| i * c + k)
            .collect();
        let picked = tape.gather(lp, &flat)?;
        let m = tape.mean(picked);
        Ok(tape.scale(m, -1.0))
    }

    /// Predicted sense per token; `None` for non-predicates.
    pub fn tag(&self, sent: &Sentence) -> Result<Vec<Option<String>>> {
        if sent.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let lp = self.logits(&mut tape, &self.input(sent))?;
        let lp = tape.value(lp);
        Ok(sent
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let row = lp.row(i);
                let best = (1..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                match self.spec.senses.symbol(best) {
                    NOT_PRED => None,
                    UNK_SENSE => Some(fallback_sense(&t.lemma)),
                    s if self.spec.seen.contains(&(t.lemma.clone(), s.to_string())) => Some(s.to_string()),
                    _ => Some(fallback_sense(&t.lemma)),
                }
            })
            .collect())
    }

    /// Copies of `corpus` with predicates and senses replaced by predictions
    /// and empty graphs.
    pub fn tag_predicates(&self, corpus: &[Sentence]) -> Result<Vec<Sentence>> {
        corpus
            .par_iter()
            .map(|s| {
                let mut out = s.clone();
                out.set_predicates(&self.tag(s)?);
                Ok(out)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "kind": "tagger", "spec": self.spec });
        checkpoint::save(path, &self.params, meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("tagger") {
            return Err(Error::Model(format!(
                "{} is not a predicate tagger checkpoint",
                path.display()
            )));
        }
        let spec: TaggerSpec =
            serde_json::from_value(meta["spec"].clone()).map_err(|e| Error::Model(format!("tagger spec: {e}")))?;
        let mut layout = ParamStore::new(params.seed());
        let parts = build(&mut layout, &spec);
        let same = layout.len() == params.len()
            && layout
                .iter()
                .zip(params.iter())
                .all(|((_, a), (_, b))| a.name == b.name && a.value.shape() == b.value.shape());
        if !same {
            return Err(Error::Model("tagger checkpoint does not match its layout".into()));
        }
        Ok(Self::assemble(spec, params, parts))
    }
}

fn build(params: &mut ParamStore, spec: &TaggerSpec) -> (Embedder, BiLstm, Mlp, Linear) {
    let cfg = &spec.encoder;
    let embedder = Embedder::new(params, "tagger.embed", cfg, &spec.words, &spec.lemmas, None, false);
    let lstm = BiLstm::new(params, "tagger.lstm", embedder.output_dim(), cfg);
    let hidden = Mlp::new(
        params,
        "tagger.mlp",
        lstm.output_dim(),
        cfg.sense_dim,
        cfg.leaky_slope,
        TAGGER_DROPOUT,
    );
    let out = Linear::new(params, "tagger.out", cfg.sense_dim, spec.senses.len());
    (embedder, lstm, hidden, out)
}

/// Predicate identification plus sense F1 (items are `(position, sense)`).
pub fn predicate_f1(gold: &[Sentence], system: &[Sentence]) -> Result<EvalResult> {
    let wrap = |c: &[Sentence]| -> Vec<(Sentence, SemanticGraph)> {
        c.iter().map(|s| (s.clone(), SemanticGraph::new(s.len()))).collect()
    };
    semantic_f1(&wrap(gold), &wrap(system), true)
}

pub struct TaggerObjective<'a> {
    pub tagger: &'a mut PredicateTagger,
    pub train: &'a [Sentence],
    pub dev: &'a [Sentence],
}

impl Objective for TaggerObjective<'_> {
    fn params(&self) -> &ParamStore {
        &self.tagger.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.tagger.params
    }

    fn num_examples(&self) -> usize {
        self.train.len()
    }

    fn example_tokens(&self, i: usize) -> usize {
        self.train[i].len()
    }

    fn example_loss(&self, tape: &mut Tape, i: usize) -> Result<LossParts> {
        let total = self.tagger.loss(tape, &self.train[i])?;
        Ok(LossParts {
            total,
            arc: None,
            label: None,
        })
    }

    fn evaluate(&self) -> Result<Option<EvalResult>> {
        if self.dev.is_empty() {
            return Ok(None);
        }
        let pred = self.tagger.tag_predicates(self.dev)?;
        Ok(Some(predicate_f1(self.dev, &pred)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::synth::synthetic_corpus;
    use crate::trainer::fit;

    #[test]
    fn unknown_sense_falls_back_to_lemma_01() {
        let corpus: Vec<Sentence> = synthetic_corpus(3, 1).into_iter().map(|(s, _)| s).collect();
        let mut t = PredicateTagger::new(&EncoderConfig::tiny(), &corpus, 1).unwrap();
        // bias the output towards UNK_SENSE
        let bias = t.params.find("tagger.out.bias").unwrap();
        t.params.get_mut(bias).value.data_mut()[1] = 100.0;
        let tags = t.tag(&corpus[0]).unwrap();
        for (tag, tok) in tags.iter().zip(&corpus[0].tokens) {
            assert_eq!(tag.as_deref(), Some(format!("{}.01", tok.lemma).as_str()));
        }
    }

    #[test]
    fn tagger_learns_a_tiny_corpus_and_round_trips() {
        let corpus: Vec<Sentence> = synthetic_corpus(6, 2).into_iter().map(|(s, _)| s).collect();
        let cfg = EncoderConfig {
            lstm_hidden: 16,
            sense_dim: 16,
            ..EncoderConfig::tiny()
        }
        .without_dropout();
        let mut tagger = PredicateTagger::new(&cfg, &corpus, 3).unwrap();
        let tc = TrainConfig {
            max_steps: 300,
            eval_every: 50,
            batch_tokens: 1000,
            target_dev_f1: Some(1.0),
            ..TrainConfig::default()
        };
        let mut obj = TaggerObjective {
            tagger: &mut tagger,
            train: &corpus,
            dev: &corpus,
        };
        let out = fit(&mut obj, &tc, 3, 1, &mut |_| {}).unwrap();
        assert_eq!(out.best.unwrap().1.f1, 1.0, "{out:?}");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tagger.ckpt");
        tagger.save(&p).unwrap();
        let back = PredicateTagger::load(&p).unwrap();
        assert_eq!(
            back.tag_predicates(&corpus).unwrap(),
            tagger.tag_predicates(&corpus).unwrap()
        );
    }
}
