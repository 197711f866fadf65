//! The full arc/label parser: encoder, scorers, mean-field inference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, ParamStore, Tape, Tensor, Var};
use crate::config::{DecodeConfig, EncoderConfig, PartSet};
use crate::corpus::{Embeddings, SemanticGraph, Sentence, Vocab};
use crate::encoder::{BiLstm, Embedder, RoleViews, SentenceInput};
use crate::error::{Error, Result};
use crate::mfvi::{decode, mfvi, ArcPosterior};
use crate::scorers::{candidate_mask, score_sentence, ScoreTensors, ScorerWeights};
use crate::trainer::losses::{arc_loss, combined_loss, label_loss};

/// Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub parts: PartSet,
    pub decode: DecodeConfig,
    pub vocab: Vocab,
}

#[derive(Clone, Debug)]
pub struct SrlModel {
    pub spec: ModelSpec,
    pub params: ParamStore,
    embedder: Embedder,
    lstm: BiLstm,
    views: RoleViews,
    scorers: ScorerWeights,
}

/// Output of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub scores: ScoreTensors,
    pub posterior: ArcPosterior,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub arc: Option<Var>,
    pub label: Option<Var>,
}

impl SrlModel {
    pub fn new(spec: ModelSpec, pretrained: Option<&Embeddings>, seed: u64) -> Result<Self> {
        spec.encoder.validate()?;
        spec.decode.validate()?;
        let mut params = ParamStore::new(seed);
        let (embedder, lstm, views, scorers) = build(&mut params, &spec, pretrained);
        Ok(SrlModel {
            spec,
            params,
            embedder,
            lstm,
            views,
            scorers,
        })
    }

    /// Rebuilds a model around stored parameters, checking that names and
    /// shapes match the layout implied by `spec`.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let mut layout = ParamStore::new(params.seed());
        let (embedder, lstm, views, scorers) = build(&mut layout, &spec, None);
        if layout.len() != params.len() {
            return Err(Error::Model(format!(
                "checkpoint has {} tensors, model layout needs {}",
                params.len(),
                layout.len()
            )));
        }
        for ((_, want), (_, got)) in layout.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Model(format!(
                    "checkpoint tensor {} {:?} does not match layout {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(SrlModel {
            spec,
            params,
            embedder,
            lstm,
            views,
            scorers,
        })
    }

    pub fn scorer_weights(&self) -> &ScorerWeights {
        &self.scorers
    }

    /// Pins every triaffine tensor at zero and stops it from training.
    pub fn freeze_triaffine_at_zero(&mut self) {
        let ids: Vec<_> = self.scorers.triaffine_ids().collect();
        for id in ids {
            let p = self.params.get_mut(id);
            p.value.data_mut().fill(0.0);
            p.requires_grad = false;
        }
    }

    pub fn input(&self, sent: &Sentence, features: Option<Tensor>) -> SentenceInput {
        SentenceInput {
            word_ids: self.spec.vocab.word_ids(sent),
            lemma_ids: self.spec.vocab.lemma_ids(sent),
            predicate_flags: sent.predicate_flags(),
            features,
        }
    }

    pub fn forward(&self, tape: &mut Tape, input: &SentenceInput) -> Result<Forward> {
        let e = self.embedder.forward(tape, input)?;
        let h = self.lstm.forward(tape, e)?;
        let views = self.views.forward(tape, h)?;
        let mask = candidate_mask(input.len(), &input.predicates());
        let scores = score_sentence(tape, &views, &self.scorers, &mask)?;
        let iterations = if self.spec.parts.is_empty() {
            0
        } else {
            self.spec.decode.iterations
        };
        let posterior = mfvi(tape, &scores, iterations)?;
        Ok(Forward { scores, posterior })
    }

    /// Training loss for one sentence.
    pub fn loss(&self, tape: &mut Tape, input: &SentenceInput, gold: &SemanticGraph, lambda: f64) -> Result<LossParts> {
        let n = input.len();
        if gold.sentence_len() != n {
            return Err(Error::Model(format!(
                "gold graph for {} tokens, sentence has {n}",
                gold.sentence_len()
            )));
        }
        let fwd = self.forward(tape, input)?;
        let mut gold_arcs = Tensor::zeros(&[n, n]);
        let mut gold_labels = Vec::with_capacity(gold.len());
        for (h, d, role) in gold.arcs() {
            let (i, j) = (h - 1, d - 1);
            if fwd.scores.mask.at2(i, j) == 0.0 {
                return Err(Error::Model(format!(
                    "gold arc {h}->{d} is not a candidate (head is not a predicate)"
                )));
            }
            let r = self
                .spec
                .vocab
                .roles
                .id(role)
                .ok_or_else(|| Error::Model(format!("role {role:?} not in the vocabulary")))?;
            gold_arcs.data_mut()[i * n + j] = 1.0;
            gold_labels.push((i, j, r));
        }
        let arc = arc_loss(tape, fwd.posterior.last(), &gold_arcs, &fwd.scores.mask)?;
        let label = label_loss(tape, fwd.scores.s_label, &gold_labels)?;
        let total = combined_loss(tape, arc, label, lambda)?;
        Ok(LossParts {
            total,
            arc: Some(arc),
            label: Some(label),
        })
    }

    /// Decoded graph plus the final marginals.
    pub fn predict_with_marginals(&self, input: &SentenceInput) -> Result<(SemanticGraph, Tensor)> {
        let n = input.len();
        if input.predicates().is_empty() {
            return Ok((SemanticGraph::new(n), Tensor::zeros(&[n, n])));
        }
        let mut tape = Tape::new(&self.params);
        let fwd = self.forward(&mut tape, input)?;
        let q = tape.value(fwd.posterior.last()).clone();
        let g = decode(
            &q,
            tape.value(fwd.scores.s_label),
            &fwd.scores.mask,
            &self.spec.vocab.roles,
            &self.spec.decode,
        );
        Ok((g, q))
    }

    pub fn predict(&self, input: &SentenceInput) -> Result<SemanticGraph> {
        Ok(self.predict_with_marginals(input)?.0)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "kind": "srl", "spec": self.spec, "extra": extra });
        checkpoint::save(path, &self.params, meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (params, meta) = checkpoint::load(path)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("srl") {
            return Err(Error::Model(format!(
                "{} is not a role labeling checkpoint",
                path.display()
            )));
        }
        let spec: ModelSpec =
            serde_json::from_value(meta["spec"].clone()).map_err(|e| Error::Model(format!("checkpoint spec: {e}")))?;
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((SrlModel::from_params(spec, params)?, extra))
    }
}

fn build(
    params: &mut ParamStore,
    spec: &ModelSpec,
    pretrained: Option<&Embeddings>,
) -> (Embedder, BiLstm, RoleViews, ScorerWeights) {
    let cfg = &spec.encoder;
    let embedder = Embedder::new(
        params,
        "embed",
        cfg,
        &spec.vocab.words,
        &spec.vocab.lemmas,
        pretrained,
        true,
    );
    let lstm = BiLstm::new(params, "lstm", embedder.output_dim(), cfg);
    let views = RoleViews::new(params, lstm.output_dim(), cfg, spec.parts);
    let roles = spec.vocab.roles.len().max(1);
    let scorers = ScorerWeights::new(params, cfg.mlp_arc_label_dim, cfg.mlp_triaffine_dim, roles, spec.parts);
    (embedder, lstm, views, scorers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_corpus;

    fn tiny_model(parts: PartSet) -> (SrlModel, Vec<(Sentence, SemanticGraph)>) {
        let corpus = synthetic_corpus(4, 3);
        let vocab = Vocab::build(corpus.iter().map(|(s, g)| (s, g)));
        let spec = ModelSpec {
            encoder: EncoderConfig::tiny(),
            parts,
            decode: DecodeConfig::default(),
            vocab,
        };
        (SrlModel::new(spec, None, 9).unwrap(), corpus)
    }

    #[test]
    fn checkpoint_round_trip_predicts_identically() {
        let (mut m, corpus) = tiny_model(PartSet::ALL);
        m.params.randomize(4, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p, serde_json::json!({"note": 1})).unwrap();
        let (back, extra) = SrlModel::load(&p).unwrap();
        assert_eq!(extra["note"], 1);
        for (s, _) in &corpus {
            let a = m.predict_with_marginals(&m.input(s, None)).unwrap();
            let b = back.predict_with_marginals(&back.input(s, None)).unwrap();
            assert_eq!(a.1, b.1);
            assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let (m, _) = tiny_model(PartSet::ALL);
        let (other, _) = tiny_model(PartSet::NONE);
        assert!(SrlModel::from_params(other.spec.clone(), m.params.clone()).is_err());
    }

    #[test]
    fn loss_is_finite_and_initial_marginals_are_half() {
        let (m, corpus) = tiny_model(PartSet::ALL);
        let (s, g) = &corpus[0];
        let input = m.input(s, None);
        let mut tape = Tape::new(&m.params);
        let l = m.loss(&mut tape, &input, g, 0.1).unwrap();
        assert!(tape.value(l.total).item().is_finite());
        let (_, q) = m.predict_with_marginals(&input).unwrap();
        let mask = candidate_mask(s.len(), &input.predicates());
        for (x, k) in q.data().iter().zip(mask.data()) {
            assert_eq!(*x, if *k == 1.0 { 0.5 } else { 0.0 });
        }
    }
}
