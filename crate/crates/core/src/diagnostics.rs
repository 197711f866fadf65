//! Whole-pipeline gradient check: embed → encode → score → mean-field →
//! combined loss, on a hand-built five-token sentence.

use crate::autodiff::gradcheck::{check_gradients, DEFAULT_EPS};
use crate::autodiff::{GradcheckReport, Tape, Tensor};
use crate::config::{DecodeConfig, EncoderConfig, PartSet};
use crate::corpus::{SemanticGraph, Sentence, Token, Vocab};
use crate::error::Result;
use crate::model::{ModelSpec, SrlModel};

/// Five tokens, predicates at 2 and 4, with sibling, co-parent and
/// grandparent structure.
pub fn gradcheck_fixture() -> (Sentence, SemanticGraph) {
    let mut tokens: Vec<Token> = ["the", "cat", "saw", "dogs", "run"]
        .iter()
        .enumerate()
        .map(|(i, w)| Token::new(i + 1, w, w))
        .collect();
    for p in [2, 4] {
        tokens[p - 1].is_predicate = true;
        tokens[p - 1].pred_sense = Some(format!("{}.01", tokens[p - 1].lemma));
    }
    let mut g = SemanticGraph::new(5);
    for (h, d, r) in [(2, 1, "A0"), (2, 4, "A1"), (4, 5, "A0"), (4, 1, "A1")] {
        g.add_arc(h, d, r).expect("fixture arcs");
    }
    (
        Sentence {
            tokens,
            predicates: vec![2, 4],
        },
        g,
    )
}

/// Model used by the pipeline check: tiny dims, every part, T = 3, no
/// dropout, parameters randomized so that no scorer is identically zero.
pub fn gradcheck_model(seed: u64) -> Result<(SrlModel, Sentence, SemanticGraph)> {
    let (s, g) = gradcheck_fixture();
    let vocab = Vocab::build([(&s, &g)]);
    let spec = ModelSpec {
        encoder: EncoderConfig::tiny().without_dropout(),
        parts: PartSet::ALL,
        decode: DecodeConfig {
            iterations: 3,
            ..DecodeConfig::default()
        },
        vocab,
    };
    let mut model = SrlModel::new(spec, None, seed)?;
    model.params.randomize(seed ^ 0x9e37_79b9, 0.5);
    Ok((model, s, g))
}

/// Runs the check. With `corrupt`, one analytic gradient entry is
/// perturbed first; the report must then fail.
pub fn pipeline_gradcheck(seed: u64, lambda: f64, corrupt: bool) -> Result<GradcheckReport> {
    let (model, s, g) = gradcheck_model(seed)?;
    let input = model.input(&s, None);
    let f = |tape: &mut Tape| -> Result<_> { Ok(model.loss(tape, &input, &g, lambda)?.total) };
    let mut tape = Tape::new(&model.params);
    let loss = f(&mut tape)?;
    let mut analytic = tape.backward(loss)?;
    drop(tape);
    if corrupt {
        let id = model.scorer_weights().arc;
        let shape = model.params.value(id).shape().to_vec();
        let mut bump = Tensor::zeros(&shape);
        bump.data_mut()[0] = 0.5;
        analytic.accumulate(id, &bump);
    }
    check_gradients(&model.params, DEFAULT_EPS, f, &analytic)
}
