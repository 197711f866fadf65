//! Small random corpora for tests, benchmarks and smoke runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{SemanticGraph, Sentence, Token};
use crate::rng::stream;

pub const SYNTH_VOCAB: usize = 50;
pub const SYNTH_ROLES: [&str; 4] = ["A0", "A1", "A2", "AM-TMP"];

/// `n` sentences of 4–8 tokens over a 50-word vocabulary, each with 1–3
/// predicates carrying 1–3 arguments labelled from four roles.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<(Sentence, SemanticGraph)> {
    let mut rng = stream(seed, &["synth"]);
    (0..n).map(|_| synthetic_sentence(&mut rng)).collect()
}

fn synthetic_sentence(rng: &mut impl Rng) -> (Sentence, SemanticGraph) {
    let len = rng.gen_range(4..=8);
    let mut tokens: Vec<Token> = (1..=len)
        .map(|i| {
            let w = rng.gen_range(0..SYNTH_VOCAB);
            Token::new(i, &format!("w{w}"), &format!("l{w}"))
        })
        .collect();
    let mut positions: Vec<usize> = (1..=len).collect();
    positions.shuffle(rng);
    let n_pred = rng.gen_range(1..=3);
    let mut preds = positions[..n_pred].to_vec();
    preds.sort_unstable();
    let mut graph = SemanticGraph::new(len);
    for &p in &preds {
        let t = &mut tokens[p - 1];
        t.is_predicate = true;
        t.pred_sense = Some(format!("{}.0{}", t.lemma, 1 + p % 2));
        let mut args: Vec<usize> = (1..=len).filter(|&a| a != p).collect();
        args.shuffle(rng);
        for &a in &args[..rng.gen_range(1..=3)] {
            let role = SYNTH_ROLES[rng.gen_range(0..SYNTH_ROLES.len())];
            graph.add_arc(p, a, role).expect("distinct arcs");
        }
    }
    (
        Sentence {
            tokens,
            predicates: preds,
        },
        graph,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let a = synthetic_corpus(30, 1);
        assert_eq!(a, synthetic_corpus(30, 1));
        assert_ne!(a, synthetic_corpus(30, 2));
        for (s, g) in &a {
            assert!((4..=8).contains(&s.len()));
            assert!((1..=3).contains(&s.predicates.len()));
            g.validate_heads(&s.predicates).unwrap();
        }
    }
}
