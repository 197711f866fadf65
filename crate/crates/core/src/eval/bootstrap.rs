use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{per_sentence_counts, Counts};
use crate::corpus::{SemanticGraph, Sentence};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Share of resamples where `b` does not beat `a`; ties count half.
    pub p_value: f64,
    pub b_wins: usize,
    pub ties: usize,
    pub samples: usize,
}

/// Paired bootstrap test of whether system `b` improves on system `a`.
///
/// Each resample draws `sample_size` sentences with replacement; sample
/// `s` uses its own random stream, so results do not depend on thread
/// count.
pub fn bootstrap_significance(
    gold: &[(Sentence, SemanticGraph)],
    system_a: &[(Sentence, SemanticGraph)],
    system_b: &[(Sentence, SemanticGraph)],
    samples: usize,
    sample_size: usize,
    seed: u64,
    include_senses: bool,
) -> Result<BootstrapResult> {
    let a = per_sentence_counts(gold, system_a, include_senses)?;
    let b = per_sentence_counts(gold, system_b, include_senses)?;
    if samples == 0 || sample_size == 0 {
        return Err(Error::Eval(
            "bootstrap needs a positive sample count and sample size".into(),
        ));
    }
    if gold.len() < sample_size {
        return Err(Error::Eval(format!(
            "corpus of {} sentences is smaller than the sample size {sample_size}",
            gold.len()
        )));
    }
    let outcomes: Vec<std::cmp::Ordering> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(seed, &["bootstrap", &s.to_string()]);
            let (mut ca, mut cb) = (Counts::default(), Counts::default());
            for _ in 0..sample_size {
                let i = rng.gen_range(0..gold.len());
                ca.add(a[i]);
                cb.add(b[i]);
            }
            cb.result().f1.total_cmp(&ca.result().f1)
        })
        .collect();
    let b_wins = outcomes.iter().filter(|o| o.is_gt()).count();
    let ties = outcomes.iter().filter(|o| o.is_eq()).count();
    let losses = samples - b_wins - ties;
    Ok(BootstrapResult {
        p_value: (losses as f64 + 0.5 * ties as f64) / samples as f64,
        b_wins,
        ties,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tests::{graph, sent};

    fn corpus() -> Vec<(Sentence, SemanticGraph)> {
        (0..60)
            .map(|i| {
                let s = sent(4, &[(1, "p.01")]);
                let arcs: Vec<(usize, usize, &str)> = if i % 2 == 0 {
                    vec![(1, 2, "A0"), (1, 3, "A1")]
                } else {
                    vec![(1, 4, "A0")]
                };
                (s, graph(4, &arcs))
            })
            .collect()
    }

    #[test]
    fn identical_systems_give_one_half() {
        let g = corpus();
        let r = bootstrap_significance(&g, &g, &g, 500, 50, 1, false).unwrap();
        assert_eq!(r.p_value, 0.5);
        assert_eq!(r.ties, 500);
    }

    #[test]
    fn dominating_system_gives_zero() {
        let g = corpus();
        let weak: Vec<_> = g.iter().map(|(s, _)| (s.clone(), graph(4, &[(1, 2, "A2")]))).collect();
        let r = bootstrap_significance(&g, &weak, &g, 200, 50, 3, false).unwrap();
        assert_eq!(r.p_value, 0.0);
        let reversed = bootstrap_significance(&g, &g, &weak, 200, 50, 3, false).unwrap();
        assert_eq!(reversed.p_value, 1.0);
    }

    #[test]
    fn small_corpus_is_an_error() {
        let g: Vec<_> = corpus().into_iter().take(10).collect();
        assert!(bootstrap_significance(&g, &g, &g, 10, 50, 1, false).is_err());
    }

    #[test]
    fn reproducible_for_a_seed() {
        let g = corpus();
        let noisy: Vec<_> = g
            .iter()
            .enumerate()
            .map(|(i, (s, gg))| (s.clone(), if i % 3 == 0 { graph(4, &[]) } else { gg.clone() }))
            .collect();
        let a = bootstrap_significance(&g, &noisy, &g, 100, 10, 9, false).unwrap();
        let b = bootstrap_significance(&g, &noisy, &g, 100, 10, 9, false).unwrap();
        assert_eq!(a, b);
    }
}
