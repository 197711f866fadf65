use serde::{Deserialize, Serialize};

use super::{per_sentence_counts, Counts, EvalResult};
use crate::corpus::{SemanticGraph, Sentence};
use crate::error::Result;

/// Second-order structure counts of one graph.
///
/// `sib` counts unordered pairs of arcs sharing a head, `cop` unordered
/// pairs sharing a dependent, `gp` chains `k→i→j` with `k ≠ j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoProfile {
    pub sib: usize,
    pub cop: usize,
    pub gp: usize,
    pub has_high_order: bool,
}

pub fn ho_profile(graph: &SemanticGraph) -> HoProfile {
    let n = graph.sentence_len();
    let mut outdeg = vec![0usize; n + 1];
    let mut indeg = vec![0usize; n + 1];
    for (h, d, _) in graph.arcs() {
        outdeg[h] += 1;
        indeg[d] += 1;
    }
    let pairs = |x: usize| x * x.saturating_sub(1) / 2;
    let sib = outdeg.iter().map(|&d| pairs(d)).sum();
    let cop = indeg.iter().map(|&d| pairs(d)).sum();
    let mut gp = 0;
    for (k, i, _) in graph.arcs() {
        gp += graph.arcs().filter(|&(h, j, _)| h == i && j != k).count();
    }
    HoProfile {
        sib,
        cop,
        gp,
        has_high_order: cop > 0 || gp > 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub with_high_order: EvalResult,
    pub without_high_order: EvalResult,
    pub sentences_with: usize,
    pub sentences_without: usize,
}

/// Splits sentences by whether the gold graph has co-parent or
/// grandparent structure and scores each side.
pub fn subset_eval(
    gold: &[(Sentence, SemanticGraph)],
    system: &[(Sentence, SemanticGraph)],
    include_senses: bool,
) -> Result<SubsetReport> {
    let counts = per_sentence_counts(gold, system, include_senses)?;
    let (mut with, mut without) = (Counts::default(), Counts::default());
    let (mut nw, mut nwo) = (0, 0);
    for ((_, g), c) in gold.iter().zip(counts) {
        if ho_profile(g).has_high_order {
            with.add(c);
            nw += 1;
        } else {
            without.add(c);
            nwo += 1;
        }
    }
    Ok(SubsetReport {
        with_high_order: with.result(),
        without_high_order: without.result(),
        sentences_with: nw,
        sentences_without: nwo,
    })
}
