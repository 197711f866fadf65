//! Mean-field variational inference over arc indicators, and decoding.
//!
//! `Q⁰ = σ(S_arc)`, then `Qᵗ = σ(S_arc + G(Qᵗ⁻¹))` where
//!
//! ```text
//! G[i,j] = Σ_k Q[i,k]·sib[i,j,k] + Q[k,j]·cop[i,j,k]
//!            + Q[k,i]·gp[i,j,k] + Q[j,k]·gp[j,k,i]
//! ```
//!
//! Every `Q` is multiplied by the candidate mask.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::config::DecodeConfig;
use crate::corpus::{SemanticGraph, SymbolTable};
use crate::scorers::ScoreTensors;

type Res<T> = Result<T, AutodiffError>;

/// Arc marginals after each iteration; `q[0]` is the first-order estimate.
#[derive(Clone, Debug)]
pub struct ArcPosterior {
    pub q: Vec<Var>,
}

impl ArcPosterior {
    pub fn last(&self) -> Var {
        *self.q.last().expect("at least Q0")
    }

    pub fn iterations(&self) -> usize {
        self.q.len() - 1
    }
}

fn column(tape: &mut Tape, q: Var, n: usize) -> Res<Var> {
    tape.reshape(q, &[n, n, 1])
}

/// 1 where `i`, `j`, `k` are pairwise distinct.
pub fn distinct_mask(n: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, n, n]);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i != j && j != k && i != k {
                    m.data_mut()[(i * n + j) * n + k] = 1.0;
                }
            }
        }
    }
    m
}

/// `G(Q)`, masked; `None` when no second-order part is scored. Triples
/// with a repeated index never vote.
pub fn second_order_votes(tape: &mut Tape, q: Var, scores: &ScoreTensors) -> Res<Option<Var>> {
    let n = scores.n;
    if tape.shape(q) != [n, n] {
        return Err(AutodiffError::Shape {
            op: "second_order_votes",
            detail: format!("Q {:?} for {n} tokens", tape.shape(q)),
        });
    }
    let parts = [scores.sib, scores.cop, scores.gp];
    if parts.iter().all(Option::is_none) {
        return Ok(None);
    }
    let distinct = distinct_mask(n);
    let mut clean = [None; 3];
    for (slot, part) in clean.iter_mut().zip(parts) {
        if let Some(s) = part {
            *slot = Some(tape.mul_const(s, &distinct)?);
        }
    }
    let [sib, cop, gp] = clean;
    let mut terms = Vec::new();
    if let Some(sib) = sib {
        let qc = column(tape, q, n)?;
        let g = tape.bmm(sib, qc)?;
        terms.push(tape.reshape(g, &[n, n])?);
    }
    if let Some(cop) = cop {
        // P[j,i,k] = cop[i,j,k]; Σ_k P[j,i,k] Q[k,j]
        let p = tape.permute(cop, &[1, 0, 2])?;
        let qt = tape.transpose(q)?;
        let qc = column(tape, qt, n)?;
        let g = tape.bmm(p, qc)?;
        let g = tape.reshape(g, &[n, n])?;
        terms.push(tape.transpose(g)?);
    }
    if let Some(gp) = gp {
        // i as the middle token: Σ_k gp[i,j,k] Q[k,i]
        let qt = tape.transpose(q)?;
        let qc = column(tape, qt, n)?;
        let g = tape.bmm(gp, qc)?;
        terms.push(tape.reshape(g, &[n, n])?);
        // j as the middle token: Σ_k Q[j,k] gp[j,k,i]
        let p = tape.permute(gp, &[0, 2, 1])?;
        let qc = column(tape, q, n)?;
        let g = tape.bmm(p, qc)?;
        let g = tape.reshape(g, &[n, n])?;
        terms.push(tape.transpose(g)?);
    }
    let (&first, rest) = terms.split_first().expect("at least one part");
    let mut g = first;
    for &t in rest {
        g = tape.add(g, t)?;
    }
    Ok(Some(tape.mul_const(g, &scores.mask)?))
}

/// Runs `iterations` mean-field updates.
pub fn mfvi(tape: &mut Tape, scores: &ScoreTensors, iterations: usize) -> Res<ArcPosterior> {
    let mut inputs = vec![scores.s_arc];
    inputs.extend([scores.sib, scores.cop, scores.gp].into_iter().flatten());
    for v in inputs {
        if !tape.value(v).all_finite() {
            return Err(AutodiffError::NonFinite(
                "non-finite score entering mean-field inference".into(),
            ));
        }
    }
    let sig = tape.sigmoid(scores.s_arc);
    let q0 = tape.mul_const(sig, &scores.mask)?;
    let mut q = vec![q0];
    for _ in 0..iterations {
        let prev = *q.last().unwrap();
        let next = match second_order_votes(tape, prev, scores)? {
            Some(g) => {
                let z = tape.add(scores.s_arc, g)?;
                let z = tape.sigmoid(z);
                tape.mul_const(z, &scores.mask)?
            }
            None => q0,
        };
        q.push(next);
    }
    Ok(ArcPosterior { q })
}

/// Keeps candidate arcs with `Q ≥ threshold` and labels each with its
/// highest-scoring role (lowest id on ties).
pub fn decode(q: &Tensor, s_label: &Tensor, mask: &Tensor, roles: &SymbolTable, cfg: &DecodeConfig) -> SemanticGraph {
    let n = mask.shape()[0];
    let mut g = SemanticGraph::new(n);
    if roles.is_empty() {
        return g;
    }
    for i in 0..n {
        for j in 0..n {
            if mask.at2(i, j) == 0.0 || q.at2(i, j) < cfg.arc_threshold {
                continue;
            }
            let mut best = 0;
            for r in 1..roles.len() {
                if s_label.at3(i, j, r) > s_label.at3(i, j, best) {
                    best = r;
                }
            }
            g.add_arc(i + 1, j + 1, roles.symbol(best))
                .expect("candidate arcs are valid");
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{sigmoid, ParamStore};
    use crate::config::Part;
    use crate::scorers::{candidate_mask, part_mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Raw {
        n: usize,
        arc: Tensor,
        sib: Tensor,
        cop: Tensor,
        gp: Tensor,
        mask: Tensor,
    }

    fn random_raw(n: usize, seed: u64, scale: f64) -> Raw {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = Tensor::new(&[n, n], (0..n * n).map(|x| f64::from(x % (n + 1) != 0)).collect()).unwrap();
        let mut r3 = |p: Part| {
            let mut pm = part_mask(p, &mask);
            for x in pm.data_mut() {
                *x *= rng.gen_range(-scale..scale);
            }
            pm
        };
        let sib = r3(Part::Sib);
        let cop = r3(Part::Cop);
        let gp = r3(Part::Gp);
        let arc = Tensor::new(&[n, n], (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap()
            .zip_map(&mask, |a, m| a * m);
        Raw {
            n,
            arc,
            sib,
            cop,
            gp,
            mask,
        }
    }

    /// Direct transcription of the update with explicit loops.
    fn loop_mfvi(r: &Raw, iters: usize) -> Tensor {
        let n = r.n;
        let mut q = r.arc.zip_map(&r.mask, |s, m| sigmoid(s) * m);
        for _ in 0..iters {
            let mut next = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in 0..n {
                    let mut g = 0.0;
                    for k in 0..n {
                        g += q.at2(i, k) * r.sib.at3(i, j, k)
                            + q.at2(k, j) * r.cop.at3(i, j, k)
                            + q.at2(k, i) * r.gp.at3(i, j, k)
                            + q.at2(j, k) * r.gp.at3(j, k, i);
                    }
                    next.data_mut()[i * n + j] = sigmoid(r.arc.at2(i, j) + g) * r.mask.at2(i, j);
                }
            }
            q = next;
        }
        q
    }

    fn run(r: &Raw, iters: usize, parts: bool) -> Vec<Tensor> {
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let c = |tape: &mut Tape, t: &Tensor| parts.then(|| tape.constant(t.clone()));
        let scores = ScoreTensors {
            n: r.n,
            s_arc: tape.constant(r.arc.clone()),
            s_label: tape.constant(Tensor::zeros(&[r.n, r.n, 1])),
            sib: c(&mut tape, &r.sib),
            cop: c(&mut tape, &r.cop),
            gp: c(&mut tape, &r.gp),
            mask: r.mask.clone(),
        };
        let post = mfvi(&mut tape, &scores, iters).unwrap();
        post.q.iter().map(|&v| tape.value(v).clone()).collect()
    }

    #[test]
    fn matches_loop_oracle() {
        for seed in 0..20 {
            let r = random_raw(4, seed, 1.5);
            let q = run(&r, 3, true);
            let oracle = loop_mfvi(&r, 3);
            for (a, b) in q[3].data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn votes_hand_sum() {
        let n = 3;
        let at = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let mask = Tensor::new(&[3, 3], vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        let mut sib = Tensor::zeros(&[3, 3, 3]);
        sib.data_mut()[at(0, 1, 2)] = 2.0;
        let mut gp = Tensor::zeros(&[3, 3, 3]);
        gp.data_mut()[at(1, 2, 0)] = 3.0;
        // a repeated-index entry that must be ignored
        let mut cop = Tensor::zeros(&[3, 3, 3]);
        cop.data_mut()[at(0, 1, 0)] = 100.0;
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let scores = ScoreTensors {
            n,
            s_arc: tape.constant(Tensor::zeros(&[3, 3])),
            s_label: tape.constant(Tensor::zeros(&[3, 3, 1])),
            sib: Some(tape.constant(sib)),
            cop: Some(tape.constant(cop)),
            gp: Some(tape.constant(gp)),
            mask: mask.clone(),
        };
        let q = tape.constant(mask.map(|m| 0.5 * m));
        let g = second_order_votes(&mut tape, q, &scores).unwrap().unwrap();
        // G[0,1] = Q[0,2]·sib[0,1,2] + Q[1,2]·gp[1,2,0]; G[1,2] = Q[0,1]·gp[1,2,0]
        let mut expect = Tensor::zeros(&[3, 3]);
        expect.data_mut()[1] = 0.5 * 2.0 + 0.5 * 3.0;
        expect.data_mut()[5] = 0.5 * 3.0;
        assert_eq!(tape.value(g), &expect);
    }

    #[test]
    fn zero_iterations_is_first_order() {
        let r = random_raw(4, 7, 1.0);
        let q = run(&r, 0, true);
        assert_eq!(q.len(), 1);
        assert_eq!(q[0], r.arc.zip_map(&r.mask, |s, m| sigmoid(s) * m));
    }

    #[test]
    fn without_parts_every_iterate_equals_q0() {
        let r = random_raw(5, 3, 1.0);
        let q = run(&r, 3, false);
        assert!(q.iter().all(|x| *x == q[0]));
    }

    #[test]
    fn masked_cells_are_zero_and_values_in_unit_interval() {
        let r = random_raw(5, 11, 3.0);
        for q in run(&r, 4, true) {
            for (x, m) in q.data().iter().zip(r.mask.data()) {
                if *m == 0.0 {
                    assert_eq!(*x, 0.0);
                } else {
                    assert!((0.0..=1.0).contains(x));
                }
            }
        }
    }

    #[test]
    fn non_finite_scores_rejected() {
        let mut r = random_raw(3, 1, 1.0);
        r.arc.data_mut()[1] = f64::NAN;
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let scores = ScoreTensors {
            n: 3,
            s_arc: tape.constant(r.arc.clone()),
            s_label: tape.constant(Tensor::zeros(&[3, 3, 1])),
            sib: None,
            cop: None,
            gp: None,
            mask: r.mask.clone(),
        };
        assert!(matches!(mfvi(&mut tape, &scores, 3), Err(AutodiffError::NonFinite(_))));
    }

    #[test]
    fn decode_threshold_and_argmax() {
        let mask = candidate_mask(3, &[1]);
        let q = Tensor::new(&[3, 3], vec![0.0, 0.5, 0.49, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut roles = SymbolTable::new();
        roles.insert("A0");
        roles.insert("A1");
        let mut s = Tensor::zeros(&[3, 3, 2]);
        s.data_mut()[3] = 2.0; // (0,1) prefers A1
        let g = decode(&q, &s, &mask, &roles, &DecodeConfig::default());
        assert_eq!(g.arcs().collect::<Vec<_>>(), vec![(1, 2, "A1")]);
    }
}
