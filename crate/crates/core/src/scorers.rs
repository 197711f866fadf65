//! Biaffine arc/label scorers and the triaffine second-order scorer.
//!
//! Conventions: `v1` denotes `v` with a constant 1 appended. For an arc
//! `i → j` (head `i`, dependent `j`):
//!
//! * arc score `[v_j;1]ᵀ U v_i`, `U ∈ ℝ^{(d+1)×d}`;
//! * label scores `S[r] = Σ_{a,b} [v_j;1][a] U[a,r,b] v_i[b]`,
//!   `U ∈ ℝ^{(d+1)×R×d}`;
//! * triaffine `Σ_{a,b,c} v_i[a] U[a,b,c] [v_k;1][b] [v_j;1][c]`,
//!   `U ∈ ℝ^{d×(d+1)×(d+1)}`.
//!
//! Second-order tensors are indexed so that
//! `sib[i,j,k]` scores `(i→j, i→k)`, `cop[i,j,k]` scores `(i→j, k→j)` and
//! `gp[i,j,k]` scores `(k→i, i→j)`.

use crate::autodiff::{AutodiffError, Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::config::{Part, PartSet};
use crate::encoder::EncodedSentence;

type Res<T> = Result<T, AutodiffError>;

fn dim_error(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

/// Single biaffine arc score for head `v_i` and dependent `v_j`.
pub fn biaffine(v_i: &[f64], v_j: &[f64], u: &Tensor) -> Res<f64> {
    let d = v_i.len();
    if v_j.len() != d || u.shape() != [d + 1, d] {
        return Err(dim_error(
            "biaffine",
            format!("v_i {d}, v_j {}, U {:?}", v_j.len(), u.shape()),
        ));
    }
    let mut s = 0.0;
    for a in 0..=d {
        let ja = v_j.get(a).copied().unwrap_or(1.0);
        for (b, &ib) in v_i.iter().enumerate() {
            s += ja * u.at2(a, b) * ib;
        }
    }
    Ok(s)
}

/// Label score vector for one arc; `u` is `[(d+1), R, d]`.
pub fn biaffine_labels(v_i: &[f64], v_j: &[f64], u: &Tensor) -> Res<Vec<f64>> {
    let d = v_i.len();
    if v_j.len() != d || u.ndim() != 3 || u.shape()[0] != d + 1 || u.shape()[2] != d {
        return Err(dim_error(
            "biaffine_labels",
            format!("v_i {d}, v_j {}, U {:?}", v_j.len(), u.shape()),
        ));
    }
    let r = u.shape()[1];
    let mut out = vec![0.0; r];
    for a in 0..=d {
        let ja = v_j.get(a).copied().unwrap_or(1.0);
        for (l, o) in out.iter_mut().enumerate() {
            for (b, &ib) in v_i.iter().enumerate() {
                *o += ja * u.at3(a, l, b) * ib;
            }
        }
    }
    Ok(out)
}

/// Single triaffine score; `u` is `[d, d+1, d+1]`.
pub fn triaffine(v_i: &[f64], v_j: &[f64], v_k: &[f64], u: &Tensor) -> Res<f64> {
    let d = v_i.len();
    if v_j.len() != d || v_k.len() != d || u.shape() != [d, d + 1, d + 1] {
        return Err(dim_error(
            "triaffine",
            format!("v_i {d}, v_j {}, v_k {}, U {:?}", v_j.len(), v_k.len(), u.shape()),
        ));
    }
    let one = |v: &[f64], x: usize| if x < d { v[x] } else { 1.0 };
    let mut s = 0.0;
    for (a, &ia) in v_i.iter().enumerate() {
        for b in 0..=d {
            for c in 0..=d {
                s += ia * u.at3(a, b, c) * one(v_k, b) * one(v_j, c);
            }
        }
    }
    Ok(s)
}

fn with_ones(tape: &mut Tape, v: Var) -> Res<Var> {
    let n = tape.shape(v)[0];
    let ones = tape.constant(Tensor::ones(&[n, 1]));
    tape.concat(&[v, ones], 1)
}

/// `S[i,j]` for all head rows `i` of `head` and dependent rows `j` of `dep`.
pub fn batched_biaffine(tape: &mut Tape, head: Var, dep: Var, u: Var) -> Res<Var> {
    let dep1 = with_ones(tape, dep)?;
    let x = tape.matmul(dep1, u)?;
    let xt = tape.transpose(x)?;
    tape.matmul(head, xt)
}

/// `S[i,j,r]`, `u` shaped `[(d+1), R, d]`.
pub fn batched_biaffine_labels(tape: &mut Tape, head: Var, dep: Var, u: Var) -> Res<Var> {
    let (n, d) = (tape.shape(head)[0], tape.shape(head)[1]);
    let us = tape.shape(u).to_vec();
    if us.len() != 3 || us[0] != d + 1 || us[2] != d {
        return Err(dim_error("biaffine_labels", format!("head width {d}, U {us:?}")));
    }
    let r = us[1];
    let u2 = tape.reshape(u, &[(d + 1) * r, d])?;
    let u2t = tape.transpose(u2)?;
    // x[i, a, r]
    let x = tape.matmul(head, u2t)?;
    let x = tape.reshape(x, &[n, d + 1, r])?;
    let x = tape.permute(x, &[1, 0, 2])?;
    let x = tape.reshape(x, &[d + 1, n * r])?;
    let dep1 = with_ones(tape, dep)?;
    let y = tape.matmul(dep1, x)?;
    let y = tape.reshape(y, &[n, n, r])?;
    tape.permute(y, &[1, 0, 2])
}

/// `S[i,j,k] = Σ vi[i,a] U[a,b,c] vk1[k,b] vj1[j,c]`.
pub fn batched_triaffine(tape: &mut Tape, vi: Var, vj: Var, vk: Var, u: Var) -> Res<Var> {
    let (n, d) = (tape.shape(vi)[0], tape.shape(vi)[1]);
    if tape.shape(u) != [d, d + 1, d + 1] {
        return Err(dim_error("triaffine", format!("view width {d}, U {:?}", tape.shape(u))));
    }
    let e = d + 1;
    let u2 = tape.reshape(u, &[d, e * e])?;
    let a = tape.matmul(vi, u2)?;
    let a = tape.reshape(a, &[n * e, e])?;
    let vj1 = with_ones(tape, vj)?;
    let vj1t = tape.transpose(vj1)?;
    // b[i, b, j]
    let b = tape.matmul(a, vj1t)?;
    let b = tape.reshape(b, &[n, e, n])?;
    let b = tape.permute(b, &[1, 0, 2])?;
    let b = tape.reshape(b, &[e, n * n])?;
    let vk1 = with_ones(tape, vk)?;
    let c = tape.matmul(vk1, b)?;
    let c = tape.reshape(c, &[n, n, n])?;
    tape.permute(c, &[1, 2, 0])
}

/// Candidate arcs: rows of predicates, no self loops. `predicates` are
/// 1-based positions.
pub fn candidate_mask(n: usize, predicates: &[usize]) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for &p in predicates {
        if p == 0 || p > n {
            continue;
        }
        let i = p - 1;
        for j in 0..n {
            if j != i {
                m.data_mut()[i * n + j] = 1.0;
            }
        }
    }
    m
}

/// Validity mask of second-order triples for one part type.
pub fn part_mask(part: Part, mask: &Tensor) -> Tensor {
    let n = mask.shape()[0];
    let mut out = Tensor::zeros(&[n, n, n]);
    let m = |a: usize, b: usize| mask.at2(a, b) != 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || j == k || i == k {
                    continue;
                }
                let ok = match part {
                    Part::Sib => m(i, j) && m(i, k),
                    Part::Cop => m(i, j) && m(k, j),
                    Part::Gp => m(k, i) && m(i, j),
                };
                if ok {
                    out.data_mut()[(i * n + j) * n + k] = 1.0;
                }
            }
        }
    }
    out
}

/// Scorer parameters.
#[derive(Clone, Debug)]
pub struct ScorerWeights {
    pub arc: ParamId,
    pub label: ParamId,
    pub sib: Option<ParamId>,
    pub cop: Option<ParamId>,
    pub gp: Option<ParamId>,
}

impl ScorerWeights {
    /// All `U` start at zero.
    pub fn new(store: &mut ParamStore, arc_dim: usize, tri_dim: usize, roles: usize, parts: PartSet) -> Self {
        let tri = |store: &mut ParamStore, p: Part| {
            store.add(
                &format!("triaffine.{p}"),
                &[tri_dim, tri_dim + 1, tri_dim + 1],
                Init::Zeros,
            )
        };
        ScorerWeights {
            arc: store.add("biaffine.arc", &[arc_dim + 1, arc_dim], Init::Zeros),
            label: store.add("biaffine.label", &[arc_dim + 1, roles, arc_dim], Init::Zeros),
            sib: parts.sib.then(|| tri(store, Part::Sib)),
            cop: parts.cop.then(|| tri(store, Part::Cop)),
            gp: parts.gp.then(|| tri(store, Part::Gp)),
        }
    }

    pub fn triaffine_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        [self.sib, self.cop, self.gp].into_iter().flatten()
    }
}

/// Scores of one sentence. Entries outside the candidate mask are 0.
#[derive(Clone, Debug)]
pub struct ScoreTensors {
    pub n: usize,
    pub s_arc: Var,
    pub s_label: Var,
    pub sib: Option<Var>,
    pub cop: Option<Var>,
    pub gp: Option<Var>,
    pub mask: Tensor,
}

impl ScoreTensors {
    pub fn has_second_order(&self) -> bool {
        self.sib.is_some() || self.cop.is_some() || self.gp.is_some()
    }
}

fn symmetrize(tape: &mut Tape, s: Var, perm: &[usize]) -> Res<Var> {
    let p = tape.permute(s, perm)?;
    let sum = tape.add(s, p)?;
    Ok(tape.scale(sum, 0.5))
}

/// Scores every candidate arc, label and second-order triple.
pub fn score_sentence(
    tape: &mut Tape,
    views: &EncodedSentence,
    weights: &ScorerWeights,
    mask: &Tensor,
) -> Res<ScoreTensors> {
    let n = tape.shape(views.arc_head)[0];
    if mask.shape() != [n, n] {
        return Err(dim_error("score", format!("mask {:?} for {n} tokens", mask.shape())));
    }
    let u = tape.param(weights.arc);
    let s_arc = batched_biaffine(tape, views.arc_head, views.arc_dep, u)?;
    let s_arc = tape.mul_const(s_arc, mask)?;

    let u = tape.param(weights.label);
    let s_label = batched_biaffine_labels(tape, views.label_head, views.label_dep, u)?;
    let r = tape.shape(s_label)[2];
    let label_mask = Tensor::new(
        &[n, n, r],
        mask.data().iter().flat_map(|&m| std::iter::repeat_n(m, r)).collect(),
    )?;
    let s_label = tape.mul_const(s_label, &label_mask)?;

    let mut out = ScoreTensors {
        n,
        s_arc,
        s_label,
        sib: None,
        cop: None,
        gp: None,
        mask: mask.clone(),
    };
    if let (Some(w), Some(v)) = (weights.sib, views.sib) {
        let u = tape.param(w);
        let s = batched_triaffine(tape, v.head, v.dep, v.dep, u)?;
        let s = symmetrize(tape, s, &[0, 2, 1])?;
        out.sib = Some(tape.mul_const(s, &part_mask(Part::Sib, mask))?);
    }
    if let (Some(w), Some(v)) = (weights.cop, views.cop) {
        let u = tape.param(w);
        let s = batched_triaffine(tape, v.head, v.dep, v.head, u)?;
        let s = symmetrize(tape, s, &[2, 1, 0])?;
        out.cop = Some(tape.mul_const(s, &part_mask(Part::Cop, mask))?);
    }
    if let (Some(w), Some(v), Some(mid)) = (weights.gp, views.gp, views.head_dep) {
        let u = tape.param(w);
        let s = batched_triaffine(tape, mid, v.dep, v.head, u)?;
        out.gp = Some(tape.mul_const(s, &part_mask(Part::Gp, mask))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn biaffine_worked_value() {
        let u = t(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(biaffine(&[1.0, 2.0], &[3.0, 4.0], &u).unwrap(), 14.0);
    }

    #[test]
    fn biaffine_zero_u_and_bad_shape() {
        let u = Tensor::zeros(&[3, 2]);
        assert_eq!(biaffine(&[1.0, 2.0], &[3.0, 4.0], &u).unwrap(), 0.0);
        assert!(biaffine(&[1.0, 2.0], &[3.0, 4.0], &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn triaffine_worked_value() {
        let u = t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(triaffine(&[2.0], &[1.0], &[3.0], &u).unwrap(), 32.0);
        assert!(triaffine(&[2.0], &[1.0], &[3.0], &Tensor::zeros(&[1, 2, 3])).is_err());
    }

    #[test]
    fn label_scores_match_arc_formula_per_slice() {
        let d = 2;
        let u = t(&[3, 2, 2], (0..12).map(|x| x as f64 * 0.5 - 2.0).collect());
        let (vi, vj) = ([0.3, -1.2], [2.0, 0.7]);
        let s = biaffine_labels(&vi, &vj, &u).unwrap();
        for (r, &sr) in s.iter().enumerate() {
            let slice = t(
                &[d + 1, d],
                (0..d + 1)
                    .flat_map(|a| (0..d).map(move |b| (a, b)))
                    .map(|(a, b)| u.at3(a, r, b))
                    .collect(),
            );
            assert!((sr - biaffine(&vi, &vj, &slice).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn candidate_mask_rows() {
        let m = candidate_mask(3, &[2]);
        assert_eq!(m.data(), &[0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut store = ParamStore::new(seed);
        let id = store.add("x", shape, Init::Uniform(1.0));
        store.value(id).clone()
    }

    #[test]
    fn batched_forms_match_loops() {
        let (n, d, r) = (4, 3, 2);
        let head = rand_tensor(&[n, d], 1);
        let dep = rand_tensor(&[n, d], 2);
        let other = rand_tensor(&[n, d], 3);
        let ua = rand_tensor(&[d + 1, d], 4);
        let ul = rand_tensor(&[d + 1, r, d], 5);
        let ut = rand_tensor(&[d, d + 1, d + 1], 6);
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let [h, dp, o, a, l, tr] = [&head, &dep, &other, &ua, &ul, &ut].map(|x| tape.constant(x.clone()));
        let sa = batched_biaffine(&mut tape, h, dp, a).unwrap();
        let sl = batched_biaffine_labels(&mut tape, h, dp, l).unwrap();
        let st = batched_triaffine(&mut tape, h, dp, o, tr).unwrap();
        for i in 0..n {
            for j in 0..n {
                let e = biaffine(head.row(i), dep.row(j), &ua).unwrap();
                assert!((tape.value(sa).at2(i, j) - e).abs() < 1e-12);
                let el = biaffine_labels(head.row(i), dep.row(j), &ul).unwrap();
                for (x, y) in el.iter().enumerate() {
                    assert!((tape.value(sl).at3(i, j, x) - y).abs() < 1e-12);
                }
                for k in 0..n {
                    let e = triaffine(head.row(i), dep.row(j), other.row(k), &ut).unwrap();
                    assert!((tape.value(st).at3(i, j, k) - e).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn biaffine_is_linear_in_each_argument(
            vi in prop::collection::vec(-3.0f64..3.0, 3),
            vj in prop::collection::vec(-3.0f64..3.0, 3),
            w in prop::collection::vec(-3.0f64..3.0, 3),
            u in prop::collection::vec(-2.0f64..2.0, 12),
            alpha in -2.0f64..2.0,
        ) {
            let u = t(&[4, 3], u);
            let f = |a: &[f64]| biaffine(a, &vj, &u).unwrap();
            let mix: Vec<f64> = vi.iter().zip(&w).map(|(x, y)| alpha * x + y).collect();
            let lhs = f(&mix);
            let rhs = alpha * f(&vi) + f(&w);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            // affine (not linear) in the dependent: difference is linear
            let g = |b: &[f64]| biaffine(&vi, b, &u).unwrap() - biaffine(&vi, &[0.0; 3], &u).unwrap();
            let mix: Vec<f64> = vj.iter().zip(&w).map(|(x, y)| alpha * x + y).collect();
            prop_assert!((g(&mix) - alpha * g(&vj) - g(&w)).abs() <= 1e-9 * (1.0 + g(&mix).abs()));
        }

        #[test]
        fn triaffine_is_linear_in_first_argument(
            vi in prop::collection::vec(-3.0f64..3.0, 2),
            w in prop::collection::vec(-3.0f64..3.0, 2),
            vj in prop::collection::vec(-3.0f64..3.0, 2),
            vk in prop::collection::vec(-3.0f64..3.0, 2),
            u in prop::collection::vec(-2.0f64..2.0, 18),
            alpha in -2.0f64..2.0,
        ) {
            let u = t(&[2, 3, 3], u);
            let f = |a: &[f64]| triaffine(a, &vj, &vk, &u).unwrap();
            let mix: Vec<f64> = vi.iter().zip(&w).map(|(x, y)| alpha * x + y).collect();
            let lhs = f(&mix);
            prop_assert!((lhs - alpha * f(&vi) - f(&w)).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn batched_triaffine_permutation_equivariant(seed in 0u64..1000, n in 2usize..5) {
            let d = 2;
            let vi = rand_tensor(&[n, d], seed);
            let vj = rand_tensor(&[n, d], seed + 1);
            let vk = rand_tensor(&[n, d], seed + 2);
            let u = rand_tensor(&[d, d + 1, d + 1], seed + 3);
            let perm: Vec<usize> = (0..n).rev().collect();
            let permute_rows = |x: &Tensor| t(&[n, d], perm.iter().flat_map(|&p| x.row(p).to_vec()).collect());
            let store = ParamStore::new(0);
            let mut tape = Tape::new(&store);
            let args = [&vi, &vj, &vk, &u].map(|x| tape.constant(x.clone()));
            let s = batched_triaffine(&mut tape, args[0], args[1], args[2], args[3]).unwrap();
            let pargs = [permute_rows(&vi), permute_rows(&vj), permute_rows(&vk)].map(|x| tape.constant(x));
            let ps = batched_triaffine(&mut tape, pargs[0], pargs[1], pargs[2], args[3]).unwrap();
            for i in 0..n { for j in 0..n { for k in 0..n {
                let a = tape.value(ps).at3(i, j, k);
                let b = tape.value(s).at3(perm[i], perm[j], perm[k]);
                prop_assert!((a - b).abs() < 1e-12);
            }}}
        }
    }
}
