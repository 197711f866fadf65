//! Arc (binary cross-entropy) and label (cross-entropy) losses.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

/// Clamp applied to marginals before taking logs.
pub const Q_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of `q` against 0/1 `gold` over cells where
/// `mask` is 1. Zero when the mask is empty.
pub fn arc_loss(tape: &mut Tape, q: Var, gold: &Tensor, mask: &Tensor) -> Result<Var, AutodiffError> {
    let count = mask.sum();
    if count == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let qc = tape.clamp(q, Q_CLAMP, 1.0 - Q_CLAMP);
    let log_q = tape.log(qc);
    let neg = tape.scale(qc, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let log_1q = tape.log(one_minus);
    let pos = tape.mul_const(log_q, &gold.zip_map(mask, |y, m| y * m))?;
    let negs = tape.mul_const(log_1q, &gold.zip_map(mask, |y, m| (1.0 - y) * m))?;
    let ll = tape.add(pos, negs)?;
    let total = tape.sum(ll);
    Ok(tape.scale(total, -1.0 / count))
}

/// Mean cross-entropy of the gold role over gold arcs. `gold` holds
/// 0-based `(head, dep, role)` triples; `s_label` is `[n, n, R]`.
pub fn label_loss(tape: &mut Tape, s_label: Var, gold: &[(usize, usize, usize)]) -> Result<Var, AutodiffError> {
    if gold.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let shape = tape.shape(s_label).to_vec();
    let (n, r) = (shape[0], shape[2]);
    let mut flat = Vec::with_capacity(gold.len());
    for &(i, j, l) in gold {
        if i >= n || j >= n || l >= r {
            return Err(AutodiffError::Shape {
                op: "label_loss",
                detail: format!("gold ({i}, {j}, {l}) outside {shape:?}"),
            });
        }
        flat.push((i * n + j) * r + l);
    }
    let lp = tape.log_softmax(s_label, 2)?;
    let picked = tape.gather(lp, &flat)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// `λ·arc + (1−λ)·label`.
pub fn combined_loss(tape: &mut Tape, arc: Var, label: Var, lambda: f64) -> Result<Var, AutodiffError> {
    let a = tape.scale(arc, lambda);
    let l = tape.scale(label, 1.0 - lambda);
    tape.add(a, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    #[test]
    fn bce_hand_value() {
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::new(&[1, 2], vec![0.8, 0.3]).unwrap());
        let gold = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let l = arc_loss(&mut tape, q, &gold, &Tensor::ones(&[1, 2])).unwrap();
        let expect = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_is_finite_at_extremes() {
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap());
        let gold = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let l = arc_loss(&mut tape, q, &gold, &Tensor::ones(&[1, 2])).unwrap();
        assert!(tape.value(l).item().is_finite());
    }

    #[test]
    fn uniform_label_scores_give_log_r() {
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let s = tape.constant(Tensor::zeros(&[2, 2, 4]));
        let l = label_loss(&mut tape, s, &[(0, 1, 2), (1, 0, 3)]).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let none = label_loss(&mut tape, s, &[]).unwrap();
        assert_eq!(tape.value(none).item(), 0.0);
    }

    #[test]
    fn lambda_extremes() {
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::scalar(2.0));
        let b = tape.constant(Tensor::scalar(5.0));
        let l0 = combined_loss(&mut tape, a, b, 0.0).unwrap();
        let l1 = combined_loss(&mut tape, a, b, 1.0).unwrap();
        assert_eq!((tape.value(l0).item(), tape.value(l1).item()), (5.0, 2.0));
    }
}
