//! Central-difference verification of tape gradients.

use super::params::{Gradients, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::AutodiffError;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// max over entries of `|analytic − numeric| / max(1, |analytic|, |numeric|)`
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub entries_checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn scalar_loss<E>(params: &ParamStore, f: &impl Fn(&mut Tape) -> Result<Var, E>) -> Result<f64, E>
where
    E: From<AutodiffError>,
{
    let mut tape = Tape::new(params);
    let loss = f(&mut tape)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(AutodiffError::NonScalar {
            shape: value.shape().to_vec(),
        }
        .into());
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(AutodiffError::NonFinite(format!("loss = {v}")).into());
    }
    Ok(v)
}

/// Compare the tape's gradients of `f` against central differences over
/// every entry of every trainable parameter. `f` must be deterministic;
/// it is always run on an evaluation-mode tape.
pub fn gradcheck<E>(
    params: &ParamStore,
    eps: f64,
    f: impl Fn(&mut Tape) -> Result<Var, E>,
) -> Result<GradcheckReport, E>
where
    E: From<AutodiffError>,
{
    let mut tape = Tape::new(params);
    let loss = f(&mut tape)?;
    let analytic = tape.backward(loss)?;
    drop(tape);
    check_gradients(params, eps, f, &analytic)
}

/// Like [`gradcheck`] but with caller-supplied analytic gradients.
pub fn check_gradients<E>(
    params: &ParamStore,
    eps: f64,
    f: impl Fn(&mut Tape) -> Result<Var, E>,
    analytic: &Gradients,
) -> Result<GradcheckReport, E>
where
    E: From<AutodiffError>,
{
    if !analytic.all_finite() {
        return Err(AutodiffError::NonFinite("analytic gradient".into()).into());
    }
    let mut work = params.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_param: Vec::new(),
        entries_checked: 0,
    };
    let ids: Vec<ParamId> = params
        .iter()
        .filter(|(_, p)| p.requires_grad)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let name = params.get(id).name.clone();
        let mut worst_here: f64 = 0.0;
        for k in 0..params.value(id).len() {
            let orig = params.value(id).data()[k];
            work.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = scalar_loss(&work, &f)?;
            work.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = scalar_loss(&work, &f)?;
            work.get_mut(id).value.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst_here = worst_here.max(rel);
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), k));
            }
        }
        report.per_param.push((name, worst_here));
    }
    Ok(report)
}
