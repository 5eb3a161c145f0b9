use serde::Serialize;

use super::{ParamTensor, Real, Tape, Var};
use crate::error::{Result, StanError};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub pass: bool,
}

/// Compare reverse-mode gradients of the scalar `f` against central finite
/// differences `(f(θ+eps) - f(θ-eps)) / 2eps` for every parameter element.
///
/// Relative error is `|tape - fd| / max(|tape|, |fd|, floor)`; the floor
/// keeps near-zero gradients from dominating on rounding noise alone.
pub fn check_gradients<T, F>(
    op: &str,
    params: &mut [ParamTensor<T>],
    f: F,
    eps: f64,
    tol: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(StanError::Config(format!("eps must be positive, got {eps}")));
    }
    let eval = |params: &[ParamTensor<T>]| -> Result<(Tape<T>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(StanError::Contract(format!(
                "{op}: gradient check needs a scalar function, got shape {:?}",
                tape.value(out).shape()
            )));
        }
        Ok((tape, out))
    };

    let (tape, out) = eval(params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| match grads.of_param(&p.name) {
            Some(g) => g.to_f64_vec(),
            None => vec![0.0; p.value.numel()],
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for pi in 0..params.len() {
        for ei in 0..params[pi].value.numel() {
            let orig = params[pi].value.data()[ei];
            params[pi].value.data_mut()[ei] = T::of(orig.as_f64() + eps);
            let plus = scalar(&eval(params)?);
            params[pi].value.data_mut()[ei] = T::of(orig.as_f64() - eps);
            let minus = scalar(&eval(params)?);
            params[pi].value.data_mut()[ei] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][ei];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((params[pi].name.clone(), ei));
            }
        }
    }
    Ok(GradCheckReport {
        op: op.to_string(),
        max_rel_error: max_rel,
        tolerance: tol,
        checked,
        worst,
        pass: max_rel < tol,
    })
}

fn scalar<T: Real>((tape, out): &(Tape<T>, Var)) -> f64 {
    tape.value(*out).data()[0].as_f64()
}
