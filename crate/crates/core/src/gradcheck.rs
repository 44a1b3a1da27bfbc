//! Central finite-difference verification of tape gradients (64-bit).

use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, TensorError};

/// Max over the entries of `name` of `(|analytic − fd| − r) / (|fd| + 1e-8)`
/// where `fd` is the Richardson-extrapolated central difference
/// `(4·D(h) − D(2·h)) / 3` and `r` bounds its rounding error (a few ulps of
/// the loss over `2·h`, scaled by the extrapolation weights).
///
/// `h` starts at `eps`. When `D(h)` and `D(2·h)` disagree by more than
/// curvature allows, the stencil straddles a kink (relu, `max(·, 1)`) and
/// `h` shrinks tenfold, at most three times; the most self-consistent step
/// is kept. The analytic value plays no part in choosing `h`. The record is
/// replayed once per perturbation and restored to `store` afterwards.
pub fn finite_difference_check(
    tape: &mut Tape<f64>,
    loss: Var,
    store: &ParamStore<f64>,
    name: &str,
    eps: f64,
) -> Result<f64, TensorError> {
    let grads = tape.gradients(loss)?;
    let analytic = grads
        .param(name)
        .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?
        .clone();
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for k in 0..analytic.len() {
        let orig = probe.get(name)?.data()[k];
        let mut loss_at = |x: f64| -> Result<f64, TensorError> {
            probe.get_mut(name)?.data_mut()[k] = x;
            tape.replay(&probe)?;
            Ok(tape.value(loss).item())
        };
        // (estimate, extrapolation error, rounding bound)
        let mut best: Option<(f64, f64, f64)> = None;
        let mut h = eps;
        for _ in 0..4 {
            let (up, down) = (loss_at(orig + h)?, loss_at(orig - h)?);
            let (up2, down2) = (loss_at(orig + 2.0 * h)?, loss_at(orig - 2.0 * h)?);
            let near = (up - down) / (2.0 * h);
            let far = (up2 - down2) / (4.0 * h);
            let fd = (4.0 * near - far) / 3.0;
            let scale = [up, down, up2, down2].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let resolution = 1.5 * 4.0 * f64::EPSILON * scale / (2.0 * h);
            let spread = (near - far).abs() / 3.0;
            if best.map_or(true, |b| spread < b.1) {
                best = Some((fd, spread, resolution));
            }
            if spread <= 1e-3 * (fd.abs() + 1e-8) + 2.0 * resolution {
                break;
            }
            h /= 10.0;
        }
        probe.get_mut(name)?.data_mut()[k] = orig;
        let (fd, _, resolution) = best.expect("at least one step");
        let gap = ((analytic.data()[k] - fd).abs() - resolution).max(0.0);
        worst = worst.max(gap / (fd.abs() + 1e-8));
    }
    tape.replay(store)?;
    Ok(worst)
}

/// Runs [`finite_difference_check`] for every parameter on the record and
/// returns the worst parameter together with its error.
pub fn check_all_params(
    tape: &mut Tape<f64>,
    loss: Var,
    store: &ParamStore<f64>,
    eps: f64,
) -> Result<(String, f64), TensorError> {
    check_params_where(tape, loss, store, eps, |_| true)
}

/// Like [`check_all_params`] restricted to the names accepted by `keep`.
pub fn check_params_where(
    tape: &mut Tape<f64>,
    loss: Var,
    store: &ParamStore<f64>,
    eps: f64,
    keep: impl Fn(&str) -> bool,
) -> Result<(String, f64), TensorError> {
    let names: Vec<String> = tape.param_names().filter(|n| keep(n)).cloned().collect();
    let mut worst = (String::new(), 0.0);
    for name in names {
        let err = finite_difference_check(tape, loss, store, &name, eps)?;
        if err > worst.1 || worst.0.is_empty() {
            worst = (name, err);
        }
    }
    Ok(worst)
}
