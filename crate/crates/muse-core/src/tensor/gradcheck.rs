//! Central finite-difference gradient checking.
//!
//! This is the independent oracle for every differentiable op: it only ever
//! evaluates forward passes, so it cannot share a bug with the backward
//! closures it verifies. Always run in f64.

use super::Tensor;
use crate::rng::SeedRng;

/// Outcome of a check: the largest relative error seen.
#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries skipped because the loss is not locally smooth there
    /// (e.g. a relu kink inside the difference interval).
    pub skipped: usize,
}

/// Compare analytic gradients of `loss_fn` w.r.t. `params` against central
/// finite differences with step `h`.
///
/// `loss_fn` must rebuild the graph from the parameters' current data on
/// every call and be free of internal randomness. Relative error uses a
/// floor of 1e-3 in the denominator so near-zero gradients are compared
/// absolutely.
pub fn finite_diff_check<F>(
    params: &[&Tensor<f64>],
    loss_fn: F,
    h: f64,
) -> Result<GradCheck, String>
where
    F: Fn() -> Tensor<f64>,
{
    finite_diff_check_impl(params, loss_fn, h, false)
}

/// Like [`finite_diff_check`], but skips entries where halving the step
/// changes the difference quotient, i.e. where the loss has a kink inside
/// the interval and central differences are invalid. A wrong analytic
/// gradient still shows up as consistent finite differences that disagree
/// with it, so the filter cannot mask real bugs. At most 5% of entries may
/// be skipped.
pub fn finite_diff_check_smooth<F>(
    params: &[&Tensor<f64>],
    loss_fn: F,
    h: f64,
) -> Result<GradCheck, String>
where
    F: Fn() -> Tensor<f64>,
{
    finite_diff_check_impl(params, loss_fn, h, true)
}

fn finite_diff_check_impl<F>(
    params: &[&Tensor<f64>],
    loss_fn: F,
    h: f64,
    filter_kinks: bool,
) -> Result<GradCheck, String>
where
    F: Fn() -> Tensor<f64>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    if loss.numel() != 1 {
        return Err(format!("loss must be scalar, got {:?}", loss.shape()));
    }
    loss.backward().map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            let eval_at = |v: f64| {
                p.data_mut()[i] = v;
                let out = loss_fn().item();
                p.data_mut()[i] = orig;
                out
            };
            let fd = (eval_at(orig + h) - eval_at(orig - h)) / (2.0 * h);
            if filter_kinks {
                let fd_half = (eval_at(orig + h / 2.0) - eval_at(orig - h / 2.0)) / h;
                let incons = (fd - fd_half).abs() / fd.abs().max(fd_half.abs()).max(1e-3);
                if incons > 1e-4 {
                    skipped += 1;
                    continue;
                }
            }
            let a = analytic[pi][i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            checked += 1;
        }
    }
    if filter_kinks && skipped * 20 > checked + skipped {
        return Err(format!(
            "too many non-smooth entries: {skipped} of {}",
            checked + skipped
        ));
    }
    Ok(GradCheck {
        max_rel_err,
        checked,
        skipped,
    })
}

/// Random f64 parameter tensor for gradient checks.
pub fn rand_param(shape: &[usize], rng: &mut SeedRng, scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut data = vec![0.0f64; n];
    rng.fill_normal(&mut data, scale);
    Tensor::param(data, shape).expect("shape/data agree by construction")
}

/// Random f64 data tensor (no gradient tracking).
pub fn rand_input(shape: &[usize], rng: &mut SeedRng, scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut data = vec![0.0f64; n];
    rng.fill_normal(&mut data, scale);
    Tensor::new(data, shape).expect("shape/data agree by construction")
}
