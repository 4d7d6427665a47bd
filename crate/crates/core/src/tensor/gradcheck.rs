//! Central-difference gradient verification.

use super::Tensor;

/// Compare the reverse-mode gradient of `f` at `x` against central finite
/// differences with step `h`, entry by entry.
///
/// Returns the maximum of `|a - n| / max(1e-8, |a| + |n|)` over all entries,
/// where `a` is the autodiff gradient and `n` the numerical one. `f` must be
/// a pure scalar-valued function of its argument.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> f64
where
    F: Fn(&Tensor) -> Tensor,
{
    let leaf = x.detach().requires_grad(true);
    let loss = f(&leaf);
    assert_eq!(loss.numel(), 1, "contract violation: grad_check needs a scalar f");
    loss.backward();
    let analytic = leaf
        .grad()
        .expect("grad_check: no gradient reached x; is it part of the graph?");

    let base = x.to_vec();
    let shape = x.shape();
    let mut max_err: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let fp = f(&Tensor::from_vec(plus, &shape)).item();
        let mut minus = base.clone();
        minus[i] -= h;
        let fm = f(&Tensor::from_vec(minus, &shape)).item();
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / f64::max(1e-8, analytic[i].abs() + numeric.abs());
        max_err = max_err.max(err);
    }
    max_err
}
