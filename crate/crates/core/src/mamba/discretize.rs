//! Zero-order-hold discretization of the diagonal continuous-time system.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower clamp applied to `Δ·A` before exponentiation.
pub const MIN_LOG_DECAY: f64 = -60.0;

/// `exp(Δ·a)` with the stability guard: positive exponents are rejected and
/// very negative ones are clamped at [`MIN_LOG_DECAY`].
#[inline]
pub(crate) fn decay<T: Scalar>(delta: T, a: T) -> Result<(T, bool)> {
    let p = delta * a;
    if p > T::zero() || p.is_nan() {
        return Err(Error::Stability(format!(
            "delta*A = {p} must be <= 0 (delta = {delta}, A = {a})"
        )));
    }
    let floor = T::of(MIN_LOG_DECAY);
    if p < floor {
        Ok((floor.exp(), true))
    } else {
        Ok((p.exp(), false))
    }
}

/// Discrete parameters for one step: `Ā = exp(Δ ⊙ A)` and the first-order
/// input matrix `B̄[i,s] = Δ[i]·B[s]`.
///
/// `a` is `d_inner × n_state`, `b_k` has `n_state` entries and `delta_k` has
/// `d_inner` entries.
pub fn discretize<T: Scalar>(
    a: &Tensor<T>,
    b_k: &Tensor<T>,
    delta_k: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d, s) = match a.shape() {
        [d, s] => (*d, *s),
        other => return Err(Error::dim("discretize", other, &[0, 0])),
    };
    if b_k.len() != s || delta_k.len() != d {
        return Err(Error::dim("discretize", a.shape(), &[delta_k.len(), b_k.len()]));
    }
    let mut a_bar = Vec::with_capacity(d * s);
    let mut b_bar = Vec::with_capacity(d * s);
    for i in 0..d {
        let dt = delta_k.data()[i];
        for j in 0..s {
            a_bar.push(decay(dt, a.data()[i * s + j])?.0);
            b_bar.push(dt * b_k.data()[j]);
        }
    }
    Ok((Tensor::new(&[d, s], a_bar)?, Tensor::new(&[d, s], b_bar)?))
}

/// Exact zero-order-hold solution for a scalar system `ḣ = a·h + b·u`:
/// `a_d = e^{aΔ}`, `b_d = ((e^{aΔ} − 1)/a)·b`, with the `a → 0` limit
/// `b_d = Δ·b`.
pub fn zoh_exact(a: f64, b: f64, delta: f64) -> (f64, f64) {
    let a_d = (a * delta).exp();
    if a == 0.0 {
        return (a_d, delta * b);
    }
    // expm1 keeps precision when a·Δ is small
    (a_d, (a * delta).exp_m1() / a * b)
}
