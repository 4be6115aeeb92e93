//! The selective scan recurrence
//!
//! ```text
//! H_k[i,s] = exp(Δ_k[i]·A[i,s]) · H_{k-1}[i,s] + Δ_k[i]·B_k[s]·u_k[i]
//! y_k[i]   = Σ_s C_k[s] · H_k[i,s]
//! ```
//!
//! with `H_0 = 0`, in a sequential form, a chunked form that composes
//! `(decay, state)` pairs associatively, and a tape operation with an exact
//! hand-derived backward pass.

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::discretize::{decay, MIN_LOG_DECAY};

/// Borrowed inputs to a scan: `u`, `delta` are `T₁ × d_inner`; `a` is
/// `d_inner × n_state`; `b`, `c` are `T₁ × n_state`.
#[derive(Clone, Copy)]
pub struct ScanInputs<'a, T> {
    pub u: &'a Tensor<T>,
    pub delta: &'a Tensor<T>,
    pub a: &'a Tensor<T>,
    pub b: &'a Tensor<T>,
    pub c: &'a Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub steps: usize,
    pub channels: usize,
    pub states: usize,
}

impl<'a, T: Scalar> ScanInputs<'a, T> {
    pub fn dims(&self) -> Result<ScanDims> {
        let (steps, channels) = match self.u.shape() {
            [t, d] => (*t, *d),
            s => return Err(Error::dim("selective_scan(u)", s, &[0, 0])),
        };
        let states = match self.a.shape() {
            [d, s] if *d == channels => *s,
            s => return Err(Error::dim("selective_scan(A)", s, &[channels, 0])),
        };
        if self.delta.shape() != self.u.shape() {
            return Err(Error::dim("selective_scan(delta)", self.delta.shape(), self.u.shape()));
        }
        for (name, m) in [("selective_scan(B)", self.b), ("selective_scan(C)", self.c)] {
            if m.shape() != [steps, states] {
                return Err(Error::dim(name, m.shape(), &[steps, states]));
            }
        }
        Ok(ScanDims {
            steps,
            channels,
            states,
        })
    }
}

fn non_finite(step: usize) -> Error {
    Error::Numeric(format!("non-finite scan state at step {}", step + 1))
}

/// Runs the recurrence; when `keep_states` is set every `H_k` is returned
/// (row-major `T₁ × d_inner × n_state`) for the backward pass.
fn scan_forward<T: Scalar>(x: ScanInputs<'_, T>, keep_states: bool) -> Result<(Tensor<T>, Vec<T>)> {
    let ScanDims {
        steps,
        channels,
        states,
    } = x.dims()?;
    let (u, dl, a, b, c) = (x.u.data(), x.delta.data(), x.a.data(), x.b.data(), x.c.data());
    let width = channels * states;
    let mut h = vec![T::zero(); width];
    let mut y = vec![T::zero(); steps * channels];
    let mut saved = if keep_states {
        Vec::with_capacity(steps * width)
    } else {
        Vec::new()
    };
    for k in 0..steps {
        let bk = &b[k * states..(k + 1) * states];
        let ck = &c[k * states..(k + 1) * states];
        for i in 0..channels {
            let dt = dl[k * channels + i];
            let du = dt * u[k * channels + i];
            let hi = &mut h[i * states..(i + 1) * states];
            let ai = &a[i * states..(i + 1) * states];
            let mut acc = T::zero();
            for s in 0..states {
                let (ab, _) = decay(dt, ai[s])?;
                hi[s] = ab * hi[s] + du * bk[s];
                acc = acc + ck[s] * hi[s];
            }
            if !acc.is_finite() {
                return Err(non_finite(k));
            }
            y[k * channels + i] = acc;
        }
        if keep_states {
            saved.extend_from_slice(&h);
        }
    }
    Ok((Tensor::new(&[steps, channels], y)?, saved))
}

/// Reference sequential scan.
pub fn selective_scan_sequential<T: Scalar>(x: ScanInputs<'_, T>) -> Result<Tensor<T>> {
    scan_forward(x, false).map(|(y, _)| y)
}

/// Summary of a contiguous block of steps: the product of its decays and
/// the state it reaches from a zero initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanElement<T> {
    pub decay: Vec<T>,
    pub state: Vec<T>,
}

impl<T: Scalar> ScanElement<T> {
    pub fn identity(width: usize) -> Self {
        ScanElement {
            decay: vec![T::one(); width],
            state: vec![T::zero(); width],
        }
    }

    /// Composes `self` (earlier) with `later`:
    /// `(d₂·d₁, d₂·h₁ + h₂)`. Associative.
    pub fn then(&self, later: &Self) -> Self {
        ScanElement {
            decay: self.decay.iter().zip(&later.decay).map(|(&a, &b)| b * a).collect(),
            state: self
                .state
                .iter()
                .zip(&later.decay)
                .zip(&later.state)
                .map(|((&h1, &d2), &h2)| h2 + d2 * h1)
                .collect(),
        }
    }
}

/// Chunked scan. Each chunk is summarized as a [`ScanElement`], the chunk
/// summaries are composed left to right to obtain every chunk's incoming
/// state, and outputs inside a chunk are formed as `local + decay·incoming`.
pub fn selective_scan_chunked<T: Scalar>(x: ScanInputs<'_, T>, chunk: usize) -> Result<Tensor<T>> {
    if chunk == 0 {
        return Err(Error::Contract("chunk size must be >= 1".into()));
    }
    let dims = x.dims()?;
    let width = dims.channels * dims.states;
    let bounds: Vec<(usize, usize)> = (0..dims.steps)
        .step_by(chunk)
        .map(|k0| (k0, (k0 + chunk).min(dims.steps)))
        .collect();

    let summaries = bounds
        .iter()
        .map(|&(k0, k1)| chunk_pass(x, dims, k0, k1, None))
        .collect::<Result<Vec<_>>>()?;

    let mut incoming = Vec::with_capacity(bounds.len());
    let mut carry = ScanElement::identity(width);
    for summary in &summaries {
        incoming.push(carry.state.clone());
        carry = carry.then(summary);
    }

    let mut y = vec![T::zero(); dims.steps * dims.channels];
    for (&(k0, k1), h_in) in bounds.iter().zip(&incoming) {
        chunk_pass(x, dims, k0, k1, Some((h_in, &mut y)))?;
    }
    Tensor::new(&[dims.steps, dims.channels], y)
}

/// One pass over steps `k0..k1` from a zero local state. With `emit`, writes
/// `y_k` using the incoming state; always returns the chunk summary.
fn chunk_pass<T: Scalar>(
    x: ScanInputs<'_, T>,
    dims: ScanDims,
    k0: usize,
    k1: usize,
    mut emit: Option<(&Vec<T>, &mut Vec<T>)>,
) -> Result<ScanElement<T>> {
    let ScanDims {
        channels, states, ..
    } = dims;
    let (u, dl, a, b, c) = (x.u.data(), x.delta.data(), x.a.data(), x.b.data(), x.c.data());
    let mut el = ScanElement::identity(channels * states);
    for k in k0..k1 {
        let bk = &b[k * states..(k + 1) * states];
        let ck = &c[k * states..(k + 1) * states];
        for i in 0..channels {
            let dt = dl[k * channels + i];
            let du = dt * u[k * channels + i];
            let mut acc = T::zero();
            for s in 0..states {
                let j = i * states + s;
                let (ab, _) = decay(dt, a[j])?;
                el.state[j] = ab * el.state[j] + du * bk[s];
                el.decay[j] = ab * el.decay[j];
                if let Some((h_in, _)) = &emit {
                    let h = el.state[j] + el.decay[j] * h_in[j];
                    acc = acc + ck[s] * h;
                }
            }
            if let Some((_, y)) = &mut emit {
                if !acc.is_finite() {
                    return Err(non_finite(k));
                }
                y[k * channels + i] = acc;
            }
        }
    }
    Ok(el)
}

struct SelectiveScanOp<T> {
    dims: ScanDims,
    states: Vec<T>,
}

impl<T: Scalar> CustomOp<T> for SelectiveScanOp<T> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (u, dl, a, b, c) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
        );
        let ScanDims {
            steps,
            channels,
            states,
        } = self.dims;
        let width = channels * states;
        let gy = grad.data();
        let floor = T::of(MIN_LOG_DECAY);

        let mut du = vec![T::zero(); steps * channels];
        let mut ddelta = vec![T::zero(); steps * channels];
        let mut da = vec![T::zero(); width];
        let mut db = vec![T::zero(); steps * states];
        let mut dc = vec![T::zero(); steps * states];
        // running dL/dH_k
        let mut g = vec![T::zero(); width];
        let zeros = vec![T::zero(); width];

        for k in (0..steps).rev() {
            let h_k = &self.states[k * width..(k + 1) * width];
            let h_prev = if k > 0 {
                &self.states[(k - 1) * width..k * width]
            } else {
                &zeros[..]
            };
            let bk = &b[k * states..(k + 1) * states];
            let ck = &c[k * states..(k + 1) * states];
            for i in 0..channels {
                let gyi = gy[k * channels + i];
                let dt = dl[k * channels + i];
                let ui = u[k * channels + i];
                let mut ddt = T::zero();
                let mut dui = T::zero();
                for s in 0..states {
                    let j = i * states + s;
                    g[j] = g[j] + gyi * ck[s];
                    dc[k * states + s] = dc[k * states + s] + gyi * h_k[j];
                    let p = dt * a[j];
                    let clamped = p < floor;
                    let ab = if clamped { floor.exp() } else { p.exp() };
                    if !clamped {
                        let dp = g[j] * h_prev[j] * ab;
                        ddt = ddt + dp * a[j];
                        da[j] = da[j] + dp * dt;
                    }
                    ddt = ddt + g[j] * bk[s] * ui;
                    db[k * states + s] = db[k * states + s] + g[j] * dt * ui;
                    dui = dui + g[j] * dt * bk[s];
                    g[j] = ab * g[j];
                }
                ddelta[k * channels + i] = ddt;
                du[k * channels + i] = dui;
            }
        }
        let sd = [steps, channels];
        let ss = [steps, states];
        Ok(vec![
            Some(Tensor::new(&sd, du)?),
            Some(Tensor::new(&sd, ddelta)?),
            Some(Tensor::new(&[channels, states], da)?),
            Some(Tensor::new(&ss, db)?),
            Some(Tensor::new(&ss, dc)?),
        ])
    }
}

/// Records the scan on a tape. Gradients flow to all five inputs.
pub fn selective_scan<T: Scalar>(
    tape: &mut Tape<T>,
    u: Var,
    delta: Var,
    a: Var,
    b: Var,
    c: Var,
) -> Result<Var> {
    let inputs = ScanInputs {
        u: tape.value(u),
        delta: tape.value(delta),
        a: tape.value(a),
        b: tape.value(b),
        c: tape.value(c),
    };
    let dims = inputs.dims()?;
    let (y, states) = scan_forward(inputs, true)?;
    Ok(tape.custom(&[u, delta, a, b, c], y, Box::new(SelectiveScanOp { dims, states })))
}
