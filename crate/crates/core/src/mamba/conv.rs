//! Depthwise causal 1-D convolution over the sequence axis.

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn conv_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (steps, ch) = match x.shape() {
        [t, c] => (*t, *c),
        s => return Err(Error::dim("causal_conv", s, &[0, 0])),
    };
    let width = match w.shape() {
        [c, k] if *c == ch && *k >= 1 => *k,
        s => return Err(Error::dim("causal_conv(weight)", s, &[ch, 0])),
    };
    if b.shape() != [ch] {
        return Err(Error::dim("causal_conv(bias)", b.shape(), &[ch]));
    }
    Ok((steps, ch, width))
}

/// `y[t,c] = bias[c] + Σ_j w[c,j]·x[t−(K−1)+j, c]`, zero-padded on the left;
/// tap `K−1` is the current step.
pub fn causal_conv1d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (steps, ch, k) = conv_dims(x, w, bias)?;
    let (xd, wd) = (x.data(), w.data());
    let mut y = Vec::with_capacity(steps * ch);
    for t in 0..steps {
        for c in 0..ch {
            let mut acc = bias.data()[c];
            for j in 0..k {
                if let Some(src) = (t + j).checked_sub(k - 1) {
                    acc = acc + wd[c * k + j] * xd[src * ch + c];
                }
            }
            y.push(acc);
        }
    }
    Tensor::new(&[steps, ch], y)
}

struct CausalConvOp;

impl<T: Scalar> CustomOp<T> for CausalConvOp {
    fn name(&self) -> &'static str {
        "causal_conv1d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (steps, ch, k) = conv_dims(x, w, b)?;
        let (xd, wd, g) = (x.data(), w.data(), grad.data());
        let mut dx = vec![T::zero(); steps * ch];
        let mut dw = vec![T::zero(); ch * k];
        let mut db = vec![T::zero(); ch];
        for t in 0..steps {
            for c in 0..ch {
                let gv = g[t * ch + c];
                db[c] = db[c] + gv;
                for j in 0..k {
                    if let Some(src) = (t + j).checked_sub(k - 1) {
                        dx[src * ch + c] = dx[src * ch + c] + gv * wd[c * k + j];
                        dw[c * k + j] = dw[c * k + j] + gv * xd[src * ch + c];
                    }
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(x.shape(), dx)?),
            Some(Tensor::new(w.shape(), dw)?),
            Some(Tensor::new(b.shape(), db)?),
        ])
    }
}

pub fn causal_conv<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, bias: Var) -> Result<Var> {
    let y = causal_conv1d(tape.value(x), tape.value(w), tape.value(bias))?;
    Ok(tape.custom(&[x, w, bias], y, Box::new(CausalConvOp)))
}

/// Causal convolution followed by the swish (SiLU) activation.
pub fn causal_conv_silu<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, bias: Var) -> Result<Var> {
    let y = causal_conv(tape, x, w, bias)?;
    Ok(tape.silu(y))
}
