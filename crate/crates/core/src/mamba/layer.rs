//! The selective state-space layer.
//!
//! `x (T₁×d_h) → in_proj → causal conv + swish → u (T₁×d_inner)`, then
//! `Δ = softplus(base + s_Δ(u))`, `B = s_B(u)`, `C = s_C(u)`, the selective
//! scan with `A = −exp(a_log)`, and `out_proj` back to `d_h`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Unary, Var};
use crate::error::{Error, Result};
use crate::params::{xavier_uniform, Bound, Linear, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

use super::conv::causal_conv_silu;
use super::discretize::MIN_LOG_DECAY;
use super::scan::selective_scan;

/// Where the step-`k` selective parameters are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SelectiveSource {
    /// From the current input `u_k`.
    #[default]
    Input,
    /// From `u_1` at the first step and the previous scan output `y_{k−1}`
    /// afterwards.
    OutputFeedback,
}

impl fmt::Display for SelectiveSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectiveSource::Input => "input",
            SelectiveSource::OutputFeedback => "output_feedback",
        })
    }
}

impl FromStr for SelectiveSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "input" => Ok(SelectiveSource::Input),
            "output_feedback" => Ok(SelectiveSource::OutputFeedback),
            other => Err(format!("expected `input` or `output_feedback`, got `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MambaDims {
    pub d_h: usize,
    pub d_inner: usize,
    pub n_state: usize,
    pub d_conv: usize,
}

#[derive(Clone, Debug)]
pub struct MambaLayer {
    pub dims: MambaDims,
    pub in_proj: Linear,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub delta_proj: Linear,
    pub delta_base: ParamId,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub a_log: ParamId,
    pub out_proj: Linear,
}

/// Selective parameters for a whole sequence.
#[derive(Clone, Copy, Debug)]
pub struct SelectiveParams {
    pub delta: Var,
    pub b: Var,
    pub c: Var,
}

impl MambaLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dims: MambaDims, rng: &mut RngStream) -> Self {
        let MambaDims {
            d_h,
            d_inner,
            n_state,
            d_conv,
        } = dims;
        let in_proj = Linear::new(store, &format!("{prefix}.in_proj"), d_h, d_inner, rng);
        let conv_weight = store.add(
            format!("{prefix}.conv.weight"),
            xavier_uniform(&[d_inner, d_conv], d_conv, d_conv, rng),
        );
        let conv_bias = store.add(format!("{prefix}.conv.bias"), Tensor::zeros(&[d_inner]));
        let delta_proj = Linear::new(store, &format!("{prefix}.delta_proj"), d_inner, d_inner, rng);
        // base = softplus⁻¹(dt) with dt log-uniform in [1e-3, 1e-1]
        let base = Tensor::from_fn(&[d_inner], |_| {
            let dt = (rng.uniform_range(1e-3f64.ln(), 1e-1f64.ln())).exp();
            T::of(dt.exp_m1().ln())
        });
        let delta_base = store.add(format!("{prefix}.delta_base"), base);
        let b_proj = Linear::new(store, &format!("{prefix}.b_proj"), d_inner, n_state, rng);
        let c_proj = Linear::new(store, &format!("{prefix}.c_proj"), d_inner, n_state, rng);
        // A[i,s] = −(s+1)
        let a_log = store.add(
            format!("{prefix}.a_log"),
            Tensor::from_fn(&[d_inner, n_state], |j| T::of(((j % n_state) + 1) as f64).ln()),
        );
        let out_proj = Linear::new(store, &format!("{prefix}.out_proj"), d_inner, d_h, rng);
        MambaLayer {
            dims,
            in_proj,
            conv_weight,
            conv_bias,
            delta_proj,
            delta_base,
            b_proj,
            c_proj,
            a_log,
            out_proj,
        }
    }

    pub fn param_count(dims: MambaDims) -> usize {
        let MambaDims {
            d_h,
            d_inner,
            n_state,
            d_conv,
        } = dims;
        Linear::param_count(d_h, d_inner)
            + d_inner * d_conv
            + d_inner
            + Linear::param_count(d_inner, d_inner)
            + d_inner
            + 2 * Linear::param_count(d_inner, n_state)
            + d_inner * n_state
            + Linear::param_count(d_inner, d_h)
    }

    /// Continuous-time transition `A = −exp(a_log)` (every entry negative).
    pub fn transition<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound) -> Var {
        let e = tape.exp(p.var(self.a_log));
        tape.unary(e, Unary::Neg)
    }

    /// In-projection followed by the causal convolution and swish.
    pub fn conv_input<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let u0 = self.in_proj.forward(tape, p, x)?;
        causal_conv_silu(tape, u0, p.var(self.conv_weight), p.var(self.conv_bias))
    }

    /// `Δ = softplus(base + s_Δ(src))`, `B = s_B(src)`, `C = s_C(src)` for each
    /// row of `src`.
    pub fn selective_params<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, src: Var) -> Result<SelectiveParams> {
        let proj = self.delta_proj.forward(tape, p, src)?;
        let pre = tape.add(proj, p.var(self.delta_base))?;
        let delta = tape.softplus(pre);
        let b = self.b_proj.forward(tape, p, src)?;
        let c = self.c_proj.forward(tape, p, src)?;
        for v in [delta, b, c] {
            if !tape.value(v).is_finite() {
                return Err(Error::Numeric("non-finite selective projection output".into()));
            }
        }
        Ok(SelectiveParams { delta, b, c })
    }

    /// Maps `x: T₁×d_h` to `T₁×d_h`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        source: SelectiveSource,
    ) -> Result<Var> {
        let u = self.conv_input(tape, p, x)?;
        let a = self.transition(tape, p);
        let y = match source {
            SelectiveSource::Input => {
                let sp = self.selective_params(tape, p, u)?;
                selective_scan(tape, u, sp.delta, a, sp.b, sp.c)?
            }
            SelectiveSource::OutputFeedback => self.feedback_scan(tape, p, u, a)?,
        };
        self.out_proj.forward(tape, p, y)
    }

    /// Step-by-step recurrence where step `k`'s selective parameters come
    /// from the previous output row. Built from primitive tape operations.
    fn feedback_scan<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, u: Var, a: Var) -> Result<Var> {
        let MambaDims {
            d_inner, n_state, ..
        } = self.dims;
        let steps = tape.shape(u)[0];
        let mut h: Option<Var> = None;
        let mut ys = Vec::with_capacity(steps);
        let mut src = tape.narrow(u, 0, 0, 1)?;
        for k in 0..steps {
            let u_k = tape.narrow(u, 0, k, 1)?;
            let sp = self.selective_params(tape, p, src)?;
            let dcol = tape.reshape(sp.delta, &[d_inner, 1])?;
            let log_decay = tape.mul(dcol, a)?;
            let log_decay = tape.unary(log_decay, Unary::ClampMin(T::of(MIN_LOG_DECAY)));
            let a_bar = tape.exp(log_decay);
            let ucol = tape.reshape(u_k, &[d_inner, 1])?;
            let du = tape.mul(dcol, ucol)?;
            let input = tape.mul(du, sp.b)?;
            let next = match h {
                Some(prev) => {
                    let kept = tape.mul(a_bar, prev)?;
                    tape.add(kept, input)?
                }
                None => input,
            };
            if !tape.value(next).is_finite() {
                return Err(Error::Numeric(format!("non-finite scan state at step {}", k + 1)));
            }
            let ccol = tape.reshape(sp.c, &[n_state, 1])?;
            let y_col = tape.matmul(next, ccol)?;
            let y_k = tape.reshape(y_col, &[1, d_inner])?;
            ys.push(y_k);
            src = y_k;
            h = Some(next);
        }
        tape.concat(&ys, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> MambaDims {
        MambaDims {
            d_h: 4,
            d_inner: 6,
            n_state: 3,
            d_conv: 3,
        }
    }

    fn layer() -> (ParamStore<f64>, MambaLayer) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(3, 0);
        let l = MambaLayer::new(&mut store, "m", dims(), &mut rng);
        (store, l)
    }

    #[test]
    fn param_count_matches_store() {
        let (store, _) = layer();
        assert_eq!(store.count(), MambaLayer::param_count(dims()));
    }

    #[test]
    fn transition_is_s4d_real_and_negative() {
        let (store, l) = layer();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let a = l.transition(&mut tape, &p);
        let av = tape.value(a);
        for i in 0..6 {
            for s in 0..3 {
                assert!((av.at(&[i, s]) + (s as f64 + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_projection_gives_ln2_delta() {
        let (mut store, l) = layer();
        l.delta_proj.zero(&mut store);
        store.get_mut(l.delta_base).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let u = tape.constant(Tensor::zeros(&[5, 6]));
        let sp = l.selective_params(&mut tape, &p, u).unwrap();
        assert!(tape
            .value(sp.delta)
            .data()
            .iter()
            .all(|&d| (d - std::f64::consts::LN_2).abs() < 1e-15));
    }

    #[test]
    fn closed_b_gate_gives_zero_scan() {
        let (mut store, l) = layer();
        l.b_proj.zero(&mut store);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let mut r = RngStream::new(4, 0);
        let x = tape.constant(Tensor::from_fn(&[7, 4], |_| r.uniform_range(-1.0, 1.0)));
        let u = l.conv_input(&mut tape, &p, x).unwrap();
        let a = l.transition(&mut tape, &p);
        let sp = l.selective_params(&mut tape, &p, u).unwrap();
        let y = selective_scan(&mut tape, u, sp.delta, a, sp.b, sp.c).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_is_positive_over_random_inputs() {
        let (store, l) = layer();
        let mut r = RngStream::new(5, 0);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        // 10⁶ delta entries: rows × d_inner
        let rows = 1_000_000 / 6 + 1;
        let u = tape.constant(Tensor::from_fn(&[rows, 6], |_| r.normal() * 20.0));
        let sp = l.selective_params(&mut tape, &p, u).unwrap();
        assert!(tape.value(sp.delta).data().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn feedback_first_step_matches_input_mode() {
        let (store, l) = layer();
        let mut r = RngStream::new(6, 0);
        let xs = Tensor::from_fn(&[5, 4], |_| r.uniform_range(-1.0, 1.0));
        let mut outs = Vec::new();
        for source in [SelectiveSource::Input, SelectiveSource::OutputFeedback] {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let x = tape.constant(xs.clone());
            let y = l.forward(&mut tape, &p, x, source).unwrap();
            outs.push(tape.value(y).clone());
        }
        let first = |t: &Tensor<f64>| t.data()[..4].to_vec();
        for (a, b) in first(&outs[0]).iter().zip(first(&outs[1])) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(outs[0].max_abs_diff(&outs[1]) > 1e-9);
    }

    #[test]
    fn source_parses() {
        assert_eq!("input".parse::<SelectiveSource>().unwrap(), SelectiveSource::Input);
        assert_eq!(
            "output_feedback".parse::<SelectiveSource>().unwrap(),
            SelectiveSource::OutputFeedback
        );
        assert!("other".parse::<SelectiveSource>().is_err());
        assert_eq!(SelectiveSource::OutputFeedback.to_string(), "output_feedback");
    }
}
