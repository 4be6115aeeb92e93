//! Central finite-difference checks of every differentiable operation and of
//! the end-to-end model, in f64.

use std::time::Instant;

use crate::autodiff::{Tape, Unary, Var};
use crate::data::{Standardizer, DAYS_PER_WEEK};
use crate::embedding::{Embedding, EmbeddingDims};
use crate::error::Result;
use crate::mamba::{causal_conv, causal_conv_silu, selective_scan, MambaDims, MambaLayer, SelectiveSource};
use crate::model::{st_ssm_block, BlockWeights, Mode, ModelConfig, ModelState, Norm};
use crate::params::{Bound, Linear, ParamStore};
use crate::rng::{stream_id, RngStream};
use crate::tensor::Tensor;
use crate::train::{loss, LossKind};

pub const FD_STEP: f64 = 1e-5;
/// Per-operation tolerance on `|analytic − fd| / max(1, |fd|)`.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for composite layers and the full model.
pub const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_error: f64,
    pub entries: usize,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checks: Vec<GradCheck>,
    pub seconds: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GradCheck::passed)
    }

    pub fn worst(&self) -> Option<&GradCheck> {
        self.checks.iter().max_by(|a, b| a.max_error.total_cmp(&b.max_error))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("check\tentries\tmax_error\ttolerance\tstatus\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{}\t{}\t{:.3e}\t{:.0e}\t{}\n",
                c.name,
                c.entries,
                c.max_error,
                c.tolerance,
                if c.passed() { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences over every entry of every input.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor<f64>], tolerance: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };
    let mut work = inputs.to_vec();
    let mut max_error = 0.0f64;
    let mut entries = 0;
    for k in 0..work.len() {
        for j in 0..work[k].len() {
            let x0 = work[k].data()[j];
            work[k].data_mut()[j] = x0 + FD_STEP;
            let up = eval(&work)?;
            work[k].data_mut()[j] = x0 - FD_STEP;
            let down = eval(&work)?;
            work[k].data_mut()[j] = x0;
            let fd = (up - down) / (2.0 * FD_STEP);
            let err = (analytic[k].data()[j] - fd).abs() / fd.abs().max(1.0);
            max_error = max_error.max(err);
            entries += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_error,
        entries,
        tolerance,
    })
}

/// Like [`check_gradients`], perturbing every tensor of a parameter store.
pub fn check_store<F>(name: &str, store: &ParamStore<f64>, tolerance: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let tensors: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    check_gradients(name, &tensors, tolerance, |tape, vars| f(tape, &Bound::from_vars(vars.to_vec())))
}

fn normal(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// Values bounded away from zero by `gap`.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.normal();
        v.signum() * (gap + v.abs())
    })
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

/// `Σ w ⊙ y` with fixed random weights, so every output entry matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = RngStream::new(seed, 77);
    let w = tape.constant(normal(tape.shape(y), &mut rng));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Every primitive tape operation for one seed.
pub fn op_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = RngStream::new(seed, stream_id(&[0x6ad]));
    let tol = OP_TOLERANCE;
    let mut out = Vec::new();
    let s = seed;

    out.push(check_gradients("matmul", &[normal(&[3, 4], &mut rng), normal(&[4, 2], &mut rng)], tol, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, s)
    })?);
    out.push(check_gradients("add_broadcast", &[normal(&[3, 4], &mut rng), normal(&[4], &mut rng)], tol, |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, s)
    })?);
    out.push(check_gradients("sub_broadcast", &[normal(&[2, 1, 3], &mut rng), normal(&[4, 1], &mut rng)], tol, |t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, s)
    })?);
    out.push(check_gradients("mul_broadcast", &[normal(&[2, 3], &mut rng), normal(&[2, 1], &mut rng)], tol, |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, s)
    })?);
    out.push(check_gradients("scale", &[normal(&[5], &mut rng)], tol, |t, v| {
        let y = t.scale(v[0], -1.7);
        project(t, y, s)
    })?);

    let smooth: [(&str, Unary<f64>); 6] = [
        ("exp", Unary::Exp),
        ("softplus", Unary::Softplus),
        ("silu", Unary::Silu),
        ("sigmoid", Unary::Sigmoid),
        ("neg", Unary::Neg),
        ("square", Unary::Square),
    ];
    for (name, f) in smooth {
        out.push(check_gradients(name, &[normal(&[6], &mut rng)], tol, move |t, v| {
            let y = t.unary(v[0], f);
            project(t, y, s)
        })?);
    }
    let kinked: [(&str, Unary<f64>, f64); 4] = [
        ("relu", Unary::Relu, 0.0),
        ("abs", Unary::Abs, 0.0),
        ("huber", Unary::Huber(0.5), 0.5),
        ("clamp_min", Unary::ClampMin(-0.3), -0.3),
    ];
    for (name, f, kink) in kinked {
        let mut x = away_from_zero(&[8], 1e-2, &mut rng);
        x.data_mut().iter_mut().for_each(|v| *v += kink);
        out.push(check_gradients(name, &[x], tol, move |t, v| {
            let y = t.unary(v[0], f);
            project(t, y, s)
        })?);
    }
    out.push(check_gradients("sum", &[normal(&[2, 3], &mut rng)], tol, |t, v| {
        let y = t.sum(v[0]);
        let y2 = t.unary(y, Unary::Square);
        Ok(t.sum(y2))
    })?);
    out.push(check_gradients("mean", &[normal(&[2, 3], &mut rng)], tol, |t, v| {
        let y = t.mean(v[0]);
        let y2 = t.unary(y, Unary::Exp);
        Ok(t.sum(y2))
    })?);
    out.push(check_gradients("reshape", &[normal(&[2, 6], &mut rng)], tol, |t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        project(t, y, s)
    })?);
    out.push(check_gradients("permute", &[normal(&[2, 3, 4], &mut rng)], tol, |t, v| {
        let y = t.permute(v[0], &[2, 0, 1])?;
        project(t, y, s)
    })?);
    out.push(check_gradients("broadcast_to", &[normal(&[3, 1], &mut rng)], tol, |t, v| {
        let y = t.broadcast_to(v[0], &[2, 3, 4])?;
        project(t, y, s)
    })?);
    out.push(check_gradients(
        "concat",
        &[normal(&[2, 3, 1], &mut rng), normal(&[2, 3, 2], &mut rng)],
        tol,
        |t, v| {
            let y = t.concat(&[v[0], v[1]], 2)?;
            project(t, y, s)
        },
    )?);
    out.push(check_gradients("narrow", &[normal(&[4, 5], &mut rng)], tol, |t, v| {
        let y = t.narrow(v[0], 1, 1, 3)?;
        project(t, y, s)
    })?);
    out.push(check_gradients("gather_rows", &[normal(&[5, 3], &mut rng)], tol, |t, v| {
        let y = t.gather_rows(v[0], &[4, 0, 4, 2], "row")?;
        project(t, y, s)
    })?);
    out.push(check_gradients(
        "layer_norm",
        &[normal(&[3, 5], &mut rng), normal(&[5], &mut rng), normal(&[5], &mut rng)],
        tol,
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, y, s)
        },
    )?);
    out.push(check_gradients("dropout", &[normal(&[20], &mut rng)], tol, |t, v| {
        let mut mask_rng = RngStream::new(s, 3);
        let y = t.dropout(v[0], 0.3, Some(&mut mask_rng))?;
        project(t, y, s)
    })?);
    out.push(check_gradients(
        "causal_conv",
        &[normal(&[6, 3], &mut rng), normal(&[3, 4], &mut rng), normal(&[3], &mut rng)],
        tol,
        |t, v| {
            let y = causal_conv(t, v[0], v[1], v[2])?;
            project(t, y, s)
        },
    )?);
    out.push(check_gradients(
        "causal_conv_silu",
        &[normal(&[6, 3], &mut rng), normal(&[3, 2], &mut rng), normal(&[3], &mut rng)],
        tol,
        |t, v| {
            let y = causal_conv_silu(t, v[0], v[1], v[2])?;
            project(t, y, s)
        },
    )?);
    let (steps, ch, st) = (7, 3, 2);
    out.push(check_gradients(
        "selective_scan",
        &[
            normal(&[steps, ch], &mut rng),
            uniform(&[steps, ch], 0.05, 0.6, &mut rng),
            uniform(&[ch, st], -2.0, -0.2, &mut rng),
            normal(&[steps, st], &mut rng),
            normal(&[steps, st], &mut rng),
        ],
        tol,
        |t, v| {
            let y = selective_scan(t, v[0], v[1], v[2], v[3], v[4])?;
            project(t, y, s)
        },
    )?);
    let mut pred = normal(&[3, 2, 1], &mut rng);
    let truth = normal(&[3, 2, 1], &mut rng);
    // keep residuals clear of the MAE kink and the Huber knots
    for (p, y) in pred.data_mut().iter_mut().zip(truth.data()) {
        let r = *p - y;
        *p = y + r.signum() * (0.05 + r.abs());
        if ((*p - y).abs() - 1.0).abs() < 1e-2 {
            *p += 0.05 * r.signum();
        }
    }
    for kind in [LossKind::Mae, LossKind::Huber] {
        let truth = truth.clone();
        out.push(check_gradients(&format!("loss_{kind}"), &[pred.clone()], tol, move |t, v| {
            loss(t, v[0], &truth, kind, 1.0)
        })?);
    }
    Ok(out)
}

/// Composite layers and the end-to-end model on the tiny configuration.
pub fn model_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let mut rng = RngStream::new(seed, stream_id(&[0x30de1]));
    let tol = MODEL_TOLERANCE;

    let dims = MambaDims {
        d_h: 3,
        d_inner: 4,
        n_state: 2,
        d_conv: 2,
    };
    let x = normal(&[5, 3], &mut rng);
    for source in [SelectiveSource::Input, SelectiveSource::OutputFeedback] {
        let mut store = ParamStore::new();
        let layer = MambaLayer::new(&mut store, "m", dims, &mut rng);
        let xv = x.clone();
        out.push(check_store(&format!("mamba_layer[{source}]"), &store, tol, |t, p| {
            let xi = t.constant(xv.clone());
            let y = layer.forward(t, p, xi, source)?;
            project(t, y, seed)
        })?);
        out.push(check_gradients(&format!("mamba_layer_input[{source}]"), &[x.clone()], tol, |t, v| {
            let p = store.bind_frozen(t);
            let y = layer.forward(t, &p, v[0], source)?;
            project(t, y, seed)
        })?);
    }

    let edims = EmbeddingDims {
        h: 3,
        n: 2,
        d: 2,
        d_f: 2,
        d_a: 2,
        steps_per_day: 12,
    };
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "e", edims, &mut rng)?;
    let w = normal(&[3, 2, 2], &mut rng);
    let dow: Vec<u8> = (0..3).map(|_| rng.below(DAYS_PER_WEEK) as u8).collect();
    let tod: Vec<u16> = (0..3).map(|_| rng.below(12) as u16).collect();
    out.push(check_store("embedding", &store, tol, |t, p| {
        let x = t.constant(w.clone());
        let y = emb.forward(t, p, x, &dow, &tod)?;
        project(t, y, seed)
    })?);

    let mut store = ParamStore::new();
    let block = BlockWeights {
        norm: Norm::new(&mut store, "n", 4),
        mlp_in: Linear::new(&mut store, "a", 4, 6, &mut rng),
        mlp_out: Linear::new(&mut store, "b", 6, 4, &mut rng),
    };
    let y = normal(&[5, 4], &mut rng);
    let xb = normal(&[5, 4], &mut rng);
    out.push(check_gradients("st_ssm_block", &[y, xb], tol, |t, v| {
        let p = store.bind_frozen(t);
        let mut drop = RngStream::new(seed, 11);
        let o = st_ssm_block(t, &p, &block, v[0], v[1], 0.2, 1e-5, Some(&mut drop))?;
        project(t, o, seed)
    })?);

    let cfg = ModelConfig::tiny();
    let model = ModelState::<f64>::new(cfg.clone(), seed)?;
    let stats = Standardizer {
        mean: vec![200.0],
        std: vec![50.0],
    };
    let history = normal(&[cfg.h, cfg.n_sensors, cfg.n_features], &mut rng);
    let target: Tensor<f64> = Tensor::from_fn(&[cfg.z, cfg.n_sensors, cfg.n_features], |_| 200.0 + 50.0 * rng.normal());
    let dow: Vec<u8> = (0..cfg.h).map(|_| rng.below(DAYS_PER_WEEK) as u8).collect();
    let tod: Vec<u16> = (0..cfg.h).map(|_| rng.below(cfg.steps_per_day) as u16).collect();
    out.push(check_store("model_end_to_end_mae", &model.store, tol, |t, p| {
        let x = t.constant(history.clone());
        let y = model.forward(t, p, x, &dow, &tod, Mode::Eval)?;
        let scale = t.constant(Tensor::from_f64(&[1], &stats.std)?);
        let shift = t.constant(Tensor::from_f64(&[1], &stats.mean)?);
        let y = t.mul(y, scale)?;
        let y = t.add(y, shift)?;
        loss(t, y, &target, LossKind::Mae, 1.0)
    })?);
    Ok(out)
}

/// Operation checks over `op_seeds` seeds plus the composite checks.
pub fn run_suite(op_seeds: u64, model_seed: u64) -> Result<GradReport> {
    let start = Instant::now();
    let mut checks: Vec<GradCheck> = Vec::new();
    for seed in 0..op_seeds {
        for c in op_checks(seed)? {
            match checks.iter_mut().find(|x| x.name == c.name) {
                Some(acc) => {
                    acc.max_error = acc.max_error.max(c.max_error);
                    acc.entries += c.entries;
                }
                None => checks.push(c),
            }
        }
    }
    checks.extend(model_checks(model_seed)?);
    Ok(GradReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}
