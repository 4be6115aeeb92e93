//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use stmamba::bench::{self, count_flops, BenchConfig, DEFAULT_SWEEP};
use stmamba::cli::RunConfig;
use stmamba::data::{make_windows, split_dataset, steps_per_day, synthesize_traffic, SplitRatios, Standardizer};
use stmamba::gradcheck::{self, MODEL_TOLERANCE};
use stmamba::mamba::{selective_scan_chunked, selective_scan_sequential, zoh_exact, ScanInputs};
use stmamba::model::{ModelConfig, ModelState};
use stmamba::rng::RngStream;
use stmamba::tensor::Tensor;
use stmamba::train::{compute_metrics, evaluate, historical_index, train_loop, HorizonMetrics, MetricReport, TrainConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: stmamba::error::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn gradient_suite() -> Check {
    let report = lib(gradcheck::run_suite(100, 0))?;
    let worst = report.worst().ok_or("no checks ran")?;
    ensure(report.passed(), || format!("`{}` relative error {:.3e}", worst.name, worst.max_error))?;
    let e2e = report
        .checks
        .iter()
        .find(|c| c.name.contains("end_to_end"))
        .ok_or("end-to-end check missing")?;
    ensure(e2e.tolerance <= MODEL_TOLERANCE, || "end-to-end tolerance too loose".into())?;
    Ok(format!(
        "{} checks, worst {:.2e} ({}), end-to-end {:.2e}",
        report.checks.len(),
        worst.max_error,
        worst.name,
        e2e.max_error
    ))
}

struct ScanCase {
    u: Tensor<f64>,
    delta: Tensor<f64>,
    a: Tensor<f64>,
    b: Tensor<f64>,
    c: Tensor<f64>,
}

impl ScanCase {
    fn random(steps: usize, channels: usize, states: usize, rng: &mut RngStream) -> Self {
        let mut m = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi));
        ScanCase {
            u: m(&[steps, channels], -1.0, 1.0),
            delta: m(&[steps, channels], 0.001, 0.3),
            a: m(&[channels, states], -3.0, -0.05),
            b: m(&[steps, states], -1.0, 1.0),
            c: m(&[steps, states], -1.0, 1.0),
        }
    }

    fn inputs(&self) -> ScanInputs<'_, f64> {
        ScanInputs {
            u: &self.u,
            delta: &self.delta,
            a: &self.a,
            b: &self.b,
            c: &self.c,
        }
    }

    /// y_k[i] = Σ_s C_k[s] Σ_{j≤k} exp(a[i,s]·(P_k − P_j)) Δ_j B_j[s] u_j with P the
    /// running sum of Δ[·, i].
    fn closed_form(&self) -> Vec<f64> {
        let (t, d) = (self.u.shape()[0], self.u.shape()[1]);
        let s = self.a.shape()[1];
        let mut y = vec![0.0; t * d];
        for i in 0..d {
            let mut prefix = vec![0.0; t];
            let mut run = 0.0;
            for k in 0..t {
                run += self.delta.at(&[k, i]);
                prefix[k] = run;
            }
            for st in 0..s {
                let a = self.a.at(&[i, st]);
                let drive: Vec<f64> = (0..t)
                    .map(|j| self.delta.at(&[j, i]) * self.b.at(&[j, st]) * self.u.at(&[j, i]))
                    .collect();
                for k in 0..t {
                    let mut acc = 0.0;
                    for j in (0..=k).rev() {
                        let w = (a * (prefix[k] - prefix[j])).exp();
                        if w < 1e-30 {
                            break;
                        }
                        acc += w * drive[j];
                    }
                    y[k * d + i] += self.c.at(&[k, st]) * acc;
                }
            }
        }
        y
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scan_oracle() -> Check {
    let mut rng = RngStream::new(2024, 0);
    let mut worst: f64 = 0.0;
    let mut longest = 0;
    for case in 0..100 {
        let (steps, channels, states) = if case < 3 {
            (4096, 2, 2)
        } else {
            (1 + rng.below(600), 1 + rng.below(4), 1 + rng.below(4))
        };
        longest = longest.max(steps);
        let x = ScanCase::random(steps, channels, states, &mut rng);
        let seq = lib(selective_scan_sequential(x.inputs()))?;
        let oracle = x.closed_form();
        let err = max_abs(seq.data(), &oracle);
        ensure(err <= 1e-10, || format!("case {case}: sequential vs closed form {err:.3e}"))?;
        worst = worst.max(err);
        for chunk in [1, 2, 8, 64] {
            let ch = lib(selective_scan_chunked(x.inputs(), chunk))?;
            let err = max_abs(seq.data(), ch.data());
            ensure(err <= 1e-10, || format!("case {case}, chunk {chunk}: {err:.3e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("100 instances up to T1={longest}, max-abs {worst:.2e}"))
}

fn rk4_step(a: f64, b: f64, u: f64, h0: f64, delta: f64, substeps: usize) -> f64 {
    let f = |h: f64| a * h + b * u;
    let dt = delta / substeps as f64;
    let mut h = h0;
    for _ in 0..substeps {
        let k1 = f(h);
        let k2 = f(h + 0.5 * dt * k1);
        let k3 = f(h + 0.5 * dt * k2);
        let k4 = f(h + dt * k3);
        h += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    h
}

fn discretization_oracle() -> Check {
    let mut ratios = Vec::new();
    for (a, b) in [(-1.5, 0.7), (-0.2, -2.0), (-4.0, 1.0)] {
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&dt| {
                let (_, exact) = zoh_exact(a, b, dt);
                ((dt * b - exact) / exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            ensure((8.0..=12.0).contains(&r), || format!("a={a}: error ratio {r:.3}"))?;
            ratios.push(r);
        }
    }
    let mut rng = RngStream::new(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a = rng.uniform_range(-3.0, -0.01);
        let b = rng.uniform_range(-2.0, 2.0);
        let delta = rng.uniform_range(0.01, 1.0);
        let (ad, bd) = zoh_exact(a, b, delta);
        let mut h_zoh = rng.uniform_range(-1.0, 1.0);
        let mut h_rk = h_zoh;
        for _ in 0..10 {
            let u = rng.uniform_range(-2.0, 2.0);
            h_zoh = ad * h_zoh + bd * u;
            h_rk = rk4_step(a, b, u, h_rk, delta, 200);
            worst = worst.max((h_zoh - h_rk).abs());
        }
    }
    ensure(worst < 1e-8, || format!("ZOH vs RK4 {worst:.3e}"))?;
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(format!("error ratios in [{lo:.3}, {hi:.3}], ZOH vs RK4 {worst:.2e}"))
}

fn constants() -> Check {
    let m = ModelConfig::default();
    ensure(m.d_h() == 3 * 24 + 80 && m.d_h() == 152, || format!("d_h = {}", m.d_h()))?;
    ensure((m.d_f, m.d_a) == (24, 80), || format!("d_f, d_a = {}, {}", m.d_f, m.d_a))?;
    ensure(lib(steps_per_day(5))? == 288 && m.steps_per_day == 288, || "N_d != 288".into())?;
    ensure(m.h == 12 && m.z == 12, || format!("H, Z = {}, {}", m.h, m.z))?;
    let t = TrainConfig::default();
    ensure(t.lr == 1e-3 && t.batch == 16 && t.patience == 30, || format!("{t:?}"))?;
    let cli = RunConfig::defaults();
    lib(cli.validate())?;
    for (k, v) in [("d_f", "24"), ("d_a", "80"), ("h", "12"), ("z", "12"), ("batch", "16"), ("patience", "30")] {
        ensure(cli.get(k) == v, || format!("command-line default {k} = {}", cli.get(k)))?;
    }
    ensure(cli.float("lr") == 1e-3, || "command-line lr".into())?;
    Ok("d_h=152, N_d=288, H=Z=12, lr=1e-3, batch=16, patience=30".into())
}

fn population_std(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    (values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn learning_capacity() -> Check {
    let data = lib(synthesize_traffic(8, 14, 7))?;
    let s = lib(split_dataset(&data, SplitRatios::SIX_TWO_TWO, 24))?;
    let stats = lib(Standardizer::fit(&s.train))?;
    let train_w = lib(make_windows(&s.train, 12, 12))?;
    let val_w = lib(make_windows(&s.val, 12, 12))?;
    let test_w = lib(make_windows(&s.test, 12, 12))?;
    let cfg = ModelConfig {
        n_sensors: 8,
        n_features: 1,
        d_f: 4,
        d_a: 4,
        n_state: 4,
        dropout_p: 0.0,
        ..ModelConfig::default()
    };
    let mut model = lib(ModelState::<f32>::new(cfg, 7))?;
    let tc = TrainConfig {
        max_steps: 2000,
        seed: 7,
        ..TrainConfig::default()
    };
    let outcome = lib(train_loop(&mut model, &train_w, &val_w, &stats, &tc))?;
    ensure(outcome.steps <= 2000, || format!("{} steps", outcome.steps))?;
    let std = population_std(s.train.values.data());
    let train_mae = lib(evaluate(&model, &train_w, &stats, 1.0))?.mae;
    let test_mae = lib(evaluate(&model, &test_w, &stats, 1.0))?.mae;
    let hi = lib(historical_index(&test_w, 1.0))?.mae;
    let limit = 0.05 * std;
    ensure(train_mae < limit, || format!("train MAE {train_mae:.3} >= {limit:.3}"))?;
    let gain = 1.0 - test_mae / hi;
    ensure(gain >= 0.3, || format!("test MAE {test_mae:.3} vs baseline {hi:.3} ({:.0}%)", 100.0 * gain))?;
    Ok(format!(
        "{} steps, train MAE {train_mae:.3} < {limit:.3}, test MAE {test_mae:.3} vs baseline {hi:.3} ({:.0}% better)",
        outcome.steps,
        100.0 * gain
    ))
}

fn closed_form_flops(cfg: &BenchConfig, t: u64) -> (u64, u64) {
    let (b, d, di, n, k) = (cfg.batch as u64, cfg.d_h as u64, (cfg.expand * cfg.d_h) as u64, cfg.n_state as u64, cfg.d_conv as u64);
    let mamba = b * t * (2 * d * di + di * k + 2 * di * (di + 2 * n) + di * n + 2 * di * d);
    let attention = b * t * 3 * d * d + 2 * b * t * t * d;
    (mamba, attention)
}

fn complexity() -> Check {
    let cfg = BenchConfig::default();
    for &t in &DEFAULT_SWEEP {
        let table = count_flops(&cfg, t);
        let (m, a) = closed_form_flops(&cfg, t as u64);
        ensure(table.mamba_total() == m && table.attention_total() == a, || format!("FLOP mismatch at T1={t}"))?;
    }
    for w in DEFAULT_SWEEP.windows(2) {
        let (lo, hi) = (count_flops(&cfg, w[0]), count_flops(&cfg, w[1]));
        ensure(hi.mamba_total() == 2 * lo.mamba_total(), || "mamba FLOPs not linear".into())?;
        ensure(
            hi.get("scores_values") == lo.get("scores_values").map(|v| 4 * v),
            || "attention score FLOPs not quadratic".into(),
        )?;
    }
    let scan = lib(bench::bench_scan_scaling(&cfg, &DEFAULT_SWEEP))?;
    let attn = lib(bench::bench_attention_scaling(&cfg, &DEFAULT_SWEEP))?;
    let sr = scan.ratios();
    let ar = attn.ratios();
    let fmt = |r: &[f64]| r.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    ensure(sr.iter().all(|&r| r <= 2.5), || format!("scan ratios {}", fmt(&sr)))?;
    let top = *ar.last().ok_or("empty sweep")?;
    ensure(top >= 3.4, || format!("attention top ratio {top:.2}"))?;
    Ok(format!("scan ratios {}, attention ratios {}, FLOP closed forms exact", fmt(&sr), fmt(&ar)))
}

fn metrics() -> Check {
    let t = |v: &[f32]| Tensor::new(&[1, v.len(), 1], v.to_vec()).unwrap();
    let r = lib(compute_metrics(&t(&[110.0, 180.0]), &t(&[100.0, 200.0]), 1.0))?;
    ensure(r.mae == 15.0, || format!("MAE {}", r.mae))?;
    ensure(r.rmse == 250f64.sqrt(), || format!("RMSE {}", r.rmse))?;
    ensure(r.mape.is_some_and(|m| (m - 10.0).abs() < 1e-12), || format!("MAPE {:?}", r.mape))?;
    let mut rng = RngStream::new(99, 0);
    for i in 0..1000 {
        let z = 1 + rng.below(4);
        let n = 1 + rng.below(6);
        let scale = 10f64.powf(rng.uniform_range(-2.0, 3.0));
        let pred = Tensor::from_fn(&[z, n, 1], |_| (rng.normal() * scale) as f32);
        let truth = Tensor::from_fn(&[z, n, 1], |_| (rng.normal() * scale) as f32);
        let r: MetricReport = lib(compute_metrics(&pred, &truth, 1.0))?;
        let ok = r.rmse >= r.mae * (1.0 - 1e-12)
            && r.horizons.iter().all(|h: &HorizonMetrics| h.rmse >= h.mae * (1.0 - 1e-12));
        ensure(ok, || format!("report {i}: rmse {} < mae {}", r.rmse, r.mae))?;
    }
    Ok("hand example exact, rmse >= mae over 1000 reports".into())
}

fn binary(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stmamba"))
        .args(args)
        .env_remove("STMAMBA_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn bytes(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn determinism() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = |n: &str| root.path().join(n).to_string_lossy().into_owned();
    let synth = |d: &str| binary(&["synth", "--data_dir", d, "--synth_sensors", "4", "--synth_days", "3", "--seed", "3"]);
    synth(&dir("d1"))?;
    synth(&dir("d2"))?;
    for f in ["meta.json", "data.bin"] {
        let (a, b) = (bytes(&root.path().join("d1").join(f))?, bytes(&root.path().join("d2").join(f))?);
        ensure(a == b, || format!("synth {f} differs"))?;
    }
    let train = |out: &str| {
        binary(&[
            "train", "--data_dir", &dir("d1"), "--out_dir", out, "--h", "6", "--z", "3", "--d_f", "2", "--d_a", "2",
            "--n_state", "2", "--d_conv", "2", "--max_steps", "12", "--seed", "5",
        ])
    };
    train(&dir("o1"))?;
    train(&dir("o2"))?;
    let (a, b) = (bytes(&root.path().join("o1/model.ckpt"))?, bytes(&root.path().join("o2/model.ckpt"))?);
    ensure(a == b, || "checkpoints differ".into())?;
    Ok(format!("synth byte-identical, checkpoints identical ({} bytes)", a.len()))
}

fn layer_ablation() -> Check {
    let data = lib(synthesize_traffic(3, 2, 1))?;
    let s = lib(split_dataset(&data, SplitRatios::SIX_TWO_TWO, 24))?;
    let stats = lib(Standardizer::fit(&s.train))?;
    let train_w = lib(make_windows(&s.train, 12, 12))?;
    let val_w = lib(make_windows(&s.val, 12, 12))?;
    let mut counts = Vec::new();
    for layers in 1..=3 {
        let cfg = ModelConfig {
            n_sensors: 3,
            n_features: 1,
            d_f: 4,
            d_a: 4,
            n_state: 4,
            n_layers: layers,
            ..ModelConfig::default()
        };
        let mut model = lib(ModelState::<f32>::new(cfg.clone(), 1))?;
        let actual = model.store.count();
        let closed = ModelState::<f32>::param_count(&cfg);
        ensure(actual == closed, || format!("L={layers}: {actual} parameters, closed form {closed}"))?;
        let tc = TrainConfig {
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let out = lib(train_loop(&mut model, &train_w[..64], &val_w, &stats, &tc))?;
        ensure(out.history.len() == 1 && out.best_val_mae.is_finite(), || format!("L={layers}: bad epoch"))?;
        counts.push(actual);
    }
    ensure(counts[2] - counts[1] == counts[1] - counts[0], || "per-layer count not constant".into())?;
    Ok(format!("parameter counts {counts:?}"))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Check); 9] = [
        ("gradient suite", 60.0, gradient_suite),
        ("scan oracle", 120.0, scan_oracle),
        ("discretization oracle", 10.0, discretization_oracle),
        ("configuration constants", 1.0, constants),
        ("learning capacity", 300.0, learning_capacity),
        ("complexity demonstration", 180.0, complexity),
        ("metric correctness", 1.0, metrics),
        ("determinism", 300.0, determinism),
        ("layer-count ablation", 300.0, layer_ablation),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let result = result.and_then(|msg| {
            if secs <= *budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {secs:.1}s, budget {budget:.0}s"))
            }
        });
        match result {
            Ok(msg) => println!("PASS {} {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
