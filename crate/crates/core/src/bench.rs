//! Scaling benchmarks of the selective scan against a quadratic attention
//! reference, and closed-form FLOP accounting for both.

use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::mamba::{selective_scan_sequential, MambaDims, MambaLayer, ScanInputs, SelectiveSource};
use crate::params::{xavier_uniform, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{matmul, Tensor};

/// Shapes shared by every kernel in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub batch: usize,
    pub d_h: usize,
    pub expand: usize,
    pub n_state: usize,
    pub d_conv: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch: 4,
            d_h: 32,
            expand: 2,
            n_state: 16,
            d_conv: 4,
            reps: 5,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_h
    }
}

pub const DEFAULT_SWEEP: [usize; 4] = [512, 1024, 2048, 4096];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub kernel: String,
    pub t1: Vec<usize>,
    /// Median wall time per sweep point, seconds.
    pub median_seconds: Vec<f64>,
    pub reps: usize,
    /// Least-squares slope of `ln(time)` against `ln(T₁)`.
    pub slope: f64,
    pub flops: Vec<u64>,
    pub advisory: Option<String>,
}

impl BenchResult {
    /// `time(T₁[i+1]) / time(T₁[i])` for consecutive points.
    pub fn ratios(&self) -> Vec<f64> {
        self.median_seconds.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// Plot-ready `(T₁, seconds)` table.
    pub fn plot_table(&self) -> String {
        let mut out = String::from("t1\tseconds\n");
        for (t, s) in self.t1.iter().zip(&self.median_seconds) {
            out.push_str(&format!("{t}\t{s:.6e}\n"));
        }
        out
    }
}

fn validate_sweep(sweep: &[usize]) -> Result<()> {
    if sweep.len() < 4 {
        return Err(Error::Contract(format!("sweep needs at least 4 points, got {}", sweep.len())));
    }
    if sweep.windows(2).any(|w| w[1] <= w[0]) || sweep[0] == 0 {
        return Err(Error::Contract(format!("sweep must be positive and strictly ascending: {sweep:?}")));
    }
    if sweep[sweep.len() - 1] < 8 * sweep[0] {
        return Err(Error::Contract(format!("sweep must span at least 8x: {sweep:?}")));
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[usize], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| (*v as f64).ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

/// Times `run(t1)` once as warm-up and then `reps` times per sweep point.
fn time_sweep(
    kernel: &str,
    cfg: &BenchConfig,
    sweep: &[usize],
    flops: impl Fn(usize) -> u64,
    mut run: impl FnMut(usize) -> Result<()>,
) -> Result<BenchResult> {
    validate_sweep(sweep)?;
    if cfg.reps < 5 {
        return Err(Error::Contract(format!("at least 5 repetitions required, got {}", cfg.reps)));
    }
    let mut medians = Vec::with_capacity(sweep.len());
    for &t1 in sweep {
        run(t1)?;
        let mut samples = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let start = Instant::now();
            run(t1)?;
            samples.push(start.elapsed().as_secs_f64());
        }
        medians.push(median(samples));
    }
    let advisory = (medians[0] < 1e-3).then(|| {
        format!(
            "{kernel}: median {:.2e}s at T1={} is below 1 ms; increase the sweep or batch",
            medians[0], sweep[0]
        )
    });
    Ok(BenchResult {
        kernel: kernel.to_string(),
        t1: sweep.to_vec(),
        slope: log_log_slope(sweep, &medians),
        median_seconds: medians,
        reps: cfg.reps,
        flops: sweep.iter().map(|&t| flops(t)).collect(),
        advisory,
    })
}

struct ScanCase {
    u: Tensor<f32>,
    delta: Tensor<f32>,
    a: Tensor<f32>,
    b: Tensor<f32>,
    c: Tensor<f32>,
}

impl ScanCase {
    fn new(t1: usize, d_inner: usize, n_state: usize, rng: &mut RngStream) -> Self {
        let mut draw = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi) as f32);
        ScanCase {
            u: draw(&[t1, d_inner], -1.0, 1.0),
            delta: draw(&[t1, d_inner], 1e-3, 0.1),
            a: Tensor::from_fn(&[d_inner, n_state], |j| -((j % n_state) as f32 + 1.0)),
            b: draw(&[t1, n_state], -1.0, 1.0),
            c: draw(&[t1, n_state], -1.0, 1.0),
        }
    }

    fn inputs(&self) -> ScanInputs<'_, f32> {
        ScanInputs {
            u: &self.u,
            delta: &self.delta,
            a: &self.a,
            b: &self.b,
            c: &self.c,
        }
    }
}

/// Sequential selective scan over `batch` independent sequences.
pub fn bench_scan_scaling(cfg: &BenchConfig, sweep: &[usize]) -> Result<BenchResult> {
    validate_sweep(sweep)?;
    let mut rng = RngStream::new(cfg.seed, 1);
    let max = *sweep.last().expect("validated");
    let full = ScanCase::new(max, cfg.d_inner(), cfg.n_state, &mut rng);
    let cases: Vec<(usize, ScanCase)> = sweep
        .iter()
        .map(|&t1| {
            let take = |t: &Tensor<f32>| {
                let w = t.shape()[1];
                Tensor::new(&[t1, w], t.data()[..t1 * w].to_vec()).expect("prefix")
            };
            let case = ScanCase {
                u: take(&full.u),
                delta: take(&full.delta),
                a: full.a.clone(),
                b: take(&full.b),
                c: take(&full.c),
            };
            (t1, case)
        })
        .collect();
    let table = |t1: usize| count_flops(cfg, t1);
    time_sweep("selective_scan", cfg, sweep, |t| table(t).get("scan").unwrap_or(0), |t1| {
        let case = &cases.iter().find(|(t, _)| *t == t1).expect("prepared").1;
        for _ in 0..cfg.batch {
            black_box(selective_scan_sequential(case.inputs())?);
        }
        Ok(())
    })
}

/// Full selective layer forward (projections, conv, scan) on a tape.
pub fn bench_layer_scaling(cfg: &BenchConfig, sweep: &[usize]) -> Result<BenchResult> {
    validate_sweep(sweep)?;
    let mut rng = RngStream::new(cfg.seed, 2);
    let mut store = ParamStore::<f32>::new();
    let dims = MambaDims {
        d_h: cfg.d_h,
        d_inner: cfg.d_inner(),
        n_state: cfg.n_state,
        d_conv: cfg.d_conv.max(1),
    };
    let layer = MambaLayer::new(&mut store, "bench", dims, &mut rng);
    let max = *sweep.last().expect("validated");
    let x = Tensor::from_fn(&[max, cfg.d_h], |_| rng.normal() as f32);
    time_sweep("mamba_layer", cfg, sweep, |t| count_flops(cfg, t).mamba_total(), |t1| {
        let xs = Tensor::new(&[t1, cfg.d_h], x.data()[..t1 * cfg.d_h].to_vec())?;
        for _ in 0..cfg.batch {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let xv = tape.constant(xs.clone());
            black_box(layer.forward(&mut tape, &p, xv, SelectiveSource::Input)?);
        }
        Ok(())
    })
}

/// Fixed random projections for the attention reference.
pub struct AttentionBaseline {
    pub wq: Tensor<f32>,
    pub wk: Tensor<f32>,
    pub wv: Tensor<f32>,
}

impl AttentionBaseline {
    pub fn new(d_h: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 3);
        AttentionBaseline {
            wq: xavier_uniform(&[d_h, d_h], d_h, d_h, &mut rng),
            wk: xavier_uniform(&[d_h, d_h], d_h, d_h, &mut rng),
            wv: xavier_uniform(&[d_h, d_h], d_h, d_h, &mut rng),
        }
    }

    /// Single-head `softmax(QKᵀ/√d_h)·V`, one query row at a time with
    /// max-subtracted softmax.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (attn, _) = self.forward_with_weights(x, false)?;
        Ok(attn)
    }

    /// Also returns the full attention matrix when `keep` is set.
    pub fn forward_with_weights(&self, x: &Tensor<f32>, keep: bool) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
        let q = matmul(x, &self.wq)?;
        let k = matmul(x, &self.wk)?;
        let v = matmul(x, &self.wv)?;
        let (t1, d) = (x.shape()[0], x.shape()[1]);
        let scale = 1.0 / (d as f32).sqrt();
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let mut out = vec![0.0f32; t1 * d];
        let mut kept = if keep { Vec::with_capacity(t1 * t1) } else { Vec::new() };
        let mut scores = vec![0.0f32; t1];
        for i in 0..t1 {
            let qi = &qd[i * d..(i + 1) * d];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &kd[j * d..(j + 1) * d];
                *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                max = max.max(*s);
            }
            let mut total = 0.0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            let inv = 1.0 / total;
            let oi = &mut out[i * d..(i + 1) * d];
            for (j, s) in scores.iter_mut().enumerate() {
                *s *= inv;
                let vj = &vd[j * d..(j + 1) * d];
                for (o, vv) in oi.iter_mut().zip(vj) {
                    *o += *s * vv;
                }
            }
            if keep {
                kept.extend_from_slice(&scores);
            }
        }
        let weights = if keep { Some(Tensor::new(&[t1, t1], kept)?) } else { None };
        Ok((Tensor::new(&[t1, d], out)?, weights))
    }
}

/// Reference attention forward for one `T₁ × d_h` sequence.
pub fn attention_baseline_forward(x: &Tensor<f32>, seed: u64) -> Result<Tensor<f32>> {
    AttentionBaseline::new(x.last_dim(), seed).forward(x)
}

pub fn bench_attention_scaling(cfg: &BenchConfig, sweep: &[usize]) -> Result<BenchResult> {
    validate_sweep(sweep)?;
    let mut rng = RngStream::new(cfg.seed, 4);
    let attn = AttentionBaseline::new(cfg.d_h, cfg.seed);
    let max = *sweep.last().expect("validated");
    let x = Tensor::from_fn(&[max, cfg.d_h], |_| rng.normal() as f32);
    time_sweep("attention", cfg, sweep, |t| count_flops(cfg, t).attention_total(), |t1| {
        let xs = Tensor::new(&[t1, cfg.d_h], x.data()[..t1 * cfg.d_h].to_vec())?;
        for _ in 0..cfg.batch {
            black_box(attn.forward(&xs)?);
        }
        Ok(())
    })
}

/// Per-component multiply-accumulate counts for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FlopTable {
    pub t1: usize,
    pub mamba: Vec<(&'static str, u64)>,
    pub attention: Vec<(&'static str, u64)>,
}

impl FlopTable {
    pub fn get(&self, name: &str) -> Option<u64> {
        self.mamba.iter().chain(&self.attention).find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn mamba_total(&self) -> u64 {
        self.mamba.iter().map(|(_, v)| v).sum()
    }

    pub fn attention_total(&self) -> u64 {
        self.attention.iter().map(|(_, v)| v).sum()
    }

    /// Conv plus scan, the `B·T₁·d_inner·(d_conv + n_state)` core.
    pub fn ssm_core(&self) -> u64 {
        self.get("conv").unwrap_or(0) + self.get("scan").unwrap_or(0)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\tcomponent\tt1\tflops\n");
        for (n, v) in &self.mamba {
            out.push_str(&format!("mamba\t{n}\t{}\t{v}\n", self.t1));
        }
        out.push_str(&format!("mamba\ttotal\t{}\t{}\n", self.t1, self.mamba_total()));
        for (n, v) in &self.attention {
            out.push_str(&format!("attention\t{n}\t{}\t{v}\n", self.t1));
        }
        out.push_str(&format!("attention\ttotal\t{}\t{}\n", self.t1, self.attention_total()));
        out
    }
}

/// Closed-form counts. A `d_conv` of zero drops the conv row.
pub fn count_flops(cfg: &BenchConfig, t1: usize) -> FlopTable {
    let (b, t, d, di, n, k) = (
        cfg.batch as u64,
        t1 as u64,
        cfg.d_h as u64,
        cfg.d_inner() as u64,
        cfg.n_state as u64,
        cfg.d_conv as u64,
    );
    let mut mamba = vec![("in_proj", 2 * b * t * d * di)];
    if k > 0 {
        mamba.push(("conv", b * t * di * k));
    }
    mamba.push(("selective_proj", 2 * b * t * di * (di + 2 * n)));
    mamba.push(("scan", b * t * di * n));
    mamba.push(("out_proj", 2 * b * t * di * d));
    let attention = vec![("qkv_proj", 3 * b * t * d * d), ("scores_values", 2 * b * t * t * d)];
    FlopTable { t1, mamba, attention }
}

/// Host description recorded next to timings.
pub fn machine_descriptor() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!("{} {} | {cpu} | 1 thread", std::env::consts::OS, std::env::consts::ARCH)
}

/// Writes `bench.tsv`, one `plot_<kernel>.tsv` per result and `flops.tsv`.
pub fn write_bench_report(dir: impl AsRef<Path>, cfg: &BenchConfig, results: &[BenchResult]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = format!(
        "# {}\n# batch={} d_h={} d_inner={} n_state={} d_conv={} reps={}\nkernel\tt1\tmedian_seconds\tflops\tratio\tslope\n",
        machine_descriptor(),
        cfg.batch,
        cfg.d_h,
        cfg.d_inner(),
        cfg.n_state,
        cfg.d_conv,
        cfg.reps
    );
    let mut flops = String::new();
    for r in results {
        let ratios = r.ratios();
        for (i, (t, s)) in r.t1.iter().zip(&r.median_seconds).enumerate() {
            let ratio = if i == 0 { "-".to_string() } else { format!("{:.3}", ratios[i - 1]) };
            summary.push_str(&format!("{}\t{t}\t{s:.6e}\t{}\t{ratio}\t{:.3}\n", r.kernel, r.flops[i], r.slope));
        }
        let path = dir.join(format!("plot_{}.tsv", r.kernel));
        fs::write(&path, r.plot_table()).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(r) = results.first() {
        for &t in &r.t1 {
            let table = count_flops(cfg, t).to_tsv();
            if flops.is_empty() {
                flops.push_str(&table);
            } else {
                flops.extend(table.lines().skip(1).map(|l| format!("{l}\n")));
            }
        }
    }
    for (name, body) in [("bench.tsv", summary), ("flops.tsv", flops)] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
