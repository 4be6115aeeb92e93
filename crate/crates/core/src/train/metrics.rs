use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default MAPE mask: entries with `|y| ≤ 1` are skipped.
pub const MAPE_THRESHOLD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonMetrics {
    /// 1-based forecast step.
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
}

/// MAE, RMSE and MAPE (percent) overall and per horizon. `mape` is `None`
/// when every entry was masked.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub horizons: Vec<HorizonMetrics>,
    pub count: usize,
    pub seconds: f64,
}

impl MetricReport {
    /// Tab-separated rows: an `all` line followed by one line per horizon.
    pub fn to_tsv(&self) -> String {
        let fmt_mape = |m: Option<f64>| m.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("horizon\tmae\trmse\tmape\n");
        out.push_str(&format!("all\t{:.6}\t{:.6}\t{}\n", self.mae, self.rmse, fmt_mape(self.mape)));
        for h in &self.horizons {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\t{}\n", h.horizon, h.mae, h.rmse, fmt_mape(h.mape)));
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
struct Sums {
    abs: f64,
    sq: f64,
    ape: f64,
    n: usize,
    n_ape: usize,
}

impl Sums {
    fn add(&mut self, pred: f64, truth: f64, threshold: f64) {
        let e = pred - truth;
        self.abs += e.abs();
        self.sq += e * e;
        self.n += 1;
        if truth.abs() > threshold {
            self.ape += e.abs() / truth.abs();
            self.n_ape += 1;
        }
    }

    fn merge(&mut self, o: &Sums) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.ape += o.ape;
        self.n += o.n;
        self.n_ape += o.n_ape;
    }

    fn finish(&self) -> (f64, f64, Option<f64>) {
        let n = self.n.max(1) as f64;
        let mape = (self.n_ape > 0).then(|| 100.0 * self.ape / self.n_ape as f64);
        (self.abs / n, (self.sq / n).sqrt(), mape)
    }
}

/// Streams `Z×N×d` forecasts into per-horizon sums.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    threshold: f64,
    horizons: Vec<Sums>,
}

impl MetricAccumulator {
    pub fn new(z: usize, threshold: f64) -> Self {
        MetricAccumulator {
            threshold,
            horizons: vec![Sums::default(); z],
        }
    }

    pub fn add(&mut self, pred: &Tensor<f32>, truth: &Tensor<f32>) -> Result<()> {
        if pred.shape() != truth.shape() || pred.shape().first() != Some(&self.horizons.len()) {
            return Err(Error::dim("compute_metrics", pred.shape(), truth.shape()));
        }
        let per = pred.len() / self.horizons.len();
        for (i, (p, t)) in pred.data().iter().zip(truth.data()).enumerate() {
            self.horizons[i / per].add(*p as f64, *t as f64, self.threshold);
        }
        Ok(())
    }

    pub fn finish(&self, seconds: f64) -> MetricReport {
        let mut all = Sums::default();
        let horizons = self
            .horizons
            .iter()
            .enumerate()
            .map(|(k, s)| {
                all.merge(s);
                let (mae, rmse, mape) = s.finish();
                HorizonMetrics {
                    horizon: k + 1,
                    mae,
                    rmse,
                    mape,
                }
            })
            .collect();
        let (mae, rmse, mape) = all.finish();
        MetricReport {
            mae,
            rmse,
            mape,
            horizons,
            count: all.n,
            seconds,
        }
    }
}

/// Metrics for a single `Z×N×d` forecast in original units.
pub fn compute_metrics(pred: &Tensor<f32>, truth: &Tensor<f32>, mask_threshold: f64) -> Result<MetricReport> {
    let z = *pred.shape().first().unwrap_or(&0);
    let mut acc = MetricAccumulator::new(z, mask_threshold);
    acc.add(pred, truth)?;
    Ok(acc.finish(0.0))
}
