use super::TrafficTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Chronological split ratios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const SIX_TWO_TWO: SplitRatios = SplitRatios {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };
    pub const SEVEN_ONE_TWO: SplitRatios = SplitRatios {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Contract(format!("split ratios must be positive, got {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("split ratios sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Segment lengths for `steps` samples: floor for train and val, the
    /// remainder for test.
    pub fn lengths(&self, steps: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // 0.7 · 90 evaluates to 62.999…
        let floor = |r: f64| ((r * steps as f64) + 1e-9).floor() as usize;
        let train = floor(self.train);
        let val = floor(self.val);
        Ok((train, val, steps - train - val))
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: TrafficTensor,
    pub val: TrafficTensor,
    pub test: TrafficTensor,
}

/// Splits chronologically; every segment must hold at least `min_len` steps.
pub fn split_dataset(data: &TrafficTensor, ratios: SplitRatios, min_len: usize) -> Result<Splits> {
    let (a, b, c) = ratios.lengths(data.steps())?;
    for len in [a, b, c] {
        if len < min_len.max(1) {
            return Err(Error::InsufficientData {
                needed: min_len.max(1),
                available: len,
            });
        }
    }
    Ok(Splits {
        train: data.slice(0, a)?,
        val: data.slice(a, b)?,
        test: data.slice(a + b, c)?,
    })
}

/// One supervised sample: `history` covers steps `end+1−H ..= end`, `target`
/// the following `Z` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub history: Tensor<f32>,
    pub target: Tensor<f32>,
    pub history_dow: Vec<u8>,
    pub history_tod: Vec<u16>,
    /// Index of the last history step within the source segment.
    pub end: usize,
}

pub fn window_count(steps: usize, h: usize, z: usize) -> Result<usize> {
    if h == 0 || z == 0 || steps < h + z {
        return Err(Error::InsufficientData {
            needed: h + z,
            available: steps,
        });
    }
    Ok(steps - h - z + 1)
}

/// The `i`-th window of a segment.
pub fn window_at(segment: &TrafficTensor, i: usize, h: usize, z: usize) -> Result<WindowPair> {
    let count = window_count(segment.steps(), h, z)?;
    if i >= count {
        return Err(Error::Index {
            axis: "window",
            index: i,
            extent: count,
        });
    }
    let row = segment.sensors() * segment.features();
    let data = segment.values.data();
    let (n, d) = (segment.sensors(), segment.features());
    Ok(WindowPair {
        history: Tensor::new(&[h, n, d], data[i * row..(i + h) * row].to_vec())?,
        target: Tensor::new(&[z, n, d], data[(i + h) * row..(i + h + z) * row].to_vec())?,
        history_dow: segment.day_of_week[i..i + h].to_vec(),
        history_tod: segment.time_of_day[i..i + h].to_vec(),
        end: i + h - 1,
    })
}

/// All windows of a segment in chronological order.
pub fn make_windows(segment: &TrafficTensor, h: usize, z: usize) -> Result<Vec<WindowPair>> {
    let count = window_count(segment.steps(), h, z)?;
    (0..count).map(|i| window_at(segment, i, h, z)).collect()
}

/// Per-feature z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Mean and population standard deviation of each feature over all steps
    /// and sensors of `train`.
    pub fn fit(train: &TrafficTensor) -> Result<Self> {
        let d = train.features();
        let mut sum = vec![0.0f64; d];
        let mut count = 0usize;
        for chunk in train.values.data().chunks_exact(d) {
            for (s, v) in sum.iter_mut().zip(chunk) {
                *s += *v as f64;
            }
            count += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; d];
        for chunk in train.values.data().chunks_exact(d) {
            for ((q, v), m) in sq.iter_mut().zip(chunk).zip(&mean) {
                *q += (*v as f64 - m).powi(2);
            }
        }
        let std: Vec<f64> = sq.iter().map(|q| (q / count as f64).sqrt()).collect();
        let stats = Standardizer { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::dim("Standardizer", &[self.mean.len()], &[self.std.len()]));
        }
        for (feature, s) in self.std.iter().enumerate() {
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::DegenerateFeature { feature });
            }
        }
        Ok(())
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, t: &Tensor<f32>) -> Result<()> {
        if t.last_dim() != self.features() {
            return Err(Error::dim("Standardizer", t.shape(), &[self.features()]));
        }
        Ok(())
    }

    /// `(x − mean) / std` along the last axis.
    pub fn apply(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(t)?;
        let d = self.features();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let f = i % d;
            *v = ((*v as f64 - self.mean[f]) / self.std[f]) as f32;
        }
        Ok(out)
    }

    /// `z · std + mean` along the last axis.
    pub fn invert(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(t)?;
        let d = self.features();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let f = i % d;
            *v = (*v as f64 * self.std[f] + self.mean[f]) as f32;
        }
        Ok(out)
    }

    pub fn standardize(&self, data: &TrafficTensor) -> Result<TrafficTensor> {
        data.with_values(self.apply(&data.values)?)
    }

    pub fn destandardize(&self, data: &TrafficTensor) -> Result<TrafficTensor> {
        data.with_values(self.invert(&data.values)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(steps: usize, n: usize, d: usize) -> TrafficTensor {
        let values = Tensor::from_fn(&[steps, n, d], |i| i as f32);
        let names = (0..d).map(|f| format!("f{f}")).collect();
        TrafficTensor::new(values, 5, 0, names).unwrap()
    }

    #[test]
    fn split_lengths_follow_floor_rule() {
        assert_eq!(SplitRatios::SIX_TWO_TWO.lengths(17_856).unwrap(), (10_713, 3_571, 3_572));
        let quarter = SplitRatios::new(0.5, 0.25, 0.25).unwrap();
        assert_eq!(quarter.lengths(10).unwrap(), (5, 2, 3));
        assert_eq!(SplitRatios::SEVEN_ONE_TWO.lengths(52_116).unwrap(), (36_481, 5_211, 10_424));
        assert_eq!(SplitRatios::SEVEN_ONE_TWO.lengths(90).unwrap(), (63, 9, 18));
    }

    #[test]
    fn bad_ratios_are_rejected() {
        assert!(SplitRatios::new(0.6, 0.2, 0.3).is_err());
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn short_segment_is_insufficient() {
        let data = ramp(40, 1, 1);
        let err = split_dataset(&data, SplitRatios::SIX_TWO_TWO, 24).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 24, available: 8 }));
    }

    #[test]
    fn splits_are_contiguous() {
        let data = ramp(100, 2, 1);
        let s = split_dataset(&data, SplitRatios::SIX_TWO_TWO, 1).unwrap();
        let mut joined = s.train.values.data().to_vec();
        joined.extend_from_slice(s.val.values.data());
        joined.extend_from_slice(s.test.values.data());
        assert_eq!(joined, data.values.data());
        assert_eq!(s.val.time_of_day[0], data.time_of_day[60]);
        assert_eq!(s.test.start_unix_seconds, 80 * 300);
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(24, 1, 1), 12, 12).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp(100, 1, 1), 12, 12).unwrap().len(), 77);
        assert!(matches!(
            make_windows(&ramp(23, 1, 1), 12, 12),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn window_alignment() {
        let seg = ramp(30, 2, 1);
        for (i, w) in make_windows(&seg, 4, 3).unwrap().iter().enumerate() {
            assert_eq!(w.end, i + 3);
            // last history row holds segment step i+H−1, the target starts right after
            assert_eq!(w.history.data()[3 * 2], ((i + 3) * 2) as f32);
            assert_eq!(w.target.data()[0], ((i + 4) * 2) as f32);
            assert_eq!(w.history_tod, seg.time_of_day[i..i + 4]);
        }
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let values = Tensor::from_fn(&[5, 2, 2], |i| if i % 2 == 0 { 3.0 } else { i as f32 });
        let data = TrafficTensor::new(values, 5, 0, vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(Standardizer::fit(&data), Err(Error::DegenerateFeature { feature: 0 })));
    }

    #[test]
    fn standardized_train_has_zero_mean() {
        let data = ramp(50, 3, 2);
        let stats = Standardizer::fit(&data).unwrap();
        let z = stats.standardize(&data).unwrap();
        let back = Standardizer::fit(&z).unwrap();
        for f in 0..2 {
            assert!(back.mean[f].abs() < 1e-6);
            assert!((back.std[f] - 1.0).abs() < 1e-6);
        }
    }
}
