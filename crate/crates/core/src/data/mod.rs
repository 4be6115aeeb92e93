//! Traffic datasets: the in-memory container, its on-disk format,
//! chronological splits, sliding windows, standardization and a synthetic
//! generator.

mod io;
mod split;
mod synth;

pub(crate) use io::{decode_f32, encode_f32};
pub use io::{convert_csv, load_dataset, save_dataset, DatasetMeta, DATA_FILE, META_FILE};
pub use split::{
    make_windows, split_dataset, window_at, window_count, SplitRatios, Splits, Standardizer, WindowPair,
};
pub use synth::{synthesize, synthesize_traffic, SynthConfig, SYNTH_START_UNIX};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MINUTES_PER_DAY: u32 = 24 * 60;
pub const DAYS_PER_WEEK: usize = 7;

/// Steps per day for a sampling interval, e.g. 288 for 5 minutes.
pub fn steps_per_day(interval_minutes: u32) -> Result<usize> {
    if interval_minutes == 0 || MINUTES_PER_DAY % interval_minutes != 0 {
        return Err(Error::Contract(format!(
            "interval of {interval_minutes} minutes does not divide a day"
        )));
    }
    Ok((MINUTES_PER_DAY / interval_minutes) as usize)
}

/// Day-of-week (Monday = 0) and time-of-day slot for each of `steps` samples
/// starting at `start_unix_seconds`.
pub fn calendar(start_unix_seconds: i64, interval_minutes: u32, steps: usize) -> Result<(Vec<u8>, Vec<u16>)> {
    let per_day = steps_per_day(interval_minutes)?;
    let day0 = start_unix_seconds.div_euclid(86_400);
    let secs = start_unix_seconds.rem_euclid(86_400);
    // 1970-01-01 was a Thursday
    let mut dow = ((day0 + 3).rem_euclid(7)) as u8;
    let mut tod = (secs / 60) as usize / interval_minutes as usize;
    let mut dows = Vec::with_capacity(steps);
    let mut tods = Vec::with_capacity(steps);
    for _ in 0..steps {
        dows.push(dow);
        tods.push(tod as u16);
        tod += 1;
        if tod == per_day {
            tod = 0;
            dow = (dow + 1) % DAYS_PER_WEEK as u8;
        }
    }
    Ok((dows, tods))
}

/// A `T × N × d` recording with its calendar indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficTensor {
    pub values: Tensor<f32>,
    pub day_of_week: Vec<u8>,
    pub time_of_day: Vec<u16>,
    pub interval_minutes: u32,
    pub start_unix_seconds: i64,
    pub feature_names: Vec<String>,
}

impl TrafficTensor {
    pub fn new(
        values: Tensor<f32>,
        interval_minutes: u32,
        start_unix_seconds: i64,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::dim("TrafficTensor", values.shape(), &[0, 0, 0]));
        }
        if feature_names.len() != values.shape()[2] {
            return Err(Error::dim("TrafficTensor(feature_names)", values.shape(), &[feature_names.len()]));
        }
        let (day_of_week, time_of_day) = calendar(start_unix_seconds, interval_minutes, values.shape()[0])?;
        Ok(TrafficTensor {
            values,
            day_of_week,
            time_of_day,
            interval_minutes,
            start_unix_seconds,
            feature_names,
        })
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn sensors(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn steps_per_day(&self) -> usize {
        steps_per_day(self.interval_minutes).expect("validated at construction")
    }

    /// Steps `[start, start+len)` as a standalone tensor.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.steps() {
            return Err(Error::InsufficientData {
                needed: start + len,
                available: self.steps(),
            });
        }
        let row = self.sensors() * self.features();
        let values = Tensor::new(
            &[len, self.sensors(), self.features()],
            self.values.data()[start * row..(start + len) * row].to_vec(),
        )?;
        Ok(TrafficTensor {
            values,
            day_of_week: self.day_of_week[start..start + len].to_vec(),
            time_of_day: self.time_of_day[start..start + len].to_vec(),
            interval_minutes: self.interval_minutes,
            start_unix_seconds: self.start_unix_seconds + (start as i64) * 60 * self.interval_minutes as i64,
            feature_names: self.feature_names.clone(),
        })
    }

    /// Replaces the values, keeping the calendar.
    pub fn with_values(&self, values: Tensor<f32>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::dim("TrafficTensor::with_values", values.shape(), self.values.shape()));
        }
        Ok(TrafficTensor {
            values,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_minute_day_has_288_slots() {
        assert_eq!(steps_per_day(5).unwrap(), 288);
        assert!(steps_per_day(7).is_err());
    }

    #[test]
    fn calendar_advances_and_wraps() {
        // Monday 2018-07-02 23:50 UTC
        let start = SYNTH_START_UNIX + 23 * 3600 + 50 * 60;
        let (dow, tod) = calendar(start, 5, 4).unwrap();
        assert_eq!(tod, vec![286, 287, 0, 1]);
        assert_eq!(dow, vec![0, 0, 1, 1]);
        // 1970-01-04 was a Sunday
        let (dow, _) = calendar(3 * 86_400, 5, 1).unwrap();
        assert_eq!(dow, vec![6]);
    }

    #[test]
    fn calendar_invariants_hold_over_weeks() {
        let (dow, tod) = calendar(SYNTH_START_UNIX + 3_600, 5, 288 * 15).unwrap();
        for k in 1..dow.len() {
            assert_eq!(tod[k] as usize, (tod[k - 1] as usize + 1) % 288);
            let wrapped = tod[k] == 0;
            let expect = if wrapped { (dow[k - 1] + 1) % 7 } else { dow[k - 1] };
            assert_eq!(dow[k], expect);
        }
    }
}
