use std::f64::consts::TAU;

use super::{steps_per_day, TrafficTensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// 2018-07-02 00:00 UTC, a Monday.
pub const SYNTH_START_UNIX: i64 = 1_530_489_600;

/// Generator settings. Each sensor draws a base level, a daily amplitude and
/// phase, and a weekend drop; noise is Gaussian with standard deviation
/// `noise · amplitude`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sensors: usize,
    pub days: usize,
    pub seed: u64,
    pub noise: f64,
    pub interval_minutes: u32,
}

impl SynthConfig {
    pub fn new(sensors: usize, days: usize, seed: u64) -> Self {
        SynthConfig {
            sensors,
            days,
            seed,
            noise: 0.02,
            interval_minutes: 5,
        }
    }
}

struct SensorProfile {
    base: f64,
    amplitude: f64,
    phase: f64,
    harmonic: f64,
    harmonic_phase: f64,
    weekend_drop: f64,
}

impl SensorProfile {
    fn draw(rng: &mut RngStream) -> Self {
        SensorProfile {
            base: rng.uniform_range(200.0, 350.0),
            amplitude: rng.uniform_range(40.0, 100.0),
            phase: rng.uniform_range(0.0, TAU),
            harmonic: rng.uniform_range(0.1, 0.3),
            harmonic_phase: rng.uniform_range(0.0, TAU),
            weekend_drop: rng.uniform_range(20.0, 50.0),
        }
    }

    fn clean(&self, tod: usize, per_day: usize, weekend: bool) -> f64 {
        let x = TAU * tod as f64 / per_day as f64;
        let daily = (x + self.phase).sin() + self.harmonic * (2.0 * x + self.harmonic_phase).sin();
        let shift = if weekend { self.weekend_drop } else { 0.0 };
        self.base + self.amplitude * daily - shift
    }
}

/// Synthetic single-feature flow recording starting on a Monday.
pub fn synthesize_traffic(n_sensors: usize, n_days: usize, seed: u64) -> Result<TrafficTensor> {
    synthesize(&SynthConfig::new(n_sensors, n_days, seed))
}

pub fn synthesize(cfg: &SynthConfig) -> Result<TrafficTensor> {
    if cfg.sensors == 0 {
        return Err(Error::Contract("synthesis needs at least one sensor".into()));
    }
    if cfg.days < 2 {
        return Err(Error::Contract(format!("synthesis needs at least 2 days, got {}", cfg.days)));
    }
    if !(cfg.noise >= 0.0) {
        return Err(Error::Contract(format!("noise amplitude must be nonnegative, got {}", cfg.noise)));
    }
    let per_day = steps_per_day(cfg.interval_minutes)?;
    let steps = per_day * cfg.days;
    let mut profile_rng = RngStream::new(cfg.seed, 0);
    let profiles: Vec<SensorProfile> = (0..cfg.sensors).map(|_| SensorProfile::draw(&mut profile_rng)).collect();
    let mut noise_rng = RngStream::new(cfg.seed, 1);

    let (dow, tod) = super::calendar(SYNTH_START_UNIX, cfg.interval_minutes, steps)?;
    let mut values = Vec::with_capacity(steps * cfg.sensors);
    for k in 0..steps {
        let weekend = dow[k] >= 5;
        for p in &profiles {
            let mut v = p.clean(tod[k] as usize, per_day, weekend);
            if cfg.noise > 0.0 {
                v += cfg.noise * p.amplitude * noise_rng.normal();
            }
            values.push(v.max(0.0) as f32);
        }
    }
    let values = Tensor::new(&[steps, cfg.sensors, 1], values)?;
    TrafficTensor::new(values, cfg.interval_minutes, SYNTH_START_UNIX, vec!["flow".into()])
}
