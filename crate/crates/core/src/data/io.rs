use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{steps_per_day, Standardizer, TrafficTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.bin";

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub sensors: usize,
    #[serde(rename = "d")]
    pub features: usize,
    pub interval_minutes: u32,
    pub start_unix_seconds: i64,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<f64>>,
}

impl DatasetMeta {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| load_err(&path, None, format!("cannot read: {e}")))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| load_err(&path, None, format!("malformed header: {e}")))?;
        meta.validate(&path)?;
        Ok(meta)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.steps == 0 || self.sensors == 0 || self.features == 0 {
            return Err(load_err(path, None, "T, N and d must be positive".into()));
        }
        steps_per_day(self.interval_minutes).map_err(|e| load_err(path, None, e.to_string()))?;
        if self.feature_names.len() != self.features {
            return Err(load_err(
                path,
                None,
                format!("{} feature names for d = {}", self.feature_names.len(), self.features),
            ));
        }
        for (key, stats) in [("mean", &self.mean), ("std", &self.std)] {
            if let Some(v) = stats {
                if v.len() != self.features {
                    return Err(load_err(path, None, format!("`{key}` has {} entries for d = {}", v.len(), self.features)));
                }
            }
        }
        Ok(())
    }

    /// Stored standardizer, if the header carries both mean and std.
    pub fn standardizer(&self) -> Option<Standardizer> {
        match (&self.mean, &self.std) {
            (Some(mean), Some(std)) => Some(Standardizer {
                mean: mean.clone(),
                std: std.clone(),
            }),
            _ => None,
        }
    }
}

fn load_err(path: &Path, offset: Option<u64>, message: String) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        offset,
        message,
    }
}

/// Reads a dataset directory (`meta.json` + `data.bin`).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TrafficTensor> {
    let dir = dir.as_ref();
    let meta = DatasetMeta::read(dir)?;
    let path = dir.join(DATA_FILE);
    let bytes = fs::read(&path).map_err(|e| load_err(&path, None, format!("cannot read: {e}")))?;
    let count = meta.steps * meta.sensors * meta.features;
    let expected = count as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(load_err(
            &path,
            Some(expected.min(bytes.len() as u64)),
            format!("payload is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let values = decode_f32(&bytes, &path)?;
    let values = Tensor::new(&[meta.steps, meta.sensors, meta.features], values)?;
    TrafficTensor::new(values, meta.interval_minutes, meta.start_unix_seconds, meta.feature_names)
        .map_err(|e| load_err(&dir.join(META_FILE), None, e.to_string()))
}

/// Decodes little-endian f32 values, rejecting non-finite entries.
pub(crate) fn decode_f32(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(bytes.len() / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(load_err(path, Some(4 * i as u64), format!("non-finite value {v}")));
        }
        out.push(v);
    }
    Ok(out)
}

pub(crate) fn encode_f32(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes a dataset directory, creating it if needed.
pub fn save_dataset(dir: impl AsRef<Path>, data: &TrafficTensor, stats: Option<&Standardizer>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        steps: data.steps(),
        sensors: data.sensors(),
        features: data.features(),
        interval_minutes: data.interval_minutes,
        start_unix_seconds: data.start_unix_seconds,
        feature_names: data.feature_names.clone(),
        mean: stats.map(|s| s.mean.clone()),
        std: stats.map(|s| s.std.clone()),
    };
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Numeric(e.to_string()))?;
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    let mut bytes = Vec::new();
    encode_f32(data.values.data(), &mut bytes);
    let data_path = dir.join(DATA_FILE);
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))
}

/// Parses a CSV export with one row per timestep and `sensors·features`
/// columns ordered sensor-major. A non-numeric first row is treated as a header.
pub fn convert_csv(
    path: impl AsRef<Path>,
    sensors: usize,
    features: usize,
    interval_minutes: u32,
    start_unix_seconds: i64,
    feature_names: Vec<String>,
) -> Result<TrafficTensor> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let width = sensors * features;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| load_err(&path, None, e.to_string()))?;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| load_err(&path, e.position().map(|p| p.byte()), e.to_string()))?;
        let offset = record.position().map(|p| p.byte());
        let parsed: std::result::Result<Vec<f32>, _> = record.iter().map(str::parse::<f32>).collect();
        let parsed = match parsed {
            Ok(p) => p,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(load_err(&path, offset, format!("row {}: {e}", line + 1))),
        };
        if parsed.len() != width {
            return Err(load_err(
                &path,
                offset,
                format!("row {} has {} columns, expected {width}", line + 1, parsed.len()),
            ));
        }
        if let Some(bad) = parsed.iter().find(|v| !v.is_finite()) {
            return Err(load_err(&path, offset, format!("row {}: non-finite value {bad}", line + 1)));
        }
        values.extend(parsed);
        rows += 1;
    }
    if rows == 0 {
        return Err(load_err(&path, None, "no data rows".into()));
    }
    let values = Tensor::new(&[rows, sensors, features], values)?;
    TrafficTensor::new(values, interval_minutes, start_unix_seconds, feature_names)
}
