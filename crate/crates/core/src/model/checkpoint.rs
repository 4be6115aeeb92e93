//! Checkpoint container: a plain-text header (version, model config,
//! standardizer, tensor directory) terminated by `end`, followed by every
//! tensor as little-endian f32 in directory order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelState};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "stmamba-checkpoint";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelState<f32>,
    pub stats: Option<Standardizer>,
}

fn join<V: ToString>(values: &[V], sep: &str) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

pub fn write_checkpoint(model: &ModelState<f32>, stats: Option<&Standardizer>) -> Vec<u8> {
    let mut header = format!("{MAGIC} v{CHECKPOINT_VERSION}\n");
    for (k, v) in model.config.to_pairs() {
        header.push_str(&format!("config {k}={v}\n"));
    }
    if let Some(s) = stats {
        header.push_str(&format!("stats mean={}\n", join(&s.mean, ",")));
        header.push_str(&format!("stats std={}\n", join(&s.std, ",")));
    }
    for (name, t) in model.store.iter() {
        header.push_str(&format!("tensor {name} {}\n", join(t.shape(), "x")));
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    for (_, t) in model.store.iter() {
        crate::data::encode_f32(t.data(), &mut bytes);
    }
    bytes
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ModelState<f32>, stats: Option<&Standardizer>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, write_checkpoint(model, stats)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        offset: None,
        message: format!("cannot read checkpoint: {e}"),
    })?;
    read_checkpoint(&bytes, path)
}

pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |offset: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        offset: Some(offset as u64),
        message,
    };
    let mut pos = 0usize;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fail(pos, "header not terminated by `end`".into()))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| fail(pos, "header is not UTF-8".into()))?;
        let start = pos;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push((start, line));
    }
    let (first_off, first) = *lines.first().ok_or_else(|| fail(0, "empty header".into()))?;
    if first != format!("{MAGIC} v{CHECKPOINT_VERSION}") {
        return Err(fail(first_off, format!("unsupported checkpoint header `{first}`")));
    }

    let mut config = BTreeMap::new();
    let mut stats = BTreeMap::new();
    let mut tensors = Vec::new();
    for &(off, line) in &lines[1..] {
        let (kind, body) = line.split_once(' ').ok_or_else(|| fail(off, format!("malformed line `{line}`")))?;
        match kind {
            "config" | "stats" => {
                let (k, v) = body.split_once('=').ok_or_else(|| fail(off, format!("malformed line `{line}`")))?;
                let target = if kind == "config" { &mut config } else { &mut stats };
                target.insert(k.to_string(), v.to_string());
            }
            "tensor" => {
                let (name, shape) = body.split_once(' ').ok_or_else(|| fail(off, format!("malformed line `{line}`")))?;
                let shape: std::result::Result<Vec<usize>, _> = shape.split('x').map(str::parse).collect();
                let shape = shape.map_err(|e| fail(off, format!("bad shape in `{line}`: {e}")))?;
                tensors.push((off, name.to_string(), shape));
            }
            _ => return Err(fail(off, format!("unknown header entry `{kind}`"))),
        }
    }

    let config = ModelConfig::from_pairs(&config)?;
    let mut model = ModelState::<f32>::new(config, 0)?;
    if tensors.len() != model.store.len() {
        return Err(fail(
            0,
            format!("checkpoint lists {} tensors, the configuration has {}", tensors.len(), model.store.len()),
        ));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (id, (off, name, shape)) in ids.into_iter().zip(tensors) {
        if model.store.name(id) != name || model.store.get(id).shape() != shape.as_slice() {
            return Err(fail(
                off,
                format!("tensor `{name}` {shape:?} does not match `{}` {:?}", model.store.name(id), model.store.get(id).shape()),
            ));
        }
        let n: usize = shape.iter().product();
        let end = pos + 4 * n;
        if end > bytes.len() {
            return Err(fail(bytes.len(), format!("payload truncated inside `{name}`")));
        }
        let data = crate::data::decode_f32(&bytes[pos..end], path).map_err(|e| match e {
            Error::Load { offset: Some(o), message, .. } => fail(pos + o as usize, message),
            other => other,
        })?;
        model.store.set(id, Tensor::new(&shape, data)?)?;
        pos = end;
    }
    if pos != bytes.len() {
        return Err(fail(pos, format!("{} trailing bytes after payload", bytes.len() - pos)));
    }

    let parse_list = |key: &str| -> Result<Option<Vec<f64>>> {
        stats
            .get(key)
            .map(|raw| {
                raw.split(',')
                    .map(|v| v.parse::<f64>().map_err(|e| fail(0, format!("bad stats {key}: {e}"))))
                    .collect()
            })
            .transpose()
    };
    let stats = match (parse_list("mean")?, parse_list("std")?) {
        (Some(mean), Some(std)) => Some(Standardizer { mean, std }),
        (None, None) => None,
        _ => return Err(fail(0, "stats need both mean and std".into())),
    };
    Ok(Checkpoint { model, stats })
}
