use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mamba::{MambaDims, SelectiveSource};

/// Architecture hyperparameters. `n_sensors`, `n_features` and
/// `steps_per_day` are usually taken from the dataset; `mlp_hidden = 0`
/// means `4·d_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub h: usize,
    pub z: usize,
    pub n_sensors: usize,
    pub n_features: usize,
    pub d_f: usize,
    pub d_a: usize,
    pub n_state: usize,
    pub expand: usize,
    pub d_conv: usize,
    pub n_layers: usize,
    pub mlp_hidden: usize,
    pub dropout_p: f64,
    pub selective_source: SelectiveSource,
    pub steps_per_day: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            h: 12,
            z: 12,
            n_sensors: 170,
            n_features: 1,
            d_f: 24,
            d_a: 80,
            n_state: 64,
            expand: 2,
            d_conv: 4,
            n_layers: 1,
            mlp_hidden: 0,
            dropout_p: 0.1,
            selective_source: SelectiveSource::Input,
            steps_per_day: 288,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// A small configuration for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            h: 3,
            z: 3,
            n_sensors: 2,
            n_features: 1,
            d_f: 2,
            d_a: 2,
            n_state: 2,
            expand: 2,
            d_conv: 2,
            n_layers: 1,
            mlp_hidden: 0,
            dropout_p: 0.0,
            selective_source: SelectiveSource::Input,
            steps_per_day: 12,
            ln_eps: 1e-5,
        }
    }

    pub fn d_h(&self) -> usize {
        3 * self.d_f + self.d_a
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_h()
    }

    /// Length of the mixed sequence, `H·N`.
    pub fn t1(&self) -> usize {
        self.h * self.n_sensors
    }

    pub fn mlp_width(&self) -> usize {
        if self.mlp_hidden == 0 {
            4 * self.d_h()
        } else {
            self.mlp_hidden
        }
    }

    pub fn mamba_dims(&self) -> MambaDims {
        MambaDims {
            d_h: self.d_h(),
            d_inner: self.d_inner(),
            n_state: self.n_state,
            d_conv: self.d_conv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("z", self.z),
            ("n_sensors", self.n_sensors),
            ("n_features", self.n_features),
            ("d_f", self.d_f),
            ("d_a", self.d_a),
            ("n_state", self.n_state),
            ("expand", self.expand),
            ("d_conv", self.d_conv),
            ("n_layers", self.n_layers),
            ("steps_per_day", self.steps_per_day),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p", format!("{} is not in [0, 1)", self.dropout_p)));
        }
        if !(self.ln_eps >= 0.0) {
            return Err(Error::config("ln_eps", format!("{} is negative", self.ln_eps)));
        }
        Ok(())
    }

    /// Flat `key → value` view, used by checkpoints.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("h", self.h.to_string()),
            ("z", self.z.to_string()),
            ("n_sensors", self.n_sensors.to_string()),
            ("n_features", self.n_features.to_string()),
            ("d_f", self.d_f.to_string()),
            ("d_a", self.d_a.to_string()),
            ("n_state", self.n_state.to_string()),
            ("expand", self.expand.to_string()),
            ("d_conv", self.d_conv.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("dropout_p", self.dropout_p.to_string()),
            ("selective_source", self.selective_source.to_string()),
            ("steps_per_day", self.steps_per_day.to_string()),
            ("ln_eps", self.ln_eps.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<V>
        where
            V::Err: std::fmt::Display,
        {
            let raw = pairs.get(key).ok_or_else(|| Error::config(key, "missing"))?;
            raw.parse().map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))
        }
        let cfg = ModelConfig {
            h: get(pairs, "h")?,
            z: get(pairs, "z")?,
            n_sensors: get(pairs, "n_sensors")?,
            n_features: get(pairs, "n_features")?,
            d_f: get(pairs, "d_f")?,
            d_a: get(pairs, "d_a")?,
            n_state: get(pairs, "n_state")?,
            expand: get(pairs, "expand")?,
            d_conv: get(pairs, "d_conv")?,
            n_layers: get(pairs, "n_layers")?,
            mlp_hidden: get(pairs, "mlp_hidden")?,
            dropout_p: get(pairs, "dropout_p")?,
            selective_source: get(pairs, "selective_source")?,
            steps_per_day: get(pairs, "steps_per_day")?,
            ln_eps: get(pairs, "ln_eps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
