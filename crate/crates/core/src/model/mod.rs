//! The full forecaster: embedding, ST-Mixer, `n_layers` ×
//! (LayerNorm → selective layer → residual block), ST-Separator and the
//! per-node regression decoder.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;

use crate::autodiff::{Tape, Var};
use crate::embedding::{Embedding, EmbeddingDims};
use crate::error::{Error, Result, StageExt};
use crate::mamba::MambaLayer;
use crate::params::{Bound, Linear, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// Train mode carries the dropout stream; eval mode is deterministic.
pub enum Mode<'a> {
    Train(&'a mut RngStream),
    Eval,
}

impl Mode<'_> {
    fn rng(&mut self) -> Option<&mut RngStream> {
        match self {
            Mode::Train(r) => Some(&mut **r),
            Mode::Eval => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[width])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta), T::of(eps))
    }
}

/// Residual block weights: post-skip LayerNorm and a two-layer ReLU MLP.
#[derive(Clone, Debug)]
pub struct BlockWeights {
    pub norm: Norm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub pre_norm: Norm,
    pub mamba: MambaLayer,
    pub block: BlockWeights,
}

#[derive(Clone, Debug)]
pub struct ModelLayout {
    pub embedding: Embedding,
    pub layers: Vec<Layer>,
    pub decoder: Linear,
}

/// Configuration, parameter storage and the ids that address it.
#[derive(Clone, Debug)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub layout: ModelLayout,
}

impl<T: Scalar> ModelState<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed, 0x1417);
        let mut store = ParamStore::new();
        let d_h = config.d_h();
        let embedding = Embedding::new(
            &mut store,
            "embedding",
            EmbeddingDims {
                h: config.h,
                n: config.n_sensors,
                d: config.n_features,
                d_f: config.d_f,
                d_a: config.d_a,
                steps_per_day: config.steps_per_day,
            },
            &mut rng,
        )?;
        let layers = (0..config.n_layers)
            .map(|l| {
                let name = format!("layer{l}");
                Layer {
                    pre_norm: Norm::new(&mut store, &format!("{name}.pre_norm"), d_h),
                    mamba: MambaLayer::new(&mut store, &format!("{name}.mamba"), config.mamba_dims(), &mut rng),
                    block: BlockWeights {
                        norm: Norm::new(&mut store, &format!("{name}.block.norm"), d_h),
                        mlp_in: Linear::new(&mut store, &format!("{name}.block.mlp_in"), d_h, config.mlp_width(), &mut rng),
                        mlp_out: Linear::new(&mut store, &format!("{name}.block.mlp_out"), config.mlp_width(), d_h, &mut rng),
                    },
                }
            })
            .collect();
        let decoder = Linear::new(
            &mut store,
            "decoder",
            config.h * d_h,
            config.z * config.n_features,
            &mut rng,
        );
        Ok(ModelState {
            config,
            store,
            layout: ModelLayout {
                embedding,
                layers,
                decoder,
            },
        })
    }

    /// Closed-form scalar parameter count for a configuration.
    pub fn param_count(config: &ModelConfig) -> usize {
        let d_h = config.d_h();
        let m = config.mlp_width();
        let embedding = Embedding::param_count(EmbeddingDims {
            h: config.h,
            n: config.n_sensors,
            d: config.n_features,
            d_f: config.d_f,
            d_a: config.d_a,
            steps_per_day: config.steps_per_day,
        });
        let per_layer = 4 * d_h
            + MambaLayer::param_count(config.mamba_dims())
            + Linear::param_count(d_h, m)
            + Linear::param_count(m, d_h);
        let decoder = Linear::param_count(config.h * d_h, config.z * config.n_features);
        embedding + config.n_layers * per_layer + decoder
    }

    /// Records the forward pass for one history window `H×N×d` and returns
    /// the `Z×N×d` forecast in standardized units.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        history: Var,
        dow: &[u8],
        tod: &[u16],
        mut mode: Mode<'_>,
    ) -> Result<Var> {
        let c = &self.config;
        let x_hat = self.layout.embedding.forward(tape, p, history, dow, tod).stage("embedding")?;
        let mut x = st_mix(tape, x_hat).stage("st_mix")?;
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let stage = format!("layer {l}");
            let xn = layer.pre_norm.forward(tape, p, x, c.ln_eps).stage(&stage)?;
            let y = layer.mamba.forward(tape, p, xn, c.selective_source).stage(&stage)?;
            x = st_ssm_block(tape, p, &layer.block, y, x, c.dropout_p, c.ln_eps, mode.rng()).stage(&stage)?;
        }
        let y_bar = st_separate(tape, x, c.n_sensors).stage("st_separate")?;
        self.decode(tape, p, y_bar).stage("decoder")
    }

    /// Per-node flatten over `(H, d_h)` followed by one affine map to `Z·d`.
    fn decode(&self, tape: &mut Tape<T>, p: &Bound, y_bar: Var) -> Result<Var> {
        let c = &self.config;
        let per_node = tape.permute(y_bar, &[1, 0, 2])?;
        let flat = tape.reshape(per_node, &[c.n_sensors, c.h * c.d_h()])?;
        let out = self.layout.decoder.forward(tape, p, flat)?;
        let out = tape.reshape(out, &[c.n_sensors, c.z, c.n_features])?;
        tape.permute(out, &[1, 0, 2])
    }

    /// Eval-mode forecast for one window, without gradients.
    pub fn predict(&self, history: &Tensor<T>, dow: &[u8], tod: &[u16]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let x = tape.constant(history.clone());
        let y = self.forward(&mut tape, &p, x, dow, tod, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }
}

/// `H×N×d_h → (H·N)×d_h` with row `r = h·N + n`.
pub fn st_mix<T: Scalar>(tape: &mut Tape<T>, x_hat: Var) -> Result<Var> {
    match *tape.shape(x_hat) {
        [h, n, d_h] => tape.reshape(x_hat, &[h * n, d_h]),
        ref s => Err(Error::dim("st_mix", s, &[0, 0, 0])),
    }
}

/// Exact inverse of [`st_mix`].
pub fn st_separate<T: Scalar>(tape: &mut Tape<T>, y: Var, n: usize) -> Result<Var> {
    match *tape.shape(y) {
        [t1, d_h] if n > 0 && t1 % n == 0 => tape.reshape(y, &[t1 / n, n, d_h]),
        ref s => Err(Error::dim("st_separate", s, &[n])),
    }
}

/// `r = drop(y) + x_bar`, `out = drop(MLP(LN(r))) + r`.
#[allow(clippy::too_many_arguments)]
pub fn st_ssm_block<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    w: &BlockWeights,
    y: Var,
    x_bar: Var,
    dropout_p: f64,
    eps: f64,
    mut rng: Option<&mut RngStream>,
) -> Result<Var> {
    if tape.shape(y) != tape.shape(x_bar) {
        return Err(Error::dim("st_ssm_block", tape.shape(y), tape.shape(x_bar)));
    }
    let y = tape.dropout(y, dropout_p, rng.as_deref_mut())?;
    let r = tape.add(y, x_bar)?;
    let n = w.norm.forward(tape, p, r, eps)?;
    let hidden = w.mlp_in.forward(tape, p, n)?;
    let hidden = tape.relu(hidden);
    let m = w.mlp_out.forward(tape, p, hidden)?;
    let m = tape.dropout(m, dropout_p, rng)?;
    tape.add(m, r)
}
