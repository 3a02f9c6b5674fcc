//! Neural building blocks over the tensor tape.
//!
//! Every block registers its parameters in a [`ParamStore`] under a path
//! prefix and keeps only [`ParamId`] handles, so one store describes a whole
//! model and can be checkpointed with [`checkpoint`].

mod attention;
pub mod checkpoint;
mod linear;
mod recurrent;
mod textcnn;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

pub use attention::{MultiHeadAttention, TransformerLayer, LAYER_NORM_EPS};
pub use linear::Linear;
pub use recurrent::{Gru, Lstm};
pub use textcnn::TextCnn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Lstm,
    Gru,
    TextCnn,
    Mha,
    TransformerLayer,
}

/// Geometry of one block. Fields that do not apply to a kind are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Attention heads (mha and transformer_layer).
    pub heads: usize,
    /// Convolution widths (textcnn).
    pub kernel_widths: Vec<usize>,
    /// Channels per convolution width (textcnn).
    pub filters_per_width: usize,
    /// Inner width of the position-wise feed-forward (transformer_layer).
    pub ffn_dim: usize,
}

impl LayerSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self::plain(LayerKind::Linear, input_dim, output_dim)
    }

    pub fn lstm(input_dim: usize, hidden: usize) -> Self {
        Self::plain(LayerKind::Lstm, input_dim, hidden)
    }

    pub fn gru(input_dim: usize, hidden: usize) -> Self {
        Self::plain(LayerKind::Gru, input_dim, hidden)
    }

    pub fn textcnn(input_dim: usize, output_dim: usize, widths: &[usize], filters: usize) -> Self {
        LayerSpec {
            kernel_widths: widths.to_vec(),
            filters_per_width: filters,
            ..Self::plain(LayerKind::TextCnn, input_dim, output_dim)
        }
    }

    pub fn mha(dim: usize, heads: usize) -> Self {
        LayerSpec {
            heads,
            ..Self::plain(LayerKind::Mha, dim, dim)
        }
    }

    pub fn transformer_layer(dim: usize, heads: usize, ffn_dim: usize) -> Self {
        LayerSpec {
            heads,
            ffn_dim,
            ..Self::plain(LayerKind::TransformerLayer, dim, dim)
        }
    }

    fn plain(kind: LayerKind, input_dim: usize, output_dim: usize) -> Self {
        LayerSpec {
            kind,
            input_dim,
            output_dim,
            heads: 1,
            kernel_widths: Vec::new(),
            filters_per_width: 0,
            ffn_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(contract_err!("{:?} needs positive dimensions", self.kind));
        }
        match self.kind {
            LayerKind::Mha | LayerKind::TransformerLayer => {
                if self.heads == 0 || self.output_dim % self.heads != 0 {
                    return Err(contract_err!(
                        "model dim {} not divisible by {} heads",
                        self.output_dim,
                        self.heads
                    ));
                }
                if self.input_dim != self.output_dim {
                    return Err(contract_err!("attention input and output dims must agree"));
                }
                if self.kind == LayerKind::TransformerLayer && self.ffn_dim == 0 {
                    return Err(contract_err!("transformer layer needs a feed-forward width"));
                }
            }
            LayerKind::TextCnn => {
                if self.kernel_widths.is_empty() || self.kernel_widths.contains(&0) {
                    return Err(contract_err!(
                        "textcnn kernel widths must be non-empty and positive, got {:?}",
                        self.kernel_widths
                    ));
                }
                if self.filters_per_width == 0 {
                    return Err(contract_err!("textcnn needs at least one filter per width"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parameter handles of an initialized block.
#[derive(Debug, Clone)]
pub enum LayerParams {
    Linear(Linear),
    Lstm(Lstm),
    Gru(Gru),
    TextCnn(TextCnn),
    Mha(MultiHeadAttention),
    TransformerLayer(TransformerLayer),
}

impl LayerParams {
    /// Registers a block under `prefix` with weights drawn from `seed`.
    pub fn init(store: &mut ParamStore, prefix: &str, spec: &LayerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Initializer::new(seed);
        Ok(match spec.kind {
            LayerKind::Linear => {
                LayerParams::Linear(Linear::new(store, prefix, spec.input_dim, spec.output_dim, &mut init)?)
            }
            LayerKind::Lstm => LayerParams::Lstm(Lstm::new(store, prefix, spec.input_dim, spec.output_dim, &mut init)?),
            LayerKind::Gru => LayerParams::Gru(Gru::new(store, prefix, spec.input_dim, spec.output_dim, &mut init)?),
            LayerKind::TextCnn => LayerParams::TextCnn(TextCnn::new(store, prefix, spec, &mut init)?),
            LayerKind::Mha => LayerParams::Mha(MultiHeadAttention::new(
                store,
                prefix,
                spec.output_dim,
                spec.heads,
                &mut init,
            )?),
            LayerKind::TransformerLayer => LayerParams::TransformerLayer(TransformerLayer::new(
                store,
                prefix,
                spec.output_dim,
                spec.heads,
                spec.ffn_dim,
                &mut init,
            )?),
        })
    }
}

/// Initializes a standalone block in a fresh store.
pub fn init_params(spec: &LayerSpec, seed: u64) -> Result<(ParamStore, LayerParams)> {
    let mut store = ParamStore::new();
    let params = LayerParams::init(&mut store, "", spec, seed)?;
    Ok((store, params))
}

/// Mixes a parent seed with an ordinal (splitmix64 finalizer).
pub fn derive_seed(seed: u64, ordinal: u64) -> u64 {
    let mut z = seed.wrapping_add(ordinal.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Weight source for block constructors: uniform `±1/√fan_in` matrices,
/// zero biases.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `[fan_in × fan_out]` matrix.
    pub fn weight(&mut self, store: &mut ParamStore, path: String, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        store.insert(path, Tensor::new(&[fan_in, fan_out], data)?)
    }

    pub fn filled(&mut self, store: &mut ParamStore, path: String, len: usize, value: f64) -> Result<ParamId> {
        store.insert(path, Tensor::full(&[len], value))
    }

    pub fn bias(&mut self, store: &mut ParamStore, path: String, len: usize) -> Result<ParamId> {
        self.filled(store, path, len, 0.0)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}
