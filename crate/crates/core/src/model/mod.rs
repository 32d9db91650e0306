//! The 2-layer LSTM character-level language model: parameters, forward
//! pass, analytic truncated-BPTT backward pass, training loop, and
//! checkpointing. Everything runs in 64-bit floats and is deterministic
//! given the seed.

mod checkpoint;
mod lstm;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use lstm::{
    backward, block_loss, cross_entropy, forward, lstm_cell, softmax, softmax_rows, CellCache,
    ForwardCache,
};
pub use train::{
    anneal_lr, clip_gradients, global_norm, history_to_csv, sgd_step, train, EpochRecord,
};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint format version {0} not supported")]
    VersionMismatch(u32),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

/// Which tokenization a checkpoint was trained on. Recorded in the
/// checkpoint so generation picks the matching renderer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Messages,
    Pianoroll,
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Representation::Messages => write!(f, "messages"),
            Representation::Pianoroll => write!(f, "pianoroll"),
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "messages" => Ok(Representation::Messages),
            "pianoroll" => Ok(Representation::Pianoroll),
            other => Err(format!("unknown representation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub seq_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub anneal_factor: f64,
    /// Anneal when the relative epoch-loss improvement drops below this.
    pub anneal_threshold: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// Defaults matching the Bach-corpus training setup: hidden 128,
    /// embedding 128, batch 50, sequence length 50.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 128,
            hidden_dim: 128,
            num_layers: 2,
            seq_len: 50,
            batch_size: 50,
            learning_rate: 0.002,
            clip_norm: 5.0,
            anneal_factor: 0.97,
            anneal_threshold: 0.005,
            epochs: 50,
            rng_seed: 0,
        }
    }

    /// The reduced-memory preset used for the large classical corpus:
    /// batch 25, sequence length 25.
    pub fn classical_preset(mut self) -> Self {
        self.batch_size = 25;
        self.seq_len = 25;
        self
    }
}

/// Weights of one LSTM layer. Gate order within the 4H dimension is
/// (input, forget, output, candidate).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// 4H x in (in = embed_dim for layer 0, hidden_dim above).
    pub wx: Array2<f64>,
    /// 4H x H recurrent weights.
    pub wh: Array2<f64>,
    /// 4H bias.
    pub b: Array1<f64>,
}

/// All trainable arrays. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// V x E token embedding.
    pub embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// V x H output projection.
    pub wo: Array2<f64>,
    /// V output bias.
    pub bo: Array1<f64>,
}

pub type Gradients = Parameters;

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 { e } else { h };
                LayerParams {
                    wx: Array2::zeros((4 * h, input)),
                    wh: Array2::zeros((4 * h, h)),
                    b: Array1::zeros(4 * h),
                }
            })
            .collect();
        Parameters {
            embedding: Array2::zeros((v, e)),
            layers,
            wo: Array2::zeros((v, h)),
            bo: Array1::zeros(v),
        }
    }

    /// Flat views over every parameter array, in a fixed named order.
    pub fn arrays(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        out.push((
            "embedding".to_string(),
            self.embedding.shape().to_vec(),
            self.embedding.as_slice().expect("row-major"),
        ));
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{l}.wx"),
                layer.wx.shape().to_vec(),
                layer.wx.as_slice().expect("row-major"),
            ));
            out.push((
                format!("layer{l}.wh"),
                layer.wh.shape().to_vec(),
                layer.wh.as_slice().expect("row-major"),
            ));
            out.push((
                format!("layer{l}.b"),
                layer.b.shape().to_vec(),
                layer.b.as_slice().expect("contiguous"),
            ));
        }
        out.push((
            "wo".to_string(),
            self.wo.shape().to_vec(),
            self.wo.as_slice().expect("row-major"),
        ));
        out.push((
            "bo".to_string(),
            self.bo.shape().to_vec(),
            self.bo.as_slice().expect("contiguous"),
        ));
        out
    }

    /// Mutable flat views, same order as [`Parameters::arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(self.embedding.as_slice_mut().expect("row-major"));
        for layer in &mut self.layers {
            out.push(layer.wx.as_slice_mut().expect("row-major"));
            out.push(layer.wh.as_slice_mut().expect("row-major"));
            out.push(layer.b.as_slice_mut().expect("contiguous"));
        }
        out.push(self.wo.as_slice_mut().expect("row-major"));
        out.push(self.bo.as_slice_mut().expect("contiguous"));
        out
    }
}

/// Per-layer hidden and cell vectors carried across blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// (h, c) per layer, each B x H.
    pub layers: Vec<(Array2<f64>, Array2<f64>)>,
}

impl ModelState {
    pub fn zeros(config: &ModelConfig, batch_size: usize) -> Self {
        let h = config.hidden_dim;
        ModelState {
            layers: (0..config.num_layers)
                .map(|_| (Array2::zeros((batch_size, h)), Array2::zeros((batch_size, h))))
                .collect(),
        }
    }
}

/// All weights uniform(-0.05, 0.05) from the seeded rng; biases zero
/// except the LSTM forget-gate slices, which start at 1.0.
pub fn init_params<R: Rng>(config: &ModelConfig, rng: &mut R) -> Parameters {
    let mut params = Parameters::zeros(config);
    let h = config.hidden_dim;
    let fill = |a: &mut [f64], rng: &mut R| {
        for w in a {
            *w = rng.gen_range(-0.05..0.05);
        }
    };
    fill(params.embedding.as_slice_mut().unwrap(), rng);
    for layer in &mut params.layers {
        fill(layer.wx.as_slice_mut().unwrap(), rng);
        fill(layer.wh.as_slice_mut().unwrap(), rng);
        for f in layer.b.slice_mut(ndarray::s![h..2 * h]) {
            *f = 1.0;
        }
    }
    fill(params.wo.as_slice_mut().unwrap(), rng);
    params
}
