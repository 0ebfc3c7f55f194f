//! Sequence regressor: masked ReLU-GRU stack, tanh bottleneck with dropout, sigmoid head,
//! trained with exact reverse-mode gradients and Nadam.

mod checkpoint;
mod gru;
mod nadam;
mod network;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use gru::{GruCache, SeqBatch};
pub use nadam::{nadam_update, NadamConfig, NadamState};
pub use network::{
    dropout_mask, mae_batch, mae_loss, mae_subgradient, ForwardTrace, Mode, NetInput,
};
pub use params::{DenseLayer, GruLayer, NetworkParams, NetworkSpec};

/// Targets are drift fractions multiplied by this factor so they fall inside (0, 1).
pub const TARGET_AMPLIFICATION: f64 = 10.0;
