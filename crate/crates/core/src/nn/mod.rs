//! From-scratch recurrent regressor: tensors, LSTM and dense layers, MSE,
//! truncated backpropagation through time, and Adam.

mod adam;
mod checkpoint;
mod layers;
mod network;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{CheckpointHeader, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{lstm_cell_forward, CellCache, DenseParams, Gate, LstmLayerParams};
pub use network::{
    layer_names, mse, param_count, BatchState, ForwardCache, Gradients, Network, SeqState,
    TrainMask,
};

use crate::error::Result;
use crate::scalar::Scalar;

/// Input channels: system input and normalized index.
pub const IN_DIM: usize = 2;
pub const OUT_DIM: usize = 1;

/// Layer widths of the full-size network.
pub const PAPER_SIZES: [usize; 3] = [16, 64, 128];
/// Layer widths used by the quick desk-scale runs.
pub const DESK_SIZES: [usize; 3] = [8, 16, 32];

/// Two-channel-in, one-out network with the given LSTM widths.
pub fn init_network<T: Scalar>(sizes: &[usize], seed: u64) -> Result<Network<T>> {
    Network::init(IN_DIM, sizes, OUT_DIM, seed)
}
