//! System identification with stacked LSTMs and deep transfer learning.
//!
//! * [`dynsys`] simulates the benchmark systems (state-space, IIR, and the
//!   Wiener–Hammerstein cascade).
//! * [`data`] draws truncated-normal excitations and builds datasets.
//! * [`nn`] is the LSTM regressor with truncated BPTT and Adam.
//! * [`bench`] schedules training and computes epoch-count metrics.
//! * [`transfer`] implements fine-tuning and layer freezing.
//!
//! Numerics are generic over [`Scalar`] (`f32`/`f64`); the `*64` aliases
//! below name the double-precision instantiations used throughout.

// Validation is written as `!(x > 0.0)` so that NaN fails too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
mod container;
pub mod data;
pub mod dynsys;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type LtiSystem64 = dynsys::LtiSystem<f64>;
pub type IirFilter64 = dynsys::IirFilter<f64>;
pub type WienerHammerstein64 = dynsys::WienerHammerstein<f64>;
pub type System64 = dynsys::System<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type DatasetBundle64 = data::DatasetBundle<f64>;
pub type Network64 = nn::Network<f64>;
pub type Gradients64 = nn::Gradients<f64>;
pub type AdamState64 = nn::AdamState<f64>;

pub type Network32 = nn::Network<f32>;
pub type Dataset32 = data::Dataset<f32>;

/// Decimal rendering with 17 significant digits; parses back to the same bits.
pub fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}
