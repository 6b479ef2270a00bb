//! Small neural-network substrate for CSI autoencoders.
//!
//! Layers run on flat, batch-major buffers. Convolutions are 3x3, stride 1,
//! zero padded, lowered to GEMM through im2col. Everything is generic over
//! [`Scalar`] so gradients can be checked in `f64` while training runs in `f32`.

pub mod adam;
pub mod complexity;
pub mod error;
mod layers;
pub mod model;
pub mod params;
pub mod scalar;
pub mod spec;
pub mod tensor;
pub mod weights;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use complexity::{count_flops, count_params, layer_costs, LayerCost};
pub use error::{NnError, Result};
pub use model::{Cache, Mode, Model};
pub use params::{param_layout, ParamStore, ParamView};
pub use scalar::Scalar;
pub use spec::{Activation, LayerKind, LayerSpec, ModelSpec, Shape};
pub use tensor::Tensor;
pub use weights::{decode_weights, encode_weights, load_weights, save_weights};
