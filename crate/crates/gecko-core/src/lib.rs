//! Binarized neural networks with XNOR-bitcount inference, magnitude
//! pruning, knowledge distillation, and a confidence-threshold
//! membership-inference audit.
//!
//! The pipeline this crate implements:
//!
//! 1. Train a full-precision MLP ([`nn`]).
//! 2. Phase I: binarize weights and activations to ±1 and run inference
//!    with packed XNOR arithmetic ([`quantize`]) — small, fast, and far
//!    less leaky under membership inference.
//! 3. Phase II: recover accuracy by distilling a full-precision teacher's
//!    posteriors into the binarized student ([`distill`]).
//!
//! Alongside: magnitude pruning with retraining ([`compress`]), the
//! max-posterior threshold attack and audit ([`privacy`]), and static
//! footprint / operation-count reporting ([`efficiency`]).
//!
//! All numeric code is generic over the scalar type via [`Scalar`]
//! (`f32` or `f64`). The experiment pipeline and the on-disk "GECKO1"
//! container use `f32`; tight-tolerance oracle tests instantiate `f64`.
//! Every random choice flows from a [`SeededRng`], so runs are
//! reproducible byte-for-byte.

pub mod bits;
pub mod compress;
pub mod counters;
pub mod data;
pub mod distill;
pub mod efficiency;
pub mod error;
pub mod io;
pub mod nn;
pub mod privacy;
pub mod quantize;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use bits::{pack_signs, unpack_signs, xnor_dot, BitMatrix, WORD_BITS};
pub use counters::OpCounters;
pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::FloatTensor2D;

/// Pipeline precision: what the CLI trains and the container stores.
pub type PipelineScalar = f32;

/// `f32` aliases — the experiment pipeline.
pub type Tensor32 = FloatTensor2D<f32>;
pub type Mlp32 = nn::MlpModel<f32>;
pub type Binarized32 = quantize::BinarizedModel<f32>;
pub type Dataset32 = data::LabeledDataset<f32>;

/// `f64` aliases — high-precision checks and oracles.
pub type Tensor64 = FloatTensor2D<f64>;
pub type Mlp64 = nn::MlpModel<f64>;
pub type Binarized64 = quantize::BinarizedModel<f64>;
pub type Dataset64 = data::LabeledDataset<f64>;
