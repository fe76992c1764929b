#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Linear precoding and power allocation for multiuser MIMO downlinks with
//! coarsely quantized DACs.
//!
//! The crate builds block-diagonalization (BD) and regularized BD precoders,
//! models few-bit DACs through their Bussgang gain, allocates power with
//! classical water-filling or the quantization-aware active-set procedure in
//! [`power::cqa_maas`], and evaluates sum-rates over Monte Carlo channel
//! draws.

pub mod channel;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod matio;
pub mod power;
pub mod precoder;
pub mod rate;
pub mod quantizer;
pub mod rng;
pub mod scenario;

pub use channel::ChannelSet;
pub use error::{Error, Result};
pub use harness::{Method, SweepOptions, SweepResult};
pub use linalg::CMat;
pub use power::{AllocationResult, Allocator, SpectrumView};
pub use precoder::PrecoderKind;
pub use rate::RateVariant;
pub use quantizer::{QuantizerModel, StepPolicy};
pub use scenario::SystemScenario;
