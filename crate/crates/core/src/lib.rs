//! Semantic role labeling as graph parsing with second-order parts.
//!
//! Arcs are scored with a biaffine function, sibling / co-parent /
//! grandparent pairs with a triaffine function, and arc marginals are
//! approximated by a few rounds of mean-field inference.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod encoder;
mod error;
pub mod eval;
pub mod mfvi;
pub mod model;
pub mod rng;
pub mod scorers;
pub mod synth;
pub mod trainer;

pub use config::{DecodeConfig, EncoderConfig, Mode, Part, PartSet, RunConfig, TrainConfig};
pub use corpus::{SemanticGraph, Sentence, Token, Vocab};
pub use error::{Error, Result};
pub use eval::{semantic_f1, EvalResult};
pub use model::{ModelSpec, SrlModel};
