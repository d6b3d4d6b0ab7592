//! Non-autoregressive inference networks: a bidirectional recurrent tagger
//! and a masked conditional model, both with a length head.

mod decode;
mod model;

pub use decode::{masked_count, LengthPrediction, Scored};
pub use model::{Arch, InfNetConfig, InferenceNetwork, NetOutput, SourceEncoding};
