//! The pretrained autoregressive energy: an attention encoder-decoder that
//! accepts distributions over target words as decoder inputs.

mod decode;
mod model;

pub use decode::Hypothesis;
pub use model::{DecoderState, Encoded, GeneralizedEnergy, TeacherConfig, TeacherModel, TeacherSession};
pub(crate) use model::{column, pad_rows};
