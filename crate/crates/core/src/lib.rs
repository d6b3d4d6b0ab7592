//! Non-autoregressive sequence transducers trained as inference networks
//! against the energy of a frozen autoregressive teacher.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod kv;
pub mod layers;
pub mod operators;
pub mod infnet;
pub mod teacher;
pub mod training;

pub use error::{Error, Result};
