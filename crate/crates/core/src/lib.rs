pub mod classify;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod subseq;
pub mod synth;

pub use error::{Error, Result};
