pub mod cipherlab;
pub mod corpus;
pub mod error;
pub mod evalstats;
pub mod experiments;
pub mod mdlcode;
pub mod seqmodel;

pub use error::{Error, ErrorKind, Result};
